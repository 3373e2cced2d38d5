"""Binary classifiers, stratified cross-validation and evaluation metrics.

The three classifiers follow the scikit-learn estimator protocol, so they
work with ``clone``, ``GridSearchCV`` and pipelines. Labels are 0 (healthy)
and 1 (abnormal).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

CLASSIFIERS = ("RandomForest", "KNN", "NaiveBayes")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    ids: list = None

    def __post_init__(self):
        self.X, self.y = check_X_y(self.X, self.y, dtype=np.float64)
        if not set(np.unique(self.y)) <= {0, 1}:
            raise ValueError("labels must be binary 0/1")
        if len(np.unique(self.y)) < 2:
            raise ValueError("dataset must contain both classes")
        self.y = self.y.astype(int)
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.y))]


def _check_two_classes(y):
    classes = unique_labels(y)
    if len(classes) != 2:
        raise ValueError(f"binary classification needs exactly two classes, got {classes}")
    return classes


# --------------------------------------------------------------------------
# random forest


class _Tree:
    """CART tree stored as flat node arrays; ``feature == -1`` marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "vote", "split_counts")

    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.vote = [], [], [], [], []

    def add(self):
        for arr, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1),
                       (self.right, -1), (self.vote, 0)):
            arr.append(v)
        return len(self.feature) - 1

    def freeze(self):
        self.feature = np.array(self.feature)
        self.threshold = np.array(self.threshold)
        self.left = np.array(self.left)
        self.right = np.array(self.right)
        self.vote = np.array(self.vote)

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.vote[node]
            ni = node[internal]
            go_left = X[np.flatnonzero(internal), f[internal]] <= self.threshold[ni]
            node[internal] = np.where(go_left, self.left[ni], self.right[ni])


def _best_split(X, y, features):
    """Lowest weighted Gini over candidate midpoints; returns (feature, threshold) or None."""
    n = y.size
    best = (np.inf, None, None)
    ks = np.arange(1, n)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        pos_left = np.cumsum(ys)[:-1]
        n_left = ks
        n_right = n - ks
        pos_right = ys.sum() - pos_left
        pl = pos_left / n_left
        pr = pos_right / n_right
        # weighted Gini = (n_l * 2 p_l (1-p_l) + n_r * 2 p_r (1-p_r)) / n
        imp = (n_left * pl * (1 - pl) + n_right * pr * (1 - pr)) * (2.0 / n)
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best[0]:
            best = (imp[i], f, 0.5 * (xs[i] + xs[i + 1]))
    return None if best[1] is None else best[1:]


def _grow_tree(X, y, max_depth, n_sub, rng):
    tree = _Tree()
    counts = Counter()
    stack = [(tree.add(), np.arange(y.size), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        pos = int(yi.sum())
        tree.vote[node] = int(2 * pos > yi.size)
        if pos == 0 or pos == yi.size or (max_depth is not None and depth >= max_depth):
            continue
        feats = rng.choice(d, size=n_sub, replace=False)
        split = _best_split(X[idx], yi, feats)
        if split is None:
            continue
        f, thr = split
        mask = X[idx, f] <= thr
        tree.feature[node] = int(f)
        tree.threshold[node] = float(thr)
        counts[int(f)] += 1
        left, right = tree.add(), tree.add()
        tree.left[node], tree.right[node] = left, right
        stack.append((right, idx[~mask], depth + 1))
        stack.append((left, idx[mask], depth + 1))
    tree.freeze()
    tree.split_counts = counts
    return tree


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini CART trees with sqrt(d) candidate features per split.

    Tree ``i`` draws its bootstrap sample and feature subsets from a generator
    seeded with ``(random_state, i)``, so the forest is identical however the
    trees are scheduled. ``predict_proba`` is the fraction of trees voting for
    each class.
    """

    def __init__(self, n_estimators=100, max_depth=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_ = _check_two_classes(y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        yb = (y == self.classes_[1]).astype(np.int64)
        n, d = X.shape
        n_sub = max(1, int(np.sqrt(d)))
        self.trees_ = []
        for i in range(self.n_estimators):
            rng = np.random.default_rng([int(self.random_state), i])
            boot = rng.integers(0, n, size=n)
            self.trees_.append(_grow_tree(X[boot], yb[boot], self.max_depth, n_sub, rng))
        total = Counter()
        for t in self.trees_:
            total.update(t.split_counts)
        self.split_counts_ = np.array([total[f] for f in range(d)])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        votes = np.mean([t.predict(X) for t in self.trees_], axis=0)
        return np.column_stack([1.0 - votes, votes])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p > 0.5).astype(int)]


# --------------------------------------------------------------------------
# kNN and naive Bayes


class KNearestNeighbors(ClassifierMixin, BaseEstimator):
    """Euclidean k-nearest-neighbour vote; equal distances favour the lower training index."""

    def __init__(self, n_neighbors=5):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_ = _check_two_classes(y)
        if not 1 <= self.n_neighbors < X.shape[0]:
            raise ValueError(f"n_neighbors={self.n_neighbors} must be in [1, n_samples={X.shape[0]})")
        self.X_ = X
        self.y_ = (y == self.classes_[1]).astype(int)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "X_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        d2 = np.sum((X[:, None, :] - self.X_[None, :, :]) ** 2, axis=2)
        nn = np.argsort(d2, axis=1, kind="stable")[:, : self.n_neighbors]
        frac = self.y_[nn].mean(axis=1)
        return np.column_stack([1.0 - frac, frac])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p > 0.5).astype(int)]


class GaussianNaiveBayes(ClassifierMixin, BaseEstimator):
    """Per-class independent Gaussians with a variance floor."""

    def __init__(self, var_floor=1e-9):
        self.var_floor = var_floor

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_ = _check_two_classes(y)
        self.theta_ = np.array([X[y == c].mean(axis=0) for c in self.classes_])
        self.var_ = np.maximum(np.array([X[y == c].var(axis=0) for c in self.classes_]), self.var_floor)
        self.class_prior_ = np.array([np.mean(y == c) for c in self.classes_])
        return self

    def _joint_log_likelihood(self, X):
        ll = -0.5 * (
            np.sum(np.log(2 * np.pi * self.var_), axis=1)[None, :]
            + np.sum((X[:, None, :] - self.theta_[None]) ** 2 / self.var_[None], axis=2)
        )
        return ll + np.log(self.class_prior_)[None, :]

    def predict_proba(self, X):
        check_is_fitted(self, "theta_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        jll = self._joint_log_likelihood(X)
        jll -= jll.max(axis=1, keepdims=True)
        p = np.exp(jll)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


DEFAULT_GRIDS = {
    "RandomForest": {"n_estimators": [50, 100, 200], "max_depth": [3, 5, 8, None]},
    "KNN": {"n_neighbors": [3, 5, 7]},
    "NaiveBayes": {},
}


def make_classifier(name, random_state=0):
    if name == "RandomForest":
        return RandomForest(random_state=random_state)
    if name == "KNN":
        return KNearestNeighbors()
    if name == "NaiveBayes":
        return GaussianNaiveBayes()
    raise ValueError(f"unknown classifier {name!r}; choose from {CLASSIFIERS}")


# --------------------------------------------------------------------------
# metrics


def confusion_matrix(y_true, y_pred):
    """2x2 counts ``[[TN, FP], [FN, TP]]`` (rows: truth, columns: prediction)."""
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def cohen_kappa(confusion):
    """Chance-corrected agreement of a 2x2 confusion matrix; 0 when chance agreement is 1."""
    C = np.asarray(confusion, dtype=np.float64)
    if C.shape != (2, 2) or np.any(C < 0):
        raise ValueError("confusion must be a 2x2 matrix of non-negative counts")
    total = C.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    # (p_o - p_e) / (1 - p_e) scaled by total^2 to keep integer counts exact
    chance = float(C.sum(axis=0) @ C.sum(axis=1))
    if chance == total**2:
        return 0.0
    return float((total * np.trace(C) - chance) / (total**2 - chance))


def roc_curve(scores, labels):
    """ROC points over descending unique score thresholds and the trapezoidal AUC.

    Tied scores move the curve diagonally, which makes the AUC equal to the
    Mann-Whitney statistic with ties counted as one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D arrays of equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class ClassificationReport:
    classifier: str
    fold_accuracies: list
    accuracy_median: float
    accuracy_iqr: tuple
    fold_kappas: list
    kappa: float
    kappa_iqr: tuple
    roc_points: list
    auc: float
    best_params: dict
    fold_params: list
    confusion: list
    folds: int
    repeats: int
    fold_hash: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["accuracy_iqr"] = list(self.accuracy_iqr)
        d["kappa_iqr"] = list(self.kappa_iqr)
        d["roc_points"] = [list(p) for p in self.roc_points]
        return d


def _quartiles(v):
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return float(q50), (float(q25), float(q75))


def _scores(model, X):
    if hasattr(model, "predict_proba"):
        return model.predict_proba(X)[:, 1]
    return model.predict(X).astype(float)


def fold_assignments(y, folds, repeats, seed):
    """Stratified test-fold index arrays, ``repeats * folds`` of them."""
    y = np.asarray(y)
    if np.bincount(y.astype(int)).min() < folds:
        raise ValueError(f"smallest class has fewer than folds={folds} members; cannot stratify")
    seeds = np.random.SeedSequence(seed).generate_state(repeats)
    out = []
    for r in range(repeats):
        skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=int(seeds[r]))
        out.extend(test for _, test in skf.split(np.zeros(len(y)), y))
    return out


def hash_folds(assignments):
    h = hashlib.sha256()
    for test in assignments:
        h.update(np.asarray(test, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()


def cross_validate(ds: Dataset, classifier="RandomForest", folds=5, repeats=3, seed=0,
                   param_grid=None, inner_folds=3, n_jobs=None):
    """Repeated stratified k-fold evaluation with grid search inside each training fold.

    ``classifier`` is a name from ``CLASSIFIERS`` or an unfitted estimator.
    ``param_grid`` defaults to ``DEFAULT_GRIDS`` for named classifiers; an
    empty grid skips the inner search.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if isinstance(classifier, str):
        name = classifier
        base = make_classifier(name, random_state=seed)
        grid = DEFAULT_GRIDS[name] if param_grid is None else param_grid
    else:
        name = type(classifier).__name__
        base = classifier
        grid = param_grid or {}
    tests = fold_assignments(ds.y, folds, repeats, seed)
    inner_seeds = np.random.SeedSequence([seed, 1]).generate_state(len(tests))

    accs, kappas, chosen = [], [], []
    pooled_scores, pooled_labels = [], []
    cm_total = np.zeros((2, 2), dtype=np.int64)
    all_idx = np.arange(len(ds.y))
    for f, test in enumerate(tests):
        train = np.setdiff1d(all_idx, test)
        Xtr, ytr, Xte, yte = ds.X[train], ds.y[train], ds.X[test], ds.y[test]
        if grid:
            inner = StratifiedKFold(n_splits=inner_folds, shuffle=True, random_state=int(inner_seeds[f]))
            search = GridSearchCV(clone(base), grid, cv=inner, refit=True, n_jobs=n_jobs)
            search.fit(Xtr, ytr)
            model = search.best_estimator_
            chosen.append({k: search.best_params_[k] for k in sorted(search.best_params_)})
        else:
            model = clone(base).fit(Xtr, ytr)
            chosen.append({})
        pred = model.predict(Xte)
        cm = confusion_matrix(yte, pred)
        cm_total += cm
        accs.append(float(np.mean(pred == yte)))
        kappas.append(cohen_kappa(cm))
        pooled_scores.append(_scores(model, Xte))
        pooled_labels.append(yte)

    roc, auc = roc_curve(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
    acc_med, acc_iqr = _quartiles(accs)
    k_med, k_iqr = _quartiles(kappas)
    tally = Counter(tuple(sorted(p.items(), key=lambda kv: kv[0])) for p in chosen)
    best = dict(max(tally.items(), key=lambda kv: kv[1])[0]) if chosen else {}
    return ClassificationReport(
        classifier=name,
        fold_accuracies=accs,
        accuracy_median=acc_med,
        accuracy_iqr=acc_iqr,
        fold_kappas=kappas,
        kappa=k_med,
        kappa_iqr=k_iqr,
        roc_points=roc,
        auc=auc,
        best_params=best,
        fold_params=chosen,
        confusion=cm_total.tolist(),
        folds=folds,
        repeats=repeats,
        fold_hash=hash_folds(tests),
    )
