"""Low-rank factorizations ``X ~ B A`` of a heat matrix.

``X`` is ``(n_pixels, n_frames)``; ``B`` is the ``(n_pixels, p)`` basis whose
columns are basis images and ``A`` the ``(p, n_frames)`` coefficients. The
functional API (``pct``, ``nmf``, ...) returns a :class:`FactorizationResult`;
the estimator classes wrap the same routines behind ``fit``/``transform`` with
the scikit-learn convention ``X ~ fit_transform(X) @ components_``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix

EPS = 1e-12

METHODS = (
    "PCT",
    "CCIPCT",
    "SparsePCT",
    "NMF",
    "SparseNMF",
    "SemiNMF",
    "ConvexNMF",
    "DeepSemiNMF",
)


@dataclass(frozen=True)
class FactorizeConfig:
    p: int = 5
    max_iters: int = 500
    tol: float = 1e-6
    l1_penalty: float = 0.1
    layer_dims: tuple | None = None
    amnesic: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.p, bool) or not isinstance(self.p, (int, np.integer)) or self.p < 1:
            raise ValueError(f"rank p must be a positive integer, got {self.p!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0 or self.l1_penalty < 0 or self.amnesic < 0:
            raise ValueError("tol, l1_penalty and amnesic must be non-negative")
        if self.layer_dims is not None:
            dims = tuple(int(d) for d in self.layer_dims)
            object.__setattr__(self, "layer_dims", dims)
            if not dims or any(a <= b for a, b in zip(dims, dims[1:])):
                raise ValueError(f"layer_dims must be strictly decreasing, got {dims}")
            if dims[-1] != self.p:
                raise ValueError(f"layer_dims must end at p={self.p}, got {dims}")

    @property
    def layers(self):
        if self.layer_dims is not None:
            return self.layer_dims
        return (12, self.p) if self.p < 12 else (self.p,)


@dataclass
class FactorizationResult:
    B: np.ndarray
    A: np.ndarray
    method: str
    singular_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    objective_trace: list = field(default_factory=list)
    iterations_run: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.B.shape[1]

    def reconstruct(self):
        return self.B @ self.A

    def summary(self):
        return {
            "method": self.method,
            "p": int(self.p),
            "iterations": int(self.iterations_run),
            "final_objective": float(self.objective_trace[-1]) if self.objective_trace else None,
            "singular_values": [float(s) for s in self.singular_values],
        }

    def save(self, directory, prefix="factorization"):
        """Write ``B`` and ``A`` as CSV plus a JSON summary."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / f"{prefix}_B.csv", self.B, delimiter=",", fmt="%.17g")
        np.savetxt(d / f"{prefix}_A.csv", self.A, delimiter=",", fmt="%.17g")
        (d / f"{prefix}.json").write_text(json.dumps(self.summary(), indent=2))


def _as_data(X, non_negative=False):
    return check_matrix(getattr(X, "data", X), name="X", non_negative=non_negative)


def _check_rank(X, cfg):
    if cfg.p > X.shape[1]:
        raise ValueError(f"rank p={cfg.p} exceeds the number of frames {X.shape[1]}")


def _fix_signs(B, A):
    """Flip columns of B (and rows of A) so each column's largest |entry| is positive."""
    idx = np.argmax(np.abs(B), axis=0)
    s = np.sign(B[idx, np.arange(B.shape[1])])
    s[s == 0] = 1.0
    return B * s, A * s[:, None]


def _objective(X, B, A):
    R = X - B @ A
    return 0.5 * float(np.vdot(R, R))


def _converged(trace, tol):
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(prev - cur) <= tol * max(abs(prev), EPS)


def _pos(M):
    return (np.abs(M) + M) / 2


def _neg(M):
    return (np.abs(M) - M) / 2


def reconstruction_error(X, result: FactorizationResult) -> float:
    """Relative Frobenius error ``||X - B A|| / ||X||``."""
    X = _as_data(X)
    nx = np.linalg.norm(X)
    if nx == 0:
        raise ValueError("reconstruction error undefined for a zero matrix")
    if result.B.shape[0] != X.shape[0] or result.A.shape[1] != X.shape[1]:
        raise ValueError("factor shapes do not conform to X")
    return float(np.linalg.norm(X - result.B @ result.A) / nx)


# --------------------------------------------------------------------------
# SVD family


def pct(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Principal component thermography: thin SVD truncated to rank p."""
    X = _as_data(X)
    _check_rank(X, cfg)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    B = U[:, : cfg.p]
    A = s[: cfg.p, None] * Vt[: cfg.p]
    B, A = _fix_signs(B, A)
    return FactorizationResult(
        B, A, "PCT", singular_values=s, objective_trace=[_objective(X, B, A)], iterations_run=1
    )


def ccipct(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Candid covariance-free incremental PCA over the frames of X.

    Frames are streamed repeatedly (one pass = one epoch). Component ``i`` is
    seeded with the deflated sample seen at step ``i`` and then updated with
    the amnesic average. The amnesic weight ramps up as ``min(l, n - 2)`` so
    the retention factor ``(n - 1 - l) / n`` is never negative.
    """
    X = _as_data(X)
    _check_rank(X, cfg)
    n_pix, tau = X.shape
    p = cfg.p
    V = np.zeros((n_pix, p))
    n = 0
    trace = []
    epochs = 0
    for epochs in range(1, cfg.max_iters + 1):
        for t in range(tau):
            n += 1
            u = X[:, t].copy()
            for i in range(min(p, n)):
                if i == n - 1:
                    V[:, i] = u
                    break
                ell = min(cfg.amnesic, max(0.0, n - 2.0))
                vn = np.linalg.norm(V[:, i])
                if vn == 0:
                    V[:, i] = u
                    break
                V[:, i] = ((n - 1 - ell) / n) * V[:, i] + ((1 + ell) / n) * u * (u @ V[:, i]) / vn
                vn = np.linalg.norm(V[:, i])
                if vn > 0:
                    e = V[:, i] / vn
                    u = u - (u @ e) * e
        norms = np.linalg.norm(V, axis=0)
        B = V / np.where(norms > 0, norms, 1.0)
        trace.append(_objective(X, B, B.T @ X))
        if _converged(trace, cfg.tol):
            break
    B = V / np.where(norms > 0, norms, 1.0)
    A = B.T @ X
    B, A = _fix_signs(B, A)
    return FactorizationResult(
        B, A, "CCIPCT", objective_trace=trace, iterations_run=epochs,
        extras={"eigenvalue_estimates": norms.tolist()},
    )


def _soft(x, level):
    return np.sign(x) * np.maximum(np.abs(x) - level, 0.0)


def sparse_pct(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Sparse PCT by penalized matrix decomposition.

    Each component alternates ``v = R^T u / ||R^T u||`` with
    ``u = S(R v, t) / ||S(R v, t)||`` on the residual ``R``, starting from
    the residual's leading singular pair, and is then deflated out of ``R``.
    The threshold is relative, ``t = l1_penalty * max|R v|``, so the penalty
    is a scale-free fraction: 0 gives PCT and any value >= 1 zeroes the vector.
    """
    X = _as_data(X)
    _check_rank(X, cfg)
    R = X.copy()
    n_pix, tau = X.shape
    B = np.zeros((n_pix, cfg.p))
    A = np.zeros((cfg.p, tau))
    total_iters = 0
    trace = []
    for k in range(cfg.p):
        U, _, Vt = np.linalg.svd(R, full_matrices=False)
        u, v = U[:, 0], Vt[0]
        for it in range(cfg.max_iters):
            Rv = R @ v
            z = _soft(Rv, cfg.l1_penalty * np.max(np.abs(Rv)))
            nz = np.linalg.norm(z)
            if nz == 0:
                raise ValueError(
                    f"l1_penalty={cfg.l1_penalty} thresholds basis vector {k} to all zeros"
                )
            u_new = z / nz
            w = R.T @ u_new
            v = w / max(np.linalg.norm(w), EPS)
            delta = np.linalg.norm(u_new - u)
            u = u_new
            if delta <= cfg.tol:
                break
        total_iters += it + 1
        d = float(u @ R @ v)
        B[:, k] = u
        A[k] = d * v
        R = R - d * np.outer(u, v)
        trace.append(0.5 * float(np.vdot(R, R)))
    B, A = _fix_signs(B, A)
    return FactorizationResult(B, A, "SparsePCT", objective_trace=trace, iterations_run=total_iters)


# --------------------------------------------------------------------------
# NMF family


def _init_nonneg(rng, shape, scale):
    return scale * rng.uniform(0.0, 1.0, size=shape)


def _mu_nmf(X, cfg, l1, method):
    X_ = _as_data(X, non_negative=True)
    _check_rank(X_, cfg)
    rng = np.random.default_rng(cfg.seed)
    n_pix, tau = X_.shape
    scale = np.sqrt(max(X_.mean(), EPS) / cfg.p)
    B = _init_nonneg(rng, (n_pix, cfg.p), scale)
    A = _init_nonneg(rng, (cfg.p, tau), scale)

    def obj():
        return _objective(X_, B, A) + l1 * float(A.sum())

    trace = [obj()]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        B *= (X_ @ A.T) / (B @ (A @ A.T) + EPS)
        A *= (B.T @ X_) / ((B.T @ B) @ A + l1 + EPS)
        trace.append(obj())
        if _converged(trace, cfg.tol):
            break
    return FactorizationResult(B, A, method, objective_trace=trace, iterations_run=it)


def nmf(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """NMF with Lee-Seung multiplicative updates on ``0.5 ||X - BA||^2``."""
    return _mu_nmf(X, cfg, 0.0, "NMF")


def sparse_nmf(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """NMF with an L1 penalty ``l1_penalty * sum(A)`` on the coefficients."""
    return _mu_nmf(X, cfg, cfg.l1_penalty, "SparseNMF")


def _semi_step_A(X, B, A):
    # Ding et al. update for the non-negative factor, X ~ B A with A >= 0
    BtX = B.T @ X
    BtB = B.T @ B
    num = _pos(BtX) + _neg(BtB) @ A
    den = _neg(BtX) + _pos(BtB) @ A
    return A * np.sqrt(num / (den + EPS))


def _ls_basis(X, A):
    return X @ np.linalg.pinv(A)


def semi_nmf(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Semi-NMF: unconstrained basis by least squares, A >= 0 by multiplicative steps."""
    X = _as_data(X)
    _check_rank(X, cfg)
    return _semi_nmf(X, cfg.p, cfg, np.random.default_rng(cfg.seed))


def _semi_nmf(X, p, cfg, rng, method="SemiNMF"):
    A = rng.uniform(0.0, 1.0, size=(p, X.shape[1]))
    B = _ls_basis(X, A)
    trace = [_objective(X, B, A)]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        A = _semi_step_A(X, B, A)
        B = _ls_basis(X, A)
        trace.append(_objective(X, B, A))
        if _converged(trace, cfg.tol):
            break
    return FactorizationResult(B, A, method, objective_trace=trace, iterations_run=it)


def convex_nmf(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Convex NMF: ``B = X W`` with ``W, A >= 0`` (Ding-Li-Jordan updates).

    ``extras['W']`` holds the ``(n_frames, p)`` mixing weights.
    """
    X = _as_data(X)
    _check_rank(X, cfg)
    rng = np.random.default_rng(cfg.seed)
    tau = X.shape[1]
    Y = X.T @ X
    Yp, Yn = _pos(Y), _neg(Y)
    W = rng.uniform(0.0, 1.0, size=(tau, cfg.p)) + 0.2
    G = rng.uniform(0.0, 1.0, size=(tau, cfg.p)) + 0.2

    def obj():
        return _objective(X, X @ W, G.T)

    trace = [obj()]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        WtYnW = W.T @ Yn @ W
        WtYpW = W.T @ Yp @ W
        G = G * np.sqrt((Yp @ W + G @ WtYnW) / (Yn @ W + G @ WtYpW + EPS))
        GtG = G.T @ G
        W = W * np.sqrt((Yp @ G + Yn @ W @ GtG) / (Yn @ G + Yp @ W @ GtG + EPS))
        trace.append(obj())
        if _converged(trace, cfg.tol):
            break
    return FactorizationResult(
        X @ W, G.T.copy(), "ConvexNMF", objective_trace=trace, iterations_run=it, extras={"W": W}
    )


def deep_semi_nmf(X, cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Deep semi-NMF ``X ~ Z_1 ... Z_L A_L`` with ``A_L >= 0``.

    Layers are pretrained greedily (layer ``i`` is a semi-NMF of layer
    ``i-1``'s coefficients), then all layers are fine-tuned jointly. With a
    single layer the greedy stage is the whole model and equals
    :func:`semi_nmf`. ``objective_trace[0]`` is the pretrained objective.
    """
    X = _as_data(X)
    _check_rank(X, cfg)
    dims = cfg.layers
    rng = np.random.default_rng(cfg.seed)
    if len(dims) == 1:
        res = _semi_nmf(X, dims[0], cfg, rng, method="DeepSemiNMF")
        res.extras["layers"] = [res.B]
        return res

    Zs, H = [], X
    for d in dims:
        layer = _semi_nmf(H, d, cfg, rng)
        Zs.append(layer.B)
        H = layer.A

    def effective_basis():
        out = Zs[0]
        for Z in Zs[1:]:
            out = out @ Z
        return out

    trace = [_objective(X, effective_basis(), H)]
    pretrain_obj = trace[0]
    L = len(Zs)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        # H_tilde[i] = Z_{i+1} ... Z_L H, with the current lower layers
        Ht = [None] * L
        Ht[L - 1] = H
        for i in range(L - 2, -1, -1):
            Ht[i] = Zs[i + 1] @ Ht[i + 1]
        Psi = None
        for i in range(L):
            if Psi is None:
                Zs[i] = X @ np.linalg.pinv(Ht[i])
                Psi = Zs[i]
            else:
                Zs[i] = np.linalg.pinv(Psi) @ X @ np.linalg.pinv(Ht[i])
                Psi = Psi @ Zs[i]
        H = _semi_step_A(X, Psi, H)
        trace.append(_objective(X, Psi, H))
        if _converged(trace, cfg.tol):
            break
    B = effective_basis()
    return FactorizationResult(
        B, H, "DeepSemiNMF", objective_trace=trace, iterations_run=it,
        extras={"layers": Zs, "pretrain_objective": pretrain_obj},
    )


_DISPATCH = {
    "PCT": pct,
    "CCIPCT": ccipct,
    "SparsePCT": sparse_pct,
    "NMF": nmf,
    "SparseNMF": sparse_nmf,
    "SemiNMF": semi_nmf,
    "ConvexNMF": convex_nmf,
    "DeepSemiNMF": deep_semi_nmf,
}


def factorize(X, method="PCT", cfg: FactorizeConfig = FactorizeConfig()) -> FactorizationResult:
    """Dispatch to the factorization named ``method`` (see ``METHODS``)."""
    try:
        fn = _DISPATCH[method]
    except KeyError:
        raise ValueError(f"unknown factorization method {method!r}; choose from {METHODS}") from None
    return fn(X, cfg)


# --------------------------------------------------------------------------
# estimator wrappers


class _BaseFactorization(TransformerMixin, BaseEstimator):
    """Common ``fit``/``transform`` logic.

    After ``fit``, ``basis_`` is ``B`` for the training matrix and
    ``components_`` is ``A``; ``transform`` solves for the basis of new rows
    given the fitted coefficients.
    """

    _method = None
    _nonneg_basis = False

    def __init__(self, n_components=5, max_iter=500, tol=1e-6, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _config(self):
        return FactorizeConfig(
            p=self.n_components, max_iters=self.max_iter, tol=self.tol, seed=self.random_state
        )

    def fit(self, X, y=None):
        res = factorize(X, self._method, self._config())
        self.result_ = res
        self.basis_ = res.B
        self.components_ = res.A
        self.objective_trace_ = np.asarray(res.objective_trace)
        self.n_iter_ = res.iterations_run
        self.singular_values_ = res.singular_values
        self.n_features_in_ = res.A.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).basis_

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = _as_data(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, fitted with {self.n_features_in_}")
        A = self.components_
        B = X @ np.linalg.pinv(A)
        if self._nonneg_basis:
            B = np.maximum(B, EPS)
            AAt = A @ A.T
            XAt = X @ A.T
            for _ in range(self.max_iter):
                B *= XAt / (B @ AAt + EPS)
        return B

    def inverse_transform(self, B):
        check_is_fitted(self, "components_")
        return np.asarray(B) @ self.components_

    def reconstruction_error(self, X):
        check_is_fitted(self, "result_")
        return reconstruction_error(X, self.result_)


class PCT(_BaseFactorization):
    _method = "PCT"


class CCIPCT(_BaseFactorization):
    _method = "CCIPCT"

    def __init__(self, n_components=5, max_iter=500, tol=1e-6, amnesic=2.0, random_state=0):
        super().__init__(n_components, max_iter, tol, random_state)
        self.amnesic = amnesic

    def _config(self):
        return replace(super()._config(), amnesic=self.amnesic)


class SparsePCT(_BaseFactorization):
    _method = "SparsePCT"

    def __init__(self, n_components=5, max_iter=500, tol=1e-6, l1_penalty=0.1, random_state=0):
        super().__init__(n_components, max_iter, tol, random_state)
        self.l1_penalty = l1_penalty

    def _config(self):
        return replace(super()._config(), l1_penalty=self.l1_penalty)


class NMF(_BaseFactorization):
    _method = "NMF"
    _nonneg_basis = True


class SparseNMF(_BaseFactorization):
    _method = "SparseNMF"
    _nonneg_basis = True

    def __init__(self, n_components=5, max_iter=500, tol=1e-6, l1_penalty=0.1, random_state=0):
        super().__init__(n_components, max_iter, tol, random_state)
        self.l1_penalty = l1_penalty

    def _config(self):
        return replace(super()._config(), l1_penalty=self.l1_penalty)


class SemiNMF(_BaseFactorization):
    _method = "SemiNMF"


class ConvexNMF(_BaseFactorization):
    _method = "ConvexNMF"


class DeepSemiNMF(_BaseFactorization):
    _method = "DeepSemiNMF"

    def __init__(self, n_components=5, max_iter=500, tol=1e-6, layer_dims=None, random_state=0):
        super().__init__(n_components, max_iter, tol, random_state)
        self.layer_dims = layer_dims

    def _config(self):
        return replace(super()._config(), layer_dims=self.layer_dims)


ESTIMATORS = {
    "PCT": PCT,
    "CCIPCT": CCIPCT,
    "SparsePCT": SparsePCT,
    "NMF": NMF,
    "SparseNMF": SparseNMF,
    "SemiNMF": SemiNMF,
    "ConvexNMF": ConvexNMF,
    "DeepSemiNMF": DeepSemiNMF,
}
