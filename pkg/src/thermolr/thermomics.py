"""Thermomic features of an embedded image and their spectral reduction.

The feature catalog has 32 entries in a fixed order: 16 first-order
statistics, 4 shape descriptors of the ROI mask and 12 GLCM texture values
(six statistics, each as the mean and the range over four offsets).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_mask, check_matrix

FIRST_ORDER = (
    "mean", "median", "std", "variance", "skewness", "kurtosis", "min", "max",
    "range", "p10", "p90", "iqr", "energy", "rms", "entropy", "uniformity",
)
SHAPE = ("area", "perimeter", "compactness", "elongation")
GLCM_STATS = ("contrast", "dissimilarity", "homogeneity", "asm", "entropy", "correlation")
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
GLCM = tuple(f"glcm_{s}_{agg}" for s in GLCM_STATS for agg in ("mean", "range"))
FEATURE_NAMES = FIRST_ORDER + SHAPE + GLCM

MIN_ROI_PIXELS = 16


@dataclass
class FeatureVector:
    values: np.ndarray
    names: tuple = FEATURE_NAMES
    source: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(zip(self.names, self.values.tolist()))


def quantize(values, levels):
    """Uniform bins over ``[min, max]`` of ``values``; returns ints in ``0..levels-1``."""
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=np.int64)
    q = np.floor((values - lo) / (hi - lo) * levels).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def first_order_features(vals, levels):
    vals = np.asarray(vals, dtype=np.float64)
    mean = vals.mean()
    std = vals.std()
    dev = vals - mean
    m2 = np.mean(dev**2)
    if m2 > 0:
        skew = np.mean(dev**3) / m2**1.5
        kurt = np.mean(dev**4) / m2**2
    else:
        skew = kurt = 0.0
    p10, p25, p50, p75, p90 = np.percentile(vals, [10, 25, 50, 75, 90])
    counts = np.bincount(quantize(vals, levels), minlength=levels)
    prob = counts[counts > 0] / vals.size
    entropy = float(-np.sum(prob * np.log2(prob)))
    return np.array([
        mean, p50, std, std**2, skew, kurt, vals.min(), vals.max(),
        vals.max() - vals.min(), p10, p90, p75 - p25, np.sum(vals**2),
        np.sqrt(np.mean(vals**2)), abs(entropy), np.sum(prob**2),
    ])


def shape_features(roi):
    roi = np.asarray(roi, dtype=bool)
    area = float(roi.sum())
    padded = np.pad(roi, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    perimeter = float(np.sum(roi & ~interior))
    compactness = 4 * np.pi * area / perimeter**2 if perimeter else 0.0
    r, c = np.nonzero(roi)
    if area > 1:
        cov = np.cov(np.vstack([r, c]).astype(float), bias=True)
        ev = np.linalg.eigvalsh(cov)
        elongation = float(np.sqrt(ev[0] / ev[1])) if ev[1] > 0 else 0.0
    else:
        elongation = 1.0
    return np.array([area, perimeter, compactness, elongation])


def cooccurrence(q, roi, offset, levels):
    """Symmetric, sum-normalized co-occurrence matrix for one pixel offset."""
    dr, dc = offset
    M, N = q.shape
    r0, r1 = max(0, -dr), min(M, M - dr)
    c0, c1 = max(0, -dc), min(N, N - dc)
    a = q[r0:r1, c0:c1]
    b = q[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    ok = roi[r0:r1, c0:c1] & roi[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    P = np.bincount(a[ok] * levels + b[ok], minlength=levels * levels).astype(float)
    P = P.reshape(levels, levels)
    P = P + P.T
    total = P.sum()
    return P / total if total > 0 else P


def glcm_statistics(P):
    """Contrast, dissimilarity, homogeneity, ASM, entropy and correlation of ``P``."""
    L = P.shape[0]
    if P.sum() == 0:
        return np.zeros(len(GLCM_STATS))
    i, j = np.indices((L, L))
    diff = i - j
    contrast = np.sum(P * diff**2)
    dissim = np.sum(P * np.abs(diff))
    homog = np.sum(P / (1.0 + diff**2))
    asm = np.sum(P**2)
    nz = P[P > 0]
    entropy = abs(float(-np.sum(nz * np.log2(nz))))
    mu_i = np.sum(i * P)
    mu_j = np.sum(j * P)
    var_i = np.sum((i - mu_i) ** 2 * P)
    var_j = np.sum((j - mu_j) ** 2 * P)
    if var_i > 0 and var_j > 0:
        corr = np.sum((i - mu_i) * (j - mu_j) * P) / np.sqrt(var_i * var_j)
    else:
        corr = 0.0
    return np.array([contrast, dissim, homog, asm, entropy, corr])


def glcm_features(img, roi, levels):
    q = np.zeros(img.shape, dtype=np.int64)
    q[roi] = quantize(img[roi], levels)
    per_offset = np.array([glcm_statistics(cooccurrence(q, roi, off, levels)) for off in GLCM_OFFSETS])
    out = np.empty(2 * len(GLCM_STATS))
    out[0::2] = per_offset.mean(axis=0)
    out[1::2] = per_offset.max(axis=0) - per_offset.min(axis=0)
    return out


def extract_features(img, roi, levels=32, source=None) -> FeatureVector:
    """Compute the 32-entry thermomic catalog of ``img`` inside ``roi``."""
    values = np.asarray(getattr(img, "values", img), dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("image must be 2-D")
    roi = check_mask(roi, values.shape, name="roi")
    if roi.sum() < MIN_ROI_PIXELS:
        raise ValueError(f"ROI has {int(roi.sum())} pixels; at least {MIN_ROI_PIXELS} required")
    if levels < 2:
        raise ValueError("levels must be >= 2")
    if not np.all(np.isfinite(values[roi])):
        raise ValueError("image contains non-finite values inside the ROI")
    vec = np.concatenate([
        first_order_features(values[roi], levels),
        shape_features(roi),
        glcm_features(values, roi, levels),
    ])
    return FeatureVector(vec, FEATURE_NAMES, dict(source or {}))


# --------------------------------------------------------------------------
# spectral reduction


class DisconnectedGraphError(ValueError):
    """The kNN graph has more than one connected component."""

    def __init__(self, n_components, n_neighbors):
        super().__init__(
            f"kNN graph with k={n_neighbors} has {n_components} connected components; "
            "increase n_neighbors"
        )
        self.n_components = n_components
        self.n_neighbors = n_neighbors


@dataclass
class ReducedFeatures:
    matrix: np.ndarray
    graph_k: int
    eigenvalues: np.ndarray
    degrees: np.ndarray
    sigma: float
    dropped_columns: list

    @property
    def diagnostics(self):
        return {
            "graph_k": self.graph_k,
            "components": 1,
            "sigma": self.sigma,
            "eigenvalues": self.eigenvalues.tolist(),
            "dropped_columns": self.dropped_columns,
        }


def _standardize(F):
    mu = F.mean(axis=0)
    sd = F.std(axis=0)
    keep = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    return (F[:, keep] - mu[keep]) / sd[keep], np.flatnonzero(~keep).tolist()


def knn_heat_graph(Z, k):
    """Symmetric kNN adjacency with heat-kernel weights; returns ``(W, sigma)``."""
    n = Z.shape[0]
    sq = np.sum(Z**2, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2 * Z @ Z.T, 0.0)
    np.fill_diagonal(D2, np.inf)
    nbrs = np.argsort(D2, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    d2 = D2[rows, nbrs.ravel()]
    sigma = float(np.median(np.sqrt(d2)))
    if sigma == 0:
        sigma = 1.0
    W = np.zeros((n, n))
    W[rows, nbrs.ravel()] = np.exp(-d2 / sigma**2)
    return np.maximum(W, W.T), sigma


def spectral_embed(features, d=7, k=10) -> ReducedFeatures:
    """Laplacian eigenmaps of the rows of ``features``.

    Columns are standardized (constant columns dropped), a symmetric kNN graph
    with heat-kernel weights is built, and eigenvectors 2..d+1 of the
    symmetric normalized Laplacian are returned scaled by ``D^-1/2``.
    """
    F = check_matrix(features, name="features", min_rows=2)
    n = F.shape[0]
    if not 1 <= d < n:
        raise ValueError(f"need 1 <= d < n_samples, got d={d}, n={n}")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n_samples, got k={k}, n={n}")
    Z, dropped = _standardize(F)
    if Z.shape[1] == 0:
        raise ValueError("all feature columns are constant")
    W, sigma = knn_heat_graph(Z, k)
    n_comp, _ = connected_components(W > 0, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(n_comp, k)
    deg = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    L = np.eye(n) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    evals, evecs = scipy.linalg.eigh((L + L.T) / 2)
    Y = inv_sqrt[:, None] * evecs[:, 1 : d + 1]
    idx = np.argmax(np.abs(Y), axis=0)
    Y *= np.sign(Y[idx, np.arange(d)])
    return ReducedFeatures(Y, k, evals[1 : d + 1], deg, sigma, dropped)


def spectral_embed_connected(features, d=7, k=10):
    """:func:`spectral_embed`, doubling ``k`` until the graph is connected."""
    n = np.asarray(features).shape[0]
    while True:
        try:
            return spectral_embed(features, d, k)
        except DisconnectedGraphError:
            if k >= n - 1:
                raise
            k = min(2 * k, n - 1)


class SpectralReducer(TransformerMixin, BaseEstimator):
    """Transductive Laplacian-eigenmap reduction with an sklearn surface.

    Only ``fit_transform`` is meaningful; ``embedding_`` holds the result.
    """

    def __init__(self, n_components=7, n_neighbors=10, auto_connect=True):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.auto_connect = auto_connect

    def fit(self, X, y=None):
        fn = spectral_embed_connected if self.auto_connect else spectral_embed
        self.result_ = fn(X, self.n_components, self.n_neighbors)
        self.embedding_ = self.result_.matrix
        self.n_neighbors_ = self.result_.graph_k
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
