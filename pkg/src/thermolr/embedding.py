"""Fuse the leading basis images into one heterogeneity map.

Three membership functions are supported: an exponential z-score
("Gaussian"), a generalized bell curve, and the Weibull density. Gaussian and
bell maps weight each basis vector by its membership before summing; the
Weibull map sums the memberships themselves.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._validation import check_mask, check_matrix, check_vector

KINDS = ("Gaussian", "Bell", "Weibull")


@dataclass(frozen=True)
class EmbeddingParams:
    kind: str = "Weibull"
    bell_b: float = 1.0
    weibull_k: float = 2.0
    weibull_lambda: float = 1.0
    p: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}; choose from {KINDS}")
        for name in ("bell_b", "weibull_k", "weibull_lambda"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")

    @property
    def weibull_scale(self):
        return self.weibull_lambda ** (-self.weibull_k)


@dataclass(frozen=True)
class RoiStats:
    mu: float
    sigma: float

    @classmethod
    def of(cls, beta, roi=None):
        vals = beta if roi is None else beta[roi]
        return cls(float(vals.mean()), float(vals.std()))


@dataclass
class EmbeddedImage:
    values: np.ndarray
    kind: str
    params: EmbeddingParams
    provenance: dict

    def to_csv(self, path):
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")

    def to_pgm(self, path, roi):
        """Write a 16-bit binary PGM with a JSON sidecar describing the mapping."""
        roi = check_mask(roi, self.values.shape, name="roi")
        inside = self.values[roi]
        lo, hi = (float(inside.min()), float(inside.max())) if inside.size else (0.0, 0.0)
        scaled = np.zeros(self.values.shape)
        if hi > lo:
            scaled[roi] = (self.values[roi] - lo) / (hi - lo)
        pix = np.round(scaled * 65535).astype(">u2")
        M, N = self.values.shape
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{N} {M}\n65535\n".encode("ascii"))
            fh.write(pix.tobytes(order="C"))
        sidecar = {"kind": self.kind, "roi_min": lo, "roi_max": hi, "maxval": 65535,
                   "outside_roi": 0, "params": asdict(self.params)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def gaussian_membership(beta, stats: RoiStats):
    """``exp((beta - mu) / sigma)``; a constant vector (sigma == 0) maps to 1."""
    beta = np.asarray(beta, dtype=np.float64)
    if stats.sigma == 0:
        return np.ones_like(beta)
    return np.exp((beta - stats.mu) / stats.sigma)


def bell_membership(beta, stats: RoiStats, b=1.0):
    """``1 / (1 + |(beta - mu) / sigma|^(2b))``; sigma == 0 maps to 1."""
    beta = np.asarray(beta, dtype=np.float64)
    if not b > 0:
        raise ValueError("bell coefficient b must be > 0")
    if stats.sigma == 0:
        return np.ones_like(beta)
    return 1.0 / (1.0 + np.abs((beta - stats.mu) / stats.sigma) ** (2 * b))


def weibull_membership(x, k=2.0, lam=1.0):
    """Weibull density ``b k x^(k-1) exp(-b x^k)`` with ``b = lam^-k``; 0 for x < 0."""
    if not (k > 0 and lam > 0):
        raise ValueError("Weibull shape k and scale lambda must be > 0")
    x = np.asarray(x, dtype=np.float64)
    b = lam ** (-k)
    out = np.zeros_like(x)
    pos = x >= 0
    xp = x[pos]
    if k < 1:
        # density diverges at 0; evaluate just inside the support
        xp = np.maximum(xp, 1e-12)
    out[pos] = b * k * xp ** (k - 1) * np.exp(-b * xp**k)
    return out


def rescale_unit(beta, roi=None):
    """Min-max rescale ``beta`` to [0, 1] using ROI entries; constant maps to 0."""
    vals = beta if roi is None else beta[roi]
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        return np.zeros_like(beta)
    return (beta - lo) / (hi - lo)


def embed(B, roi, params: EmbeddingParams = EmbeddingParams()) -> EmbeddedImage:
    """Aggregate the first ``params.p`` basis columns into an ``M x N`` image.

    ``B`` is ``(M*N, >= p)`` with row-major pixel order; ``roi`` is ``M x N``.
    Statistics are taken over ROI pixels only and the result is zero outside
    the ROI.
    """
    roi = np.asarray(roi, dtype=bool)
    if roi.ndim != 2:
        raise ValueError("roi must be a 2-D mask")
    B = check_matrix(B, name="B")
    if B.shape[0] != roi.size:
        raise ValueError(f"B has {B.shape[0]} rows, ROI has {roi.size} pixels")
    if params.p > B.shape[1]:
        raise ValueError(f"embedding needs p={params.p} basis vectors, B has {B.shape[1]}")
    if not roi.any():
        raise ValueError("ROI is empty")
    flat_roi = roi.ravel()
    phi = np.zeros(B.shape[0])
    stats = []
    inside = np.zeros(int(flat_roi.sum()))
    for i in range(params.p):
        beta = B[flat_roi, i]
        st = RoiStats.of(beta)
        stats.append(asdict(st))
        if params.kind == "Gaussian":
            inside += beta * gaussian_membership(beta, st)
        elif params.kind == "Bell":
            inside += beta * bell_membership(beta, st, params.bell_b)
        else:
            x = rescale_unit(beta)
            inside += weibull_membership(x, params.weibull_k, params.weibull_lambda)
    phi[flat_roi] = inside
    prov = {"roi_stats": stats}
    if params.kind == "Weibull":
        prov["rescale"] = "roi_minmax"
    return EmbeddedImage(phi.reshape(roi.shape), params.kind, params, prov)


def embed_vector(beta, roi, params: EmbeddingParams):
    """Convenience: embed a single basis vector (``p`` forced to 1)."""
    beta = check_vector(beta, name="beta")
    return embed(beta[:, None], roi, EmbeddingParams(params.kind, params.bell_b,
                                                     params.weibull_k, params.weibull_lambda, 1))
