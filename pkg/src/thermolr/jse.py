"""James-Stein shrinkage for means and for the leading sample eigenvector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import check_matrix, check_vector


@dataclass
class CovSpectrum:
    """Leading eigenpair and trace of a ``p x p`` sample covariance."""

    S_trace: float
    leading_eigenvalue: float
    leading_eigenvector: np.ndarray
    p: int
    n: int
    tail_eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 2 or self.n < 2:
            raise ValueError(f"need p >= 2 and n >= 2, got p={self.p}, n={self.n}")
        b = np.asarray(self.leading_eigenvector, dtype=np.float64)
        if b.shape != (self.p,):
            raise ValueError(f"eigenvector must have length p={self.p}")
        if abs(np.linalg.norm(b) - 1.0) > 1e-10:
            raise ValueError("leading eigenvector must have unit norm")
        if self.leading_eigenvalue < 0 or self.leading_eigenvalue > self.S_trace + 1e-10:
            raise ValueError("leading eigenvalue must lie in [0, trace(S)]")
        self.leading_eigenvector = b


@dataclass
class JseResult:
    b_jse: np.ndarray
    m_b: float
    s2: float
    nu2: float
    c_jse: float
    clamped: bool
    c_raw: float


def _orient(b):
    # entries' mean non-negative; ties broken by the largest-magnitude entry
    s = np.sum(b)
    if s < 0 or (s == 0 and b[np.argmax(np.abs(b))] < 0):
        return -b
    return b


def sample_cov_spectrum(data) -> CovSpectrum:
    """Leading eigenpair of ``S = Yc Yc^T / (n - 1)`` for a ``p x n`` data matrix.

    Rows are variables, columns observations. When ``p > n`` the spectrum is
    taken from the ``n x n`` Gram matrix so ``S`` is never formed.
    """
    Y = check_matrix(data, name="data", min_rows=2, min_cols=2)
    p, n = Y.shape
    Yc = Y - Y.mean(axis=1, keepdims=True)
    trace = float(np.vdot(Yc, Yc)) / (n - 1)
    if trace == 0.0:
        raise ValueError("zero-variance data: all observations are identical")
    if p > n:
        G = Yc.T @ Yc / (n - 1)
        evals, evecs = scipy.linalg.eigh(G)
        lam2 = float(evals[-1])
        b = Yc @ evecs[:, -1]
        b /= np.linalg.norm(b)
    else:
        S = Yc @ Yc.T / (n - 1)
        evals, evecs = scipy.linalg.eigh(S)
        lam2 = float(evals[-1])
        b = evecs[:, -1]
    tail = np.clip(evals[::-1][1:], 0.0, None)
    return CovSpectrum(
        S_trace=trace,
        leading_eigenvalue=max(lam2, 0.0),
        leading_eigenvector=_orient(b),
        p=p,
        n=n,
        tail_eigenvalues=tail,
    )


def jse_shrink(spec: CovSpectrum) -> JseResult:
    """Shrink the entries of the leading eigenvector toward their mean.

    The shrinkage constant ``c = 1 - nu2 / s2`` is clamped to [0, 1] and the
    shrunk vector is renormalized to unit length.
    """
    b = spec.leading_eigenvector
    p, n = spec.p, spec.n
    lam = np.sqrt(spec.leading_eigenvalue)
    m_b = float(b.mean())
    s2 = float(np.mean((lam * b - lam * m_b) ** 2))
    nu2 = max((spec.S_trace - spec.leading_eigenvalue) / (p * (n - 1)), 0.0)
    if s2 == 0.0:
        return JseResult(b.copy(), m_b, s2, nu2, 0.0, True, float("nan"))
    c_raw = 1.0 - nu2 / s2
    c = min(max(c_raw, 0.0), 1.0)
    v = m_b + c * (b - m_b)
    v = v / np.linalg.norm(v)
    return JseResult(v, m_b, s2, nu2, c, c != c_raw, c_raw)


def jse_correct_basis(X, B):
    """Replace the first column of ``B`` by the JSE estimate from ``X``'s rows.

    ``X`` is the ``(n_pixels, n_frames)`` heat matrix, so the pixel-space
    covariance is estimated from ``n = n_frames`` observations. The corrected
    vector's sign is aligned with the original first basis column.
    Returns ``(B_new, JseResult)``.
    """
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    res = jse_shrink(sample_cov_spectrum(X))
    b = res.b_jse
    if b @ B[:, 0] < 0:
        b = -b
    B_new = np.array(B, dtype=np.float64, copy=True)
    B_new[:, 0] = b
    return B_new, res


def js_mean(z, nu2):
    """Positive-part James-Stein estimate of ``p > 3`` means, shrunk to their grand mean."""
    z = check_vector(z, name="z")
    p = z.size
    if p <= 3:
        raise ValueError(f"James-Stein shrinkage needs p > 3, got p={p}")
    if nu2 < 0:
        raise ValueError("nu2 must be non-negative")
    zbar = z.mean()
    dev = z - zbar
    d2 = float(dev @ dev)
    if d2 == 0.0 or nu2 == 0.0:
        return z.copy()
    factor = max(0.0, 1.0 - (p - 3) * nu2 / d2)
    return zbar + factor * dev


def min_variance_weights(Sigma):
    """Minimizer of ``U^T Sigma U`` subject to ``sum(U) == 1``."""
    Sigma = check_matrix(Sigma, name="Sigma")
    if Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("Sigma must be square")
    if not np.allclose(Sigma, Sigma.T, rtol=1e-12, atol=1e-12):
        raise ValueError("Sigma must be symmetric")
    try:
        factor = scipy.linalg.cho_factor(Sigma)
    except np.linalg.LinAlgError:
        raise ValueError("Sigma is not positive definite") from None
    w = scipy.linalg.cho_solve(factor, np.ones(Sigma.shape[0]))
    return w / w.sum()


def angle_between(u, v):
    """Unsigned angle in radians between the lines spanned by ``u`` and ``v``."""
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(min(c, 1.0)))


def spiked_model_trial(p, n, spike_strength, seed):
    """One single-factor Monte Carlo draw; returns ``(angle_sample, angle_jse)``.

    Observations are ``sqrt(spike_strength) * beta * f + eps`` with unit
    Gaussian noise, so the population covariance is
    ``spike_strength * beta beta^T + I``. Loadings ``beta`` have entries drawn
    as ``N(1, 0.5^2)``; the population eigenvector is ``beta / ||beta||``.
    """
    if not (p > n >= 4):
        raise ValueError(f"need p > n >= 4, got p={p}, n={n}")
    rng = np.random.default_rng(seed)
    beta = rng.normal(1.0, 0.5, size=p)
    truth = beta / np.linalg.norm(beta)
    f = rng.standard_normal(n)
    Y = np.sqrt(spike_strength) * np.outer(beta, f) + rng.standard_normal((p, n))
    spec = sample_cov_spectrum(Y)
    res = jse_shrink(spec)
    return angle_between(spec.leading_eigenvector, truth), angle_between(res.b_jse, truth)


def run_spiked_trials(p, n, spike_strength, seeds):
    """Run :func:`spiked_model_trial` for each seed; returns an ``(n_seeds, 2)`` array."""
    return np.array([spiked_model_trial(p, n, spike_strength, int(s)) for s in seeds])
