"""Thermal sequence containers, normalization, heat matrix and phantoms.

A sequence is stored as a ``(tau, M, N)`` float array. The heat matrix is
the ``(M*N, tau)`` matrix whose column ``t`` is frame ``t`` flattened in
row-major order, so ``X[i * N + j, t] == frames[t, i, j]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_mask

MAGIC = b"THSQ"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")
_FLAG_ROI = 0x01
_FLAG_MARKER = 0x02


class SequenceFormatError(ValueError):
    """Raised for malformed sequence containers or CSV directories."""


@dataclass
class ThermalSequence:
    """A stack of ``tau`` frames of ``M x N`` temperatures plus masks.

    ``roi_mask`` and ``marker_mask`` are boolean ``M x N`` arrays. An absent
    ROI is stored as ``None``; an absent marker is an all-False mask.
    """

    frames: np.ndarray
    roi_mask: np.ndarray | None = None
    marker_mask: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or min(frames.shape) < 1:
            raise ValueError(f"frames must have shape (tau, M, N), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite temperature values")
        self.frames = frames
        shape = frames.shape[1:]
        if self.roi_mask is not None:
            self.roi_mask = check_mask(self.roi_mask, shape, name="roi_mask")
        if self.marker_mask is None:
            self.marker_mask = np.zeros(shape, dtype=bool)
        else:
            self.marker_mask = check_mask(self.marker_mask, shape, name="marker_mask")
        if self.roi_mask is not None and np.any(self.roi_mask & self.marker_mask):
            raise ValueError("roi_mask and marker_mask must be disjoint")

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def require_roi(self):
        if self.roi_mask is None or not self.roi_mask.any():
            raise ValueError("sequence has no ROI mask; one is required for this step")
        return self.roi_mask


@dataclass
class HeatMatrix:
    """The ``(M*N, tau)`` heat matrix of a sequence with its image shape."""

    data: np.ndarray
    image_shape: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        M, N = self.image_shape
        if self.data.ndim != 2 or self.data.shape[0] != M * N:
            raise ValueError(
                f"heat matrix shape {self.data.shape} does not match image {M}x{N}"
            )
        if self.data.shape[0] < self.data.shape[1]:
            raise ValueError(
                f"heat matrix must be tall (M*N >= tau), got {self.data.shape}"
            )

    @property
    def shape(self):
        return self.data.shape

    def frame(self, t):
        """Un-vectorize column ``t`` back to an ``M x N`` frame."""
        return self.data[:, t].reshape(self.image_shape)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of a synthetic thermal sequence."""

    M: int = 32
    N: int = 32
    tau: int = 23
    label: str = "healthy"
    hotspot_count: int = 0
    hotspot_amplitude: float = 0.0
    hotspot_sigma: float = 2.5
    flicker_amplitude: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.M, self.N, self.tau) < 1:
            raise ValueError("M, N and tau must be positive")
        if self.label not in ("healthy", "abnormal"):
            raise ValueError(f"label must be 'healthy' or 'abnormal', got {self.label!r}")
        if self.hotspot_count < 0 or self.hotspot_amplitude < 0:
            raise ValueError("hotspot_count and hotspot_amplitude must be non-negative")
        if self.hotspot_sigma <= 0:
            raise ValueError("hotspot_sigma must be > 0")
        if self.flicker_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("flicker_amplitude and noise_sigma must be non-negative")
        if self.label == "healthy" and self.hotspot_count > 0 and self.hotspot_amplitude > 0:
            raise ValueError("a healthy phantom cannot carry hotspots")


# --------------------------------------------------------------------------
# I/O


def write_sequence(path, seq: ThermalSequence):
    """Write ``seq`` to the binary THSQ container at ``path``."""
    tau, M, N = seq.frames.shape
    flags = 0
    if seq.roi_mask is not None:
        flags |= _FLAG_ROI
    if seq.marker_mask is not None and seq.marker_mask.any():
        flags |= _FLAG_MARKER
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, M, N, tau, flags))
        fh.write(seq.frames.astype("<f4").tobytes(order="C"))
        if flags & _FLAG_ROI:
            fh.write(seq.roi_mask.astype(np.uint8).tobytes(order="C"))
        if flags & _FLAG_MARKER:
            fh.write(seq.marker_mask.astype(np.uint8).tobytes(order="C"))


def _read_container(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SequenceFormatError("file too short for a THSQ header")
    magic, version, M, N, tau, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SequenceFormatError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise SequenceFormatError(f"unsupported container version {version}")
    if min(M, N, tau) < 1 or flags & ~(_FLAG_ROI | _FLAG_MARKER):
        raise SequenceFormatError("malformed header")
    n_frame_bytes = 4 * M * N * tau
    n_mask = M * N
    expected = _HEADER.size + n_frame_bytes + n_mask * (
        bool(flags & _FLAG_ROI) + bool(flags & _FLAG_MARKER)
    )
    if len(raw) != expected:
        raise SequenceFormatError(f"payload size {len(raw)} != expected {expected}")
    offset = _HEADER.size
    frames = np.frombuffer(raw, dtype="<f4", count=M * N * tau, offset=offset)
    frames = frames.reshape(tau, M, N).astype(np.float64)
    offset += n_frame_bytes

    def read_mask():
        nonlocal offset
        m = np.frombuffer(raw, dtype=np.uint8, count=n_mask, offset=offset).reshape(M, N)
        offset += n_mask
        if np.any(m > 1):
            raise SequenceFormatError("mask bytes must be 0 or 1")
        return m.astype(bool)

    roi = read_mask() if flags & _FLAG_ROI else None
    marker = read_mask() if flags & _FLAG_MARKER else None
    return frames, roi, marker


def _read_csv_dir(path):
    path = Path(path)
    frame_files = sorted(path.glob("frame_*.csv"))
    if not frame_files:
        raise SequenceFormatError(f"no frame_*.csv files in {path}")
    frames = []
    for f in frame_files:
        a = np.loadtxt(f, delimiter=",", ndmin=2)
        if frames and a.shape != frames[0].shape:
            raise ValueError(f"shape mismatch: {f.name} is {a.shape}, expected {frames[0].shape}")
        frames.append(a)
    roi = np.loadtxt(path / "roi.csv", delimiter=",", ndmin=2) if (path / "roi.csv").exists() else None
    marker = (
        np.loadtxt(path / "marker.csv", delimiter=",", ndmin=2)
        if (path / "marker.csv").exists()
        else None
    )
    return np.stack(frames), roi, marker


def load_sequence(path) -> ThermalSequence:
    """Load a sequence from a THSQ container or a directory of CSV frames.

    CSV frames are ordered by filename; ``roi.csv`` and ``marker.csv`` are
    optional mask files in the same directory.
    """
    path = Path(path)
    if path.is_dir():
        frames, roi, marker = _read_csv_dir(path)
    else:
        frames, roi, marker = _read_container(path)
    return ThermalSequence(frames, roi, marker, provenance={"source": str(path)})


def write_csv_dir(path, seq: ThermalSequence):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        np.savetxt(path / f"frame_{t:04d}.csv", frame, delimiter=",", fmt="%.9g")
    if seq.roi_mask is not None:
        np.savetxt(path / "roi.csv", seq.roi_mask.astype(int), delimiter=",", fmt="%d")
    if seq.marker_mask.any():
        np.savetxt(path / "marker.csv", seq.marker_mask.astype(int), delimiter=",", fmt="%d")


# --------------------------------------------------------------------------
# normalization and heat matrix


def _minmax(a):
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a), float(lo), float(hi)
    return (a - lo) / (hi - lo), float(lo), float(hi)


def normalize_by_reference(seq: ThermalSequence) -> ThermalSequence:
    """Subtract each frame's marker mean, then min-max scale to [0, 1].

    Without a marker only the global min-max step is applied. A constant
    sequence maps to all zeros.
    """
    frames = seq.frames
    prov = dict(seq.provenance)
    if seq.marker_mask.any():
        ref = frames[:, seq.marker_mask].mean(axis=1)
        frames = frames - ref[:, None, None]
        method = "marker_shift+minmax"
    else:
        method = "minmax"
    scaled, lo, hi = _minmax(frames)
    prov["normalization"] = {"method": method, "min": lo, "max": hi}
    return ThermalSequence(scaled, seq.roi_mask, seq.marker_mask, provenance=prov)


def build_heat_matrix(seq: ThermalSequence) -> HeatMatrix:
    """Stack row-major vectorized frames as the columns of the heat matrix."""
    tau, M, N = seq.frames.shape
    if tau > M * N:
        raise ValueError(f"wide heat matrix rejected: tau={tau} > M*N={M * N}")
    data = seq.frames.reshape(tau, M * N).T.copy()
    prov = {"normalization": seq.provenance.get("normalization", {"method": "none"})}
    return HeatMatrix(data, (M, N), provenance=prov)


# --------------------------------------------------------------------------
# phantoms


def central_roi(M, N, fraction=0.8):
    """Boolean mask covering the central ``fraction`` of each image axis."""
    r0 = int(round(M * (1 - fraction) / 2))
    c0 = int(round(N * (1 - fraction) / 2))
    roi = np.zeros((M, N), dtype=bool)
    roi[r0 : M - r0, c0 : N - c0] = True
    return roi


def generate_phantom(spec: PhantomSpec) -> ThermalSequence:
    """Synthesize a deterministic thermal sequence from ``spec``.

    The background is a smooth linear gradient around 30 degrees with a
    per-frame camera drift shared by every pixel. The marker is a 3x3 corner
    patch at a fixed 25 degrees (plus drift and noise). Hotspots are Gaussian
    bumps inside the ROI whose amplitude oscillates sinusoidally over the
    sequence with relative depth ``flicker_amplitude``.
    """
    M, N, tau = spec.M, spec.N, spec.tau
    roi = central_roi(M, N)
    rows = np.flatnonzero(roi.any(axis=1))
    cols = np.flatnonzero(roi.any(axis=0))
    n_active = spec.hotspot_count if spec.hotspot_amplitude > 0 else 0
    # +-2 sigma of every bump must fit inside the ROI
    margin = 2.0 * spec.hotspot_sigma
    if n_active and (2 * margin >= len(rows) - 1 or 2 * margin >= len(cols) - 1):
        raise ValueError(
            f"hotspot sigma {spec.hotspot_sigma} too large for a {len(rows)}x{len(cols)} ROI"
        )

    bg_rng, noise_rng, spot_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)
    )
    ii, jj = np.meshgrid(np.arange(M) / max(M - 1, 1), np.arange(N) / max(N - 1, 1), indexing="ij")
    gy, gx = bg_rng.uniform(-1.0, 1.0, size=2)
    background = 30.0 + gy * ii + gx * jj
    drift = np.cumsum(bg_rng.normal(0.0, 0.05, size=tau))

    marker = np.zeros((M, N), dtype=bool)
    k = min(3, M, N)
    marker[:k, :k] = True
    marker &= ~roi
    base = np.where(marker, 25.0, background)

    frames = base[None, :, :] + drift[:, None, None]
    frames = frames + noise_rng.normal(0.0, spec.noise_sigma, size=(tau, M, N))

    if spec.hotspot_count:
        # drawn even at zero amplitude so the other streams stay aligned
        r = spot_rng.uniform(rows[0] + margin, rows[-1] - margin, size=spec.hotspot_count)
        c = spot_rng.uniform(cols[0] + margin, cols[-1] - margin, size=spec.hotspot_count)
        phase = spot_rng.uniform(0.0, 2 * np.pi, size=spec.hotspot_count)
        freq = spot_rng.uniform(1.0, 3.0, size=spec.hotspot_count)
        if spec.hotspot_amplitude > 0:
            gi, gj = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
            t = np.arange(tau)
            for rk, ck, ph, fr in zip(r, c, phase, freq):
                bump = np.exp(-((gi - rk) ** 2 + (gj - ck) ** 2) / (2 * spec.hotspot_sigma**2))
                bump[~roi] = 0.0
                amp = spec.hotspot_amplitude * (
                    1.0 + spec.flicker_amplitude * np.sin(2 * np.pi * fr * t / tau + ph)
                )
                frames = frames + amp[:, None, None] * bump[None, :, :]

    prov = {"phantom": {"label": spec.label, "seed": spec.seed}}
    return ThermalSequence(frames, roi, marker, provenance=prov)


def phantom_cohort(n_healthy, n_abnormal, template: PhantomSpec, seed):
    """Generate a labelled phantom cohort; per-sample seeds derive from ``seed``.

    Returns ``(sequences, labels)`` with labels 0 (healthy) and 1 (abnormal).
    """
    child = np.random.SeedSequence(seed).generate_state(n_healthy + n_abnormal, dtype=np.uint64)
    seqs, labels = [], []
    fields = {f: getattr(template, f) for f in template.__dataclass_fields__}
    for idx in range(n_healthy + n_abnormal):
        abnormal = idx >= n_healthy
        params = dict(fields, seed=int(child[idx]))
        if abnormal:
            params.update(label="abnormal", hotspot_count=max(template.hotspot_count, 1))
        else:
            params.update(label="healthy", hotspot_count=0, hotspot_amplitude=0.0)
        seqs.append(generate_phantom(PhantomSpec(**params)))
        labels.append(int(abnormal))
    return seqs, np.array(labels)
