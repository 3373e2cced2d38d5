import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermolr.seqio import (
    HeatMatrix,
    PhantomSpec,
    SequenceFormatError,
    ThermalSequence,
    build_heat_matrix,
    generate_phantom,
    load_sequence,
    normalize_by_reference,
    write_csv_dir,
    write_sequence,
)

FRAMES_223 = np.array([[[1, 2], [3, 4]], [[5, 6], [7, 8]], [[9, 10], [11, 12]]], dtype=float)


def _raw_container(frames, flags=0, masks=b""):
    tau, M, N = frames.shape
    head = struct.pack("<4sHIIIB", b"THSQ", 1, M, N, tau, flags)
    return head + frames.astype("<f4").tobytes() + masks


def test_container_roundtrip_preserves_frame_order(tmp_path):
    path = tmp_path / "s.thsq"
    path.write_bytes(_raw_container(FRAMES_223))
    seq = load_sequence(path)
    assert seq.frames.shape == (3, 2, 2)
    np.testing.assert_array_equal(seq.frames, FRAMES_223)
    assert seq.roi_mask is None
    assert not seq.marker_mask.any()


def test_container_with_masks_roundtrip(tmp_path):
    roi = np.array([[1, 1], [0, 1]], dtype=bool)
    marker = np.array([[0, 0], [1, 0]], dtype=bool)
    seq = ThermalSequence(FRAMES_223, roi, marker)
    write_sequence(tmp_path / "m.thsq", seq)
    back = load_sequence(tmp_path / "m.thsq")
    np.testing.assert_array_equal(back.roi_mask, roi)
    np.testing.assert_array_equal(back.marker_mask, marker)
    np.testing.assert_array_equal(back.frames, FRAMES_223)


def test_container_nan_is_rejected(tmp_path):
    frames = FRAMES_223.copy()
    frames[1, 0, 1] = np.nan
    (tmp_path / "nan.thsq").write_bytes(_raw_container(frames))
    with pytest.raises(ValueError, match="non-finite"):
        load_sequence(tmp_path / "nan.thsq")


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
])
def test_container_malformed(tmp_path, mutate):
    (tmp_path / "bad.thsq").write_bytes(mutate(_raw_container(FRAMES_223)))
    with pytest.raises(SequenceFormatError):
        load_sequence(tmp_path / "bad.thsq")


def test_csv_dir_frame_shape_mismatch(tmp_path):
    np.savetxt(tmp_path / "frame_0000.csv", np.ones((2, 2)), delimiter=",")
    np.savetxt(tmp_path / "frame_0001.csv", np.ones((3, 2)), delimiter=",")
    with pytest.raises(ValueError, match="shape mismatch"):
        load_sequence(tmp_path)


def test_csv_dir_roundtrip_lexicographic(tmp_path):
    roi = np.ones((2, 2), dtype=bool)
    write_csv_dir(tmp_path, ThermalSequence(FRAMES_223, roi))
    back = load_sequence(tmp_path)
    np.testing.assert_array_equal(back.frames, FRAMES_223)
    np.testing.assert_array_equal(back.roi_mask, roi)


def test_masks_must_be_disjoint():
    m = np.zeros((2, 2), dtype=bool)
    m[0, 0] = True
    with pytest.raises(ValueError, match="disjoint"):
        ThermalSequence(FRAMES_223, m, m)


def test_require_roi():
    with pytest.raises(ValueError, match="ROI"):
        ThermalSequence(FRAMES_223).require_roi()


# normalization


def _marker_seq(frames):
    marker = np.zeros(frames.shape[1:], dtype=bool)
    marker[0, 0] = True
    return ThermalSequence(frames, marker_mask=marker)


def test_normalize_shift_cancellation():
    rng = np.random.default_rng(3)
    f = rng.normal(30, 1, size=(4, 3, 3))
    a = normalize_by_reference(_marker_seq(f))
    b = normalize_by_reference(_marker_seq(f + np.arange(4)[:, None, None] * 1.7))
    np.testing.assert_allclose(a.frames, b.frames, atol=1e-12)


def test_normalize_constant_sequence_is_zero():
    seq = normalize_by_reference(ThermalSequence(np.full((3, 2, 2), 5.0)))
    assert np.all(seq.frames == 0.0)


def test_normalize_two_step_hand_values():
    # marker 30.0; tissue 30.5 and 31.0 -> shifted 0.5, 1.0; marker itself -> 0
    frames = np.array([[[30.0, 30.5, 31.0]]])
    out = normalize_by_reference(_marker_seq(frames))
    np.testing.assert_allclose(out.frames[0, 0], [0.0, 0.5, 1.0], atol=1e-15)
    assert out.provenance["normalization"]["method"] == "marker_shift+minmax"


def test_normalize_without_marker_records_fallback():
    out = normalize_by_reference(ThermalSequence(FRAMES_223))
    assert out.provenance["normalization"]["method"] == "minmax"
    assert out.frames.min() == 0.0 and out.frames.max() == 1.0


def test_normalize_idempotent():
    seq = generate_phantom(PhantomSpec(label="abnormal", hotspot_count=2, hotspot_amplitude=2.0, seed=5))
    once = normalize_by_reference(seq)
    twice = normalize_by_reference(once)
    np.testing.assert_allclose(twice.frames, once.frames, atol=1e-12)


# heat matrix


def test_heat_matrix_layout():
    X = build_heat_matrix(ThermalSequence(FRAMES_223))
    assert X.shape == (4, 3)
    np.testing.assert_array_equal(X.data[:, 0], [1, 2, 3, 4])
    np.testing.assert_array_equal(X.data[:, 2], [9, 10, 11, 12])


def test_heat_matrix_single_frame():
    X = build_heat_matrix(ThermalSequence(FRAMES_223[:1]))
    np.testing.assert_array_equal(X.data[:, 0], FRAMES_223[0].ravel())


def test_heat_matrix_rejects_wide():
    with pytest.raises(ValueError, match="wide"):
        build_heat_matrix(ThermalSequence(np.zeros((5, 2, 2))))
    with pytest.raises(ValueError, match="tall"):
        HeatMatrix(np.zeros((4, 5)), (2, 2))


def test_heat_matrix_unvectorize_random_5x4x6():
    rng = np.random.default_rng(0)
    frames = rng.random((6, 5, 4))
    X = build_heat_matrix(ThermalSequence(frames))
    for t in range(6):
        for i in range(5):
            for j in range(4):
                assert X.data[i * 4 + j, t] == frames[t, i, j]
        np.testing.assert_array_equal(X.frame(t), frames[t])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 5), st.integers(2, 5)),
              elements=st.floats(-1e3, 1e3)))
def test_heat_matrix_roundtrip_property(frames):
    X = build_heat_matrix(ThermalSequence(frames))
    for t in range(frames.shape[0]):
        np.testing.assert_array_equal(X.frame(t), frames[t])


# phantoms


def test_phantom_deterministic():
    spec = PhantomSpec(label="abnormal", hotspot_count=2, hotspot_amplitude=2.0, seed=11)
    a, b = generate_phantom(spec), generate_phantom(spec)
    assert a.frames.tobytes() == b.frames.tobytes()


def test_phantom_zero_amplitude_matches_healthy():
    healthy = generate_phantom(PhantomSpec(label="healthy", seed=4))
    zero = generate_phantom(PhantomSpec(label="abnormal", hotspot_count=3, hotspot_amplitude=0.0, seed=4))
    assert healthy.frames.tobytes() == zero.frames.tobytes()


def test_phantom_geometry():
    seq = generate_phantom(PhantomSpec(seed=1))
    assert seq.frames.shape == (23, 32, 32)
    assert seq.roi_mask.sum() == 26 * 26
    assert seq.marker_mask.sum() == 9
    assert not np.any(seq.roi_mask & seq.marker_mask)
    # marker is held at a fixed value relative to the shared drift
    marker_vals = seq.frames[:, seq.marker_mask]
    assert np.all(np.abs(marker_vals - marker_vals.mean(axis=1, keepdims=True)) < 0.5)


def test_phantom_hotspot_too_large():
    with pytest.raises(ValueError, match="too large"):
        generate_phantom(PhantomSpec(label="abnormal", hotspot_count=1, hotspot_amplitude=1.0,
                                     hotspot_sigma=10.0))


def test_phantom_healthy_with_hotspots_rejected():
    with pytest.raises(ValueError):
        PhantomSpec(label="healthy", hotspot_count=1, hotspot_amplitude=1.0)


def _roi_variance(seq):
    return np.mean([f[seq.roi_mask].var() for f in seq.frames])


def test_phantom_label_separability_over_50_seeds():
    ab, he = [], []
    for s in range(50):
        ab.append(_roi_variance(generate_phantom(PhantomSpec(
            label="abnormal", hotspot_count=2, hotspot_amplitude=2.0, noise_sigma=0.05, seed=s))))
        he.append(_roi_variance(generate_phantom(PhantomSpec(label="healthy", noise_sigma=0.05, seed=s))))
    ab, he = np.array(ab), np.array(he)
    assert np.all(ab > he)
    assert ab.mean() > he.mean()
