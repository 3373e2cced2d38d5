import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermolr.embedding import (
    EmbeddingParams,
    RoiStats,
    bell_membership,
    embed,
    gaussian_membership,
    rescale_unit,
    weibull_membership,
)
from thermolr.factorize import FactorizeConfig, pct
from thermolr.seqio import PhantomSpec, build_heat_matrix, generate_phantom, normalize_by_reference

STATS = RoiStats(mu=2.0, sigma=0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        EmbeddingParams(kind="Laplace")
    with pytest.raises(ValueError):
        EmbeddingParams(weibull_k=0)
    assert EmbeddingParams(weibull_k=2, weibull_lambda=2).weibull_scale == 0.25


def test_gaussian_points():
    eta = gaussian_membership(np.array([2.0, 2.5, 1.0]), STATS)
    np.testing.assert_allclose(eta, [1.0, math.e, math.exp(-2)], rtol=1e-15)


def test_bell_points():
    xi = bell_membership(np.array([2.0, 1.5, 2.5, 3.0]), STATS, b=1.0)
    np.testing.assert_allclose(xi, [1.0, 0.5, 0.5, 0.2], rtol=1e-15)
    assert bell_membership(np.array([2.5]), STATS, b=3.7)[0] == pytest.approx(0.5)


def test_constant_vector_neutral_membership():
    s = RoiStats(1.0, 0.0)
    np.testing.assert_array_equal(gaussian_membership(np.ones(3), s), 1.0)
    np.testing.assert_array_equal(bell_membership(np.ones(3), s), 1.0)


def test_weibull_points():
    assert weibull_membership(np.array([0.0]), k=1, lam=1)[0] == 1.0
    assert weibull_membership(np.array([-0.5]))[0] == 0.0
    assert weibull_membership(np.array([1.0]), k=2, lam=1)[0] == pytest.approx(2 / math.e, rel=1e-15)
    with pytest.raises(ValueError):
        weibull_membership(np.array([1.0]), k=-1)


def test_weibull_rayleigh_special_case():
    sigma = 0.3
    x = np.linspace(0, 1, 11)
    rayleigh = x / sigma**2 * np.exp(-(x**2) / (2 * sigma**2))
    np.testing.assert_allclose(weibull_membership(x, k=2, lam=np.sqrt(2) * sigma), rayleigh, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 6.0), st.floats(0.2, 3.0))
def test_weibull_unimodal(k, lam):
    w = weibull_membership(np.linspace(0, 1, 401), k, lam)
    d = np.sign(np.diff(w))
    d = d[d != 0]
    # at most one sign change from + to -
    assert np.sum(np.diff(d) != 0) <= 1
    if d.size and d[0] < 0:
        assert np.all(d < 0)
    mode = lam * ((k - 1) / k) ** (1 / k)
    peak = weibull_membership(np.array([mode]), k, lam)[0]
    assert w.max() <= peak + 1e-12
    assert w.min() >= 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.floats(0.1, 5))
def test_membership_ranges(values, b):
    beta = np.array(values)
    s = RoiStats.of(beta)
    xi = bell_membership(beta, s, b)
    assert np.all(xi > 0) and np.all(xi <= 1)
    if s.sigma > 0:
        assert np.all(gaussian_membership(beta, s) > 0)


def test_rescale_unit_constant_maps_to_zero():
    np.testing.assert_array_equal(rescale_unit(np.full(4, 3.0)), 0.0)
    np.testing.assert_allclose(rescale_unit(np.array([1.0, 2.0, 3.0])), [0, 0.5, 1])


# embed


def test_embed_identity_pass_through():
    beta = np.full(4, 0.7)
    img = embed(beta[:, None], np.ones((2, 2), bool), EmbeddingParams(kind="Gaussian", p=1))
    np.testing.assert_array_equal(img.values, beta.reshape(2, 2))


def test_embed_weibull_zero_vector_offset():
    b1 = np.array([0.1, 0.4, 0.2, 0.9])
    B = np.column_stack([b1, np.zeros(4)])
    img = embed(B, np.ones((2, 2), bool), EmbeddingParams(kind="Weibull", weibull_k=1, weibull_lambda=1, p=2))
    lo, hi = b1.min(), b1.max()
    expected = [math.exp(-(v - lo) / (hi - lo)) + 1.0 for v in b1]
    np.testing.assert_allclose(img.values.ravel(), expected, rtol=1e-14)


def test_gaussian_and_bell_differ():
    B = np.random.default_rng(0).normal(size=(36, 3))
    roi = np.ones((6, 6), bool)
    g = embed(B, roi, EmbeddingParams(kind="Gaussian", p=3)).values
    b = embed(B, roi, EmbeddingParams(kind="Bell", p=3)).values
    assert np.max(np.abs(g - b)) > 1e-6


@pytest.mark.parametrize("kind", ["Gaussian", "Bell", "Weibull"])
def test_outside_roi_zero_and_permutation_invariance(kind):
    rng = np.random.default_rng(1)
    B = rng.normal(size=(64, 4)) * 50  # large values outside the ROI must not leak
    roi = np.zeros((8, 8), bool)
    roi[2:6, 1:7] = True
    params = EmbeddingParams(kind=kind, p=4)
    a = embed(B, roi, params)
    assert np.all(a.values[~roi] == 0.0)
    assert np.all(np.isfinite(a.values))
    perm = embed(B[:, [2, 0, 3, 1]], roi, params)
    np.testing.assert_allclose(perm.values, a.values, rtol=1e-12, atol=1e-12)


def test_embed_roi_stats_use_roi_only():
    B = np.arange(16.0)[:, None]
    roi = np.zeros((4, 4), bool)
    roi[0] = True
    img = embed(B, roi, EmbeddingParams(kind="Gaussian", p=1))
    stats = img.provenance["roi_stats"][0]
    assert stats["mu"] == pytest.approx(1.5)
    assert stats["sigma"] == pytest.approx(np.std([0, 1, 2, 3]))


def test_embed_errors():
    roi = np.ones((2, 2), bool)
    with pytest.raises(ValueError, match="p=3"):
        embed(np.ones((4, 2)), roi, EmbeddingParams(p=3))
    with pytest.raises(ValueError, match="empty"):
        embed(np.ones((4, 2)), np.zeros((2, 2), bool), EmbeddingParams(p=1))


def _cv(v):
    return v.std() / abs(v.mean())


def test_weibull_map_increases_spread_on_abnormal_phantoms():
    cv_phi, cv_beta = [], []
    for s in range(50):
        seq = normalize_by_reference(generate_phantom(PhantomSpec(
            label="abnormal", hotspot_count=2, hotspot_amplitude=2.0, seed=s)))
        B = pct(build_heat_matrix(seq).data, FactorizeConfig(p=5)).B
        img = embed(B, seq.roi_mask, EmbeddingParams())
        cv_phi.append(_cv(img.values[seq.roi_mask]))
        cv_beta.append(_cv(B[seq.roi_mask.ravel(), 0]))
    assert np.mean(cv_phi) > np.mean(cv_beta)


def test_export_pgm_and_csv(tmp_path):
    B = np.random.default_rng(2).random((12, 2))
    roi = np.zeros((3, 4), bool)
    roi[1:, 1:] = True
    img = embed(B, roi, EmbeddingParams(p=2))
    img.to_pgm(tmp_path / "x.pgm", roi)
    raw = (tmp_path / "x.pgm").read_bytes()
    header = b"P5\n4 3\n65535\n"
    assert raw.startswith(header)
    pix = np.frombuffer(raw[len(header):], dtype=">u2").reshape(3, 4)
    assert pix[~roi].max() == 0
    assert pix[roi].max() == 65535 and pix[roi].min() == 0
    side = json.loads((tmp_path / "x.json").read_text())
    assert side["roi_min"] == pytest.approx(img.values[roi].min())
    img.to_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "x.csv", delimiter=","), img.values)
