import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from thermolr import factorize as fz
from thermolr.factorize import FactorizeConfig, reconstruction_error


def rand(shape, seed=0):
    return np.random.default_rng(seed).random(shape)


def line_angle(u, v):
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.arccos(min(c, 1.0))


# config


@pytest.mark.parametrize("kwargs", [{"p": 0}, {"p": 5, "layer_dims": [5, 8]}, {"p": 5, "layer_dims": [12, 4]},
                                    {"l1_penalty": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FactorizeConfig(**kwargs)


def test_default_layers():
    assert FactorizeConfig().layers == (12, 5)
    assert FactorizeConfig(p=3, layer_dims=[7, 3]).layers == (7, 3)


@pytest.mark.parametrize("method", fz.METHODS)
def test_rank_exceeding_frames_rejected(method):
    with pytest.raises(ValueError, match="exceeds"):
        fz.factorize(rand((10, 3)), method, FactorizeConfig(p=4, layer_dims=[4]))


# PCT


def test_pct_identity_spectrum():
    r = fz.pct(np.eye(3), FactorizeConfig(p=3))
    np.testing.assert_allclose(r.singular_values, [1, 1, 1], atol=1e-15)


def test_pct_rank_one():
    rng = np.random.default_rng(1)
    u = rng.normal(size=12)
    v = rng.normal(size=6)
    X = np.outer(2 * u / np.linalg.norm(u), 3 * v / np.linalg.norm(v))
    r = fz.pct(X, FactorizeConfig(p=1))
    assert r.singular_values[0] == pytest.approx(6.0, rel=1e-12)
    assert np.all(r.singular_values[1:] <= 1e-12)


def test_pct_full_rank_against_gram_eigensolver():
    X = np.random.default_rng(2).normal(size=(12, 6))
    r = fz.pct(X, FactorizeConfig(p=6))
    assert np.linalg.norm(X - r.B @ r.A) <= 1e-8 * np.linalg.norm(X)
    oracle = np.sort(scipy.linalg.eigh(X.T @ X, eigvals_only=True))[::-1]
    np.testing.assert_allclose(r.singular_values**2, oracle, rtol=1e-8)


def test_pct_orthonormal_and_sign_convention():
    r = fz.pct(rand((40, 10)), FactorizeConfig(p=4))
    assert np.max(np.abs(r.B.T @ r.B - np.eye(4))) <= 1e-10
    idx = np.argmax(np.abs(r.B), axis=0)
    assert np.all(r.B[idx, range(4)] > 0)
    assert np.all(np.diff(r.singular_values) <= 0)


def test_pct_is_best_rank_p():
    X = rand((64, 23), seed=5)
    cfg = FactorizeConfig(p=3, max_iters=300)
    best = reconstruction_error(X, fz.pct(X, cfg))
    for m in fz.METHODS[1:]:
        assert best <= reconstruction_error(X, fz.factorize(X, m, cfg)) + 1e-12, m


# CCIPCT


def test_ccipct_rank_one_direction():
    rng = np.random.default_rng(0)
    X = np.outer(rng.random(64), rng.random(23)) + 1e-4 * rng.standard_normal((64, 23))
    r = fz.ccipct(X, FactorizeConfig(p=1, max_iters=50, tol=0))
    assert line_angle(r.B[:, 0], fz.pct(X, FactorizeConfig(p=1)).B[:, 0]) <= 1e-2


def test_ccipct_single_sample_fixed_point():
    x = np.random.default_rng(4).normal(size=(9, 1))
    r = fz.ccipct(x, FactorizeConfig(p=1, max_iters=1))
    np.testing.assert_allclose(np.abs(r.B[:, 0]), np.abs(x[:, 0]) / np.linalg.norm(x), atol=1e-15)


def test_ccipct_subspace_matches_batch():
    X = rand((64, 23))
    r = fz.ccipct(X, FactorizeConfig(p=5, max_iters=200, tol=0))
    P = fz.pct(X, FactorizeConfig(p=5))
    assert np.max(scipy.linalg.subspace_angles(r.B, P.B)) <= 0.1


# sparse PCT


def test_sparse_pct_zero_penalty_is_pct():
    X = rand((30, 8), seed=7)
    s = fz.sparse_pct(X, FactorizeConfig(p=2, l1_penalty=0.0, tol=1e-14, max_iters=2000))
    P = fz.pct(X, FactorizeConfig(p=2))
    np.testing.assert_allclose(s.B[:, 0], P.B[:, 0], atol=1e-8)


def test_sparse_pct_one_sparse_leading_direction():
    rng = np.random.default_rng(8)
    X = 0.01 * rng.random((20, 6))
    X[3] += 5.0 * rng.random(6) + 1.0
    r = fz.sparse_pct(X, FactorizeConfig(p=1, l1_penalty=0.5))
    # oracle: the support is exactly the planted row
    assert np.flatnonzero(r.B[:, 0]).tolist() == [3]
    assert np.linalg.norm(r.B[:, 0]) == pytest.approx(1.0)


def test_sparse_pct_all_zero_threshold_errors():
    with pytest.raises(ValueError, match="all zeros"):
        fz.sparse_pct(rand((20, 5)), FactorizeConfig(p=1, l1_penalty=1e3))


# NMF family


def test_nmf_rank_one_recovery():
    rng = np.random.default_rng(9)
    X = np.outer(rng.random(40) + 0.1, rng.random(12) + 0.1)
    r = fz.nmf(X, FactorizeConfig(p=1, max_iters=500))
    assert r.iterations_run <= 500
    assert reconstruction_error(X, r) <= 1e-3


@pytest.mark.parametrize("method", ["NMF", "SparseNMF", "ConvexNMF", "SemiNMF"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_multiplicative_traces_monotone(method, seed):
    X = rand((64, 23), seed=seed)
    r = fz.factorize(X, method, FactorizeConfig(p=5, max_iters=200, tol=0, seed=seed))
    assert np.all(np.diff(r.objective_trace) <= 1e-12)


def test_nonneg_constraints():
    X = rand((50, 10), seed=3)
    cfg = FactorizeConfig(p=3, max_iters=100)
    r = fz.nmf(X, cfg)
    assert r.B.min() >= 0 and r.A.min() >= 0
    r = fz.sparse_nmf(X, cfg)
    assert r.B.min() >= 0 and r.A.min() >= 0
    r = fz.convex_nmf(X, cfg)
    assert r.extras["W"].min() >= 0 and r.A.min() >= 0
    np.testing.assert_allclose(r.B, X @ r.extras["W"])


def test_semi_nmf_accepts_negative_data_nmf_rejects():
    X = np.random.default_rng(0).normal(size=(30, 8))
    r = fz.semi_nmf(X, FactorizeConfig(p=3))
    assert r.A.min() >= 0
    assert np.isfinite(r.objective_trace[-1])
    with pytest.raises(ValueError, match="non-negative"):
        fz.nmf(X, FactorizeConfig(p=3))
    with pytest.raises(ValueError, match="non-negative"):
        fz.sparse_nmf(X, FactorizeConfig(p=3))


def test_sparse_nmf_penalty_shrinks_coefficients():
    X = rand((40, 10), seed=2)
    plain = fz.nmf(X, FactorizeConfig(p=3, max_iters=300))
    sparse = fz.sparse_nmf(X, FactorizeConfig(p=3, max_iters=300, l1_penalty=2.0))
    assert sparse.A.sum() < plain.A.sum()


# deep semi-NMF


def test_deep_single_layer_equals_semi():
    X = rand((64, 23), seed=1)
    a = fz.semi_nmf(X, FactorizeConfig(p=5, seed=3))
    b = fz.deep_semi_nmf(X, FactorizeConfig(p=5, layer_dims=[5], seed=3))
    np.testing.assert_allclose(b.B, a.B, atol=1e-10)
    np.testing.assert_allclose(b.A, a.A, atol=1e-10)


def test_deep_fine_tuning_never_worsens():
    X = rand((64, 23), seed=4)
    r = fz.deep_semi_nmf(X, FactorizeConfig(p=5, layer_dims=[12, 5], seed=4))
    assert r.objective_trace[-1] <= r.extras["pretrain_objective"]
    assert np.all(np.diff(r.objective_trace) <= 1e-9)
    assert r.A.min() >= 0
    eff = r.extras["layers"][0] @ r.extras["layers"][1]
    np.testing.assert_allclose(r.B, eff)
    assert r.B.shape == (64, 5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_deep_coefficients_nonnegative(seed, p):
    X = np.random.default_rng(seed).normal(size=(30, 9))
    r = fz.deep_semi_nmf(X, FactorizeConfig(p=p, layer_dims=[p + 3, p], max_iters=50, seed=seed))
    assert r.A.min() >= 0


# reconstruction error and determinism


def test_reconstruction_error_cases():
    X = rand((20, 6))
    assert reconstruction_error(X, fz.pct(X, FactorizeConfig(p=6))) <= 1e-8
    zero = fz.FactorizationResult(np.zeros((20, 2)), np.zeros((2, 6)), "PCT")
    assert reconstruction_error(X, zero) == 1.0
    with pytest.raises(ValueError):
        reconstruction_error(np.zeros((20, 6)), zero)


def test_reconstruction_error_matches_direct_norm():
    rng = np.random.default_rng(6)
    X = np.outer(rng.random(30), rng.random(8))
    r = fz.nmf(X, FactorizeConfig(p=1, max_iters=50))
    direct = np.sqrt(np.sum((X - r.B @ r.A) ** 2)) / np.sqrt(np.sum(X**2))
    assert reconstruction_error(X, r) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("method", fz.METHODS)
def test_determinism(method):
    X = rand((40, 10), seed=8)
    cfg = FactorizeConfig(p=3, max_iters=60, seed=42)
    a, b = fz.factorize(X, method, cfg), fz.factorize(X, method, cfg)
    assert a.B.tobytes() == b.B.tobytes() and a.A.tobytes() == b.A.tobytes()


def test_result_export(tmp_path):
    X = rand((20, 6))
    r = fz.pct(X, FactorizeConfig(p=2))
    r.save(tmp_path)
    np.testing.assert_allclose(np.loadtxt(tmp_path / "factorization_B.csv", delimiter=","), r.B)
    import json
    s = json.loads((tmp_path / "factorization.json").read_text())
    assert s["method"] == "PCT" and s["p"] == 2 and len(s["singular_values"]) == 6


# estimator surface


@pytest.mark.parametrize("name", list(fz.ESTIMATORS))
def test_estimator_api(name):
    X = rand((40, 10), seed=1)
    est = fz.ESTIMATORS[name](n_components=3, max_iter=80)
    assert "n_components" in est.get_params()
    B = est.fit_transform(X)
    assert B.shape == (40, 3)
    assert est.components_.shape == (3, 10)
    assert clone(est).get_params() == est.get_params()
    recon = est.inverse_transform(B)
    assert recon.shape == X.shape
    assert est.transform(X[:5]).shape == (5, 3)
    assert est.reconstruction_error(X) < 1.0


def test_pct_estimator_transform_recovers_basis():
    X = rand((40, 10), seed=1)
    est = fz.PCT(n_components=10).fit(X)
    np.testing.assert_allclose(est.transform(X), est.basis_, atol=1e-10)
