import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnn_mcmc import _backend
from hnn_mcmc.errors import DatasetError, NumericalDomainError
from hnn_mcmc.targets import (
    DiagonalGaussian,
    GaussianMixture1D,
    LogisticRegression,
    NealFunnel,
    PhaseState,
    Rosenbrock,
    RoughWell,
    as_mass,
    hamiltonian,
    kinetic,
    load_logistic_dataset,
    make_target,
    normalize_dataset,
    synthetic_logistic_dataset,
)


trapz = getattr(np, "trapezoid", None) or np.trapz


def fd_grad(f, q, h=1e-6):
    g = np.empty_like(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        g[i] = (f(q + e) - f(q - e)) / (2 * h)
    return g


TARGETS = [
    DiagonalGaussian([0.01, 0.1, 1.0, 10.0, 100.0]),
    Rosenbrock(3),
    GaussianMixture1D(),
    RoughWell(6, eta=0.3),
    NealFunnel(),
    LogisticRegression(synthetic_logistic_dataset(K=60, d=5, seed=3)),
]


@pytest.mark.parametrize("target", TARGETS, ids=lambda t: t.name)
def test_gradient_matches_central_differences(target):
    rng = np.random.default_rng(7)
    for _ in range(25):
        q = rng.normal(size=target.d)
        g = target.grad(q)
        num = fd_grad(target.potential, q)
        scale = np.maximum(np.abs(num), 1.0)
        assert np.max(np.abs(g - num) / scale) < 1e-6


def test_rough_well_gradient_sign():
    # U = q^2/2 + eta cos(q/eta): dU/dq = q - sin(q/eta)
    t = RoughWell(1, eta=0.5)
    q = np.array([0.4])
    assert t.grad(q)[0] == pytest.approx(0.4 - math.sin(0.8))


def test_rosenbrock_minimum_is_zero():
    t = Rosenbrock(5)
    assert t.potential(np.ones(5)) == 0.0
    np.testing.assert_array_equal(t.grad(np.ones(5)), 0.0)


def test_mixture_density_is_normalized():
    t = GaussianMixture1D()
    x = np.linspace(-6, 6, 24001)
    dens = np.exp([-t.potential(np.array([v])) for v in x])
    assert trapz(dens, x) == pytest.approx(1.0, abs=1e-8)


def test_mixture_cdf_matches_quadrature():
    t = GaussianMixture1D()
    x = np.linspace(-5, 1.3, 20001)
    dens = np.exp([-t.potential(np.array([v])) for v in x])
    assert t.cdf(1.3) == pytest.approx(trapz(dens, x), abs=1e-7)
    assert t.cdf(0.0) == pytest.approx(0.5, abs=1e-15)


def test_funnel_normalizer():
    # integral of exp(-U) over the plane is sqrt(2 pi) * sqrt(18 pi) = 6 pi
    t = NealFunnel()
    q1 = np.linspace(-15, 15, 1201)
    total = 0.0
    inner = []
    for a in q1:
        s = math.exp(a / 2)
        q2 = np.linspace(-12 * s, 12 * s, 801)
        vals = np.exp([-t.potential(np.array([a, b])) for b in q2])
        inner.append(trapz(vals, q2))
    total = trapz(inner, q1)
    assert total == pytest.approx(6 * math.pi, rel=1e-6)


def test_ill_conditioned_gaussian_scales():
    t = make_target("ill_conditioned_gaussian")
    q = np.ones(5)
    np.testing.assert_allclose(t.grad(q), [100.0, 10.0, 1.0, 0.1, 0.01])
    assert t.d == 5


def test_logistic_potential_formula():
    ds = synthetic_logistic_dataset(K=30, d=4, seed=1)
    t = LogisticRegression(ds)
    q = np.array([0.3, -0.1, 0.5, 0.2])
    m = ds.labels * (ds.predictors @ q)
    expect = np.sum(np.log1p(np.exp(-m))) + 0.5 * q @ q
    assert t.potential(q) == pytest.approx(expect, rel=1e-13)


def test_logistic_intercept_adds_dimension():
    ds = synthetic_logistic_dataset(K=30, d=4, seed=1)
    assert LogisticRegression(ds, intercept=True).d == 5


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_potentials_finite_on_moderate_inputs(vals):
    q = np.array(vals)
    for t in (Rosenbrock(3), DiagonalGaussian([1.0, 2.0, 3.0]), RoughWell(3, 0.01)):
        assert math.isfinite(t.potential(q))
        assert np.all(np.isfinite(t.grad(q)))


def test_non_finite_values_raise():
    t = NealFunnel()
    with pytest.raises(NumericalDomainError):
        t.potential(np.array([-1000.0, 1.0]))
    assert math.isinf(t.potential(np.array([-1000.0, 1.0]), check=False))


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError):
        Rosenbrock(3).potential(np.zeros(2))


def test_counters_count_and_are_thread_safe():
    t = DiagonalGaussian([1.0, 1.0])

    def work():
        for _ in range(500):
            t.grad(np.zeros(2))
            t.potential(np.zeros(2))

    threads = [threading.Thread(target=work) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert t.counters.snapshot() == {"potential": 4000, "grad": 4000}
    with pytest.raises(ValueError):
        t.counters.add(grad=-1)


def test_phase_state_validation():
    s = PhaseState([1.0, 2.0], [0.0, -1.0])
    assert s.d == 2
    np.testing.assert_array_equal(s.z(), [1, 2, 0, -1])
    with pytest.raises(ValueError):
        PhaseState([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        PhaseState([np.nan], [1.0])


def test_mass_and_kinetic():
    np.testing.assert_array_equal(as_mass(None, 3), np.ones(3))
    np.testing.assert_array_equal(as_mass(2.0, 3), [2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        as_mass([1.0, 0.0], 2)
    with pytest.raises(ValueError):
        as_mass([1.0, 2.0], 3)
    assert kinetic([2.0, 1.0], [2.0, 0.5]) == pytest.approx(1.0 + 1.0)
    t = DiagonalGaussian([1.0, 1.0])
    assert hamiltonian(t, PhaseState([1.0, 1.0], [1.0, 0.0])) == pytest.approx(1.5)


def test_make_target_names():
    assert make_target("rosenbrock").d == 3
    assert make_target({"name": "rough_well", "n": 10, "eta": 0.01}).d == 10
    assert make_target({"name": "standard_gaussian", "n": 2}).d == 2
    assert make_target("neal_funnel").d == 2
    assert make_target("gaussian_mixture_1d").d == 1
    assert make_target({"name": "logistic", "synthetic": {"K": 40, "d": 3}}).d == 3
    with pytest.raises(ValueError, match="unknown target"):
        make_target("banana")
    with pytest.raises(ValueError, match="dataset"):
        make_target("logistic")


def test_normalize_dataset_and_label_maps():
    X = np.array([[1.0, 5.0], [2.0, 5.5], [3.0, 7.0], [4.0, 6.5]])
    ds = normalize_dataset(X, [1, 2, 2, 1])
    np.testing.assert_allclose(ds.predictors.mean(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(ds.predictors.std(axis=0), 1.0)
    np.testing.assert_array_equal(ds.labels, [1, -1, -1, 1])
    np.testing.assert_array_equal(normalize_dataset(X, [0, 1, 1, 0]).labels, [-1, 1, 1, -1])
    np.testing.assert_array_equal(normalize_dataset(X, [-1, 1, 1, -1]).labels, [-1, 1, 1, -1])
    with pytest.raises(DatasetError, match="zero variance column 1"):
        normalize_dataset(np.array([[1.0, 2.0], [3.0, 2.0]]), [0, 1])
    with pytest.raises(DatasetError, match="two distinct"):
        normalize_dataset(X, [1, 1, 1, 1])


def test_load_dataset_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,1\n2,1,2\n3,5,1\n4,3,2\n")
    ds = load_logistic_dataset(p)
    assert ds.K == 4 and ds.d == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,1\n2,x,2\n3,5,1\n")
    with pytest.raises(DatasetError, match="row 1"):
        load_logistic_dataset(bad)
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2,1\n2,2\n")
    with pytest.raises(DatasetError, match="row 1"):
        load_logistic_dataset(ragged)
    with pytest.raises(DatasetError, match="not found"):
        load_logistic_dataset(tmp_path / "missing.csv")


def test_synthetic_dataset_is_seeded():
    a = synthetic_logistic_dataset(seed=4)
    b = synthetic_logistic_dataset(seed=4)
    np.testing.assert_array_equal(a.predictors, b.predictors)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.K == 200 and a.d == 8


@pytest.mark.skipif(not _backend.HAVE_COMPILED, reason="compiled core not built")
@pytest.mark.parametrize("target", TARGETS, ids=lambda t: t.name)
def test_compiled_kernels_match(target):
    core = _backend.core
    kind, params, X, y = target.kernel()
    h = core.make_target(kind, target.d, params, X, y)
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = rng.normal(size=target.d)
        u, g = core.target_eval(h, q)
        assert u == pytest.approx(target.potential(q), rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(g, target.grad(q), rtol=1e-12, atol=1e-12)


def test_load_whitespace_separated_file(tmp_path):
    p = tmp_path / "german.data-numeric"
    p.write_text("   1   6   4  1\n   2  48   2  2\n   4  12   4  1\n   1  42   2  2\n")
    ds = load_logistic_dataset(p)
    assert ds.K == 4 and ds.d == 3
    np.testing.assert_array_equal(ds.labels, [1, -1, 1, -1])
