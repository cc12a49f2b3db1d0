import math
import os
import subprocess
import sys

import numpy as np
import pytest

from hnn_mcmc import _backend
from hnn_mcmc.diagnostics import ess
from hnn_mcmc.errors import ConfigError, IntegrationError
from hnn_mcmc.integrate import AnalyticGradient
from hnn_mcmc.network import NetworkGradient, init_params
from hnn_mcmc.samplers import (
    SamplerConfig,
    build_tree,
    generate_training_data,
    hmc,
    no_uturn,
    nuts,
    read_chain_csv,
)
from hnn_mcmc.targets import DiagonalGaussian, GaussianMixture1D, NealFunnel, PhaseState, Rosenbrock

compiled_only = pytest.mark.skipif(not _backend.HAVE_COMPILED, reason="compiled core not built")
BACKENDS = ["python"] + (["compiled"] if _backend.HAVE_COMPILED else [])


def gauss(d):
    return DiagonalGaussian(np.ones(d))


def untrained_net(d, seed=0):
    return NetworkGradient(init_params(d, (16, 16), seed=seed))


# -- configuration -------------------------------------------------------------

@pytest.mark.parametrize("kwargs,field", [
    ({"M": 0}, "M"),
    ({"M": 10, "burn_in": 10}, "burn_in"),
    ({"dt": 0.0}, "dt"),
    ({"dt": math.inf}, "dt"),
    ({"max_tree_depth": 0}, "max_tree_depth"),
    ({"delta_max_lf": math.inf}, "delta_max_lf"),
    ({"delta_max_hnn": 2000.0}, "delta_max_hnn"),
    ({"delta_max_hnn": math.nan}, "delta_max_hnn"),
    ({"n_lf": 0}, "n_lf"),
])
def test_config_validation(kwargs, field):
    with pytest.raises(ConfigError) as info:
        SamplerConfig(**kwargs)
    assert info.value.field == field


def test_config_trajectory_steps():
    assert SamplerConfig(T=5, dt=0.05).n_steps() == 100
    with pytest.raises(ConfigError):
        SamplerConfig(T=0.12, dt=0.05).n_steps()
    with pytest.raises(ConfigError):
        SamplerConfig().n_steps()
    assert SamplerConfig(delta_max_hnn=-math.inf).to_dict()["delta_max_hnn"] == "-inf"


# -- training data ---------------------------------------------------------------

def test_training_data_mixture_count():
    t = GaussianMixture1D()
    data = generate_training_data(t, 20, 20, 0.05, seed=1)
    assert len(data) == 8000
    assert data.grad_evaluations == 8000 == t.counters.grad


def test_training_data_count_at_larger_scale():
    # 40 trajectories of 10,000 steps on a cheap target
    t = DiagonalGaussian([1.0, 2.0])
    data = generate_training_data(t, 40, 250, 0.025, seed=0)
    assert len(data) == 400_000 == data.grad_evaluations


def test_training_data_minimal_and_exact_targets():
    t = Rosenbrock(3)
    data = generate_training_data(t, 1, 0.1, 0.1, seed=2)
    assert len(data) == 1 and data.grad_evaluations == 1
    np.testing.assert_array_equal(data.inputs[0, :3], 0.0)

    data = generate_training_data(t, 3, 0.5, 0.1, seed=2, mass=[1.0, 2.0, 4.0])
    Z, D = data.inputs, data.targets
    np.testing.assert_allclose(D[:, :3], Z[:, 3:] / [1.0, 2.0, 4.0])
    for z, dz in zip(Z, D):
        np.testing.assert_allclose(dz[3:], -t.grad(z[:3]), rtol=1e-15)


def test_training_data_is_seeded():
    t = GaussianMixture1D()
    a = generate_training_data(t, 3, 1.0, 0.05, seed=4)
    b = generate_training_data(t, 3, 1.0, 0.05, seed=4)
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_training_data_with_metropolis_costs_one_more_gradient():
    t = GaussianMixture1D()
    data = generate_training_data(t, 5, 1.0, 0.05, seed=0, metropolis=True)
    assert len(data) == 100 and data.grad_evaluations == 101


def test_training_data_propagates_integration_errors():
    with pytest.raises(IntegrationError):
        generate_training_data(NealFunnel(), 20, 40.0, 2.0, seed=0, start=[-30.0, 0.0])


# -- HMC -------------------------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_hmc_acceptance_near_one_for_tiny_steps(backend):
    t = gauss(1)
    chain = hmc(AnalyticGradient(t), t, SamplerConfig(M=300, dt=1e-3, T=0.5, seed=1), backend=backend)
    assert chain.acceptance > 0.999
    assert np.all(chain.alpha > 0) and np.all(chain.alpha <= 1)


@pytest.mark.parametrize("backend", BACKENDS)
def test_hmc_gradient_accounting(backend):
    t = GaussianMixture1D()
    cfg = SamplerConfig(M=50, burn_in=10, dt=0.05, T=5, seed=0)
    chain = hmc(AnalyticGradient(t), t, cfg, backend=backend)
    assert chain.grad_counts["target"] == 1 + 50 * 100 == t.counters.grad
    assert chain.potential_calls == 2 * 50

    t2 = GaussianMixture1D()
    net = untrained_net(1)
    chain = hmc(net, t2, cfg, backend=backend, training_grads=8000)
    assert chain.grad_counts == {"training": 8000, "network": 1 + 50 * 100, "target": 0}
    assert t2.counters.grad == 0 and t2.counters.potential == 2 * 50 == chain.potential_calls


@pytest.mark.parametrize("backend", BACKENDS)
def test_hmc_rejects_non_finite_proposals(backend):
    t = NealFunnel()
    cfg = SamplerConfig(M=40, dt=3.0, T=30.0, seed=0)
    chain = hmc(AnalyticGradient(t), t, cfg, start=[-8.0, 0.0], backend=backend)
    bad = ~np.isfinite(chain.epsilon)
    assert bad.any()
    assert np.all(chain.alpha[bad] == 0) and not chain.accepted[bad].any()
    assert np.all(np.isfinite(chain.samples))


# -- NUTS building blocks ----------------------------------------------------------

def test_no_uturn():
    a = PhaseState([0.0, 0.0], [1.0, 0.0])
    b = PhaseState([1.0, 0.0], [1.0, 0.5])
    assert no_uturn(a, b)
    assert not no_uturn(PhaseState([0.0, 0.0], [-1.0, 0.0]), b)
    assert not no_uturn(a, PhaseState([1.0, 0.0], [-1.0, 0.0]))
    # the test is on velocities p/m
    assert no_uturn(a, PhaseState([1.0, 0.0], [0.5, 0.0]), mass=[2.0, 1.0])


def test_build_tree_base_case_at_mode():
    t = gauss(2)
    s0 = PhaseState([0.0, 0.0], [0.1, -0.1])
    H0 = 0.01
    res = build_tree(s0, -H0 - 0.5, 1, 0, SamplerConfig(dt=1e-4), AnalyticGradient(t), t)
    assert res.s and res.n == 1
    assert res.proposal.q[0] == pytest.approx(1e-5, rel=1e-6)
    np.testing.assert_array_equal(res.minus.q, res.plus.q)
    assert not res.lf_flag


def test_build_tree_threshold_flips_to_target_leapfrog():
    t = gauss(2)
    net = untrained_net(2, seed=5)
    cfg = SamplerConfig(dt=0.1, delta_max_hnn=10.0)
    q, p, h = np.array([0.5, -0.3]), np.array([0.4, 0.9]), 0.1
    # the network step the base case will take first
    g0 = net(q)
    q1 = q + h * p - 0.5 * h * h * g0
    p1 = p - 0.5 * h * (g0 + net(q1))
    H_net = 0.5 * q1 @ q1 + 0.5 * p1 @ p1
    log_u = cfg.delta_max_hnn + 1.0 - H_net
    before = t.counters.grad
    res = build_tree(PhaseState(q, p), log_u, 1, 0, cfg, net, t)
    assert res.lf_flag
    assert t.counters.grad - before == 2
    qt = q + h * p - 0.5 * h * h * q
    pt = p - 0.5 * h * (q + qt)
    np.testing.assert_allclose(res.proposal.q, qt, rtol=1e-15)
    np.testing.assert_allclose(res.proposal.p, pt, rtol=1e-15)
    H_t = 0.5 * qt @ qt + 0.5 * pt @ pt
    assert res.s == (H_t + log_u <= cfg.delta_max_lf)
    assert res.n == (1.0 if log_u <= -H_t else 0.0)


def test_build_tree_below_threshold_stays_on_network():
    t = gauss(2)
    net = untrained_net(2, seed=5)
    res = build_tree(PhaseState([0.5, -0.3], [0.4, 0.9]), -5.0, -1, 2, SamplerConfig(dt=0.01), net, t)
    assert not res.lf_flag and t.counters.grad == 0


def test_build_tree_depth_guard_and_arguments():
    t = gauss(1)
    s0 = PhaseState([0.0], [1.0])
    with pytest.raises(ValueError):
        build_tree(s0, -1.0, 1, -1, SamplerConfig(), AnalyticGradient(t), t)
    with pytest.raises(ValueError):
        build_tree(s0, -1.0, 0, 1, SamplerConfig(), AnalyticGradient(t), t)
    with pytest.raises(RecursionError):
        build_tree(s0, -1.0, 1, 65, SamplerConfig(), AnalyticGradient(t), t)


def test_build_tree_non_finite_gives_zero_weight():
    t = NealFunnel()
    res = build_tree(PhaseState([-700.0, 1.0], [0.0, 0.0]), 0.0, 1, 0, SamplerConfig(dt=0.5),
                     AnalyticGradient(t), t)
    assert not res.s and res.n == 0


# -- NUTS ----------------------------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n_lf", [1, 3, 20])
def test_forced_fallback_equals_traditional_nuts(backend, n_lf):
    cfg = SamplerConfig(M=300, dt=0.1, seed=11, delta_max_hnn=-math.inf, n_lf=n_lf)
    t1, t2 = gauss(2), gauss(2)
    a = nuts(AnalyticGradient(t1), t1, cfg, backend=backend)
    b = nuts(untrained_net(2), t2, cfg, backend=backend)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.tree_depth, b.tree_depth)
    assert b.fallback.all()
    assert b.grad_counts["target"] == t2.counters.grad


@pytest.mark.parametrize("backend", BACKENDS)
def test_large_negative_threshold_also_forces_fallback(backend):
    cfg = SamplerConfig(M=200, dt=0.1, seed=2, delta_max_hnn=-1e9)
    t1, t2 = gauss(2), gauss(2)
    a = nuts(AnalyticGradient(t1), t1, cfg, backend=backend)
    b = nuts(untrained_net(2), t2, cfg, backend=backend)
    np.testing.assert_array_equal(a.samples, b.samples)


@pytest.mark.parametrize("backend", BACKENDS)
def test_fallback_lasts_n_lf_samples(backend):
    # With every step forced to fallback, the network is queried only in samples
    # that start with the indicator clear: once every n_lf samples, for the start
    # gradient and one step.
    M, n_lf = 100, 7
    cfg = SamplerConfig(M=M, dt=0.1, seed=3, delta_max_hnn=-math.inf, n_lf=n_lf)
    chain = nuts(untrained_net(2), gauss(2), cfg, backend=backend)
    assert chain.network_steps == math.ceil(M / n_lf)
    assert chain.grad_counts["network"] == 2 * math.ceil(M / n_lf)


@pytest.mark.parametrize("backend", BACKENDS)
def test_counters_reconcile(backend):
    t = Rosenbrock(3)
    net = untrained_net(3, seed=1)
    cfg = SamplerConfig(M=300, dt=0.02, seed=4, delta_max_hnn=10.0, n_lf=5)
    chain = nuts(net, t, cfg, backend=backend, training_grads=123)
    target = chain.grad_counts["target"]
    assert target == t.counters.grad
    assert chain.grad_counts["training"] == 123
    assert chain.grad_counts["network"] == net.calls
    assert 0 < chain.fallback_samples < 300
    # one target gradient per fallback step, plus start-point cache misses
    assert chain.fallback_steps <= target <= chain.fallback_steps + 3 * chain.fallback_samples + 1
    assert chain.network_steps <= chain.grad_counts["network"] <= chain.network_steps + 2 * 300


@pytest.mark.parametrize("backend", BACKENDS)
def test_nuts_handles_divergence(backend):
    t = NealFunnel()
    chain = nuts(AnalyticGradient(t), t, SamplerConfig(M=50, dt=1.5, seed=0), start=[-5.0, 0.0], backend=backend)
    assert np.all(np.isfinite(chain.samples))


@compiled_only
@pytest.mark.parametrize("case", ["nuts-rosenbrock", "lhnn-nuts", "unmonitored", "hmc", "lhnn-hmc", "mass"])
def test_backends_agree(case):
    def run(backend):
        if case == "nuts-rosenbrock":
            t = Rosenbrock(3)
            return nuts(AnalyticGradient(t), t, SamplerConfig(M=150, dt=0.03, seed=1), backend=backend)
        if case == "lhnn-nuts":
            t = Rosenbrock(3)
            return nuts(untrained_net(3, 2), t, SamplerConfig(M=150, dt=0.03, seed=1, n_lf=4), backend=backend)
        if case == "unmonitored":
            t = gauss(2)
            return nuts(untrained_net(2, 2), t, SamplerConfig(M=100, dt=0.1, seed=6, monitor=False), backend=backend)
        if case == "hmc":
            t = GaussianMixture1D()
            return hmc(AnalyticGradient(t), t, SamplerConfig(M=100, dt=0.05, T=2, seed=2), backend=backend)
        if case == "lhnn-hmc":
            t = GaussianMixture1D()
            return hmc(untrained_net(1), t, SamplerConfig(M=100, dt=0.05, T=2, seed=2), backend=backend)
        t = DiagonalGaussian([0.5, 4.0])
        return nuts(AnalyticGradient(t), t, SamplerConfig(M=150, dt=0.1, seed=3, mass=[2.0, 0.5]), backend=backend)

    a, b = run("python"), run("compiled")
    assert a.backend == "python" and b.backend == "compiled"
    np.testing.assert_allclose(a.samples, b.samples, rtol=1e-12, atol=1e-12)
    assert a.grad_counts == b.grad_counts
    assert a.potential_calls == b.potential_calls
    for name in ("tree_depth", "fallback", "accepted"):
        if getattr(a, name) is not None:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


@compiled_only
@pytest.mark.parametrize("d", [1, 2, 5])
@pytest.mark.parametrize("method", ["hmc", "nuts"])
def test_standard_gaussian_smoke(method, d):
    t = gauss(d)
    cfg = SamplerConfig(M=20_000, dt=0.1, T=1.3, seed=d)
    chain = (hmc if method == "hmc" else nuts)(AnalyticGradient(t), t, cfg)
    for i in range(d):
        x = chain.samples[:, i]
        assert abs(x.mean()) < 3 / math.sqrt(ess(x))
        assert abs(x.var() - 1.0) < 0.1


def test_slice_variable_never_exceeds_initial_energy():
    # epsilon is the largest H + log u seen in a sample; log u <= -H0, so with
    # tiny steps it can exceed 0 only by the integration error
    t = gauss(2)
    chain = nuts(AnalyticGradient(t), t, SamplerConfig(M=200, dt=1e-3, max_tree_depth=4, seed=0))
    assert np.all(chain.epsilon <= 1e-4)


def test_start_point_and_dimension_checks():
    t = gauss(2)
    chain = nuts(AnalyticGradient(t), t, SamplerConfig(M=5, seed=0), start=[1.0, 2.0])
    assert chain.samples.shape == (5, 2)
    with pytest.raises(ValueError):
        nuts(AnalyticGradient(t), t, SamplerConfig(M=5), start=[1.0])
    with pytest.raises(ValueError):
        nuts(AnalyticGradient(gauss(3)), t, SamplerConfig(M=5))


def test_chain_csv_and_summary(tmp_path):
    t = gauss(2)
    chain = nuts(untrained_net(2), t, SamplerConfig(M=20, burn_in=5, dt=0.1, seed=0))
    path = tmp_path / "chain.csv"
    chain.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "sample_index,q_1,q_2,tree_depth,fallback_flag,epsilon"
    q, depth, fb, eps = read_chain_csv(path)
    np.testing.assert_array_equal(q, chain.samples)
    np.testing.assert_array_equal(depth, chain.tree_depth)
    np.testing.assert_array_equal(fb, chain.fallback)
    np.testing.assert_array_equal(eps, chain.epsilon)
    s = chain.summary()
    assert s["M"] == 20 and s["burn_in"] == 5 and s["method"] == "lhnn-nuts"
    assert set(s["grads"]) == {"training", "network", "target"}
    assert chain.kept.shape == (15, 2)


def test_same_seed_same_chain():
    t = Rosenbrock(3)
    cfg = SamplerConfig(M=50, dt=0.03, seed=9)
    a = nuts(AnalyticGradient(t), t, cfg)
    b = nuts(AnalyticGradient(t), t, cfg)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_pure_python_fallback_selected_by_environment():
    code = ("from hnn_mcmc import _backend, samplers, targets, integrate;"
            "t = targets.DiagonalGaussian([1.0]);"
            "c = samplers.nuts(integrate.AnalyticGradient(t), t, samplers.SamplerConfig(M=5));"
            "print(_backend.HAVE_COMPILED, c.backend)")
    env = dict(os.environ, HNN_MCMC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "python"]
