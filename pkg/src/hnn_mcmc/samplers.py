"""HMC, efficient NUTS with online error monitoring, and training-data generation.

Random numbers come from one ``numpy.random.Generator`` per chain and are
consumed in a fixed order:

* HMC, per iteration: ``d`` standard normals for the momentum, then one
  uniform for the Metropolis test.
* NUTS, per sample: ``d`` standard normals for the momentum, one uniform for
  the slice variable, then for every doubling one uniform for the direction,
  the uniforms of the subtree merges in recursion order, and (only when the
  new subtree is valid) one uniform for the progressive-replacement coin.

The compiled core follows the same order, so both backends produce the same
chains for a given seed.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend
from .errors import ConfigError, IntegrationError, NumericalDomainError
from .integrate import AnalyticGradient
from .network import NetworkGradient, TrainingSet
from .targets import PhaseState, as_mass

NEG_INF = -math.inf


@dataclass
class SamplerConfig:
    """Sampler settings.  ``delta_max_hnn = -inf`` forces leapfrog fallback everywhere."""

    M: int = 1000
    burn_in: int = 0
    dt: float = 0.025
    T: float | None = None
    max_tree_depth: int = 10
    delta_max_lf: float = 1000.0
    delta_max_hnn: float = 10.0
    n_lf: int = 20
    seed: int = 0
    mass: list | None = None
    monitor: bool = True

    def __post_init__(self):
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise ConfigError("must be a positive integer", "M")
        if not (0 <= self.burn_in < self.M):
            raise ConfigError("must satisfy 0 <= burn_in < M", "burn_in")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("must be finite and positive", "dt")
        if self.T is not None and not (math.isfinite(self.T) and self.T > 0):
            raise ConfigError("must be finite and positive", "T")
        if self.max_tree_depth < 1:
            raise ConfigError("must be >= 1", "max_tree_depth")
        if not math.isfinite(self.delta_max_lf):
            raise ConfigError("must be finite", "delta_max_lf")
        if not (math.isfinite(self.delta_max_hnn) or self.delta_max_hnn == NEG_INF):
            raise ConfigError("must be finite (or -inf to force fallback)", "delta_max_hnn")
        if self.delta_max_hnn > self.delta_max_lf:
            raise ConfigError("must not exceed delta_max_lf", "delta_max_hnn")
        if self.n_lf < 1:
            raise ConfigError("must be >= 1", "n_lf")

    def n_steps(self):
        """Leapfrog steps per HMC trajectory, ``round(T / dt)``."""
        if self.T is None:
            raise ConfigError("trajectory length is required for HMC", "T")
        return _steps(self.T, self.dt)

    def to_dict(self):
        out = asdict(self)
        if out["delta_max_hnn"] == NEG_INF:
            out["delta_max_hnn"] = "-inf"
        return out


def _steps(T, dt):
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ConfigError(f"T={T} is not a whole number of steps of size {dt}", "T")
    return int(n)


@dataclass
class Chain:
    """Samples of one run plus acceptance, fallback and gradient bookkeeping."""

    samples: np.ndarray
    method: str
    burn_in: int = 0
    alpha: np.ndarray | None = None
    accepted: np.ndarray | None = None
    tree_depth: np.ndarray | None = None
    fallback: np.ndarray | None = None
    epsilon: np.ndarray | None = None
    grad_counts: dict = field(default_factory=lambda: {"training": 0, "network": 0, "target": 0})
    potential_calls: int = 0
    fallback_steps: int = 0
    network_steps: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)
    backend: str = "python"
    seconds: float = 0.0

    @property
    def M(self):
        return self.samples.shape[0]

    @property
    def d(self):
        return self.samples.shape[1]

    @property
    def kept(self):
        """Samples after burn-in."""
        return self.samples[self.burn_in:]

    @property
    def accept_count(self):
        return None if self.accepted is None else int(np.sum(self.accepted))

    @property
    def acceptance(self):
        """HMC acceptance rate, or None for NUTS."""
        return None if self.accepted is None else float(np.mean(self.accepted))

    @property
    def fallback_samples(self):
        return 0 if self.fallback is None else int(np.sum(self.fallback))

    @property
    def evaluation_grads(self):
        """Target gradients spent while sampling (excludes training)."""
        return int(self.grad_counts["target"])

    def to_csv(self, path):
        d = self.d
        depth = self.tree_depth if self.tree_depth is not None else np.zeros(self.M, dtype=int)
        flag = self.fallback if self.fallback is not None else np.zeros(self.M, dtype=bool)
        eps = self.epsilon if self.epsilon is not None else np.full(self.M, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_index"] + [f"q_{i + 1}" for i in range(d)] + ["tree_depth", "fallback_flag", "epsilon"])
            for i in range(self.M):
                w.writerow([i] + [repr(float(v)) for v in self.samples[i]]
                           + [int(depth[i]), int(bool(flag[i])), repr(float(eps[i]))])

    def summary(self):
        return {
            "method": self.method,
            "M": self.M,
            "d": self.d,
            "burn_in": self.burn_in,
            "seed": self.seed,
            "backend": self.backend,
            "acceptance": self.acceptance,
            "accept_count": self.accept_count,
            "fallback_samples": self.fallback_samples,
            "fallback_steps": int(self.fallback_steps),
            "network_steps": int(self.network_steps),
            "grads": {k: int(v) for k, v in self.grad_counts.items()},
            "potential_calls": int(self.potential_calls),
            "config": self.config,
        }


def read_chain_csv(path):
    """Load a chain CSV back into ``(samples, tree_depth, fallback, epsilon)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "sample_index":
        raise ValueError(f"{path}: not a chain CSV")
    d = sum(1 for h in header if h.startswith("q_"))
    arr = np.array([[float(x) for x in r] for r in body]) if body else np.empty((0, len(header)))
    return arr[:, 1:1 + d], arr[:, 1 + d].astype(int), arr[:, 2 + d].astype(bool), arr[:, 3 + d]


# -- shared helpers ------------------------------------------------------------

class _Point:
    """Phase point with lazily filled gradient caches (target and network)."""

    __slots__ = ("q", "p", "gt", "gn")

    def __init__(self, q, p=None, gt=None, gn=None):
        self.q = q
        self.p = p
        self.gt = gt
        self.gn = gn

    def copy(self):
        return _Point(self.q, self.p, self.gt, self.gn)


def _log_uniform(rng):
    u = rng.random()
    return math.log(u) if u > 0 else NEG_INF


def _start(start, d):
    q = np.zeros(d) if start is None else np.array(start, dtype=float)
    if q.shape != (d,):
        raise ValueError(f"start has shape {q.shape}, expected ({d},)")
    return q


def _check_provider(grad, target):
    if grad.d != target.d:
        raise ValueError(f"provider dimension {grad.d} does not match target dimension {target.d}")


def _use_compiled(backend, grad, target):
    if backend not in ("auto", "python", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    supported = (
        _backend.HAVE_COMPILED
        and target.kernel() is not None
        and (type(grad) is NetworkGradient or (type(grad) is AnalyticGradient and grad.target is target))
    )
    if backend == "compiled" and not supported:
        raise ValueError("compiled backend unavailable for this target/provider")
    return supported and backend != "python"


def _core_handles(grad, target):
    core = _backend.core
    kind, params, X, y = target.kernel()
    th = core.make_target(kind, target.d, params, X, y)
    nh = None
    if grad.kind == "network":
        nh = core.make_network(grad.params.weights, grad.params.biases)
    return th, nh


def _sync_counts(counts, grad, target):
    target.counters.add(potential=counts["potential"], grad=counts["target_grad"])
    if grad.kind == "network":
        grad._count(counts["network_grad"])
    else:
        grad._count(counts["target_grad"])


class _Dynamics:
    """Leapfrog steps and Hamiltonians with per-point gradient caching."""

    def __init__(self, target, grad, mass):
        self.target = target
        self.grad = grad
        self.minv = 1.0 / mass
        self.use_net = grad.kind == "network"
        # Leapfrog with target gradients goes through the analytic provider if
        # that is what we were given, so its counter stays in step.
        self._tgrad = grad if grad.kind == "analytic" else target.grad
        self.network_steps = 0
        self.fallback_steps = 0

    def gt(self, pt):
        if pt.gt is None:
            pt.gt = self._tgrad(pt.q, check=False)
        return pt.gt

    def gn(self, pt):
        if pt.gn is None:
            pt.gn = self.grad(pt.q, check=False)
        return pt.gn

    def step(self, pt, h, net):
        g0 = self.gn(pt) if net else self.gt(pt)
        q1 = pt.q + h * pt.p * self.minv - 0.5 * h * h * self.minv * g0
        if net:
            g1 = self.grad(q1, check=False)
            out = _Point(q1, None, None, g1)
        else:
            g1 = self._tgrad(q1, check=False)
            out = _Point(q1, None, g1, None)
        out.p = pt.p - 0.5 * h * (g0 + g1)
        return out

    def H(self, pt):
        with np.errstate(all="ignore"):
            return self.target.potential(pt.q, check=False) + 0.5 * float(np.sum(pt.p * pt.p * self.minv))


# -- HMC -----------------------------------------------------------------------

def hmc(grad, target, cfg, start=None, backend="auto", training_grads=0):
    """Hamiltonian Monte Carlo driven by ``grad``; Metropolis uses the true ``H``."""
    _check_provider(grad, target)
    d = target.d
    mass = as_mass(cfg.mass, d)
    n_steps = cfg.n_steps()
    q0 = _start(start, d)
    t0 = time.perf_counter()
    before = target.counters.snapshot()
    net_before = grad.calls if grad.kind == "network" else 0
    rng = np.random.default_rng(cfg.seed)
    samples = np.empty((cfg.M, d))
    alpha = np.empty(cfg.M)
    accepted = np.zeros(cfg.M, dtype=bool)
    eps = np.empty(cfg.M)
    compiled = _use_compiled(backend, grad, target)
    if compiled:
        th, nh = _core_handles(grad, target)
        acc = np.zeros(cfg.M, dtype=np.uint8)
        counts = _backend.core.hmc(th, nh, q0, 1.0 / mass, np.sqrt(mass), float(cfg.dt), n_steps, cfg.M,
                                   grad.kind == "network", rng, samples, alpha, acc, eps)
        accepted[:] = acc.astype(bool)
        _sync_counts(counts, grad, target)
    else:
        dyn = _Dynamics(target, grad, mass)
        sqrt_m = np.sqrt(mass)
        net = dyn.use_net
        cur = _Point(q0)
        with np.errstate(all="ignore"):
            for i in range(cfg.M):
                if net:
                    dyn.gn(cur)
                else:
                    dyn.gt(cur)
                pt = _Point(cur.q, rng.standard_normal(d) * sqrt_m, cur.gt, cur.gn)
                H0 = dyn.H(pt)
                for _ in range(n_steps):
                    pt = dyn.step(pt, cfg.dt, net)
                H1 = dyn.H(pt)
                if math.isfinite(H0) and math.isfinite(H1):
                    a = math.exp(H0 - H1) if H0 - H1 < 0.0 else 1.0
                else:
                    a = 0.0
                if rng.random() < a:
                    cur = pt
                    accepted[i] = True
                alpha[i] = a
                eps[i] = H1 - H0
                samples[i] = cur.q
    after = target.counters.snapshot()
    return Chain(
        samples=samples,
        method="lhnn-hmc" if grad.kind == "network" else "hmc",
        burn_in=cfg.burn_in,
        alpha=alpha,
        accepted=accepted,
        epsilon=eps,
        grad_counts={
            "training": int(training_grads),
            "network": (grad.calls - net_before) if grad.kind == "network" else 0,
            "target": after["grad"] - before["grad"],
        },
        potential_calls=after["potential"] - before["potential"],
        seed=cfg.seed,
        config=cfg.to_dict(),
        backend="compiled" if compiled else "python",
        seconds=time.perf_counter() - t0,
    )


# -- NUTS ----------------------------------------------------------------------

@dataclass
class TreeState:
    """Result of one ``build_tree`` call."""

    minus: PhaseState
    plus: PhaseState
    proposal: PhaseState
    n: float
    s: bool
    lf_flag: bool
    log_u: float


class _Nuts:
    def __init__(self, dyn, cfg, rng, monitored):
        self.dyn = dyn
        self.dt = float(cfg.dt)
        self.rng = rng
        self.monitored = monitored
        self.dmax_lf = cfg.delta_max_lf
        self.dmax_hnn = cfg.delta_max_hnn
        self.forced = cfg.delta_max_hnn == NEG_INF
        self.flag = False
        self.used_lf = False
        self.eps_max = NEG_INF

    def _track(self, eps):
        if eps > self.eps_max:
            self.eps_max = eps

    def base(self, start, v, log_u):
        dyn = self.dyn
        h = v * self.dt
        s = False
        H = math.nan
        if self.monitored and not self.flag:
            out = dyn.step(start, h, True)
            dyn.network_steps += 1
            H = dyn.H(out)
            eps = H + log_u
            self._track(eps)
            if self.forced or not (eps <= self.dmax_hnn):
                self.flag = True
            else:
                s = True
        if not self.monitored or self.flag:
            out = dyn.step(start, h, dyn.use_net and not self.monitored)
            if self.monitored:
                dyn.fallback_steps += 1
                self.used_lf = True
            elif dyn.use_net:
                dyn.network_steps += 1
            H = dyn.H(out)
            eps = H + log_u
            self._track(eps)
            s = eps <= self.dmax_lf
        finite = math.isfinite(H)
        n = 1.0 if finite and log_u <= -H else 0.0
        return out, n, bool(s and finite)

    def build(self, start, log_u, v, j):
        if j == 0:
            leaf, n, s = self.base(start, v, log_u)
            return leaf, leaf.copy(), leaf.copy(), n, s
        minus, plus, prop, n1, s1 = self.build(start, log_u, v, j - 1)
        if s1:
            if v == -1:
                minus, _, prop2, n2, s2 = self.build(minus, log_u, v, j - 1)
            else:
                _, plus, prop2, n2, s2 = self.build(plus, log_u, v, j - 1)
            tot = n1 + n2
            if self.rng.random() < (n2 / tot if tot > 0 else 0.0):
                prop = prop2
            s1 = s2 and self.no_uturn(minus, plus)
            n1 = tot
        return minus, plus, prop, n1, s1

    def no_uturn(self, minus, plus):
        dq = plus.q - minus.q
        minv = self.dyn.minv
        return bool(np.dot(dq, minus.p * minv) >= 0.0 and np.dot(dq, plus.p * minv) >= 0.0)


def no_uturn(minus, plus, mass=None):
    """True while the trajectory ``minus -> plus`` has not turned back on itself."""
    minv = 1.0 / as_mass(mass, minus.d)
    dq = plus.q - minus.q
    return bool(np.dot(dq, minus.p * minv) >= 0.0 and np.dot(dq, plus.p * minv) >= 0.0)


def build_tree(state, log_u, v, j, cfg, grad, target, lf_flag=False, rng=None):
    """Build a subtree of depth ``j`` from ``state`` in direction ``v``.

    A network provider enables online error monitoring; ``lf_flag`` is the
    incoming fallback indicator and the updated value is returned in the
    result.
    """
    if j < 0:
        raise ValueError("depth must be >= 0")
    if j > 64:
        raise RecursionError("tree depth exceeds 64")
    if v not in (-1, 1):
        raise ValueError("direction must be -1 or +1")
    _check_provider(grad, target)
    mass = as_mass(cfg.mass, target.d)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dyn = _Dynamics(target, grad, mass)
    tree = _Nuts(dyn, cfg, rng, dyn.use_net and cfg.monitor)
    tree.flag = bool(lf_flag)
    with np.errstate(all="ignore"):
        m, p, prop, n, s = tree.build(_Point(state.q, state.p), float(log_u), v, j)

    def ps(pt):
        if np.all(np.isfinite(pt.q)) and np.all(np.isfinite(pt.p)):
            return PhaseState(pt.q, pt.p)
        return _raw_state(pt)

    return TreeState(ps(m), ps(p), ps(prop), n, s, tree.flag, float(log_u))


def _raw_state(pt):
    # PhaseState rejects non-finite values; keep diverged points inspectable.
    st = object.__new__(PhaseState)
    st.q, st.p = pt.q, pt.p
    return st


def nuts(grad, target, cfg, start=None, backend="auto", training_grads=0):
    """Efficient NUTS; with a network provider, adds online error monitoring.

    Each base-case step uses the network while the fallback indicator is
    clear.  If ``H + log u`` exceeds ``delta_max_hnn`` the indicator is set,
    the step is redone with target gradients, and target gradients stay in
    use for the next ``n_lf`` samples.
    """
    _check_provider(grad, target)
    d = target.d
    mass = as_mass(cfg.mass, d)
    q0 = _start(start, d)
    t0 = time.perf_counter()
    before = target.counters.snapshot()
    net_before = grad.calls if grad.kind == "network" else 0
    rng = np.random.default_rng(cfg.seed)
    samples = np.empty((cfg.M, d))
    depth = np.zeros(cfg.M, dtype=np.int32)
    fallback = np.zeros(cfg.M, dtype=bool)
    eps = np.empty(cfg.M)
    use_net = grad.kind == "network"
    monitored = use_net and cfg.monitor
    compiled = _use_compiled(backend, grad, target)
    if compiled:
        th, nh = _core_handles(grad, target)
        fb = np.zeros(cfg.M, dtype=np.uint8)
        counts = _backend.core.nuts(
            th, nh, q0, 1.0 / mass, np.sqrt(mass), float(cfg.dt), cfg.M, int(cfg.max_tree_depth),
            float(cfg.delta_max_lf), float(cfg.delta_max_hnn), int(cfg.n_lf), use_net, monitored, rng,
            samples, depth, fb, eps)
        fallback[:] = fb.astype(bool)
        _sync_counts(counts, grad, target)
        fallback_steps, network_steps = counts["fallback_steps"], counts["network_steps"]
    else:
        dyn = _Dynamics(target, grad, mass)
        tree = _Nuts(dyn, cfg, rng, monitored)
        sqrt_m = np.sqrt(mass)
        cur = _Point(q0)
        n_lf = 0
        with np.errstate(all="ignore"):
            for i in range(cfg.M):
                if tree.flag:
                    n_lf += 1
                if n_lf == cfg.n_lf:
                    tree.flag = False
                    n_lf = 0
                if use_net and not (monitored and tree.flag):
                    dyn.gn(cur)
                else:
                    dyn.gt(cur)
                minus = _Point(cur.q, rng.standard_normal(d) * sqrt_m, cur.gt, cur.gn)
                H0 = dyn.H(minus)
                log_u = -H0 + _log_uniform(rng)
                plus = minus.copy()
                prop = cur
                n = 1.0
                s = True
                j = 0
                tree.used_lf = False
                tree.eps_max = NEG_INF
                while s and j < cfg.max_tree_depth:
                    v = -1 if rng.random() < 0.5 else 1
                    if v == -1:
                        minus, _, cand, n1, s1 = tree.build(minus, log_u, v, j)
                    else:
                        _, plus, cand, n1, s1 = tree.build(plus, log_u, v, j)
                    if s1 and rng.random() < min(1.0, n1 / n):
                        prop = cand
                    n += n1
                    s = s1 and tree.no_uturn(minus, plus)
                    j += 1
                cur = prop
                samples[i] = cur.q
                depth[i] = j
                fallback[i] = tree.used_lf
                eps[i] = tree.eps_max
        fallback_steps, network_steps = dyn.fallback_steps, dyn.network_steps
    after = target.counters.snapshot()
    return Chain(
        samples=samples,
        method="lhnn-nuts" if use_net else "nuts",
        burn_in=cfg.burn_in,
        tree_depth=depth,
        fallback=fallback,
        epsilon=eps,
        grad_counts={
            "training": int(training_grads),
            "network": (grad.calls - net_before) if use_net else 0,
            "target": after["grad"] - before["grad"],
        },
        potential_calls=after["potential"] - before["potential"],
        fallback_steps=int(fallback_steps),
        network_steps=int(network_steps),
        seed=cfg.seed,
        config=cfg.to_dict(),
        backend="compiled" if compiled else "python",
        seconds=time.perf_counter() - t0,
    )


# -- training data -----------------------------------------------------------

def generate_training_data(target, M_t, T, dt, seed=0, mass=None, start=None, metropolis=False):
    """Sample phase-space points along ``M_t`` HMC trajectories of length ``T``.

    Each trajectory starts from the end of the previous one with fresh
    momentum and contributes its ``N = T/dt`` states before the final step, so
    the set has ``M_t * N`` rows and costs exactly ``M_t * N`` target
    gradients (the gradient at the very last position is never needed).
    Targets are the exact time derivatives ``(dq/dt, dp/dt) = (p/m, -dU/dq)``.

    With ``metropolis=True`` each trajectory end is accepted or rejected
    before the next one starts; this costs one extra gradient in total.
    """
    if M_t < 1:
        raise ValueError("M_t must be >= 1")
    d = target.d
    N = _steps(T, dt)
    m = as_mass(mass, d)
    minv = 1.0 / m
    sqrt_m = np.sqrt(m)
    rng = np.random.default_rng(seed)
    q = _start(start, d)
    g = None
    before = target.counters.grad
    Z = np.empty((M_t * N, 2 * d))
    D = np.empty((M_t * N, 2 * d))
    row = 0

    def grad_at(x, k, j):
        try:
            return target.grad(x)
        except NumericalDomainError as exc:
            raise IntegrationError(f"trajectory {k}, step {j}: {exc}", position=x, step=j) from None

    for k in range(M_t):
        p = rng.standard_normal(d) * sqrt_m
        q_init, g_init = q, g
        if metropolis:
            H0 = target.potential(q) + 0.5 * float(np.sum(p * p * minv))
        for j in range(N):
            if g is None:
                g = grad_at(q, k, j)
            Z[row, :d] = q
            Z[row, d:] = p
            D[row, :d] = p * minv
            D[row, d:] = -g
            row += 1
            q1 = q + dt * p * minv - 0.5 * dt * dt * minv * g
            if k == M_t - 1 and j == N - 1 and not metropolis:
                q, g = q1, None
                break
            g1 = grad_at(q1, k, j + 1)
            p = p - 0.5 * dt * (g + g1)
            q, g = q1, g1
        if metropolis:
            H1 = target.potential(q) + 0.5 * float(np.sum(p * p * minv))
            if not rng.random() < math.exp(min(0.0, H0 - H1)):
                q, g = q_init, g_init
    return TrainingSet(Z, D, grad_evaluations=target.counters.grad - before)


def write_summary(path, chain, extra=None):
    out = chain.summary()
    if extra:
        out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
