"""Synchronized leapfrog integration of Hamiltonian dynamics.

The integrator only needs the position gradient of the Hamiltonian; the
momentum derivative is always ``p / m``.  Where that position gradient comes
from (the target density or a trained network) is abstracted by
:class:`GradientProvider`.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .targets import PhaseState, as_mass


class GradientProvider:
    """Source of ``dH/dq`` for the integrator, with its own call counter."""

    kind = "abstract"

    def __init__(self, d):
        self.d = int(d)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self):
        return self._calls

    def _count(self, n=1):
        with self._lock:
            self._calls += int(n)

    def __call__(self, q, check=True):
        self._count()
        return self._evaluate(np.asarray(q, dtype=float), check)

    def _evaluate(self, q, check):
        raise NotImplementedError


class AnalyticGradient(GradientProvider):
    """Gradient of the target potential, counted on both the provider and the target."""

    kind = "analytic"

    def __init__(self, target):
        super().__init__(target.d)
        self.target = target

    def _evaluate(self, q, check):
        return self.target.grad(q, check=check)


@dataclass
class Trajectory:
    states: list
    dt: float
    grad_calls: int = 0

    @property
    def n_steps(self):
        return len(self.states) - 1

    def positions(self):
        return np.array([s.q for s in self.states])

    def momenta(self):
        return np.array([s.p for s in self.states])

    def times(self):
        return self.dt * np.arange(len(self.states))

    def to_csv(self, path):
        """Write ``t, q_1..q_d, p_1..p_d`` rows."""
        d = self.states[0].d
        header = ["t"] + [f"q_{i + 1}" for i in range(d)] + [f"p_{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, s in zip(self.times(), self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s.q] + [repr(float(v)) for v in s.p])


def _leapfrog(q, p, g0, h, minv, grad, check=False):
    """One synchronized leapfrog step with signed step ``h``.

    Returns ``(q1, p1, g1)``.  Negative ``h`` integrates backwards in time.
    """
    q1 = q + h * p * minv - 0.5 * h * h * minv * g0
    g1 = grad(q1, check=check)
    p1 = p - 0.5 * h * (g0 + g1)
    return q1, p1, g1


def leapfrog_step(state, dt, mass, grad, cached_grad=None):
    """Advance ``state`` by one step of size ``dt``.

    Returns ``(new_state, grad_at_new_position)``.  When ``cached_grad`` (the
    gradient at ``state.q``) is given, exactly one new gradient is evaluated.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    minv = 1.0 / as_mass(mass, state.d)
    g0 = grad(state.q, check=False) if cached_grad is None else np.asarray(cached_grad, dtype=float)
    if not np.all(np.isfinite(g0)):
        raise IntegrationError("non-finite gradient", position=state.q.copy())
    q1, p1, g1 = _leapfrog(state.q, state.p, g0, dt, minv, grad)
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(q1))):
        raise IntegrationError("non-finite gradient", position=q1)
    return PhaseState(q1, p1), g1


def integrate(start, steps, dt, mass, grad):
    """Integrate ``steps`` leapfrog steps; consumes ``steps + 1`` gradient calls."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    before = grad.calls
    states = [PhaseState(start.q, start.p)]
    g = None
    for j in range(int(steps)):
        try:
            s, g = leapfrog_step(states[-1], dt, mass, grad, cached_grad=g)
        except IntegrationError as exc:
            raise IntegrationError(f"step {j}: {exc}", position=exc.position, step=j) from None
        states.append(s)
    return Trajectory(states, float(dt), grad.calls - before)
