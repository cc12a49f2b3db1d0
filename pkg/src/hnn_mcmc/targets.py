"""Benchmark target densities expressed as potential energies.

Every density is defined through its potential ``U(q) = -log f(q) + const``
together with an analytic gradient.  The additive constant convention of each
density is stated in its class docstring; only gradients and differences of
``U`` ever reach the samplers.
"""
from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetError, NumericalDomainError

# Kernel identifiers understood by the compiled core.
KIND_GAUSSIAN = 0
KIND_ROSENBROCK = 1
KIND_MIXTURE = 2
KIND_ROUGH_WELL = 3
KIND_FUNNEL = 4
KIND_LOGISTIC = 5


@dataclass
class PhaseState:
    """Position/momentum pair of a point in phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float, ndmin=1)
        self.p = np.array(self.p, dtype=float, ndmin=1)
        if self.q.ndim != 1 or self.q.shape != self.p.shape or self.q.size < 1:
            raise ValueError(
                f"q and p must be 1-D of equal length >= 1, got {self.q.shape} and {self.p.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase state contains non-finite entries")

    @property
    def d(self):
        return self.q.size

    def z(self):
        """Concatenated ``(q, p)`` vector."""
        return np.concatenate([self.q, self.p])


def as_mass(mass, d):
    """Validate a diagonal mass vector, defaulting to all ones."""
    if mass is None:
        return np.ones(d)
    m = np.array(mass, dtype=float, ndmin=1)
    if m.size == 1 and d > 1:
        m = np.full(d, float(m[0]))
    if m.shape != (d,):
        raise ValueError(f"mass vector has length {m.size}, expected {d}")
    if not np.all(m > 0) or not np.all(np.isfinite(m)):
        raise ValueError("mass entries must be finite and strictly positive")
    return m


class Counters:
    """Evaluation counters; increments are atomic with respect to readers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._potential = 0
        self._grad = 0

    @property
    def potential(self):
        return self._potential

    @property
    def grad(self):
        return self._grad

    def add(self, potential=0, grad=0):
        if potential < 0 or grad < 0:
            raise ValueError("counters are monotone")
        with self._lock:
            self._potential += int(potential)
            self._grad += int(grad)

    def snapshot(self):
        with self._lock:
            return {"potential": self._potential, "grad": self._grad}


class TargetDensity:
    """Base class: a potential energy with analytic gradient and counters.

    Subclasses implement ``_potential`` and ``_gradient``; the public
    ``potential``/``grad`` wrappers validate input, count calls and reject
    non-finite results.
    """

    name = "target"

    def __init__(self, d):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.d = int(d)
        self.counters = Counters()

    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.d,):
            raise ValueError(f"{self.name}: expected position of length {self.d}, got shape {q.shape}")
        return q

    def potential(self, q, check=True):
        q = self._check(q)
        self.counters.add(potential=1)
        with np.errstate(over="ignore", invalid="ignore"):
            u = float(self._potential(q))
        if check and not math.isfinite(u):
            raise NumericalDomainError(f"{self.name}: non-finite potential at q={q!r}")
        return u

    def grad(self, q, check=True):
        q = self._check(q)
        self.counters.add(grad=1)
        with np.errstate(over="ignore", invalid="ignore"):
            g = np.asarray(self._gradient(q), dtype=float)
        if check and not np.all(np.isfinite(g)):
            raise NumericalDomainError(f"{self.name}: non-finite gradient at q={q!r}")
        return g

    def _potential(self, q):
        raise NotImplementedError

    def _gradient(self, q):
        raise NotImplementedError

    def kernel(self):
        """Description for the compiled core, or None if unsupported.

        Returns ``(kind, params, X, y)`` with float64 contiguous arrays.
        """
        return None

    def describe(self):
        return {"name": self.name, "d": self.d}

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d})"


_EMPTY2 = np.zeros((0, 0))
_EMPTY1 = np.zeros(0)


class DiagonalGaussian(TargetDensity):
    """Zero-mean Gaussian with diagonal covariance.

    ``U(q) = sum_i q_i**2 / (2 * var_i)``; normalization dropped.
    """

    name = "gaussian"

    def __init__(self, variances, name=None):
        var = np.array(variances, dtype=float, ndmin=1)
        if var.ndim != 1 or not np.all(var > 0):
            raise ValueError("variances must be a 1-D vector of positive values")
        super().__init__(var.size)
        self.variances = var
        self._prec = 1.0 / var
        if name is not None:
            self.name = name

    def _potential(self, q):
        return 0.5 * np.dot(q * self._prec, q)

    def _gradient(self, q):
        return q * self._prec

    def kernel(self):
        return KIND_GAUSSIAN, np.ascontiguousarray(self._prec), _EMPTY2, _EMPTY1

    def describe(self):
        return {"name": self.name, "d": self.d, "variances": self.variances.tolist()}


class Rosenbrock(TargetDensity):
    """Degenerate Rosenbrock density in ``n`` dimensions.

    ``U(q) = sum_{i<n} [100 (q_{i+1} - q_i^2)^2 + (1 - q_i)^2] / 20``, so the
    all-ones vector has potential exactly 0.
    """

    name = "rosenbrock"

    def __init__(self, n=3):
        if n < 2:
            raise ValueError("rosenbrock needs n >= 2")
        super().__init__(n)

    def _potential(self, q):
        a = q[1:] - q[:-1] ** 2
        b = 1.0 - q[:-1]
        return np.sum(100.0 * a * a + b * b) / 20.0

    def _gradient(self, q):
        a = q[1:] - q[:-1] ** 2
        g = np.zeros_like(q)
        g[:-1] = (-400.0 * a * q[:-1] - 2.0 * (1.0 - q[:-1])) / 20.0
        g[1:] += 200.0 * a / 20.0
        return g

    def kernel(self):
        return KIND_ROSENBROCK, _EMPTY1, _EMPTY2, _EMPTY1


class GaussianMixture1D(TargetDensity):
    """Equal-weight two-component mixture with modes at ``+/- center``.

    ``U(q) = -log[0.5 N(q | c, s^2) + 0.5 N(q | -c, s^2)]`` with the normal
    densities fully normalized (no constant dropped).
    """

    name = "gaussian_mixture_1d"

    def __init__(self, center=1.0, sd=0.35):
        super().__init__(1)
        if sd <= 0:
            raise ValueError("sd must be positive")
        self.center = float(center)
        self.sd = float(sd)
        self._lognorm = math.log(0.5) - math.log(self.sd * math.sqrt(2.0 * math.pi))

    def _terms(self, x):
        s2 = self.sd * self.sd
        a = -((x - self.center) ** 2) / (2.0 * s2)
        b = -((x + self.center) ** 2) / (2.0 * s2)
        return a, b

    def _potential(self, q):
        a, b = self._terms(q[0])
        return -(np.logaddexp(a, b) + self._lognorm)

    def _gradient(self, q):
        x = q[0]
        a, b = self._terms(x)
        lse = np.logaddexp(a, b)
        wa = np.exp(a - lse)
        wb = np.exp(b - lse)
        s2 = self.sd * self.sd
        return np.array([(wa * (x - self.center) + wb * (x + self.center)) / s2])

    def cdf(self, x):
        """Analytic mixture CDF."""
        from math import erf, sqrt

        x = np.asarray(x, dtype=float)
        z1 = (x - self.center) / (self.sd * sqrt(2.0))
        z2 = (x + self.center) / (self.sd * sqrt(2.0))
        verf = np.vectorize(erf, otypes=[float])
        return 0.25 * (2.0 + verf(z1) + verf(z2))

    def kernel(self):
        return KIND_MIXTURE, np.array([self.center, self.sd, self._lognorm]), _EMPTY2, _EMPTY1


class RoughWell(TargetDensity):
    """Rough well: ``U(q) = q.q / 2 + eta * sum_i cos(q_i / eta)``.

    The gradient ``q_i - sin(q_i / eta)`` carries a high-frequency
    oscillation of unit amplitude.
    """

    name = "rough_well"

    def __init__(self, n=100, eta=0.01):
        if eta <= 0:
            raise ValueError("eta must be positive")
        super().__init__(n)
        self.eta = float(eta)

    def _potential(self, q):
        return 0.5 * np.dot(q, q) + self.eta * np.sum(np.cos(q / self.eta))

    def _gradient(self, q):
        return q - np.sin(q / self.eta)

    def kernel(self):
        return KIND_ROUGH_WELL, np.array([self.eta]), _EMPTY2, _EMPTY1

    def describe(self):
        return {"name": self.name, "d": self.d, "eta": self.eta}


class NealFunnel(TargetDensity):
    """Two-dimensional Neal's funnel, ``q1 ~ N(0, 3^2)``, ``q2 | q1 ~ N(0, e^q1)``.

    ``U(q) = q1^2/18 + q2^2 / (2 e^q1) + q1/2``; the ``q1/2`` term is the
    conditional normalizer and is kept, the global constant is dropped.
    """

    name = "neal_funnel"

    def __init__(self):
        super().__init__(2)

    def _potential(self, q):
        q1, q2 = q
        return q1 * q1 / 18.0 + 0.5 * q2 * q2 * np.exp(-q1) + 0.5 * q1

    def _gradient(self, q):
        q1, q2 = q
        e = np.exp(-q1)
        return np.array([q1 / 9.0 - 0.5 * q2 * q2 * e + 0.5, q2 * e])

    def kernel(self):
        return KIND_FUNNEL, _EMPTY1, _EMPTY2, _EMPTY1


@dataclass
class LogisticDataset:
    """Normalized predictors and +/-1 labels."""

    predictors: np.ndarray
    labels: np.ndarray
    column_means: np.ndarray = field(default=None, repr=False)
    column_stds: np.ndarray = field(default=None, repr=False)

    @property
    def K(self):
        return self.labels.size

    @property
    def d(self):
        return self.predictors.shape[1]


class LogisticRegression(TargetDensity):
    """Bayesian logistic regression with a standard normal prior.

    ``U(q) = sum_i log(1 + exp(-y_i q.z_i)) + |q|^2 / 2``.
    """

    name = "logistic"

    def __init__(self, dataset, intercept=False):
        X = np.asarray(dataset.predictors, dtype=float)
        if intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        super().__init__(X.shape[1])
        self.X = np.ascontiguousarray(X)
        self.y = np.ascontiguousarray(dataset.labels, dtype=float)
        self.intercept = bool(intercept)

    def _potential(self, q):
        margin = self.y * (self.X @ q)
        return np.sum(np.logaddexp(0.0, -margin)) + 0.5 * np.dot(q, q)

    def _gradient(self, q):
        margin = self.y * (self.X @ q)
        # d/dm log(1 + e^{-m}) = -1 / (1 + e^{m})
        w = -self.y * np.exp(-np.logaddexp(0.0, margin))
        return self.X.T @ w + q

    def kernel(self):
        return KIND_LOGISTIC, _EMPTY1, self.X, self.y

    def describe(self):
        return {"name": self.name, "d": self.d, "K": int(self.y.size), "intercept": self.intercept}


def potential(target, q):
    return target.potential(q)


def grad_potential(target, q):
    return target.grad(q)


def kinetic(p, mass=None):
    """Kinetic energy ``sum_i p_i^2 / (2 m_i)``."""
    p = np.asarray(p, dtype=float)
    m = as_mass(mass, p.size)
    if p.shape != m.shape:
        raise ValueError("momentum and mass lengths differ")
    return float(np.sum(p * p / (2.0 * m)))


def hamiltonian(target, state, mass=None):
    if state.d != target.d:
        raise ValueError(f"state dimension {state.d} does not match target dimension {target.d}")
    return target.potential(state.q) + kinetic(state.p, mass)


# -- datasets -----------------------------------------------------------------

def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _map_labels(raw):
    values = sorted(set(raw.tolist()))
    if len(values) != 2:
        raise DatasetError(f"labels must take exactly two distinct values, found {values}")
    if values == [-1.0, 1.0]:
        return raw.copy()
    if values == [0.0, 1.0]:
        return np.where(raw == 1.0, 1.0, -1.0)
    # German credit style coding: first value is the positive class
    return np.where(raw == values[0], 1.0, -1.0)


def normalize_dataset(X, raw_labels):
    """Standardize predictor columns (population std) and map labels to +/-1."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DatasetError(f"zero variance column {j}: cannot normalize")
    Z = (X - mean) / std
    return LogisticDataset(Z, _map_labels(np.asarray(raw_labels, dtype=float)), mean, std)


def load_logistic_dataset(path):
    """Read numeric predictors with a final label column.

    Fields are comma-separated, or whitespace-separated when the file has no
    commas (the layout of the UCI ``german.data-numeric`` file).  A first row
    containing any non-numeric cell is treated as a header.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    text = path.read_text()
    if "," in text:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    else:
        rows = [line.split() for line in text.splitlines()]
    rows = [row for row in rows if row and any(c.strip() for c in row)]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    start = 0
    if not all(_is_number(c) for c in rows[0]):
        start = 1
    width = len(rows[start]) if start < len(rows) else 0
    if width < 2:
        raise DatasetError(f"{path}: need at least one predictor and a label column")
    data = []
    for idx in range(start, len(rows)):
        row = rows[idx]
        if len(row) != width:
            raise DatasetError(f"{path}: row {idx} has {len(row)} fields, expected {width}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise DatasetError(f"{path}: row {idx} contains a non-numeric cell") from None
    if len(data) < 2:
        raise DatasetError(f"{path}: need at least two records")
    arr = np.array(data)
    return normalize_dataset(arr[:, :-1], arr[:, -1])


def synthetic_logistic_dataset(K=200, d=8, seed=0, noise=0.1):
    """Seeded separable-with-noise dataset for hermetic tests."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((K, d))
    w = rng.standard_normal(d)
    y = np.where(X @ w > 0, 1.0, -1.0)
    flip = rng.random(K) < noise
    y[flip] *= -1.0
    return normalize_dataset(X, y)


# -- factory ------------------------------------------------------------------

ILL_CONDITIONED_DIAG = (0.01, 0.1, 1.0, 10.0, 100.0)


def make_target(spec):
    """Build a target from a name or a ``{"name": ..., **params}`` mapping."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", None)
    try:
        if name == "gaussian_mixture_1d":
            return GaussianMixture1D(**spec)
        if name == "rosenbrock":
            return Rosenbrock(int(spec.pop("n", 3)), **spec)
        if name == "ill_conditioned_gaussian":
            diag = spec.pop("diag", ILL_CONDITIONED_DIAG)
            return DiagonalGaussian(diag, name="ill_conditioned_gaussian", **spec)
        if name == "standard_gaussian":
            n = int(spec.pop("n", 1))
            if n < 1:
                raise ValueError("n must be >= 1")
            return DiagonalGaussian(np.ones(n), name="standard_gaussian", **spec)
        if name == "rough_well":
            return RoughWell(int(spec.pop("n", 100)), float(spec.pop("eta", 0.01)), **spec)
        if name == "neal_funnel":
            return NealFunnel(**spec)
        if name == "logistic":
            intercept = bool(spec.pop("intercept", False))
            dataset = spec.pop("dataset", None)
            synthetic = spec.pop("synthetic", None)
            if spec:
                raise TypeError(f"unexpected parameters {sorted(spec)}")
            if isinstance(dataset, LogisticDataset):
                ds = dataset
            elif dataset is not None:
                ds = load_logistic_dataset(dataset)
            elif synthetic is not None:
                ds = synthetic_logistic_dataset(**(synthetic if isinstance(synthetic, dict) else {}))
            else:
                raise ValueError("logistic target needs 'dataset' (path) or 'synthetic'")
            return LogisticRegression(ds, intercept=intercept)
    except TypeError as exc:
        raise ValueError(f"invalid parameters for target {name!r}: {exc}") from None
    raise ValueError(f"unknown target {name!r}")
