"""Effective sample size, empirical CDFs and the ESS-per-gradient report."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DiagnosticError


def _series(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DiagnosticError("expected a one-dimensional series")
    if x.size < 2:
        raise DiagnosticError("insufficient samples")
    if not np.all(np.isfinite(x)):
        raise DiagnosticError("series contains non-finite values")
    return x


def autocorrelation(x):
    """Biased autocorrelation estimate ``rho_0..rho_{M-1}`` via a zero-padded FFT."""
    x = _series(x)
    M = x.size
    y = x - x.mean()
    if not np.any(y):
        raise DiagnosticError("constant chain")
    n = 1 << int(2 * M - 1).bit_length()
    f = np.fft.rfft(y, n)
    acov = np.fft.irfft(f * np.conj(f), n)[:M]
    if acov[0] <= 0:
        raise DiagnosticError("constant chain")
    return acov / acov[0]


def ess_with_lag(x):
    """ESS and the truncation lag.

    The sum of autocorrelations stops at the first lag ``t`` with
    ``rho_t + rho_{t+1} <= 0``; lags ``1..t-1`` are included.  The result is
    clamped to ``(0, M]``.
    """
    rho = autocorrelation(x)
    M = rho.size
    s = 0.0
    t = 1
    while t + 1 < M:
        if rho[t] + rho[t + 1] <= 0.0:
            break
        s += rho[t]
        t += 1
    denom = 1.0 + 2.0 * s
    ess = M / denom if denom > 0 else float(M)
    return float(min(ess, M)), t


def ess(x):
    return ess_with_lag(x)[0]


def ecdf(x):
    """Right-continuous empirical CDF as ``(sorted distinct values, fractions)``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DiagnosticError("empty sample")
    vals, counts = np.unique(x, return_counts=True)
    return vals, np.cumsum(counts) / x.size


def ecdf_eval(x, at):
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    if xs.size == 0:
        raise DiagnosticError("empty sample")
    return np.searchsorted(xs, at, side="right") / xs.size


def ks_distance(a, b):
    """Sup-norm distance between the empirical CDFs of ``a`` and ``b``."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise DiagnosticError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_to_cdf(x, cdf):
    """One-sample KS distance between the sample ``x`` and a continuous ``cdf``."""
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    if xs.size == 0:
        raise DiagnosticError("empty sample")
    n = xs.size
    F = np.asarray(cdf(xs), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def write_ecdf_csv(path, x):
    vals, frac = ecdf(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "fraction"])
        for v, f in zip(vals, frac):
            w.writerow([repr(float(v)), repr(float(f))])


@dataclass
class EssReport:
    ess: np.ndarray
    lags: np.ndarray
    grads_training: int
    grads_evaluation: int
    method: str = ""
    acceptance: float | None = None
    fallback_samples: int = 0
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def dims(self):
        return int(self.ess.size)

    @property
    def ess_avg(self):
        return float(np.mean(self.ess))

    @property
    def grads_total(self):
        return int(self.grads_training + self.grads_evaluation)

    @property
    def ess_per_grad(self):
        return self.ess_avg / self.grads_total if self.grads_total > 0 else None

    def to_dict(self):
        return {
            "dims": self.dims,
            "ess": [float(v) for v in self.ess],
            "lags": [int(v) for v in self.lags],
            "ess_avg": self.ess_avg,
            "grads_training": int(self.grads_training),
            "grads_evaluation": int(self.grads_evaluation),
            "grads_total": self.grads_total,
            "ess_per_grad": self.ess_per_grad,
            "acceptance": self.acceptance,
            "fallback_samples": int(self.fallback_samples),
            "method": self.method,
            "config": self.config,
            "seed": self.seed,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def table(self):
        return format_table([self])


def format_table(reports):
    """Aligned text table: ESS, average ESS, gradient split and ESS per gradient."""
    head = ["Method", "ESS", "Avg. ESS", "Gradients (train/eval/total)", "Avg. ESS/grad"]
    rows = []
    for r in reports:
        rows.append([
            r.method or "-",
            "(" + ", ".join(f"{v:.2f}" for v in r.ess) + ")",
            f"{r.ess_avg:.2f}",
            f"{r.grads_training:,} / {r.grads_evaluation:,} / {r.grads_total:,}",
            "-" if r.ess_per_grad is None else f"{r.ess_per_grad:.6f}",
        ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(head), line(["-" * w for w in widths])]
    out += [line(r) for r in rows]
    return "\n".join(out)


def report_samples(samples, grads_training=0, grads_evaluation=0, **meta):
    """ESS report for a post-burn-in sample matrix (rows are draws)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise DiagnosticError("insufficient samples")
    pairs = [ess_with_lag(x[:, i]) for i in range(x.shape[1])]
    return EssReport(
        ess=np.array([p[0] for p in pairs]),
        lags=np.array([p[1] for p in pairs], dtype=int),
        grads_training=int(grads_training),
        grads_evaluation=int(grads_evaluation),
        **meta,
    )


def report(chain, counters=None):
    """ESS report for a :class:`~hnn_mcmc.samplers.Chain`.

    ``counters`` optionally overrides the chain's gradient split with a dict
    holding ``training`` and/or ``target`` entries.
    """
    grads = dict(chain.grad_counts)
    if counters:
        grads.update(counters)
    return report_samples(
        chain.kept,
        grads_training=grads.get("training", 0),
        grads_evaluation=grads.get("target", 0),
        method=chain.method,
        acceptance=chain.acceptance,
        fallback_samples=int(np.sum(chain.fallback[chain.burn_in:])) if chain.fallback is not None else 0,
        config=chain.config,
        seed=chain.seed,
    )
