"""Compare the compiled core with the pure-Python samplers.

    python benchmarks/bench_backends.py [--samples 300] [--repeat 3]

Both backends run the same seeded chains; the script reports wall time per
run, the speedup, and the largest sample difference between backends.
"""
import argparse
import time

import numpy as np

from hnn_mcmc import _backend
from hnn_mcmc.integrate import AnalyticGradient
from hnn_mcmc.network import NetworkGradient, init_params
from hnn_mcmc.samplers import SamplerConfig, hmc, nuts
from hnn_mcmc.targets import NealFunnel, Rosenbrock, make_target


def cases(samples):
    net3 = init_params(3, (100, 100, 100), latent=True, seed=0)
    yield "nuts rosenbrock-3", lambda t: AnalyticGradient(t), Rosenbrock(3), nuts, SamplerConfig(M=samples, dt=0.025)
    yield "nuts funnel", lambda t: AnalyticGradient(t), NealFunnel(), nuts, SamplerConfig(M=samples, dt=0.025)
    yield ("lhnn-nuts rosenbrock-3 (3x100)", lambda t: NetworkGradient(net3), Rosenbrock(3), nuts,
           SamplerConfig(M=max(samples // 5, 20), dt=0.025))
    yield ("hmc ill-conditioned-5", lambda t: AnalyticGradient(t), make_target("ill_conditioned_gaussian"), hmc,
           SamplerConfig(M=samples, dt=0.05, T=2.0))


def timed(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _backend.HAVE_COMPILED:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'case':34s} {'python s':>10s} {'compiled s':>11s} {'speedup':>8s} {'max |dq|':>10s}")
    for name, provider, target, run, cfg in cases(args.samples):
        res = {}
        for backend in ("python", "compiled"):
            res[backend] = timed(lambda: run(provider(target), target, cfg, backend=backend), args.repeat)
        (tp, cp), (tc, cc) = res["python"], res["compiled"]
        diff = float(np.max(np.abs(cp.samples - cc.samples)))
        print(f"{name:34s} {tp:10.3f} {tc:11.4f} {tp / tc:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
