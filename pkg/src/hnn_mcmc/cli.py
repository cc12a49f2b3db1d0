"""Command-line interface: ``hnn-mcmc {train,sample,compare,ess}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, network, samplers
from .config import load_config
from .errors import (ConfigError, DatasetError, DiagnosticError, IntegrationError, NumericalDomainError,
                     TrainingError)
from .integrate import AnalyticGradient
from .targets import make_target

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("hnn_mcmc")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _target(cfg):
    try:
        return make_target(cfg.target_spec)
    except DatasetError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "target") from None


def _provenance(cfg):
    return {"config": cfg.echo(), "config_hash": cfg.hash(), "seed": cfg.seed}


def _outdir(cfg, args):
    out = Path(cfg.output_dir(getattr(args, "output_dir", None)))
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_training(cfg, target):
    """Generate data and fit the network; returns ``(params, data, history)``."""
    t = cfg.data["training"]
    data = samplers.generate_training_data(target, t["M_t"], t["T"], t["dt"], seed=cfg.training_seed,
                                           mass=cfg.data["sampler"]["mass"])
    history = []
    params = network.train(data, cfg.train_config(), cfg.architecture(), history=history)
    return params, data, history


def cmd_train(cfg, args):
    target = _target(cfg)
    out = _outdir(cfg, args)
    log.info("generating training data for %s", target.name)
    params, data, history = run_training(cfg, target)
    ckpt = Path(cfg.data["paths"]["checkpoint"] or out / "checkpoint.npz")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    network.save_checkpoint(ckpt, params, extra={
        "training_grads": data.grad_evaluations,
        "target": target.describe(),
        **_provenance(cfg),
    })
    with open(out / "training_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, loss in history:
            w.writerow([step, repr(float(loss))])
    final = network.dataset_loss(params, data)
    summary = {
        "checkpoint": str(ckpt),
        "training_grads": int(data.grad_evaluations),
        "rows": len(data),
        "final_loss": float(final),
        **_provenance(cfg),
    }
    _write_json(out / "train_summary.json", summary)
    print(f"trained on {len(data)} points ({data.grad_evaluations} target gradients); "
          f"loss {final:.6g}; checkpoint {ckpt}")
    return EXIT_OK


def _network_for(cfg, target):
    path = cfg.data["paths"]["checkpoint"]
    if path and Path(path).exists():
        params, meta = network.load_checkpoint(path)
        training_grads = int(meta.get("extra", {}).get("training_grads", 0))
    elif path:
        raise FileNotFoundError(f"checkpoint {path} not found")
    else:
        log.info("no checkpoint given; training inline")
        params, data, _ = run_training(cfg, target)
        training_grads = data.grad_evaluations
    if params.d != target.d:
        raise ConfigError(f"checkpoint is for d={params.d}, target has d={target.d}", "paths.checkpoint")
    return network.NetworkGradient(params), training_grads


def cmd_sample(cfg, args):
    target = _target(cfg)
    scfg = cfg.sampler_config()
    out = _outdir(cfg, args)
    backend = cfg.data["sampler"]["backend"]
    start = cfg.data["sampler"]["start"]
    if cfg.uses_network:
        grad, training_grads = _network_for(cfg, target)
    else:
        grad, training_grads = AnalyticGradient(target), 0
    run = samplers.hmc if cfg.mode.endswith("hmc") else samplers.nuts
    try:
        chain = run(grad, target, scfg, start=start, backend=backend, training_grads=training_grads)
    except ValueError as exc:
        raise ConfigError(str(exc), "sampler") from None
    chain.to_csv(out / "chain.csv")
    summary = chain.summary()
    summary.update(_provenance(cfg))
    summary["target"] = target.describe()
    if chain.M - chain.burn_in >= 2:
        try:
            summary["report"] = diagnostics.report(chain).to_dict()
        except DiagnosticError as exc:
            summary["report"] = {"error": str(exc)}
    _write_json(out / "summary.json", summary)
    acc = "" if chain.acceptance is None else f", acceptance {chain.acceptance:.3f}"
    print(f"{cfg.mode}: {chain.M} samples -> {out / 'chain.csv'}{acc}; "
          f"target gradients {chain.grad_counts['target']}, fallback samples {chain.fallback_samples}")
    return EXIT_OK


def _load_run(path):
    """Chain samples (after burn-in) and summary from a run directory or chain CSV."""
    p = Path(path)
    csv_path = p / "chain.csv" if p.is_dir() else p
    summary_path = csv_path.with_name("summary.json")
    samples, _, fallback, _ = samplers.read_chain_csv(csv_path)
    summary = {}
    if summary_path.exists():
        with open(summary_path) as fh:
            summary = json.load(fh)
    burn = int(summary.get("burn_in", 0))
    return samples[burn:], fallback[burn:], summary


def _report(samples, fallback, summary):
    grads = summary.get("grads", {})
    return diagnostics.report_samples(
        samples, grads_training=grads.get("training", 0), grads_evaluation=grads.get("target", 0),
        method=summary.get("method", ""), acceptance=summary.get("acceptance"),
        fallback_samples=int(np.sum(fallback)), seed=summary.get("seed"),
    )


def compare_runs(a, b):
    sa, fa, suma = _load_run(a)
    sb, fb, sumb = _load_run(b)
    if sa.shape[1] != sb.shape[1]:
        raise ConfigError(f"dimension mismatch: {sa.shape[1]} vs {sb.shape[1]}", "compare")
    ra, rb = _report(sa, fa, suma), _report(sb, fb, sumb)
    ea, eb = ra.grads_evaluation, rb.grads_evaluation
    ratio = None
    if ra.ess_per_grad and rb.ess_per_grad is not None:
        ratio = rb.ess_per_grad / ra.ess_per_grad
    elif ra.grads_total == rb.grads_total:
        ratio = rb.ess_avg / ra.ess_avg
    return {
        "a": ra.to_dict(),
        "b": rb.to_dict(),
        "ks": [diagnostics.ks_distance(sa[:, i], sb[:, i]) for i in range(sa.shape[1])],
        "ess_ratio": rb.ess_avg / ra.ess_avg,
        "ess_per_grad_ratio": ratio,
        "gradient_reduction": (1.0 - eb / ea) if ea > 0 else None,
        "config_hash": {"a": suma.get("config_hash"), "b": sumb.get("config_hash")},
        "seed": {"a": suma.get("seed"), "b": sumb.get("seed")},
    }


def cmd_compare(args):
    result = compare_runs(args.run_a, args.run_b)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_ess(args):
    samples, fallback, summary = _load_run(args.chain)
    if args.burn_in is not None:
        samples_all, _, fb_all, _ = samplers.read_chain_csv(
            Path(args.chain) / "chain.csv" if Path(args.chain).is_dir() else args.chain)
        samples, fallback = samples_all[args.burn_in:], fb_all[args.burn_in:]
    rep = _report(samples, fallback, summary)
    rep.config = summary.get("config", {})
    if args.output:
        rep.write_json(args.output)
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    else:
        print(rep.table())
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="hnn-mcmc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("train", "generate training data and fit an L-HNN"),
                      ("sample", "run a sampler and write the chain")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. sampler.M=500")
        p.add_argument("--output-dir", help="output directory (beats $HNN_MCMC_OUTPUT_DIR and the config)")
    p = sub.add_parser("compare", help="compare two sampled runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("-o", "--output", help="write the comparison JSON here")
    p = sub.add_parser("ess", help="ESS report for a chain")
    p.add_argument("chain", help="run directory or chain CSV")
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("-o", "--output", help="write the report JSON here")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in ("train", "sample"):
            cfg = load_config(args.config, args.overrides)
            return (cmd_train if args.command == "train" else cmd_sample)(cfg, args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_ess(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalDomainError, IntegrationError, TrainingError, DiagnosticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
