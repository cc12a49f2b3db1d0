"""Run configuration: YAML documents with dotted-key overrides.

A config has the top-level keys ``target``, ``mode``, ``seed`` and the
sections ``sampler``, ``training`` and ``paths``.  Missing keys take the
defaults below; unknown keys are rejected with their dotted path.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass

import yaml

from .errors import ConfigError

MODES = ("hmc", "nuts", "lhnn-hmc", "lhnn-nuts")
OUTPUT_DIR_ENV = "HNN_MCMC_OUTPUT_DIR"

DEFAULTS = {
    "target": None,
    "mode": "nuts",
    "seed": 0,
    "sampler": {
        "M": 1000,
        "burn_in": 0,
        "dt": 0.025,
        "T": None,
        "max_tree_depth": 10,
        "delta_max_lf": 1000.0,
        "delta_max_hnn": 10.0,
        "n_lf": 20,
        "mass": None,
        "start": None,
        "monitor": True,
        "backend": "auto",
    },
    "training": {
        "M_t": 40,
        "T": 250.0,
        "dt": 0.025,
        "steps": 100000,
        "learning_rate": 5e-4,
        "batch_size": 512,
        "hidden": [100, 100, 100],
        "latent": True,
        "seed": None,
    },
    "paths": {
        "checkpoint": None,
        "output_dir": "out",
        "dataset": None,
    },
}

_SECTIONS = ("sampler", "training", "paths")


def _merge(base, over, prefix=""):
    for key, val in over.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown key", path)
        if key in _SECTIONS and not prefix:
            if val is None:
                continue
            if not isinstance(val, dict):
                raise ConfigError("must be a mapping", path)
            _merge(base[key], val, prefix=f"{key}.")
        else:
            base[key] = val
    return base


def _float(data, section, key, allow_neg_inf=False):
    val = data[section][key]
    try:
        out = float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {val!r}", f"{section}.{key}") from None
    if not math.isfinite(out) and not (allow_neg_inf and out == -math.inf):
        raise ConfigError("must be finite", f"{section}.{key}")
    data[section][key] = out


def _int(data, section, key, minimum=None):
    val = data[section][key]
    if isinstance(val, bool) or not isinstance(val, int):
        if isinstance(val, float) and val.is_integer():
            val = int(val)
        else:
            raise ConfigError(f"expected an integer, got {val!r}", f"{section}.{key}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"must be >= {minimum}", f"{section}.{key}")
    data[section][key] = val


@dataclass
class RunConfig:
    """Validated, fully populated run configuration."""

    data: dict

    @property
    def mode(self):
        return self.data["mode"]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def target_spec(self):
        spec = self.data["target"]
        spec = {"name": spec} if isinstance(spec, str) else dict(spec)
        if spec.get("name") == "logistic" and "dataset" not in spec and "synthetic" not in spec:
            spec["dataset"] = self.data["paths"]["dataset"]
        return spec

    @property
    def uses_network(self):
        return self.mode.startswith("lhnn-")

    @property
    def training_seed(self):
        s = self.data["training"]["seed"]
        return self.seed if s is None else s

    def sampler_config(self):
        from .samplers import SamplerConfig

        s = self.data["sampler"]
        try:
            return SamplerConfig(
                M=s["M"], burn_in=s["burn_in"], dt=s["dt"], T=s["T"], max_tree_depth=s["max_tree_depth"],
                delta_max_lf=s["delta_max_lf"], delta_max_hnn=float(s["delta_max_hnn"]), n_lf=s["n_lf"],
                seed=self.seed, mass=s["mass"], monitor=s["monitor"],
            )
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"sampler.{exc.field}") from None

    def train_config(self):
        from .network import TrainConfig

        t = self.data["training"]
        return TrainConfig(steps=t["steps"], learning_rate=t["learning_rate"], batch_size=t["batch_size"],
                           seed=self.training_seed)

    def architecture(self):
        from .network import Architecture

        t = self.data["training"]
        return Architecture(hidden=tuple(t["hidden"]), latent=bool(t["latent"]))

    def output_dir(self, override=None):
        return override or os.environ.get(OUTPUT_DIR_ENV) or self.data["paths"]["output_dir"]

    def canonical(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=_json_default)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def echo(self):
        """JSON-safe copy of the configuration for embedding in outputs."""
        return json.loads(self.canonical())


def _json_default(obj):
    raise TypeError(f"not serializable: {obj!r}")


def _json_safe(data):
    # -inf is legal for delta_max_hnn but not in JSON; store it as a string.
    s = data["sampler"]
    if s["delta_max_hnn"] == -math.inf:
        s["delta_max_hnn"] = "-inf"
    return data


def validate(raw):
    """Merge ``raw`` over the defaults and check every field."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", "<root>")
    data = _merge(copy.deepcopy(DEFAULTS), raw)
    if data["target"] is None:
        raise ConfigError("required", "target")
    tgt = data["target"]
    if not isinstance(tgt, (str, dict)) or (isinstance(tgt, dict) and "name" not in tgt):
        raise ConfigError("must be a name or a mapping with 'name'", "target")
    if data["mode"] not in MODES:
        raise ConfigError(f"must be one of {', '.join(MODES)}", "mode")
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a non-negative integer", "seed")
    _int(data, "sampler", "M", 1)
    _int(data, "sampler", "burn_in", 0)
    _int(data, "sampler", "max_tree_depth", 1)
    _int(data, "sampler", "n_lf", 1)
    _float(data, "sampler", "dt")
    _float(data, "sampler", "delta_max_lf")
    _float(data, "sampler", "delta_max_hnn", allow_neg_inf=True)
    if data["sampler"]["T"] is not None:
        _float(data, "sampler", "T")
    if data["sampler"]["backend"] not in ("auto", "python", "compiled"):
        raise ConfigError("must be auto, python or compiled", "sampler.backend")
    if not isinstance(data["sampler"]["monitor"], bool):
        raise ConfigError("must be true or false", "sampler.monitor")
    _int(data, "training", "M_t", 1)
    _int(data, "training", "steps", 1)
    _int(data, "training", "batch_size", 1)
    _float(data, "training", "T")
    _float(data, "training", "dt")
    _float(data, "training", "learning_rate")
    if data["training"]["seed"] is not None:
        _int(data, "training", "seed", 0)
    hidden = data["training"]["hidden"]
    if not isinstance(hidden, list) or not hidden or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("must be a non-empty list of positive integers", "training.hidden")
    if data["mode"] in ("hmc", "lhnn-hmc") and data["sampler"]["T"] is None:
        raise ConfigError(f"required for mode {data['mode']}", "sampler.T")
    name = tgt if isinstance(tgt, str) else tgt["name"]
    if name == "logistic":
        has = isinstance(tgt, dict) and ("dataset" in tgt or "synthetic" in tgt)
        if not has and not data["paths"]["dataset"]:
            raise ConfigError("required for the logistic target", "paths.dataset")
    cfg = RunConfig(_json_safe(data))
    cfg.sampler_config()
    return cfg


def parse_override(text):
    """``"sampler.M=500"`` -> ``(["sampler", "M"], 500)``; values are parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value", "--set")
    key, val = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad key {key!r}", "--set")
    return parts, yaml.safe_load(val)


def apply_overrides(raw, overrides):
    raw = copy.deepcopy(raw) if raw else {}
    for text in overrides or ():
        parts, val = parse_override(text)
        node = raw
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = {} if nxt is None or p in _SECTIONS or p == "target" else None
                if nxt is None:
                    raise ConfigError("cannot set a key below a scalar", ".".join(parts))
                if p == "target" and isinstance(node.get(p), str):
                    nxt = {"name": node[p]}
                node[p] = nxt
            node = nxt
        node[parts[-1]] = val
    return raw


def load_config(path=None, overrides=None):
    """Read a YAML config (or start from defaults), apply overrides, validate."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
    return validate(apply_overrides(raw, overrides))


def loads(text):
    return validate(yaml.safe_load(text))
