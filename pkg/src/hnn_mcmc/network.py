"""Latent Hamiltonian neural network (sine MLP) and its training loop.

The network maps ``z = (q, p)`` to ``n_latent`` outputs whose sum is the
surrogate Hamiltonian.  Differentiation is written out by hand:

* :func:`input_gradient` is one reverse sweep through the sine layers.
* :func:`loss_parameter_gradient` differentiates that reverse sweep again,
  because the loss is built from input gradients of the network.

Weights follow the ``a = W u + b`` convention, so ``W`` has shape
``(fan_out, fan_in)``.
"""
from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .integrate import GradientProvider


@dataclass
class NetworkParams:
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 1:
            raise ValueError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: weight {W.shape} and bias {b.shape} do not match")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan-in {W.shape[1]} != previous fan-out")
        if self.weights[0].shape[1] % 2:
            raise ValueError("input width must be even (q and p halves)")

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def d(self):
        return self.weights[0].shape[1] // 2

    @property
    def n_latent(self):
        return self.weights[-1].shape[0]

    @property
    def hidden(self):
        return self.sizes[1:-1]

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec):
        """Copy of these parameters with values taken from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        pos, ws, bs = 0, [], []
        for W, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + W.size].reshape(W.shape).copy())
            pos += W.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        if pos != vec.size:
            raise ValueError("flat vector has the wrong length")
        return NetworkParams(ws, bs)

    def copy(self):
        return NetworkParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(d, hidden=(100, 100, 100), latent=True, seed=0):
    """Glorot-uniform weights and zero biases.

    ``latent=True`` gives ``d`` outputs (L-HNN); ``False`` gives a single
    scalar output (plain HNN).
    """
    rng = np.random.default_rng(seed)
    sizes = [2 * d, *hidden, d if latent else 1]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return NetworkParams(ws, bs)


def _as_batch(params, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.ndim != 2 or Z.shape[1] != params.sizes[0]:
        raise ValueError(f"expected input width {params.sizes[0]}, got shape {z.shape}")
    return Z, single


def _hidden_pass(params, Z):
    us, acts = [Z], []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        a = us[-1] @ W.T + b
        acts.append(a)
        us.append(np.sin(a))
    return us, acts


def forward(params, z):
    """Latent outputs; accepts a single ``2d`` vector or a batch of rows."""
    Z, single = _as_batch(params, z)
    us, _ = _hidden_pass(params, Z)
    lam = us[-1] @ params.weights[-1].T + params.biases[-1]
    return lam[0] if single else lam


def surrogate_hamiltonian(params, z):
    lam = forward(params, z)
    return lam.sum(axis=-1)


def _reverse(params, acts, batch):
    """Reverse sweep: returns (deltas, gammas) with deltas[0] the input gradient."""
    P = len(params.weights) - 1
    c = params.weights[-1].sum(axis=0)
    deltas = [None] * (P + 1)
    gammas = [None] * P
    deltas[P] = np.broadcast_to(c, (batch, c.size))
    for l in range(P - 1, -1, -1):
        gammas[l] = deltas[l + 1] * np.cos(acts[l])
        deltas[l] = gammas[l] @ params.weights[l]
    return deltas, gammas


def input_gradient(params, z):
    """``(dH/dq, dH/dp)`` of the surrogate Hamiltonian at ``z``."""
    Z, single = _as_batch(params, z)
    _, acts = _hidden_pass(params, Z)
    deltas, _ = _reverse(params, acts, Z.shape[0])
    G = deltas[0]
    return G[0].copy() if single else G


@dataclass
class TrainingSet:
    """Phase points and their Hamilton's-equations time derivatives."""

    inputs: np.ndarray
    targets: np.ndarray
    grad_evaluations: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.ndim != 2 or self.inputs.shape != self.targets.shape or self.inputs.shape[1] % 2:
            raise ValueError("inputs and targets must be matching (n, 2d) matrices")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("training set contains non-finite values")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1] // 2

    def slice(self, idx):
        return TrainingSet(self.inputs[idx], self.targets[idx])


def _gradient_targets(batch):
    # Prediction layout is (dH/dq, dH/dp); it should equal (-dp/dt, dq/dt).
    d = batch.d
    return np.concatenate([-batch.targets[:, d:], batch.targets[:, :d]], axis=1)


def hnn_loss(params, batch):
    """Mean over the batch of ``|dH/dp - dq/dt|^2 + |-dH/dq - dp/dt|^2``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    G = input_gradient(params, batch.inputs)
    R = G - _gradient_targets(batch)
    return float(np.sum(R * R) / len(batch))


def _loss_and_grad(params, Z, T):
    B = Z.shape[0]
    Ws = params.weights
    P = len(Ws) - 1
    us, acts = _hidden_pass(params, Z)
    cos = [np.cos(a) for a in acts]
    deltas, gammas = _reverse(params, acts, B)
    R = deltas[0] - T
    loss = float(np.sum(R * R) / B)

    gW = [None] * (P + 1)
    gb = [None] * (P + 1)
    # adjoint of the reverse sweep, walked in forward layer order
    dbar = (2.0 / B) * R
    abar = [None] * P
    for l in range(P):
        gW[l] = gammas[l].T @ dbar
        gamma_bar = dbar @ Ws[l].T
        abar[l] = -gamma_bar * deltas[l + 1] * us[l + 1]
        dbar = gamma_bar * cos[l]
    cbar = dbar.sum(axis=0)
    gW[P] = np.broadcast_to(cbar, Ws[P].shape).copy()
    gb[P] = np.zeros_like(params.biases[P])
    # adjoint of the forward (hidden) pass
    ubar = None
    for l in range(P - 1, -1, -1):
        a_bar = abar[l] if ubar is None else abar[l] + ubar * cos[l]
        gW[l] += a_bar.T @ us[l]
        gb[l] = a_bar.sum(axis=0)
        if l:
            ubar = a_bar @ Ws[l]
    return loss, NetworkParams(gW, gb)


def loss_parameter_gradient(params, batch):
    """Exact gradient of :func:`hnn_loss` with respect to every weight and bias."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    return _loss_and_grad(params, batch.inputs, _gradient_targets(batch))[1]


@dataclass
class TrainConfig:
    steps: int = 100_000
    learning_rate: float = 5e-4
    batch_size: int = 512
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class Architecture:
    hidden: tuple = (100, 100, 100)
    latent: bool = True

    def init(self, d, seed):
        return init_params(d, tuple(self.hidden), self.latent, seed)


def dataset_loss(params, data, chunk=8192):
    """Full-data loss evaluated in chunks."""
    total = 0.0
    for start in range(0, len(data), chunk):
        part = data.slice(slice(start, start + chunk))
        total += hnn_loss(params, part) * len(part)
    return total / len(data)


def train(data, cfg, arch=None, init=None, history=None):
    """Fit the network with Adam on shuffled minibatches.

    ``history``, if a list, receives ``(step, minibatch_loss)`` tuples.
    Training is deterministic given ``cfg.seed``.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    arch = arch or Architecture()
    params = init.copy() if init is not None else arch.init(data.d, cfg.seed)
    if params.sizes[0] != data.inputs.shape[1]:
        raise ValueError(f"network input width {params.sizes[0]} does not match data width {data.inputs.shape[1]}")
    rng = np.random.default_rng([cfg.seed, 1])
    targets = _gradient_targets(data)
    n = len(data)
    arrays = params.arrays()
    m1 = [np.zeros_like(a) for a in arrays]
    m2 = [np.zeros_like(a) for a in arrays]
    order = np.arange(n)
    cursor = n
    for step in range(1, cfg.steps + 1):
        if cursor >= n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        loss, grad = _loss_and_grad(params, data.inputs[idx], targets[idx])
        if not math.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {step}", step=step)
        if history is not None:
            history.append((step, loss))
        b1c = 1.0 - cfg.beta1 ** step
        b2c = 1.0 - cfg.beta2 ** step
        for a, g, s1, s2 in zip(arrays, grad.arrays(), m1, m2):
            s1 *= cfg.beta1
            s1 += (1.0 - cfg.beta1) * g
            s2 *= cfg.beta2
            s2 += (1.0 - cfg.beta2) * g * g
            a -= cfg.learning_rate * (s1 / b1c) / (np.sqrt(s2 / b2c) + cfg.eps)
    if not params.all_finite():
        raise TrainingError("parameters became non-finite", step=cfg.steps)
    return params


class NetworkGradient(GradientProvider):
    """Position block of the network input gradient, evaluated at zero momentum.

    Fixing the momentum argument makes the force a function of ``q`` alone,
    which keeps leapfrog exactly reversible and lets gradients be cached
    across steps like the analytic provider.
    """

    kind = "network"

    def __init__(self, params):
        if len(params.weights) < 2:
            raise ValueError("network needs at least one hidden layer")
        super().__init__(params.d)
        self.params = params
        self._W = [np.ascontiguousarray(W) for W in params.weights]
        self._W0q = np.ascontiguousarray(params.weights[0][:, :params.d])
        self._c = params.weights[-1].sum(axis=0)

    def _evaluate(self, q, check):
        Ws, bs = self._W, self.params.biases
        acts = [self._W0q @ q + bs[0]]
        for W, b in zip(Ws[1:-1], bs[1:-1]):
            acts.append(W @ np.sin(acts[-1]) + b)
        delta = self._c
        for l in range(len(acts) - 1, 0, -1):
            delta = (delta * np.cos(acts[l])) @ Ws[l]
        g = (delta * np.cos(acts[0])) @ self._W0q
        if check and not np.all(np.isfinite(g)):
            raise ValueError("network gradient is non-finite")
        return g


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_FORMAT = "hnn-mcmc-checkpoint"


def save_checkpoint(path, params, extra=None):
    """Write an ``.npz``-compatible archive with fixed timestamps."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "sizes": params.sizes,
        "activation": "sin",
        "d": params.d,
        "n_latent": params.n_latent,
        "latent": params.n_latent == params.d,
    }
    if extra:
        meta["extra"] = extra
    entries = [("meta", np.array(json.dumps(meta, sort_keys=True)))]
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        entries += [(f"w{i}", W), (f"b{i}", b)]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.require(arr, requirements="C"), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    """Return ``(params, meta)``."""
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(str(f["meta"].reshape(-1)[0]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a network checkpoint")
        n = len(meta["sizes"]) - 1
        ws = [f[f"w{i}"].copy() for i in range(n)]
        bs = [f[f"b{i}"].copy() for i in range(n)]
    params = NetworkParams(ws, bs)
    if params.sizes != meta["sizes"]:
        raise ValueError(f"{path}: stored shapes disagree with metadata")
    return params, meta
