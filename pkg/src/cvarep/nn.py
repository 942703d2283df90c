"""Network architectures and optimizer for the Deep BSDE solver.

The single-network solver uses a 3-layer stacked LSTM over (scaled time,
state) with an affine head mapping the top hidden state to the gradient
vector.  Gates use the standard sigmoid, cell/candidate activations use
tanh.  The multi-subnetwork baseline attaches an independent two-hidden-
layer tanh feedforward network to every time node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from cvarep import autodiff as ad
from cvarep import rng
from cvarep.autodiff import Tensor


def _glorot(seed: int, index: int, fan_in: int, fan_out: int,
            shape: Tuple[int, ...]) -> np.ndarray:
    size = int(np.prod(shape))
    counters = np.arange(size, dtype=np.uint64) + np.uint64(index) * np.uint64(1 << 32)
    u = rng.uniforms(seed, rng.STREAM_PARAM_INIT, counters)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return ((2.0 * u - 1.0) * bound).reshape(shape)


class LstmStack:
    """Stacked LSTM (3 layers by default) with an affine output head.

    Gate columns of each weight matrix are laid out [input | forget | output |
    candidate]; the forget-gate bias slice is initialized to 1.
    """

    def __init__(self, state_dim: int, hidden: int, n_layers: int = 3,
                 seed: int = 0):
        self.state_dim = state_dim
        self.hidden = hidden
        self.n_layers = n_layers
        self.params: Dict[str, Tensor] = {}
        h = hidden
        idx = 0
        for layer in range(n_layers):
            in_dim = (state_dim + 1) if layer == 0 else h
            W = _glorot(seed, idx, in_dim + h, 4 * h, (in_dim + h, 4 * h))
            idx += 1
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget gate bias
            self.params[f"lstm{layer}_W"] = ad.param(W)
            self.params[f"lstm{layer}_b"] = ad.param(b)
        self.params["head_W"] = ad.param(
            _glorot(seed, idx, h, state_dim, (h, state_dim)))
        self.params["head_b"] = ad.param(np.zeros(state_dim))

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_carry(self, batch: int) -> List[Tuple[Tensor, Tensor]]:
        h = self.hidden
        return [(Tensor(np.zeros((batch, h))), Tensor(np.zeros((batch, h))))
                for _ in range(self.n_layers)]

    def forward(self, t_scaled: float, x: np.ndarray, carry):
        """One time step over a batch of states x (L, m); returns (output, carry)."""
        L = x.shape[0]
        inp = np.concatenate([np.full((L, 1), float(t_scaled)), x], axis=1)
        h = self.hidden
        new_carry = []
        for layer in range(self.n_layers):
            h_prev, c_prev = carry[layer]
            z = ad.add(ad.matmul(ad.concat([inp, h_prev], axis=1),
                                 self.params[f"lstm{layer}_W"]),
                       self.params[f"lstm{layer}_b"])
            gates = ad.sigmoid(ad.slice_cols(z, 0, 3 * h))
            i_g = ad.slice_cols(gates, 0, h)
            f_g = ad.slice_cols(gates, h, 2 * h)
            o_g = ad.slice_cols(gates, 2 * h, 3 * h)
            cand = ad.tanh(ad.slice_cols(z, 3 * h, 4 * h))
            c_new = ad.add(ad.mul(f_g, c_prev), ad.mul(i_g, cand))
            h_new = ad.mul(o_g, ad.tanh(c_new))
            new_carry.append((h_new, c_new))
            inp = h_new
        out = ad.add(ad.matmul(inp, self.params["head_W"]), self.params["head_b"])
        return out, new_carry


class FcSubnetworks:
    """One independent feedforward network per time node: m -> h -> h -> m, tanh."""

    def __init__(self, state_dim: int, hidden: int, n_nodes: int, seed: int = 0):
        self.state_dim = state_dim
        self.hidden = hidden
        self.n_nodes = n_nodes
        self.params: Dict[str, Tensor] = {}
        idx = 0
        dims = [(state_dim, hidden), (hidden, hidden), (hidden, state_dim)]
        for node in range(n_nodes):
            for k, (fi, fo) in enumerate(dims):
                self.params[f"fc{node}_W{k}"] = ad.param(
                    _glorot(seed, idx, fi, fo, (fi, fo)))
                idx += 1
                self.params[f"fc{node}_b{k}"] = ad.param(np.zeros(fo))

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, node: int, x: np.ndarray):
        a = ad.tanh(ad.add(ad.matmul(Tensor(x), self.params[f"fc{node}_W0"]),
                           self.params[f"fc{node}_b0"]))
        a = ad.tanh(ad.add(ad.matmul(a, self.params[f"fc{node}_W1"]),
                           self.params[f"fc{node}_b1"]))
        return ad.add(ad.matmul(a, self.params[f"fc{node}_W2"]),
                      self.params[f"fc{node}_b2"])


@dataclass
class AdamConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_halving_every: int = 1000


@dataclass
class AdamState:
    """Bias-corrected Adam moments per parameter."""

    config: AdamConfig
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    skipped: int = 0

    def current_lr(self) -> float:
        halvings = self.step_count // max(self.config.lr_halving_every, 1)
        return self.config.lr * 0.5**halvings


def adam_step(state: AdamState, params: Dict[str, Tensor],
              grads: Dict[str, np.ndarray]) -> bool:
    """Standard bias-corrected Adam update in place.

    Returns False (and counts a skip) without touching parameters or moments
    if any gradient is non-finite.
    """
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            return False
    lr = state.current_lr()
    state.step_count += 1
    t = state.step_count
    cfg = state.config
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return True


CHECKPOINT_MAGIC = "cvarep-checkpoint v1"


def save_checkpoint(path, params: Dict[str, Tensor]) -> None:
    """Decimal-text list of named tensors; 17 significant digits round-trips
    float64 bit-exactly."""
    with open(path, "w", newline="") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        for name in sorted(params):
            data = params[name].data
            dims = " ".join(str(d) for d in data.shape)
            fh.write(f"{name} {data.ndim} {dims}\n".rstrip() + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in data.ravel()) + "\n")


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (header {magic!r})")
        out: Dict[str, np.ndarray] = {}
        while True:
            header = fh.readline()
            if not header.strip():
                break
            fields = header.split()
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2:2 + ndim])
            vals = np.array([float(v) for v in fh.readline().split()])
            out[name] = vals.reshape(shape)
    return out
