"""Dense policy/value networks with a diagonal-Gaussian action head, plus Adam.

Networks are plain float64 numpy; the no-tape ``forward`` is the fast path
used while collecting rollouts, and ``forward_node`` re-runs the same math on
a gradient tape during updates.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Grads, Node, Parameter, Tape, affine
from .errors import NumericsError, ShapeError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    """Orthogonal-like matrix scaled by `gain`, deterministic under `rng`."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class DenseNet:
    """Fully-connected net; layer k maps sizes[k] -> sizes[k+1] via W (out, in)."""

    def __init__(
        self,
        sizes: Sequence[int],
        *,
        rng: np.random.Generator,
        name: str,
        hidden_activation: str = "tanh",
        out_gain: float = 1.0,
    ) -> None:
        if len(sizes) < 2:
            raise ShapeError("a net needs at least an input and an output size")
        if hidden_activation != "tanh":
            raise ShapeError(f"unsupported activation: {hidden_activation}")
        self.name = name
        self.sizes = tuple(int(s) for s in sizes)
        self.hidden_activation = hidden_activation
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        last = len(self.sizes) - 2
        for k in range(len(self.sizes) - 1):
            gain = out_gain if k == last else math.sqrt(2.0)
            w = orthogonal_init(rng, self.sizes[k + 1], self.sizes[k], gain)
            self.weights.append(Parameter(f"{name}/W{k}", w))
            self.biases.append(Parameter(f"{name}/b{k}", np.zeros(self.sizes[k + 1])))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the net; accepts a single (D,) vector or a (B, D) batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"{self.name}: input dim {x.shape[-1]} != {self.in_dim}")
        last = len(self.weights) - 1
        if x.ndim == 1:
            for k, (w, b) in enumerate(zip(self.weights, self.biases)):
                x = w.data @ x + b.data
                if k != last:
                    x = np.tanh(x)
            return x
        if x.ndim == 2:
            for k, (w, b) in enumerate(zip(self.weights, self.biases)):
                x = x @ w.data.T + b.data
                if k != last:
                    x = np.tanh(x)
            return x
        raise ShapeError(f"{self.name}: expected 1-d or 2-d input, got {x.ndim}-d")

    def forward_node(self, tape: Tape, x: Node) -> Node:
        """Tape-recorded forward pass over a (B, D) batch."""
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = affine(x, tape.watch(w), tape.watch(b))
            if k != last:
                x = x.tanh()
        return x


@dataclass
class GaussianHead:
    """Diagonal Gaussian over actions: squashed mean plus state-free log-std."""

    mean: np.ndarray
    log_std: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def sample_action(head: GaussianHead, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Draw an action and report its exact log-density."""
    noise = rng.standard_normal(head.dim)
    action = head.mean + np.exp(head.log_std) * noise
    return action, log_prob(head, action)


def log_prob(head: GaussianHead, action: np.ndarray) -> float:
    """Log-density of `action` under the head's diagonal Gaussian."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != head.mean.shape:
        raise ShapeError(f"action shape {action.shape} != mean shape {head.mean.shape}")
    z = (action - head.mean) * np.exp(-head.log_std)
    return float(np.sum(-0.5 * z * z - head.log_std - _HALF_LOG_2PI))


def entropy(head: GaussianHead) -> float:
    """Differential entropy: sum_d (log_std_d + 0.5*log(2*pi*e))."""
    return float(np.sum(head.log_std + 0.5 * (1.0 + math.log(2.0 * math.pi))))


class GaussianPolicy:
    """tanh-mean Gaussian policy over a shared observation vector."""

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        *,
        rng: np.random.Generator,
        name: str,
        hidden: Sequence[int] = (64, 64),
    ) -> None:
        self.net = DenseNet(
            (obs_dim, *hidden, action_dim), rng=rng, name=f"{name}/mean", out_gain=0.01
        )
        self.log_std = Parameter(f"{name}/log_std", np.zeros(action_dim))
        self.action_dim = action_dim
        self.obs_dim = obs_dim

    def parameters(self) -> list[Parameter]:
        return self.net.parameters() + [self.log_std]

    def head(self, obs: np.ndarray) -> GaussianHead:
        return GaussianHead(np.tanh(self.net.forward(obs)), self.log_std.data)

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return np.tanh(self.net.forward(obs))

    def clamp_log_std(self) -> None:
        np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std.data)

    def log_prob_node(self, tape: Tape, obs: np.ndarray, actions: np.ndarray) -> Node:
        """Per-sample log-densities for a (B, D) obs batch, as a (B,) node."""
        mean = self.net.forward_node(tape, tape.constant(obs)).tanh()
        log_std = tape.watch(self.log_std)
        z = (tape.constant(actions) - mean) * (-log_std).exp()
        per_dim = z.square() * (-0.5) - log_std - _HALF_LOG_2PI
        return per_dim.sum(axis=1)

    def entropy_node(self, tape: Tape) -> Node:
        log_std = tape.watch(self.log_std)
        const = 0.5 * (1.0 + math.log(2.0 * math.pi)) * self.action_dim
        return log_std.sum() + const


class ValueNet:
    """State-value head: observation -> scalar estimate."""

    def __init__(
        self,
        obs_dim: int,
        *,
        rng: np.random.Generator,
        name: str,
        hidden: Sequence[int] = (64, 64),
    ) -> None:
        self.net = DenseNet((obs_dim, *hidden, 1), rng=rng, name=f"{name}/value", out_gain=1.0)
        self.obs_dim = obs_dim

    def parameters(self) -> list[Parameter]:
        return self.net.parameters()

    def value(self, obs: np.ndarray) -> float:
        return float(self.net.forward(obs)[0])

    def value_node(self, tape: Tape, obs: np.ndarray) -> Node:
        out = self.net.forward_node(tape, tape.constant(obs))
        return out.reshape((out.shape[0],))


class AdamState:
    """First/second moment buffers for one parameter list."""

    def __init__(self, params: Sequence[Parameter]) -> None:
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


def adam_step(
    params: Sequence[Parameter],
    grads: Grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected adaptive update; raises on non-finite grads or params."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p in params:
        g = grads[p]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != {p.data.shape} for {p.name}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {p.name}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericsError(f"update produced non-finite values in {p.name}")


def global_grad_norm(params: Sequence[Parameter], grads: Grads) -> float:
    total = 0.0
    for p in params:
        g = grads[p]
        total += float(np.sum(g * g))
    return math.sqrt(total)


class ScaledGrads:
    """View of a Grads mapping with every gradient multiplied by `scale`."""

    def __init__(self, inner: Grads, scale: float) -> None:
        self._inner = inner
        self._scale = scale

    def __getitem__(self, param: Parameter) -> np.ndarray:
        return self._inner[param] * self._scale


def clip_grads(params: Sequence[Parameter], grads: Grads, max_norm: float):
    """Return (possibly rescaled) grads whose global norm is at most max_norm."""
    norm = global_grad_norm(params, grads)
    if max_norm > 0.0 and norm > max_norm:
        return ScaledGrads(grads, max_norm / norm), norm
    return grads, norm


# -- checkpoint payloads (nn_format=1, row-major little-endian float64) --


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(s: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(s.encode("ascii")), dtype="<f8")
    return raw.reshape(shape).astype(np.float64)


def dense_net_payload(net: DenseNet) -> dict:
    layers = []
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        rows, cols = w.data.shape
        layers.append(
            {
                "index": k,
                "rows": rows,
                "cols": cols,
                "w": _encode_array(w.data),
                "b": _encode_array(b.data),
            }
        )
    return {"sizes": list(net.sizes), "activation": net.hidden_activation, "layers": layers}


def load_dense_net(net: DenseNet, payload: dict) -> None:
    if tuple(payload["sizes"]) != net.sizes:
        raise ShapeError(f"{net.name}: checkpoint sizes {payload['sizes']} != {net.sizes}")
    for entry in payload["layers"]:
        k = entry["index"]
        net.weights[k].data = _decode_array(entry["w"], (entry["rows"], entry["cols"]))
        net.biases[k].data = _decode_array(entry["b"], (entry["rows"],))


def adam_payload(state: AdamState) -> dict:
    return {
        "t": state.t,
        "m": {k: _encode_array(v) for k, v in state.m.items()},
        "v": {k: _encode_array(v) for k, v in state.v.items()},
    }


def load_adam(state: AdamState, payload: dict) -> None:
    state.t = int(payload["t"])
    for key in state.m:
        state.m[key] = _decode_array(payload["m"][key], state.m[key].shape)
        state.v[key] = _decode_array(payload["v"][key], state.v[key].shape)
