"""Small tanh MLP with exact parameter/input gradients, Adam, and checkpoint I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = "ABSCKPT"
CHECKPOINT_VERSION = 1


class DimensionMismatch(Exception):
    pass


class FormatVersionMismatch(Exception):
    pass


class CorruptCheckpoint(Exception):
    pass


@dataclass
class MlpParams:
    """Layer dims plus row-major weights; tanh hidden activations, linear head."""

    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[i] has shape (dims[i+1], dims[i])
    biases: list[np.ndarray]   # biases[i] has shape (dims[i+1],)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_dims),
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @staticmethod
    def from_flat(layer_dims: list[int], flat: np.ndarray) -> "MlpParams":
        weights, biases, k = [], [], 0
        for i in range(len(layer_dims) - 1):
            n_out, n_in = layer_dims[i + 1], layer_dims[i]
            weights.append(flat[k:k + n_out * n_in].reshape(n_out, n_in).copy())
            k += n_out * n_in
            biases.append(flat[k:k + n_out].copy())
            k += n_out
        if k != flat.size:
            raise DimensionMismatch(f"flat vector has {flat.size} entries, expected {k}")
        return MlpParams(list(layer_dims), weights, biases)


def n_params(layer_dims: list[int]) -> int:
    return sum((layer_dims[i] + 1) * layer_dims[i + 1] for i in range(len(layer_dims) - 1))


def init_params(layer_dims: list[int], rng: np.random.Generator) -> MlpParams:
    """Uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    weights, biases = [], []
    for i in range(len(layer_dims) - 1):
        bound = 1.0 / np.sqrt(layer_dims[i])
        weights.append(rng.uniform(-bound, bound, size=(layer_dims[i + 1], layer_dims[i])))
        biases.append(rng.uniform(-bound, bound, size=layer_dims[i + 1]))
    return MlpParams(list(layer_dims), weights, biases)


def _check_input(params: MlpParams, x: np.ndarray, axis_size: int):
    if axis_size != params.layer_dims[0]:
        raise DimensionMismatch(
            f"input has {axis_size} features, network expects {params.layer_dims[0]}")


def forward(params: MlpParams, x) -> float | np.ndarray:
    """Forward pass on one input vector; returns a float for 1-output nets."""
    h = np.asarray(x, dtype=float)
    _check_input(params, h, h.shape[-1])
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = w @ h + b
        if i != last:
            h = np.tanh(h)
    return float(h[0]) if h.shape[-1] == 1 else h


def forward_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass on (n, d_in); returns (n,) for 1-output nets, else (n, d_out)."""
    h = np.asarray(x, dtype=float)
    _check_input(params, h, h.shape[1])
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
    return h[:, 0] if h.shape[1] == 1 else h


def _forward_trace(params: MlpParams, x: np.ndarray):
    """Batched forward keeping post-activation values of every layer."""
    acts = [x]
    last = params.n_layers - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def grad_params(params: MlpParams, x, target: float) -> "MlpParams":
    """Exact gradient of (forward(x) - target)^2 w.r.t. every weight and bias."""
    g, _ = grad_params_batch(params, np.asarray(x, dtype=float)[None, :],
                             np.array([target], dtype=float))
    # batch of one: mean == the single-sample gradient
    return g


def grad_params_batch(params: MlpParams, X: np.ndarray, Y: np.ndarray):
    """Gradients of mean squared error over a batch; returns (grads, mse).

    Scalar-output networks only.  `grads` is an MlpParams-shaped container.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _check_input(params, X, X.shape[1])
    if params.layer_dims[-1] != 1:
        raise DimensionMismatch("parameter gradients require a scalar-output network")
    n = X.shape[0]
    acts = _forward_trace(params, X)
    resid = acts[-1][:, 0] - Y
    mse = float(np.mean(resid ** 2))
    delta = (2.0 / n) * resid[:, None]  # d(mse)/d(pre-activation of head)
    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (1.0 - acts[i] ** 2)
    return MlpParams(list(params.layer_dims), gw, gb), mse


def grad_input(params: MlpParams, x) -> np.ndarray:
    """Exact gradient of the scalar output w.r.t. the input vector."""
    return grad_input_batch(params, np.asarray(x, dtype=float)[None, :])[0]


def grad_input_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """(n, d_in) gradients of the scalar output for each row of X."""
    X = np.asarray(X, dtype=float)
    _check_input(params, X, X.shape[1])
    if params.layer_dims[-1] != 1:
        raise DimensionMismatch("input gradients require a scalar-output network")
    acts = _forward_trace(params, X)
    delta = np.ones((X.shape[0], 1))
    for i in range(params.n_layers - 1, 0, -1):
        delta = (delta @ params.weights[i]) * (1.0 - acts[i] ** 2)
    return delta @ params.weights[0]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: MlpParams, lr: float = 1e-3) -> "AdamState":
        bufs = [np.zeros_like(w) for w in params.weights] \
            + [np.zeros_like(b) for b in params.biases]
        return AdamState(lr=lr, m=[b.copy() for b in bufs], v=bufs)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState):
    """One Adam update (in place); returns (params, state)."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    tensors = params.weights + params.biases
    gs = grads.weights + grads.biases
    for i, (p, g) in enumerate(zip(tensors, gs)):
        if p.shape != g.shape:
            raise DimensionMismatch("gradient shape does not match parameters")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        p -= state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
    return params, state


def save_checkpoint(params: MlpParams, path) -> None:
    """Text checkpoint: magic+version line, dims line, then per layer one line
    of row-major weights and one line of biases (17 significant digits)."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
             " ".join(str(d) for d in params.layer_dims)]
    for w, b in zip(params.weights, params.biases):
        lines.append(" ".join(f"{v:.17g}" for v in w.ravel()))
        lines.append(" ".join(f"{v:.17g}" for v in b))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> MlpParams:
    with open(path) as f:
        lines = [ln.strip() for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise CorruptCheckpoint("empty checkpoint file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC or not head[1].startswith("v"):
        raise CorruptCheckpoint(f"bad header line {lines[0]!r}")
    if head[1] != f"v{CHECKPOINT_VERSION}":
        raise FormatVersionMismatch(
            f"checkpoint is {head[1]}, reader supports v{CHECKPOINT_VERSION}")
    if len(lines) < 2:
        raise CorruptCheckpoint("missing layer dimension line")
    try:
        dims = [int(t) for t in lines[1].split()]
    except ValueError as e:
        raise CorruptCheckpoint(f"bad dimension line: {e}") from None
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise CorruptCheckpoint(f"invalid layer dims {dims}")
    expect = 2 * (len(dims) - 1)
    body = lines[2:]
    if len(body) != expect:
        raise CorruptCheckpoint(f"expected {expect} tensor lines, found {len(body)}")
    weights, biases = [], []
    for i in range(len(dims) - 1):
        n_out, n_in = dims[i + 1], dims[i]
        try:
            w = np.array([float(t) for t in body[2 * i].split()])
            b = np.array([float(t) for t in body[2 * i + 1].split()])
        except ValueError as e:
            raise CorruptCheckpoint(f"bad float in layer {i}: {e}") from None
        if w.size != n_out * n_in or b.size != n_out:
            raise CorruptCheckpoint(f"layer {i} has wrong entry count")
        weights.append(w.reshape(n_out, n_in))
        biases.append(b)
    return MlpParams(dims, weights, biases)
