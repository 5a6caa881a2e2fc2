"""Small fully connected networks with hand-written analytic gradients.

Everything operates on flat float64 parameter vectors so that model state
can be uploaded, aggregated, and optimized as plain arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def param_count(sizes) -> int:
    """Number of parameters (weights + biases) for layer widths `sizes`."""
    return sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))


def init_params(sizes, seed) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    chunks = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in + fan_out))
    return np.concatenate(chunks)


@dataclass
class MLP:
    """Fully connected net: tanh hidden layers, configurable output activation.

    A channel is an MLP with one hidden layer; a linear head is an MLP with
    no hidden layer; the fusion head is a single layer with tanh output.
    """

    sizes: tuple
    out_act: str = "linear"  # "linear" or "tanh"
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ShapeError(f"invalid layer sizes {self.sizes}")
        if self.out_act not in ("linear", "tanh"):
            raise ShapeError(f"unknown output activation {self.out_act!r}")
        if self.params is None:
            self.params = np.zeros(param_count(self.sizes))
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.sizes),):
            raise ShapeError(
                f"params length {self.params.size} != expected {param_count(self.sizes)}"
            )

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def layers(self):
        """Yield (W, b) views into the flat parameter vector."""
        off = 0
        for i in range(len(self.sizes) - 1):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            w = self.params[off : off + fan_out * fan_in].reshape(fan_out, fan_in)
            off += fan_out * fan_in
            b = self.params[off : off + fan_out]
            off += fan_out
            yield w, b

    def clone(self) -> "MLP":
        return MLP(self.sizes, self.out_act, self.params.copy())


def channel(in_dim, hidden, emb_dim, seed) -> MLP:
    """Feature extractor: in -> tanh(hidden) -> emb."""
    sizes = (in_dim, hidden, emb_dim)
    return MLP(sizes, "linear", init_params(sizes, seed))


def linear_head(in_dim, out_dim, seed) -> MLP:
    sizes = (in_dim, out_dim)
    return MLP(sizes, "linear", init_params(sizes, seed))


def fusion_head(in_dim, out_dim, seed) -> MLP:
    """Feature fusion layer: single linear map with tanh output."""
    sizes = (in_dim, out_dim)
    return MLP(sizes, "tanh", init_params(sizes, seed))


def forward_batch(model: MLP, x: np.ndarray):
    """Forward pass on a (B, in_dim) batch; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with in_dim {model.in_dim}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input to forward")
    acts = [x]
    h = x
    layer_list = list(model.layers())
    for i, (w, b) in enumerate(layer_list):
        z = h @ w.T + b
        if i < len(layer_list) - 1:
            h = np.tanh(z)
        elif model.out_act == "tanh":
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    return h, acts


def forward(model: MLP, x: np.ndarray) -> np.ndarray:
    """Forward pass on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward expects a 1-D input vector")
    y, _ = forward_batch(model, x[None, :])
    return y[0]


def backward_batch(model: MLP, cache, dy: np.ndarray):
    """Backprop an upstream gradient through the net.

    Returns (dparams, dx): gradient w.r.t. the flat parameter vector and
    w.r.t. the batch input.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != cache[-1].shape:
        raise ShapeError(f"upstream gradient shape {dy.shape} != output {cache[-1].shape}")
    layer_list = list(model.layers())
    n_layers = len(layer_list)
    dparams = np.zeros_like(model.params)
    # Slice offsets mirror MLP.layers ordering.
    offsets = []
    off = 0
    for w, b in layer_list:
        offsets.append((off, off + w.size, off + w.size + b.size))
        off += w.size + b.size

    grad = dy
    for i in range(n_layers - 1, -1, -1):
        w, _ = layer_list[i]
        out = cache[i + 1]
        if i < n_layers - 1 or model.out_act == "tanh":
            grad = grad * (1.0 - out * out)
        w_lo, b_lo, b_hi = offsets[i]
        dparams[w_lo:b_lo] = (grad.T @ cache[i]).ravel()
        dparams[b_lo:b_hi] = grad.sum(axis=0)
        grad = grad @ w
    return dparams, grad


def backward(model: MLP, x: np.ndarray, dy: np.ndarray):
    """Single-input convenience wrapper around backward_batch."""
    x = np.asarray(x, dtype=np.float64)
    _, cache = forward_batch(model, x[None, :])
    dparams, dx = backward_batch(model, cache, np.asarray(dy, dtype=np.float64)[None, :])
    return dparams, dx[0]


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """One plain gradient step: params - lr * grads."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"params shape {params.shape} != grads shape {grads.shape}")
    if lr < 0:
        raise DomainError("learning rate must be nonnegative")
    return params - lr * grads


def finite_difference_grad(loss_fn, params: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss over a flat parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for i in range(params.size):
        p_hi = params.copy()
        p_hi[i] += step
        p_lo = params.copy()
        p_lo[i] -= step
        grad[i] = (loss_fn(p_hi) - loss_fn(p_lo)) / (2.0 * step)
    return grad
