"""Dense feed-forward networks with hand-written reverse-mode gradients.

Parameters of a :class:`Network` live in one flat float64 buffer; each layer's
weight matrix and bias vector are views into it. Gradients use a buffer with the
same layout, so the optimizer can update every parameter with a handful of
vectorized operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when an input or parameter does not have the expected shape."""


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # chain rule through the activation, reusing the forward output where possible
    if name == "tanh":
        return grad * (1.0 - a * a)
    if name == "relu":
        return grad * (z > 0.0)
    return grad


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} incompatible with weights {self.weights.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    """Ordered chain of dense layers sharing one flat parameter buffer."""

    layers: list[DenseLayer]
    params: np.ndarray = field(repr=False)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator | None = None,
        params: np.ndarray | None = None,
    ) -> "Network":
        """Allocate a network with layer widths ``sizes``.

        ``activations`` has one entry per layer (``len(sizes) - 1``). When
        ``params`` is given the layers become views into it, otherwise a new
        zeroed buffer is allocated. With ``rng`` the weights are drawn
        Glorot-uniform and the biases zeroed.
        """
        if len(sizes) < 2:
            raise ShapeError("a network needs at least one layer")
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need exactly one activation per layer")
        total = param_count(sizes)
        if params is None:
            params = np.zeros(total)
        elif params.shape != (total,):
            raise ShapeError(f"parameter buffer has {params.size} values, expected {total}")
        views = _layer_views(params, sizes)
        layers = [DenseLayer(w, b, act) for (w, b), act in zip(views, activations)]
        if rng is not None:
            for layer in layers:
                limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
                layer.weights[...] = rng.uniform(-limit, limit, size=layer.weights.shape)
                layer.bias[...] = 0.0
        return cls(layers, params)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def layer_grads(self, grads: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer ``(dW, db)`` views into a flat gradient vector."""
        return _layer_views(grads, self.sizes)


def param_count(sizes: Sequence[int]) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


def _layer_views(buf: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    views = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = buf[offset:offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        b = buf[offset:offset + n_out]
        offset += n_out
        views.append((w, b))
    return views


def _as_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise ShapeError(f"input width {x.shape[-1]} does not match network input width {net.n_in}")
    return x, single


def forward(net: Network, x: np.ndarray, keep_cache: bool = False):
    """Evaluate ``net`` on a vector or on a batch of row vectors.

    With ``keep_cache=True`` returns ``(output, cache)`` where the cache holds
    the pre- and post-activation values needed by :func:`backward`.
    """
    a, single = _as_batch(net, x)
    cache = [a]
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = _activate(layer.activation, z)
        cache.append((z, a))
    out = a[0] if single else a
    if keep_cache:
        return out, (single, cache)
    return out


def backward(net: Network, cache, output_grad: np.ndarray, grad_buffer: np.ndarray | None = None):
    """Back-propagate ``output_grad`` through a cached forward pass.

    Returns ``(param_grads, input_grad)``. ``param_grads`` is a flat vector with
    the layout of ``net.params``; when ``grad_buffer`` is given, gradients are
    accumulated into it (and it is returned).
    """
    single, acts = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    batch = acts[0].shape[0]
    if g.shape != (batch, net.n_out):
        raise ShapeError(f"output gradient shape {g.shape} != {(batch, net.n_out)}")
    if grad_buffer is None:
        grad_buffer = np.zeros_like(net.params)
    views = _layer_views(grad_buffer, net.sizes)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        z, a = acts[i + 1]
        a_prev = acts[i][1] if i > 0 else acts[0]
        dz = _activation_grad(layer.activation, z, a, g)
        dw, db = views[i]
        dw += dz.T @ a_prev
        db += dz.sum(axis=0)
        g = dz @ layer.weights
    return grad_buffer, (g[0] if single else g)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def gaussian_nll(mean, std, target) -> float:
    """Negative log-likelihood of ``target`` under independent Gaussians, summed."""
    mean, std, target = (np.asarray(v, dtype=np.float64) for v in (mean, std, target))
    if not (mean.shape == std.shape == target.shape):
        raise ShapeError("mean, std and target must have equal shapes")
    if np.any(~(std > 0.0)):
        raise ValueError("std must be strictly positive")
    r = (target - mean) / std
    return float(np.sum(np.log(std) + 0.5 * r * r + HALF_LOG_2PI))


def gaussian_nll_grad(mean, std, target) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`gaussian_nll` with respect to ``mean`` and ``std``."""
    std = np.asarray(std, dtype=np.float64)
    diff = np.asarray(mean, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    inv_var = 1.0 / (std * std)
    d_mean = diff * inv_var
    d_std = 1.0 / std - diff * diff * inv_var / std
    return d_mean, d_std


@dataclass
class OptimizerState:
    """Adam moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _scratch: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-4,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)


def optimizer_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                   state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    if state._scratch is None or [t.shape for t in state._scratch] != [p.shape for p in params]:
        state._scratch = [np.empty_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, state._scratch):
        # in-place arithmetic; these buffers are large and this runs every step
        m *= state.beta1
        np.multiply(g, 1.0 - state.beta1, out=tmp)
        m += tmp
        v *= state.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v += tmp
        np.multiply(v, 1.0 / bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / bc1
        p -= tmp
    return state
