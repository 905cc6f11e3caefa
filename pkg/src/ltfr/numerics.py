"""Small dense numeric kernel with reverse-mode gradients.

Only the ops needed by the encoders and losses are provided. Every op records
a closure on the output tensor; :func:`backward` walks the recorded graph in
reverse topological order and accumulates gradients into the owning
:class:`ParameterSet`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def prelu(x, slope):
    """Scalar / elementwise PReLU: ``x`` where ``x >= 0`` else ``slope * x``."""
    if np.isscalar(x):
        return x if x >= 0 else slope * x
    x = np.asarray(x, dtype=DTYPE)
    return np.where(x >= 0, x, slope * x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "_parents", "_backward", "_param")

    def __init__(self, data, parents=(), backward_fn=None, param=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn
        self._param = param

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def requires_grad(self):
        return self._param is not None or bool(self._parents)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, fn):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data)
    return Tensor(data, parents, fn)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), fn)


def neg(a):
    def fn(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), fn)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def fn(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), fn)


def reshape(a, shape):
    def fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), fn)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)

    def fn(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), fn)


def index(a, idx):
    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(a.data[idx], (a,), fn)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                _accumulate(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def tsum(a, axis=None, keepdims=False):
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), fn)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def tprelu(x, slope):
    """PReLU with a learnable scalar slope tensor."""
    pos = x.data >= 0

    def fn(g):
        if x.requires_grad:
            _accumulate(x, np.where(pos, g, g * slope.data))
        if slope.requires_grad:
            _accumulate(slope, _unbroadcast(np.where(pos, 0.0, g * x.data), slope.shape))

    out = np.where(pos, x.data, slope.data * x.data)
    return _make(out, (x, slope), fn)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), fn)


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def fn(g):
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        if shift.requires_grad:
            _accumulate(shift, _unbroadcast(g, shift.shape))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
            _accumulate(x, gx)

    return _make(xhat * gain.data + shift.data, (x, gain, shift), fn)


def l2_normalize(x, axis=-1):
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise NonFiniteError("cannot L2-normalize a zero vector")
    y = x.data / norm

    def fn(g):
        _accumulate(x, (g - y * (g * y).sum(axis=axis, keepdims=True)) / norm)

    return _make(y, (x,), fn)


def custom(parents, value, grad_fns):
    """Wrap a value computed outside the tape with per-parent gradient closures."""
    parents = [as_tensor(p) for p in parents]

    def fn(g):
        for p, gf in zip(parents, grad_fns):
            if p.requires_grad and gf is not None:
                _accumulate(p, gf(g))

    return _make(value, parents, fn)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


@dataclass
class AttentionLayerConfig:
    model_dim: int
    num_heads: int
    ff_dim: int

    def __post_init__(self):
        if min(self.model_dim, self.num_heads, self.ff_dim) < 1:
            raise ValueError("attention dims must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")


class ParameterSet:
    """Named float64 parameters with matching gradients and optimizer state."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0
        self._live = False

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name):
        return self.values[name]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def add(self, name, value):
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=DTYPE)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def leaf(self, name):
        """A graph leaf bound to ``name``; gradients flow back into ``grads[name]``."""
        self._live = True
        return Tensor(self.values[name], param=name)

    def discard_graph(self):
        """Forget the recorded forward pass (inference-only use)."""
        self._live = False

    def zero_grad(self):
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.values[name])

    def copy(self):
        other = ParameterSet()
        for name, v in self.values.items():
            other.values[name] = v.copy()
            other.grads[name] = self.grads[name].copy()
        other.state = {k: (m.copy(), v.copy()) for k, (m, v) in self.state.items()}
        other.step = self.step
        return other

    def num_values(self):
        return sum(v.size for v in self.values.values())


def backward(params, output, upstream=None):
    """Backpropagate ``upstream`` from ``output`` into ``params.grads``.

    Gradients are accumulated, so call :meth:`ParameterSet.zero_grad` between
    steps. Raises :class:`BackwardError` when no forward pass has been recorded
    on ``params`` since the last backward.
    """
    if not params._live:
        raise BackwardError("backward called before any forward pass on these parameters")
    if upstream is None:
        if output.data.size != 1:
            raise BackwardError("upstream gradient required for non-scalar output")
        upstream = np.ones_like(output.data)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if upstream.shape != output.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match output {output.shape}")

    order = _toposort(output)
    output.grad = upstream
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._backward is not None:
            node._backward(node.grad)
        if node._param is not None and node._param in params.grads:
            params.grads[node._param] = params.grads[node._param] + node.grad
        if node is not output:
            node.grad = None
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
    params._live = False
    return params


# ---------------------------------------------------------------------------
# initialization and layers
# ---------------------------------------------------------------------------

def glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_linear(params, name, fan_in, fan_out, rng, bias=True):
    params.add(f"{name}.W", glorot(rng, fan_in, fan_out))
    if bias:
        params.add(f"{name}.b", np.zeros(fan_out))


def linear(params, name, x):
    x = as_tensor(x)
    W = params.leaf(f"{name}.W")
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"layer {name!r}: input dim {x.shape[-1]} != expected {W.shape[0]}")
    out = x @ W
    if f"{name}.b" in params:
        out = out + params.leaf(f"{name}.b")
    return out


def init_mlp(params, name, dims, rng, slope=0.25):
    """Linear layers ``dims[0] -> ... -> dims[-1]``; PReLU between them."""
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        init_linear(params, f"{name}.{i}", a, b, rng)
        if i < len(dims) - 2:
            params.add(f"{name}.{i}.slope", np.array(slope))


def mlp_layer_count(params, name):
    n = 0
    while f"{name}.{n}.W" in params.values:
        n += 1
    if n == 0:
        raise KeyError(f"no MLP registered under {name!r}")
    return n


def mlp_forward(params, x, name="mlp", final_activation=False):
    """Run the PReLU MLP registered under ``name``.

    Intermediate activations are kept on the graph for :func:`backward`.
    With ``final_activation`` the last layer is also followed by PReLU, using
    the slope ``{name}.{last}.slope`` (which must exist).
    """
    x = as_tensor(x)
    depth = mlp_layer_count(params, name)
    for i in range(depth):
        x = linear(params, f"{name}.{i}", x)
        if i < depth - 1 or final_activation:
            x = tprelu(x, params.leaf(f"{name}.{i}.slope"))
    return x


def init_attention_layer(params, name, cfg, rng):
    d = cfg.model_dim
    for proj in ("q", "k", "v", "o"):
        # a key bias only shifts every score in a row; softmax ignores it
        init_linear(params, f"{name}.{proj}", d, d, rng, bias=proj != "k")
    params.add(f"{name}.ln1.g", np.ones(d))
    params.add(f"{name}.ln1.b", np.zeros(d))
    init_linear(params, f"{name}.ff1", d, cfg.ff_dim, rng)
    params.add(f"{name}.ff1.slope", np.array(0.25))
    init_linear(params, f"{name}.ff2", cfg.ff_dim, d, rng)
    params.add(f"{name}.ln2.g", np.ones(d))
    params.add(f"{name}.ln2.b", np.zeros(d))


def attention_layer_forward(params, cfg, tokens, name="attn", return_weights=False):
    """Post-norm encoder block over tokens of shape ``(..., T, model_dim)``.

    Multi-head self-attention, residual, layer norm, PReLU feed-forward,
    residual, layer norm. ``return_weights`` also returns the attention
    probabilities with shape ``(..., heads, T, T)``.
    """
    x = as_tensor(tokens)
    d, h = cfg.model_dim, cfg.num_heads
    if x.ndim < 2 or x.shape[-1] != d:
        raise ShapeError(f"layer {name!r}: tokens {x.shape} do not end in model_dim {d}")
    lead, T = x.shape[:-2], x.shape[-2]
    dh = d // h

    def heads(t):
        t = reshape(t, lead + (T, h, dh))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return transpose(t, axes)

    q = heads(linear(params, f"{name}.q", x))
    k = heads(linear(params, f"{name}.k", x))
    v = heads(linear(params, f"{name}.v", x))
    kt_axes = tuple(range(len(lead) + 1)) + (len(lead) + 2, len(lead) + 1)
    scores = mul(matmul(q, transpose(k, kt_axes)), 1.0 / math.sqrt(dh))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, v)
    back = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    ctx = reshape(transpose(ctx, back), lead + (T, d))

    x = layer_norm(x + linear(params, f"{name}.o", ctx),
                   params.leaf(f"{name}.ln1.g"), params.leaf(f"{name}.ln1.b"))
    ff = tprelu(linear(params, f"{name}.ff1", x), params.leaf(f"{name}.ff1.slope"))
    x = layer_norm(x + linear(params, f"{name}.ff2", ff),
                   params.leaf(f"{name}.ln2.g"), params.leaf(f"{name}.ln2.b"))
    if return_weights:
        return x, weights.data
    return x


# ---------------------------------------------------------------------------
# optimizer and gradient checking
# ---------------------------------------------------------------------------

@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params, hyper=None, frozen=()):
    """One bias-corrected adaptive-moment update of every parameter."""
    hyper = hyper or AdamHyper()
    params.step += 1
    t = params.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, value in params.values.items():
        if name in frozen:
            continue
        g = params.grads[name]
        m, v = params.state.get(name, (np.zeros_like(value), np.zeros_like(value)))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        params.state[name] = (m, v)
        params.values[name] = value - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params


def _scalar(out):
    val = float(out.data) if isinstance(out, Tensor) else float(out)
    if not math.isfinite(val):
        raise NonFiniteError(f"loss is not finite: {val}")
    return val


def numeric_gradient(model_fn, params, name, eps=1e-5):
    value = params.values[name]
    grad = np.zeros_like(value)
    flat = value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _scalar(model_fn(params))
        flat[i] = orig - eps
        fm = _scalar(model_fn(params))
        flat[i] = orig
        grad.reshape(-1)[i] = (fp - fm) / (2 * eps)
    params.discard_graph()
    return grad


def gradcheck(model_fn, params, eps=1e-5, names=None, return_details=False):
    """Compare analytic and central-difference gradients of a scalar loss.

    The relative error of a parameter is ``|a - n| / max(|a|, |n|, 1e-8)``
    with ``|.|`` the Euclidean norm over that parameter's entries; the
    maximum over parameters is returned.
    """
    names = list(names or params.values)
    params.zero_grad()
    out = model_fn(params)
    _scalar(out)
    backward(params, out)
    analytic = {n: params.grads[n].copy() for n in names}
    details = {}
    for n in names:
        num = numeric_gradient(model_fn, params, n, eps)
        a = analytic[n]
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-8)
        details[n] = float(np.linalg.norm(a - num) / denom)
    worst = max(details.values()) if details else 0.0
    return (worst, details) if return_details else worst
