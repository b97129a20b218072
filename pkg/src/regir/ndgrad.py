"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array.  Operations on tensors record their inputs
and a backward rule on the output node; the recorded graph is the tape, and
nodes are created in execution order, so parents always precede consumers.
`backward(loss)` walks the tape in reverse topological order, accumulates
gradients into every tensor that requires them, then frees the tape (one
backward pass per graph).

Default precision is 32-bit; wrap code in `use_dtype(np.float64)` when
verifying gradients against finite differences.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_DEFAULT_DTYPE = [np.float32]


def default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


class Tensor:
    """Dense array plus optional gradient and tape linkage."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        self.values = np.asarray(values, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), dtype=self.values.dtype.type)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __getitem__(self, key):
        return narrow(self, key)

    def sum(self, axis=None):
        return sum_(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def _node(values: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    """Create an op-output tensor; the tape grows only if a parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def custom_node(values: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    """Build an op node with a hand-written backward rule (for composite ops
    whose gradient is cheaper analytically than as primitive compositions)."""
    return _node(np.asarray(values), tuple(parents), backward_fn, op)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _shape_error(op: str, *shapes) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = np.zeros_like(parent.values)
    parent.grad += grad


def backward(loss: Tensor) -> None:
    """Populate `grad` on every requires_grad tensor reachable from `loss`.

    `loss` must be a scalar.  The tape is consumed: node links are cleared
    afterwards, so each recorded graph supports exactly one backward pass.
    """
    if loss.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any requires_grad tensor")

    # Iterative topological sort; graph depth can exceed Python's recursion
    # limit for long recurrences.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    _accumulate(loss, np.ones((), dtype=loss.values.dtype))
    for node in reversed(order):
        if node._backward_fn is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is not None:
                _accumulate(parent, g)
    for node in order:
        node._parents = ()
        node._backward_fn = None


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(values, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None

    def bw(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _node(values, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        values = a.values @ b.values
    except ValueError:
        raise _shape_error("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(values, (a, b), bw, "matmul")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input list")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise _shape_error("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        pieces = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _node(values, tuple(tensors), bw, "concat")


def narrow(x: Tensor, key) -> Tensor:
    """Basic indexing/slicing; gradient scatters back into the source."""
    values = x.values[key]

    def bw(g):
        gx = np.zeros_like(x.values)
        gx[key] += g
        return (gx,)

    return _node(values, (x,), bw, "slice")


def reshape(x: Tensor, shape) -> Tensor:
    values = x.values.reshape(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _node(values, (x,), bw, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    values = x.values.transpose(axes)
    inverse = None if axes is None else np.argsort(axes)

    def bw(g):
        return (g.transpose(inverse),)

    return _node(values, (x,), bw, "transpose")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise _shape_error("embedding_lookup", table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding_lookup: id out of range for table with {table.shape[0]} rows"
        )
    values = table.values[ids]

    def bw(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node(values, (table,), bw, "embedding_lookup")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    values = np.tanh(x.values)

    def bw(g):
        return (g * (1.0 - values * values),)

    return _node(values, (x,), bw, "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    values = _sigmoid(x.values)

    def bw(g):
        return (g * values * (1.0 - values),)

    return _node(values, (x,), bw, "sigmoid")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    values = np.maximum(x.values, 0)

    def bw(g):
        return (g * (x.values > 0),)

    return _node(values, (x,), bw, "relu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * values).sum(axis=axis, keepdims=True)
        return (values * (g - dot),)

    return _node(values, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    values = shifted - lse
    probs = np.exp(values)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(values, (x,), bw, "log_softmax")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under row logits.

    `logits` is [N x C]; `targets` is an int array of length N.  With `mask`
    (0/1 array of length N) the mean runs over masked-in rows only.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise _shape_error("cross_entropy", logits.shape, targets.shape)
    n, c = logits.shape
    if n == 0:
        raise ValueError("cross_entropy: empty batch")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"cross_entropy: target out of range for {c} classes")
    if mask is None:
        weights = np.full(n, 1.0 / n, dtype=logits.values.dtype)
    else:
        mask = np.asarray(mask, dtype=logits.values.dtype)
        total = mask.sum()
        if total <= 0:
            raise ValueError("cross_entropy: mask selects no rows")
        weights = mask / total

    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    values = np.asarray(-(weights * logp[rows, targets]).sum(), dtype=logits.values.dtype)
    probs = np.exp(logp)

    def bw(g):
        gl = probs.copy()
        gl[rows, targets] -= 1.0
        gl *= weights[:, None]
        return (gl * g,)

    return _node(values, (logits,), bw, "cross_entropy")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    values = xhat * gain.values + bias.values

    def bw(g):
        gg = _unbroadcast(g * xhat, gain.shape)
        gb = _unbroadcast(g, bias.shape)
        gy = g * gain.values
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - xhat * (gy * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _node(values, (x, gain, bias), bw, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Seeded inverted dropout; identity when `training` is false or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    x = _as_tensor(x)
    keep = (rng.random(x.shape) >= p).astype(x.values.dtype) / (1.0 - p)
    values = x.values * keep

    def bw(g):
        return (g * keep,)

    return _node(values, (x,), bw, "dropout")


def conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid 1-D convolution: [B x T x Cin] * [W x Cin x Cout] -> [B x T-W+1 x Cout]."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[1]:
        raise _shape_error("conv1d", x.shape, kernel.shape)
    width = kernel.shape[0]
    t_out = x.shape[1] - width + 1
    if t_out < 1:
        raise _shape_error("conv1d", x.shape, kernel.shape)
    values = x.values[:, 0:t_out, :] @ kernel.values[0]
    for w in range(1, width):
        values = values + x.values[:, w:w + t_out, :] @ kernel.values[w]

    def bw(g):
        gx = np.zeros_like(x.values)
        gk = np.zeros_like(kernel.values)
        for w in range(width):
            window = x.values[:, w:w + t_out, :]
            gx[:, w:w + t_out, :] += g @ kernel.values[w].T
            gk[w] = np.tensordot(window, g, axes=([0, 1], [0, 1]))
        return gx, gk

    return _node(values, (x, kernel), bw, "conv1d")


def max_over_time(x: Tensor) -> Tensor:
    """Max over the time axis: [B x T x C] -> [B x C]; ties route to the first max."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise _shape_error("max_over_time", x.shape)
    idx = x.values.argmax(axis=1)
    values = np.take_along_axis(x.values, idx[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        gx = np.zeros_like(x.values)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _node(values, (x,), bw, "max_over_time")


def mean(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    values = x.values.mean(axis=axis)
    count = x.size if axis is None else x.shape[axis]

    def bw(g):
        if axis is None:
            return (np.full_like(x.values, g / count),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, x.shape).copy(),)

    return _node(np.asarray(values, dtype=x.values.dtype), (x,), bw, "mean")


def sum_(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    values = x.values.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.full_like(x.values, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(np.asarray(values, dtype=x.values.dtype), (x,), bw, "sum")


_OPS = {
    "add": lambda inputs, attrs: add(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "concat": lambda inputs, attrs: concat(inputs, **attrs),
    "slice": lambda inputs, attrs: narrow(inputs[0], attrs["index"]),
    "embedding_lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["ids"]),
    "tanh": lambda inputs, attrs: tanh(*inputs),
    "sigmoid": lambda inputs, attrs: sigmoid(*inputs),
    "relu": lambda inputs, attrs: relu(*inputs),
    "softmax": lambda inputs, attrs: softmax(inputs[0], **attrs),
    "log_softmax": lambda inputs, attrs: log_softmax(inputs[0], **attrs),
    "cross_entropy": lambda inputs, attrs: cross_entropy(inputs[0], **attrs),
    "layer_norm": lambda inputs, attrs: layer_norm(*inputs, **attrs),
    "dropout": lambda inputs, attrs: dropout(inputs[0], **attrs),
    "conv1d": lambda inputs, attrs: conv1d(*inputs),
    "max_over_time": lambda inputs, attrs: max_over_time(*inputs),
    "mean": lambda inputs, attrs: mean(inputs[0], **attrs),
    "sum": lambda inputs, attrs: sum_(inputs[0], **attrs),
}


def apply(op_kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch an op by name; the stable string-keyed surface of the engine."""
    if op_kind not in _OPS:
        raise ValueError(f"apply: unknown op_kind {op_kind!r}")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    return _OPS[op_kind](list(inputs), attrs or {})


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Per-parameter optimizer slots; `lr` may be rescheduled between steps."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def make_optimizer(kind: str = "adam", lr: float = 1e-3) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ValueError(f"make_optimizer: unknown kind {kind!r}")
    return OptimizerState(kind=kind, lr=lr)


def zero_grad(params: dict) -> None:
    for p in params.values():
        p.grad = None


def fill_missing_grads(params: dict) -> None:
    """Set grad to zeros where a loss did not touch a parameter this step."""
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.values)


def optimizer_step(state: OptimizerState, params: dict, grads: dict | None = None) -> None:
    """Update `params` in place from their gradients.

    sgd: p -= lr * g.  adam: bias-corrected first/second-moment update.
    Every registered parameter must have a gradient.
    """
    if grads is None:
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"optimizer_step: missing gradient for parameter {name!r}")
            grads[name] = p.grad
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if state.kind == "sgd":
            p.values -= state.lr * g
            continue
        m = state.m.setdefault(name, np.zeros_like(p.values))
        v = state.v.setdefault(name, np.zeros_like(p.values))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        mhat = m / (1.0 - state.beta1 ** state.t)
        vhat = v / (1.0 - state.beta2 ** state.t)
        p.values -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
