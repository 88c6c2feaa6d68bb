"""Float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active (``with Tape(): ...``)
and touching at least one tensor with ``requires_grad`` are recorded in
execution order.  :func:`backward` replays that record in reverse and
accumulates ``d loss / d node`` into each node's ``grad``.

Binary operations demand equal shapes.  The only broadcasting forms are
:func:`add_bias` and :func:`broadcast_to`, both with explicit reductions in
their backward rules.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, EvaluationError

__all__ = [
    "Tensor", "Tape", "tensor", "backward", "grad_check",
    "matmul", "conv2d", "avg_pool2d", "elementwise",
    "tanh", "sigmoid", "relu", "square", "add_const", "mul_const",
    "add", "mul", "sub", "div", "absolute", "log_clamped",
    "add_bias", "broadcast_to", "reshape", "flatten", "getitem",
    "total", "mean",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(mul_const(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_const(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else mul_const(self, 1.0 / other)

    def __neg__(self):
        return mul_const(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(data, requires_grad=False):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


class Tape:
    """Ordered record of executed primitives.

    Each entry is ``(output, inputs, vjp)`` where ``vjp`` maps the output
    gradient to one gradient per input (``None`` for inputs not needing one).
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss):
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced under this tape")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, vjp in reversed(self.records):
            if out.grad is None:
                continue
            for inp, g in zip(inputs, vjp(out.grad)):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g.copy() if inp.grad is None else inp.grad + g


def backward(loss):
    """Fill ``grad`` of every node on the tape that produced ``loss``."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise ContractError("loss was not produced under an active tape")
    loss._tape.backward(loss)


def _result(data, inputs, vjp):
    out = Tensor(data)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        tape = _ACTIVE[-1]
        out.requires_grad = True
        out._tape = tape
        tape.records.append((out, inputs, vjp))
    return out


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _result(A @ B, (a, b), vjp)


def _windows(xp, stride, ho, wo):
    # (N, C, Ho, Wo, 3, 3) view over the padded input
    v = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    return v[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def conv2d(x, kernels, stride=1):
    """3x3 cross-correlation with zero padding 1.

    ``x`` is ``(C, H, W)`` or batched ``(N, C, H, W)``; ``kernels`` is
    ``(C_out, C_in, 3, 3)``.  Output spatial size is ``ceil(H / stride)``.
    """
    if stride not in (1, 2):
        raise ConfigError(f"conv2d: stride must be 1 or 2, got {stride}")
    unbatched = x.data.ndim == 3
    X = x.data[None] if unbatched else x.data
    K = kernels.data
    if X.ndim != 4 or K.ndim != 4 or K.shape[2:] != (3, 3) or K.shape[1] != X.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    n, c, h, w = X.shape
    if h < 3 or w < 3:
        raise DimensionError(f"conv2d: spatial size {h}x{w} below 3x3")
    co = K.shape[0]
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.pad(X, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _windows(xp, stride, ho, wo).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)
    kmat = K.reshape(co, c * 9)
    out = (cols @ kmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    if unbatched:
        out = out[0]

    def vjp(g):
        g4 = g[None] if unbatched else g
        gflat = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, co)
        gk = (gflat.T @ cols).reshape(K.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gflat @ kmat).reshape(n, ho, wo, c, 3, 3).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j]
            gx = gxp[:, :, 1:-1, 1:-1]
            if unbatched:
                gx = gx[0]
        return gx, gk

    return _result(np.ascontiguousarray(out), (x, kernels), vjp)


def avg_pool2d(x, size=2):
    """Non-overlapping ``size x size`` mean pooling over the last two axes."""
    X = x.data
    h, w = X.shape[-2:]
    if h % size or w % size:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by {size}")
    lead = X.shape[:-2]
    out = X.reshape(*lead, h // size, size, w // size, size).mean(axis=(-3, -1))

    def vjp(g):
        g = np.repeat(np.repeat(g, size, axis=-2), size, axis=-1)
        return (g / (size * size),)

    return _result(out, (x,), vjp)


# -- elementwise ------------------------------------------------------------

def tanh(x):
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    mask = x.data > 0.0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def square(x):
    X = x.data
    return _result(X * X, (x,), lambda g: (2.0 * g * X,))


def absolute(x):
    X = x.data
    return _result(np.abs(X), (x,), lambda g: (g * np.sign(X),))


def log_clamped(x, floor=1e-12):
    """``log(max(x, floor))``; zero gradient where the floor is active."""
    X = x.data
    live = X > floor
    safe = np.where(live, X, floor)
    return _result(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


def add_const(x, c):
    return _result(x.data + c, (x,), lambda g: (g,))


def mul_const(x, c):
    return _result(x.data * c, (x,), lambda g: (g * c,))


def add(a, b):
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A))


def div(a, b):
    _same_shape(a, b, "div")
    A, B = a.data, b.data
    Y = A / B
    return _result(Y, (a, b), lambda g: (g / B, -g * Y / B))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "square": square}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(x, fn, other=None):
    """Dispatch by name.  ``other`` is a constant for add-const/mul-const and
    a tensor for the binary forms."""
    if fn in _UNARY:
        return _UNARY[fn](x)
    if fn in _BINARY:
        if not isinstance(other, Tensor):
            raise DimensionError(f"{fn} needs a second tensor")
        return _BINARY[fn](x, other)
    if fn == "add-const":
        return add_const(x, float(other))
    if fn == "mul-const":
        return mul_const(x, float(other))
    raise ConfigError(f"unknown elementwise function {fn!r}")


# -- shape plumbing ---------------------------------------------------------

def add_bias(x, b):
    """Add a per-feature vector along axis 1 (dense rows or conv channels)."""
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match axis 1 of {x.shape}")
    view = (1, -1) + (1,) * (x.data.ndim - 2)
    axes = (0,) + tuple(range(2, x.data.ndim))
    return _result(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=axes)))


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.data.ndim != len(shape):
        raise DimensionError(f"broadcast_to: rank of {x.shape} differs from {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(x.shape, shape)) if s != t)
    if any(x.shape[i] != 1 for i in axes):
        raise DimensionError(f"broadcast_to: cannot expand {x.shape} to {shape}")
    out = np.broadcast_to(x.data, shape).copy()
    return _result(out, (x,), lambda g: (g.sum(axis=axes, keepdims=True),))


def reshape(x, shape):
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def flatten(x):
    """Keep axis 0, merge the rest."""
    return reshape(x, (x.shape[0], -1))


def getitem(x, key):
    """Basic (non-fancy) indexing."""
    src = x.shape
    out = x.data[key]

    def vjp(g):
        gx = np.zeros(src)
        gx[key] = g
        return (gx,)

    return _result(np.array(out, dtype=np.float64), (x,), vjp)


def total(x):
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x, axis=None):
    if axis is None:
        n = x.data.size
        return _result(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))
    n = x.shape[axis]
    src = x.shape
    return _result(
        x.data.mean(axis=axis), (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), src) / n,),
    )


# -- verification -----------------------------------------------------------

def grad_check(f, x, eps=1e-5, sample=None, rng=None, skip=None):
    """Largest relative disagreement between taped and central-difference
    gradients of the scalar function ``f`` at ``x``.

    ``sample`` limits the comparison to that many randomly chosen elements
    (drawn from ``rng``); by default every element is checked.  ``skip``,
    if given, is called with the two probe points of an element and returns
    True when the pair straddles a non-differentiable point of ``f``.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape():
        y = f(probe)
        backward(y)
    auto = np.zeros_like(base) if probe.grad is None else probe.grad
    if not np.all(np.isfinite(auto)):
        raise EvaluationError("taped gradient is non-finite")

    flat = base.reshape(-1)
    idx = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        rng = np.random.default_rng(0) if rng is None else rng
        idx = np.sort(rng.choice(flat.size, size=sample, replace=False))

    def value(v):
        with np.errstate(all="ignore"):
            out = float(f(Tensor(v.reshape(base.shape))).data)
        if not np.isfinite(out):
            raise EvaluationError("function is non-finite at a perturbed point")
        return out

    worst = 0.0
    auto_flat = auto.reshape(-1)
    for i in idx:
        plus = flat.copy()
        plus[i] += eps
        minus = flat.copy()
        minus[i] -= eps
        if skip is not None and skip(plus.reshape(base.shape), minus.reshape(base.shape)):
            continue
        fd = (value(plus) - value(minus)) / (2.0 * eps)
        ga = auto_flat[i]
        worst = max(worst, abs(ga - fd) / max(1e-8, abs(ga) + abs(fd)))
    return worst
