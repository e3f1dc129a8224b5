"""Dense float64 tensors with reverse-mode automatic differentiation.

The whole package computes in float64: the sizes involved are tiny, and the
symmetry test suite relies on tolerances (1e-9 and tighter) that float32
cannot sustain. Tensors are immutable after creation except for their `grad`
buffer; a tape (the chain of `_parents` / `_backward` closures) belongs to a
single forward pass and is consumed by `backward()`.
"""

from __future__ import annotations

import math

import numpy as np

ELEMENTWISE_UNARY = (
    "relu", "gelu", "tanh", "sigmoid", "leaky_relu", "sin", "exp", "log", "neg",
)
ELEMENTWISE_BINARY = ("add", "sub", "mul", "div")

_LEAKY_SLOPE = 0.01
_STD_EPS = 1e-8
# tanh-form gelu; smooth everywhere so finite differences agree with the
# analytic derivative without special-casing.
_GELU_C = math.sqrt(2.0 / math.pi)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        raise TypeError("expected raw array data, got a Tensor")
    return np.asarray(x, dtype=np.float64, order="C")


class Tensor:
    """A dense float64 array plus an optional gradient and tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._spent = False

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward_fn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._spent = False
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def __getitem__(self, key):
        return _slice(self, key)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy trailing-dim broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcast-compatible"
        ) from None


# -- binary elementwise ops ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g, out):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g, out):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g, out):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._from_op(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def backward(g, out):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return Tensor._from_op(out_data, (a, b), backward)


# -- unary elementwise ops -------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g, out):
        return (g * (a.data > 0.0),)

    return Tensor._from_op(out_data, (a,), backward)


def leaky_relu(a: Tensor) -> Tensor:
    out_data = np.where(a.data > 0.0, a.data, _LEAKY_SLOPE * a.data)

    def backward(g, out):
        return (g * np.where(a.data > 0.0, 1.0, _LEAKY_SLOPE),)

    return Tensor._from_op(out_data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g, out):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return Tensor._from_op(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g, out):
        return (g * (1.0 - out.data * out.data),)

    return Tensor._from_op(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g, out):
        return (g * out.data * (1.0 - out.data),)

    return Tensor._from_op(out_data, (a,), backward)


def sin(a: Tensor) -> Tensor:
    out_data = np.sin(a.data)

    def backward(g, out):
        return (g * np.cos(a.data),)

    return Tensor._from_op(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g, out):
        return (g * out.data,)

    return Tensor._from_op(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g, out):
        return (g / a.data,)

    return Tensor._from_op(out_data, (a,), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g, out):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g, out):
        return (g * 0.5 / out.data,)

    return Tensor._from_op(out_data, (a,), backward)


_UNARY = {
    "relu": relu,
    "gelu": gelu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "leaky_relu": leaky_relu,
    "sin": sin,
    "exp": exp,
    "log": log,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_id: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name; binary ops broadcast trailing dims."""
    if op_id in _BINARY:
        if b is None:
            raise ValueError(f"elementwise: {op_id!r} needs two operands")
        return _BINARY[op_id](a, b)
    if op_id in _UNARY:
        if b is not None:
            raise ValueError(f"elementwise: {op_id!r} takes a single operand")
        return _UNARY[op_id](a)
    raise ValueError(f"elementwise: unknown op id {op_id!r}")


# -- matmul ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul: expected 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ, {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward(g, out):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(out_data, (a, b), backward)


# -- reductions --------------------------------------------------------------------


def _norm_axis(a: Tensor, axis):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not -a.data.ndim <= ax < a.data.ndim:
            raise ValueError(f"reduce: axis {ax} out of range for rank {a.data.ndim}")
        if a.data.shape[ax] == 0:
            raise ValueError(f"reduce: axis {ax} has zero extent")
    if a.data.size == 0:
        raise ValueError("reduce: cannot reduce an empty tensor")
    return axes


def rsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(a, axis)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g, out):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def rmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(a, axis)
    out_data = a.data.mean(axis=axes, keepdims=keepdims)
    count = a.data.size if axes is None else int(np.prod([a.data.shape[ax] for ax in axes]))

    def backward(g, out):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.data.shape).copy(),)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def rmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the first argmax."""
    axes = _norm_axis(a, axis)
    if axes is not None and len(axes) != 1:
        raise ValueError("reduce: max supports a single axis")
    ax = None if axes is None else axes[0]
    out_data = a.data.max(axis=ax, keepdims=keepdims)

    def backward(g, out):
        if ax is None:
            grad = np.zeros_like(a.data)
            grad.flat[int(a.data.argmax())] = float(g)
            return (grad,)
        gk = g if keepdims else np.expand_dims(g, ax)
        idx = np.expand_dims(a.data.argmax(axis=ax), ax)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, np.take_along_axis(np.asarray(gk), np.zeros_like(idx), ax), ax)
        return (grad,)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


def rstd(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation, sqrt(var + 1e-8); never NaN on constants."""
    axes = _norm_axis(a, axis)
    mu = a.data.mean(axis=axes, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=axes, keepdims=True)
    s = np.sqrt(var + _STD_EPS)
    out_data = s if keepdims else np.squeeze(s, axis=axes) if axes is not None else np.asarray(s.reshape(()))
    count = a.data.size if axes is None else int(np.prod([a.data.shape[ax] for ax in axes]))

    def backward(g, out):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.asarray(g) * (a.data - mu) / (count * s),)

    return Tensor._from_op(np.asarray(out_data), (a,), backward)


_REDUCE = {"sum": rsum, "mean": rmean, "max": rmax, "std": rstd}


def reduce(op_id: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if op_id not in _REDUCE:
        raise ValueError(f"reduce: unknown op id {op_id!r}")
    return _REDUCE[op_id](a, axis=axis, keepdims=keepdims)


# -- shape and indexing ops ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g, out):
        return (g.reshape(a.data.shape),)

    return Tensor._from_op(out_data, (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inv = None if axes is None else np.argsort(axes)

    def backward(g, out):
        return (g.transpose(inv),)

    return Tensor._from_op(out_data, (a,), backward)


def _slice(a: Tensor, key) -> Tensor:
    out_data = np.ascontiguousarray(a.data[key])

    def backward(g, out):
        grad = np.zeros_like(a.data)
        grad[key] = g
        return (grad,)

    return Tensor._from_op(out_data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, out):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return Tensor._from_op(out_data, tensors, backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows a[idx] along axis 0; scatter-adds the gradient back."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = np.ascontiguousarray(a.data[idx])

    def backward(g, out):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return Tensor._from_op(out_data, (a,), backward)


def segment_sum(values: Tensor, idx, num_segments: int) -> Tensor:
    """Sum rows of `values` into `num_segments` buckets given by `idx`.

    Accumulation follows the order of `idx`; callers keep edge lists sorted
    by (destination, source) so reductions are reproducible.
    """
    idx = np.asarray(idx, dtype=np.int64)
    out_data = np.zeros((num_segments,) + values.data.shape[1:], dtype=np.float64)
    np.add.at(out_data, idx, values.data)

    def backward(g, out):
        return (np.ascontiguousarray(g[idx]),)

    return Tensor._from_op(out_data, (values,), backward)


def segment_mean(values: Tensor, idx, num_segments: int) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    counts = np.bincount(idx, minlength=num_segments).astype(np.float64)
    safe = np.maximum(counts, 1.0).reshape((num_segments,) + (1,) * (values.data.ndim - 1))
    total = segment_sum(values, idx, num_segments)
    return mul(total, Tensor(1.0 / safe))


def segment_max(values: Tensor, idx, num_segments: int) -> Tensor:
    """Per-segment max with zeros for empty segments; grad goes to the first argmax."""
    idx = np.asarray(idx, dtype=np.int64)
    tail = values.data.shape[1:]
    out_data = np.full((num_segments,) + tail, -np.inf)
    np.maximum.at(out_data, idx, values.data)
    empty = np.isinf(out_data)
    out_data[empty] = 0.0

    def backward(g, out):
        # first (lowest row index) occurrence of the max within each segment
        winner = np.full((num_segments,) + tail, values.data.shape[0], dtype=np.int64)
        rows = np.broadcast_to(
            np.arange(values.data.shape[0]).reshape((-1,) + (1,) * len(tail)),
            values.data.shape,
        )
        hit = values.data == out.data[idx]
        cand = np.where(hit, rows, values.data.shape[0])
        np.minimum.at(winner, idx, cand)
        grad = np.zeros_like(values.data)
        gmask = ~empty & (winner < values.data.shape[0])
        if tail:
            seg_idx = np.nonzero(gmask)
            grad[(winner[gmask],) + seg_idx[1:]] += g[seg_idx]
        else:
            grad[winner[gmask]] += g[gmask]
        return (grad,)

    return Tensor._from_op(out_data, (values,), backward)


# -- convolution and pooling ---------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, zero-padded 'same' 2-d convolution (cross-correlation).

    x: (B, C, H, W), w: (O, C, kh, kw) with odd kh, kw; bias: (O,).
    """
    B, C, H, W = x.data.shape
    O, C2, kh, kw = w.data.shape
    if C != C2:
        raise ValueError(f"conv2d: channel mismatch, input {C} vs kernel {C2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d: kernels must have odd extents")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # (B, C, H, W, kh, kw) -> (B*H*W, C*kh*kw)
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, C * kh * kw)
    wmat = w.data.reshape(O, C * kh * kw)
    out = cols2 @ wmat.T
    if bias is not None:
        out = out + bias.data
    out_data = np.ascontiguousarray(out.reshape(B, H, W, O).transpose(0, 3, 1, 2))

    def backward(g, out_t):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, O)
        dw = (g2.T @ cols2).reshape(O, C, kh, kw)
        # dX: correlate the upstream gradient with the flipped, transposed kernel
        wol = np.ascontiguousarray(w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gcols = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
        gcols2 = np.ascontiguousarray(gcols.transpose(0, 2, 3, 1, 4, 5)).reshape(
            B * H * W, O * kh * kw
        )
        dx = (gcols2 @ wol.reshape(C, O * kh * kw).T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
        grads = [np.ascontiguousarray(dx), dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out_data, parents, backward)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; identity on 1 x 1 maps."""
    B, C, H, W = x.data.shape
    if H == 1 and W == 1:
        return x
    if H % k or W % k:
        raise ValueError(f"avg_pool2d: spatial dims ({H},{W}) not divisible by {k}")
    out_data = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def backward(g, out):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out_data), (x,), backward)


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int] = (1, 1)) -> Tensor:
    """Average pooling to a target spatial size that divides the input."""
    B, C, H, W = x.data.shape
    oh, ow = out_hw
    if H % oh or W % ow:
        raise ValueError(f"adaptive_avg_pool2d: ({H},{W}) not divisible by ({oh},{ow})")
    fh, fw = H // oh, W // ow
    out_data = x.data.reshape(B, C, oh, fh, ow, fw).mean(axis=(3, 5))

    def backward(g, out):
        gx = np.repeat(np.repeat(g, fh, axis=2), fw, axis=3) / (fh * fw)
        return (gx,)

    return Tensor._from_op(np.ascontiguousarray(out_data), (x,), backward)


# -- composites ------------------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, rsum(e, axis=axis, keepdims=True))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    lse = log(rsum(exp(shifted), axis=axis, keepdims=True))
    return sub(shifted, lse)


def layer_norm(a: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    mu = rmean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = rmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, Tensor(eps))))
    return add(mul(normed, gain), shift)


def dropout(a: Tensor, rate: float, rng: "Rng") -> Tensor:
    """Inverted dropout; call only in training mode with an explicit stream."""
    if rate <= 0.0:
        return a
    mask = (rng.uniform(size=a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


# -- backward pass -----------------------------------------------------------------------


def backward(loss: Tensor):
    """Backpropagate from a scalar loss; consumes the tape it touches."""
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if loss._spent:
        raise RuntimeError("backward: tape already consumed; rebuild the forward pass")

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
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        if node._spent:
            raise RuntimeError("backward: tape already consumed; rebuild the forward pass")
        node._spent = True
        parent_grads = node._backward(g, node)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] += pg
            else:
                grads[id(p)] = pg
    loss._spent = True


# -- deterministic RNG ----------------------------------------------------------------------


class Rng:
    """Counter-based deterministic random stream (Philox under the hood).

    The (seed, stream) pair fully determines the sequence, so independent
    workers can derive non-overlapping streams from a single seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=[self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF])
        )

    def derive(self, index: int) -> "Rng":
        """A fresh independent stream; derivable repeatedly and reproducibly."""
        return Rng(self.seed, self.stream * 1_000_003 + int(index) + 1)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, size=None, replace=True):
        return self._gen.choice(seq, size=size, replace=replace)
