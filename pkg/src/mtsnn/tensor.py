"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a flat numpy array (float32 for training, float64 for the
verification suites) and optionally participate in a gradient tape.  The
tape is built eagerly during the forward pass: every differentiable op
stores its parent tensors and a closure mapping the upstream gradient to
per-parent gradients.  :func:`backward` walks the tape once in reverse
topological order, accumulating gradients additively across fan-out.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes, a scalar operand, or a trailing-shape operand broadcast over the
leading batch axes (e.g. ``[N, out] + [out]`` for a bias).  Anything else
must be reshaped explicitly.

Every op reports exact scalar multiply/add/compare counts to
:mod:`mtsnn.counting` while a counting scope is active.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import counting


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


FLOAT_DTYPES = (np.float32, np.float64)


def _check_dtype(arr: np.ndarray, op: str) -> None:
    if arr.dtype not in FLOAT_DTYPES:
        raise TypeError(f"{op}: expected float32 or float64 data, got {arr.dtype}")


class Tensor:
    """A dense array plus an optional link into the gradient tape.

    `requires_grad` marks leaves (parameters) and propagates through ops;
    detached tensors never receive gradient.  Data is treated as immutable
    after construction; the optimizer is the single sanctioned writer and
    only mutates parameter data between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op})"

    # operator sugar; non-Tensor operands are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out._op = op
    return out


# ---------------------------------------------------------------------------
# elementwise binary ops with narrow broadcasting
# ---------------------------------------------------------------------------


def _broadcast_kind(a_shape, b_shape, op: str) -> int:
    """0: equal, 1: b broadcasts into a, -1: a broadcasts into b."""
    if a_shape == b_shape:
        return 0
    if _fits(b_shape, a_shape):
        return 1
    if _fits(a_shape, b_shape):
        return -1
    raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} are not compatible")


def _fits(small, big) -> bool:
    """True when `small` is a scalar or matches the trailing dims of `big`."""
    if int(np.prod(small, dtype=np.int64)) == 1:
        return True
    return len(small) < len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _reduce_to(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of the broadcast above)."""
    if grad.shape == tuple(shape):
        return grad
    if int(np.prod(shape, dtype=np.int64)) == 1:
        return grad.sum(dtype=grad.dtype).reshape(shape)
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)), dtype=grad.dtype)


def _binary(a: Tensor, b: Tensor, op: str, fwd, bwd_a, bwd_b) -> Tensor:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")
    _broadcast_kind(a.shape, b.shape, op)
    out_data = fwd(a.data, b.data)

    def backward(g):
        ga = _reduce_to(bwd_a(g, a.data, b.data, out_data), a.shape) if a.requires_grad else None
        gb = _reduce_to(bwd_b(g, a.data, b.data, out_data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out_data, (a, b), backward, op)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _binary(a, b, "add", lambda x, y: x + y,
                  lambda g, x, y, o: g, lambda g, x, y, o: g)
    counting.record("add", adds=out.size)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _binary(a, b, "sub", lambda x, y: x - y,
                  lambda g, x, y, o: g, lambda g, x, y, o: -g)
    counting.record("sub", adds=out.size)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _binary(a, b, "mul", lambda x, y: x * y,
                  lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)
    counting.record("mul", mults=out.size)
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = _binary(a, b, "div", lambda x, y: x / y,
                  lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y))
    counting.record("div", mults=out.size)
    return out


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    counting.record("relu", cmps=a.size)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# matmul / shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul: mixed dtypes {a.dtype} and {b.dtype}")
    m, k = a.shape
    n = b.shape[1]
    counting.record("matmul", mults=m * n * k, adds=m * n * (k - 1))
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(out_data, (a, b), backward, "matmul")


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d: expected 2-d tensor, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T.copy(),), "transpose2d")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def slice0(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice rows [start:stop) along axis 0."""
    if not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice0: range [{start}:{stop}) out of bounds for shape {a.shape}")
    if start == 0 and stop == a.shape[0]:
        return a

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), backward, "slice0")


def concat0(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    if not parts:
        raise ShapeError("concat0: empty input list")
    if len(parts) == 1:
        return parts[0]
    tail = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != tail:
            raise ShapeError(f"concat0: trailing shapes differ: {parts[0].shape} vs {p.shape}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat0")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    counting.record("sum", adds=max(a.size - 1, 0))
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),), "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.size
    counting.record("mean", adds=max(n - 1, 0), mults=1)
    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                 lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype),), "mean")


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax for a [N, C] tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"log_softmax: expected [N, C] tensor, got shape {a.shape}")
    n, c = a.shape
    counting.record("log_softmax", adds=2 * n * c + n * (c - 1), cmps=n * (c - 1))
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - log_z
    softmax = np.exp(out_data)

    def backward(g):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _make(out_data.astype(a.dtype), (a,), backward, "log_softmax")


def pick(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select a[i, idx[i]] for each row; used for label lookups."""
    if a.data.ndim != 2:
        raise ShapeError(f"pick: expected [N, C] tensor, got shape {a.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise ShapeError(f"pick: index shape {idx.shape} does not match rows of {a.shape}")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= a.shape[1]):
        raise IndexError(f"pick: label out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[rows, idx] = g
        return (full,)

    return _make(a.data[rows, idx].copy(), (a,), backward, "pick")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _conv_geometry(h, w, kh, kw, stride, padding, op):
    if padding == "valid":
        ph = pw = 0
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"{op}: kernel ({kh},{kw}) larger than input ({h},{w})")
    elif padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
    else:
        raise ValueError(f"{op}: padding must be 'same' or 'valid', got {padding!r}")
    return oh, ow, ph, pw


def _pad_input(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def _col2im(dcols, xp_shape, kh, kw, stride, oh, ow):
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
    return dxp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-d convolution (cross-correlation) of [N,Cin,H,W] with [Cout,Cin,kh,kw].

    Row-major im2col with a single matmul keeps the summation order fixed
    for run-to-run determinism.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match kernel {w.shape}")
    if x.dtype != w.dtype:
        raise TypeError(f"conv2d: mixed dtypes {x.dtype} and {w.dtype}")
    n, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    oh, ow, ph, pw = _conv_geometry(h, width, kh, kw, stride, padding, "conv2d")
    counting.record("conv2d",
                    mults=n * cout * oh * ow * cin * kh * kw,
                    adds=n * cout * oh * ow * (cin * kh * kw - 1))

    xp = _pad_input(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out2 = cols2 @ wmat.T
    out_data = out2.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2).copy()

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
        gw = (g2.T @ cols2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols2 = g2 @ wmat
            dcols = dcols2.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, oh, ow)
            gx = dxp[:, :, ph // 2:ph // 2 + h, pw // 2:pw // 2 + width]
            if ph or pw:
                gx = gx.copy()
        return gx, gw

    return _make(out_data, (x, w), backward, "conv2d")


def avgpool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling; spatial dims must divide by k."""
    if x.data.ndim != 4:
        raise ShapeError(f"avgpool2d: expected 4-d input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avgpool2d: input {x.shape} not divisible by window {k}")
    oh, ow = h // k, w // k
    counting.record("avgpool2d", adds=n * c * oh * ow * (k * k - 1), mults=n * c * oh * ow)
    # slice-sum over the k*k window taps; faster than a multi-axis mean
    acc = x.data[:, :, 0:h:k, 0:w:k].copy()
    for i in range(k):
        for j in range(k):
            if i == 0 and j == 0:
                continue
            acc += x.data[:, :, i:h:k, j:w:k]
    inv = np.asarray(1.0 / (k * k), dtype=x.dtype)
    out_data = acc * inv

    def backward(g):
        gx = np.empty((n, c, oh, k, ow, k), dtype=g.dtype)
        gx[:] = (g * inv)[:, :, :, None, :, None]
        return (gx.reshape(x.shape),)

    return _make(out_data, (x,), backward, "avgpool2d")


def maxpool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max pooling; ties route to the first maximum."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-d input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"maxpool2d: input {x.shape} not divisible by window {k}")
    oh, ow = h // k, w // k
    counting.record("maxpool2d", cmps=n * c * oh * ow * (k * k - 1))
    windows = (x.data.reshape(n, c, oh, k, ow, k)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, oh, ow, k * k))
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((n, c, oh, ow, k * k), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = (gw.reshape(n, c, oh, ow, k, k)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(x.shape))
        return (gx,)

    return _make(out_data.copy(), (x,), backward, "maxpool2d")


def voting(x: Tensor, group: int) -> Tensor:
    """Average consecutive groups of `group` columns of a [N, g*c] tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"voting: expected [N, g*c] tensor, got shape {x.shape}")
    n, width = x.shape
    if width % group:
        raise ShapeError(f"voting: width {width} not divisible by group size {group}")
    c = width // group
    counting.record("voting", adds=n * c * (group - 1), mults=n * c)
    out_data = x.data.reshape(n, c, group).mean(axis=2)

    def backward(g):
        gx = np.empty((n, c, group), dtype=g.dtype)
        gx[:] = (g / group)[:, :, None]
        return (gx.reshape(x.shape),)

    return _make(out_data.astype(x.dtype), (x,), backward, "voting")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def _bn_axes(shape):
    if len(shape) == 2:
        return (0,)
    if len(shape) == 4:
        return (0, 2, 3)
    raise ShapeError(f"batchnorm: expected [N,C] or [N,C,H,W] input, got shape {shape}")


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Train-mode batch normalization over all non-channel axes.

    Returns (out, batch_mean, batch_var); the statistics are plain arrays
    using the biased variance, for the caller to fold into running stats.
    """
    axes = _bn_axes(x.shape)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta shapes {gamma.shape}/{beta.shape} "
                         f"do not match {c} channels")
    m = x.size // c
    counting.record("batchnorm", adds=2 * x.size + 2 * c * (m - 1), mults=3 * x.size + 3 * c)

    expand = (1, c) + (1,) * (len(x.shape) - 2)
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(expand)) * inv_std.reshape(expand)
    out_data = gamma.data.reshape(expand) * xhat + beta.data.reshape(expand)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gm = g.mean(axis=axes).reshape(expand)
            gxm = (g * xhat).mean(axis=axes).reshape(expand)
            gx = (gamma.data.reshape(expand) * inv_std.reshape(expand)
                  * (g - gm - xhat * gxm))
            gx = gx.astype(x.dtype)
        return gx, ggamma, gbeta

    out = _make(out_data.astype(x.dtype), (x, gamma, beta), backward, "batchnorm")
    return out, mean.astype(x.dtype), var.astype(x.dtype)


def channel_affine(x: Tensor, scale: np.ndarray, shift: np.ndarray) -> Tensor:
    """Per-channel y = scale * x + shift with constant (non-learnable) factors.

    Used for eval-mode batch normalization with running statistics.
    """
    c = x.shape[1]
    expand = (1, c) + (1,) * (len(x.shape) - 2)
    counting.record("channel_affine", mults=x.size, adds=x.size)
    scale = scale.reshape(expand).astype(x.dtype)
    shift = shift.reshape(expand).astype(x.dtype)
    return _make(scale * x.data + shift, (x,), lambda g: (g * scale,), "channel_affine")


# ---------------------------------------------------------------------------
# custom-gradient primitives
# ---------------------------------------------------------------------------


def custom_grad(forward: Callable[[np.ndarray], np.ndarray],
                backward: Callable[[np.ndarray], np.ndarray],
                name: str = "custom"):
    """Build a primitive with a user-defined backward rule.

    `forward` maps the input array to an identically shaped output array.
    During the backward pass the upstream gradient is multiplied
    elementwise by ``backward(input)``, overriding whatever derivative the
    forward computation would have had.
    """

    def apply(x: Tensor) -> Tensor:
        out_data = forward(x.data)
        out_data = np.asarray(out_data, dtype=x.dtype)
        if out_data.shape != x.shape:
            raise ShapeError(f"{name}: forward produced shape {out_data.shape} "
                             f"for input shape {x.shape}")

        def bw(g):
            local = np.asarray(backward(x.data), dtype=x.dtype)
            if local.shape != x.shape:
                raise ShapeError(f"{name}: backward produced shape {local.shape} "
                                 f"for input shape {x.shape}")
            return (g * local,)

        return _make(out_data, (x,), bw, name)

    return apply


# ---------------------------------------------------------------------------
# tape traversal
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode sweep from a scalar loss.

    Returns the gradient for every reachable tape-attached leaf, keyed by
    the leaf tensor itself; the same gradients are also stored on
    ``leaf.grad``.  The traversal order is deterministic, so repeated calls
    on identical graphs produce bitwise-identical gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss is not attached to the tape")

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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    result: dict[Tensor, Tensor] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        else:
            node.grad = g
            result[node] = Tensor(g)
    return result
