"""Differentiable operations on :class:`Tensor`.

Shapes are checked strictly. The only implicit broadcasts are a size-1 operand
against any tensor (learnable scalars) and the channel-weight case handled by
:func:`broadcast_mul`. Spatial operators accept either an unbatched
``[C, H, W]`` tensor or a batched ``[N, C, H, W]`` one.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from glyco.autodiff.tensor import Tensor, as_tensor
from glyco.errors import DimensionError, ParameterError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ParameterError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.ndim <= 1


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _binary_operands(a, b, opname: str) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} are not compatible")
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def backward(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return Tensor._make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def backward(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return Tensor._make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def backward(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return Tensor._make(a.data * b.data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    out = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._make(out, (a,), backward, "pow")


def square(a: Tensor) -> Tensor:
    return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient at exactly 0 is 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def broadcast_mul(a: Tensor, s: Tensor) -> Tensor:
    """Multiply ``a`` of shape ``[C,D,T]`` (or ``[N,C,D,T]``) by per-channel weights.

    ``s`` may be ``[C]``, ``[C,1,1]`` (unbatched) or ``[N,C]``, ``[N,C,1,1]``.
    """
    if a.ndim == 3:
        if s.shape not in ((a.shape[0],), (a.shape[0], 1, 1)):
            raise DimensionError(f"broadcast_mul: weights {s.shape} do not match channels of {a.shape}")
        view = s.data.reshape(a.shape[0], 1, 1)
    elif a.ndim == 4:
        n, c = a.shape[:2]
        if s.shape not in ((n, c), (n, c, 1, 1)):
            raise DimensionError(f"broadcast_mul: weights {s.shape} do not match {a.shape}")
        view = s.data.reshape(n, c, 1, 1)
    else:
        raise DimensionError(f"broadcast_mul expects a 3D or 4D feature map, got {a.shape}")

    def backward(g):
        gs = (g * a.data).sum(axis=(-2, -1)).reshape(s.shape)
        return g * view, gs

    return Tensor._make(a.data * view, (a, s), backward, "broadcast_mul")


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name: add, mul, relu, sigmoid, broadcast_mul."""
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "relu":
        return relu(a)
    if op == "sigmoid":
        return sigmoid(a)
    if op == "broadcast_mul":
        return broadcast_mul(a, as_tensor(b))
    raise ParameterError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(out, copy=True), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return Tensor._make(out, tensors, backward, "concat")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(out, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor._make(out, (a,), backward, "mean")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; any leading axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return Tensor._make(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for ``x`` of shape ``[N, F]`` and ``w`` of shape ``[O, F]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, backward, "linear")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ParameterError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), backward, "softmax")


# ---------------------------------------------------------------------------
# convolution


def _windows(xp: np.ndarray, kh: int, kw: int, stride: tuple[int, int], dil: tuple[int, int], oh: int, ow: int):
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dil[0], sw * dil[1], sh * stride[0], sw * stride[1]),
        writeable=False,
    )


def _out_size(size: int, pad_lo: int, pad_hi: int, k: int, stride: int, dil: int) -> int:
    span = size + pad_lo + pad_hi - dil * (k - 1) - 1
    return span // stride + 1 if span >= 0 else 0


def _conv2d_raw(x: Tensor, w: Tensor, b: Tensor | None, stride, pads, dil) -> Tensor:
    """Batched cross-correlation; ``pads`` is (top, bottom, left, right)."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"conv2d: kernel expects {ci} input channels, input has {c}")
    pt, pb, pl, pr = pads
    oh = _out_size(h, pt, pb, kh, stride[0], dil[0])
    ow = _out_size(wd, pl, pr, kw, stride[1], dil[1])
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv2d: kernel {(kh, kw)} with dilation {dil} does not fit input {(h, wd)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if any(pads) else x.data
    xp = np.ascontiguousarray(xp)
    cols = _windows(xp, kh, kw, stride, dil, oh, ow)
    out = np.tensordot(w.data, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        gcols = np.tensordot(w.data, g, axes=([0], [1]))  # [C, kh, kw, N, oh, ow]
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            r0 = i * dil[0]
            for j in range(kw):
                c0 = j * dil[1]
                gxp[:, :, r0 : r0 + stride[0] * (oh - 1) + 1 : stride[0], c0 : c0 + stride[1] * (ow - 1) + 1 : stride[1]] += (
                    gcols[:, i, j].transpose(1, 0, 2, 3)
                )
        gx = gxp[:, :, pt : pt + h, pl : pl + wd]
        grads = [np.ascontiguousarray(gx), gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out, parents, backward, "conv2d")


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == ndim - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == ndim:
        return x, False
    raise DimensionError(f"expected a {ndim - 1}D or {ndim}D input, got shape {x.shape}")


def conv2d(x: Tensor, kernel: Tensor, stride=1, padding=0, dilation=1, bias: Tensor | None = None) -> Tensor:
    """2D cross-correlation of ``[C_in,H,W]`` / ``[N,C_in,H,W]`` with ``[C_out,C_in,kh,kw]``."""
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4D, got {kernel.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if min(sh, sw, dh, dw) < 1 or min(ph, pw) < 0:
        raise ParameterError("conv2d: stride and dilation must be >= 1, padding >= 0")
    xb, squeeze = _batched(x, 4)
    out = _conv2d_raw(xb, kernel, bias, (sh, sw), (ph, ph, pw, pw), (dh, dw))
    return reshape(out, out.shape[1:]) if squeeze else out


def conv1d_dilated(x: Tensor, kernel: Tensor, dilation: int = 1, padding: int | None = None, bias: Tensor | None = None) -> Tensor:
    """Dilated temporal convolution ``Y_t = sum_j w_j X_{t - d*j}``.

    ``x`` is ``[C_in, T]`` or ``[N, C_in, T]``; ``kernel`` is ``[C_out, C_in, k]``.
    ``padding`` zeros are prepended; the default ``d*(k-1)`` gives a causal,
    same-length output. Indices before the start read as zero.
    """
    if dilation < 1:
        raise ParameterError(f"dilation must be >= 1, got {dilation}")
    if kernel.ndim != 3:
        raise DimensionError(f"conv1d kernel must be 3D, got {kernel.shape}")
    k = kernel.shape[2]
    if padding is None:
        padding = dilation * (k - 1)
    xb, squeeze = _batched(x, 3)
    n, c, t = xb.shape
    x4 = reshape(xb, (n, c, 1, t))
    # flipping the taps turns the lagged sum into a cross-correlation
    w4 = reshape(getitem(kernel, (slice(None), slice(None), slice(None, None, -1))), kernel.shape[:2] + (1, k))
    out = _conv2d_raw(x4, w4, bias, (1, 1), (0, 0, int(padding), 0), (1, int(dilation)))
    out = reshape(out, (n, out.shape[1], out.shape[3]))
    return reshape(out, out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# pooling and resampling


def pool2d(x: Tensor, mode: str = "avg", kernel=None, stride=None) -> Tensor:
    """Average or max pooling over the last two axes.

    With ``kernel=None`` pooling is global and returns ``[C]`` (or ``[N, C]``).
    Max pooling routes the gradient to the first maximal position in each window.
    """
    if mode not in ("avg", "max"):
        raise ParameterError(f"pool mode must be 'avg' or 'max', got {mode!r}")
    xb, squeeze = _batched(x, 4)
    n, c, h, w = xb.shape
    if kernel is None:
        flat = xb.data.reshape(n, c, h * w)
        if mode == "avg":
            out = flat.mean(axis=2)

            def backward(g):
                return (np.broadcast_to((g / (h * w))[:, :, None, None], xb.shape).copy(),)

        else:
            arg = flat.argmax(axis=2)
            out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

            def backward(g):
                gf = np.zeros((n, c, h * w))
                np.put_along_axis(gf, arg[:, :, None], g[:, :, None], axis=2)
                return (gf.reshape(xb.shape),)

        res = Tensor._make(out, (xb,), backward, f"global_{mode}_pool")
        return reshape(res, (c,)) if squeeze else res

    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    if kh > h or kw > w:
        raise DimensionError(f"pool window {(kh, kw)} larger than input {(h, w)}")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    src = np.ascontiguousarray(xb.data)
    win = _windows(src, kh, kw, (sh, sw), (1, 1), oh, ow)
    if mode == "avg":
        out = win.mean(axis=(2, 3))
    else:
        flatwin = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, oh, ow, kh * kw)
        arg = flatwin.argmax(axis=-1)
        out = np.take_along_axis(flatwin, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros(xb.shape)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(None), slice(i, i + sh * (oh - 1) + 1, sh), slice(j, j + sw * (ow - 1) + 1, sw))
                if mode == "avg":
                    gx[sl] += g / (kh * kw)
                else:
                    gx[sl] += g * (arg == i * kw + j)
        return (gx,)

    res = Tensor._make(out, (xb,), backward, f"{mode}_pool")
    return reshape(res, res.shape[1:]) if squeeze else res


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_upsample(x: Tensor, target: tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two axes (align_corners=False); 1x1 inputs broadcast."""
    th, tw = (int(v) for v in target)
    if th <= 0 or tw <= 0:
        raise ParameterError(f"target size must be positive, got {target}")
    if x.ndim not in (3, 4):
        raise DimensionError(f"bilinear_upsample expects 3D or 4D input, got {x.shape}")
    h, w = x.shape[-2:]
    mh = _interp_matrix(h, th)
    mw = _interp_matrix(w, tw)
    out = np.einsum("ah,...hw,bw->...ab", mh, x.data, mw)

    def backward(g):
        return (np.einsum("ah,...ab,bw->...hw", mh, g, mw),)

    return Tensor._make(out, (x,), backward, "bilinear_upsample")


# ---------------------------------------------------------------------------
# normalisation


class RunningStats:
    """Batchnorm running mean/variance; defaults to mean 0, var 1 before training."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    stats: RunningStats | None = None,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalisation over batch and spatial axes."""
    xb, squeeze = _batched(x, 4)
    n, c, h, w = xb.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: affine params must be ({c},)")
    axes = (0, 2, 3)
    count = n * h * w
    if training:
        if count < 2:
            raise DimensionError("batchnorm in train mode needs more than one value per channel")
        mu = xb.data.mean(axis=axes)
        var = xb.data.var(axis=axes)
        if stats is not None:
            m = stats.momentum
            stats.mean = (1 - m) * stats.mean + m * mu
            stats.var = (1 - m) * stats.var + m * var * count / (count - 1)
    else:
        st = stats if stats is not None else RunningStats(c)
        mu, var = st.mean, st.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xb.data - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            gx = (
                inv.reshape(1, c, 1, 1)
                / count
                * (count * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            )
        else:
            gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, gg, gb

    res = Tensor._make(out, (xb, gamma, beta), backward, "batchnorm")
    return reshape(res, res.shape[1:]) if squeeze else res


# ---------------------------------------------------------------------------
# losses


def mse(a: Tensor, b) -> Tensor:
    d = sub(a, b)
    return mean(square(d))


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against soft targets in [0, 1]."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"bce: target {t.shape} vs logits {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = loss.mean()
    p = _sigmoid_np(z)

    def backward(g):
        return (g * (p - t) / z.size,)

    return Tensor._make(out, (logits,), backward, "bce_with_logits")


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    return Tensor._make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clamp_min")

