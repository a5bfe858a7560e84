"""Differentiable operations.

The set is deliberately closed: 3x3 convolution, a handful of pointwise ops,
nearest/average resampling, channel concatenation, and the L1 reduction.
Every network in the package is written in terms of these.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeError
from .tensor import DTYPE, Tensor, as_tensor, note_kinks, record

LEAKY_SLOPE = 0.2


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _im2col(x):
    """``[B, C, H, W]`` -> ``[B, C*9, H*W]`` patch matrix (zero padding 1)."""
    b, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s = padded.strides
    view = as_strided(padded, (b, c, 3, 3, h, w), (s[0], s[1], s[2], s[3], s[2], s[3]))
    return np.ascontiguousarray(view).reshape(b, c * 9, h * w)


def conv2d(x, weight, bias):
    """3x3 cross-correlation, stride 1, zero padding 1."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [B,C,H,W], got {x.shape}")
    b, cin, h, w = x.shape
    if weight.ndim != 4 or weight.shape[1:] != (cin, 3, 3):
        raise ShapeError(f"conv2d: weight {weight.shape} incompatible with {cin} input channels")
    cout = weight.shape[0]
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {cout} output channels")

    cols = _im2col(x.data)
    wmat = weight.data.reshape(cout, cin * 9)
    out = np.matmul(wmat, cols)
    out += bias.data[:, None]
    out = Tensor(out.reshape(b, cout, h, w))

    def backward_fn(g):
        gmat = g.reshape(b, cout, h * w)
        gx = gw = gb = None
        if weight.requires_grad:
            # batch loop keeps the reduction order fixed
            acc = gmat[0] @ cols[0].T
            for k in range(1, b):
                acc += gmat[k] @ cols[k].T
            gw = acc.reshape(weight.shape)
        if bias.requires_grad:
            gb = gmat.sum(axis=(0, 2), dtype=np.float64).astype(DTYPE)
        if x.requires_grad:
            # input gradient = correlation of g with the spatially flipped, transposed kernel
            flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * 9)
            gx = np.matmul(flipped, _im2col(g)).reshape(b, cin, h, w)
        return gx, gw, gb

    return record("conv2d", out, (x, weight, bias), backward_fn)


def add(a, b):
    """a + b; ``b`` may be a Python scalar."""
    a = as_tensor(a)
    if np.isscalar(b):
        return record("add", Tensor(a.data + DTYPE(b)), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same(a, b, "add")
    return record("add", Tensor(a.data + b.data), (a, b), lambda g: (g, g))


def sub(a, b):
    a = as_tensor(a)
    if np.isscalar(b):
        return record("sub", Tensor(a.data - DTYPE(b)), (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_same(a, b, "sub")
    return record("sub", Tensor(a.data - b.data), (a, b), lambda g: (g, -g))


def mul_scalar(x, c):
    x = as_tensor(x)
    c = DTYPE(c)
    return record("mul_scalar", Tensor(x.data * c), (x,), lambda g: (g * c,))


def add_scaled(a, x, b, y):
    """a*x + b*y for scalar coefficients ``a`` and ``b``."""
    x, y = as_tensor(x), as_tensor(y)
    _check_same(x, y, "add_scaled")
    a, b = DTYPE(a), DTYPE(b)
    out = Tensor(a * x.data + b * y.data)
    return record("add_scaled", out, (x, y), lambda g: (g * a, g * b))


def leaky_relu(x):
    x = as_tensor(x)
    note_kinks(x.data)
    slope = DTYPE(LEAKY_SLOPE)
    out = Tensor(np.maximum(x.data, x.data * slope))
    scale = (x.data > 0) * DTYPE(1.0 - LEAKY_SLOPE) + slope
    return record("leaky_relu", out, (x,), lambda g: (g * scale,))


def resample(x, mode, factor):
    """Spatial resize by an integer factor.

    ``nearest_up`` repeats each pixel ``factor`` times along both axes;
    ``avg_down`` averages non-overlapping ``factor`` x ``factor`` blocks.
    """
    x = as_tensor(x)
    if factor not in (2, 4):
        raise ShapeError(f"resample: factor must be 2 or 4, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"resample: input must be [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    f = factor
    if mode == "nearest_up":
        out = Tensor(x.data.repeat(f, axis=2).repeat(f, axis=3))

        def backward_fn(g):
            return (g.reshape(b, c, h, f, w, f).sum(axis=(3, 5)),)

    elif mode == "avg_down":
        if h % f or w % f:
            raise ShapeError(f"resample: spatial dims {h}x{w} not divisible by {f}")
        out = Tensor(x.data.reshape(b, c, h // f, f, w // f, f).mean(axis=(3, 5)))
        inv = DTYPE(1.0 / (f * f))

        def backward_fn(g):
            return ((g * inv).repeat(f, axis=2).repeat(f, axis=3),)

    else:
        raise ValueError(f"resample: unknown mode {mode!r}")
    return record("resample", out, (x,), backward_fn)


def concat_channels(parts):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels: empty list")
    first = parts[0]
    for p in parts[1:]:
        if p.ndim != 4 or p.shape[0] != first.shape[0] or p.shape[2:] != first.shape[2:]:
            raise ShapeError(f"concat_channels: {p.shape} does not stack with {first.shape}")
    if len(parts) == 1:
        return first
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))

    def backward_fn(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return record("concat_channels", out, tuple(parts), backward_fn)


def l1_loss(pred, target):
    """Mean absolute difference; the subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same(pred, target, "l1_loss")
    diff = pred.data - target.data
    note_kinks(diff)
    out = Tensor(np.abs(diff).mean(dtype=np.float64))
    sign = np.sign(diff) / DTYPE(diff.size)

    def backward_fn(g):
        gd = sign * g
        return gd, -gd

    return record("l1_loss", out, (pred, target), backward_fn)


def crop_border(x, border):
    """Drop ``border`` pixels from each spatial edge."""
    x = as_tensor(x)
    if border == 0:
        return x
    b, c, h, w = x.shape
    if 2 * border >= min(h, w):
        raise ShapeError(f"crop_border: {border} too large for {h}x{w}")
    out = Tensor(x.data[:, :, border:-border, border:-border])

    def backward_fn(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[:, :, border:-border, border:-border] = g
        return (full,)

    return record("crop_border", out, (x,), backward_fn)


def total(x):
    """Sum of all elements as a scalar tensor."""
    x = as_tensor(x)
    out = Tensor(x.data.sum(dtype=np.float64))
    return record("total", out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(DTYPE),))
