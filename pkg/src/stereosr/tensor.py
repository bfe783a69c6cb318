"""Dense float32 tensor kernels.

Tensors are plain ``numpy.ndarray`` values of dtype float32 and rank 1-4.
Spatial layouts are channels-last (H x W x C); attention volumes are
H x W x W; convolution kernels are k x k x Cin x Cout.
"""

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32

# Slope of the leaky rectifier used wherever the network needs an activation.
LEAKY_SLOPE = 0.1

# Multiplicative perturbation applied to softmax outputs. Zero in normal
# operation; the self-test sets it to prove the oracles catch faults.
_softmax_fault = 0.0


class ShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float32 array and check the tensor invariants."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if not 1 <= t.ndim <= 4:
        raise ShapeError(f"tensor rank must be 1..4, got {t.ndim}")
    if t.size == 0:
        raise ShapeError(f"tensor extents must be >= 1, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


def _need_rank(t, rank, name="input"):
    if t.ndim != rank:
        raise ShapeError(f"{name} must have rank {rank}, got shape {t.shape}")


def conv2d(x, kernel, bias, padding=None, groups=1):
    """Same-size, stride-1 cross-correlation with zero padding.

    ``kernel`` has shape (k, k, Cin // groups, Cout). Output channel block
    ``g`` only sees input channel block ``g``.
    """
    x = np.asarray(x, dtype=DTYPE)
    kernel = np.asarray(kernel, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    _need_rank(x, 3)
    _need_rank(kernel, 4, "kernel")
    k, k2, cin_g, cout = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kernel.shape}")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ShapeError(f"padding must be {(k - 1) // 2} for a {k}x{k} kernel")
    h, w, cin = x.shape
    if cin != cin_g * groups:
        raise ShapeError(
            f"input has {cin} channels but kernel expects {cin_g} x {groups} groups"
        )
    if cout % groups:
        raise ShapeError(f"{cout} output channels not divisible by {groups} groups")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")

    cout_g = cout // groups
    out = np.empty((h, w, cout), dtype=DTYPE)
    if k == 1:
        flat = x.reshape(h * w, cin)
        for g in range(groups):
            xs = flat[:, g * cin_g:(g + 1) * cin_g]
            ks = kernel[0, 0, :, g * cout_g:(g + 1) * cout_g]
            out[..., g * cout_g:(g + 1) * cout_g] = (xs @ ks).reshape(h, w, cout_g)
    else:
        p = padding
        xp = np.pad(x, ((p, p), (p, p), (0, 0)))
        # (H, W, Cin, k, k) -> (H, W, k, k, Cin)
        win = sliding_window_view(xp, (k, k), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
        for g in range(groups):
            patches = win[..., g * cin_g:(g + 1) * cin_g].reshape(h * w, k * k * cin_g)
            ks = kernel[..., g * cout_g:(g + 1) * cout_g].reshape(k * k * cin_g, cout_g)
            out[..., g * cout_g:(g + 1) * cout_g] = (patches @ ks).reshape(h, w, cout_g)
    out += bias
    return out


def batch_matmul(a, b):
    """Independent matrix product for every index along the first dimension."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    _need_rank(a, 3, "a")
    _need_rank(b, 3, "b")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"cannot batch-multiply {a.shape} by {b.shape}")
    return np.matmul(a, b)


def softmax_lastdim(t):
    t = np.asarray(t, dtype=DTYPE)
    if t.ndim < 1:
        raise ShapeError("softmax needs rank >= 1")
    e = np.exp(t - t.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    if _softmax_fault:
        out = out * DTYPE(1.0 + _softmax_fault)
    return out


def transpose_last2(t):
    t = np.asarray(t, dtype=DTYPE)
    _need_rank(t, 3)
    return np.ascontiguousarray(np.swapaxes(t, 1, 2))


def pixel_shuffle(t, r):
    """Rearrange H x W x (r*r*C) into rH x rW x C.

    out[r*h + dy, r*w + dx, c] = t[h, w, c*r*r + dy*r + dx]
    """
    t = np.asarray(t, dtype=DTYPE)
    _need_rank(t, 3)
    h, w, ch = t.shape
    if r < 1 or ch % (r * r):
        raise ShapeError(f"{ch} channels not divisible by r^2 = {r * r}")
    c = ch // (r * r)
    out = t.reshape(h, w, c, r, r).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(out.reshape(h * r, w * r, c))


def pixel_unshuffle(t, r):
    """Inverse of :func:`pixel_shuffle`."""
    t = np.asarray(t, dtype=DTYPE)
    _need_rank(t, 3)
    hh, ww, c = t.shape
    if r < 1 or hh % r or ww % r:
        raise ShapeError(f"spatial dims {hh}x{ww} not divisible by {r}")
    h, w = hh // r, ww // r
    out = t.reshape(h, r, w, r, c).transpose(0, 2, 4, 1, 3)
    return np.ascontiguousarray(out.reshape(h, w, c * r * r))


def leaky_rectify(t, slope=LEAKY_SLOPE):
    t = np.asarray(t, dtype=DTYPE)
    return np.where(t >= 0, t, t * DTYPE(slope))


def concat_channels(*ts):
    ts = [np.asarray(t, dtype=DTYPE) for t in ts]
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"cannot concatenate {ts[0].shape} with {t.shape}")
    return np.concatenate(ts, axis=-1)


def _same_shape(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def elementwise_add(a, b):
    a, b = _same_shape(a, b)
    return a + b


def elementwise_mul(a, b):
    a, b = _same_shape(a, b)
    return a * b


def global_mean_hw(t):
    """Average an H x W x C tensor over H and W, keeping a 1 x 1 x C shape."""
    t = np.asarray(t, dtype=DTYPE)
    _need_rank(t, 3)
    return t.mean(axis=(0, 1), keepdims=True, dtype=np.float64).astype(DTYPE)


def sigmoid(t):
    t = np.asarray(t, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Conv(NamedTuple):
    """A convolution layer's parameters; calling it applies :func:`conv2d`."""

    kernel: np.ndarray
    bias: np.ndarray
    groups: int = 1

    def __call__(self, x):
        return conv2d(x, self.kernel, self.bias, groups=self.groups)
