"""Differentiable image and embedding primitives built on :mod:`.tensor`."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import DegenerateInputError, DimensionError, ParameterError, SizeError
from .tensor import Tensor, _lift, _make, getitem, logsumexp, mean, tsum

# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0, bias: Tensor | None = None) -> Tensor:
    """Batched 2-D cross-correlation, ``x[B,C,H,W] * kernel[F,C,kh,kw]``.

    Zero padding; implemented with an im2col buffer so both passes are a
    single matrix product.
    """
    x = _lift(x)
    kernel = _lift(kernel, x)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects x[B,C,H,W] and kernel[F,C,kh,kw]")
    B, C, H, W = x.shape
    F, Ck, kh, kw = kernel.shape
    if C != Ck:
        raise DimensionError(f"input has {C} channels but kernel expects {Ck}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if padding < 0:
        raise ParameterError("padding must be >= 0")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise SizeError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xd = x.data
    cols = _im2col(xd, kh, kw, stride, padding)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(F, kh * kw * C)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, F, 1, 1)
    out = np.ascontiguousarray(out)

    need_x = x.requires_grad

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        gk = None
        if kernel.requires_grad:
            gk = np.ascontiguousarray((g2.T @ cols).reshape(F, kh, kw, C).transpose(0, 3, 1, 2))
        gx = None
        if need_x and stride == 1 and kh - 1 - padding >= 0 and kw - 1 - padding >= 0 and kh == kw:
            # full correlation of the output gradient with the flipped kernel
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(C, kh * kw * F)
            gcols = _im2col(np.ascontiguousarray(g), kh, kw, 1, kh - 1 - padding)
            gx = np.ascontiguousarray((gcols @ flipped.T).reshape(B, H, W, C).transpose(0, 3, 1, 2))
        elif need_x:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, kh, kw, C)
            gxp = np.zeros((B, C, Hp, Wp), dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, :, i, j, :].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3)).reshape(bias.shape)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, bw, "conv2d")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Rows of flattened ``kh x kw x C`` windows, one row per output pixel.

    The gather runs on a channels-last copy so the innermost runs are
    contiguous, which is markedly faster than gathering from NCHW.
    """
    B, C, H, W = x.shape
    xp = np.zeros((B, H + 2 * padding, W + 2 * padding, C), dtype=x.dtype)
    xp[:, padding:padding + H, padding:padding + W, :] = x.transpose(0, 2, 3, 1)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)


# ---------------------------------------------------------------------------
# fixed linear operators along the two spatial axes


def reflect_index(i: np.ndarray | int, n: int):
    """Half-sample symmetric extension (``d c b a | a b c d | d c b a``)."""
    m = np.mod(i, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def separable(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply ``rows @ X @ cols.T`` to the trailing two axes of ``x``."""
    x = _lift(x)
    if x.shape[-2] != rows.shape[1] or x.shape[-1] != cols.shape[1]:
        raise DimensionError(f"operator expects {rows.shape[1]}x{cols.shape[1]} planes, got {x.shape[-2:]}")
    r = rows.astype(x.dtype, copy=False)
    c = cols.astype(x.dtype, copy=False)
    out = r @ x.data @ c.T
    return _make(out, (x,), lambda g: (r.T @ g @ c,), "separable")


@lru_cache(maxsize=256)
def filter_matrix(n: int, taps: tuple) -> np.ndarray:
    """Dense ``n x n`` matrix of a centred 1-D correlation with reflect borders."""
    k = np.asarray(taps, dtype=np.float64)
    half = len(k) // 2
    m = np.zeros((n, n))
    for y in range(n):
        idx = reflect_index(np.arange(y - half, y - half + len(k)), n)
        np.add.at(m[y], idx, k)
    m.setflags(write=False)
    return m


def gaussian_taps(sigma: float, kernel_size: int) -> tuple:
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    r = np.arange(kernel_size) - kernel_size // 2
    k = np.exp(-(r.astype(np.float64) ** 2) / (2.0 * sigma * sigma))
    return tuple(k / k.sum())


def gaussian_kernel2d(sigma: float, kernel_size: int) -> np.ndarray:
    k = np.asarray(gaussian_taps(sigma, kernel_size))
    return np.outer(k, k)


def gaussian_blur(x: Tensor, sigma: float, kernel_size: int) -> Tensor:
    """Normalised Gaussian blur over the last two axes with reflect padding."""
    taps = gaussian_taps(sigma, kernel_size)
    x = _lift(x)
    H, W = x.shape[-2:]
    return separable(x, filter_matrix(H, taps), filter_matrix(W, taps))


def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom for ``a = -0.5``)."""
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Bicubic resampling matrix ``n_out x n_in``.

    For downscaling the kernel is stretched by the inverse scale, which
    low-pass filters before sampling.
    """
    scale = n_out / n_in
    support = 2.0 / scale if scale < 1 else 2.0
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        c = (o + 0.5) / scale - 0.5
        i = np.arange(math.floor(c - support), math.ceil(c + support) + 1)
        w = cubic_kernel((c - i) * scale) if scale < 1 else cubic_kernel(c - i)
        w = w / w.sum()
        np.add.at(m[o], reflect_index(i, n_in), w)
    m.setflags(write=False)
    return m


def resize_bicubic(x: Tensor, factor: float = 4, direction: str = "down") -> Tensor:
    """Resize the trailing two axes by ``factor`` (up) or ``1/factor`` (down)."""
    if factor <= 0:
        raise ParameterError("factor must be positive")
    if direction not in ("up", "down"):
        raise ParameterError("direction must be 'up' or 'down'")
    x = _lift(x)
    H, W = x.shape[-2:]
    scale = factor if direction == "up" else 1.0 / factor
    Ho, Wo = int(round(H * scale)), int(round(W * scale))
    if Ho < 1 or Wo < 1:
        raise SizeError(f"resizing {H}x{W} by {scale} leaves no pixels")
    return separable(x, resize_matrix(H, Ho), resize_matrix(W, Wo))


# ---------------------------------------------------------------------------
# embedding primitives


def l2_normalize(v: Tensor, axis: int = -1) -> Tensor:
    v = _lift(v)
    norm = np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise DegenerateInputError("cannot normalise a zero vector")
    out = v.data / norm

    def bw(g):
        return ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / norm,)

    return _make(out, (v,), bw, "l2_normalize")


def cosine_sim(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    return tsum(l2_normalize(a, axis) * l2_normalize(b, axis), axis=axis)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over rows of ``-log softmax(row)[target]``."""
    logits = _lift(logits)
    targets = np.asarray(targets)
    n = logits.shape[0]
    if n == 0:
        raise DegenerateInputError("empty batch")
    picked = getitem(logits, (np.arange(n), targets))
    return mean(logsumexp(logits, axis=1) - picked)


def info_nce(similarity: Tensor, temperature) -> Tensor:
    """Row-wise contrastive cross-entropy with the diagonal as positives."""
    similarity = _lift(similarity)
    if similarity.ndim != 2 or similarity.shape[0] != similarity.shape[1]:
        raise DimensionError("similarity must be a square matrix")
    if similarity.shape[0] == 0:
        raise DegenerateInputError("empty batch")
    t = temperature.data if isinstance(temperature, Tensor) else temperature
    if np.any(np.asarray(t) <= 0):
        raise ParameterError("temperature must be positive")
    n = similarity.shape[0]
    return cross_entropy(similarity / temperature, np.arange(n))


# ---------------------------------------------------------------------------
# structural similarity

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def ssim(a: Tensor, b: Tensor, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> Tensor:
    """Mean SSIM over 11x11 Gaussian windows on the trailing two axes.

    Local statistics use the reflect-padded Gaussian filter, so the map has
    the input's size.  Sides shorter than the window half-width plus one are
    rejected because the reflection would wrap more than once.
    """
    a = _lift(a)
    b = _lift(b, a)
    if a.shape != b.shape:
        raise DimensionError(f"ssim operands differ in shape: {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW // 2 + 1:
        raise SizeError(f"image {a.shape[-2:]} too small for an {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    blur = lambda t: gaussian_blur(t, SSIM_SIGMA, SSIM_WINDOW)  # noqa: E731
    mu_a, mu_b = blur(a), blur(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = blur(a * a) - mu_aa
    var_b = blur(b * b) - mu_bb
    cov = blur(a * b) - mu_ab
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return mean(num / den)
