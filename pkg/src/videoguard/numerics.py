"""Dense array helpers shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects. Everything is computed in
float64; video files store float32 on disk.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0

#: Returned by :func:`psnr` when both inputs are identical.
PSNR_IDENTICAL = math.inf


def as_tensor(x):
    """Return ``x`` as a float64 array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def _norm_order(kind):
    if isinstance(kind, str):
        key = kind.lower()
        if key == "l1":
            return 1.0
        if key == "l2":
            return 2.0
        if key in ("linf", "inf"):
            return math.inf
        raise ValueError(f"unknown norm kind {kind!r}")
    p = float(kind)
    if not p >= 1.0:
        raise ValueError(f"Lp norm requires p >= 1, got {p}")
    return p


def norm(x, kind="l2"):
    """Vector norm of the flattened tensor.

    ``kind`` is ``"l1"``, ``"l2"``, ``"linf"`` or a number ``p >= 1``.
    """
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("norm of an empty tensor")
    p = _norm_order(kind)
    a = np.abs(arr)
    if p == math.inf:
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(math.sqrt(np.dot(a, a)))
    peak = a.max()
    if peak == 0.0:
        return 0.0
    return float(peak * np.sum((a / peak) ** p) ** (1.0 / p))


def pnorm_p(x, p):
    """``||x||_p^p``, the un-rooted form used in the content loss."""
    a = np.abs(np.asarray(x, dtype=np.float64))
    if p == 2:
        return float(np.sum(a * a))
    if p == 1:
        return float(np.sum(a))
    return float(np.sum(a ** p))


def pnorm_p_grad(x, p):
    """Gradient of :func:`pnorm_p` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if p == 2:
        return 2.0 * x
    if p == 1:
        return np.sign(x)
    return p * np.abs(x) ** (p - 1) * np.sign(x)


def temporal_diff(z):
    """First-order difference along the leading (frame) axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[0] < 2:
        raise ValueError("temporal_diff needs at least 2 frames")
    return z[1:] - z[:-1]


def temporal_diff_adjoint(g):
    """Adjoint of :func:`temporal_diff`: maps F-1 frames back to F frames."""
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros((g.shape[0] + 1,) + g.shape[1:])
    out[1:] += g
    out[:-1] -= g
    return out


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def ssim(a, b):
    """Single-scale SSIM of two ``C x H x W`` frames (or ``H x W``).

    Uniform 8x8 windows at stride 4, averaged over windows and channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError("ssim expects a C x H x W frame")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ValueError("frame smaller than the SSIM window")
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    win = (SSIM_WINDOW, SSIM_WINDOW)
    wa = sliding_window_view(a, win, axis=(1, 2))[:, ::SSIM_STRIDE, ::SSIM_STRIDE]
    wb = sliding_window_view(b, win, axis=(1, 2))[:, ::SSIM_STRIDE, ::SSIM_STRIDE]
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-1, -2))
    var_b = (db * db).mean(axis=(-1, -2))
    cov = (da * db).mean(axis=(-1, -2))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    per_channel = (num / den).mean(axis=(1, 2))
    return float(per_channel.mean())


def video_ssim(a, b):
    """Mean frame SSIM of two ``F x C x H x W`` videos."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean([ssim(fa, fb) for fa, fb in zip(a, b)]))


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b):
    """PSNR in dB for unit dynamic range; :data:`PSNR_IDENTICAL` if equal."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / err)


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    _check_same_shape(u, v)
    nu = math.sqrt(np.dot(u, u))
    nv = math.sqrt(np.dot(v, v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
