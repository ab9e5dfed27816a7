"""Small shared image helpers: bilinear lookup, pooling, central differences."""

from __future__ import annotations

import numpy as np


def bilinear_sample(img, x, y):
    """Sample img at fractional (x, y) with bilinear weights, clamped at borders.

    img is (H, W) or (H, W, C); x and y share a common shape. Returns samples
    shaped like x (plus a trailing channel axis for (H, W, C) input).
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    out = (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )
    return out[..., 0] if squeeze else out


def avg_pool(img, k):
    """k x k average pooling with stride k; dims must divide evenly."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h % k or w % k:
        raise ValueError(f"shape {img.shape[:2]} not divisible by pool size {k}")
    shaped = img.reshape(h // k, k, w // k, k, *img.shape[2:])
    return shaped.mean(axis=(1, 3))


def max_pool_argmax(img, k):
    """k x k max pooling with stride k on a 2D map.

    Returns (pooled, argmax) where argmax holds the flat index within each
    k*k window, needed to route gradients back in the backward pass.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h % k or w % k:
        raise ValueError(f"shape {img.shape} not divisible by pool size {k}")
    windows = img.reshape(h // k, k, w // k, k).transpose(0, 2, 1, 3).reshape(
        h // k, w // k, k * k
    )
    arg = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return pooled, arg


def central_gradients(img):
    """Central-difference d/dx, d/dy with one-sided borders (np.gradient)."""
    img = np.asarray(img, dtype=np.float64)
    gy, gx = np.gradient(img, axis=(0, 1))
    return gx, gy
