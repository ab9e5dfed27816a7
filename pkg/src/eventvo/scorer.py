"""Patch scoring: a small convolutional network and a gradient baseline.

The network maps a normalized (H, W, 5) voxel grid to an (H/4, W/4) score map
in (0, 1): three 3x3 conv + ReLU stages (5 -> 8 -> 16 -> 32 channels), a 3x3
conv down to one channel, 4x4 max pooling with stride 4, then a sigmoid.
Forward and backward passes are written out explicitly; the backward pass
routes pooling gradients through the cached argmax positions and masks ReLU
gradients with the cached pre-activation signs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import container
from .imageops import avg_pool, central_gradients, max_pool_argmax

POOL = 4
_LAYER_CHANNELS = ((5, 8), (8, 16), (16, 32), (32, 1))


@dataclass
class ScorerWeights:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    conv4_w: np.ndarray
    conv4_b: np.ndarray

    def __post_init__(self):
        for i, (c_in, c_out) in enumerate(_LAYER_CHANNELS, start=1):
            w = np.asarray(getattr(self, f"conv{i}_w"), dtype=np.float64)
            b = np.asarray(getattr(self, f"conv{i}_b"), dtype=np.float64)
            if w.shape != (c_out, c_in, 3, 3):
                raise ValueError(f"conv{i}_w must be {(c_out, c_in, 3, 3)}, got {w.shape}")
            if b.shape != (c_out,):
                raise ValueError(f"conv{i}_b must be ({c_out},), got {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"conv{i} weights must be finite")
            setattr(self, f"conv{i}_w", w)
            setattr(self, f"conv{i}_b", b)

    def save(self, path):
        named = {}
        for i in range(1, 5):
            named[f"conv{i}.w"] = getattr(self, f"conv{i}_w")
            named[f"conv{i}.b"] = getattr(self, f"conv{i}_b")
        container.write_named_tensors(path, named)

    @staticmethod
    def load(path) -> "ScorerWeights":
        named = container.read_named_tensors(path)
        kwargs = {}
        for i in range(1, 5):
            kwargs[f"conv{i}_w"] = named[f"conv{i}.w"]
            kwargs[f"conv{i}_b"] = named[f"conv{i}.b"]
        return ScorerWeights(**kwargs)


def init_scorer_weights(rng) -> ScorerWeights:
    """Uniform [-a, a] with a = sqrt(1 / fan_in) per layer, biases included."""
    kwargs = {}
    for i, (c_in, c_out) in enumerate(_LAYER_CHANNELS, start=1):
        a = np.sqrt(1.0 / (c_in * 9))
        kwargs[f"conv{i}_w"] = rng.uniform(-a, a, size=(c_out, c_in, 3, 3))
        kwargs[f"conv{i}_b"] = rng.uniform(-a, a, size=(c_out,))
    return ScorerWeights(**kwargs)


def _conv2d(x, w, b):
    """Same-padding stride-1 correlation; x (C, H, W), w (O, C, 3, 3)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (C, H, W, 3, 3)
    return np.einsum("cijyx,ocyx->oij", win, w, optimize=True) + b[:, None, None]


def _conv2d_backward(x, w, dout):
    """Gradients of _conv2d: returns (dw, db, dx)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    dw = np.einsum("oij,cijyx->ocyx", dout, win, optimize=True)
    db = dout.sum(axis=(1, 2))
    dout_p = np.pad(dout, ((0, 0), (2, 2), (2, 2)))
    dwin = sliding_window_view(dout_p, (3, 3), axis=(1, 2))  # (O, H+2, W+2, 3, 3)
    w_flip = w[:, :, ::-1, ::-1]
    dxp = np.einsum("oabyx,ocyx->cab", dwin, w_flip, optimize=True)
    return dw, db, dxp[:, 1:-1, 1:-1]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ScorerCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    z4: np.ndarray
    pool_arg: np.ndarray
    score: np.ndarray


def scorer_forward(grid_data, weights: ScorerWeights):
    """Score a normalized voxel grid.

    grid_data is (H, W, 5) with H and W divisible by 4. Returns the
    (H/4, W/4) score map in (0, 1) and the cache for the backward pass.
    """
    grid_data = np.asarray(grid_data, dtype=np.float64)
    if grid_data.ndim != 3 or grid_data.shape[2] != 5:
        raise ValueError(f"expected (H, W, 5) grid data, got {grid_data.shape}")
    h, w = grid_data.shape[:2]
    if h % POOL or w % POOL:
        raise ValueError(f"grid spatial dims must divide by {POOL}, got {(h, w)}")
    x = grid_data.transpose(2, 0, 1)
    z1 = _conv2d(x, weights.conv1_w, weights.conv1_b)
    a1 = np.maximum(z1, 0.0)
    z2 = _conv2d(a1, weights.conv2_w, weights.conv2_b)
    a2 = np.maximum(z2, 0.0)
    z3 = _conv2d(a2, weights.conv3_w, weights.conv3_b)
    a3 = np.maximum(z3, 0.0)
    z4 = _conv2d(a3, weights.conv4_w, weights.conv4_b)
    pooled, arg = max_pool_argmax(z4[0], POOL)
    # keep the map strictly inside (0, 1): float64 sigmoid saturates to
    # exactly 1.0 near z = 37, which would break the open-interval contract
    # (and ln of a sampled score of 0 on the other end)
    score = np.clip(
        _sigmoid(pooled), np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0)
    )
    cache = ScorerCache(x, z1, a1, z2, a2, z3, a3, z4, arg, score)
    return score, cache


def scorer_backward(cache: ScorerCache, dscore, weights: ScorerWeights):
    """Backpropagate d(loss)/d(score map) to all weights and the input grid.

    Returns (grads, dinput) where grads is a ScorerWeights carrying gradients
    and dinput is (H, W, 5), matching the forward input layout.
    """
    dscore = np.asarray(dscore, dtype=np.float64)
    if dscore.shape != cache.score.shape:
        raise ValueError(f"upstream gradient must be {cache.score.shape}, got {dscore.shape}")
    s = cache.score
    dpool = dscore * s * (1.0 - s)

    dz4 = np.zeros_like(cache.z4)
    hp, wp = dpool.shape
    oy = (np.arange(hp) * POOL)[:, None]
    ox = (np.arange(wp) * POOL)[None, :]
    yy = oy + cache.pool_arg // POOL
    xx = ox + cache.pool_arg % POOL
    dz4[0, yy, xx] = dpool

    dw4, db4, da3 = _conv2d_backward(cache.a3, weights.conv4_w, dz4)
    dz3 = da3 * (cache.z3 > 0.0)
    dw3, db3, da2 = _conv2d_backward(cache.a2, weights.conv3_w, dz3)
    dz2 = da2 * (cache.z2 > 0.0)
    dw2, db2, da1 = _conv2d_backward(cache.a1, weights.conv2_w, dz2)
    dz1 = da1 * (cache.z1 > 0.0)
    dw1, db1, dx = _conv2d_backward(cache.x, weights.conv1_w, dz1)

    grads = ScorerWeights(dw1, db1, dw2, db2, dw3, db3, dw4, db4)
    return grads, dx.transpose(1, 2, 0)


def gradient_scorer(grid_data, eps=1e-8):
    """Handcrafted score map: pooled spatial gradient magnitude in [0, 1).

    Bins collapse by absolute sum, spatial gradients by central differences,
    then 4x4 average pooling and division by (max + eps). A constant collapsed
    image yields a uniform all-zero map.
    """
    grid_data = np.asarray(grid_data, dtype=np.float64)
    if grid_data.ndim != 3:
        raise ValueError(f"expected (H, W, B) grid data, got {grid_data.shape}")
    h, w = grid_data.shape[:2]
    if h % POOL or w % POOL:
        raise ValueError(f"grid spatial dims must divide by {POOL}, got {(h, w)}")
    collapsed = np.abs(grid_data).sum(axis=2)
    gx, gy = central_gradients(collapsed)
    mag = np.sqrt(gx * gx + gy * gy)
    pooled = avg_pool(mag, POOL)
    return pooled / (pooled.max() + eps)
