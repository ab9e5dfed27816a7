"""Scorer network forward/backward and the gradient-map baseline.

The forward pass is checked against a direct convolution reference that loops
over output positions, and the backward pass against central finite
differences on a randomly weighted scalar readout of the score map.
"""

import numpy as np
import pytest

from eventvo.scorer import (
    ScorerWeights,
    gradient_scorer,
    init_scorer_weights,
    scorer_backward,
    scorer_forward,
)


def zero_weights():
    return ScorerWeights(
        np.zeros((8, 5, 3, 3)), np.zeros(8),
        np.zeros((16, 8, 3, 3)), np.zeros(16),
        np.zeros((32, 16, 3, 3)), np.zeros(32),
        np.zeros((1, 32, 3, 3)), np.zeros(1),
    )


def naive_conv(x, w, b):
    """Direct same-padding correlation, looping over output positions."""
    c_out = w.shape[0]
    _, h, wid = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.empty((c_out, h, wid))
    for o in range(c_out):
        for i in range(h):
            for j in range(wid):
                out[o, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * w[o]) + b[o]
    return out


def naive_forward(grid, weights):
    x = grid.transpose(2, 0, 1)
    a = np.maximum(naive_conv(x, weights.conv1_w, weights.conv1_b), 0)
    a = np.maximum(naive_conv(a, weights.conv2_w, weights.conv2_b), 0)
    a = np.maximum(naive_conv(a, weights.conv3_w, weights.conv3_b), 0)
    z = naive_conv(a, weights.conv4_w, weights.conv4_b)[0]
    h, w = z.shape
    pooled = z.reshape(h // 4, 4, w // 4, 4).max(axis=(1, 3))
    return 1.0 / (1.0 + np.exp(-pooled))


def test_zero_network_scores_half_everywhere():
    grid = np.random.default_rng(0).standard_normal((16, 16, 5))
    score, _ = scorer_forward(grid, zero_weights())
    assert score.shape == (4, 4)
    np.testing.assert_allclose(score, 0.5, atol=1e-15)


def test_bias_only_final_layer_on_zero_input():
    w = zero_weights()
    w.conv4_b = np.array([1.3])
    score, _ = scorer_forward(np.zeros((16, 16, 5)), w)
    np.testing.assert_allclose(score, 1.0 / (1.0 + np.exp(-1.3)), atol=1e-12)


def test_forward_matches_direct_convolution_reference():
    rng = np.random.default_rng(1)
    grid = rng.standard_normal((32, 32, 5))
    weights = init_scorer_weights(rng)
    score, _ = scorer_forward(grid, weights)
    expect = naive_forward(grid, weights)
    np.testing.assert_allclose(score, expect, atol=1e-5)


def test_score_map_strictly_inside_unit_interval():
    rng = np.random.default_rng(2)
    for _ in range(5):
        score, _ = scorer_forward(rng.standard_normal((16, 16, 5)) * 3,
                                  init_scorer_weights(rng))
        assert np.all(score > 0.0) and np.all(score < 1.0)


def test_saturated_preactivations_stay_finite():
    w = zero_weights()
    w.conv4_b = np.array([50.0])
    hi, _ = scorer_forward(np.zeros((8, 8, 5)), w)
    w.conv4_b = np.array([-50.0])
    lo, _ = scorer_forward(np.zeros((8, 8, 5)), w)
    assert np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))
    assert np.all(hi > 0.0) and np.all(hi < 1.0)
    assert np.all(lo > 0.0) and np.all(lo < 1.0)


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    grid = rng.standard_normal((16, 16, 5))
    weights = init_scorer_weights(rng)
    s1, _ = scorer_forward(grid, weights)
    s2, _ = scorer_forward(grid, weights)
    np.testing.assert_array_equal(s1, s2)


def test_forward_shape_validation():
    with pytest.raises(ValueError):
        scorer_forward(np.zeros((16, 16, 4)), zero_weights())
    with pytest.raises(ValueError):
        scorer_forward(np.zeros((15, 16, 5)), zero_weights())


def test_weights_shape_validation():
    with pytest.raises(ValueError, match="conv2_w"):
        ScorerWeights(
            np.zeros((8, 5, 3, 3)), np.zeros(8),
            np.zeros((16, 9, 3, 3)), np.zeros(16),
            np.zeros((32, 16, 3, 3)), np.zeros(32),
            np.zeros((1, 32, 3, 3)), np.zeros(1),
        )


def readout_with_pattern(grid, weights, v):
    score, cache = scorer_forward(grid, weights)
    pattern = (cache.z1 > 0, cache.z2 > 0, cache.z3 > 0, cache.pool_arg)
    return float(np.sum(score * v)), pattern


def same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(rng, per_tensor=4, total=40, step=1e-4, tol=1e-4):
    """Central finite differences on sum(score * V) for every parameter tensor
    and the input grid. Returns the number of coordinates probed.

    A probe whose +/-step evaluations land on different ReLU masks or pooling
    argmaxes straddles a kink, where the difference quotient does not estimate
    the (one-sided) derivative; such probes are discarded and replaced with
    probes from a fresh random instance. Bias probes shift a whole channel at
    once, so on any single instance most of them straddle some kink; several
    instances are usually needed to fill their quota.
    """
    names = [f"conv{i}_{s}" for i in range(1, 5) for s in ("w", "b")] + ["input"]
    counts = dict.fromkeys(names, 0)
    probed = 0
    for _ in range(50):
        grid = rng.standard_normal((16, 16, 5))
        weights = init_scorer_weights(rng)
        v = rng.standard_normal((4, 4))
        score, cache = scorer_forward(grid, weights)
        grads, dinput = scorer_backward(cache, v, weights)
        for name in names:
            if name == "input":
                tensor, grad = grid, dinput
            else:
                tensor, grad = getattr(weights, name), getattr(grads, name)
            flat = tensor.reshape(-1)
            gflat = grad.reshape(-1)
            for k in rng.permutation(flat.size):
                if counts[name] >= per_tensor and probed >= total:
                    break
                orig = flat[k]
                flat[k] = orig + step
                f_plus, pat_plus = readout_with_pattern(grid, weights, v)
                flat[k] = orig - step
                f_minus, pat_minus = readout_with_pattern(grid, weights, v)
                flat[k] = orig
                if not same_pattern(pat_plus, pat_minus):
                    continue
                fd = (f_plus - f_minus) / (2 * step)
                scale = max(abs(fd), abs(gflat[k]), 1e-8)
                assert abs(fd - gflat[k]) / scale < tol, (
                    f"{name}[{k}]: analytic {gflat[k]:.3e} vs fd {fd:.3e}"
                )
                counts[name] += 1
                probed += 1
        if probed >= total and all(c >= per_tensor for c in counts.values()):
            return probed
    raise AssertionError(f"could not fill probe quotas: {counts}")


def test_backward_matches_finite_differences():
    probed = check_gradients(np.random.default_rng(4), n_probes_per_tensor=8)
    assert probed >= 60


def test_zero_upstream_gradient_gives_zero_grads():
    rng = np.random.default_rng(5)
    grid = rng.standard_normal((16, 16, 5))
    weights = init_scorer_weights(rng)
    _, cache = scorer_forward(grid, weights)
    grads, dinput = scorer_backward(cache, np.zeros((4, 4)), weights)
    for i in range(1, 5):
        assert np.all(getattr(grads, f"conv{i}_w") == 0.0)
        assert np.all(getattr(grads, f"conv{i}_b") == 0.0)
    assert np.all(dinput == 0.0)


def test_backward_deterministic():
    rng = np.random.default_rng(6)
    grid = rng.standard_normal((16, 16, 5))
    weights = init_scorer_weights(rng)
    v = rng.standard_normal((4, 4))
    _, cache1 = scorer_forward(grid, weights)
    g1, d1 = scorer_backward(cache1, v, weights)
    _, cache2 = scorer_forward(grid, weights)
    g2, d2 = scorer_backward(cache2, v, weights)
    np.testing.assert_array_equal(g1.conv1_w, g2.conv1_w)
    np.testing.assert_array_equal(d1, d2)


def test_backward_rejects_mismatched_upstream():
    rng = np.random.default_rng(7)
    _, cache = scorer_forward(rng.standard_normal((16, 16, 5)),
                              init_scorer_weights(rng))
    with pytest.raises(ValueError, match="upstream"):
        scorer_backward(cache, np.zeros((8, 8)), init_scorer_weights(rng))


def test_weight_container_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    weights = init_scorer_weights(rng)
    path = tmp_path / "weights.evtk"
    weights.save(path)
    back = ScorerWeights.load(path)
    for i in range(1, 5):
        np.testing.assert_allclose(
            getattr(back, f"conv{i}_w"), getattr(weights, f"conv{i}_w"), atol=1e-7
        )


def test_init_weights_seeded_and_bounded():
    a = init_scorer_weights(np.random.default_rng(9))
    b = init_scorer_weights(np.random.default_rng(9))
    np.testing.assert_array_equal(a.conv3_w, b.conv3_w)
    assert np.abs(a.conv1_w).max() <= np.sqrt(1.0 / 45)
    assert np.abs(a.conv2_w).max() <= np.sqrt(1.0 / 72)


def test_gradient_scorer_constant_image_is_zero():
    grid = np.full((16, 16, 5), 0.7)
    score = gradient_scorer(grid)
    np.testing.assert_allclose(score, 0.0, atol=1e-12)


def test_gradient_scorer_highlights_step_edge():
    grid = np.zeros((32, 32, 5))
    grid[:, 16:, :] = 1.0  # vertical step between columns 15 and 16
    score = gradient_scorer(grid)
    edge_band = score[:, 3:5]
    off_band = np.concatenate([score[:, :2], score[:, 6:]], axis=1)
    assert edge_band.min() > off_band.max()


def test_gradient_scorer_matches_stencil_oracle():
    rng = np.random.default_rng(10)
    grid = rng.standard_normal((16, 16, 5))
    score = gradient_scorer(grid)

    collapsed = np.abs(grid).sum(axis=2)
    gy, gx = np.gradient(collapsed)
    mag = np.sqrt(gx * gx + gy * gy)
    pooled = mag.reshape(4, 4, 4, 4).mean(axis=(1, 3))
    expect = pooled / (pooled.max() + 1e-8)
    np.testing.assert_allclose(score, expect, atol=1e-6)
    assert np.all(score >= 0.0) and np.all(score < 1.0)


def test_gradient_scorer_shape_validation():
    with pytest.raises(ValueError):
        gradient_scorer(np.zeros((15, 16, 5)))
