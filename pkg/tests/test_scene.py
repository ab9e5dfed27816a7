"""Synthetic scene renderer: plane geometry, splat z-buffering, path sampling."""

import numpy as np
import pytest

from eventvo.geometry import CameraIntrinsics, Pose
from eventvo.scene import (
    CameraPath,
    SceneValidityError,
    SyntheticScene,
    downward_orbit_path,
    render_scene,
    smooth_noise_texture,
)

INTR = CameraIntrinsics(fx=50.0, fy=50.0, cx=15.5, cy=15.5, width=32, height=32)
Q_DOWN = np.array([1.0, 0.0, 0.0, 0.0])  # look along -z world


def down_path(positions, duration=1000):
    positions = np.asarray(positions, dtype=np.float64)
    times = np.linspace(0, duration, len(positions)).astype(np.int64)
    return CameraPath(times, positions, np.tile(Q_DOWN, (len(positions), 1)))


def checker_texture(n=128):
    yy, xx = np.mgrid[0:n, 0:n]
    return 0.2 + 0.6 * (((xx // 8) + (yy // 8)) % 2)


def test_static_camera_renders_identical_frames():
    rng = np.random.default_rng(0)
    scene = SyntheticScene(
        intrinsics=INTR,
        path=down_path([[0, 0, 2.0]] * 2),
        texture=smooth_noise_texture(128, rng),
        plane_extent=(-1.5, 1.5, -1.5, 1.5),
    )
    bundle = render_scene(scene, [0, 500, 1000])
    assert np.array_equal(bundle.frames.frames[0], bundle.frames.frames[1])
    assert np.array_equal(bundle.frames.frames[0], bundle.frames.frames[2])


def test_fronto_parallel_plane_has_constant_inverse_depth():
    scene = SyntheticScene(
        intrinsics=INTR,
        path=down_path([[0, 0, 2.0]] * 2),
        texture=checker_texture(),
        plane_extent=(-2, 2, -2, 2),
    )
    bundle = render_scene(scene, [0, 1000])
    np.testing.assert_allclose(bundle.inv_depth_maps, 0.5, atol=1e-12)


def test_x_translation_shifts_frame_by_fx_dx_over_depth():
    """Translating the down-looking camera by dx shifts content by
    fx * dx / depth pixels; dx chosen so the shift is exactly one pixel."""
    h = 2.0
    dx = h / INTR.fx  # one-pixel shift
    scene = SyntheticScene(
        intrinsics=INTR,
        path=down_path([[0, 0, h], [dx, 0, h]]),
        texture=checker_texture(256),
        plane_extent=(-2, 2, -2, 2),
    )
    bundle = render_scene(scene, [0, 1000])
    f0, f1 = bundle.frames.frames
    # camera moved +x (aligned with pixel u), so content moves one pixel left
    np.testing.assert_allclose(f1[:, :-1], f0[:, 1:], atol=1e-9)


def test_path_interpolates_control_poses_exactly():
    rng = np.random.default_rng(1)
    k = 5
    times = np.array([0, 100, 300, 600, 1000])
    positions = rng.standard_normal((k, 3))
    quats = rng.standard_normal((k, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    path = CameraPath(times, positions, quats)
    for i in range(k):
        pose = path.pose_at(times[i])
        np.testing.assert_allclose(pose.t, positions[i], atol=1e-9)
        assert min(np.abs(pose.q - quats[i]).max(),
                   np.abs(pose.q + quats[i]).max()) < 1e-9


def test_path_rejects_out_of_range_sample():
    path = down_path([[0, 0, 1], [1, 0, 1]])
    with pytest.raises(ValueError, match="outside"):
        path.pose_at(2000)


def test_path_validation():
    with pytest.raises(ValueError, match="two control"):
        CameraPath(np.array([0]), np.zeros((1, 3)), np.tile(Q_DOWN, (1, 1)))
    with pytest.raises(ValueError, match="strictly increasing"):
        CameraPath(np.array([0, 0]), np.zeros((2, 3)), np.tile(Q_DOWN, (2, 1)))


def test_landmark_splats_with_z_buffer():
    # two landmarks on the optical axis; the nearer one must win the pixel
    path = down_path([[0, 0, 4.0]] * 2)
    landmarks = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    albedos = np.array([0.1, 0.9])
    scene = SyntheticScene(
        intrinsics=INTR, path=path, landmarks=landmarks, albedos=albedos,
        background=0.5,
    )
    bundle = render_scene(scene, [0, 1000])
    frame = bundle.frames.frames[0]
    cy, cx = 16, 16  # principal point rounds to this pixel
    assert frame[cy, cx] == 0.9  # landmark at z=2 is 2m away, the other 4m
    assert bundle.inv_depth_maps[0, cy, cx] == pytest.approx(0.5)
    # background everywhere else
    assert np.sum(frame != 0.5) == 1


def test_landmark_behind_camera_raises():
    path = down_path([[0, 0, 2.0]] * 2)
    scene = SyntheticScene(
        intrinsics=INTR, path=path,
        landmarks=np.array([[0.0, 0.0, 3.0]]),  # above the down-looking camera
        albedos=np.array([1.0]),
    )
    with pytest.raises(SceneValidityError, match="behind"):
        render_scene(scene, [0, 1000])


def test_scene_requires_exactly_one_content_source():
    path = down_path([[0, 0, 2.0]] * 2)
    with pytest.raises(ValueError, match="exactly one"):
        SyntheticScene(intrinsics=INTR, path=path)
    with pytest.raises(ValueError, match="exactly one"):
        SyntheticScene(intrinsics=INTR, path=path,
                       texture=np.zeros((4, 4)),
                       landmarks=np.zeros((1, 3)), albedos=np.ones(1))


def test_render_needs_two_timestamps():
    scene = SyntheticScene(
        intrinsics=INTR, path=down_path([[0, 0, 2.0]] * 2),
        texture=checker_texture(), plane_extent=(-2, 2, -2, 2),
    )
    with pytest.raises(ValueError, match="two timestamps"):
        render_scene(scene, [0])


def test_rendered_poses_match_path():
    scene = SyntheticScene(
        intrinsics=INTR, path=down_path([[0, 0, 2.0], [0.1, 0, 2.0]]),
        texture=checker_texture(), plane_extent=(-2, 2, -2, 2),
    )
    bundle = render_scene(scene, [0, 250, 1000])
    assert len(bundle.poses) == 3
    np.testing.assert_allclose(bundle.poses.times, [0, 0.00025, 0.001])
    np.testing.assert_allclose(bundle.poses.pose(2).t, [0.1, 0, 2.0], atol=1e-12)


def test_smooth_noise_texture_range_and_determinism():
    a = smooth_noise_texture(64, np.random.default_rng(3), octaves=3, lo=0.2, hi=0.8)
    b = smooth_noise_texture(64, np.random.default_rng(3), octaves=3, lo=0.2, hi=0.8)
    assert a.shape == (64, 64)
    assert a.min() >= 0.2 - 1e-12 and a.max() <= 0.8 + 1e-12
    np.testing.assert_array_equal(a, b)


def test_downward_orbit_path_geometry():
    path = downward_orbit_path(radius=1.5, height=2.0, duration_us=10_000,
                               n_control=9, turns=1.0)
    r = np.linalg.norm(path.positions[:, :2], axis=1)
    np.testing.assert_allclose(r, 1.5, atol=1e-12)
    np.testing.assert_allclose(path.positions[:, 2], 2.0)
    # constant orientation: the optical axis points along -z world
    assert np.all(path.quats == Q_DOWN)
    # full turn closes the circle
    np.testing.assert_allclose(path.positions[0], path.positions[-1], atol=1e-12)
