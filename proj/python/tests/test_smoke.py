import math

import numpy as np
import pytest

import voltrack as vt


def small_scene(seed=5, cameras=3, points=4, frames=6, feature_dim=4):
    cfg = vt.SceneConfig()
    cfg.n_cameras = cameras
    cfg.n_points = points
    cfg.n_frames = frames
    cfg.feature_dim = feature_dim
    cfg.seed = seed
    return vt.generate_scene(cfg)


def test_projection_triangulation_round_trip():
    cams = vt.ring_rig(3, 4.0, 0.5, 640, 480)
    point = np.array([0.2, -0.1, 0.3])
    pixels = [vt.project(point, c).pixel for c in cams]
    back = vt.dlt_triangulate(cams, pixels)
    assert np.linalg.norm(back - point) < 1e-7


def test_epipolar_residual_is_tiny():
    cams = vt.ring_rig(2, 4.0, 0.5, 640, 480)
    f = vt.fundamental_matrix(cams[0], cams[1])
    assert not f.degenerate
    point = np.array([0.1, 0.2, -0.3])
    xa = vt.project(point, cams[0]).pixel
    xb = vt.project(point, cams[1]).pixel
    residual = np.append(xb, 1.0) @ f.m @ np.append(xa, 1.0)
    assert abs(residual) < 1e-8


def test_attention_rows_sum_to_one():
    grid = vt.make_grid(5)
    cam = vt.ring_rig(2, 4.0, 0.5, 640, 480)[0]
    pg = vt.project_grid(grid, cam)
    points = np.array([[300.0, 220.0], [340.0, 250.0]])
    attn = vt.distance_attention(pg, points, 0.2)
    assert attn.shape == (125, 2)
    assert np.allclose(attn.sum(axis=1), 1.0)


def test_train_track_and_score(tmp_path):
    scene = small_scene()
    opts = vt.TrackOptions()
    opts.grid_resolution = 6

    tc = vt.TrainConfig()
    tc.max_steps = 40
    tc.warmup_steps = 8
    tc.base_lr = 3e-3
    tc.options = opts
    tc.seed = 3

    init = vt.init_model([8, 8], 4, 4, 3, 7)
    res = vt.train(tc, [vt.train_sample(scene)], init)
    assert len(res.log) == 40
    assert all(math.isfinite(row.total) for row in res.log)
    assert res.checkpoint.step == 40

    tracks = vt.track_sequence(vt.tracking_input(scene), res.checkpoint.model, opts)
    assert len(tracks) == 4
    assert tracks[0].xyz.shape == (6, 3)

    err = vt.mean_3d_error(tracks, scene.gt)
    assert math.isfinite(err) and err >= 0.0
    score = vt.apd(tracks, scene.gt, list(vt.default_thresholds_3d))
    assert 0.0 <= score <= 100.0
    report = vt.evaluate(tracks, scene)
    assert report.n_points == 4 and report.n_frames == 6
    assert report.apd == pytest.approx(score)

    path = tmp_path / "model.ckpt"
    vt.save_checkpoint(res.checkpoint, path)
    back = vt.load_checkpoint(path)
    assert back.step == res.checkpoint.step
    again = vt.track_sequence(vt.tracking_input(scene), back.model, opts)
    assert np.allclose(tracks[0].xyz, again[0].xyz)


def test_scene_file_round_trip(tmp_path):
    scene = small_scene(seed=9)
    path = tmp_path / "scene.json"
    vt.save_scene(scene, path)
    loaded = vt.load_scene(path)
    assert loaded.config.n_points == scene.config.n_points
    assert np.allclose(np.array(loaded.gt[0]), np.array(scene.gt[0]))


def test_flop_model_grid_ratio():
    spec = vt.MlpSpec()
    spec.layer_sizes = [vt.compound_feature_size(16, 12, 3), 64, 64, 32, 3]
    f16 = vt.flop_estimate(16, 3, 12, 16, spec)
    f24 = vt.flop_estimate(24, 3, 12, 16, spec)
    assert f24.voxel_total() / f16.voxel_total() == pytest.approx(3.375)


def test_errors_surface_as_python_exceptions():
    with pytest.raises(Exception) as err:
        cfg = vt.SceneConfig()
        cfg.n_cameras = 0
        vt.generate_scene(cfg)
    assert "camera" in str(err.value).lower()
