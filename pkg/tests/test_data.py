import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikepose.data import (
    DatasetError,
    SampleSpec,
    Window,
    augmented_windows,
    build_sample,
    load_dataset,
    rotate_grid,
    rotate_pose,
    sample_windows,
    synthesize_dataset,
)
from spikepose.events import ToyConfig, read_events
from spikepose.pose.kinematics import PoseParams, chain_model, desk_model, fk, project


@pytest.fixture(scope="module")
def pendulum(tmp_path_factory):
    path = tmp_path_factory.mktemp("pend")
    return path, synthesize_dataset(path, ToyConfig(), n_sequences=1, seed=3, n_eval_sequences=1)


def test_layout_and_pose_count(pendulum):
    path, ds = pendulum
    meta = json.loads((path / "dataset.json").read_text())
    assert [e["split"] for e in meta["sequences"]] == ["train", "eval"]
    gt = json.loads((path / "seq_0000_gt.json").read_text())
    assert len(gt["poses"]) == 120
    assert gt["frame_period_us"] == 33333
    assert read_events(path / "seq_0000.evs").width == 64


def test_load_matches_written(pendulum):
    path, ds = pendulum
    back = load_dataset(path)
    assert back.indices("train") == [0] and back.indices("eval") == [1]
    for a, b in zip(ds.sequences, back.sequences):
        assert np.array_equal(a.events.events, b.events.events)
        assert np.array_equal(a.poses.theta, b.poses.theta)
        assert np.array_equal(a.poses.t, b.poses.t)


def test_same_seed_same_bytes(tmp_path):
    a = synthesize_dataset(tmp_path / "a", ToyConfig(duration=1), 2, seed=5)
    b = synthesize_dataset(tmp_path / "b", ToyConfig(duration=1), 2, seed=5)
    for name in ("dataset.json", "seq_0000.evs", "seq_0001.evs", "seq_0001_gt.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert a.meta["sequences"][0]["phase"] != a.meta["sequences"][1]["phase"]


def test_missing_dataset(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_windows_fit_and_are_disjoint(pendulum):
    _, ds = pendulum
    ws = sample_windows(ds, 8, 2)
    assert all(w.start + 16 <= 119 for w in ws)
    starts = [w.start for w in ws if w.seq == 0]
    assert np.all(np.diff(starts) == 16)
    assert {w.seq for w in sample_windows(ds, 8, 2, split="eval")} == {1}


def test_packet_alignment(pendulum):
    """Events stamped at frame s0 + tP + k (1 <= k <= P) land in packet t."""
    _, ds = pendulum
    seq = ds.sequences[0]
    w = Window(0, 10, 2)
    spec = SampleSpec(T=8, C=1)
    grid, poses = build_sample(ds, w, spec)
    assert np.array_equal(poses.t, seq.poses.t[10 + 2 * np.arange(1, 9)])
    ev = seq.events.events
    for t in range(8):
        lo, hi = seq.poses.t[10 + 2 * t], seq.poses.t[10 + 2 * t + 2]
        inside = ev[(ev["t"] > lo) & (ev["t"] <= hi)]
        expect = np.zeros((64, 64), np.uint8)
        expect[inside["y"], inside["x"]] = 1
        assert np.array_equal(grid[t, :, :, 0], expect)


def test_window_past_end(pendulum):
    _, ds = pendulum
    with pytest.raises(DatasetError):
        build_sample(ds, Window(0, 110, 2), SampleSpec())


def test_augmented_windows_fit(pendulum):
    _, ds = pendulum
    rng = np.random.default_rng(0)
    ws = augmented_windows(ds, 8, 2, 4, rng, (0.5, 1, 2, 3), 20.0)
    assert {w.frames_per_packet for w in ws} <= {1, 2, 4, 6}
    assert len({w.frames_per_packet for w in ws}) > 1
    assert all(abs(w.angle) <= np.deg2rad(20) for w in ws)
    for w in ws:
        grid, poses = build_sample(ds, w, SampleSpec())
        assert set(np.unique(grid)) <= {0, 1}


def test_rotate_grid_zero_and_quarter_turn():
    rng = np.random.default_rng(0)
    g = (rng.random((3, 16, 16, 2)) < 0.3).astype(np.uint8)
    assert np.array_equal(rotate_grid(g, 0.0), g)
    # about the principal point (8, 8): out[v, u] = g[16 - u, v], empty where 16 - u leaves the frame
    q = rotate_grid(g, np.pi / 2)
    expect = np.zeros_like(g)
    for v in range(16):
        for u in range(1, 16):
            expect[:, v, u] = g[:, 16 - u, v]
    assert np.array_equal(q, expect)


def test_rotate_grid_matches_projection():
    """A voxel at a projected point moves to the projection of the rotated point."""
    model = chain_model(1, 0.6)
    K = model.intrinsics
    pts = np.array([[0.3, -0.2, 3.0], [-0.25, 0.1, 3.0], [0.1, 0.35, 3.0]])
    for angle in (np.pi / 2, -np.pi / 2, np.pi):
        c, s = np.cos(angle), np.sin(angle)
        Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        for p in pts:
            u, v = np.floor(project(p, K) + 0.5).astype(int)
            g = np.zeros((64, 64, 1), np.uint8)
            g[v, u, 0] = 1
            r = rotate_grid(g, angle)
            ur, vr = project(Rz @ p, K)
            ys, xs = np.nonzero(r[..., 0])
            assert len(ys) == 1
            assert abs(xs[0] - ur) <= 1 and abs(ys[0] - vr) <= 1


@settings(max_examples=40, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 2**31 - 1))
def test_rotate_pose_rotates_joints(angle, seed):
    rng = np.random.default_rng(seed)
    model = desk_model(0.3, n_shape=4)
    pose = PoseParams(rng.normal(0, 0.7, (3, 5, 3)), rng.normal(0, 1, (3, 4)), rng.normal(0, 1, (3, 3)))
    c, s = np.cos(angle), np.sin(angle)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    before = fk(model, pose.theta, pose.beta, pose.d).data
    rp = rotate_pose(pose, model, angle)
    after = fk(model, rp.theta, rp.beta, rp.d).data
    assert np.allclose(after, before @ Rz.T, atol=1e-9)
    assert np.array_equal(rp.beta, pose.beta)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.4, 0.4), st.integers(0, 2**31 - 1))
def test_rotate_grid_stays_binary(angle, seed):
    g = (np.random.default_rng(seed).random((2, 12, 20, 3)) < 0.2).astype(np.uint8)
    r = rotate_grid(g, angle, sensor_hw=(24, 40))
    assert r.shape == g.shape and set(np.unique(r)) <= {0, 1}
