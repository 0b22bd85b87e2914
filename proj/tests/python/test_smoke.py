import math

import numpy as np
import pytest

import mvdgw


def test_flatten_and_normalize():
    assert mvdgw.flatten_index(1, 2, 3, (2, 3, 4)) == 23
    with pytest.raises(mvdgw.BoundsError):
        mvdgw.flatten_index(2, 0, 0, (2, 3, 4))
    p = mvdgw.normalize_attention(np.arange(8.0).reshape(2, 2, 2))
    assert p.shape == (8,)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.allclose(mvdgw.normalize_attention(np.zeros((1, 2, 2))), 0.25)


def test_sinkhorn_closed_form():
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    half = np.array([0.5, 0.5])
    r = mvdgw.sinkhorn(cost, half, half, epsilon=0.1)
    expected = 0.5 / (1.0 + math.exp(-10.0))
    assert abs(r["plan"][0, 0] - expected) < 1e-9
    assert r["converged"]


def test_gw_two_points():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    half = np.array([0.5, 0.5])
    r = mvdgw.solve_gw(d, d, half, half, epsilon=0.01)
    assert r["value"] <= 0.005
    assert r["coupling"].shape == (2, 2)


def test_dgw_self_and_errors():
    rng = np.random.default_rng(0)
    a = rng.random((2, 2, 3))
    r = mvdgw.dgw(a, a, epsilon=0.01)
    assert r["value"] <= 0.02
    l2 = mvdgw.dgw(a, a, epsilon=0.05, loss="l2")
    assert np.isfinite(l2["value"])
    with pytest.raises(mvdgw.ValidationError):
        mvdgw.dgw(-a, a)
    with pytest.raises(mvdgw.ConfigError):
        mvdgw.dgw(a, a, loss="l1")


def test_cosine_loss_conventions():
    assert mvdgw.cosine_loss((1, 0, 0), (-1, 0, 0)) == 1.0
    assert mvdgw.cosine_loss((0, 0, 0), (0, 0, 0)) == 0.0
    assert mvdgw.cosine_loss((0, 0, 0), (0, 1, 0)) == 0.5


def test_pose_and_render():
    pose = mvdgw.pose_from_angle(10.0)
    assert pose.shape == (3, 4)
    assert abs(pose[0, 0] - math.cos(math.radians(10))) < 1e-12
    z = np.random.default_rng(1).normal(size=(2, 3, 3, 4))
    out = mvdgw.render(z, 5.0, samples=16, seed=3)
    assert out.shape == (2, 3, 3, 4)
    assert np.array_equal(out, mvdgw.render(z, 5.0, samples=16, seed=3))


def test_synth_and_tensor_io(tmp_path):
    video, visible = mvdgw.synth_scene({"frames": 2, "height": 4, "width": 6}, beta=3.0)
    assert video.shape == (2, 4, 6, 3)
    assert visible
    path = str(tmp_path / "v.dgwt")
    mvdgw.write_tensor(path, video)
    assert np.array_equal(mvdgw.read_tensor(path), video)
    with open(path, "r+b") as f:
        f.write(b"XXXX")
    with pytest.raises(mvdgw.FormatError, match="offset 0"):
        mvdgw.read_tensor(path)
    with pytest.raises(mvdgw.ConfigError):
        mvdgw.synth_scene({"frames": 2, "unknown": 1})


def test_pipeline_report():
    cfg = {"scene": {"frames": 2, "height": 4, "width": 4}, "solver": {"epsilon": 0.05}}
    r = mvdgw.run_pipeline(cfg, beta1=-10, beta2=10, label=1, seed=2)
    assert list(r)[:3] == ["beta1", "beta2", "label"]
    assert r["total"] == r["lambda_cls"] * r["ce"] + r["lambda_dgw"] * r["mean_dgw"]
    assert len(r["dgw_per_head"]) == 4
    assert all(math.isfinite(x) for x in r["logits_view1"] + r["logits_view2"])
    assert abs(mvdgw.cross_entropy(np.zeros(4), 0) - math.log(4)) < 1e-15
