import numpy as np
import pytest

import msts


def test_flops_split_below_joint_for_full_scale_shape():
    f = msts.attention_flops(5, [3840, 960, 240], 256)
    assert f["intra"] == 32256000
    assert f["split"] == f["intra"] + f["inter"]
    assert f["joint"] == 162570240000
    assert f["split"] < f["joint"]


def test_attention_weights_are_row_stochastic():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 4, 6))
    out, w = msts.intra_scale_attention(z, seed=1)
    assert out.shape == z.shape
    assert w.shape == (3, 1, 4, 4)  # [S, heads, T, T]
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    out, w = msts.inter_scale_attention(z, seed=1)
    assert w.shape[-2:] == (12, 12)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


def test_assignment_matches_scipy():
    from scipy.optimize import linear_sum_assignment

    rng = np.random.default_rng(3)
    for _ in range(20):
        rows = int(rng.integers(1, 6))
        cost = rng.uniform(size=(rows, int(rng.integers(rows, 8))))
        cols, total = msts.solve_assignment(cost)
        r, c = linear_sum_assignment(cost)
        assert total == pytest.approx(cost[r, c].sum(), abs=1e-12)
        assert len(set(cols)) == rows


def test_iou_and_ap():
    a = np.zeros((2, 4, 4), np.uint8)
    b = np.zeros((2, 4, 4), np.uint8)
    a[:, :, 0:2] = 1
    b[:, :, 1:3] = 1
    assert msts.video_iou(a, b) == pytest.approx(1 / 3)
    video = {"predictions": [{"class_id": 0, "score": 0.9, "masks": a}], "ground_truth": [{"class_id": 0, "masks": a}]}
    assert msts.compute_ap([video])["AP"] == 100.0
    video["predictions"] = []
    assert msts.compute_ap([video])["AP"] == 0.0


def test_sample_and_benchmark():
    s = msts.random_sample("fast_motion", seed=4)
    assert s["frames"].shape == (3, 3, 64, 64)
    assert "fast_motion" in s["attributes"]
    for inst in s["instances"]:
        assert inst["masks"].shape == (3, 64, 64)
    spec = {"seed": 1, "frames": 3, "height": 64, "width": 64, "max_instances": 2,
            "requested": {"train": 2, "val": 1, "fast_motion": 2, "size_change": 0, "aspect_change": 0}}
    m = msts.make_benchmark(spec)
    assert len(m["samples"]) == 5
    assert m == msts.make_benchmark(spec)


def test_model_forward_shapes_and_config_errors(tmp_path):
    model = msts.Model("queries = 4\nfgbg_loss = false", seed=2)
    frames = msts.random_sample(seed=1)["frames"].astype(np.float64) / 255.0
    out = model.forward(frames)
    assert out["class_logits"].shape == (4, 4)
    assert out["boxes"].shape == (3, 4, 4)
    assert out["mask_logits"].shape == (3, 4, 8, 8)
    assert model.disc_param_count() == 0
    path = tmp_path / "ck.json"
    model.save(str(path))
    again = msts.Model.load(str(path))
    np.testing.assert_array_equal(again.forward(frames)["mask_logits"], out["mask_logits"])
    with pytest.raises(msts.ConfigError):
        msts.Model("bogus = 1")


def test_check_grad_and_tiny_training(tmp_path):
    ok, text = msts.check_grad("heads")
    assert ok, text
    cfg = "epochs = 1\nlr_drops = []\ndata_train = 2\ndata_val = 2"
    metrics = msts.train(cfg, tmp_path / "run")
    assert 0.0 <= metrics["AP"] <= 100.0
    assert (tmp_path / "run" / "train_log.jsonl").exists()
