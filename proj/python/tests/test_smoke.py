import os
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

import sdpoint

REPO = Path(__file__).resolve().parents[2]


def test_target_size_and_windows():
    assert sdpoint.target_size(28, 0.75) == 21
    assert sdpoint.target_size(1, 0.5) == 1
    windows = sdpoint.pool_windows(4, 3)
    assert windows == [(0, 2), (1, 3), (2, 4)]


def test_adaptive_pool_matches_numpy_windows():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 7, 5))
    y = sdpoint.adaptive_avg_pool(x, 4, 3)
    rows, cols = sdpoint.pool_windows(7, 4), sdpoint.pool_windows(5, 3)
    expect = np.empty((2, 3, 4, 3))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            expect[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    np.testing.assert_allclose(y, expect, rtol=1e-12)
    g = sdpoint.adaptive_avg_pool_backward(np.ones((2, 3, 4, 3)), (2, 3, 7, 5))
    assert g.shape == (2, 3, 7, 5)
    np.testing.assert_allclose(g.sum(), 2 * 3 * 4 * 3)


def test_catalog_and_costs():
    ids = sdpoint.catalog_ids(6)
    assert len(ids) == 13 and ids[0] == "p0" and "p6_r75" in ids
    table = dict(sdpoint.cost_table(16, 2))
    assert table["p0"] == 203_074_176
    assert table["p1_r50"] < table["p1_r75"] < table["p0"]
    assert sdpoint.param_count(16, 2) == 691_674
    assert round(sdpoint.padded_pixel_ratio(8, 8, 3, 1), 2) == 0.44


def test_pareto_filter():
    pts = [("a", 1, 30.0), ("b", 2, 20.0), ("c", 3, 25.0), ("d", 4, 10.0)]
    assert [p[0] for p in sdpoint.pareto_filter(pts)] == ["a", "b", "d"]


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        sdpoint.pool_windows(3, 5)
    with pytest.raises(OSError):
        sdpoint.Model("/nonexistent/model.sdpt")


def _cli():
    explicit = os.environ.get("SDPOINT_CLI")
    if explicit:
        return explicit
    built = REPO / "build" / "sdpoint"
    return str(built) if built.exists() else shutil.which("sdpoint")


@pytest.mark.skipif(_cli() is None, reason="sdpoint CLI not built")
def test_model_predicts_from_calibrated_checkpoint(tmp_path):
    cli = _cli()
    data, out = tmp_path / "data", tmp_path / "out"
    subprocess.run([cli, "synth", str(data), "--train-per-file", "20", "--val", "30"], check=True)
    (tmp_path / "cfg.yaml").write_text(
        "model: {depth: 10, widen: 1}\n"
        "train: {mode: sdpoint, epochs: 1, batch_size: 25, subset: 50}\n"
        f"data: {{dir: {data}}}\n"
        f"output: {{dir: {out}}}\n"
    )
    subprocess.run([cli, "train", str(tmp_path / "cfg.yaml")], check=True, capture_output=True)
    ckpt = out / "model.sdpt"
    subprocess.run([cli, "calibrate", str(ckpt), "--data", str(data), "-K", "1", "--batch-size", "20"],
                   check=True, capture_output=True)

    model = sdpoint.Model(str(ckpt))
    assert model.mode == "sdpoint" and model.calibrated
    assert model.instance_ids()[0] == "p0" and len(model.instance_ids()) == 7
    assert model.flops("p1_r50") < model.flops("p0")
    images = np.random.default_rng(1).uniform(size=(5, 3, 32, 32)).astype(np.float32)
    pred = model.predict(images, "p2_r75")
    assert pred.shape == (5,) and ((0 <= pred) & (pred < 10)).all()
    np.testing.assert_array_equal(pred, model.predict(images, "p2_r75"))
    assert model.storage()["overhead_vs_params"] > 0
    with pytest.raises(ValueError):
        model.predict(images, "p9_r50")
