import json

import numpy as np
import pytest
from PIL import Image

from densegrasp.cli import EXIT_DATA, EXIT_NO_GRASP, EXIT_OK, EXIT_USAGE, main
from densegrasp.dataset_store import load_manifest
from densegrasp.depth_render import CameraModel, save_depth_png
from densegrasp.label_gen import BACKGROUND, POSITIVE, classes_to_rgb
from densegrasp.viz import depth_to_gray


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["generate", "--out", str(root), "--scenes", "2", "--seed", "3", "--jobs", "1"]) == EXIT_OK
    return root


@pytest.fixture
def bar_inputs(tmp_path):
    """A 20 px bar under an orthographic camera, with a bin 0 map holding one positive pixel."""
    d = np.full((120, 160), 600.0)
    d[20:100, 70:90] = 570.0
    save_depth_png(d, tmp_path / "depth.png")
    cam = CameraModel.top_down(600.0, 160, 120, kind="orthographic")
    (tmp_path / "camera.json").write_text(json.dumps(cam.to_dict()))
    maps = tmp_path / "maps"
    maps.mkdir()

    def write_map(pixels):
        classes = np.full((120, 160), BACKGROUND, dtype=np.uint8)
        for u, v in pixels:
            classes[v, u] = POSITIVE
        Image.fromarray(classes_to_rgb(classes)).save(maps / "bin_00.png")

    write_map([(80, 60)])
    return tmp_path, write_map


def _optimize_args(base, out):
    return ["optimize", "--out", str(out), "--depth", str(base / "depth.png"), "--camera",
            str(base / "camera.json"), "--maps", str(base / "maps")]


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["generate"]) == EXIT_USAGE  # --out is required
    assert main(["generate", "--out", str(tmp_path), "--bogus"]) == EXIT_USAGE
    assert main(["frobnicate", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenes": 1, "colour": "red"}))
    assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("{not json")
    assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_USAGE
    assert main(["generate", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "none.json")]) == EXIT_USAGE


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenes": 4, "seed": 3, "jobs": 1}))
    out = tmp_path / "o"
    assert main(["generate", "--out", str(out), "--config", str(cfg), "--scenes", "1"]) == EXIT_OK
    run = json.loads((out / "run_config.json").read_text())
    assert run["generate"]["n_scenes"] == 1 and run["generate"]["scene"]["seed"] == 3
    assert len(load_manifest(out)["scenes"]) == 1


def test_generated_dataset(dataset):
    m = load_manifest(dataset)
    assert len(m["scenes"]) == 2 and m["sample_count"] > 0
    assert (dataset / "run_config.json").exists()


def test_no_augment_is_sparse(dataset, tmp_path):
    out = tmp_path / "sparse"
    assert main(["generate", "--out", str(out), "--scenes", "2", "--seed", "3", "--jobs", "1", "--no-augment"]) == 0
    dense, sparse = load_manifest(dataset)["class_totals"], load_manifest(out)["class_totals"]
    assert dense["positive"] + dense["negative"] >= 3 * (sparse["positive"] + sparse["negative"])


def test_evaluate(dataset, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--out", str(out), "--dataset", str(dataset), "--variant", "both", "--jobs", "1"]) == 0
    for v in ("with_GO", "without_GO"):
        rep = json.loads((out / f"eval_{v}.json").read_text())
        assert rep["trials"] == 2 and sum(rep["histogram"].values()) == 2
    assert "success rate" in capsys.readouterr().out


def test_evaluate_errors(dataset, tmp_path):
    assert main(["evaluate", "--out", str(tmp_path), "--dataset", str(dataset), "--max-scenes", "0"]) == EXIT_USAGE
    assert main(["evaluate", "--out", str(tmp_path), "--dataset", str(tmp_path / "nope")]) == EXIT_USAGE
    assert main(["evaluate", "--out", str(tmp_path)]) == EXIT_USAGE
    (tmp_path / "fake").mkdir()
    (tmp_path / "fake/manifest.json").write_text("{broken")
    assert main(["evaluate", "--out", str(tmp_path / "o"), "--dataset", str(tmp_path / "fake")]) == EXIT_DATA


def test_optimize_bar(bar_inputs, tmp_path):
    base, _ = bar_inputs
    out = tmp_path / "opt"
    assert main(_optimize_args(base, out)) == EXIT_OK
    g = json.loads((out / "grasp.json").read_text())
    assert g["valid"] and g["width_mm"] == pytest.approx(20.0, abs=1.0)
    assert g["center_px"] == [80.0, 60.0] and g["theta_refined"] == pytest.approx(0.0, abs=1.0)
    with Image.open(out / "grasp_overlay.png") as im:
        assert im.size == (160, 120) and im.mode == "RGB"
    first = (out / "grasp.json").read_bytes()
    assert main(_optimize_args(base, out)) == EXIT_OK
    assert (out / "grasp.json").read_bytes() == first


def test_optimize_errors(bar_inputs, tmp_path):
    base, write_map = bar_inputs
    assert main(_optimize_args(base, tmp_path / "o") + ["--top-k", "0"]) == EXIT_USAGE
    args = _optimize_args(base, tmp_path / "o")
    args[args.index("--maps") + 1] = str(tmp_path / "missing")
    assert main(args) == EXIT_USAGE
    (tmp_path / "empty").mkdir()
    args[args.index("--maps") + 1] = str(tmp_path / "empty")
    assert main(args) == EXIT_USAGE
    write_map([(10, 10), (80, 60)])  # the first-ranked pixel lies on the bare table
    assert main(_optimize_args(base, tmp_path / "o") + ["--top-k", "1"]) == EXIT_NO_GRASP
    assert main(_optimize_args(base, tmp_path / "o") + ["--top-k", "2"]) == EXIT_OK


def test_optimize_from_dataset(dataset, tmp_path):
    assert main(["optimize", "--out", str(tmp_path), "--dataset", str(dataset), "--scene", "0000"]) in (0, 3)
    assert main(["optimize", "--out", str(tmp_path), "--dataset", str(dataset), "--scene", "9999"]) == EXIT_USAGE


def test_viz_empty_map_is_pure_depth(tmp_path):
    d = np.full((40, 50), 600.0)
    d[10:30, 10:20] = 560.0
    save_depth_png(d, tmp_path / "d.png")
    Image.fromarray(classes_to_rgb(np.full((40, 50), BACKGROUND, np.uint8))).save(tmp_path / "l.png")
    out = tmp_path / "v"
    assert main(["viz", "--out", str(out), "--depth", str(tmp_path / "d.png"), "--labels", str(tmp_path / "l.png")]) == 0
    img = np.array(Image.open(out / "overlay.png"))
    assert np.array_equal(img, depth_to_gray(d))
    assert np.all(img[..., 0] == img[..., 1]) and img[20, 15, 0] > img[0, 0, 0]


def test_viz_dataset_and_bad_labels(dataset, tmp_path):
    out = tmp_path / "v"
    assert main(["viz", "--out", str(out), "--dataset", str(dataset), "--samples", "0000"]) == EXIT_OK
    assert len(list(out.glob("0000_bin*_overlay.png"))) == 1
    save_depth_png(np.full((8, 8), 600.0), tmp_path / "d.png")
    Image.fromarray(np.full((8, 8, 3), 100, np.uint8)).save(tmp_path / "l.png")
    assert main(["viz", "--out", str(out), "--depth", str(tmp_path / "d.png"),
                 "--labels", str(tmp_path / "l.png")]) == EXIT_DATA


def test_mix_zero_is_synthetic_only(dataset, tmp_path):
    real_src = tmp_path / "src"
    real_src.mkdir()
    save_depth_png(np.full((16, 16), 600.0), real_src / "a.png")
    (real_src / "a.json").write_text(json.dumps({"image": "a.png", "grasps": [
        {"pixel": [8, 8], "theta": 10.0, "label": "positive"}]}))
    assert main(["import-real", "--out", str(tmp_path / "real"), "--records", str(real_src)]) == EXIT_OK
    out = tmp_path / "mix"
    assert main(["mix", "--out", str(out), "--synthetic", str(dataset), "--real", str(tmp_path / "real"),
                 "--fraction", "0.0"]) == EXIT_OK
    m = load_manifest(out)
    assert m["sample_count"] == load_manifest(dataset)["sample_count"]
    assert all(e["provenance"] == "synthetic" for e in m["samples"])
    assert main(["mix", "--out", str(out), "--synthetic", str(dataset), "--real", str(tmp_path / "real"),
                 "--fraction", "2"]) == EXIT_USAGE


def test_loss_check(dataset, tmp_path):
    assert main(["loss-check", "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["loss-check", "--out", str(tmp_path / "b"), "--dataset", str(dataset)]) == EXIT_OK
    rep = json.loads((tmp_path / "b/loss_check.json").read_text())
    assert rep["ok"] and rep["max_rel_error"] <= 1e-4
    assert main(["loss-check", "--out", str(tmp_path / "c"), "--patch", "0"]) == EXIT_USAGE
