"""densegrasp command line: generate, optimize, evaluate, loss-check, viz, mix, import-real.

Every subcommand takes an optional JSON ``--config`` whose keys are the
subcommand's option names; explicit flags win over the file. The resolved
configuration is written to ``<out>/run_config.json``.

Exit codes: 0 success, 1 usage, 2 data error, 3 no executable grasp.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset_store import (audit_dataset, dump_json, import_real, load_label_png, load_manifest, mix_datasets,
                            read_json, read_sample)
from .depth_render import CameraModel, DepthImage, load_depth_png
from .errors import DenseGraspError, NoExecutableGrasp
from .eval_harness import VARIANTS, run_eval
from .grasp_optimizer import OptimizerConfig, select_best
from .grasp_sampler import GripperModel
from .label_gen import N_BINS, AffordanceMap, OrientationBin
from .loss_fn import finite_difference_check, penalty_weights, weighted_ce_loss
from .pipeline import GenerateConfig, empty_map, generate_dataset, load_scene_records, scene_maps
from .viz import depth_to_gray, draw_grasp, overlay_classes, save_rgb

log = logging.getLogger("densegrasp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_GRASP = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


DEFAULTS = {
    "generate": {"scenes": None, "seed": None, "augment": None, "noise_stage": None, "mu": None,
                 "pool": None, "sigma_mode": None},
    "optimize": {"dataset": None, "scene": None, "depth": None, "camera": None, "background": None,
                 "maps": None, "top_k": 20, "mu": 0.5, "max_width": 85.0, "insertion": 10.0},
    "evaluate": {"dataset": None, "variant": "with_GO", "max_scenes": None, "retries": 2, "mu": 0.5,
                 "max_width": 85.0, "insertion": 10.0, "top_k": 20},
    "loss-check": {"dataset": None, "sample": None, "patch": 8, "seed": 0, "h": 1e-4, "tolerance": 1e-4},
    "viz": {"dataset": None, "samples": None, "depth": None, "labels": None, "alpha": 0.6},
    "mix": {"synthetic": None, "real": None, "fraction": 0.0, "seed": 0, "size": None, "sequential": False},
    "import-real": {"records": None, "augment": False, "sigma": 2.0},
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="densegrasp", description="Dense-label grasp dataset generation and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help):
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of option values (flags win)")
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = command("generate", "generate a synthetic dataset")
    p.add_argument("--scenes", type=int, help="number of accepted scenes")
    p.add_argument("--seed", type=int, help="base scene seed")
    p.add_argument("--no-augment", dest="augment", action="store_false", help="centre-only (sparse) labels")
    p.add_argument("--noise-stage", choices=("generation", "training"))
    p.add_argument("--mu", type=float, help="friction coefficient")
    p.add_argument("--pool", help="'builtin' or a directory of OBJ models")
    p.add_argument("--sigma-mode", choices=("literal", "normalized"))
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")

    p = command("optimize", "select and refine a grasp from affordance maps")
    p.add_argument("--dataset", help="generated dataset (with --scene) supplying depth and maps")
    p.add_argument("--scene", help="scene id inside --dataset")
    p.add_argument("--depth", help="16-bit depth PNG")
    p.add_argument("--camera", help="camera JSON matching --depth")
    p.add_argument("--background", type=float, help="background depth in mm")
    p.add_argument("--maps", help="directory of bin_KK.png label maps in their bin-rotated frames")
    p.add_argument("--top-k", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--max-width", type=float)
    p.add_argument("--insertion", type=float)

    p = command("evaluate", "simulated grasp trials with or without the optimizer")
    p.add_argument("--dataset", help="generated dataset")
    p.add_argument("--variant", choices=VARIANTS + ("both",))
    p.add_argument("--max-scenes", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--max-width", type=float)
    p.add_argument("--insertion", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--jobs", type=int)

    p = command("loss-check", "finite-difference check of the weighted loss gradient")
    p.add_argument("--dataset", help="dataset to take labels from (random labels otherwise)")
    p.add_argument("--sample", help="sample id (default: first)")
    p.add_argument("--patch", type=int, help="side of the checked patch")
    p.add_argument("--seed", type=int)
    p.add_argument("--h", type=float, help="finite-difference step")
    p.add_argument("--tolerance", type=float)

    p = command("viz", "affordance-map overlays on depth")
    p.add_argument("--dataset")
    p.add_argument("--samples", nargs="+", help="sample ids (default: all)")
    p.add_argument("--depth", help="single 16-bit depth PNG")
    p.add_argument("--labels", help="label PNG matching --depth")
    p.add_argument("--alpha", type=float)

    p = command("mix", "interleave synthetic and real datasets")
    p.add_argument("--synthetic")
    p.add_argument("--real")
    p.add_argument("--fraction", type=float, help="expected real fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--sequential", action="store_true")

    p = command("import-real", "convert real grasp annotations into samples")
    p.add_argument("--records", help="scene JSON file or directory")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--sigma", type=float)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    opts = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config", "out")}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        known = set(opts) | {"jobs"}
        if command == "generate":
            known |= {"generate"} | set(GenerateConfig.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        opts.update(data)
    opts.update(flags)
    opts["jobs"] = int(opts.get("jobs") or os.cpu_count() or 1)
    return opts


def _need(opts, *keys):
    for k in keys:
        if opts.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _existing(path, what) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")
    return path


def _write_run_config(out: Path, command: str, opts: dict) -> None:
    dump_json({"command": command, **opts}, out / "run_config.json")


def cmd_generate(opts: dict, out: Path) -> int:
    base = dict(opts.pop("generate", None) or {})
    for k in list(opts):
        if k in GenerateConfig.__dataclass_fields__ and k not in DEFAULTS["generate"]:
            base[k] = opts.pop(k)
    try:
        config = GenerateConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad generate config: {exc}") from exc
    over = {"n_scenes": opts.get("scenes"), "augment": opts.get("augment"), "noise_stage": opts.get("noise_stage"),
            "mu": opts.get("mu"), "pool": opts.get("pool"), "sigma_mode": opts.get("sigma_mode")}
    over = {k: v for k, v in over.items() if v is not None}
    try:
        config = replace(config, **over)
        if opts.get("seed") is not None:
            config = replace(config, scene=replace(config.scene, seed=int(opts["seed"])))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "generate", {"generate": config.to_dict(), "jobs": opts["jobs"]})
    manifest = generate_dataset(out, config, jobs=opts["jobs"])
    audit = audit_dataset(out)
    totals = manifest["class_totals"]
    print(f"{len(manifest['scenes'])} scenes, {manifest['sample_count']} samples, "
          f"{totals['positive']} positive / {totals['negative']} negative labels; audit "
          f"{'ok' if audit.ok else 'FAILED'}")
    return EXIT_OK if audit.ok else EXIT_DATA


def _maps_from_dir(directory: Path, height: int, width: int) -> list:
    files = {k: directory / f"bin_{k:02d}.png" for k in range(N_BINS)}
    if not any(f.exists() for f in files.values()):
        raise UsageError(f"{directory} holds no bin_KK.png map files")
    maps = []
    for k, f in files.items():
        if not f.exists():
            maps.append(empty_map(k, height, width))
            continue
        classes = load_label_png(f)
        if classes.shape != (height, width):
            raise UsageError(f"{f} is {classes.shape}, depth is {(height, width)}")
        maps.append(AffordanceMap(classes, OrientationBin(k)))
    return maps


def cmd_optimize(opts: dict, out: Path) -> int:
    if int(opts["top_k"]) < 1:
        raise UsageError("--top-k must be at least 1")
    gripper = GripperModel(max_width=opts["max_width"], insertion=opts["insertion"])
    if opts.get("dataset"):
        _need(opts, "scene")
        records, labeling = load_scene_records(_existing(opts["dataset"], "dataset"))
        match = [r for r in records if r.id == str(opts["scene"])]
        if not match:
            raise UsageError(f"no scene {opts['scene']!r} in {opts['dataset']}")
        depth = match[0].observed
        maps = scene_maps(match[0], labeling)[0]
    else:
        _need(opts, "depth", "camera", "maps")
        arr = load_depth_png(_existing(opts["depth"], "depth image"))
        camera = CameraModel.from_dict(read_json(_existing(opts["camera"], "camera file")))
        bg = opts.get("background")
        depth = DepthImage(arr, float(bg) if bg is not None else camera.background_depth, camera)
        maps = _maps_from_dir(_existing(opts["maps"], "map directory"), *arr.shape)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "optimize", opts)
    grasp = select_best(maps, depth, gripper, opts["mu"], top_k=opts["top_k"])
    record = grasp.to_dict()
    dump_json(record, out / "grasp.json")
    save_rgb(draw_grasp(depth_to_gray(depth.depth), record), out / "grasp_overlay.png")
    print(json.dumps(record))
    return EXIT_OK


def cmd_evaluate(opts: dict, out: Path) -> int:
    _need(opts, "dataset")
    records, labeling = load_scene_records(_existing(opts["dataset"], "dataset"))
    if opts.get("max_scenes") is not None:
        records = records[: int(opts["max_scenes"])]
    if not records:
        raise UsageError("evaluation needs at least one scene")
    gripper = GripperModel(max_width=opts["max_width"], insertion=opts["insertion"])
    config = OptimizerConfig(top_k=opts["top_k"])
    variants = VARIANTS if opts["variant"] == "both" else (opts["variant"],)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "evaluate", opts)
    for variant in variants:
        report = run_eval(records, variant, labeling, gripper, opts["mu"], config, opts["retries"],
                          jobs=opts["jobs"])
        dump_json(report.to_dict(), out / f"eval_{variant}.json")
        print(report.table())
    return EXIT_OK


def cmd_loss_check(opts: dict, out: Path) -> int:
    rng = np.random.default_rng(opts["seed"])
    p = int(opts["patch"])
    if p < 1:
        raise UsageError("--patch must be positive")
    if opts.get("dataset"):
        root = _existing(opts["dataset"], "dataset")
        samples = load_manifest(root)["samples"]
        if not samples:
            raise UsageError("dataset has no samples")
        sample = read_sample(root, opts["sample"] if opts.get("sample") else samples[0])
        classes, sid = sample.classes, sample.id
    else:
        classes, sid = rng.integers(0, 3, size=(p, p)), None
    h, w = classes.shape
    p = min(p, h, w)
    r0, c0 = int(rng.integers(0, h - p + 1)), int(rng.integers(0, w - p + 1))
    patch = classes[r0:r0 + p, c0:c0 + p]
    logits = rng.normal(size=patch.shape + (3,))
    check = finite_difference_check(logits, patch, h=opts["h"])
    full_logits = rng.normal(size=classes.shape + (3,))
    report = {"sample": sid, "patch_origin": [r0, c0], "patch_size": p,
              "patch_class_counts": np.bincount(patch.ravel().astype(int), minlength=3).tolist(),
              "weights": penalty_weights(np.bincount(patch.ravel().astype(int), minlength=3)).tolist(),
              "patch_loss": weighted_ce_loss(logits, patch), "full_map_loss": weighted_ce_loss(full_logits, classes),
              "max_abs_error": check["max_abs_error"], "max_rel_error": check["max_rel_error"],
              "tolerance": opts["tolerance"], "ok": check["max_rel_error"] <= opts["tolerance"]}
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, "loss-check", opts)
    dump_json(report, out / "loss_check.json")
    print(f"max relative gradient error {report['max_rel_error']:.3e} "
          f"({'ok' if report['ok'] else 'above tolerance'})")
    return EXIT_OK if report["ok"] else EXIT_DATA


def cmd_viz(opts: dict, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if opts.get("depth"):
        _need(opts, "labels")
        depth = load_depth_png(_existing(opts["depth"], "depth image"))
        classes = load_label_png(_existing(opts["labels"], "label map"))
        if classes.shape != depth.shape:
            raise UsageError(f"label map {classes.shape} does not match depth {depth.shape}")
        written.append(save_rgb(overlay_classes(depth, classes, opts["alpha"]), out / "overlay.png"))
    else:
        _need(opts, "dataset")
        root = _existing(opts["dataset"], "dataset")
        entries = load_manifest(root)["samples"]
        ids = opts.get("samples") or [e["id"] for e in entries]
        for sid in ids:
            s = read_sample(root, str(sid))
            written.append(save_rgb(overlay_classes(s.depth, s.classes, opts["alpha"]),
                                    out / f"{s.id}_bin{s.bin:02d}_overlay.png"))
    _write_run_config(out, "viz", opts)
    print(f"wrote {len(written)} overlay image(s) to {out}")
    return EXIT_OK


def cmd_mix(opts: dict, out: Path) -> int:
    _need(opts, "synthetic", "real")
    syn = _existing(opts["synthetic"], "synthetic dataset")
    real = _existing(opts["real"], "real dataset")
    try:
        manifest = mix_datasets(syn, real, float(opts["fraction"]), int(opts["seed"]), out,
                                opts.get("size"), bool(opts["sequential"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_run_config(out, "mix", opts)
    n_real = sum(1 for e in manifest["samples"] if e.get("provenance") == "real")
    print(f"{manifest['sample_count']} samples, {n_real} real")
    return EXIT_OK


def cmd_import_real(opts: dict, out: Path) -> int:
    _need(opts, "records")
    manifest = import_real(_existing(opts["records"], "records"), out, bool(opts["augment"]), float(opts["sigma"]))
    _write_run_config(out, "import-real", opts)
    print(f"{len(manifest['scenes'])} scenes, {manifest['sample_count']} samples")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "optimize": cmd_optimize, "evaluate": cmd_evaluate,
            "loss-check": cmd_loss_check, "viz": cmd_viz, "mix": cmd_mix, "import-real": cmd_import_real}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        opts = resolve(args.command, args)
        return COMMANDS[args.command](opts, Path(args.out))
    except UsageError as exc:
        print(f"densegrasp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoExecutableGrasp as exc:
        print(f"densegrasp: no executable grasp: {exc}", file=sys.stderr)
        return EXIT_NO_GRASP
    except (DenseGraspError, OSError, KeyError, ValueError) as exc:
        print(f"densegrasp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
