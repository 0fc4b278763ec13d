"""On-disk dataset layout, manifests, audits, mixing and real-data import.

Layout under a dataset root::

    manifest.json
    depth/NNNN.png    16-bit, value = round(depth_mm * 10), bin-rotated 300x300
    labels/NNNN.png   8-bit RGB, red = negative, green = positive, blue = background
    grasps/NNNN.json  grasp records of the sample's bin
    scenes/...        optional ground-truth scene data for evaluation

Sample paths in the manifest are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .depth_render import DEPTH_SCALE, load_depth_png, rotate_with_padding, save_depth_png, CameraModel, DepthImage
from .errors import CorruptFileError, DatasetError, ValidationError
from .label_gen import (BACKGROUND, NEGATIVE, POSITIVE, AugmentedLabel, OrientationBin, augment_segment,
                        class_counts, classes_to_rgb, quantize_orientation, rasterize_labels, rgb_to_classes)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
PROVENANCES = ("synthetic", "real")


def dump_json(data, path) -> None:
    """Deterministic JSON (sorted keys, fixed indentation, trailing newline)."""
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"cannot parse JSON {path}: {exc}") from exc


@dataclass(eq=False)
class DatasetSample:
    id: str
    depth: np.ndarray  # mm
    classes: np.ndarray  # uint8 class indices
    bin: int
    grasps: list = field(default_factory=list)
    provenance: str = "synthetic"
    scene: str = None

    def __post_init__(self):
        if self.depth.shape != self.classes.shape:
            raise ValidationError(f"sample {self.id}: depth {self.depth.shape} and labels {self.classes.shape} differ")
        if not 0 <= int(self.bin) < 16:
            raise ValidationError(f"sample {self.id}: bin {self.bin} out of range")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"sample {self.id}: unknown provenance {self.provenance!r}")
        for rec in self.grasps:
            if quantize_orientation(rec["theta"]).index != int(self.bin):
                raise ValidationError(f"sample {self.id}: grasp theta {rec['theta']} is not in bin {self.bin}")

    def counts(self) -> np.ndarray:
        return class_counts(self.classes)


def sample_paths(sample_id: str) -> dict:
    return {"depth": f"depth/{sample_id}.png", "labels": f"labels/{sample_id}.png",
            "grasps": f"grasps/{sample_id}.json"}


def write_sample(root, sample: DatasetSample) -> dict:
    """Persist one sample and return its manifest entry."""
    root = Path(root)
    paths = sample_paths(sample.id)
    for sub in ("depth", "labels", "grasps"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    save_depth_png(sample.depth, root / paths["depth"])
    Image.fromarray(classes_to_rgb(sample.classes)).save(root / paths["labels"], format="PNG")
    dump_json(sample.grasps, root / paths["grasps"])
    entry = {"id": sample.id, "bin": int(sample.bin), "provenance": sample.provenance,
             "shape": [int(x) for x in sample.depth.shape], "class_counts": [int(x) for x in sample.counts()],
             **paths}
    if sample.scene is not None:
        entry["scene"] = sample.scene
    return entry


def load_label_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            rgb = np.array(im.convert("RGB"))
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file {path}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptFileError(f"cannot decode label PNG {path}: {exc}") from exc
    try:
        return rgb_to_classes(rgb)
    except ValueError as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc


def _load_depth(path) -> np.ndarray:
    if not Path(path).exists():
        raise DatasetError(f"missing file {path}")
    return load_depth_png(path)


def read_sample(root, entry) -> DatasetSample:
    """Load a sample given its manifest entry (or its id, looked up in the manifest)."""
    root = Path(root)
    if not isinstance(entry, dict):
        manifest = load_manifest(root)
        matches = [e for e in manifest["samples"] if e["id"] == str(entry)]
        if not matches:
            raise DatasetError(f"no sample with id {entry!r}")
        entry = matches[0]
    depth = _load_depth(root / entry["depth"])
    classes = load_label_png(root / entry["labels"])
    grasps = read_json(root / entry["grasps"])
    if list(depth.shape) != list(entry.get("shape", depth.shape)):
        raise ValidationError(f"sample {entry['id']}: stored shape does not match the image")
    return DatasetSample(entry["id"], depth, classes, int(entry["bin"]), grasps,
                         entry.get("provenance", "synthetic"), entry.get("scene"))


def new_manifest(config: dict = None) -> dict:
    return {"version": MANIFEST_VERSION, "depth_scale": DEPTH_SCALE, "samples": [],
            "class_totals": {"negative": 0, "positive": 0, "background": 0},
            "config": config or {}, "scenes": []}


def totals_of(entries) -> dict:
    t = np.zeros(3, dtype=np.int64)
    for e in entries:
        t += np.asarray(e["class_counts"], dtype=np.int64)
    return {"negative": int(t[NEGATIVE]), "positive": int(t[POSITIVE]), "background": int(t[BACKGROUND])}


def write_manifest(root, manifest: dict) -> Path:
    manifest = dict(manifest)
    manifest["class_totals"] = totals_of(manifest["samples"])
    manifest["sample_count"] = len(manifest["samples"])
    path = Path(root) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(manifest, path)
    return path


def load_manifest(root) -> dict:
    root = Path(root)
    path = root if root.suffix == ".json" else root / MANIFEST_NAME
    data = read_json(path)
    for key in ("version", "depth_scale", "samples", "class_totals"):
        if key not in data:
            raise ValidationError(f"{path}: manifest lacks {key!r}")
    return data


@dataclass
class AuditReport:
    ok: bool
    samples: int
    stored_totals: dict
    recount_totals: dict
    problems: list

    def to_dict(self) -> dict:
        return {"ok": self.ok, "samples": self.samples, "stored_totals": self.stored_totals,
                "recount_totals": self.recount_totals, "problems": self.problems}


def audit_dataset(root) -> AuditReport:
    """Recount every label PNG and compare with per-sample and total bookkeeping."""
    root = Path(root)
    manifest = load_manifest(root)
    problems = []
    recount = np.zeros(3, dtype=np.int64)
    if manifest.get("sample_count", len(manifest["samples"])) != len(manifest["samples"]):
        problems.append("sample_count does not match the sample list")
    for e in manifest["samples"]:
        try:
            s = read_sample(root, e)
        except DatasetError as exc:
            problems.append(f"{e.get('id')}: {exc}")
            continue
        c = s.counts()
        recount += c
        if list(c) != list(e["class_counts"]):
            problems.append(f"{e['id']}: stored counts {e['class_counts']} != recount {c.tolist()}")
    rec = {"negative": int(recount[NEGATIVE]), "positive": int(recount[POSITIVE]),
           "background": int(recount[BACKGROUND])}
    if totals_of(manifest["samples"]) != manifest["class_totals"]:
        problems.append("manifest totals differ from the sum of per-sample counts")
    if rec != manifest["class_totals"]:
        problems.append("manifest totals differ from the pixel recount")
    return AuditReport(not problems, len(manifest["samples"]), manifest["class_totals"], rec, problems)


def _relink(entry: dict, src_rel: str, new_id: str) -> dict:
    # src_rel: path of the source root relative to the output root
    e = dict(entry)
    for key in ("depth", "labels", "grasps"):
        e[key] = Path(os.path.normpath(os.path.join(src_rel, entry[key]))).as_posix()
    e["source_id"] = entry["id"]
    e["source"] = src_rel
    e["id"] = new_id
    return e


def mix_datasets(synthetic_root, real_root, real_fraction: float, seed: int, out_root,
                 size: int = None, sequential: bool = False) -> dict:
    """Write a manifest interleaving synthetic and real samples.

    Each slot is real with probability `real_fraction`; pools are cycled
    through seeded permutations. `size` defaults to the combined pool size
    (one pool's size when the fraction is 0 or 1). With `sequential`, all
    synthetic samples are followed by all real samples.
    """
    if not 0.0 <= real_fraction <= 1.0:
        raise ValueError("real_fraction must lie in [0, 1]")
    syn_root, real_root, out_root = Path(synthetic_root), Path(real_root), Path(out_root)
    syn, real = load_manifest(syn_root)["samples"], load_manifest(real_root)["samples"]
    if real_fraction < 1 and not syn:
        raise DatasetError("synthetic dataset is empty")
    if real_fraction > 0 and not real:
        raise DatasetError("real dataset is empty")
    out_root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    picks = []
    if sequential:
        picks = [(syn_root, e) for e in syn] + [(real_root, e) for e in real]
    else:
        if size is None:
            size = len(syn) if real_fraction == 0 else len(real) if real_fraction == 1 else len(syn) + len(real)
        is_real = rng.random(size) < real_fraction
        pools = {False: (syn_root, syn, []), True: (real_root, real, [])}
        for flag in is_real:
            src, items, queue = pools[bool(flag)]
            if not queue:
                queue.extend(rng.permutation(len(items)).tolist()[::-1])
            picks.append((src, items[queue.pop()]))
    rel = {src: Path(os.path.relpath(src.resolve(), out_root.resolve())).as_posix() for src in (syn_root, real_root)}
    manifest = new_manifest({"mix": {"real_fraction": real_fraction, "seed": seed, "sequential": sequential,
                                     "synthetic": rel[syn_root], "real": rel[real_root]}})
    manifest["samples"] = [_relink(e, rel[src], f"{i:04d}") for i, (src, e) in enumerate(picks)]
    write_manifest(out_root, manifest)
    return load_manifest(out_root)


REAL_LABELS = {"negative": NEGATIVE, "positive": POSITIVE}


def _validate_real_scene(scene: dict, where: str) -> None:
    if not isinstance(scene, dict) or "image" not in scene or "grasps" not in scene:
        raise ValidationError(f"{where}: scene record needs 'image' and 'grasps'")
    for k, g in enumerate(scene["grasps"]):
        for key in ("pixel", "theta", "label"):
            if key not in g:
                raise ValidationError(f"{where}: grasp {k} is missing {key!r}")
        theta = g["theta"]
        if not isinstance(theta, (int, float)) or not 0 <= theta < 360:
            raise ValidationError(f"{where}: grasp {k} has theta {theta!r} outside [0, 360)")
        if g["label"] not in REAL_LABELS:
            raise ValidationError(f"{where}: grasp {k} label must be 'positive' or 'negative'")
        if len(g["pixel"]) != 2:
            raise ValidationError(f"{where}: grasp {k} pixel must be [u, v]")


def _real_scene_files(records):
    records = Path(records)
    if records.is_dir():
        files = sorted(records.glob("*.json"))
        return [(read_json(f), f.parent, f.name) for f in files]
    data = read_json(records)
    scenes = data["scenes"] if isinstance(data, dict) and "scenes" in data else data
    if isinstance(scenes, dict):
        scenes = [scenes]
    return [(s, records.parent, f"{records.name}[{i}]") for i, s in enumerate(scenes)]


def _rotate_px(p, angle, width, height):
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    a = np.deg2rad(angle)
    r = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return c + r @ (np.asarray(p, dtype=np.float64) - c)


def import_real(records, out_root, augment: bool = False, sigma: float = 2.0) -> dict:
    """Convert real grasp annotations into the sample format.

    `records` is a directory of scene JSON files or one JSON file holding a
    scene or ``{"scenes": [...]}``. A scene is::

        {"image": "<16-bit depth PNG, relative path>",
         "background_depth": <mm, optional>,
         "grasps": [{"pixel": [u, v], "theta": deg, "label": "positive"|"negative",
                     "contacts": [[u, v], [u, v]]  (optional)}]}

    One sample is written per (scene, occupied bin); labels are sparse
    centre pixels unless `augment` is set and contacts are given.
    """
    out_root = Path(out_root)
    scenes = _real_scene_files(records)
    for scene, _, where in scenes:
        _validate_real_scene(scene, where)
    manifest = new_manifest({"import_real": {"augment": augment, "sigma": sigma}})
    out_root.mkdir(parents=True, exist_ok=True)
    n = 0
    for si, (scene, base, where) in enumerate(scenes):
        depth = _load_depth(base / scene["image"])
        h, w = depth.shape
        bg = float(scene.get("background_depth", depth.max()))
        cam = CameraModel(kind="orthographic", cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, distance=bg)
        image = DepthImage(depth, bg, cam)
        by_bin = {}
        for g in scene["grasps"]:
            by_bin.setdefault(quantize_orientation(g["theta"]).index, []).append(g)
        for b in sorted(by_bin):
            angle = -OrientationBin(b).rotation_angle
            rotated = rotate_with_padding(image, angle, "adaptive_depth")
            labels = []
            for g in by_bin[b]:
                q0 = 1.0 if g["label"] == "positive" else 0.0
                centre = _rotate_px(g["pixel"], angle, w, h)
                if augment and "contacts" in g:
                    c1, c2 = (_rotate_px(c, angle, w, h) for c in g["contacts"])
                    labels.extend(augment_segment(c1, c2, centre, q0, sigma))
                else:
                    px = tuple(int(np.floor(x + 0.5)) for x in centre)
                    labels.append(AugmentedLabel(px, q0, tuple(centre), q0))
            classes, _ = rasterize_labels(labels, w, h, 0.5)
            records_out = [{"center_px": [float(x) for x in g["pixel"]], "theta": float(g["theta"]),
                            "label": g["label"]} for g in by_bin[b]]
            sample = DatasetSample(f"{n:04d}", rotated.depth, classes, b, records_out, "real", f"real{si:04d}")
            manifest["samples"].append(write_sample(out_root, sample))
            n += 1
        manifest["scenes"].append({"id": f"real{si:04d}", "source": where})
    write_manifest(out_root, manifest)
    return load_manifest(out_root)
