"""Dataset generation: scenes -> renders -> grasps -> qualities -> labels -> samples."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import shapes
from .dataset_store import (DatasetSample, dump_json, load_manifest, new_manifest, read_json, write_manifest,
                            write_sample)
from .depth_render import (CameraModel, DepthImage, add_depth_noise, crop_resize, load_depth_png, render_depth,
                           save_depth_png)
from .errors import DatasetError, PlacementFailure, RenderError, SceneRejected
from .grasp_quality import DEFAULT_DIRECTIONS, DEFAULT_EDGES, normalize_qualities
from .grasp_sampler import GraspCandidate, GripperModel, sample_antipodal
from .label_gen import (BACKGROUND, N_BINS, AffordanceMap, LabelingConfig, OrientationBin, build_affordance_map,
                        median_threshold, quantize_orientation, rotate_to_bin)
from .mesh_scene import CATEGORIES, Scene, SceneConfig, SceneObject, load_mesh, randomize_scene, write_obj

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerateConfig:
    """Everything that determines a generated dataset."""

    scene: SceneConfig = field(default_factory=lambda: SceneConfig(
        camera_distance_range=(550.0, 650.0), table_extent_mm=(400.0, 400.0)))
    n_scenes: int = 10
    objects_per_scene: tuple = (1, 2)
    image_size: tuple = (640, 480)
    focal_px: float = 615.0
    out_size: int = 300
    gripper: GripperModel = field(default_factory=GripperModel)
    mu: float = 0.5
    cone_edges: int = DEFAULT_EDGES
    directions: int = DEFAULT_DIRECTIONS
    horizontal_tol: float = 5.0
    sigma: float = 2.0
    sigma_mode: str = "literal"
    augment: bool = True
    noise_stage: str = "generation"
    max_attempts_factor: int = 20
    pool: str = "builtin"

    def __post_init__(self):
        if self.n_scenes < 0:
            raise ValueError("n_scenes must be >= 0")
        lo, hi = self.objects_per_scene
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_scene must satisfy 1 <= low <= high")
        if self.noise_stage not in ("generation", "training"):
            raise ValueError("noise_stage must be 'generation' or 'training'")
        object.__setattr__(self, "objects_per_scene", (int(lo), int(hi)))
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        d["objects_per_scene"] = list(self.objects_per_scene)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GenerateConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generate config keys: {sorted(unknown)}")
        if "scene" in data:
            base = cls().scene.to_dict()
            base.update(data["scene"])
            data["scene"] = SceneConfig.from_dict(base)
        if "gripper" in data and isinstance(data["gripper"], dict):
            data["gripper"] = GripperModel(**data["gripper"])
        return cls(**data)


@dataclass(eq=False)
class SceneRecord:
    """One accepted scene with its renders and raw-quality grasps."""

    index: int
    seed: int
    scene: Scene
    camera: CameraModel  # full-resolution camera
    clean: DepthImage  # out_size crop, noise free
    observed: DepthImage  # what a sensor would deliver (noisy when noise is applied at generation)
    grasps: list

    @property
    def id(self) -> str:
        return f"{self.index:04d}"


def load_pool(spec: str = "builtin") -> list:
    """The built-in shapes, or every OBJ under a directory (category = parent folder name)."""
    if spec == "builtin":
        return shapes.default_pool()
    root = Path(spec)
    files = sorted(root.rglob("*.obj"))
    if not files:
        raise DatasetError(f"no OBJ models found under {root}")
    return [load_mesh(f, f.parent.name if f.parent.name in CATEGORIES else "complicated") for f in files]


def scene_seed(base_seed: int, attempt: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(attempt)]).generate_state(1)[0])


def build_scene(config: GenerateConfig, pool: list, seed: int, index: int = 0) -> SceneRecord:
    """Randomize, render and sample one scene.

    Raises PlacementFailure, RenderError or SceneRejected when the seed does
    not give a usable scene.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    lo, hi = config.objects_per_scene
    count = int(rng.integers(lo, hi + 1))
    distance = float(rng.uniform(*config.scene.camera_distance_range))
    scene = randomize_scene(replace(config.scene, seed=seed), pool, count)
    return record_for_scene(scene, config, seed, distance, index)


def record_for_scene(scene: Scene, config: GenerateConfig, seed: int, distance: float,
                     index: int = 0) -> SceneRecord:
    """Render, crop and sample grasps for a given scene."""
    w, h = config.image_size
    camera = CameraModel.top_down(distance, w, h, focal=config.focal_px)
    full = render_depth(scene, camera, w, h)
    clean = crop_resize(full, config.out_size)
    grasps = sample_antipodal(scene, config.gripper, config.scene.min_grasps_per_scene, config.mu,
                              config.horizontal_tol, seed=seed, edges=config.cone_edges,
                              directions=config.directions, rotation=clean.camera.rotation)
    observed = clean
    if config.noise_stage == "generation" and config.scene.noise_std > 0:
        observed = add_depth_noise(clean, config.scene.noise_mean, config.scene.noise_std, seed=seed)
    return SceneRecord(index, seed, scene, camera, clean, observed, grasps)


def _try_scene(args):
    config, pool, seed = args
    try:
        return build_scene(config, pool, seed)
    except (PlacementFailure, RenderError, SceneRejected) as exc:
        return str(exc)


def generate_scenes(config: GenerateConfig, pool: list = None, jobs: int = 1) -> tuple:
    """Accepted scene records (in seed order) and the number of rejected seeds."""
    pool = load_pool(config.pool) if pool is None else pool
    records, rejected, attempt = [], 0, 0
    limit = max(config.max_attempts_factor * config.n_scenes, config.n_scenes)
    executor = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        while len(records) < config.n_scenes and attempt < limit:
            chunk = min(max(jobs, 1) * 2, limit - attempt) if executor else 1
            seeds = [scene_seed(config.scene.seed, attempt + k) for k in range(chunk)]
            attempt += chunk
            args = [(config, pool, s) for s in seeds]
            results = list(executor.map(_try_scene, args)) if executor else [_try_scene(a) for a in args]
            for seed, res in zip(seeds, results):
                if isinstance(res, str):
                    rejected += 1
                    log.info("seed %d skipped: %s", seed, res)
                elif len(records) < config.n_scenes:
                    res.index = len(records)
                    records.append(res)
    finally:
        if executor:
            executor.shutdown()
    if len(records) < config.n_scenes:
        raise DatasetError(f"only {len(records)} of {config.n_scenes} scenes accepted after {attempt} attempts")
    return records, rejected


def labeling_for(records, config: GenerateConfig) -> LabelingConfig:
    """Database-wide quality normalization range and median threshold."""
    raw = np.array([g.quality for r in records for g in r.grasps])
    if raw.size == 0:
        return LabelingConfig(theta_q=0.5, sigma=config.sigma, augmentation_enabled=config.augment,
                              sigma_mode=config.sigma_mode, quality_range=(0.0, 0.0))
    theta_q = median_threshold(normalize_qualities(raw))
    return LabelingConfig(theta_q=theta_q, sigma=config.sigma, augmentation_enabled=config.augment,
                          sigma_mode=config.sigma_mode, quality_range=(float(raw.min()), float(raw.max())))


def grasps_by_bin(grasps) -> dict:
    """Each grasp in its own bin and, flipped, in the opposite bin (same undirected line)."""
    bins = {}
    for g in grasps:
        for h in (g, g.flipped()):
            bins.setdefault(quantize_orientation(h.theta).index, []).append(h)
    return bins


def scene_maps(record: SceneRecord, labeling: LabelingConfig, depth: DepthImage = None):
    """All 16 affordance maps of a scene plus the matching rotated depth images."""
    depth = record.observed if depth is None else depth
    by_bin = grasps_by_bin(record.grasps)
    maps, rotated = [], []
    for k in range(N_BINS):
        b = OrientationBin(k)
        rot = rotate_to_bin(depth, b)
        maps.append(build_affordance_map(depth, by_bin.get(k, []), b, labeling, rotated=rot))
        rotated.append(rot)
    return maps, rotated


def _scene_files(root: Path, record: SceneRecord) -> dict:
    sdir = root / "scenes"
    sdir.mkdir(parents=True, exist_ok=True)
    objs = []
    for k, mesh in enumerate(record.scene.posed_meshes()):
        rel = f"scenes/{record.id}_obj{k}.obj"
        write_obj(mesh, root / rel)
        objs.append({"path": rel, "category": mesh.category, "name": mesh.name})
    save_depth_png(record.clean, root / f"scenes/{record.id}_depth.png")
    save_depth_png(record.observed, root / f"scenes/{record.id}_observed.png")
    info = {"id": record.id, "seed": record.seed, "objects": objs, "camera": record.camera.to_dict(),
            "image_camera": record.clean.camera.to_dict(), "background_depth": record.clean.background_depth,
            "depth": f"scenes/{record.id}_depth.png", "observed": f"scenes/{record.id}_observed.png",
            "grasps": [g.to_full_record() for g in record.grasps]}
    dump_json(info, root / f"scenes/{record.id}.json")
    return {"id": record.id, "seed": record.seed, "path": f"scenes/{record.id}.json"}


def write_dataset(root, records, labeling: LabelingConfig, config: GenerateConfig, rejected: int = 0) -> dict:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = new_manifest({"generate": config.to_dict(), "scene_config": config.scene.to_dict(),
                             "labeling": labeling.to_dict(), "seeds": [r.seed for r in records],
                             "rejected_scenes": rejected, "noise_stage": config.noise_stage})
    n = 0
    for record in records:
        entry = _scene_files(root, record)
        by_bin = grasps_by_bin(record.grasps)
        ids = []
        for k in sorted(by_bin):
            b = OrientationBin(k)
            rot = rotate_to_bin(record.observed, b)
            amap = build_affordance_map(record.observed, by_bin[k], b, labeling, rotated=rot)
            recs = []
            for g in by_bin[k]:
                rec = g.to_record()
                rec["quality_normalized"] = labeling.normalized(g.quality)
                recs.append(rec)
            sample = DatasetSample(f"{n:04d}", rot.depth, amap.classes, k, recs, "synthetic", record.id)
            manifest["samples"].append(write_sample(root, sample))
            ids.append(sample.id)
            n += 1
        entry["samples"] = ids
        manifest["scenes"].append(entry)
    write_manifest(root, manifest)
    return load_manifest(root)


def generate_dataset(root, config: GenerateConfig, jobs: int = 1, pool: list = None) -> dict:
    records, rejected = generate_scenes(config, pool, jobs)
    labeling = labeling_for(records, config)
    return write_dataset(root, records, labeling, config, rejected)


def load_scene_records(root) -> tuple:
    """Scene records and labeling config of a generated dataset (for evaluation)."""
    root = Path(root)
    manifest = load_manifest(root)
    cfg = manifest.get("config", {})
    if "labeling" not in cfg:
        raise DatasetError(f"{root} has no generation labeling config (not a generated dataset?)")
    labeling = LabelingConfig.from_dict(cfg["labeling"])
    records = []
    for k, entry in enumerate(manifest.get("scenes", [])):
        info = read_json(root / entry["path"])
        objects = [SceneObject(load_mesh(root / o["path"], o["category"])) for o in info["objects"]]
        cam = CameraModel.from_dict(info["image_camera"])
        bg = float(info["background_depth"])
        clean = DepthImage(load_depth_png(root / info["depth"]), bg, cam)
        observed = DepthImage(load_depth_png(root / info["observed"]), bg, cam)
        grasps = [GraspCandidate.from_record(g) for g in info["grasps"]]
        records.append(SceneRecord(k, int(info["seed"]), Scene(tuple(objects)),
                                   CameraModel.from_dict(info["camera"]), clean, observed, grasps))
    return records, labeling


def empty_map(bin_index: int, height: int, width: int) -> AffordanceMap:
    return AffordanceMap(np.full((height, width), BACKGROUND, dtype=np.uint8), OrientationBin(bin_index),
                         np.full((height, width), np.nan))
