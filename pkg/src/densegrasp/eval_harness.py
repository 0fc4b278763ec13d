"""Simulated grasp execution against ground-truth meshes, with and without the optimizer."""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NoExecutableGrasp
from .grasp_optimizer import OptimizedGrasp, OptimizerConfig, detect_edges, direct_grasp, image_to_bin, select_best
from .grasp_sampler import GripperModel, antipodal_check
from .mesh_scene import Scene
from .raycast import ray_triangle_t

FAILURE_REASONS = ("no_candidate", "width_exceeded", "not_force_closure", "missed_object")
VARIANTS = ("with_GO", "without_GO")


@dataclass(frozen=True)
class TrialResult:
    scene_id: str
    grasp: dict
    success: bool
    failure_reason: str = None
    attempts: int = 1

    def __post_init__(self):
        if self.success and self.failure_reason is not None:
            raise ValueError("a successful trial has no failure reason")
        if not self.success and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "grasp": self.grasp, "success": self.success,
                "failure_reason": self.failure_reason, "attempts": self.attempts}


@dataclass
class EvalReport:
    variant: str
    trials: int
    successes: int
    success_rate: float
    histogram: dict
    config: dict = field(default_factory=dict)
    results: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "trials": self.trials, "successes": self.successes,
                "success_rate": self.success_rate, "histogram": self.histogram, "config": self.config,
                "results": [r.to_dict() for r in self.results]}

    def table(self) -> str:
        lines = [f"variant        {self.variant}", f"trials         {self.trials}",
                 f"successes      {self.successes}", f"success rate   {100 * self.success_rate:.1f}%"]
        for reason in FAILURE_REASONS:
            lines.append(f"  {reason:<20}{self.histogram.get(reason, 0)}")
        return "\n".join(lines)


def simulate_grasp(scene: Scene, grasp: OptimizedGrasp, gripper: GripperModel = GripperModel(),
                   mu: float = 0.5, scene_id: str = "") -> TrialResult:
    """Close two fingers along the grasp axis at the grasp height.

    Fingers start `max_width` apart around the centre and stop at the first
    surface they meet. Success needs both on one object and the mesh
    contacts to be antipodal under `mu`.
    """
    record = grasp.to_dict()
    if grasp.center_mm is None or grasp.axis_world is None:
        return TrialResult(scene_id, record, False, "no_candidate")
    axis = np.asarray(grasp.axis_world, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    centre = np.asarray(grasp.center_mm, dtype=np.float64)
    half = gripper.max_width / 2.0
    origin = centre - 2 * half * axis  # parameter s = t - 2 * half along the axis
    hits = []  # (s, object, triangle)
    meshes = scene.posed_meshes()
    for k, mesh in enumerate(meshes):
        t = ray_triangle_t(origin[None], axis[None], mesh.corners)[0]
        s = t - 2 * half
        fin = np.isfinite(s)
        if fin.any():
            if s[fin].min() < -half < s[fin].max() or s[fin].min() < half < s[fin].max():
                return TrialResult(scene_id, record, False, "width_exceeded")
            hits.extend((float(v), k, int(j)) for v, j in zip(s[fin], np.flatnonzero(fin)))
    inside = [h for h in hits if -half <= h[0] <= half]
    if not inside:
        return TrialResult(scene_id, record, False, "missed_object")
    left = min(inside, key=lambda h: h[0])
    right = max(inside, key=lambda h: h[0])
    if left[1] != right[1] or right[0] - left[0] <= 1e-9:
        return TrialResult(scene_id, record, False, "missed_object")
    if right[0] - left[0] >= gripper.max_width:
        return TrialResult(scene_id, record, False, "width_exceeded")
    mesh = meshes[left[1]]
    normals = mesh.face_normals
    c1, c2 = centre + left[0] * axis, centre + right[0] * axis
    if not antipodal_check(c1, c2, normals[left[2]], normals[right[2]], mu):
        return TrialResult(scene_id, record, False, "not_force_closure")
    return TrialResult(scene_id, record, True, None)


def _pixel_key(grasp: OptimizedGrasp, width: int, height: int):
    p = image_to_bin(grasp.center_px, grasp.bin, width, height)
    return (grasp.bin, int(np.floor(p[1] + 0.5)), int(np.floor(p[0] + 0.5)))


def run_trial(scene: Scene, maps, depth, variant: str, gripper: GripperModel, mu: float,
              config: OptimizerConfig = OptimizerConfig(), retries: int = 2, scene_id: str = "") -> TrialResult:
    """One trial with up to `retries` regrasps; repeating a failure reason ends it."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    edges = detect_edges(depth, config.edge_threshold, config.median_size) if variant == "with_GO" else None
    exclude = set()
    last_reason = None
    result = None
    for attempt in range(1, retries + 2):
        try:
            if variant == "with_GO":
                grasp = select_best(maps, depth, gripper, mu, config=config, exclude=frozenset(exclude), edges=edges)
            else:
                grasp = direct_grasp(maps, depth, gripper, frozenset(exclude), config.min_grasp_height)
        except NoExecutableGrasp:
            return TrialResult(scene_id, {}, False, "no_candidate", attempt)
        result = simulate_grasp(scene, grasp, gripper, mu, scene_id)
        result = TrialResult(scene_id, result.grasp, result.success, result.failure_reason, attempt)
        if result.success or result.failure_reason == last_reason:
            return result
        last_reason = result.failure_reason
        exclude.add(_pixel_key(grasp, depth.width, depth.height))
    return result


def _eval_scene(args):
    from .pipeline import scene_maps

    rec, variant, labeling, gripper, mu, config, retries, predictions = args
    maps = predictions(rec) if predictions is not None else scene_maps(rec, labeling)[0]
    return run_trial(rec.scene, maps, rec.observed, variant, gripper, mu, config, retries, rec.id)


def run_eval(records, variant: str, labeling, gripper: GripperModel = GripperModel(), mu: float = 0.5,
             config: OptimizerConfig = OptimizerConfig(), retries: int = 2, predictions=None,
             jobs: int = 1) -> EvalReport:
    """Evaluate one pipeline variant over scene records.

    Maps come from the scenes' ground-truth grasps unless `predictions`
    (a callable record -> 16 maps) supplies them. Results keep record order
    whatever the number of workers.
    """
    if not records:
        raise ValueError("evaluation needs at least one scene")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    args = [(rec, variant, labeling, gripper, mu, config, retries, predictions) for rec in records]
    if jobs > 1 and len(records) > 1:
        with ProcessPoolExecutor(min(jobs, len(records))) as ex:
            results = list(ex.map(_eval_scene, args))
    else:
        results = [_eval_scene(a) for a in args]
    successes = sum(r.success for r in results)
    hist = Counter(r.failure_reason for r in results if not r.success)
    histogram = {"success": successes, **{k: hist.get(k, 0) for k in FAILURE_REASONS}}
    cfg = {"variant": variant, "mu": mu, "gripper": asdict(gripper), "optimizer": config.to_dict(),
           "retries": retries, "labeling": labeling.to_dict() if labeling is not None else None}
    return EvalReport(variant, len(results), successes, successes / len(results), histogram, cfg, results)
