"""Horizontal antipodal grasp sampling on scene meshes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depth_render import TOP_DOWN
from .errors import SceneRejected
from .grasp_quality import DEFAULT_DIRECTIONS, DEFAULT_EDGES, characteristic_radius, grasp_epsilon
from .mesh_scene import Scene
from .raycast import ray_triangle_t

BATCH = 256
ANGLE_TOL = 1e-9  # radians of slack on closed-cone comparisons


@dataclass(frozen=True)
class GripperModel:
    """Parallel-jaw gripper approaching along -z."""

    max_width: float = 85.0
    finger_thickness: float = 5.0
    insertion: float = 10.0  # how far below the highest contact the fingertips go

    def __post_init__(self):
        if self.max_width <= 0:
            raise ValueError("max_width must be positive")
        if self.finger_thickness < 0 or self.insertion < 0:
            raise ValueError("finger_thickness and insertion must be >= 0")


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    center: np.ndarray
    theta: float
    contact1: np.ndarray
    contact2: np.ndarray
    width: float
    quality: float = 0.0
    normal1: np.ndarray = field(default=None)
    normal2: np.ndarray = field(default=None)
    object_index: int = 0

    @classmethod
    def from_contacts(cls, c1, c2, n1=None, n2=None, quality=0.0, object_index=0,
                      rotation=TOP_DOWN) -> "GraspCandidate":
        c1 = np.asarray(c1, dtype=np.float64)
        c2 = np.asarray(c2, dtype=np.float64)
        return cls(center=(c1 + c2) / 2.0, theta=axis_theta(c2 - c1, rotation), contact1=c1, contact2=c2,
                   width=float(np.linalg.norm(c2 - c1)), quality=float(quality),
                   normal1=None if n1 is None else np.asarray(n1, dtype=np.float64),
                   normal2=None if n2 is None else np.asarray(n2, dtype=np.float64),
                   object_index=int(object_index))

    def flipped(self) -> "GraspCandidate":
        """Same grasp with the contacts swapped (theta + 180)."""
        return GraspCandidate(self.center, (self.theta + 180.0) % 360.0, self.contact2, self.contact1,
                              self.width, self.quality, self.normal2, self.normal1, self.object_index)

    def with_quality(self, quality: float) -> "GraspCandidate":
        return GraspCandidate(self.center, self.theta, self.contact1, self.contact2, self.width,
                              float(quality), self.normal1, self.normal2, self.object_index)

    def to_record(self) -> dict:
        return {"center": [float(x) for x in self.center], "theta": float(self.theta),
                "contacts": [[float(x) for x in self.contact1], [float(x) for x in self.contact2]],
                "width": float(self.width), "quality": float(self.quality)}

    def to_full_record(self) -> dict:
        rec = self.to_record()
        rec["normals"] = [None if n is None else [float(x) for x in n] for n in (self.normal1, self.normal2)]
        rec["object_index"] = self.object_index
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "GraspCandidate":
        normals = rec.get("normals") or [None, None]
        c1, c2 = (np.asarray(c, dtype=np.float64) for c in rec["contacts"])
        return cls(np.asarray(rec["center"], dtype=np.float64), float(rec["theta"]), c1, c2,
                   float(rec["width"]), float(rec.get("quality", 0.0)),
                   None if normals[0] is None else np.asarray(normals[0], dtype=np.float64),
                   None if normals[1] is None else np.asarray(normals[1], dtype=np.float64),
                   int(rec.get("object_index", 0)))


def axis_theta(axis, rotation=TOP_DOWN) -> float:
    """Image angle in [0, 360) of a world grasp axis, measured as atan2(dv, du)."""
    d = np.asarray(axis, dtype=np.float64) @ np.asarray(rotation)
    return float(np.rad2deg(np.arctan2(d[1], d[0])) % 360.0)


def _angle(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def antipodal_check(c1, c2, n1, n2, mu: float) -> bool:
    """True iff the contact line lies in both (closed) friction cones.

    `n1`, `n2` are outward unit normals; the cones open around -n.
    """
    line = np.asarray(c2, dtype=np.float64) - np.asarray(c1, dtype=np.float64)
    if np.linalg.norm(line) <= 1e-12:
        return False
    half = np.arctan(mu)
    return (_angle(-np.asarray(n1), line) <= half + ANGLE_TOL
            and _angle(-np.asarray(n2), -line) <= half + ANGLE_TOL)


def horizontal_filter(candidate, tol: float) -> bool:
    """True iff the grasp axis is within `tol` degrees of the table plane."""
    if isinstance(candidate, GraspCandidate):
        axis = candidate.contact2 - candidate.contact1
    else:
        axis = np.asarray(candidate, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm <= 1e-12:
        return False
    elevation = np.degrees(np.arcsin(min(1.0, abs(axis[2]) / norm)))
    return bool(elevation <= tol + 1e-9)


def _cone_directions(axis: np.ndarray, half_angle: float, rng) -> np.ndarray:
    """Uniform unit vectors in the spherical cap of `half_angle` around each row of `axis`."""
    k = len(axis)
    cos_t = 1.0 - rng.random(k) * (1.0 - np.cos(half_angle))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    phi = rng.random(k) * 2 * np.pi
    helper = np.where(np.abs(axis[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(axis, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(axis, t1)
    return cos_t[:, None] * axis + sin_t[:, None] * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)


def sample_antipodal(scene: Scene, gripper: GripperModel = GripperModel(), n: int = 150, mu: float = 0.5,
                     horizontal_tol: float = 5.0, seed: int = 0, budget_factor: int = 100,
                     with_quality: bool = True, edges: int = DEFAULT_EDGES,
                     directions: int = DEFAULT_DIRECTIONS, rotation=TOP_DOWN) -> list:
    """Draw exactly `n` horizontal antipodal grasps or raise SceneRejected.

    A first contact is drawn area-uniformly over all object surfaces. The
    grasp line leaves it inside the friction cone around the inward normal;
    the jaw must reach the point from outside, and the second contact is
    where the line finally exits the same object. Lines that clip another
    object within a finger thickness of the contacts are discarded.

    Args:
        budget_factor: attempts allowed per requested grasp.
        with_quality: fill `quality` with the Ferrari-Canny epsilon.
    """
    if not scene.objects:
        raise ValueError("scene has no objects")
    if mu <= 0 or n < 1:
        raise ValueError("need mu > 0 and n >= 1")
    meshes = scene.posed_meshes()
    corners = [m.corners for m in meshes]
    normals = [m.face_normals for m in meshes]
    areas = np.concatenate([m.face_areas for m in meshes])
    owner = np.concatenate([np.full(len(m.triangles), k) for k, m in enumerate(meshes)])
    local = np.concatenate([np.arange(len(m.triangles)) for m in meshes])
    flat_corners = np.concatenate(corners)
    scale = max(float(np.ptp(flat_corners.reshape(-1, 3), axis=0).max()), 1.0)
    reach = 4.0 * scale
    half = np.arctan(mu)
    max_elev = half + np.radians(horizontal_tol) + ANGLE_TOL
    rng = np.random.default_rng(seed)
    prob = areas / areas.sum()
    budget = budget_factor * n
    out, attempts = [], 0
    while len(out) < n and attempts < budget:
        b = min(BATCH, budget - attempts)
        attempts += b
        tri = rng.choice(len(prob), size=b, p=prob)
        r1, r2 = rng.random(b), rng.random(b)
        s = np.sqrt(r1)
        bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
        p1 = np.einsum("bk,bkj->bj", bary, flat_corners[tri])
        obj = owner[tri]
        n1 = np.concatenate(normals)[tri]
        d = _cone_directions(-n1, half, rng)
        elev_n = np.arcsin(np.clip(np.abs(n1[:, 2]), 0, 1))
        elev_d = np.degrees(np.arcsin(np.clip(np.abs(d[:, 2]), 0, 1)))
        keep = (elev_n <= max_elev) & (elev_d <= horizontal_tol)
        for i in np.flatnonzero(keep):
            cand = _complete(p1[i], n1[i], d[i], int(obj[i]), corners, normals, reach, scale, gripper, mu,
                             horizontal_tol, rotation)
            if cand is not None:
                out.append(cand)
                if len(out) == n:
                    break
    if len(out) < n:
        raise SceneRejected(f"scene rejected: {len(out)} of {n} grasps after {attempts} attempts", found=len(out))
    if with_quality:
        out = score_candidates(scene, out, mu, edges, directions)
    return out


def _complete(p1, n1, d, k, corners, normals, reach, scale, gripper, mu, tol, rotation):
    origin = p1 - reach * d
    t = ray_triangle_t(origin[None], d[None], corners[k])[0]
    hit = np.isfinite(t)
    if not hit.any():
        return None
    ts = t[hit]
    eps = 1e-6 * scale
    if ts.min() < reach - eps:
        return None  # another part of the object shields p1 from the jaw
    j = np.flatnonzero(hit)[np.argmax(ts)]
    t_far = t[j]
    if t_far - reach <= eps:
        return None
    p2 = origin + t_far * d
    width = t_far - reach
    if width > gripper.max_width:
        return None
    n2 = normals[k][j]
    if not antipodal_check(p1, p2, n1, n2, mu) or not horizontal_filter(p2 - p1, tol):
        return None
    lo = reach - gripper.finger_thickness
    hi = t_far + gripper.finger_thickness
    for other, tris in enumerate(corners):
        if other == k:
            continue
        to = ray_triangle_t(origin[None], d[None], tris)[0]
        if np.any((to >= lo) & (to <= hi)):
            return None
    return GraspCandidate.from_contacts(p1, p2, n1, n2, object_index=k, rotation=rotation)


def score_candidates(scene: Scene, candidates, mu: float, edges: int = DEFAULT_EDGES,
                     directions: int = DEFAULT_DIRECTIONS) -> list:
    """Attach the Ferrari-Canny epsilon (torques about the object's centroid)."""
    meshes = scene.posed_meshes()
    props = {}
    out = []
    for c in candidates:
        k = c.object_index
        if k not in props:
            centroid = meshes[k].centroid
            props[k] = (centroid, characteristic_radius(meshes[k].vertices, centroid))
        centroid, rho = props[k]
        eps = grasp_epsilon(c.contact1, c.contact2, c.normal1, c.normal2, mu, edges, centroid, rho, directions)
        out.append(c.with_quality(eps))
    return out
