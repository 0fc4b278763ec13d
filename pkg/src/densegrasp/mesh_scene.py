"""Triangle meshes, OBJ I/O and domain-randomized tabletop scenes.

All lengths are millimetres. Volumes exposed to users are cm^3.
"""
from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateMeshError, MeshParseError, PlacementFailure

CATEGORIES = ("spheroidal", "cuboidal", "cuplike", "complicated")
MM3_PER_CM3 = 1000.0
PLACEMENT_RETRIES = 20


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    category: str = "complicated"
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshParseError("mesh has non-finite vertex coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshParseError("triangle index out of range")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> np.ndarray:
        """(M, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    @property
    def face_areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def signed_volume_mm3(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @property
    def centroid(self) -> np.ndarray:
        """Volume centroid (uniform density)."""
        c = self.corners
        vols = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
        total = vols.sum()
        if abs(total) < 1e-12:
            return self.vertices.mean(axis=0)
        return (c.sum(axis=1) / 4.0 * vols[:, None]).sum(axis=0) / total

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def transformed(self, pose: np.ndarray) -> "TriMesh":
        pose = np.asarray(pose, dtype=np.float64)
        v = self.vertices @ pose[:3, :3].T + pose[:3, 3]
        return replace(self, vertices=v)

    def translated(self, offset) -> "TriMesh":
        return replace(self, vertices=self.vertices + np.asarray(offset, dtype=np.float64))

    def centered(self) -> "TriMesh":
        return self.translated(-self.centroid)

    def flipped(self) -> "TriMesh":
        return replace(self, triangles=self.triangles[:, ::-1])


def orient_mesh(mesh: TriMesh) -> TriMesh:
    """Check that `mesh` is a closed 2-manifold and re-wind it outward.

    Faces are made consistent by breadth-first propagation over shared
    edges, then each connected component is flipped if its signed volume
    is negative.
    """
    tris = mesh.triangles
    if len(tris) < 4:
        raise DegenerateMeshError("degenerate mesh: fewer than 4 triangles")
    edge_faces = defaultdict(list)
    for f, (a, b, c) in enumerate(tris):
        if a == b or b == c or a == c:
            raise DegenerateMeshError(f"degenerate mesh: face {f} repeats a vertex")
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces[(min(u, v), max(u, v))].append((f, u < v))
    for edge, faces in edge_faces.items():
        if len(faces) != 2:
            raise DegenerateMeshError(
                f"degenerate mesh: edge {edge} is shared by {len(faces)} faces (not a closed manifold)"
            )

    flip = np.zeros(len(tris), dtype=bool)
    component = np.full(len(tris), -1, dtype=np.int64)
    neighbours = defaultdict(list)
    for (f0, d0), (f1, d1) in edge_faces.values():
        # same traversal direction on a shared edge means opposite orientation
        neighbours[f0].append((f1, d0 == d1))
        neighbours[f1].append((f0, d0 == d1))
    n_comp = 0
    for start in range(len(tris)):
        if component[start] >= 0:
            continue
        component[start] = n_comp
        queue = deque([start])
        while queue:
            f = queue.popleft()
            for g, disagree in neighbours[f]:
                want = flip[f] ^ disagree
                if component[g] < 0:
                    component[g] = n_comp
                    flip[g] = want
                    queue.append(g)
                elif flip[g] != want:
                    raise DegenerateMeshError("degenerate mesh: surface is not orientable")
        n_comp += 1

    fixed = np.where(flip[:, None], tris[:, ::-1], tris)
    c = mesh.vertices[fixed]
    vols = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
    for k in range(n_comp):
        sel = component == k
        if vols[sel].sum() < 0:
            fixed[sel] = fixed[sel][:, ::-1]
    out = replace(mesh, triangles=fixed)
    scale = np.ptp(mesh.vertices, axis=0).max()
    if out.signed_volume_mm3 <= 1e-9 * max(scale, 1.0) ** 3:
        raise DegenerateMeshError("degenerate mesh: zero enclosed volume")
    return out


def parse_obj(text: str, category: str = "complicated", name: str = "") -> TriMesh:
    """Parse the v/f subset of Wavefront OBJ. Polygons are fan-triangulated."""
    vertices, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "v":
            try:
                vertices.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshParseError(f"line {lineno}: bad vertex record") from exc
            if len(vertices[-1]) != 3:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError as exc:
                    raise MeshParseError(f"line {lineno}: bad face index {tok!r}") from exc
                if i > 0:
                    i -= 1
                elif i < 0:
                    i += len(vertices)
                else:
                    raise MeshParseError(f"line {lineno}: face index 0 is invalid")
                if not 0 <= i < len(vertices):
                    raise MeshParseError(f"line {lineno}: face index {tok} out of range")
                idx.append(i)
            if len(idx) < 3:
                raise MeshParseError(f"line {lineno}: face needs at least 3 vertices")
            faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
    if not vertices or not faces:
        raise MeshParseError("no vertices or faces found")
    return TriMesh(np.array(vertices), np.array(faces), category=category, name=name)


def load_mesh(path, category: str = "complicated") -> TriMesh:
    """Load an OBJ file and return an outward-wound, validated mesh.

    Raises:
        MeshParseError: unreadable file or malformed records.
        DegenerateMeshError: open, non-manifold or zero-volume surfaces.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    return orient_mesh(parse_obj(text, category=category, name=path.stem))


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"# category {mesh.category}"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def mesh_volume(mesh: TriMesh) -> float:
    """Enclosed volume in cm^3 (signed-tetrahedron sum)."""
    return mesh.signed_volume_mm3 / MM3_PER_CM3


def scale_to_volume(mesh: TriMesh, target: float) -> TriMesh:
    """Uniformly scale `mesh` about its centroid to `target` cm^3."""
    if target <= 0:
        raise ValueError("target volume must be positive")
    current = mesh_volume(mesh)
    if current <= 0:
        raise DegenerateMeshError("degenerate mesh: non-positive volume")
    s = (target / current) ** (1.0 / 3.0)
    c = mesh.centroid
    return replace(mesh, vertices=(mesh.vertices - c) * s + c)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    volume_range_cm3: tuple = (27.0, 1000.0)
    camera_distance_range: tuple = (65.0, 75.0)
    table_extent_mm: tuple = (300.0, 300.0)
    noise_mean: float = 1.0
    noise_std: float = 0.01
    min_grasps_per_scene: int = 150

    def __post_init__(self):
        for name in ("volume_range_cm3", "camera_distance_range", "table_extent_mm"):
            val = tuple(float(x) for x in getattr(self, name))
            if len(val) != 2:
                raise ValueError(f"{name} must have two entries")
            object.__setattr__(self, name, val)
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        lo, hi = self.volume_range_cm3
        if not 0 < lo <= hi:
            raise ValueError("volume_range_cm3 must satisfy 0 < low <= high")
        lo, hi = self.camera_distance_range
        if not lo <= hi:
            raise ValueError("camera_distance_range must satisfy low <= high")
        if min(self.table_extent_mm) <= 0:
            raise ValueError("table_extent_mm must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.min_grasps_per_scene < 1:
            raise ValueError("min_grasps_per_scene must be >= 1")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SceneConfig keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SceneConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SceneObject:
    mesh: TriMesh  # centred at its volume centroid
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def posed(self) -> TriMesh:
        return self.mesh.transformed(self.pose)


@dataclass(frozen=True, eq=False)
class Scene:
    """Objects resting on the table plane z = 0."""

    objects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def posed_meshes(self) -> list:
        return [o.posed() for o in self.objects]

    @property
    def max_height(self) -> float:
        if not self.objects:
            return 0.0
        return max(float(m.vertices[:, 2].max()) for m in self.posed_meshes())

    @classmethod
    def on_table(cls, meshes: Sequence[TriMesh], positions=None, rotations=None) -> "Scene":
        """Drop meshes onto the table at the given xy positions (no overlap checks)."""
        objs = []
        for k, mesh in enumerate(meshes):
            xy = (0.0, 0.0) if positions is None else positions[k]
            rot = np.eye(3) if rotations is None else np.asarray(rotations[k], dtype=np.float64)
            objs.append(_rest_on_table(mesh.centered(), rot, xy))
        return cls(tuple(objs))


def _rest_on_table(mesh: TriMesh, rot: np.ndarray, xy) -> SceneObject:
    rotated = mesh.vertices @ rot.T
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = (xy[0], xy[1], -rotated[:, 2].min())
    return SceneObject(mesh, pose)


def randomize_scene(config: SceneConfig, models: Sequence[TriMesh], count: int) -> Scene:
    """Place `count` randomly chosen, scaled and rotated meshes on the table.

    Each object gets a volume drawn uniformly from `config.volume_range_cm3`,
    a uniformly random orientation, and rests with its lowest vertex on z = 0.
    Footprints are kept inside the table and rejected on axis-aligned
    bounding-box overlap. Pure function of (config, models, count).
    """
    if not models:
        raise ValueError("model pool is empty")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(config.seed)
    half = np.array(config.table_extent_mm) / 2.0
    placed, boxes = [], []
    for _ in range(count):
        base = models[int(rng.integers(len(models)))]
        volume = rng.uniform(*config.volume_range_cm3)
        mesh = scale_to_volume(base, volume).centered()
        for _attempt in range(PLACEMENT_RETRIES):
            rot = Rotation.random(random_state=rng).as_matrix()
            rotated = mesh.vertices @ rot.T
            lo, hi = rotated[:, :2].min(axis=0), rotated[:, :2].max(axis=0)
            room_lo, room_hi = -half - lo, half - hi
            if np.any(room_lo > room_hi):
                continue
            xy = rng.uniform(room_lo, room_hi)
            box = np.concatenate([lo + xy, hi + xy])
            if any(_boxes_overlap(box, other) for other in boxes):
                continue
            placed.append(_rest_on_table(mesh, rot, xy))
            boxes.append(box)
            break
        else:
            raise PlacementFailure(
                f"could not place object {len(placed) + 1} of {count} after {PLACEMENT_RETRIES} retries"
            )
    return Scene(tuple(placed))


def _boxes_overlap(a, b) -> bool:
    return bool(a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3])
