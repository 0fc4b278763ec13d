"""Procedural closed meshes used as the built-in model pool and as fixtures."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh_scene import TriMesh, orient_mesh

GOLDEN = (1 + 5 ** 0.5) / 2


def box(sx: float, sy: float = None, sz: float = None, category: str = "cuboidal") -> TriMesh:
    sy = sx if sy is None else sy
    sz = sx if sz is None else sz
    v = np.array([[x, y, z] for x in (0, sx) for y in (0, sy) for z in (0, sz)], dtype=np.float64)
    v -= [sx / 2, sy / 2, sz / 2]
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return orient_mesh(TriMesh(v, tris, category=category, name="box"))


def cube(edge: float = 30.0) -> TriMesh:
    return box(edge, edge, edge)


def icosphere(radius: float = 20.0, subdivisions: int = 3, category: str = "spheroidal") -> TriMesh:
    """Geodesic sphere with one vertex on each pole."""
    v = [(-1, GOLDEN, 0), (1, GOLDEN, 0), (-1, -GOLDEN, 0), (1, -GOLDEN, 0),
         (0, -1, GOLDEN), (0, 1, GOLDEN), (0, -1, -GOLDEN), (0, 1, -GOLDEN),
         (GOLDEN, 0, -1), (GOLDEN, 0, 1), (-GOLDEN, 0, -1), (-GOLDEN, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache, new_faces = {}, []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    pts = np.array(verts)
    rot, _ = Rotation.align_vectors([[0, 0, 1]], [pts[5]])
    pts = rot.apply(pts)
    pts[5], pts[6] = (0.0, 0.0, 1.0), (0.0, 0.0, -1.0)
    return orient_mesh(TriMesh(pts * radius, faces, category=category, name="icosphere"))


def revolve(profile, segments: int = 32, category: str = "complicated", name: str = "revolved") -> TriMesh:
    """Surface of revolution of an (r, z) polyline that starts and ends on the axis."""
    profile = [(float(r), float(z)) for r, z in profile]
    if profile[0][0] != 0 or profile[-1][0] != 0:
        raise ValueError("profile must start and end on the axis (r = 0)")
    ang = 2 * np.pi * np.arange(segments) / segments
    verts, rings = [], []
    for r, z in profile:
        if r == 0:
            rings.append([len(verts)] * segments)
            verts.append((0.0, 0.0, z))
        else:
            rings.append(list(range(len(verts), len(verts) + segments)))
            verts += [(r * np.cos(a), r * np.sin(a), z) for a in ang]
    faces = []
    for lower, upper in zip(rings[:-1], rings[1:]):
        for j in range(segments):
            k = (j + 1) % segments
            a, b, c, d = lower[j], lower[k], upper[k], upper[j]
            if a == b:
                faces.append((a, c, d))
            elif c == d:
                faces.append((a, b, c))
            else:
                faces += [(a, b, c), (a, c, d)]
    return orient_mesh(TriMesh(np.array(verts), faces, category=category, name=name))


def cylinder(radius: float = 15.0, height: float = 40.0, segments: int = 32,
             category: str = "cuboidal") -> TriMesh:
    return revolve([(0, 0), (radius, 0), (radius, height), (0, height)], segments,
                   category=category, name="cylinder")


def cup(radius: float = 30.0, height: float = 60.0, wall: float = 4.0, segments: int = 32) -> TriMesh:
    profile = [(0, 0), (radius, 0), (radius, height), (radius - wall, height),
               (radius - wall, wall), (0, wall)]
    return revolve(profile, segments, category="cuplike", name="cup")


def dumbbell(radius: float = 18.0, neck: float = 8.0, length: float = 70.0, segments: int = 24) -> TriMesh:
    end = length * 0.3
    profile = [(0, 0), (radius, 0), (radius, end), (neck, end), (neck, length - end),
               (radius, length - end), (radius, length), (0, length)]
    return revolve(profile, segments, category="complicated", name="dumbbell")


def _ear_clip(poly: np.ndarray) -> list:
    """Triangulate a simple counter-clockwise polygon."""
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(poly) ** 2:
            raise ValueError("polygon is not simple")
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 1e-12:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = poly[j]
                if cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                idx.pop(k)
                break
    tris.append(tuple(idx))
    return tris


def extrude(polygon, height: float, category: str = "complicated", name: str = "prism") -> TriMesh:
    poly = np.asarray(polygon, dtype=np.float64)
    area = 0.5 * np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if area < 0:
        poly = poly[::-1]
    n = len(poly)
    verts = np.vstack([np.c_[poly, np.zeros(n)], np.c_[poly, np.full(n, height)]])
    caps = _ear_clip(poly)
    faces = [(c, b, a) for a, b, c in caps] + [(a + n, b + n, c + n) for a, b, c in caps]
    for i in range(n):
        j = (i + 1) % n
        faces += [(i, j, j + n), (i, j + n, i + n)]
    return orient_mesh(TriMesh(verts, faces, category=category, name=name))


def tee(width: float = 60.0, stem: float = 16.0, bar: float = 16.0, length: float = 50.0,
        height: float = 25.0) -> TriMesh:
    w, s = width / 2, stem / 2
    poly = [(-s, 0), (s, 0), (s, length - bar), (w, length - bar), (w, length),
            (-w, length), (-w, length - bar), (-s, length - bar)]
    return extrude(poly, height, category="complicated", name="tee")


def wide_disk(diameter: float = 120.0, thickness: float = 10.0) -> TriMesh:
    """A plate wider than the default gripper opening in every horizontal direction."""
    return cylinder(diameter / 2, thickness, segments=48, category="cuboidal")


def default_pool() -> list:
    """Built-in model pool covering the four shape categories."""
    return [
        cube(30.0),
        box(60.0, 30.0, 25.0),
        cylinder(15.0, 50.0),
        icosphere(20.0, 2),
        cup(),
        dumbbell(),
        tee(),
    ]
