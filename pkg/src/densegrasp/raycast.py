"""Vectorized ray/triangle intersection (Moller-Trumbore)."""
from __future__ import annotations

import numpy as np

# barycentric slack so rays through shared edges never fall between triangles
EDGE_EPS = 1e-10
CHUNK = 1 << 20


def ray_triangle_t(origins, directions, corners) -> np.ndarray:
    """Ray parameters of every ray/triangle hit.

    Args:
        origins, directions: (R, 3) arrays; directions need not be unit.
        corners: (T, 3, 3) triangle corner coordinates.

    Returns:
        (R, T) array of t >= 0 with ``inf`` where the ray misses. Both
        front- and back-facing triangles are reported.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 3, 3)
    n_rays, n_tris = len(origins), len(corners)
    out = np.full((n_rays, n_tris), np.inf)
    if n_rays == 0 or n_tris == 0:
        return out
    v0 = corners[:, 0]
    e1 = corners[:, 1] - v0
    e2 = corners[:, 2] - v0
    step = max(1, CHUNK // n_tris)
    for s in range(0, n_rays, step):
        o = origins[s:s + step, None, :]
        d = directions[s:s + step, None, :]
        p = np.cross(d, e2[None])
        det = np.einsum("rtk,tk->rt", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - v0[None]
        u = np.einsum("rtk,rtk->rt", tv, p) * inv
        q = np.cross(tv, e1[None])
        v = np.einsum("rtk,rtk->rt", np.broadcast_to(d, q.shape), q) * inv
        t = np.einsum("rtk,tk->rt", q, e2) * inv
        hit = ok & (u >= -EDGE_EPS) & (v >= -EDGE_EPS) & (u + v <= 1 + EDGE_EPS) & (t >= 0)
        out[s:s + step] = np.where(hit, t, np.inf)
    return out


def first_hit(origins, directions, corners):
    """Nearest hit per ray: returns (t, triangle index) with (inf, -1) on a miss."""
    t = ray_triangle_t(origins, directions, corners)
    if t.shape[1] == 0:
        return np.full(len(t), np.inf), np.full(len(t), -1)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(len(t)), idx]
    return best, np.where(np.isfinite(best), idx, -1)


def line_extent(origins, directions, corners):
    """Nearest and farthest hits per ray (entry/exit of a line through a solid).

    Returns (t_min, idx_min, t_max, idx_max); misses give inf/-1.
    """
    t = ray_triangle_t(origins, directions, corners)
    rows = np.arange(len(t))
    if t.shape[1] == 0:
        miss = np.full(len(t), np.inf), np.full(len(t), -1)
        return (*miss, *miss)
    i_min = np.argmin(t, axis=1)
    t_min = t[rows, i_min]
    finite = np.where(np.isfinite(t), t, -np.inf)
    i_max = np.argmax(finite, axis=1)
    t_max = finite[rows, i_max]
    hit = np.isfinite(t_min)
    return (t_min, np.where(hit, i_min, -1), np.where(hit, t_max, np.inf), np.where(hit, i_max, -1))
