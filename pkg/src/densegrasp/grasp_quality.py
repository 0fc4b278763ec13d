"""Friction-cone wrench sets, force closure and the Ferrari-Canny epsilon metric.

Forces on the cone boundary are ``-n + mu * t`` with a unit normal
component, so widening the cone (larger mu) or refining it (more edges
at nested angles) only grows the wrench hull.

For a two-contact grasp the moment about the contact line can never be
resisted by point contacts, so the wrench set is analysed in the
5-dimensional subspace orthogonal to that twist (``WrenchSet.basis``).
Without the reduction every two-finger grasp would have epsilon 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError
from scipy.stats import norm, qmc

DEFAULT_EDGES = 8
DEFAULT_DIRECTIONS = 4096
FC_TOL = 1e-9


@dataclass(frozen=True)
class FrictionCone:
    contact: np.ndarray
    normal: np.ndarray  # outward surface normal
    mu: float
    edges: int = DEFAULT_EDGES

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if not np.isfinite(n).all() or np.linalg.norm(n) < 1e-12:
            raise ValueError("cone normal must be a non-zero vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("cone normal must be unit length")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.edges < 3:
            raise ValueError("a friction cone needs at least 3 edges")
        object.__setattr__(self, "contact", np.asarray(self.contact, dtype=np.float64))
        object.__setattr__(self, "normal", n)

    def edge_forces(self, reference=None) -> np.ndarray:
        """(m, 3) boundary forces; edge 0 tilts towards `reference` when given."""
        n = self.normal
        t1 = _tangent(n, reference)
        t2 = np.cross(-n, t1)
        phi = 2 * np.pi * np.arange(self.edges) / self.edges
        return -n + self.mu * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)


def _tangent(n, reference=None) -> np.ndarray:
    for ref in (reference,):
        if ref is not None:
            t = np.asarray(ref, dtype=np.float64)
            t = t - (t @ n) * n
            if np.linalg.norm(t) > 1e-9 * max(1.0, np.linalg.norm(ref)):
                return t / np.linalg.norm(t)
    axis = np.eye(3)[np.argmin(np.abs(n))]
    t = axis - (axis @ n) * n
    return t / np.linalg.norm(t)


@dataclass(frozen=True, eq=False)
class WrenchSet:
    """Primitive wrenches [f; (p - origin) x f / rho] as rows.

    ``basis`` (6 x d, orthonormal columns) spans the subspace in which
    closure and epsilon are evaluated.
    """

    wrenches: np.ndarray
    origin: np.ndarray
    rho: float
    basis: np.ndarray

    @property
    def reduced(self) -> np.ndarray:
        return self.wrenches @ self.basis

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def primitive_wrenches(contacts, normals, mu: float, m: int = DEFAULT_EDGES, centroid=None,
                       rho: float = 1.0) -> WrenchSet:
    """Discretized friction-cone wrenches of a point-contact grasp.

    Args:
        contacts, normals: (k, 3) contact points (mm) and outward unit normals.
        mu: friction coefficient.
        m: cone edges per contact.
        centroid: torque reference point; defaults to the contacts' mean.
        rho: torque scale (object characteristic radius, mm).
    """
    contacts = np.asarray(contacts, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(contacts) != len(normals) or len(contacts) < 1:
        raise ValueError("need matching, non-empty contact and normal lists")
    if rho <= 0:
        raise ValueError("rho must be positive")
    origin = contacts.mean(axis=0) if centroid is None else np.asarray(centroid, dtype=np.float64)
    hub = contacts.mean(axis=0)
    rows = []
    for p, n in zip(contacts, normals):
        ref = hub - p
        if np.linalg.norm(ref - (ref @ n) * n) < 1e-9:
            ref = origin - p
        forces = FrictionCone(p, n, mu, m).edge_forces(ref)
        torques = np.cross(p - origin, forces) / rho
        rows.append(np.hstack([forces, torques]))
    w = np.vstack(rows)
    basis = np.eye(6)
    if len(contacts) == 2 and np.linalg.norm(contacts[1] - contacts[0]) > 1e-12:
        a = (contacts[1] - contacts[0]) / np.linalg.norm(contacts[1] - contacts[0])
        q = contacts[0] + ((origin - contacts[0]) @ a) * a
        # unit twist about the contact line, expressed in scaled wrench coordinates
        xi = np.hstack([np.cross(a, origin - q), rho * a])
        xi /= np.linalg.norm(xi)
        basis = _complement(xi)
    w.flags.writeable = False
    return WrenchSet(w, origin, float(rho), basis)


def _complement(v: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(np.column_stack([v, np.eye(len(v))]))
    return q[:, 1:len(v)]


def force_closure(ws: WrenchSet) -> bool:
    """True iff the origin is strictly inside the hull of the wrenches.

    Solved exactly as an LP: maximise t subject to sum(l_i w_i) = 0,
    sum(l_i) = 1 and l_i >= t. The origin is interior iff t > 0 and the
    wrenches span the whole space.
    """
    w = ws.reduced
    n, d = w.shape
    if n <= d or np.linalg.matrix_rank(w, tol=1e-9) < d:
        return False
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, n + 1))
    a_eq[:d, :n] = w.T
    a_eq[d, :n] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    return bool(res.status == 0 and -res.fun > FC_TOL)


@lru_cache(maxsize=16)
def quasi_uniform_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit vectors from a scrambled Sobol sequence pushed through the normal quantile."""
    pts = qmc.Sobol(dim, scramble=True, seed=seed).random(count)
    z = norm.ppf(np.clip(pts, 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z.flags.writeable = False
    return z


def support_min(w: np.ndarray, directions: np.ndarray):
    """min over directions of max_i w_i . u, with the minimising direction."""
    h = (directions @ w.T).max(axis=1)
    k = int(np.argmin(h))
    return float(h[k]), directions[k], h


def facet_vertices(w: np.ndarray, dirs: np.ndarray):
    """Snap directions onto the facets spanned by their d most active wrenches.

    A facet through wrenches A is the polar vertex y with w_A y = 1; it is
    kept only if W y <= 1 holds for every wrench. Returns (y, active sets).
    """
    d = w.shape[1]
    act = np.sort(np.argsort(-(dirs @ w.T), axis=1, kind="stable")[:, :d], axis=1)
    act = np.unique(act, axis=0)
    a = w[act]
    ok = np.abs(np.linalg.det(a)) > 1e-12
    act, a = act[ok], a[ok]
    if len(act) == 0:
        return np.zeros((0, d)), act
    y = np.linalg.solve(a, np.ones((len(a), d, 1)))[..., 0]
    feasible = (y @ w.T).max(axis=1) <= 1 + 1e-9
    return y[feasible], act[feasible]


def climb_polar(w: np.ndarray, y: np.ndarray, act: np.ndarray, max_steps: int = 100) -> float:
    """Hill-climb |y| over adjacent vertices of the polar body {y : W y <= 1}.

    Each vertex is the polar of a hull facet at distance 1/|y|, so the
    climb walks towards nearer facets. Pivots follow the simplex ratio
    test. Returns the facet distance reached.
    """
    d = w.shape[1]
    r2 = float(y @ y)
    rows = np.arange(d)
    for _ in range(max_steps):
        edges = -np.linalg.inv(w[act]).T  # row j leaves constraint act[j]
        slack = np.maximum(1.0 - w @ y, 0.0)
        rate = edges @ w.T
        rate[:, act] = 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(rate > 1e-12, slack / rate, np.inf)
        k = np.argmin(step, axis=1)
        s = step[rows, k]
        if not np.isfinite(s).all():
            break
        cand = y + s[:, None] * edges
        cr2 = (cand * cand).sum(axis=1)
        j = int(np.argmax(cr2))
        if cr2[j] <= r2 * (1 + 1e-12):
            break
        y, r2 = cand[j], float(cr2[j])
        act = act.copy()
        act[j] = k[j]
    return 1.0 / np.sqrt(r2)


def sampled_epsilon(ws: WrenchSet, directions: int = DEFAULT_DIRECTIONS, refine_steps: int = 100,
                    starts: int = 64, climbs: int = 8, seed: int = 0) -> float:
    """Upper bound on epsilon from the support function over sampled directions.

    min over quasi-uniform unit directions u of max_i w_i . u, refined by
    snapping the best `starts` directions onto the facets they nearly
    support and walking the `climbs` nearest facets to adjacent ones.
    Every candidate is an upper bound, but the walk is local and can stall
    well above the true value on thin hulls.
    """
    if not force_closure(ws):
        return 0.0
    w = ws.reduced
    dirs = quasi_uniform_directions(ws.dim, int(directions), seed)
    eps, _, h = support_min(w, dirs)
    if refine_steps > 0:
        ys, acts = facet_vertices(w, dirs[np.argsort(h, kind="stable")[:starts]])
        for i in np.argsort(-(ys * ys).sum(axis=1), kind="stable")[:climbs]:
            eps = min(eps, climb_polar(w, ys[i], acts[i], refine_steps))
    return max(0.0, float(eps))


def ferrari_canny(ws: WrenchSet, directions: int = DEFAULT_DIRECTIONS, refine_steps: int = 100) -> float:
    """Radius of the largest origin-centred ball inside the wrench hull.

    Exact distance from the origin to the nearest qhull facet. When qhull
    rejects the input (nearly flat hulls) the sampled estimate is used
    instead. The result is 0 exactly when the grasp is not force closure.
    """
    if not force_closure(ws):
        return 0.0
    try:
        hull = ConvexHull(ws.reduced)
    except QhullError:
        return sampled_epsilon(ws, directions, refine_steps)
    return max(0.0, float(np.min(-hull.equations[:, -1])))


def characteristic_radius(vertices, centroid) -> float:
    """Largest distance from the centroid to the surface (torque scale)."""
    return float(np.linalg.norm(np.asarray(vertices) - np.asarray(centroid), axis=1).max())


def grasp_epsilon(c1, c2, n1, n2, mu: float, m: int, centroid, rho: float,
                  directions: int = DEFAULT_DIRECTIONS) -> float:
    ws = primitive_wrenches([c1, c2], [n1, n2], mu, m, centroid, rho)
    return ferrari_canny(ws, directions)


def normalize_qualities(values) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant batch maps to 0.5."""
    q = np.asarray(values, dtype=np.float64).ravel()
    if q.size == 0:
        raise ValueError("cannot normalize an empty batch")
    lo, hi = q.min(), q.max()
    if hi - lo <= 0:
        return np.full(q.shape, 0.5)
    return (q - lo) / (hi - lo)


def normalize_with_range(values, lo: float, hi: float) -> np.ndarray:
    """Apply a stored database-wide min-max range to new values."""
    q = np.asarray(values, dtype=np.float64)
    if hi - lo <= 0:
        return np.full(q.shape, 0.5)
    return np.clip((q - lo) / (hi - lo), 0.0, 1.0)
