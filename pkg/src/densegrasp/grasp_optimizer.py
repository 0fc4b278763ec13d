"""Turn affordance-map candidates into executable grasps.

Candidates are ranked across the 16 bin maps, mapped back to the unrotated
image, and checked against depth edges: contacts are found by marching
along the grasp line, the metric opening must fit the gripper, the contact
normals must satisfy a 2-D antipodal test, and the grasp direction is
re-aligned with the averaged contact normals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .depth_render import DepthImage, _rot2
from .errors import NoExecutableGrasp, OpenContactError
from .grasp_sampler import GripperModel
from .label_gen import BIN_WIDTH, N_BINS, POSITIVE

MARCH_STEP = 0.5
ANGLE_TOL = 1e-9  # radians


@dataclass(frozen=True)
class OptimizerConfig:
    edge_threshold: float = 5.0  # mm of depth change per pixel
    median_size: int = 5  # pre-filter window against sensor noise (1 = off)
    top_k: int = 20
    max_march: float = 150.0  # pixels
    normal_radius: float = 8.0  # pixels of edge used to fit a contact normal
    max_antiparallel_dev: float = 45.0  # degrees
    min_grasp_height: float = 2.0  # mm above the table

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class EdgeMap:
    magnitude: np.ndarray  # mm per pixel
    direction: np.ndarray  # radians, towards increasing depth; NaN off-edge
    threshold: float

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.direction)


def detect_edges(depth, threshold: float = 5.0, median_size: int = 1) -> EdgeMap:
    """Central-difference depth gradient; pixels with magnitude >= threshold are edges.

    The direction points from the nearer (object) side to the farther side,
    i.e. outward from the object.
    """
    d = depth.depth if isinstance(depth, DepthImage) else np.asarray(depth, dtype=np.float64)
    if median_size > 1:
        d = ndimage.median_filter(d, size=median_size, mode="nearest")
    gy, gx = np.gradient(d)
    mag = np.hypot(gx, gy)
    direction = np.where(mag >= threshold, np.arctan2(gy, gx), np.nan)
    return EdgeMap(mag, direction, float(threshold))


def _unit(theta_deg: float) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    return np.array([np.cos(t), np.sin(t)])


def _march(center, step_dir, edges: EdgeMap, max_march: float):
    """First outward-facing edge pixel along a ray, moved half a pixel outward.

    Central differences mark the pixels on both sides of a depth step; the
    first one met is on the object, and the step itself lies half a pixel
    further. Taking the middle of the whole edge band instead is worse on
    curved or noisy surfaces, where the band is wide.
    """
    h, w = edges.direction.shape
    t = MARCH_STEP
    while t <= max_march:
        p = center + t * step_dir
        iu, iv = int(np.floor(p[0] + 0.5)), int(np.floor(p[1] + 0.5))
        if not (0 <= iu < w and 0 <= iv < h):
            return None
        ang = edges.direction[iv, iu]
        # only edges where the surface drops away along the march bound the object
        if np.isfinite(ang) and np.cos(ang) * step_dir[0] + np.sin(ang) * step_dir[1] > 0:
            return p + 0.5 * step_dir
        t += MARCH_STEP
    return None


def find_contacts(center, theta: float, edges: EdgeMap, max_march: float = 150.0):
    """March from `center` along -theta and +theta to the first outward-facing edge.

    Returns (contact_px1, contact_px2) with contact 1 on the -theta side.

    Raises:
        OpenContactError: a side reaches the image border or `max_march`
            pixels without meeting an edge.
    """
    center = np.asarray(center, dtype=np.float64)
    h, w = edges.direction.shape
    if not (-0.5 <= center[0] < w - 0.5 and -0.5 <= center[1] < h - 0.5):
        raise OpenContactError("grasp centre lies outside the image")
    d = _unit(theta)
    c1 = _march(center, -d, edges, max_march)
    c2 = _march(center, d, edges, max_march)
    if c1 is None or c2 is None:
        raise OpenContactError("no edge reached on " + ("both sides" if c1 is None and c2 is None else "one side"))
    return c1, c2


def contact_normal(edges: EdgeMap, contact, radius: float = 8.0):
    """Outward in-plane normal (unit 2-vector) at an edge contact.

    Edge pixels near the contact whose gradient agrees with the contact's
    within 45 degrees are fitted with a line (principal axis); the normal is
    perpendicular to it, oriented like their mean gradient.
    """
    h, w = edges.direction.shape
    iu, iv = (int(np.floor(x + 0.5)) for x in contact)
    iu, iv = min(max(iu, 0), w - 1), min(max(iv, 0), h - 1)
    ang0 = edges.direction[iv, iu]
    if not np.isfinite(ang0):
        return None
    r = int(np.ceil(radius))
    v0, v1, u0, u1 = max(iv - r, 0), min(iv + r + 1, h), max(iu - r, 0), min(iu + r + 1, w)
    patch = edges.direction[v0:v1, u0:u1]
    vv, uu = np.mgrid[v0:v1, u0:u1]
    close = (uu - contact[0]) ** 2 + (vv - contact[1]) ** 2 <= radius ** 2
    same = np.isfinite(patch) & (np.cos(np.nan_to_num(patch) - ang0) >= np.cos(np.pi / 4))
    sel = close & same
    mean = np.array([np.cos(patch[sel]).sum(), np.sin(patch[sel]).sum()])
    mean /= np.linalg.norm(mean)
    if sel.sum() >= 3:
        pts = np.stack([uu[sel], vv[sel]], axis=1).astype(np.float64)
        pts -= pts.mean(axis=0)
        _, s, vt = np.linalg.svd(pts, full_matrices=False)
        if s[0] > 1e-9 and (len(s) < 2 or s[0] > 1.5 * s[1]):
            tangent = vt[0]
            normal = np.array([-tangent[1], tangent[0]])
            return normal if normal @ mean >= 0 else -normal
    return mean


def width_filter(c1, c2, depth: DepthImage, gripper: GripperModel = GripperModel()) -> bool:
    """Metric distance between back-projected contacts strictly below the gripper opening."""
    return bool(metric_width(c1, c2, depth) < gripper.max_width)


def contact_depth(depth: DepthImage, c, radius: int = 2, percentile: float = 25.0) -> float:
    """Surface depth near a pixel: a low percentile of its (2r+1)^2 window.

    At an edge roughly half the window lies on the object, so a low
    percentile picks the object side without chasing single noisy pixels
    the way a plain minimum would.
    """
    h, w = depth.depth.shape
    iu, iv = (int(np.floor(x + 0.5)) for x in c)
    iu, iv = min(max(iu, 0), w - 1), min(max(iv, 0), h - 1)
    window = depth.depth[max(iv - radius, 0):iv + radius + 1, max(iu - radius, 0):iu + radius + 1]
    return float(np.percentile(window, percentile))


def contact_point(depth: DepthImage, c) -> np.ndarray:
    return depth.camera.back_project(c[0], c[1], contact_depth(depth, c))


def metric_width(c1, c2, depth: DepthImage) -> float:
    return float(np.linalg.norm(contact_point(depth, c2) - contact_point(depth, c1)))


def _angle2(a, b) -> float:
    return float(np.arctan2(abs(a[0] * b[1] - a[1] * b[0]), a @ b))


def antipodal_check_2d(c1, c2, n1, n2, mu: float) -> bool:
    """Contact line strictly inside both in-plane friction cones.

    `n1`, `n2` are outward normals (2-vectors or angles in radians). A line
    exactly along both inward normals passes for any mu >= 0.
    """
    n1 = np.array([np.cos(n1), np.sin(n1)]) if np.ndim(n1) == 0 else np.asarray(n1, dtype=np.float64)
    n2 = np.array([np.cos(n2), np.sin(n2)]) if np.ndim(n2) == 0 else np.asarray(n2, dtype=np.float64)
    line = np.asarray(c2, dtype=np.float64) - np.asarray(c1, dtype=np.float64)
    if np.linalg.norm(line) < 1e-12:
        return False
    a1, a2 = _angle2(-n1, line), _angle2(-n2, -line)
    if a1 <= ANGLE_TOL and a2 <= ANGLE_TOL:
        return True
    # strict, with rounding slack so a boundary built at exactly atan(mu) fails
    half = np.arctan(mu) - ANGLE_TOL
    return bool(a1 < half and a2 < half)


def refine_direction(n1, n2, theta_initial: float, max_dev: float = 45.0):
    """Grasp angle along the bisector of -n1 and n2.

    Returns (theta, refined). The initial angle is kept when the normals are
    more than `max_dev` degrees from anti-parallel or the correction would
    exceed half a bin (11.25 degrees).
    """
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    if np.degrees(_angle2(n1, -n2)) > max_dev:
        return float(theta_initial), False
    axis = n2 / np.linalg.norm(n2) - n1 / np.linalg.norm(n1)
    theta = float(np.degrees(np.arctan2(axis[1], axis[0])) % 360.0)
    delta = (theta - theta_initial + 180.0) % 360.0 - 180.0
    if abs(delta) > BIN_WIDTH / 2 + 1e-6:
        return float(theta_initial), False
    return theta, True


@dataclass(frozen=True, eq=False)
class OptimizedGrasp:
    center_px: np.ndarray  # (u, v) in the unrotated image
    center_mm: np.ndarray
    theta_initial: float
    theta_refined: float
    contact_px1: np.ndarray = None
    contact_px2: np.ndarray = None
    width_mm: float = float("nan")
    valid: bool = False
    score: float = 0.0
    refined: bool = False
    bin: int = 0
    axis_world: np.ndarray = field(default=None)

    @property
    def theta(self) -> float:
        return self.theta_refined

    def to_dict(self) -> dict:
        def lst(x):
            return None if x is None else [float(v) for v in x]
        return {"center_px": lst(self.center_px), "center_mm": lst(self.center_mm),
                "theta_initial": float(self.theta_initial), "theta_refined": float(self.theta_refined),
                "contact_px1": lst(self.contact_px1), "contact_px2": lst(self.contact_px2),
                "width_mm": float(self.width_mm), "valid": bool(self.valid), "score": float(self.score),
                "refined": bool(self.refined), "bin": int(self.bin), "axis_world": lst(self.axis_world)}


def bin_to_image(p, bin_index: int, width: int, height: int) -> np.ndarray:
    """Map a pixel of the bin-rotated image back to the unrotated image."""
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return c + _rot2(bin_index * BIN_WIDTH) @ (np.asarray(p, dtype=np.float64) - c)


def image_to_bin(p, bin_index: int, width: int, height: int) -> np.ndarray:
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return c + _rot2(-bin_index * BIN_WIDTH) @ (np.asarray(p, dtype=np.float64) - c)


def rank_candidates(maps, exclude=frozenset()) -> list:
    """(score, bin, row, col) of positive pixels, best first; ties by (bin, row, col)."""
    rows = []
    for amap in maps:
        score = amap.positive_score()
        positive = amap.classes == POSITIVE if amap.probs is None else score > 0
        vv, uu = np.nonzero(positive)
        for v, u, s in zip(vv, uu, score[vv, uu]):
            if (amap.bin.index, int(v), int(u)) not in exclude:
                rows.append((float(s), amap.bin.index, int(v), int(u)))
    rows.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    return rows


def grasp_height(depth: DepthImage, points, gripper: GripperModel, min_height: float) -> float:
    top = min(float(p[2]) for p in points)
    return max(top - gripper.insertion, min_height)


def evaluate_candidate(center, theta0: float, depth: DepthImage, edges: EdgeMap, gripper: GripperModel,
                       mu: float, config: OptimizerConfig = OptimizerConfig(), score: float = 0.0,
                       bin_index: int = 0) -> OptimizedGrasp:
    """Contacts, width and antipodal checks plus direction refinement for one candidate."""
    invalid = OptimizedGrasp(np.asarray(center, dtype=np.float64), None, theta0, theta0, score=score, bin=bin_index)
    try:
        c1, c2 = find_contacts(center, theta0, edges, config.max_march)
    except OpenContactError:
        return invalid
    n1 = contact_normal(edges, c1, config.normal_radius)
    n2 = contact_normal(edges, c2, config.normal_radius)
    if n1 is None or n2 is None or not width_filter(c1, c2, depth, gripper):
        return invalid
    if not antipodal_check_2d(c1, c2, n1, n2, mu):
        return invalid
    theta, refined = refine_direction(n1, n2, theta0, config.max_antiparallel_dev)
    if refined:
        try:
            r1, r2 = find_contacts(center, theta, edges, config.max_march)
            m1 = contact_normal(edges, r1, config.normal_radius)
            m2 = contact_normal(edges, r2, config.normal_radius)
            ok = (m1 is not None and m2 is not None and width_filter(r1, r2, depth, gripper)
                  and antipodal_check_2d(r1, r2, m1, m2, mu))
        except OpenContactError:
            ok = False
        if ok:
            c1, c2 = r1, r2
        else:
            theta, refined = theta0, False
    p1, p2 = contact_point(depth, c1), contact_point(depth, c2)
    z = grasp_height(depth, (p1, p2), gripper, config.min_grasp_height)
    center_mm = depth.camera.back_project(center[0], center[1], depth.camera.depth_of_height(z))
    return OptimizedGrasp(np.asarray(center, dtype=np.float64), center_mm, theta0, theta, c1, c2,
                          float(np.linalg.norm(p2 - p1)), True, score, refined, bin_index,
                          depth.camera.world_axis(theta))


def select_best(maps, depth: DepthImage, gripper: GripperModel = GripperModel(), mu: float = 0.5,
                top_k: int = None, config: OptimizerConfig = OptimizerConfig(), exclude=frozenset(),
                edges: EdgeMap = None) -> OptimizedGrasp:
    """Highest-scoring candidate among the top_k that passes every check.

    Args:
        maps: 16 AffordanceMaps in their bin-rotated frames.
        depth: the unrotated depth image (same size as the maps).
        exclude: (bin, row, col) map pixels to skip, e.g. after failed attempts.

    Raises:
        NoExecutableGrasp: none of the top_k candidates is valid.
    """
    if len(maps) != N_BINS:
        raise ValueError(f"expected {N_BINS} affordance maps, got {len(maps)}")
    top_k = config.top_k if top_k is None else top_k
    if edges is None:
        edges = detect_edges(depth, config.edge_threshold, config.median_size)
    ranked = rank_candidates(maps, exclude)[:top_k]
    for score, b, v, u in ranked:
        center = bin_to_image((u, v), b, depth.width, depth.height)
        g = evaluate_candidate(center, b * BIN_WIDTH, depth, edges, gripper, mu, config, score, b)
        if g.valid:
            return g
    raise NoExecutableGrasp(f"no valid grasp among the top {len(ranked)} candidates")


def direct_grasp(maps, depth: DepthImage, gripper: GripperModel = GripperModel(), exclude=frozenset(),
                 min_height: float = 2.0) -> OptimizedGrasp:
    """Best map pixel executed at its bin angle without any checks."""
    ranked = rank_candidates(maps, exclude)
    if not ranked:
        raise NoExecutableGrasp("affordance maps contain no positive pixel")
    score, b, v, u = ranked[0]
    center = bin_to_image((u, v), b, depth.width, depth.height)
    d = contact_depth(depth, center)
    top = float(depth.camera.back_project(center[0], center[1], d)[2])
    z = max(top - gripper.insertion, min_height)
    theta = b * BIN_WIDTH
    center_mm = depth.camera.back_project(center[0], center[1], depth.camera.depth_of_height(z))
    return OptimizedGrasp(center, center_mm, theta, theta, valid=True, score=score, bin=b,
                          axis_world=depth.camera.world_axis(theta))
