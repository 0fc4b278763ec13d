"""Top-down depth rendering, sensor noise, label-safe rotation and cropping.

Image conventions: pixel ``(u, v)`` is (column, row), pixel centres sit on
integer coordinates, and depth is the camera-frame Z (distance from the
camera plane) in millimetres.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import CorruptFileError, RenderError
from .mesh_scene import Scene
from .raycast import EDGE_EPS

DEPTH_SCALE = 10.0  # PNG units per millimetre
OUT_SIZE = 300
# columns are camera x, y, z axes in world coordinates: x right, y "down" the image, z into the table
TOP_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def _rot2(angle_deg: float) -> np.ndarray:
    """2x2 rotation in (u, v) image coordinates, exact for multiples of 90 degrees."""
    a = float(angle_deg) % 360.0
    if a % 90.0 == 0:
        # a tiny negative angle wraps to exactly 360.0
        c, s = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}[int(a) % 360]
    else:
        r = np.deg2rad(a)
        c, s = np.cos(r), np.sin(r)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole or orthographic camera.

    ``rotation`` maps camera axes to world axes (columns) and ``position``
    is the optical centre; the default is the top-down view from
    ``distance`` mm above the table origin.
    """

    kind: str = "pinhole"
    fx: float = 615.0
    fy: float = 615.0
    cx: float = 319.5
    cy: float = 239.5
    pitch: float = 1.0
    distance: float = 600.0
    rotation: np.ndarray = field(default_factory=lambda: TOP_DOWN.copy())
    position: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("pinhole", "orthographic"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.fx <= 0 or self.fy <= 0 or self.pitch <= 0:
            raise ValueError("focal lengths and pixel pitch must be positive")
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        pos = (np.array([0.0, 0.0, self.distance]) if self.position is None
               else np.array(self.position, dtype=np.float64).reshape(3))
        rot.flags.writeable = False
        pos.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)

    @classmethod
    def top_down(cls, distance: float, width: int = 640, height: int = 480, kind: str = "pinhole",
                 focal: float = 615.0, pitch: float = 1.0) -> "CameraModel":
        return cls(kind=kind, fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   pitch=pitch, distance=float(distance))

    @property
    def background_depth(self) -> float:
        """Depth of the table plane z = 0 along the optical axis."""
        return float(self.position[2] / -self.rotation[2, 2])

    def to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.position) @ self.rotation

    def project(self, points) -> np.ndarray:
        """World points (..., 3) to (..., 3) arrays of (u, v, depth)."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        if self.kind == "pinhole":
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        else:
            u = pc[..., 0] / self.pitch + self.cx
            v = pc[..., 1] / self.pitch + self.cy
        return np.stack([u, v, z], axis=-1)

    def back_project(self, u, v, depth) -> np.ndarray:
        u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (u, v, depth)))
        if self.kind == "pinhole":
            x = (u - self.cx) / self.fx * depth
            y = (v - self.cy) / self.fy * depth
        else:
            x = (u - self.cx) * self.pitch
            y = (v - self.cy) * self.pitch
        pc = np.stack([x, y, depth], axis=-1)
        return pc @ self.rotation.T + self.position

    def rays(self, u, v):
        """Per-pixel ray origins and directions; the ray parameter equals depth."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if self.kind == "pinhole":
            d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
            o = np.broadcast_to(self.position, d.shape)
        else:
            off = np.stack([(u - self.cx) * self.pitch, (v - self.cy) * self.pitch, np.zeros_like(u)], axis=-1)
            o = off @ self.rotation.T + self.position
            d = np.broadcast_to(np.array([0.0, 0.0, 1.0]), off.shape)
        return o, d @ self.rotation.T

    def depth_of_height(self, z: float) -> float:
        """Depth of the horizontal plane at world height `z` along the optical axis."""
        return float((self.position[2] - z) / -self.rotation[2, 2])

    def mm_per_pixel(self, depth: float) -> float:
        return depth / self.fx if self.kind == "pinhole" else self.pitch

    def image_angle(self, axis_world) -> float:
        """Image-plane angle (degrees in [0, 360)) of a world direction, atan2(dv, du)."""
        d = np.asarray(axis_world, dtype=np.float64) @ self.rotation
        return float(np.rad2deg(np.arctan2(d[1], d[0])) % 360.0)

    def world_axis(self, theta_deg: float) -> np.ndarray:
        """Horizontal world direction whose image angle is `theta_deg` (top-down cameras)."""
        t = np.deg2rad(theta_deg)
        w = self.rotation @ np.array([np.cos(t), np.sin(t), 0.0])
        w[2] = 0.0
        return w / np.linalg.norm(w)

    def rotated(self, angle_deg: float, center) -> "CameraModel":
        """Camera matching an image rotated by `angle_deg` about pixel `center`."""
        r2 = _rot2(angle_deg)
        rz = np.eye(3)
        rz[:2, :2] = r2
        c = np.asarray(center, dtype=np.float64)
        pp = c + r2 @ (np.array([self.cx, self.cy]) - c)
        return replace(self, rotation=self.rotation @ rz.T, cx=float(pp[0]), cy=float(pp[1]))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "pitch": self.pitch, "distance": self.distance,
                "rotation": self.rotation.tolist(), "position": self.position.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class DepthImage:
    depth: np.ndarray
    background_depth: float
    camera: CameraModel

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth must be a 2-D array")
        d.flags.writeable = False
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "background_depth", float(self.background_depth))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    def with_depth(self, depth) -> "DepthImage":
        return replace(self, depth=depth)


def render_depth(scene: Scene, camera: CameraModel, width: int = 640, height: int = 480) -> DepthImage:
    """Ray-cast the nearest surface for every pixel; misses see the table."""
    bg = camera.background_depth
    if camera.position[2] <= 0 or not np.isfinite(bg) or bg <= 0:
        raise RenderError("camera must be above the table plane")
    meshes = scene.posed_meshes()
    if meshes and scene.max_height >= camera.position[2]:
        raise RenderError("camera is not above the tallest object")
    depth = np.full((height, width), bg)
    if not meshes:
        return DepthImage(depth, bg, camera)
    corners = np.concatenate([m.corners for m in meshes])
    proj = camera.project(corners)  # (T, 3, 3) of u, v, z
    if np.any(proj[..., 2] <= 0):
        raise RenderError("scene geometry behind the camera")
    # inclusive pixel bounding box of each projected triangle
    u0 = np.clip(np.ceil(proj[..., 0].min(axis=1) - 1e-6), 0, width).astype(np.int64)
    u1 = np.clip(np.floor(proj[..., 0].max(axis=1) + 1e-6), -1, width - 1).astype(np.int64)
    v0 = np.clip(np.ceil(proj[..., 1].min(axis=1) - 1e-6), 0, height).astype(np.int64)
    v1 = np.clip(np.floor(proj[..., 1].max(axis=1) + 1e-6), -1, height - 1).astype(np.int64)
    nu = np.maximum(u1 - u0 + 1, 0)
    nv = np.maximum(v1 - v0 + 1, 0)
    counts = nu * nv
    tri = np.repeat(np.arange(len(corners)), counts)
    if tri.size == 0:
        return DepthImage(depth, bg, camera)
    local = np.arange(tri.size) - np.repeat(np.cumsum(counts) - counts, counts)
    pu = u0[tri] + local % nu[tri]
    pv = v0[tri] + local // nu[tri]

    best = np.full(height * width, np.inf)
    step = 1 << 20
    for s in range(0, tri.size, step):
        t_idx, uu, vv = tri[s:s + step], pu[s:s + step], pv[s:s + step]
        o, d = camera.rays(uu.astype(np.float64), vv.astype(np.float64))
        c = corners[t_idx]
        e1, e2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
        p = np.cross(d, e2)
        det = np.einsum("ij,ij->i", p, e1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - c[:, 0]
        a = np.einsum("ij,ij->i", tv, p) * inv
        q = np.cross(tv, e1)
        b = np.einsum("ij,ij->i", d, q) * inv
        hit = ok & (a >= -EDGE_EPS) & (b >= -EDGE_EPS) & (a + b <= 1 + EDGE_EPS)
        z = proj[t_idx, :, 2]
        # interpolating corner depths keeps planar faces exact
        zc = z[:, 0] + a * (z[:, 1] - z[:, 0]) + b * (z[:, 2] - z[:, 0])
        flat = (vv * width + uu)[hit]
        np.minimum.at(best, flat, zc[hit])
    found = np.isfinite(best)
    depth.ravel()[found] = np.minimum(best[found], bg)
    return DepthImage(depth, bg, camera)


def add_depth_noise(img: DepthImage, mean: float = 1.0, std: float = 0.01, seed: int = 0) -> DepthImage:
    """Multiplicative Gaussian noise: depth * N(mean, std)."""
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0:
        factor = np.full(img.depth.shape, float(mean))
    else:
        factor = np.random.default_rng(seed).normal(mean, std, size=img.depth.shape)
    return img.with_depth(img.depth * factor)


def rotate_with_padding(img: DepthImage, angle: float, mode: str = "adaptive_depth") -> DepthImage:
    """Rotate the image content by `angle` degrees about the image centre.

    A direction at image angle ``a`` (atan2(dv, du)) ends up at ``a + angle``.
    Depth is sampled bilinearly; pixels whose source falls outside the frame
    get the table depth (``adaptive_depth``) or 0 (``black``).
    """
    if mode not in ("adaptive_depth", "black"):
        raise ValueError(f"unknown padding mode {mode!r}")
    fill = img.background_depth if mode == "adaptive_depth" else 0.0
    if float(angle) % 360.0 == 0:
        return img
    src = source_coords(img.width, img.height, angle)
    out = sample_bilinear(img.depth, src, fill)
    return DepthImage(out, img.background_depth, img.camera.rotated(angle, img.center))


def source_coords(width: int, height: int, angle: float) -> np.ndarray:
    """(2, H, W) source (u, v) for each output pixel of a rotation by `angle`."""
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    r = _rot2(-angle)
    du, dv = uu - c[0], vv - c[1]
    su = c[0] + r[0, 0] * du + r[0, 1] * dv
    sv = c[1] + r[1, 0] * du + r[1, 1] * dv
    return np.stack([su, sv])


def sample_bilinear(arr: np.ndarray, src: np.ndarray, fill: float, tol: float = 1e-9) -> np.ndarray:
    h, w = arr.shape
    su, sv = src
    inside = (su >= -tol) & (su <= w - 1 + tol) & (sv >= -tol) & (sv <= h - 1 + tol)
    coords = np.stack([np.clip(sv, 0, h - 1), np.clip(su, 0, w - 1)])
    out = ndimage.map_coordinates(arr, coords, order=1, mode="nearest")
    return np.where(inside, out, fill)


def sample_nearest(arr: np.ndarray, src: np.ndarray, fill) -> np.ndarray:
    """Nearest-neighbour lookup for label arrays (no class mixing)."""
    h, w = arr.shape[:2]
    iu = np.floor(src[0] + 0.5).astype(np.int64)
    iv = np.floor(src[1] + 0.5).astype(np.int64)
    inside = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    out = np.full(src.shape[1:] + arr.shape[2:], fill, dtype=arr.dtype)
    out[inside] = arr[iv[inside], iu[inside]]
    return out


def crop_resize(img: DepthImage, out_size: int = OUT_SIZE) -> DepthImage:
    """Centre-crop to a square and resample bilinearly to out_size x out_size."""
    side = min(img.width, img.height)
    if side < out_size:
        raise ValueError(f"image {img.width}x{img.height} is smaller than the {out_size}px crop window")
    x0 = (img.width - side) // 2
    y0 = (img.height - side) // 2
    crop = img.depth[y0:y0 + side, x0:x0 + side]
    cam = img.camera
    if side == out_size:
        out = crop.copy()
        new_cam = replace(cam, cx=cam.cx - x0, cy=cam.cy - y0)
        return DepthImage(out, img.background_depth, new_cam)
    s = side / out_size
    grid = (np.arange(out_size) + 0.5) * s - 0.5
    vv, uu = np.meshgrid(grid, grid, indexing="ij")
    out = ndimage.map_coordinates(crop, np.stack([vv, uu]), order=1, mode="nearest")
    new_cam = replace(cam, fx=cam.fx / s, fy=cam.fy / s,
                      cx=(cam.cx - x0 + 0.5) / s - 0.5, cy=(cam.cy - y0 + 0.5) / s - 0.5,
                      pitch=cam.pitch * s)
    return DepthImage(out, img.background_depth, new_cam)


def depth_to_png_array(depth: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(depth) * DEPTH_SCALE)
    if scaled.min() < 0 or scaled.max() > np.iinfo(np.uint16).max:
        raise ValueError("depth out of range for 16-bit PNG storage")
    return scaled.astype(np.uint16)


def save_depth_png(depth, path) -> None:
    if isinstance(depth, DepthImage):
        depth = depth.depth
    Image.fromarray(depth_to_png_array(depth)).save(path, format="PNG")


def load_depth_png(path) -> np.ndarray:
    """Read a 16-bit depth PNG back to millimetres."""
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptFileError(f"cannot decode depth PNG {path}: {exc}") from exc
    if arr.ndim != 2:
        raise CorruptFileError(f"{path} is not a single-channel depth PNG")
    return arr.astype(np.float64) / DEPTH_SCALE
