"""Orientation bins, Gaussian label augmentation and affordance maps.

Class indices double as RGB channels of the stored label PNG:
negative = red, positive = green, background = blue.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .depth_render import DepthImage, rotate_with_padding, sample_nearest, source_coords
from .grasp_quality import normalize_with_range

NEGATIVE, POSITIVE, BACKGROUND = 0, 1, 2
N_BINS = 16
BIN_WIDTH = 360.0 / N_BINS


@dataclass(frozen=True)
class OrientationBin:
    index: int

    def __post_init__(self):
        if not 0 <= int(self.index) < N_BINS:
            raise ValueError(f"bin index must be in 0..{N_BINS - 1}")
        object.__setattr__(self, "index", int(self.index))

    @property
    def rotation_angle(self) -> float:
        return self.index * BIN_WIDTH

    @property
    def opposite(self) -> "OrientationBin":
        return OrientationBin((self.index + N_BINS // 2) % N_BINS)


def quantize_orientation(theta: float) -> OrientationBin:
    """Nearest of the 16 bin angles; exact midpoints go to the lower bin."""
    theta = float(theta)
    if not 0.0 <= theta < 360.0:
        raise ValueError(f"theta must be in [0, 360), got {theta}")
    return OrientationBin(int(np.ceil(theta / BIN_WIDTH - 0.5)) % N_BINS)


def rotate_to_bin(depth: DepthImage, bin: OrientationBin) -> DepthImage:
    """Rotate so that grasps of `bin` lie along the image x-axis."""
    return rotate_with_padding(depth, -bin.rotation_angle, "adaptive_depth")


def median_threshold(qualities) -> float:
    q = np.asarray(qualities, dtype=np.float64)
    if q.size == 0:
        raise ValueError("median of an empty list")
    return float(np.median(q))


@dataclass(frozen=True)
class LabelingConfig:
    """Label placement settings.

    `theta_q` is the median-quality threshold computed over the grasp
    database, and `quality_range` the (min, max) raw epsilon used to
    normalize qualities; both are filled in by the generator.
    """

    theta_q: float = None
    sigma: float = 2.0
    augmentation_enabled: bool = True
    sigma_mode: str = "literal"
    quality_range: tuple = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.sigma_mode not in ("literal", "normalized"):
            raise ValueError("sigma_mode must be 'literal' or 'normalized'")
        if self.quality_range is not None:
            object.__setattr__(self, "quality_range", tuple(float(x) for x in self.quality_range))

    def to_dict(self) -> dict:
        return {"theta_q": self.theta_q, "sigma": self.sigma, "augmentation_enabled": self.augmentation_enabled,
                "sigma_mode": self.sigma_mode,
                "quality_range": None if self.quality_range is None else list(self.quality_range)}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelingConfig":
        return cls(**data)

    def normalized(self, raw_quality: float) -> float:
        if self.quality_range is None:
            return float(raw_quality)
        return float(normalize_with_range(raw_quality, *self.quality_range))


@dataclass(frozen=True)
class AugmentedLabel:
    pixel: tuple  # (u, v) integer column, row
    quality: float
    center: tuple  # projected grasp centre g (sub-pixel)
    source_quality: float


def augment_segment(c1, c2, g, q0: float, sigma: float = 2.0) -> list:
    """Labels on integer pixels strictly between c1 and c2 (image coordinates).

    Pixels are visited along the dominant axis; each gets
    q = exp(-(s / sigma)^2) * q0 with s the signed distance from g along
    the segment. A segment with no interior pixel yields one label at g.
    """
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    delta = c2 - c1
    length = float(np.hypot(*delta))
    labels = []
    if length > 1e-12:
        major = int(np.argmax(np.abs(delta)))
        minor = 1 - major
        lo, hi = sorted((c1[major], c2[major]))
        start, stop = int(np.floor(lo)) + 1, int(np.ceil(hi)) - 1
        direction = delta / length
        for m in range(start, stop + 1):
            t = (m - c1[major]) / delta[major]
            px = np.empty(2, dtype=np.int64)
            px[major] = m
            px[minor] = int(np.floor(c1[minor] + t * delta[minor] + 0.5))
            s = float((px - g) @ direction)
            q = float(np.exp(-(s / sigma) ** 2) * q0)
            labels.append(AugmentedLabel((int(px[0]), int(px[1])), q, (float(g[0]), float(g[1])), float(q0)))
    if not labels:
        px = tuple(int(np.floor(x + 0.5)) for x in g)
        labels.append(AugmentedLabel(px, float(q0), (float(g[0]), float(g[1])), float(q0)))
    return labels


def project_grasp(grasp, camera):
    """Pixel positions of (contact1, contact2, centre) under `camera`."""
    pts = camera.project(np.stack([grasp.contact1, grasp.contact2, grasp.center]))
    return pts[0, :2], pts[1, :2], pts[2, :2]


def augment_grasp(grasp, camera, sigma: float = 2.0, sigma_mode: str = "literal", quality: float = None) -> list:
    """Spread one grasp's quality over the pixels between its projected contacts.

    Args:
        quality: the centre quality to spread; defaults to ``grasp.quality``.
        sigma_mode: ``literal`` uses `sigma` pixels; ``normalized`` uses a
            quarter of the projected contact distance.
    """
    c1, c2, g = project_grasp(grasp, camera)
    q0 = grasp.quality if quality is None else quality
    if sigma_mode == "normalized":
        sigma = max(float(np.hypot(*(c2 - c1))) / 4.0, 1e-6)
    return augment_segment(c1, c2, g, q0, sigma)


def center_label(grasp, camera, quality: float = None) -> AugmentedLabel:
    _, _, g = project_grasp(grasp, camera)
    q0 = grasp.quality if quality is None else quality
    px = tuple(int(np.floor(x + 0.5)) for x in g)
    return AugmentedLabel(px, float(q0), (float(g[0]), float(g[1])), float(q0))


@dataclass(frozen=True, eq=False)
class AffordanceMap:
    """Per-pixel classes for one orientation bin.

    `quality` holds the winning label quality per pixel (NaN on background);
    `probs` optionally carries (H, W, 3) class scores from a predictor.
    """

    classes: np.ndarray
    bin: OrientationBin
    quality: np.ndarray = None
    probs: np.ndarray = None
    labels: tuple = field(default=(), repr=False)

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    def counts(self) -> np.ndarray:
        return class_counts(self.classes)

    def positive_score(self) -> np.ndarray:
        """Score used to rank pixels: predicted positive probability, else label quality."""
        if self.probs is not None:
            return np.asarray(self.probs)[..., POSITIVE]
        score = np.where(self.classes == POSITIVE, 1.0, 0.0)
        if self.quality is not None:
            score = np.where(self.classes == POSITIVE, np.nan_to_num(self.quality, nan=0.0), 0.0)
        return score


def class_counts(classes) -> np.ndarray:
    return np.bincount(np.asarray(classes, dtype=np.int64).ravel(), minlength=3)[:3]


def rasterize_labels(labels, width: int, height: int, theta_q: float):
    """Classes and per-pixel quality from a label list (max quality wins)."""
    quality = np.full((height, width), -np.inf)
    for lab in labels:
        u, v = lab.pixel
        if 0 <= u < width and 0 <= v < height and lab.quality > quality[v, u]:
            quality[v, u] = lab.quality
    touched = np.isfinite(quality)
    classes = np.full((height, width), BACKGROUND, dtype=np.uint8)
    classes[touched & (quality > theta_q)] = POSITIVE
    classes[touched & ~(quality > theta_q)] = NEGATIVE
    return classes, np.where(touched, quality, np.nan)


def build_affordance_map(depth: DepthImage, grasps, bin: OrientationBin, config: LabelingConfig,
                         rotated: DepthImage = None) -> AffordanceMap:
    """Label map of `bin` in the frame of the bin-rotated depth image.

    Positive iff a label's (normalized, possibly augmented) quality is
    strictly above ``config.theta_q``.
    """
    if config.theta_q is None:
        raise ValueError("LabelingConfig.theta_q must be set before building maps")
    for g in grasps:
        if quantize_orientation(g.theta).index != bin.index:
            raise ValueError(f"grasp with theta {g.theta:.3f} does not belong to bin {bin.index}")
    rotated = rotate_to_bin(depth, bin) if rotated is None else rotated
    cam = rotated.camera
    labels = []
    for g in grasps:
        q0 = config.normalized(g.quality)
        if config.augmentation_enabled:
            labels.extend(augment_grasp(g, cam, config.sigma, config.sigma_mode, q0))
        else:
            labels.append(center_label(g, cam, q0))
    classes, quality = rasterize_labels(labels, rotated.width, rotated.height, config.theta_q)
    return AffordanceMap(classes, bin, quality, labels=tuple(labels))


def rotate_label_map(classes: np.ndarray, angle: float) -> np.ndarray:
    """Rotate a class map with nearest-neighbour lookup; exposed pixels are background."""
    h, w = classes.shape
    return sample_nearest(np.asarray(classes), source_coords(w, h, angle), BACKGROUND)


def classes_to_rgb(classes: np.ndarray) -> np.ndarray:
    rgb = np.zeros(classes.shape + (3,), dtype=np.uint8)
    for k in range(3):
        rgb[..., k][classes == k] = 255
    return rgb


def rgb_to_classes(rgb: np.ndarray) -> np.ndarray:
    """Inverse of classes_to_rgb; raises ValueError unless one channel is saturated per pixel."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError("label image must have 3 channels")
    on = rgb[..., :3] == 255
    off = rgb[..., :3] == 0
    if not np.all(on.sum(axis=2) == 1) or not np.all(on | off):
        raise ValueError("label image pixels must have exactly one saturated channel")
    return np.argmax(on, axis=2).astype(np.uint8)


def with_probs(amap: AffordanceMap, probs) -> AffordanceMap:
    return replace(amap, probs=np.asarray(probs, dtype=np.float64))
