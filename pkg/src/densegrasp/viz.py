"""Overlay images: affordance classes or a grasp drawn over a grey depth image."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .label_gen import NEGATIVE, POSITIVE

CLASS_COLORS = {NEGATIVE: (255, 0, 0), POSITIVE: (0, 255, 0)}


def depth_to_gray(depth: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8, near surfaces bright. A flat image maps to mid grey."""
    d = np.asarray(depth, dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if hi - lo < 1e-9:
        g = np.full(d.shape, 128, dtype=np.uint8)
    else:
        g = np.round(255.0 * (hi - d) / (hi - lo)).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=2)


def overlay_classes(depth: np.ndarray, classes: np.ndarray, alpha: float = 0.6) -> np.ndarray:
    """Blend class colours over labelled pixels; background pixels keep the plain depth."""
    gray = depth_to_gray(depth)
    if classes.shape != gray.shape[:2]:
        raise ValueError(f"label map {classes.shape} does not match depth {gray.shape[:2]}")
    out = gray.astype(np.float64)
    for cls, color in CLASS_COLORS.items():
        m = classes == cls
        out[m] = (1 - alpha) * out[m] + alpha * np.asarray(color, dtype=np.float64)
    return np.round(out).astype(np.uint8)


def draw_grasp(rgb: np.ndarray, grasp: dict, color=(255, 200, 0)) -> np.ndarray:
    """Draw the jaw line between the contact pixels and a dot at the centre."""
    img = Image.fromarray(rgb)
    draw = ImageDraw.Draw(img)
    c = grasp.get("center_px")
    p1, p2 = grasp.get("contact_px1"), grasp.get("contact_px2")
    if p1 is None or p2 is None:
        a = np.deg2rad(grasp.get("theta_refined", 0.0))
        d = 10.0 * np.array([np.cos(a), np.sin(a)])
        p1, p2 = np.asarray(c) - d, np.asarray(c) + d
    draw.line([tuple(map(float, p1)), tuple(map(float, p2))], fill=color, width=2)
    if c is not None:
        draw.ellipse([c[0] - 2, c[1] - 2, c[0] + 2, c[1] + 2], fill=color)
    return np.asarray(img)


def save_rgb(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)
    return path
