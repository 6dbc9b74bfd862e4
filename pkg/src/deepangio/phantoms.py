"""Synthetic fundus-like phantoms with exact vessel ground truth.

Each phantom is a smooth, radially vignetted orange background with dark
random-walk strokes (the vessels, dimmest in green) and elliptical bright or
dark blobs standing in for drusen and hemorrhages. Only the strokes enter the
label.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import write_image

# relative darkening of (r, g, b) inside a vessel
VESSEL_DIP = np.array([0.35, 1.0, 0.6])
BASE_COLOR = np.array([0.78, 0.42, 0.20])


@dataclass
class PhantomParams:
    count: int = 16
    size: int = 64
    strokes: tuple = (2, 12)
    # strokes are added until the vessel fraction reaches a target drawn from
    # this range; a stroke that would push it past max_fraction is dropped
    vessel_fraction: tuple = (0.05, 0.15)
    max_fraction: float = 0.18
    width: tuple = (1.0, 4.0)
    contrast: tuple = (0.35, 0.6)
    illumination: float = 0.45
    noise_std: float = 0.02
    blobs: tuple = (1, 4)
    blob_radius: tuple = (2.0, 6.0)
    seed: int = 0


def _segment_distance(yy, xx, p0, p1) -> np.ndarray:
    d = p1 - p0
    L2 = float(d @ d)
    if L2 == 0:
        return np.hypot(yy - p0[0], xx - p0[1])
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _random_walk(rng, size: int) -> np.ndarray:
    # enter from a random border point heading inward
    side = rng.integers(4)
    s = rng.uniform(0, size - 1)
    start = [(0.0, s), (size - 1.0, s), (s, 0.0), (s, size - 1.0)][side]
    heading = [np.pi / 2, -np.pi / 2, 0.0, np.pi][side] + rng.normal(0, 0.5)
    step = size / 10
    pts = [np.array(start)]
    for _ in range(int(rng.integers(6, 14))):
        heading += rng.normal(0, 0.35)
        nxt = pts[-1] + step * np.array([np.sin(heading), np.cos(heading)])
        pts.append(nxt)
        if not (-step <= nxt[0] <= size + step and -step <= nxt[1] <= size + step):
            break
    return np.array(pts)


def render_phantom(params: PhantomParams, index: int):
    """Render phantom ``index``; returns ``(rgb (3,S,S), label (S,S), blob_mask (S,S))``."""
    rng = np.random.default_rng([params.seed, index])
    n = params.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)

    cy, cx = rng.uniform(0.3, 0.7, 2) * n
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (0.5 * n) ** 2
    illum = np.clip(1 - params.illumination * rng.uniform(0.6, 1.0) * r2, 0.15, 1.0)
    tilt = 1 + 0.15 * rng.uniform(-1, 1) * (xx / n - 0.5) + 0.15 * rng.uniform(-1, 1) * (yy / n - 0.5)
    color = BASE_COLOR * rng.uniform(0.85, 1.15, 3)
    rgb = color[:, None, None] * (illum * tilt)[None]

    blob_mask = np.zeros((n, n), dtype=bool)
    for _ in range(int(rng.integers(params.blobs[0], params.blobs[1] + 1))):
        by, bx = rng.uniform(0, n, 2)
        ry, rx = rng.uniform(*params.blob_radius, 2)
        ang = rng.uniform(0, np.pi)
        dy, dx = yy - by, xx - bx
        u = dy * np.cos(ang) + dx * np.sin(ang)
        v = -dy * np.sin(ang) + dx * np.cos(ang)
        inside = (u / ry) ** 2 + (v / rx) ** 2 <= 1
        blob_mask |= inside
        if rng.random() < 0.5:  # drusen-like: bright yellow
            rgb = np.where(inside[None], np.minimum(rgb + np.array([0.2, 0.25, 0.08])[:, None, None], 1), rgb)
        else:  # hemorrhage-like: darker than vessels in green
            rgb = np.where(inside[None], rgb * np.array([0.55, 0.25, 0.4])[:, None, None], rgb)

    label = np.zeros((n, n), dtype=bool)
    target = rng.uniform(*params.vessel_fraction)
    for k in range(params.strokes[1]):
        if k >= params.strokes[0] and label.mean() >= target:
            break
        pts = _random_walk(rng, n)
        dist = np.full((n, n), np.inf)
        for p0, p1 in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(yy, xx, p0, p1))
        width = rng.uniform(*params.width)
        depth = rng.uniform(*params.contrast) * (0.7 + 0.3 * (width - 1) / 3)
        stroke = dist <= width / 2
        if (label | stroke).mean() > params.max_fraction:
            continue
        label |= stroke
        # anti-aliased coverage, so the label edge sits at the half-intensity contour
        cover = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
        rgb = rgb * (1 - depth * VESSEL_DIP[:, None, None] * cover[None])

    rgb = rgb + rng.normal(0, params.noise_std, rgb.shape)
    return np.clip(rgb, 0, 1).astype(np.float32), label.astype(np.float32), blob_mask & ~label


def generate_phantoms(params: PhantomParams) -> list:
    """``params.count`` phantoms as ``(rgb, label)`` pairs; a pure function of ``params``."""
    return [render_phantom(params, i)[:2] for i in range(params.count)]


def write_phantom_dataset(out_dir, params: PhantomParams, test_fraction: float = 0.25) -> Path:
    """Write ``img_####.png`` / ``lbl_####.png`` plus ``manifest.csv``; the last
    ``test_fraction`` of the phantoms are tagged ``target``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_test = int(round(params.count * test_fraction))
    lines = []
    for i, (rgb, label) in enumerate(generate_phantoms(params)):
        img_name, lbl_name = f"img_{i:04d}.png", f"lbl_{i:04d}.png"
        write_image(out / img_name, rgb)
        write_image(out / lbl_name, label)
        tag = "target" if i >= params.count - n_test else "source"
        lines.append(f"ph{i:04d},{img_name},{lbl_name},PHANTOM,{tag}")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
