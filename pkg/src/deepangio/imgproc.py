"""Classical image operations on float images in [0, 1].

Color images are planar ``(3, H, W)`` arrays, grayscale images are ``(H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NBINS = 256
SSIM_K1, SSIM_K2 = 0.01, 0.03


class DegenerateInputError(ValueError):
    pass


def to_levels(img: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to integer levels 0..255 (same rounding as 8-bit I/O)."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.intp)


# -- CLAHE -------------------------------------------------------------------

def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.linspace(0, n, tiles + 1).round().astype(int)


def clip_histogram(hist: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clip bins at ``clip_limit`` times the uniform bin height and return the CDF.

    Excess counts are spread evenly over all bins in a single pass; the
    remainder that does not divide evenly is added to the last CDF entry, so
    the CDF always ends at the pixel count.
    """
    npix = int(hist.sum())
    limit = max(1, int(clip_limit * npix / NBINS))
    excess = int(np.maximum(hist - limit, 0).sum())
    clipped = np.minimum(hist, limit) + excess // NBINS
    cdf = np.cumsum(clipped)
    cdf[-1] += excess - (excess // NBINS) * NBINS
    return cdf


def _tile_maps(levels: np.ndarray, clip_limit: float, ty: int, tx: int):
    h, w = levels.shape
    ye, xe = _tile_edges(h, ty), _tile_edges(w, tx)
    maps = np.empty((ty, tx, NBINS))
    for i in range(ty):
        for j in range(tx):
            tile = levels[ye[i]:ye[i + 1], xe[j]:xe[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=NBINS)
            maps[i, j] = clip_histogram(hist, clip_limit) / tile.size
    return maps, (ye[:-1] + ye[1:]) / 2 - 0.5, (xe[:-1] + xe[1:]) / 2 - 0.5


def _interp_index(n: int, centers: np.ndarray):
    pos = np.arange(n, dtype=np.float64)
    i0 = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 1)
    i1 = np.minimum(i0 + 1, len(centers) - 1)
    span = centers[i1] - centers[i0]
    wgt = np.where(span > 0, (pos - centers[i0]) / np.where(span > 0, span, 1), 0.0)
    return i0, i1, np.clip(wgt, 0.0, 1.0)


def clahe_channel(gray: np.ndarray, clip_limit: float, tiles=(8, 8)) -> np.ndarray:
    ty, tx = tiles
    h, w = gray.shape
    if h < ty or w < tx:
        raise ValueError(f"clahe: image {h}x{w} smaller than tile grid {ty}x{tx}")
    if clip_limit < 1:
        raise ValueError(f"clahe: clip limit must be >= 1, got {clip_limit}")
    levels = to_levels(gray)
    maps, cy, cx = _tile_maps(levels, clip_limit, ty, tx)
    y0, y1, wy = _interp_index(h, cy)
    x0, x1, wx = _interp_index(w, cx)
    wy, wx = wy[:, None], wx[None, :]
    r0, r1 = y0[:, None], y1[:, None]
    c0, c1 = x0[None, :], x1[None, :]
    out = ((1 - wy) * ((1 - wx) * maps[r0, c0, levels] + wx * maps[r0, c1, levels])
           + wy * ((1 - wx) * maps[r1, c0, levels] + wx * maps[r1, c1, levels]))
    return np.clip(out, 0.0, 1.0)


def clahe(img: np.ndarray, clip_limit: float, tiles=(8, 8)) -> np.ndarray:
    """Contrast limited adaptive histogram equalization applied to every channel."""
    img = np.asarray(img)
    if img.ndim == 2:
        return clahe_channel(img, clip_limit, tiles).astype(img.dtype, copy=False)
    return np.stack([clahe_channel(ch, clip_limit, tiles) for ch in img]).astype(img.dtype, copy=False)


@dataclass
class ClipLimitSampler:
    mean: float = 5.0
    std: float = 1.0
    clamp_range: tuple = (1.0, 10.0)

    def clamp(self, value: float) -> float:
        lo, hi = self.clamp_range
        return float(min(max(value, lo), hi))

    def sample(self, rng: np.random.Generator) -> float:
        return self.clamp(rng.normal(self.mean, self.std))


def sample_clip_limit(sampler: ClipLimitSampler, rng: np.random.Generator) -> float:
    return sampler.sample(rng)


# -- Otsu --------------------------------------------------------------------

@dataclass(frozen=True)
class OtsuResult:
    threshold: float
    level: int
    degenerate: bool


def between_class_variance(hist: np.ndarray) -> np.ndarray:
    """w0*w1*(mu0-mu1)^2 for every split ``level <= t`` vs ``level > t``.

    Evaluated as (n1*s0 - n0*s1)^2 / (N^2 n0 n1) from integer class counts and
    level sums, so equal splits give bit-equal scores.
    """
    hist = np.asarray(hist, dtype=np.float64)
    n0 = np.cumsum(hist)
    s0 = np.cumsum(hist * np.arange(len(hist)))
    total, stotal = n0[-1], s0[-1]
    n1, s1 = total - n0, stotal - s0
    num = (n1 * s0 - n0 * s1) ** 2
    den = total * total * n0 * n1
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def otsu(gray: np.ndarray) -> OtsuResult:
    levels = to_levels(gray)
    hist = np.bincount(levels.ravel(), minlength=NBINS).astype(np.float64)
    var = between_class_variance(hist)
    if not np.any(var > 0):
        level = int(levels.ravel()[0])
        return OtsuResult(min((level + 0.5) / 255, 1.0), level, True)
    level = int(np.argmax(var))
    return OtsuResult(min((level + 0.5) / 255, 1.0), level, False)


def otsu_threshold(gray: np.ndarray) -> float:
    """Otsu threshold as the upper edge of the last background bin, in [0, 1]."""
    return otsu(gray).threshold


def binarize(gray: np.ndarray, t: float) -> np.ndarray:
    return (np.asarray(gray) > t).astype(np.float32)


# -- grayscale reductions ----------------------------------------------------

def green_channel(rgb: np.ndarray) -> np.ndarray:
    return np.array(rgb[1], copy=True)


def _power_iteration(cov: np.ndarray, iters: int = 100, tol: float = 1e-10) -> np.ndarray:
    # start from the covariance column of the highest-variance channel
    v = cov[:, int(np.argmax(np.diag(cov)))].copy()
    v /= np.linalg.norm(v)
    for _ in range(iters):
        nv = cov @ v
        nv /= np.linalg.norm(nv)
        done = np.linalg.norm(nv - v) < tol
        v = nv
        if done:
            break
    return v


def pca_gray(rgb: np.ndarray) -> np.ndarray:
    """Project pixels onto the principal color axis and min-max normalize."""
    rgb = np.asarray(rgb, dtype=np.float64)
    pix = rgb.reshape(rgb.shape[0], -1)
    centered = pix - pix.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / pix.shape[1]
    if not np.any(cov):
        raise DegenerateInputError("pca_gray: constant image has no principal component")
    v = _power_iteration(cov)
    if v[1] < 0:
        v = -v
    proj = v @ centered
    lo, hi = proj.min(), proj.max()
    if hi - lo <= 0:
        raise DegenerateInputError("pca_gray: projection is constant")
    return ((proj - lo) / (hi - lo)).reshape(rgb.shape[1:]).astype(np.float32)


# -- SSIM --------------------------------------------------------------------

def ssim_global(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """SSIM computed from whole-image means, variances and covariance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim_global: shape mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("ssim_global: need at least 2 pixels")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    ma, mb = a.mean(), b.mean()
    da, db = a - ma, b - mb
    va, vb, cab = (da * da).mean(), (db * db).mean(), (da * db).mean()
    return float((2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))


# -- geometric augmentation --------------------------------------------------

@dataclass(frozen=True)
class GeometricTransform:
    rotations: int = 0  # clockwise quarter turns
    flip_h: bool = False
    flip_v: bool = False

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = np.rot90(arr, k=-self.rotations, axes=(-2, -1))
        if self.flip_h:
            out = out[..., ::-1]
        if self.flip_v:
            out = out[..., ::-1, :]
        return np.ascontiguousarray(out)


def random_transform(rng: np.random.Generator) -> GeometricTransform:
    k, fh, fv = rng.integers(0, 4), rng.integers(0, 2), rng.integers(0, 2)
    return GeometricTransform(int(k), bool(fh), bool(fv))


def augment(img: np.ndarray, label: np.ndarray, fov: np.ndarray, rng: np.random.Generator):
    """Apply one random rotation/flip identically to image, label and FOV."""
    t = random_transform(rng)
    return t.apply(img), t.apply(label), t.apply(fov)


def gamma_shift(img: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(np.clip(img, 0.0, 1.0), gamma).astype(np.asarray(img).dtype, copy=False)
