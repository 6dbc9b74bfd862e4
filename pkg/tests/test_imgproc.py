from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepangio.imgproc import (ClipLimitSampler, DegenerateInputError, GeometricTransform, augment, binarize,
                               clahe, clip_histogram, gamma_shift, green_channel, otsu, otsu_threshold,
                               pca_gray, random_transform, sample_clip_limit, ssim_global, to_levels)


# -- oracles -----------------------------------------------------------------

def otsu_brute_force(levels: np.ndarray) -> int:
    """Exact rational between-class variance at every threshold; first maximum wins."""
    flat = [int(v) for v in levels.ravel()]
    n = len(flat)
    best, best_t = Fraction(-1), 0
    for t in range(256):
        lo = [v for v in flat if v <= t]
        hi = [v for v in flat if v > t]
        if not lo or not hi:
            score = Fraction(0)
        else:
            w0, w1 = Fraction(len(lo), n), Fraction(len(hi), n)
            mu0, mu1 = Fraction(sum(lo), len(lo)), Fraction(sum(hi), len(hi))
            score = w0 * w1 * (mu0 - mu1) ** 2
        if score > best:
            best, best_t = score, t
    return best_t


def clahe_scalar_reference(gray: np.ndarray, clip_limit: float) -> np.ndarray:
    """Whole-image CLAHE, one pixel and one bin at a time."""
    h, w = gray.shape
    npix = h * w
    levels = [[int(round(float(gray[i, j]) * 255)) for j in range(w)] for i in range(h)]
    hist = [0] * 256
    for row in levels:
        for v in row:
            hist[v] += 1
    limit = max(1, int(clip_limit * npix / 256))
    excess = 0
    for b in range(256):
        if hist[b] > limit:
            excess += hist[b] - limit
            hist[b] = limit
    share = excess // 256
    for b in range(256):
        hist[b] += share
    cdf, acc = [], 0
    for b in range(256):
        acc += hist[b]
        cdf.append(acc)
    cdf[255] += excess - share * 256
    return np.array([[cdf[v] / npix for v in row] for row in levels])


def ssim_direct(a, b, L=1.0):
    a = [float(v) for v in np.ravel(a)]
    b = [float(v) for v in np.ravel(b)]
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    va = sum((x - ma) ** 2 for x in a) / n
    vb = sum((y - mb) ** 2 for y in b) / n
    cab = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / n
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    return (2 * ma * mb + c1) * (2 * cab + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))


def random_level_image(rng, shape=(24, 20)):
    kind = rng.integers(4)
    if kind == 0:
        lv = rng.integers(0, 256, shape)
    elif kind == 1:  # bimodal
        lv = np.where(rng.random(shape) < rng.uniform(0.1, 0.9), rng.normal(60, 15, shape), rng.normal(180, 20, shape))
    elif kind == 2:  # few distinct levels, many ties
        lv = rng.choice(rng.integers(0, 256, 4), size=shape)
    else:  # narrow band
        lv = rng.normal(rng.uniform(30, 220), 3, shape)
    return np.clip(np.rint(lv), 0, 255) / 255.0


# -- Otsu --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    img = random_level_image(rng)
    res = otsu(img)
    assert res.level == otsu_brute_force(to_levels(img))
    assert res.threshold == pytest.approx((res.level + 0.5) / 255)


def test_otsu_two_level_image_splits_between_levels():
    img = np.array([[10, 10, 200, 200]]) / 255
    t = otsu_threshold(img)
    assert 10 / 255 < t < 200 / 255
    np.testing.assert_array_equal(binarize(img, t), [[0, 0, 1, 1]])


def test_otsu_constant_image_is_flagged():
    res = otsu(np.full((4, 4), 0.5))
    assert res.degenerate
    assert res.level == 128


def test_otsu_tie_takes_smallest_threshold():
    # symmetric histogram: levels 0 and 2 in equal count, every split between them
    # has level 1 empty, so t=0 and t=1 tie exactly
    img = np.array([0, 0, 2, 2]) / 255
    assert otsu(img).level == 0


@given(st.integers(0, 2**31 - 1))
def test_otsu_property_brute_force(seed):
    rng = np.random.default_rng(seed)
    img = random_level_image(rng, (6, 7))
    assert otsu(img).level == otsu_brute_force(to_levels(img))


# -- CLAHE -------------------------------------------------------------------

@pytest.mark.parametrize("clip", [1.0, 2.5, 5.0, 10.0])
@pytest.mark.parametrize("seed", range(3))
def test_single_tile_clahe_matches_scalar_reference(seed, clip):
    rng = np.random.default_rng(seed)
    img = random_level_image(rng, (20, 17))
    out = clahe(img, clip, tiles=(1, 1))
    np.testing.assert_allclose(out, clahe_scalar_reference(img, clip), atol=1 / 255)


def test_clip_histogram_conserves_pixels():
    hist = np.zeros(256, dtype=int)
    hist[10] = 900
    hist[20] = 100
    cdf = clip_histogram(hist, 2.0)
    assert cdf[-1] == 1000
    assert np.all(np.diff(cdf) >= 0)


def test_clahe_output_range_and_determinism(rng):
    img = rng.random((3, 40, 48)).astype(np.float32)
    a = clahe(img, 5.0)
    b = clahe(img, 5.0)
    assert a.shape == img.shape and a.dtype == img.dtype
    assert a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, b)


def test_clahe_higher_clip_more_contrast():
    yy, xx = np.mgrid[0:64, 0:64]
    img = 0.45 + 0.1 * (xx / 63.0) + 0.02 * np.sin(yy / 3.0)
    low = clahe(img, 1.0)
    high = clahe(img, 10.0)
    assert high.std() > low.std()


def test_clahe_parameter_errors():
    with pytest.raises(ValueError):
        clahe(np.zeros((4, 4)), 2.0, tiles=(8, 8))
    with pytest.raises(ValueError):
        clahe(np.zeros((16, 16)), 0.5)


def test_clip_sampler_clamps(rng):
    s = ClipLimitSampler(mean=5.0, std=100.0)
    draws = [sample_clip_limit(s, rng) for _ in range(200)]
    assert min(draws) == 1.0 and max(draws) == 10.0
    assert ClipLimitSampler().clamp(0.2) == 1.0


# -- SSIM --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_ssim_identities(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 16, 16))
    assert abs(ssim_global(a, a) - 1.0) <= 1e-9
    assert abs(ssim_global(a, b) - ssim_global(b, a)) <= 1e-9
    assert ssim_global(a, b) <= 1.0 + 1e-9
    assert ssim_global(a, b) == pytest.approx(ssim_direct(a, b), rel=1e-12)


def test_ssim_of_complementary_binary_image():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    # mu = 0.5 both, var 0.25 both, cov -0.25
    c1, c2 = 1e-4, 9e-4
    expected = (0.5 + c1) * (-0.5 + c2) / ((0.5 + c1) * (0.5 + c2))
    assert ssim_global(a, 1 - a) == pytest.approx(expected, rel=1e-12)
    assert expected < 0


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim_global(np.zeros((2, 2)), np.zeros((2, 3)))


finite = st.floats(-5, 5, allow_nan=False)


@given(arrays(np.float64, (5, 4), elements=finite), arrays(np.float64, (5, 4), elements=finite))
def test_ssim_bounded(a, b):
    s = ssim_global(a, b)
    assert -1 - 1e-9 <= s <= 1 + 1e-9


# -- grayscale reductions ----------------------------------------------------

def test_green_channel_copies(rng):
    img = rng.random((3, 5, 5))
    g = green_channel(img)
    np.testing.assert_array_equal(g, img[1])
    g[0, 0] = -1
    assert img[1, 0, 0] != -1


def test_pca_matches_eigh_direction(rng):
    base = rng.random((6, 7))
    img = np.stack([0.8 * base, 1.0 * base, 0.3 * base]) + rng.normal(0, 0.01, (3, 6, 7))
    pix = img.reshape(3, -1)
    cov = np.cov(pix, bias=True)
    vec = np.linalg.eigh(cov)[1][:, -1]
    vec = vec if vec[1] >= 0 else -vec
    proj = vec @ (pix - pix.mean(axis=1, keepdims=True))
    expected = (proj - proj.min()) / (proj.max() - proj.min())
    np.testing.assert_allclose(pca_gray(img).ravel(), expected, atol=1e-5)


@given(st.integers(0, 2**31 - 1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_pca_invariant_to_channel_shifts(seed, s0, s1, s2):
    rng = np.random.default_rng(seed)
    img = rng.random((3, 8, 8))
    shifted = img + np.array([s0, s1, s2])[:, None, None]
    np.testing.assert_allclose(pca_gray(img), pca_gray(shifted), atol=1e-4)


def test_pca_green_sign_convention():
    ramp = np.linspace(0, 1, 16).reshape(4, 4)
    img = np.stack([ramp, ramp, ramp])
    out = pca_gray(img)
    # green increases along the ramp, so does the projection
    assert out[0, 0] == 0 and out[-1, -1] == 1


def test_pca_constant_image_raises():
    with pytest.raises(DegenerateInputError):
        pca_gray(np.full((3, 4, 4), 0.3))


# -- augmentation ------------------------------------------------------------

def test_rotation_is_clockwise():
    a = np.array([[1, 2], [3, 4]])
    np.testing.assert_array_equal(GeometricTransform(1).apply(a), [[3, 1], [4, 2]])


@given(st.integers(0, 2**31 - 1))
def test_augment_keeps_pairs_aligned(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((3, 6, 5))
    # encode pixel identity in the label so misalignment is detectable
    label = img[1].copy()
    fov = img[2].copy()
    a, l, f = augment(img, label, fov, rng)
    np.testing.assert_array_equal(a[1], l)
    np.testing.assert_array_equal(a[2], f)


@given(st.integers(0, 2**31 - 1))
def test_transform_preserves_pixel_multiset(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((4, 4))
    out = random_transform(rng).apply(img)
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(img.ravel()))


def test_gamma_shift_endpoints():
    img = np.array([0.0, 0.25, 1.0], dtype=np.float32)
    out = gamma_shift(img, 0.5)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
