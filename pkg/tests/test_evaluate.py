import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepangio import tensor as T
from deepangio.evaluate import (METRIC_COLUMNS, SegmentationWarning, confusion, evaluate_samples,
                                infer_angiogram, metrics_from_confusion, read_metrics_csv, segment, summarize,
                                write_metrics_csv, write_summary_csv)
from deepangio.imgproc import binarize, otsu_threshold
from deepangio.nets import build_encoder, build_segmenter, encoder_config


def test_four_pixel_confusion():
    c = confusion(np.array([1, 0, 1, 0]), np.array([1, 1, 0, 0]))
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)
    m = metrics_from_confusion(c)
    assert m == {"dice": 0.5, "accuracy": 0.5, "sensitivity": 0.5, "specificity": 0.5}


def test_perfect_and_empty_predictions():
    label = np.array([[1, 0], [0, 1]])
    assert all(v == 1 for v in metrics_from_confusion(confusion(label, label)).values())
    m = metrics_from_confusion(confusion(np.zeros_like(label), label))
    assert m["sensitivity"] == 0 and m["specificity"] == 1 and m["dice"] == 0


def test_undefined_metrics_are_nan_not_zero():
    m = metrics_from_confusion(confusion(np.zeros(4), np.zeros(4)))
    assert math.isnan(m["dice"]) and math.isnan(m["sensitivity"])
    assert m["specificity"] == 1.0


@given(st.integers(0, 2**31 - 1))
def test_dice_is_harmonic_mean_of_sensitivity_and_precision(seed):
    rng = np.random.default_rng(seed)
    pred, label = rng.random((2, 10, 10)) > rng.uniform(0.2, 0.8, 2)[:, None, None]
    c = confusion(pred, label)
    m = metrics_from_confusion(c)
    if c.tp == 0:
        return
    prec = c.tp / (c.tp + c.fp)
    assert m["dice"] == pytest.approx(2 * m["sensitivity"] * prec / (m["sensitivity"] + prec))


@given(st.integers(0, 2**31 - 1))
def test_pixels_outside_fov_do_not_matter(seed):
    rng = np.random.default_rng(seed)
    pred, label = rng.random((2, 8, 8)) > 0.5
    fov = rng.random((8, 8)) > 0.3
    flipped = pred.copy()
    flipped[~fov] = ~flipped[~fov]
    assert confusion(pred, label, fov) == confusion(flipped, label, fov)


@pytest.fixture(scope="module")
def tiny_encoder():
    return build_encoder(encoder_config(base_channels=4, depth=2), seed=0)


@pytest.mark.parametrize("h,w", [(16, 16), (13, 19)])
def test_angiogram_dims_match_input(tiny_encoder, h, w):
    img = np.random.default_rng(0).random((3, h, w)).astype(np.float32)
    a = infer_angiogram(tiny_encoder, img)
    assert a.shape == (h, w) and 0 <= a.min() and a.max() <= 1
    np.testing.assert_array_equal(a, infer_angiogram(tiny_encoder, img))


def test_segment_is_otsu_of_angiogram(tiny_encoder):
    img = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
    mask, thr = segment(tiny_encoder, img)
    a = infer_angiogram(tiny_encoder, img)
    assert thr == otsu_threshold(a)
    np.testing.assert_array_equal(mask, binarize(a, thr))
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_segment_degenerate_warns(monkeypatch, tiny_encoder):
    import deepangio.evaluate as ev

    monkeypatch.setattr(ev, "infer_angiogram", lambda enc, img: np.full(img.shape[1:], 0.3))
    with pytest.warns(SegmentationWarning):
        mask, _ = ev.segment(tiny_encoder, np.zeros((3, 8, 8)))
    assert mask.sum() == 0


def test_inference_leaves_no_graph(tiny_encoder):
    assert T.grad_enabled()
    infer_angiogram(tiny_encoder, np.zeros((3, 16, 16), dtype=np.float32))
    assert all(p.grad is None for p in tiny_encoder.parameters())


def test_three_methods_three_rows_per_image(tiny_encoder, tmp_path):
    rng = np.random.default_rng(2)
    seg = build_segmenter(encoder_config(in_channels=1, base_channels=4, depth=2), seed=0)
    models = {"angiogram": tiny_encoder, "green-unet": seg, "pca-unet": seg}
    samples = [("PHANTOM", f"i{k}", rng.random((3, 16, 16)).astype(np.float32),
                (rng.random((16, 16)) > 0.8).astype(np.float32), np.ones((16, 16))) for k in range(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SegmentationWarning)
        rows = evaluate_samples(samples, models)
    assert len(rows) == 6
    assert [r.method for r in rows[:3]] == ["angiogram", "green-unet", "pca-unet"]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    assert path.read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
    back = read_metrics_csv(path)
    assert [(r.image_id, r.method) for r in back] == [(r.image_id, r.method) for r in rows]
    summary = summarize(rows)
    assert len(summary) == 3 * 4
    write_summary_csv(tmp_path / "s.csv", summary)


def test_unknown_method_rejected(tiny_encoder):
    with pytest.raises(ValueError):
        evaluate_samples([], {"frangi": tiny_encoder})


def test_summary_quartiles():
    from deepangio.evaluate import MetricRow

    rows = [MetricRow("D", str(i), "angiogram", d, 1.0, 1.0, 1.0, 0.5) for i, d in enumerate([0.1, 0.2, 0.3, 0.4, 0.5])]
    row = next(r for r in summarize(rows) if r[2] == "dice")
    assert row[3:] == [5, pytest.approx(0.3), pytest.approx(0.2), pytest.approx(0.4), 0.1, 0.5]
