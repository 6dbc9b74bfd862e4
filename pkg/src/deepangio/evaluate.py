"""Angiogram inference, Otsu segmentation, baselines and per-image metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import astuple, dataclass

import numpy as np

from . import tensor as T
from .data import load_sample
from .imgproc import binarize, otsu
from .nets import Network
from .train import PREPROCESS

METRIC_COLUMNS = ["dataset", "image_id", "method", "dice", "accuracy", "sensitivity", "specificity", "threshold"]
METHODS = ("angiogram", "green-unet", "pca-unet")
BASELINE_THRESHOLD = 0.5
METRICS = ("dice", "accuracy", "sensitivity", "specificity")


class SegmentationWarning(UserWarning):
    pass


def _run(net: Network, img: np.ndarray) -> np.ndarray:
    """Forward one (C,H,W) image, reflect-padding to the net's size multiple and cropping back."""
    mult = net.config.multiple
    _, h, w = img.shape
    ph, pw = -h % mult, -w % mult
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") if ph or pw else img
    with T.no_grad():
        out = net(T.Tensor(padded[None]))
    return out.data[0, 0, :h, :w].copy()


def infer_angiogram(encoder: Network, img: np.ndarray) -> np.ndarray:
    """Latent vessel image of an RGB (3,H,W) fundus image; the decoder is not used."""
    return _run(encoder, img)


def segment(encoder: Network, img: np.ndarray):
    """Binary vessel mask from Otsu thresholding of the angiogram.

    Returns ``(mask, threshold)``. A constant angiogram yields an empty mask
    and a SegmentationWarning.
    """
    ang = infer_angiogram(encoder, img)
    res = otsu(ang)
    if res.degenerate:
        warnings.warn("angiogram is constant; Otsu threshold is degenerate, returning empty mask",
                      SegmentationWarning, stacklevel=2)
        return np.zeros(ang.shape, dtype=np.float32), res.threshold
    return binarize(ang, res.threshold), res.threshold


def baseline_probability(net: Network, img: np.ndarray, preprocess: str) -> np.ndarray:
    return _run(net, PREPROCESS[preprocess](img)[None])


def baseline_segment(net: Network, img: np.ndarray, preprocess: str):
    return binarize(baseline_probability(net, img, preprocess), BASELINE_THRESHOLD), BASELINE_THRESHOLD


# -- metrics -----------------------------------------------------------------

@dataclass
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int


def confusion(pred: np.ndarray, label: np.ndarray, fov: np.ndarray | None = None) -> Confusion:
    p = np.asarray(pred) > 0.5
    t = np.asarray(label) > 0.5
    m = np.ones(t.shape, dtype=bool) if fov is None else np.asarray(fov) > 0.5
    return Confusion(
        tp=int(np.sum(p & t & m)),
        tn=int(np.sum(~p & ~t & m)),
        fp=int(np.sum(p & ~t & m)),
        fn=int(np.sum(~p & t & m)),
    )


def _ratio(num: int, den: int) -> float:
    # nan marks an undefined metric (empty class), distinct from a real 0
    return num / den if den else math.nan


def metrics_from_confusion(c: Confusion) -> dict:
    return {
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "accuracy": _ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn),
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
    }


@dataclass
class MetricRow:
    dataset: str
    image_id: str
    method: str
    dice: float
    accuracy: float
    sensitivity: float
    specificity: float
    threshold: float


def metric_row(dataset, image_id, method, pred, label, fov, threshold) -> MetricRow:
    m = metrics_from_confusion(confusion(pred, label, fov))
    return MetricRow(dataset, image_id, method, threshold=float(threshold), **m)


def predict(method: str, model: Network, img: np.ndarray):
    if method == "angiogram":
        return segment(model, img)
    if method == "green-unet":
        return baseline_segment(model, img, "green")
    if method == "pca-unet":
        return baseline_segment(model, img, "pca")
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def evaluate_samples(samples, models: dict) -> list:
    """``samples``: iterable of ``(dataset, image_id, img, label, fov)``;
    ``models``: method name -> network (encoder for ``angiogram``)."""
    for method in models:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    rows = []
    for dataset, image_id, img, label, fov in samples:
        for method, net in models.items():
            pred, thr = predict(method, net, img)
            rows.append(metric_row(dataset, image_id, method, pred, label, fov, thr))
    return rows


def evaluate(records, models: dict) -> list:
    def gen():
        for r in records:
            img, label, fov = load_sample(r)
            yield r.dataset_name, r.id, img, label, fov

    return evaluate_samples(gen(), models)


def write_metrics_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.dataset, r.image_id, r.method] + [f"{v:.6f}" for v in astuple(r)[3:]])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [MetricRow(d["dataset"], d["image_id"], d["method"],
                          *(float(d[k]) for k in METRIC_COLUMNS[3:])) for d in reader]


SUMMARY_COLUMNS = ["dataset", "method", "metric", "n", "median", "q1", "q3", "min", "max"]


def summarize(rows: list) -> list:
    """Boxplot statistics per (dataset, method, metric), ignoring undefined values."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.dataset, r.method), []).append(r)
    out = []
    for (ds, method), rs in sorted(groups.items()):
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in rs], dtype=float)
            vals = vals[~np.isnan(vals)]
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                out.append([ds, method, metric, vals.size, med, q1, q3, vals.min(), vals.max()])
            else:
                out.append([ds, method, metric, 0] + [math.nan] * 5)
    return out


def write_summary_csv(path, summary: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in summary:
            w.writerow(row[:4] + [f"{v:.6f}" for v in row[4:]])

