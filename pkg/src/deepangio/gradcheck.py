"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, precision


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_input: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error, floored so all-zero gradients compare absolutely."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8) if analytic.size else 1.0
    return float(diff / denom)


def numeric_grad(f: Callable[[], Tensor], x: Tensor, step: float, coords=None) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f().data)
        flat[i] = orig - step
        fm = float(f().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(x.shape)


def gradient_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-6,
    tolerance: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
    reference_dtype=None,
    extra: Sequence[Tensor] = (),
) -> GradCheckReport:
    """Compare backward() against central differences for each input.

    ``f`` is re-evaluated with the inputs' buffers perturbed in place. With
    ``max_coords`` set, only that many randomly chosen coordinates per input
    are probed (the analytic gradient is compared on the same coordinates).

    With ``reference_dtype=np.float64`` the analytic pass runs at the inputs'
    own precision while the differences are taken on upcast copies of
    ``inputs`` and ``extra`` (tensors f closes over but that are not checked).
    """
    for t in inputs:
        t.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tolerance)
    analytics = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]
    saved = [t.data for t in (*inputs, *extra)]
    if reference_dtype is not None:
        for t in (*inputs, *extra):
            t.data = t.data.astype(reference_dtype)
    try:
        with precision(reference_dtype) if reference_dtype is not None else nullcontext():
            for t, analytic in zip(inputs, analytics):
                report.per_input.append(_check_one(f, t, analytic, step, max_coords, rng))
    finally:
        for t, d in zip((*inputs, *extra), saved):
            t.data = d
    report.max_rel_error = max(report.per_input, default=0.0)
    return report


def _check_one(f, t, analytic, step, max_coords, rng) -> float:
    coords = None
    if max_coords is not None and t.size > max_coords:
        coords = rng.choice(t.size, size=max_coords, replace=False)
    numeric = numeric_grad(f, t, step, coords)
    if coords is not None:
        analytic, numeric = analytic.reshape(-1)[coords], numeric.reshape(-1)[coords]
    return rel_error(analytic, numeric)
