"""Segmentation and contrastive training objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .imgproc import SSIM_K1, SSIM_K2
from .tensor import Tensor

PROB_EPS = 1e-7
DICE_SMOOTH = 1e-6
C1 = SSIM_K1 ** 2
C2 = SSIM_K2 ** 2


@dataclass
class LossBreakdown:
    seg_ce: float
    seg_dice: float
    cont_l2: float
    cont_ssim: float
    total: float
    lambda_cont: float = 1.0

    def as_row(self) -> list:
        return [self.seg_ce, self.seg_dice, self.cont_l2, self.cont_ssim, self.total]


def _as_target(y, like: Tensor) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y), dtype=like.dtype)
    if y.shape != like.shape:
        raise T.ShapeError(f"target shape {y.shape} != prediction shape {like.shape}")
    return y


def seg_loss_terms(yhat: Tensor, y) -> tuple:
    """Binary cross-entropy and soft-Dice terms, each a scalar tensor."""
    y = _as_target(y, yhat)
    p = T.clip(yhat, PROB_EPS, 1 - PROB_EPS)
    bg = Tensor(1 - y.data, dtype=y.dtype)
    ce = -T.mean(y * T.log(p) + bg * T.log(1 - p))
    inter = T.sum(y * p)
    denom = T.sum(y * y + p * p) + DICE_SMOOTH
    dice = 1 - 2 * inter / denom
    return ce, dice


def seg_loss(yhat: Tensor, y) -> Tensor:
    ce, dice = seg_loss_terms(yhat, y)
    return ce + dice


def ssim_tensor(a: Tensor, b: Tensor) -> Tensor:
    """Per-sample global SSIM of two NCHW batches, shape (N,)."""
    if a.shape != b.shape:
        raise T.ShapeError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    axes = tuple(range(1, a.data.ndim))
    ma, mb = T.mean(a, axes), T.mean(b, axes)
    va = T.mean(a * a, axes) - ma * ma
    vb = T.mean(b * b, axes) - mb * mb
    cab = T.mean(a * b, axes) - ma * mb
    num = (2 * (ma * mb) + C1) * (2 * cab + C2)
    den = (ma * ma + mb * mb + C1) * (va + vb + C2)
    return num / den


def contrastive_terms(z: Tensor, z_aug: Tensor) -> tuple:
    if z.shape != z_aug.shape:
        raise T.ShapeError(f"contrastive: shape mismatch {z.shape} vs {z_aug.shape}")
    diff = z - z_aug
    l2 = T.mean(diff * diff)
    dissim = 1 - T.mean(ssim_tensor(z, z_aug))
    return l2, dissim


def contrastive_loss(z: Tensor, z_aug: Tensor) -> Tensor:
    l2, dissim = contrastive_terms(z, z_aug)
    return l2 + dissim


def total_loss(x: Tensor, x_aug: Tensor, y, encoder, decoder, lambda_cont: float = 1.0):
    """Averaged two-branch segmentation loss plus weighted latent agreement.

    Returns ``(loss_tensor, LossBreakdown)``.
    """
    z = encoder(x)
    z_aug = encoder(x_aug)
    ce1, dice1 = seg_loss_terms(decoder(z), y)
    ce2, dice2 = seg_loss_terms(decoder(z_aug), y)
    l2, dissim = contrastive_terms(z, z_aug)
    seg = 0.5 * ((ce1 + dice1) + (ce2 + dice2))
    loss = seg + T.scale(l2 + dissim, lambda_cont)
    breakdown = LossBreakdown(
        seg_ce=0.5 * (ce1.item() + ce2.item()),
        seg_dice=0.5 * (dice1.item() + dice2.item()),
        cont_l2=l2.item(),
        cont_ssim=dissim.item(),
        total=loss.item(),
        lambda_cont=float(lambda_cont),
    )
    return loss, breakdown
