"""Desk-scale phantom benchmark shared by the acceptance suite and scripts.

16 seeded 64x64 phantoms, 12 for training and 4 held out. Held-out images
are scored as rendered and after gamma 0.6 / 1.6 contrast shifts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .evaluate import baseline_segment, confusion, infer_angiogram, metrics_from_confusion, segment
from .imgproc import ClipLimitSampler, clahe, gamma_shift, ssim_global
from .nets import build_encoder
from .phantoms import PhantomParams, generate_phantoms
from .train import TrainConfig, run_training

GAMMAS = (1.0, 0.6, 1.6)
SHIFTED = (0.6, 1.6)
N_TRAIN = 12


def desk_config(**overrides) -> TrainConfig:
    """Small networks and constant lr so 50 epochs fit in minutes on one core.

    32px crops of the 64px phantoms add translation variety; the CLAHE grid
    shrinks to 2x2 so each tile still holds a few hundred pixels.
    """
    base = dict(
        epochs=50,
        patch_size=32,
        patches_per_image=16,
        encoder_base_channels=8,
        encoder_depth=3,
        decoder_base_channels=4,
        decoder_depth=1,
        lr_init=2e-3,
        baseline_lr_init=2e-3,
        lr_decay_every=1000,
        clahe_tiles=2,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def desk_data(phantom_seed: int = 0, count: int = 16, size: int = 64):
    samples = [(img, lbl, np.ones_like(lbl))
               for img, lbl in generate_phantoms(PhantomParams(count=count, size=size, seed=phantom_seed))]
    return samples[:N_TRAIN], samples[N_TRAIN:]


def dice_of(mask, label) -> float:
    return metrics_from_confusion(confusion(mask, label))["dice"]


def score(kind: str, net, test: list, gammas=GAMMAS) -> dict:
    """Per-gamma list of per-image Dice scores."""
    out = {}
    for g in gammas:
        scores = []
        for img, label, _ in test:
            x = gamma_shift(img, g)
            mask, _ = segment(net, x) if kind == "vae" else baseline_segment(net, x, kind)
            scores.append(dice_of(mask, label))
        out[g] = scores
    return out


def latent_stability(encoder, test: list, seed: int = 0, tiles: int = 8, gammas=SHIFTED) -> float:
    """Mean ssim_global(E(x), E(clahe(x, eps))) over gamma-shifted test images."""
    rng = np.random.default_rng(seed)
    sampler = ClipLimitSampler()
    vals = []
    for g in gammas:
        for img, _, _ in test:
            x = gamma_shift(img, g)
            xc = clahe(x, sampler.sample(rng), (tiles, tiles))
            vals.append(ssim_global(infer_angiogram(encoder, x), infer_angiogram(encoder, xc)))
    return float(np.mean(vals))


@dataclass
class SeedResult:
    seed: int
    vae_dice: dict
    green_dice: dict
    ssim_trained: float
    ssim_untrained: float
    seconds: dict = field(default_factory=dict)
    vae: object = None  # TrainResult of the contrastive run

    def shifted(self, which: str) -> list:
        d = self.vae_dice if which == "vae" else self.green_dice
        return [v for g in SHIFTED for v in d[g]]


def run_seed(seed: int, train_set, test_set, cfg: TrainConfig | None = None, baseline: bool = True) -> SeedResult:
    cfg = desk_config(seed=seed) if cfg is None else cfg
    t0 = time.perf_counter()
    vae = run_training(train_set, cfg, "vae")
    t1 = time.perf_counter()
    enc = vae.nets["encoder"]
    untrained = build_encoder(cfg.encoder_config(), seed=cfg.seed)
    res = SeedResult(
        seed=seed,
        vae_dice=score("vae", enc, test_set),
        green_dice={},
        ssim_trained=latent_stability(enc, test_set, seed, cfg.clahe_tiles),
        ssim_untrained=latent_stability(untrained, test_set, seed, cfg.clahe_tiles),
        seconds={"vae": t1 - t0},
        vae=vae,
    )
    if baseline:
        t2 = time.perf_counter()
        green = run_training(train_set, cfg, "green")
        res.seconds["green"] = time.perf_counter() - t2
        res.green_dice = score("green", green.nets["segmenter"], test_set)
    return res
