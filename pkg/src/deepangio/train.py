"""Adam, the step-decay schedule, and the contrastive and baseline training loops."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import sample_patches
from .imgproc import ClipLimitSampler, clahe, green_channel, pca_gray, random_transform
from .losses import LossBreakdown, seg_loss_terms, total_loss
from .nets import build_decoder, build_encoder, build_segmenter, decoder_config, encoder_config
from .tensor import Tensor

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["step", "epoch", "lr", "seg_ce", "seg_dice", "cont_l2", "cont_ssim", "total"]
PREPROCESS = {"green": green_channel, "pca": pca_gray}


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 300
    lr_init: float = 5e-4
    baseline_lr_init: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 3
    lr_min: float = 0.0
    lambda_cont: float = 1.0
    clip_mean: float = 5.0
    clip_std: float = 1.0
    clahe_tiles: int = 8
    patch_size: int = 256
    patches_per_image: int = 1
    seed: int = 0
    checkpoint_every: int = 1
    randomize_contrast: bool = True
    geometric_augment: bool = True
    encoder_base_channels: int = 32
    encoder_depth: int = 4
    decoder_base_channels: int = 16
    decoder_depth: int = 3

    def validate(self) -> None:
        for name in ("batch_size", "epochs", "lr_init", "baseline_lr_init", "lr_decay_factor",
                     "lr_decay_every", "clip_std", "clahe_tiles", "patch_size", "patches_per_image"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr_min", "lambda_cont", "checkpoint_every", "seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.patch_size % 2 ** self.encoder_depth:
            raise ValueError(f"patch_size {self.patch_size} not divisible by 2^{self.encoder_depth}")

    def encoder_config(self, in_channels: int = 3):
        return encoder_config(in_channels=in_channels, base_channels=self.encoder_base_channels,
                              depth=self.encoder_depth)

    def decoder_config(self):
        return decoder_config(base_channels=self.decoder_base_channels, depth=self.decoder_depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on each parameter's buffer.

    A missing gradient counts as zero. Raises NumericAbort naming the first
    parameter whose gradient is not finite, before anything is modified.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


def lr_schedule(epoch: int, cfg: TrainConfig, baseline: bool = False) -> float:
    lr0 = cfg.baseline_lr_init if baseline else cfg.lr_init
    lr = lr0 * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
    return max(lr, cfg.lr_min)


# -- training loops ----------------------------------------------------------

@dataclass
class TrainResult:
    nets: dict
    log_rows: list
    adam: AdamState
    epoch: int
    rng: np.random.Generator


def _named_params(nets: dict) -> dict:
    return {f"{k}/{name}": p for k, net in nets.items() for name, p in net.params.items()}


def _make_batches(n_samples: int, cfg: TrainConfig, rng: np.random.Generator) -> list:
    order = rng.permutation(np.repeat(np.arange(n_samples), cfg.patches_per_image))
    return [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]


def prepare_item(sample, cfg: TrainConfig, rng: np.random.Generator, sampler: ClipLimitSampler,
                 preprocess: Optional[str] = None):
    """Crop, contrast-randomize and geometrically augment one training item.

    Returns ``(x, x_aug, y)``; for baselines ``x_aug`` is None and ``x`` is the
    preprocessed 1-channel input. All randomness comes from ``rng`` in a fixed
    order: patch corner, clip limit, transform.
    """
    img, label, fov = sample
    x, y, _ = sample_patches(img, label, fov, cfg.patch_size, 1, rng, multiple=2 ** cfg.encoder_depth)[0]
    x_aug = None
    if preprocess is not None:
        x = PREPROCESS[preprocess](x)[None]
    elif cfg.randomize_contrast:
        x_aug = clahe(x, sampler.sample(rng), (cfg.clahe_tiles, cfg.clahe_tiles))
    else:
        x_aug = x
    if cfg.geometric_augment:
        tf = random_transform(rng)
        x, y = tf.apply(x), tf.apply(y)
        if x_aug is not None:
            x_aug = tf.apply(x_aug)
    return x, x_aug, y


def _checkpoint_state(adam: AdamState, rng: np.random.Generator, cfg: TrainConfig,
                      kind: str, log_rows: list) -> dict:
    return {
        "kind": kind,
        "adam_step": adam.step,
        "rng": rng.bit_generator.state,
        "config": cfg.to_dict(),
        "log": log_rows,
    }


def _adam_arrays(adam: AdamState) -> dict:
    arrays = {}
    for name in adam.m:
        arrays[f"adam.m/{name}"] = adam.m[name]
        arrays[f"adam.v/{name}"] = adam.v[name]
    return arrays


def _restore(path):
    ck = load_checkpoint(path)
    adam = AdamState(step=int(ck.state["adam_step"]))
    for key, arr in ck.arrays.items():
        which, name = key.split("/", 1)
        (adam.m if which == "adam.m" else adam.v)[name] = arr.copy()
    rng = np.random.default_rng()
    rng.bit_generator.state = ck.state["rng"]
    return ck.nets, adam, rng, ck.epoch, [list(r) for r in ck.state["log"]], ck.state["kind"]


def run_training(samples: list, cfg: TrainConfig, kind: str = "vae", out_dir=None,
                 resume=None, stop_epoch: Optional[int] = None,
                 on_step: Optional[Callable[[int, LossBreakdown], None]] = None) -> TrainResult:
    """Train the contrastive encoder/decoder pair (``kind='vae'``) or a grayscale
    baseline segmenter (``kind='green'|'pca'``) on ``(img, label, fov)`` samples.

    Epochs are numbered from 0. With ``out_dir`` set, a checkpoint is written
    every ``cfg.checkpoint_every`` epochs (``epoch_####.dang`` plus
    ``last.dang``) and the loss log to ``loss_log.csv``. ``stop_epoch`` ends the
    run early (exclusive) so that it can later be resumed from ``last.dang``.
    """
    cfg.validate()
    if kind not in ("vae", "green", "pca"):
        raise ValueError(f"unknown training kind {kind!r}")
    if not samples:
        raise ValueError("no training samples")
    baseline = kind != "vae"
    preprocess = kind if baseline else None
    sampler = ClipLimitSampler(cfg.clip_mean, cfg.clip_std)

    if resume is not None:
        nets, adam, rng, last_epoch, log_rows, ck_kind = _restore(resume)
        if ck_kind != kind:
            raise ValueError(f"checkpoint is for {ck_kind!r}, not {kind!r}")
        start = last_epoch + 1
    else:
        rng = np.random.default_rng(cfg.seed)
        if baseline:
            nets = {"segmenter": build_segmenter(cfg.encoder_config(in_channels=1), seed=cfg.seed)}
        else:
            nets = {"encoder": build_encoder(cfg.encoder_config(), seed=cfg.seed),
                    "decoder": build_decoder(cfg.decoder_config(), seed=cfg.seed + 10_000)}
        adam, log_rows, start = AdamState(), [], 0

    params = _named_params(nets)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    epoch = start - 1
    for epoch in range(start, end):
        lr = lr_schedule(epoch, cfg, baseline)
        for batch in _make_batches(len(samples), cfg, rng):
            items = [prepare_item(samples[i], cfg, rng, sampler, preprocess) for i in batch]
            x = Tensor(np.stack([it[0] for it in items]))
            y = Tensor(np.stack([it[2] for it in items])[:, None])
            if baseline:
                ce, dice = seg_loss_terms(nets["segmenter"](x), y)
                loss = ce + dice
                bd = LossBreakdown(ce.item(), dice.item(), 0.0, 0.0, loss.item(), 0.0)
            else:
                x_aug = Tensor(np.stack([it[1] for it in items]))
                loss, bd = total_loss(x, x_aug, y, nets["encoder"], nets["decoder"], cfg.lambda_cont)
            if not np.isfinite(bd.total):
                raise NumericAbort(f"non-finite loss at epoch {epoch}, step {adam.step + 1}")
            for p in params.values():
                p.grad = None
            T.backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, adam, lr)
            log_rows.append([adam.step, epoch, lr] + bd.as_row())
            if on_step is not None:
                on_step(adam.step, bd)
        log.info("epoch %d lr %.3g loss %.4f", epoch, lr, log_rows[-1][-1])
        if out is not None:
            last = epoch == end - 1
            if (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0) or last:
                state = _checkpoint_state(adam, rng, cfg, kind, log_rows)
                arrays = _adam_arrays(adam)
                save_checkpoint(out / f"epoch_{epoch:04d}.dang", nets, epoch, state, arrays)
                save_checkpoint(out / "last.dang", nets, epoch, state, arrays)
            write_loss_log(out / "loss_log.csv", log_rows)
    return TrainResult(nets, log_rows, adam, epoch, rng)


def write_loss_log(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_LOG_COLUMNS)
        for r in rows:
            w.writerow([int(r[0]), int(r[1])] + [repr(float(v)) for v in r[2:]])


def train(samples: list, cfg: TrainConfig, out_dir=None, **kw) -> TrainResult:
    return run_training(samples, cfg, "vae", out_dir, **kw)


def train_baseline(samples: list, cfg: TrainConfig, preprocess: str, out_dir=None, **kw) -> TrainResult:
    if preprocess not in PREPROCESS:
        raise ValueError(f"unknown preprocessing {preprocess!r}; expected green or pca")
    return run_training(samples, cfg, preprocess, out_dir, **kw)
