"""Residual U-Nets for the angiogram encoder and the supervising decoder.

Parameter names follow ``level.block.layer.kind``, for example
``down1.res.conv2.weight``, ``up0.upconv.conv.bias`` or ``head.out.conv.weight``.
Levels are ``down0 .. down{depth-1}``, ``bottom``, ``up{depth-1} .. up0``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# logit contribution of the decoder input skip: +-SHORTCUT_GAIN at input 1/0
SHORTCUT_GAIN = 8.0


@dataclass
class NetworkConfig:
    in_channels: int = 3
    out_channels: int = 1
    base_channels: int = 32
    depth: int = 4
    final_activation: str = "sigmoid"
    # add SHORTCUT_GAIN*(2*input-1) to the output logits (1-channel in/out only)
    input_shortcut: bool = False

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.final_activation != "sigmoid":
            raise ValueError(f"unsupported final activation {self.final_activation!r}")
        if self.input_shortcut and (self.in_channels != 1 or self.out_channels != 1):
            raise ValueError("input_shortcut requires in_channels == out_channels == 1")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def encoder_config(**overrides) -> NetworkConfig:
    return NetworkConfig(**{"in_channels": 3, "out_channels": 1, "base_channels": 32, "depth": 4, **overrides})


def decoder_config(**overrides) -> NetworkConfig:
    return NetworkConfig(**{"in_channels": 1, "out_channels": 1, "base_channels": 16, "depth": 3,
                            "input_shortcut": True, **overrides})


class Network:
    def __init__(self, config: NetworkConfig, role: str):
        config.validate()
        if role not in ("encoder", "decoder", "segmenter"):
            raise ValueError(f"unknown role {role!r}")
        self.config = config
        self.role = role
        self.params: dict[str, Tensor] = {}
        self._declare()

    # -- parameter declaration ----------------------------------------------

    def _conv(self, name: str, cin: int, cout: int, k: int) -> None:
        self.params[f"{name}.weight"] = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True)

    def _norm(self, name: str, c: int) -> None:
        self.params[f"{name}.gain"] = Tensor(np.ones(c), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(c), requires_grad=True)

    def _res(self, level: str, cin: int, cout: int) -> None:
        self._conv(f"{level}.res.conv1", cin, cout, 3)
        self._norm(f"{level}.res.norm1", cout)
        self._conv(f"{level}.res.conv2", cout, cout, 3)
        self._norm(f"{level}.res.norm2", cout)
        if cin != cout:
            self._conv(f"{level}.res.skip", cin, cout, 1)

    def channels(self, level: int) -> int:
        return self.config.base_channels * 2 ** level

    def _declare(self) -> None:
        cfg = self.config
        cin = cfg.in_channels
        for i in range(cfg.depth):
            self._res(f"down{i}", cin, self.channels(i))
            cin = self.channels(i)
        self._res("bottom", cin, self.channels(cfg.depth))
        for i in reversed(range(cfg.depth)):
            self._conv(f"up{i}.upconv.conv", self.channels(i + 1), self.channels(i), 3)
            self._res(f"up{i}", 2 * self.channels(i), self.channels(i))
        self._norm("head.out.norm", self.channels(0))
        self._conv("head.out.conv", self.channels(0), cfg.out_channels, 1)

    # -- forward --------------------------------------------------------------

    def _apply_conv(self, name: str, x: Tensor) -> Tensor:
        w = self.params[f"{name}.weight"]
        return T.conv2d(x, w, self.params[f"{name}.bias"], stride=1, padding=w.shape[-1] // 2)

    def _layer(self, level: str, idx: int, x: Tensor) -> Tensor:
        h = self._apply_conv(f"{level}.res.conv{idx}", x)
        h = T.instance_norm(h, self.params[f"{level}.res.norm{idx}.gain"], self.params[f"{level}.res.norm{idx}.bias"])
        return T.leaky_relu(h)

    def _apply_res(self, level: str, x: Tensor) -> Tensor:
        h = self._layer(level, 2, self._layer(level, 1, x))
        short = self._apply_conv(f"{level}.res.skip", x) if f"{level}.res.skip.weight" in self.params else x
        return h + short

    def check_input(self, x: Tensor) -> None:
        cfg = self.config
        if x.data.ndim != 4:
            raise T.ShapeError(f"{self.role}: expected NCHW input, got shape {x.shape}")
        if x.shape[1] != cfg.in_channels:
            raise T.ShapeError(f"{self.role}: expected {cfg.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[2:]
        if h % cfg.multiple or w % cfg.multiple:
            raise T.ShapeError(f"{self.role}: spatial dims {h}x{w} not divisible by {cfg.multiple}")

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        cfg = self.config
        skips = []
        h = x
        for i in range(cfg.depth):
            h = self._apply_res(f"down{i}", h)
            skips.append(h)
            h = T.pool_avg2(h)
        h = self._apply_res("bottom", h)
        for i in reversed(range(cfg.depth)):
            up = self._apply_conv(f"up{i}.upconv.conv", T.upsample_nearest2(h))
            h = self._apply_res(f"up{i}", T.concat_channels(up, skips[i]))
        # normalize before the head: residual sums grow the activation scale
        h = T.leaky_relu(T.instance_norm(h, self.params["head.out.norm.gain"], self.params["head.out.norm.bias"]))
        logits = self._apply_conv("head.out.conv", h)
        if cfg.input_shortcut:
            logits = logits + T.scale(x - 0.5, 2 * SHORTCUT_GAIN)
        return T.sigmoid(logits)

    __call__ = forward

    # -- parameter management -------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state/parameter name mismatch: {sorted(missing)[:5]}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise T.ShapeError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.ascontiguousarray(state[k], dtype=p.dtype)

    def astype(self, dtype) -> "Network":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self


def init_parameters(net: Network, seed: int) -> None:
    """He-normal conv kernels, zero biases, unit norm gains; determined by ``seed``."""
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(p.shape[1:]))
            p.data = (rng.standard_normal(p.shape) * np.sqrt(2.0 / fan_in)).astype(p.dtype)
        elif name.endswith(".gain"):
            p.data = np.ones(p.shape, dtype=p.dtype)
        else:
            p.data = np.zeros(p.shape, dtype=p.dtype)
        p.grad = None


def build_encoder(cfg: NetworkConfig | None = None, seed: int = 0) -> Network:
    net = Network(cfg or encoder_config(), "encoder")
    init_parameters(net, seed)
    return net


def build_decoder(cfg: NetworkConfig | None = None, seed: int = 1) -> Network:
    net = Network(cfg or decoder_config(), "decoder")
    init_parameters(net, seed)
    return net


def build_segmenter(cfg: NetworkConfig, seed: int = 0) -> Network:
    """Stand-alone segmentation network used by the grayscale baselines."""
    net = Network(cfg, "segmenter")
    init_parameters(net, seed)
    return net


def param_count(net: Network) -> int:
    return net.param_count()
