"""Backbones: a small conv stack for desk-scale runs and a ResNet50 layout for imported weights.

Each builder returns ``(trunk, make_last_stage)``: the shared stages up to and
including the split point, and a factory producing fresh copies of the
remaining stages (one copy per branch).
"""

from __future__ import annotations

from dataclasses import dataclass

from mbanet.errors import ConfigError
from mbanet.network.layers import Conv2d, ConvBNReLU, MaxPool, ReLU
from mbanet.tensor_core import functional as F
from mbanet.tensor_core.module import BatchNorm, Module, Sequential
from mbanet.tensor_core.tensor import DEFAULT_DTYPE, Tensor

RESNET50_BLOCKS = (3, 4, 6, 3)
RESNET50_WIDTHS = (256, 512, 1024, 2048)


@dataclass
class BackboneConfig:
    """``kind`` is ``"toy"`` or ``"external"`` (ResNet50 layout, weights imported by name)."""

    kind: str = "toy"
    stage_widths: tuple = (16, 32, 64, 128)
    stem_width: int = 16
    blocks_per_stage: int = 1
    last_stride: int = 1
    split_point: int = 3

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if self.kind not in ("toy", "external"):
            raise ConfigError(f"backbone kind must be 'toy' or 'external', got {self.kind!r}")
        if self.last_stride not in (1, 2):
            raise ConfigError(f"last_stride must be 1 or 2, got {self.last_stride}")
        if self.kind == "external":
            self.stage_widths = RESNET50_WIDTHS
            if self.split_point != 3:
                raise ConfigError("the ResNet50 layout forks after stage 3")
        if not 1 <= self.split_point < len(self.stage_widths):
            raise ConfigError(f"split_point {self.split_point} outside 1..{len(self.stage_widths) - 1}")
        if any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"invalid stage widths {self.stage_widths}")
        for w in (self.stage_widths[self.split_point - 1], self.stage_widths[-1]):
            if w % 8:
                raise ConfigError(f"widths at the fork and output must be multiples of 8, got {w}")

    @property
    def split_width(self) -> int:
        return self.stage_widths[self.split_point - 1]

    @property
    def out_width(self) -> int:
        return self.stage_widths[-1]

    def stage_strides(self) -> list[int]:
        n = len(self.stage_widths)
        if self.kind == "external":
            return [1, 2, 2, self.last_stride]
        return [2] * (n - 1) + [self.last_stride]

    def feature_sizes(self, height: int, width: int) -> list[tuple[int, int]]:
        """Spatial extent after each stage for an input of ``height x width``."""

        def down(n, s):
            return (n - 1) // s + 1

        if self.kind == "external":
            height, width = down(down(height, 2), 2), down(down(width, 2), 2)
        sizes = []
        for s in self.stage_strides():
            height, width = down(height, s), down(width, s)
            sizes.append((height, width))
        return sizes


def _toy_stage(cin: int, cout: int, stride: int, blocks: int, dtype) -> Sequential:
    layers = [ConvBNReLU(cin, cout, stride, dtype)]
    layers += [ConvBNReLU(cout, cout, 1, dtype) for _ in range(blocks - 1)]
    return Sequential(*layers)


class ToyTrunk(Module):
    def __init__(self, cfg: BackboneConfig, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.stem = ConvBNReLU(3, cfg.stem_width, 1, dtype)
        widths = (cfg.stem_width,) + cfg.stage_widths
        strides = cfg.stage_strides()
        self.stages = [
            _toy_stage(widths[i], widths[i + 1], strides[i], cfg.blocks_per_stage, dtype)
            for i in range(cfg.split_point)
        ]

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x


def build_toy_backbone(cfg: BackboneConfig, dtype=DEFAULT_DTYPE):
    if cfg.kind != "toy":
        raise ConfigError("build_toy_backbone needs kind='toy'")
    widths = (cfg.stem_width,) + cfg.stage_widths
    strides = cfg.stage_strides()

    def make_last_stage() -> Sequential:
        stages = [
            _toy_stage(widths[i], widths[i + 1], strides[i], cfg.blocks_per_stage, dtype)
            for i in range(cfg.split_point, len(cfg.stage_widths))
        ]
        return stages[0] if len(stages) == 1 else Sequential(*stages)

    return ToyTrunk(cfg, dtype), make_last_stage


class Bottleneck(Module):
    """ResNet bottleneck; attribute names mirror the usual exported parameter names."""

    def __init__(self, cin: int, width: int, stride: int, dtype=DEFAULT_DTYPE):
        super().__init__()
        cout = width * 4
        self.conv1 = Conv2d(cin, width, 1, dtype=dtype)
        self.bn1 = BatchNorm(width, dtype=dtype)
        self.conv2 = Conv2d(width, width, 3, stride, dtype=dtype)
        self.bn2 = BatchNorm(width, dtype=dtype)
        self.conv3 = Conv2d(width, cout, 1, dtype=dtype)
        self.bn3 = BatchNorm(cout, dtype=dtype)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = Sequential(Conv2d(cin, cout, 1, stride, dtype=dtype), BatchNorm(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        identity = self.downsample(x) if self.downsample is not None else x
        return F.relu(out + identity)


def _resnet_layer(cin: int, width: int, blocks: int, stride: int, dtype) -> Sequential:
    layers = [Bottleneck(cin, width, stride, dtype)]
    layers += [Bottleneck(width * 4, width, 1, dtype) for _ in range(blocks - 1)]
    return Sequential(*layers)


class ResNetTrunk(Module):
    """conv1/bn1/maxpool stem and layer1..layer3 of ResNet50."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.conv1 = Conv2d(3, 64, 7, 2, 3, dtype=dtype)
        self.bn1 = BatchNorm(64, dtype=dtype)
        self.relu = ReLU()
        self.maxpool = MaxPool()
        self.layer1 = _resnet_layer(64, 64, RESNET50_BLOCKS[0], 1, dtype)
        self.layer2 = _resnet_layer(256, 128, RESNET50_BLOCKS[1], 2, dtype)
        self.layer3 = _resnet_layer(512, 256, RESNET50_BLOCKS[2], 2, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        return self.layer3(self.layer2(self.layer1(x)))


def build_resnet50_backbone(cfg: BackboneConfig, dtype=DEFAULT_DTYPE):
    def make_last_stage() -> Sequential:
        return _resnet_layer(1024, 512, RESNET50_BLOCKS[3], cfg.last_stride, dtype)

    return ResNetTrunk(dtype), make_last_stage


def build_backbone(cfg: BackboneConfig, dtype=DEFAULT_DTYPE):
    if cfg.kind == "toy":
        return build_toy_backbone(cfg, dtype)
    return build_resnet50_backbone(cfg, dtype)
