"""Three-branch attention network: global, spatial (SAM-RPE) and channel (CAM) branches.

The backbone runs once up to the split point. Each branch then has its own
copy of the remaining stage(s):

* spatial: S3 -> stage4 -> S4
* global:  stage4
* channel: C3 -> stage4 -> C4

Each branch is pooled to an embedding. During training a head
(FC, BN, leaky ReLU, dropout, classifier) turns each embedding into identity
logits. At test time the pooled embeddings are concatenated in the fixed
order spatial, global, channel.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from mbanet.attention import ChannelAttention, SpatialAttentionRPE
from mbanet.errors import ConfigError, ShapeError
from mbanet.network.backbone import BackboneConfig, build_backbone
from mbanet.network.layers import Linear
from mbanet.tensor_core import functional as F
from mbanet.tensor_core.module import BatchNorm, Module
from mbanet.tensor_core.tensor import DEFAULT_DTYPE, Tensor, concat, no_grad

BRANCH_ORDER = ("spatial", "global", "channel")


@dataclass
class NetworkConfig:
    backbone: str = "toy"
    stage_widths: tuple = (16, 32, 64, 128)
    stem_width: int = 16
    blocks_per_stage: int = 1
    last_stride: int = 1
    split_point: int = 3
    input_height: int = 32
    input_width: int = 32
    num_identities: int = 10
    head_dim: int = 512
    leaky_slope: float = 0.1
    dropout: float = 0.5
    branches: tuple = BRANCH_ORDER
    use_rpe: bool = True
    rpe_variant: str = "paper"
    share_stage4: bool = False
    freeze_gamma: bool = False
    init_seed: int = 0

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.branches = tuple(b for b in BRANCH_ORDER if b in tuple(self.branches))
        if not self.branches:
            raise ConfigError("at least one branch is required")
        if self.num_identities < 1:
            raise ConfigError("num_identities must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        self.backbone_config()

    @classmethod
    def resnet50(cls, num_identities: int, **overrides) -> "NetworkConfig":
        """ResNet50 layout at 324x324 input, last stride 1."""
        base = dict(backbone="external", input_height=324, input_width=324, num_identities=num_identities)
        base.update(overrides)
        return cls(**base)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            kind=self.backbone,
            stage_widths=self.stage_widths,
            stem_width=self.stem_width,
            blocks_per_stage=self.blocks_per_stage,
            last_stride=self.last_stride,
            split_point=self.split_point,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**values)


class BranchHead(Module):
    """FC -> BN -> leaky ReLU -> dropout -> classifier."""

    def __init__(self, in_dim: int, hidden: int, num_identities: int, slope: float, dropout: float,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        self.fc = Linear(in_dim, hidden, dtype=dtype)
        self.bn = BatchNorm(hidden, dtype=dtype)
        self.classifier = Linear(hidden, num_identities, dtype=dtype)
        self.slope = slope
        self.dropout = dropout

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        h = F.leaky_relu(self.bn(self.fc(x)), self.slope)
        h = F.dropout(h, self.dropout, self.training, rng)
        return self.classifier(h)


@dataclass
class BranchOutput:
    logits: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)


class Network(Module):
    def __init__(self, config: NetworkConfig, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.config = config
        bcfg = config.backbone_config()
        self.backbone, make_last_stage = build_backbone(bcfg, dtype)
        sizes = bcfg.feature_sizes(config.input_height, config.input_width)
        (h3, w3), (h4, w4) = sizes[bcfg.split_point - 1], sizes[-1]
        c3, c4 = bcfg.split_width, bcfg.out_width
        self.split_size, self.out_size = (h3, w3), (h4, w4)

        shared = make_last_stage() if config.share_stage4 else None
        for branch in config.branches:
            setattr(self, f"stage4_{branch}", shared if shared is not None else make_last_stage())
        if "spatial" in config.branches:
            self.s3 = SpatialAttentionRPE(c3, h3, w3, config.use_rpe, config.rpe_variant, dtype)
            self.s4 = SpatialAttentionRPE(c4, h4, w4, config.use_rpe, config.rpe_variant, dtype)
        if "channel" in config.branches:
            self.c3 = ChannelAttention(dtype)
            self.c4 = ChannelAttention(dtype)
        for branch in config.branches:
            head = BranchHead(c4, config.head_dim, config.num_identities, config.leaky_slope,
                              config.dropout, dtype)
            setattr(self, f"head_{branch}", head)

        self.initialize(config.init_seed)
        if config.freeze_gamma:
            for mod in self.attention_modules().values():
                mod.gamma.requires_grad = False
        self.rng = np.random.default_rng(config.init_seed)

    # ---------------------------------------------------------------- info
    @property
    def branch_names(self) -> tuple:
        return self.config.branches

    @property
    def embed_dim(self) -> int:
        return self.config.backbone_config().out_width

    @property
    def descriptor_dim(self) -> int:
        return self.embed_dim * len(self.branch_names)

    def attention_modules(self) -> dict:
        return {name: getattr(self, name) for name in ("s3", "s4", "c3", "c4") if hasattr(self, name)}

    def gammas(self) -> dict:
        return {name: float(mod.gamma.data[0]) for name, mod in self.attention_modules().items()}

    def is_backbone_parameter(self, name: str) -> bool:
        return name.startswith("backbone.") or name.startswith("stage4_")

    def param_groups(self) -> dict:
        """Trainable parameters split into the pre-existing backbone and the newly added layers."""
        groups = {"backbone": [], "new": []}
        for name, p in self.named_parameters():
            if p.requires_grad:
                groups["backbone" if self.is_backbone_parameter(name) else "new"].append(p)
        return groups

    # ------------------------------------------------------------- forward
    def _check_input(self, x: Tensor) -> None:
        expected = (3, self.config.input_height, self.config.input_width)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"network expects [B, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")

    def branch_embeddings(self, x: Tensor) -> dict:
        self._check_input(x)
        shared = self.backbone(x)
        out = {}
        for branch in self.branch_names:
            stage = getattr(self, f"stage4_{branch}")
            if branch == "spatial":
                feat = self.s4(stage(self.s3(shared)))
            elif branch == "channel":
                feat = self.c4(stage(self.c3(shared)))
            else:
                feat = stage(shared)
            out[branch] = F.global_average_pool(feat)
        return out

    def forward_train(self, x: Tensor, labels=None) -> BranchOutput:
        if labels is not None:
            labels = np.asarray(labels)
            if labels.size and (labels.min() < 0 or labels.max() >= self.config.num_identities):
                raise ShapeError(
                    f"labels span [{labels.min()}, {labels.max()}] but the classifiers have "
                    f"{self.config.num_identities} outputs"
                )
        embeddings = self.branch_embeddings(x)
        logits = {b: getattr(self, f"head_{b}")(e, self.rng) for b, e in embeddings.items()}
        return BranchOutput(logits, embeddings)

    forward = forward_train

    def forward_embed(self, x: Tensor) -> Tensor:
        """Eval-mode descriptor ``[s, g, c]`` (enabled branches only, same order)."""
        with evaluating(self), no_grad():
            embeddings = self.branch_embeddings(x)
        return concat([embeddings[b] for b in self.branch_names], axis=-1)


@contextlib.contextmanager
def evaluating(net: Module):
    """Temporarily switch ``net`` to eval mode."""
    modes = {id(m): m.training for _, m in net.named_modules()}
    net.eval()
    try:
        yield net
    finally:
        for _, m in net.named_modules():
            m.training = modes[id(m)]


def forward_train(x: Tensor, net: Network, labels=None) -> BranchOutput:
    return net.forward_train(x, labels)


def forward_embed(x: Tensor, net: Network) -> Tensor:
    return net.forward_embed(x)
