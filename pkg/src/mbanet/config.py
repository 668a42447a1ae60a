"""Flat ``key = value`` run configuration.

One namespace covers the run settings plus every field of
:class:`NetworkConfig`, :class:`TrainConfig` and :class:`AugmentationConfig`.
Values are parsed by the type of the field default; tuples are written
comma-separated. Resolution order: preset, config file, ``--set`` overrides.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from mbanet.data.augment import AugmentationConfig
from mbanet.errors import ConfigError
from mbanet.network.model import NetworkConfig
from mbanet.training.config import TrainConfig

PRESETS = ("resnet50", "toy")


@dataclass
class RunConfig:
    preset: str = "resnet50"
    dataset_root: str = ""
    layout: str = "folders"
    subset: str = ""
    distractor_root: str = ""
    pretrained: str = ""
    repetitions: int = 10
    closed_set: bool = False
    eval_batch_size: int = 50
    cmc_k: int = 10
    toy_identities: int = 10
    toy_images: int = 10
    toy_size: int = 40

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")


# num_identities follows from the split, never from the config
_DERIVED = {"num_identities"}
_SECTIONS = {"run": RunConfig, "network": NetworkConfig, "train": TrainConfig, "augment": AugmentationConfig}


def _key_table() -> dict:
    table = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name in _DERIVED:
                continue
            if f.name in table:
                raise RuntimeError(f"config key {f.name!r} defined twice")
            table[f.name] = section
    return table


KEYS = _key_table()


def preset_defaults(preset: str) -> dict:
    """Section dicts for a preset, before any user values."""
    if preset == "toy":
        net = asdict(NetworkConfig())
        train = asdict(TrainConfig.toy())
        aug = asdict(AugmentationConfig(resize=36, crop=32))
    elif preset == "resnet50":
        net = asdict(NetworkConfig.resnet50(num_identities=1))
        train = asdict(TrainConfig())
        aug = asdict(AugmentationConfig())
    else:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}")
    net.pop("num_identities")
    return {"run": asdict(RunConfig(preset=preset)), "network": net, "train": train, "augment": aug}


def parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else str
            return tuple(kind(part.strip()) for part in text.split(",") if part.strip())
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r} as {type(default).__name__}") from None


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def read_config_file(path) -> dict:
    """``{key: raw string}`` from a flat file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(), source=str(path))
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None
    return dict(parser["run"])


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not key=value")
        out[key.strip()] = value
    return out


@dataclass
class ResolvedConfig:
    run: RunConfig = field(default_factory=RunConfig)
    network: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)

    def network_config(self, num_identities: int) -> NetworkConfig:
        return NetworkConfig(num_identities=num_identities, **self.network)

    def values(self) -> dict:
        out = dict(asdict(self.run))
        out.update(self.network)
        out.update(asdict(self.train))
        out.update(asdict(self.augment))
        return out

    def to_text(self) -> str:
        lines = []
        for section in _SECTIONS:
            lines.append(f"# {section}")
            lines += [f"{k} = {format_value(v)}" for k, v in self.values().items() if KEYS[k] == section]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def resolve(config_path=None, overrides=None, **explicit) -> ResolvedConfig:
    """Merge preset, file and overrides into validated dataclasses.

    ``explicit`` holds already-typed values from dedicated CLI flags and
    wins over everything else; ``None`` entries are ignored.
    """
    raw = read_config_file(config_path) if config_path else {}
    raw.update(overrides or {})
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    explicit = {k: v for k, v in explicit.items() if v is not None}
    bad = sorted(set(explicit) - set(KEYS))
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(bad)}")

    preset = explicit.get("preset") or raw.get("preset", "resnet50").strip()
    sections = preset_defaults(preset)
    for key, text in raw.items():
        sec = sections[KEYS[key]]
        sec[key] = parse_value(key, text, sec[key])
    for key, value in explicit.items():
        sections[KEYS[key]][key] = value
    sections["run"]["preset"] = preset

    network = sections["network"]
    NetworkConfig(num_identities=1, **network)  # validate early
    return ResolvedConfig(
        run=RunConfig(**sections["run"]),
        network=network,
        train=TrainConfig(**sections["train"]),
        augment=AugmentationConfig(**sections["augment"]),
    )
