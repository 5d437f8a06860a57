"""Sectioned key-value experiment configuration with ``section.key=value`` overrides."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError
from .losses import LossSpec
from .model import config_hash
from .optim import TrainConfig


@dataclass
class DataSection:
    path: str = ""
    k_core: int = 10


@dataclass
class SplitSection:
    kind: str = "iid"
    test_frac: float = 0.2
    val_frac: float = 0.1
    noise_frac: float = 0.1
    noise_ratio_p: float = 0.0


@dataclass
class ModelSection:
    backbone: str = "mf"
    dim: int = 64
    lightgcn_layers: int = 2


@dataclass
class LossSection:
    kind: str = "PSL"
    activation: str = ""  # empty: the kind's default activation
    tau: float = 0.2
    tau1: float = 0.25
    tau2: float = 0.2
    placement: str = "outside"


@dataclass
class TrainSection:
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 1024
    epochs: int = 200
    n_negatives: int = 1000
    eval_every: int = 1
    select_on: str = "auto"


@dataclass
class GridSection:
    lr: list = field(default_factory=list)
    weight_decay: list = field(default_factory=list)
    tau: list = field(default_factory=list)


@dataclass
class ExperimentSection:
    seed: int = 0


SECTIONS = {
    "data": DataSection, "split": SplitSection, "model": ModelSection, "loss": LossSection,
    "train": TrainSection, "grid": GridSection, "experiment": ExperimentSection,
}


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    grid: GridSection = field(default_factory=GridSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def loss_spec(self, tau: Optional[float] = None) -> LossSpec:
        """The configured loss; a grid ``tau`` replaces tau (and tau2, the inner SL temperature, for BSL)."""
        s = self.loss
        tau = s.tau if tau is None else tau
        tau2 = tau if s.kind.upper() == "BSL" and tau != s.tau else s.tau2
        return LossSpec(s.kind, s.activation or None, tau=tau, tau1=s.tau1, tau2=tau2,
                        placement=s.placement)

    def train_config(self, lr=None, weight_decay=None, seed=None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            lr=t.lr if lr is None else lr,
            weight_decay=t.weight_decay if weight_decay is None else weight_decay,
            batch_size=t.batch_size, epochs=t.epochs, n_negatives=t.n_negatives,
            seed=self.seed if seed is None else seed, eval_every=t.eval_every,
            dim=self.model.dim, noise_ratio_p=self.split.noise_ratio_p, select_on=t.select_on,
        )


def _coerce(section: str, key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [float(x) for x in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return raw


def _assign(cfg: ExperimentConfig, section: str, key: str, raw: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    obj = getattr(cfg, section)
    names = {f.name for f in fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{section}]; expected one of {sorted(names)}")
    setattr(obj, key, _coerce(section, key, raw, getattr(obj, key)))


def parse_config(text: str = "", overrides: Sequence[str] = ()) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            _assign(cfg, section, key, raw)
    for item in overrides:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _assign(cfg, section, key, raw)
    validate(cfg)
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    if path is None:
        return parse_config("", overrides)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_config(p.read_text(encoding="utf-8"), overrides)
    # relative data paths are resolved against the config file's directory
    if cfg.data.path and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str((p.parent / cfg.data.path).resolve())
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.split.kind not in ("iid", "ood", "noise"):
        raise ConfigError(f"split.kind must be iid, ood or noise, not {cfg.split.kind!r}")
    if cfg.model.backbone not in ("mf", "lightgcn"):
        raise ConfigError(f"model.backbone must be mf or lightgcn, not {cfg.model.backbone!r}")
    if cfg.data.k_core < 0:
        raise ConfigError("data.k_core must be >= 0")
    try:
        cfg.loss_spec()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
