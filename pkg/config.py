"""
Experiment configuration: one YAML file per experiment, sections mirroring the dataclasses below.

Precedence: CLI flags > --set section.key=value overrides > file > dataclass defaults.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml

from base import InverseNetConfig, ResNetConfig, UNetConfig
from data_utils import DATASET_PROFILES, AugmentationPolicy
from errors import ConfigurationError, FileError
from utils import dataclass_from_dict, sha256_bytes

PROFILE_DIR = Path(__file__).resolve().parent / "configs"

PathLike = Union[str, Path]


@dataclass
class OptimizerConfig:
    """SGD recipe shared by the protection trainer and the attacker"""
    epochs: int = 200
    batch_size: int = 128
    base_lr: float = 0.1
    lr_factor: float = 0.2
    lr_milestones: List[int] = field(default_factory=lambda: [60, 120, 160])
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0

    def validate(self, prefix: str) -> None:
        if self.epochs < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}epochs")
        if self.batch_size < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}batch_size")
        if self.base_lr <= 0:
            raise ConfigurationError("must be > 0", key=f"{prefix}base_lr")
        if self.lr_factor <= 0:
            raise ConfigurationError("must be > 0", key=f"{prefix}lr_factor")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("must lie in [0, 1)", key=f"{prefix}momentum")
        if self.weight_decay < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}weight_decay")
        milestones = self.lr_milestones
        if any(not isinstance(m, int) for m in milestones):
            raise ConfigurationError("milestones must be integer epochs", key=f"{prefix}lr_milestones")
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ConfigurationError(f"must be strictly increasing, got {milestones}", key=f"{prefix}lr_milestones")
        if milestones and (milestones[0] < 1 or milestones[-1] >= self.epochs):
            raise ConfigurationError(f"must lie in [1, epochs), got {milestones}", key=f"{prefix}lr_milestones")


@dataclass
class TrainConfig(OptimizerConfig):
    """Joint training of h_theta and psi"""
    alpha: float = 0.005
    dataset: str = "cifar10"
    joint: bool = True
    plain: bool = False  # identity transform, psi trained alone
    init_seed: int = 0
    prune_checkpoints: bool = False  # keep only the selected epoch's files

    def validate(self, prefix: str = "train.") -> None:
        super().validate(prefix)
        if self.alpha < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}alpha")
        if self.dataset not in DATASET_PROFILES:
            raise ConfigurationError(f"unknown dataset {self.dataset!r}", key=f"{prefix}dataset")
        if self.plain and not self.joint:
            raise ConfigurationError("a plain run has no transform parameters, so psi must train", key=f"{prefix}joint")


@dataclass
class AttackConfig(OptimizerConfig):
    """ITN-Attack: inverse network trained on (protected, plain) pairs"""
    pair_source: str = "train"
    max_pairs: Optional[int] = None
    held_out: Optional[int] = None  # test images scored; all when unset
    init_seed: int = 1

    def validate(self, prefix: str = "attack.") -> None:
        super().validate(prefix)
        if self.pair_source not in ("train", "val", "test"):
            raise ConfigurationError("must be one of train, val, test", key=f"{prefix}pair_source")
        for name in ("max_pairs", "held_out"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigurationError("must be a positive integer", key=f"{prefix}{name}")


@dataclass
class DataConfig:
    root: str = "./data"
    split_seed: int = 0
    download: bool = False
    train_limit: Optional[int] = None
    val_limit: Optional[int] = None
    test_limit: Optional[int] = None
    augment: bool = True
    crop_padding: int = 4
    flip_probability: float = 0.5
    num_workers: int = 0

    def validate(self, prefix: str = "data.") -> None:
        self.policy().validate(prefix)
        for name in ("train_limit", "val_limit", "test_limit"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigurationError("must be a positive integer", key=f"{prefix}{name}")
        if self.num_workers < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}num_workers")

    def policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.crop_padding, self.flip_probability, self.augment)

    def limits(self) -> Optional[Tuple[Optional[int], Optional[int], Optional[int]]]:
        limits = (self.train_limit, self.val_limit, self.test_limit)
        return limits if any(v is not None for v in limits) else None


@dataclass
class FeaturesConfig:
    """phi_k: layer k of the source network; layer 0 compares raw pixels"""
    source: str = "classifier"
    layer: int = 2

    def validate(self, prefix: str = "features.") -> None:
        if self.source not in ("classifier", "transform", "none"):
            raise ConfigurationError("must be one of classifier, transform, none", key=f"{prefix}source")
        if self.layer < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}layer")
        if self.source == "none" and self.layer != 0:
            raise ConfigurationError("source none only supports layer 0", key=f"{prefix}layer")


@dataclass
class EvalConfig:
    peak: float = 1.0
    batch_size: int = 512
    grid_images: int = 10

    def validate(self, prefix: str = "eval.") -> None:
        if self.peak <= 0:
            raise ConfigurationError("must be > 0", key=f"{prefix}peak")
        if self.batch_size < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}batch_size")
        if self.grid_images < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}grid_images")


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    max_payload_bytes: int = 1_000_000
    retries: int = 3
    timeout: float = 30.0
    retry_delay: float = 1.0

    def validate(self, prefix: str = "serve.") -> None:
        if not 0 <= self.port < 65536:
            raise ConfigurationError("must lie in [0, 65535]", key=f"{prefix}port")
        if self.max_payload_bytes < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}max_payload_bytes")
        if self.retries < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}retries")
        if self.timeout <= 0:
            raise ConfigurationError("must be > 0", key=f"{prefix}timeout")
        if self.retry_delay < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}retry_delay")


SECTIONS = {
    "data": DataConfig,
    "transform_net": UNetConfig,
    "classifier": ResNetConfig,
    "inverse_net": InverseNetConfig,
    "features": FeaturesConfig,
    "train": TrainConfig,
    "attack": AttackConfig,
    "eval": EvalConfig,
    "serve": ServeConfig,
}


@dataclass
class RunSettings:
    """Top-level scalar keys of an experiment file"""
    description: str = ""
    dataset: str = "cifar10"
    output_dir: str = "runs/default"
    alpha_sweep: List[float] = field(default_factory=lambda: [0.0, 0.005, 0.01, 0.05, 0.1])
    device: str = "cpu"
    progress: bool = True


@dataclass
class ExperimentConfig(RunSettings):
    data: DataConfig = field(default_factory=DataConfig)
    transform_net: UNetConfig = field(default_factory=UNetConfig)
    classifier: ResNetConfig = field(default_factory=ResNetConfig)
    inverse_net: InverseNetConfig = field(default_factory=InverseNetConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)

    @property
    def num_classes(self) -> int:
        return DATASET_PROFILES[self.dataset].num_classes

    def validate(self) -> None:
        if self.dataset not in DATASET_PROFILES:
            raise ConfigurationError(
                f"unknown dataset {self.dataset!r} (available: {', '.join(DATASET_PROFILES)})", key="dataset"
            )
        if any(a < 0 for a in self.alpha_sweep):
            raise ConfigurationError("every alpha must be >= 0", key="alpha_sweep")
        if self.classifier.num_classes != self.num_classes:
            raise ConfigurationError(
                f"{self.dataset} has {self.num_classes} classes, classifier has {self.classifier.num_classes}",
                key="classifier.num_classes",
            )
        for name, section in self.sections().items():
            section.validate(f"{name}.")

    def sections(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in SECTIONS}

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """Stable identifier of the effective configuration"""
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return sha256_bytes(text.encode("utf-8"))[:16]

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as handle:
                yaml.safe_dump(self.to_dict(), handle, sort_keys=False)
        except OSError as e:
            raise FileError(f"cannot write config: {e}", [path]) from e
        return path


def from_dict(raw: Optional[Dict[str, Any]]) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from the parsed YAML document"""
    raw = dict(raw or {})
    scalar_keys = {f.name for f in fields(RunSettings)}
    unknown = sorted(set(raw) - set(SECTIONS) - scalar_keys)
    if unknown:
        raise ConfigurationError("unknown section", key=unknown[0])

    scalars = dataclass_from_dict(RunSettings, {k: raw[k] for k in scalar_keys if k in raw})
    # The classifier's class count follows the dataset unless set explicitly.
    classifier_raw = dict(raw.get("classifier") or {})
    classifier_raw.setdefault("num_classes", DATASET_PROFILES.get(scalars.dataset, DATASET_PROFILES["cifar10"]).num_classes)
    train_raw = dict(raw.get("train") or {})
    if "dataset" in train_raw and train_raw["dataset"] != scalars.dataset:
        raise ConfigurationError(f"conflicts with dataset {scalars.dataset!r}", key="train.dataset")
    train_raw["dataset"] = scalars.dataset

    sections = {}
    for name, cls in SECTIONS.items():
        values = {"classifier": classifier_raw, "train": train_raw}.get(name, raw.get(name))
        if hasattr(cls, "from_dict"):
            sections[name] = cls.from_dict(values or {}, prefix=f"{name}.")
        else:
            sections[name] = dataclass_from_dict(cls, values, prefix=f"{name}.")

    config = ExperimentConfig(**asdict(scalars), **sections)
    config.validate()
    return config


def parse_override(text: str) -> Tuple[List[str], Any]:
    """'train.alpha=0.01' -> (['train', 'alpha'], 0.01); the value is read as a YAML scalar"""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse value {value!r}: {e}", key=key) from e
    return key.split("."), parsed


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    raw = dict(raw)
    for text in overrides:
        path, value = parse_override(text)
        node = raw
        for depth, part in enumerate(path[:-1]):
            child = node.get(part)
            if child is None:
                child = {}
            elif not isinstance(child, dict):
                raise ConfigurationError("is not a section", key=".".join(path[:depth + 1]))
            else:
                child = dict(child)
            node[part] = child
            node = child
        node[path[-1]] = value
    return raw


def resolve_config_path(name: PathLike) -> Path:
    """A config file path, or the name of a shipped profile under configs/"""
    path = Path(name)
    if path.is_file():
        return path
    profile = PROFILE_DIR / f"{name}.yaml"
    if profile.is_file():
        return profile
    raise FileError("config file not found", [path])


def read_config_file(path: PathLike) -> Dict[str, Any]:
    path = resolve_config_path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            raw = yaml.safe_load(handle)
    except OSError as e:
        raise FileError(f"cannot read config: {e}", [path]) from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML ({e})") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return raw


def load_config(path: Optional[PathLike] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw = read_config_file(path) if path is not None else {}
    return from_dict(apply_overrides(raw, overrides))


def list_profiles() -> List[Tuple[str, Path, str]]:
    """(name, path, description) for every shipped profile"""
    profiles = []
    for path in sorted(PROFILE_DIR.glob("*.yaml")):
        try:
            description = (read_config_file(path).get("description") or "").strip()
        except (ConfigurationError, FileError):
            description = "(unreadable)"
        profiles.append((path.stem, path, description))
    return profiles
