from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any, ClassVar, Dict, List, Type

import torch
from torch import nn

from errors import ConfigurationError, DomainError
from utils import dataclass_from_dict

ACTIVATIONS = ("relu", "softplus", "tanh")
NORMS = ("batch", "none")


@dataclass
class TopologyConfig:
    """Fields shared by every network topology descriptor"""
    in_channels: int = 3
    activation: str = "relu"
    norm: str = "batch"

    def validate(self, prefix: str = "") -> None:
        if self.in_channels < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}in_channels")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"must be one of {ACTIVATIONS}", key=f"{prefix}activation")
        if self.norm not in NORMS:
            raise ConfigurationError(f"must be one of {NORMS}", key=f"{prefix}norm")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any], prefix: str = ""):
        config = dataclass_from_dict(cls, values, prefix)
        config.validate(prefix)
        return config


@dataclass
class UNetConfig(TopologyConfig):
    """Encoder-decoder with skip connections; depth counts resolution levels"""
    depth: int = 4
    width: int = 32
    residual: bool = False  # add the input's logit before the output sigmoid; head starts at zero

    def validate(self, prefix: str = "") -> None:
        super().validate(prefix)
        if self.depth < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}depth")
        if self.width < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}width")


@dataclass
class InverseNetConfig(UNetConfig):
    """The attacker's U-Net; starts as the identity map"""
    residual: bool = True


@dataclass
class ResNetConfig(TopologyConfig):
    """CIFAR residual network: stages of residual blocks, width doubling per stage (ResNet-20 by default)"""
    num_classes: int = 10
    stages: int = 3
    blocks_per_stage: int = 3
    width: int = 16

    def validate(self, prefix: str = "") -> None:
        super().validate(prefix)
        if self.num_classes < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}num_classes")
        if self.stages < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}stages")
        if self.blocks_per_stage < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}blocks_per_stage")
        if self.width < 1:
            raise ConfigurationError("must be >= 1", key=f"{prefix}width")


NETWORK_REGISTRY: Dict[str, Type["BaseNetwork"]] = {}


def register_network(cls: Type["BaseNetwork"]) -> Type["BaseNetwork"]:
    NETWORK_REGISTRY[cls.arch_id] = cls
    return cls


class BaseNetwork(nn.Module, ABC):
    """Base class for the transformation, classification and inverse networks"""

    arch_id: ClassVar[str] = "base"
    config_cls: ClassVar[Type[TopologyConfig]] = TopologyConfig

    def __init__(self, config: TopologyConfig):
        super().__init__()
        config.validate()
        self.config = config

    @property
    def in_channels(self) -> int:
        return self.config.in_channels

    def check_batch(self, x: torch.Tensor) -> None:
        """Raise DomainError unless x is an [m, C, H, W] batch with this network's channel count"""
        if not isinstance(x, torch.Tensor) or x.dim() != 4:
            shape = tuple(x.shape) if isinstance(x, torch.Tensor) else type(x).__name__
            raise DomainError(f"{self.arch_id}: expected a [m, C, H, W] batch, got {shape}")
        if x.shape[1] != self.in_channels:
            raise DomainError(
                f"{self.arch_id}: expected {self.in_channels} channels, got {x.shape[1]}"
            )
        if x.shape[0] < 1:
            raise DomainError(f"{self.arch_id}: empty batch")

    def feature_layers(self) -> List[nn.Module]:
        """Ordered layers whose successive outputs are the k-th layer feature maps"""
        raise ConfigurationError(f"{self.arch_id} exposes no feature layers")

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    @abstractmethod
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pass
