from typing import Any, Dict, List, Union

import torch
from torch import nn
import torch.nn.functional as F

from base import BaseNetwork, ResNetConfig, register_network
from utils import seeded
from Networks.common import ResidualBlock, evaluating, make_activation, make_norm, run_batched


@register_network
class Classifier(BaseNetwork):
    """
    psi: CIFAR residual network (3x3 stem, stages of basic blocks, global average pool, linear).

    The defaults give ResNet-20: three stages of three blocks at 16/32/64 channels.
    forward() returns softmax probabilities; logits() and log_probs() expose the pre-softmax
    values for numerically stable losses.
    """

    arch_id = "resnet-cifar"
    config_cls = ResNetConfig

    def __init__(self, config: ResNetConfig):
        super().__init__(config)
        use_bias = config.norm == "none"
        self.stem = nn.Sequential(
            nn.Conv2d(config.in_channels, config.width, kernel_size=3, stride=1, padding=1, bias=use_bias),
            make_norm(config.norm, config.width),
            make_activation(config.activation),
        )

        self.stages = nn.ModuleList()
        in_channels = config.width
        for index in range(config.stages):
            out_channels = config.width * 2 ** index
            strides = [1 if index == 0 else 2] + [1] * (config.blocks_per_stage - 1)
            blocks = []
            for stride in strides:
                blocks.append(ResidualBlock(in_channels, out_channels, stride, config.activation, config.norm))
                in_channels = out_channels
            self.stages.append(nn.Sequential(*blocks))

        self.avg_pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(in_channels, config.num_classes)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        out = torch.flatten(self.avg_pool(out), 1)
        return self.fc(out)

    def log_probs(self, x: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.logits(x), dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(x), dim=1)

    def feature_layers(self) -> List[nn.Module]:
        return [self.stem, *self.stages]


def build_classifier(cfg: Union[ResNetConfig, Dict[str, Any], None] = None, init_seed: int = 0) -> Classifier:
    if cfg is None:
        config = ResNetConfig()
    elif isinstance(cfg, ResNetConfig):
        config = cfg
    else:
        config = ResNetConfig.from_dict(cfg, prefix="classifier.")
    with seeded(init_seed):
        return Classifier(config)


def classify(net: Classifier, x: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """Probability matrix [m, c]; every row lies on the probability simplex"""
    net.check_batch(x)
    with evaluating(net):
        return run_batched(net, x, batch_size)
