from typing import Any, Dict, List, Union

import torch
from torch import nn

from base import BaseNetwork, InverseNetConfig, UNetConfig, register_network
from errors import DomainError
from utils import seeded
from Networks.common import conv_block, evaluating, run_batched

LOGIT_EPS = 1e-6


class UNet(BaseNetwork):
    """
    U-Net style encoder-decoder mapping [C, H, W] images to [C, H, W] images in [0, 1].

    Level i of the encoder runs at width * 2**i channels and 1 / 2**i resolution; the decoder
    upsamples with transposed convolutions and concatenates the matching encoder output.
    A logistic output keeps every pixel inside [0, 1]. With config.residual the head predicts a
    correction to the input's logit and is zero-initialised, so the untrained network is the identity.
    """

    config_cls = UNetConfig

    def __init__(self, config: UNetConfig):
        super().__init__(config)
        widths = [config.width * 2 ** level for level in range(config.depth)]
        act, norm = config.activation, config.norm

        self.encoders = nn.ModuleList()
        previous = config.in_channels
        for width in widths:
            self.encoders.append(conv_block(previous, width, act, norm))
            previous = width
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(1, config.depth)):
            self.upsamplers.append(nn.ConvTranspose2d(widths[level], widths[level - 1], kernel_size=2, stride=2))
            self.decoders.append(conv_block(widths[level - 1] * 2, widths[level - 1], act, norm))

        self.head = nn.Conv2d(widths[0], config.in_channels, kernel_size=1)
        self.squash = nn.Sigmoid()
        if config.residual:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def check_batch(self, x: torch.Tensor) -> None:
        super().check_batch(x)
        multiple = 2 ** (self.config.depth - 1)
        if x.shape[-2] % multiple or x.shape[-1] % multiple:
            raise DomainError(
                f"{self.arch_id}: H and W must be multiples of {multiple} for depth {self.config.depth}, "
                f"got {tuple(x.shape[-2:])}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        skips = []
        out = x
        for level, encoder in enumerate(self.encoders):
            if level > 0:
                out = self.pool(out)
            out = encoder(out)
            skips.append(out)

        for upsample, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips[:-1])):
            out = upsample(out)
            out = decoder(torch.cat([out, skip], dim=1))

        logits = self.head(out)
        if self.config.residual:
            logits = logits + torch.logit(x, eps=LOGIT_EPS)
        return self.squash(logits)

    def feature_layers(self) -> List[nn.Module]:
        layers: List[nn.Module] = [self.encoders[0]]
        for encoder in self.encoders[1:]:
            layers.append(nn.Sequential(self.pool, encoder))
        return layers


@register_network
class TransformNet(UNet):
    """h_theta: converts plain images into visually protected ones"""
    arch_id = "unet-transform"


@register_network
class InverseNet(UNet):
    """g: the attacker's estimate of h_theta's inverse"""
    arch_id = "unet-inverse"
    config_cls = InverseNetConfig


def _as_config(cfg: Union[UNetConfig, Dict[str, Any], None], prefix: str, cls=UNetConfig) -> UNetConfig:
    if cfg is None:
        return cls()
    if isinstance(cfg, UNetConfig):
        cfg.validate(prefix)
        return cfg
    return cls.from_dict(cfg, prefix=prefix)


def build_transform_net(cfg: Union[UNetConfig, Dict[str, Any], None] = None, init_seed: int = 0) -> TransformNet:
    """Build h_theta with parameters drawn deterministically from init_seed"""
    config = _as_config(cfg, "transform_net.")
    with seeded(init_seed):
        return TransformNet(config)


def build_inverse_net(cfg: Union[UNetConfig, Dict[str, Any], None] = None, init_seed: int = 0) -> InverseNet:
    config = _as_config(cfg, "inverse_net.", InverseNetConfig)
    with seeded(init_seed):
        return InverseNet(config)


def forward_transform(net: nn.Module, x: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """Protected images h(x) in eval mode; same shape as x, values in [0, 1]"""
    net.check_batch(x)
    with evaluating(net):
        return run_batched(net, x, batch_size)
