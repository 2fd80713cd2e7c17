"""Layers shared by the encoder-decoder and residual networks."""

from contextlib import contextmanager
from typing import Iterator

import torch
from torch import nn


@contextmanager
def evaluating(*nets: nn.Module) -> Iterator[None]:
    """Eval mode and no autograd for the block; restores each network's previous mode"""
    modes = [net.training for net in nets]
    try:
        for net in nets:
            net.eval()
        with torch.no_grad():
            yield
    finally:
        for net, mode in zip(nets, modes):
            net.train(mode)


def network_device(net: nn.Module) -> torch.device:
    for tensor in net.parameters():
        return tensor.device
    for tensor in net.buffers():
        return tensor.device
    return torch.device("cpu")


def network_dtype(net: nn.Module, default: torch.dtype = torch.float32) -> torch.dtype:
    for tensor in net.parameters():
        return tensor.dtype
    return default


def run_batched(net: nn.Module, x: torch.Tensor, batch_size: int) -> torch.Tensor:
    """Apply net to x in chunks on the net's device; result comes back on x's device"""
    device = network_device(net)
    dtype = network_dtype(net, default=x.dtype)
    outputs = [net(chunk.to(device=device, dtype=dtype)).to(x.device)
               for chunk in torch.split(x, batch_size)]
    return torch.cat(outputs)


def make_activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=False)
    if name == "softplus":
        return nn.Softplus()
    if name == "tanh":
        return nn.Tanh()
    raise ValueError(f"unknown activation {name!r}")


def make_norm(name: str, channels: int) -> nn.Module:
    if name == "batch":
        return nn.BatchNorm2d(channels)
    return nn.Identity()


def conv_block(in_channels: int, out_channels: int, activation: str, norm: str) -> nn.Sequential:
    """Two 3x3 convolutions, each followed by normalization and activation"""
    use_bias = norm == "none"
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1, bias=use_bias),
        make_norm(norm, out_channels),
        make_activation(activation),
        nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1, bias=use_bias),
        make_norm(norm, out_channels),
        make_activation(activation),
    )


class ResidualBlock(nn.Module):
    """
    Basic residual block of the CIFAR ResNets: two 3x3 convolutions with a skip connection,
    downsampling in the first convolution when stride > 1
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 activation: str = "relu", norm: str = "batch"):
        super().__init__()
        use_bias = norm == "none"
        self.first_conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride,
                                    padding=1, bias=use_bias)
        self.norm1 = make_norm(norm, out_channels)
        self.second_conv = nn.Conv2d(out_channels, out_channels, kernel_size=3, stride=1,
                                     padding=1, bias=use_bias)
        self.norm2 = make_norm(norm, out_channels)
        self.act1 = make_activation(activation)
        self.act2 = make_activation(activation)

        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride, bias=use_bias),
                make_norm(norm, out_channels),
            )

    def forward(self, x):
        out = self.act1(self.norm1(self.first_conv(x)))
        out = self.norm2(self.second_conv(out))
        return self.act2(out + self.shortcut(x))
