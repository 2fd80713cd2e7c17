from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torch.func import functional_call

from base import BaseNetwork
from errors import ConfigurationError, DomainError


@contextmanager
def _eval_layers(layers: Sequence[nn.Module]) -> Iterator[None]:
    modules = [m for layer in layers for m in layer.modules()]
    modes = [m.training for m in modules]
    try:
        for m in modules:
            m.training = False
        yield
    finally:
        for m, mode in zip(modules, modes):
            m.training = mode


class FeatureExtractor:
    """
    phi_k: output of the k-th feature layer of a source network (k = 0 is the raw image).

    Source layers run in eval mode with detached parameters: gradients reach the input image
    but never the source network's weights, and its batch-norm statistics are left untouched.
    """

    def __init__(self, source: Optional[BaseNetwork] = None, k: int = 0):
        if k < 0:
            raise ConfigurationError(f"layer index must be >= 0, got {k}", key="features.layer")
        self.k = k
        self.source = source
        self._layers: List[nn.Module] = []
        if k > 0:
            if source is None:
                raise ConfigurationError("layer index > 0 needs a source network", key="features.layer")
            layers = source.feature_layers()
            if k > len(layers):
                raise ConfigurationError(
                    f"{source.arch_id} has {len(layers)} feature layers, got k={k}", key="features.layer"
                )
            self._layers = layers[:k]

    @property
    def description(self) -> str:
        if self.k == 0:
            return "identity"
        return f"{self.source.arch_id}[{self.k}]"

    def check_batch(self, x: torch.Tensor) -> None:
        if self.source is not None:
            self.source.check_batch(x)
        elif not isinstance(x, torch.Tensor) or x.dim() != 4:
            raise DomainError(f"feature extractor expects a [m, C, H, W] batch, got {getattr(x, 'shape', x)}")

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if not self._layers:
            return x
        out = x
        with _eval_layers(self._layers):
            for layer in self._layers:
                detached = {name: p.detach() for name, p in layer.named_parameters()}
                out = functional_call(layer, detached, (out,))
        return out

    def output_shape(self, input_shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
        """(C_k, H_k, W_k) for a single [C, H, W] input"""
        sample = torch.zeros((1, *input_shape))
        if self.source is not None:
            for tensor in self.source.parameters():
                sample = sample.to(device=tensor.device, dtype=tensor.dtype)
                break
        with torch.no_grad():
            return tuple(self(sample).shape[1:])


def extract_features(phi: FeatureExtractor, x: torch.Tensor) -> torch.Tensor:
    """Feature maps [m, C_k, H_k, W_k] of a batch, without autograd"""
    phi.check_batch(x)
    with torch.no_grad():
        return phi(x)


def build_feature_extractor(source: str, layer: int, h: Optional[BaseNetwork] = None,
                            psi: Optional[BaseNetwork] = None) -> FeatureExtractor:
    """phi_k from a config: source is "classifier", "transform" or "none" (raw pixels)"""
    networks = {"classifier": psi, "transform": h, "none": None}
    if source not in networks:
        raise ConfigurationError(f"unknown feature source {source!r}", key="features.source")
    network = networks[source]
    if layer > 0 and network is None:
        raise ConfigurationError(f"feature source {source!r} is not available", key="features.source")
    return FeatureExtractor(network if layer > 0 else None, layer)
