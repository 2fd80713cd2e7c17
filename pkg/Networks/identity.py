import torch

from base import BaseNetwork, TopologyConfig, register_network


@register_network
class IdentityTransform(BaseNetwork):
    """Parameter-free transform returning its input; stands in for h_theta in the plain-image
    baseline and for the invertible positive control of the attack"""

    arch_id = "identity"
    config_cls = TopologyConfig

    def __init__(self, config: TopologyConfig = None):
        super().__init__(config or TopologyConfig())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_batch(x)
        return x
