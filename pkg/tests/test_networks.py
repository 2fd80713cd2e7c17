import pytest
import torch

from base import NETWORK_REGISTRY, ResNetConfig, TopologyConfig, UNetConfig
from errors import ConfigurationError, DomainError
from Networks import (
    FeatureExtractor,
    IdentityTransform,
    build_classifier,
    build_feature_extractor,
    build_transform_net,
    classify,
    extract_features,
    forward_transform,
)


def test_registry_knows_every_architecture():
    assert {"unet-transform", "unet-inverse", "resnet-cifar", "identity"} <= set(NETWORK_REGISTRY)


def test_transform_preserves_shape_and_range(toy_transform, toy_images):
    out = forward_transform(toy_transform, toy_images)
    assert out.shape == toy_images.shape
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_deeper_transform_on_cifar_sized_input():
    net = build_transform_net(UNetConfig(depth=3, width=4))
    out = forward_transform(net, torch.rand((2, 3, 32, 32)))
    assert out.shape == (2, 3, 32, 32)


def test_transform_rejects_wrong_rank_and_channels(toy_transform):
    with pytest.raises(DomainError):
        toy_transform(torch.rand((3, 8, 8)))
    with pytest.raises(DomainError):
        toy_transform(torch.rand((1, 1, 8, 8)))


def test_transform_rejects_indivisible_size():
    net = build_transform_net(UNetConfig(depth=3, width=4))
    with pytest.raises(DomainError):
        net(torch.rand((1, 3, 10, 10)))


def test_init_seed_makes_parameters_reproducible(toy_unet_config):
    a = build_transform_net(toy_unet_config, init_seed=4)
    b = build_transform_net(toy_unet_config, init_seed=4)
    c = build_transform_net(toy_unet_config, init_seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_classifier_rows_lie_on_simplex(toy_classifier, toy_images):
    probabilities = classify(toy_classifier, toy_images)
    assert probabilities.shape == (6, 4)
    assert torch.all(probabilities >= 0)
    assert torch.allclose(probabilities.sum(dim=1), torch.ones(6), atol=1e-6)


def test_classify_restores_training_mode(toy_classifier, toy_images):
    toy_classifier.train()
    classify(toy_classifier, toy_images)
    assert toy_classifier.training


def test_default_classifier_is_resnet20_sized():
    net = build_classifier(ResNetConfig())
    # stem conv + bn, 9 residual blocks, fc
    assert 250_000 < net.num_parameters() < 300_000


@pytest.mark.parametrize("values", [{"depth": 0}, {"activation": "gelu"}, {"norm": "layer"}, {"bogus": 1}])
def test_bad_topology_is_a_configuration_error(values):
    with pytest.raises(ConfigurationError):
        UNetConfig.from_dict(values, prefix="transform_net.")


def test_identity_returns_input(toy_images):
    net = IdentityTransform(TopologyConfig())
    assert torch.equal(forward_transform(net, toy_images), toy_images)
    assert net.num_parameters() == 0


def test_feature_layer_zero_is_identity(toy_images):
    phi = FeatureExtractor(None, 0)
    assert torch.equal(phi(toy_images), toy_images)
    assert phi.description == "identity"


def test_feature_maps_have_expected_shape(toy_classifier, toy_images):
    phi = FeatureExtractor(toy_classifier, 1)
    assert extract_features(phi, toy_images).shape == (6, 4, 8, 8)
    assert phi.output_shape((3, 8, 8)) == (4, 8, 8)


def test_feature_extractor_leaves_weights_and_statistics_alone(toy_classifier, toy_images):
    phi = FeatureExtractor(toy_classifier, 2)
    toy_classifier.train()
    stats_before = toy_classifier.stem[1].running_mean.clone()
    x = toy_images.clone().requires_grad_(True)
    phi(x).sum().backward()
    assert x.grad is not None
    assert all(p.grad is None for p in toy_classifier.parameters())
    assert torch.equal(toy_classifier.stem[1].running_mean, stats_before)
    assert toy_classifier.training


def test_feature_layer_beyond_depth_is_rejected(toy_classifier):
    with pytest.raises(ConfigurationError):
        FeatureExtractor(toy_classifier, 5)


def test_build_feature_extractor_sources(toy_transform, toy_classifier):
    assert build_feature_extractor("classifier", 2, toy_transform, toy_classifier).source is toy_classifier
    assert build_feature_extractor("transform", 1, toy_transform, toy_classifier).source is toy_transform
    assert build_feature_extractor("none", 0).source is None
    with pytest.raises(ConfigurationError):
        build_feature_extractor("classifier", 2, toy_transform, None)
    with pytest.raises(ConfigurationError):
        build_feature_extractor("vgg", 2, toy_transform, toy_classifier)
