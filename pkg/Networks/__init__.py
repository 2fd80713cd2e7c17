"""Network package exporting the transformation, classification, feature and inverse networks."""

from .common import evaluating
from .unet import InverseNet, TransformNet, build_inverse_net, build_transform_net, forward_transform
from .resnet import Classifier, build_classifier, classify
from .identity import IdentityTransform
from .features import FeatureExtractor, build_feature_extractor, extract_features

__all__ = [
    "evaluating",
    "TransformNet",
    "InverseNet",
    "build_transform_net",
    "build_inverse_net",
    "forward_transform",
    "Classifier",
    "build_classifier",
    "classify",
    "IdentityTransform",
    "FeatureExtractor",
    "build_feature_extractor",
    "extract_features",
]
