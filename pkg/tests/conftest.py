"""Shared fixtures: toy topologies, generated image sets and a stand-in CIFAR archive reader."""

import dataclasses
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple

import pytest
import torch
import yaml

import data_utils
from base import ResNetConfig, UNetConfig
from config import AttackConfig, TrainConfig
from data_utils import DatasetSplit, ImageSet
from debug_utils import set_progress
from Networks import build_classifier, build_inverse_net, build_transform_net
from utils import derive_seed, torch_generator

CIFAR_ROOT = Path("./data")

# training archive size and validation size while the stand-in reader is active
FAKE_TRAIN_SIZE = 160
FAKE_VAL_SIZE = 32
FAKE_TEST_SIZE = 48


def make_synthetic_split(
    num_classes: int = 10,
    sizes: Tuple[int, int, int] = (600, 200, 200),
    split_seed: int = 0,
    image_shape: Tuple[int, int, int] = (3, 32, 32),
    noise: float = 0.15,
) -> DatasetSplit:
    """
    Class-conditional random images: each class has a smooth base pattern, each sample adds noise.
    Deterministic in split_seed; stored as uint8 like the CIFAR archives.
    """
    generator = torch_generator(derive_seed(split_seed, "synthetic"))
    channels, height, width = image_shape
    coarse = torch.rand((num_classes, channels, 4, 4), generator=generator)
    patterns = torch.nn.functional.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=False)

    def draw(count: int, offset: int) -> ImageSet:
        labels = torch.arange(count) % num_classes
        labels = labels[torch.randperm(count, generator=generator)]
        jitter = (torch.rand((count, channels, height, width), generator=generator) - 0.5) * 2 * noise
        images = (patterns[labels] + jitter).clamp(0, 1)
        pixels = torch.round(images * 255).to(torch.uint8)
        return ImageSet(pixels, labels, num_classes, torch.arange(count) + offset)

    n_train, n_val, n_test = sizes
    train = draw(n_train, 0)
    val = draw(n_val, n_train)
    test = draw(n_test, n_train + n_val)
    return DatasetSplit("synthetic", train, val, test, num_classes, split_seed)


def _fake_read_archive(profile, root, train, download):
    split = make_synthetic_split(profile.num_classes, sizes=(FAKE_TRAIN_SIZE, 0, FAKE_TEST_SIZE), split_seed=11)
    part = split.train if train else split.test
    return part.pixels.clone(), part.labels.clone()


@contextmanager
def fake_cifar_archives() -> Iterator[None]:
    """load_dataset reads small generated 32x32 archives instead of the CIFAR files"""
    with pytest.MonkeyPatch.context() as patch:
        patch.setattr(data_utils, "_read_archive", _fake_read_archive)
        patch.setattr(data_utils, "CIFAR_TRAIN_SIZE", FAKE_TRAIN_SIZE)
        for name, profile in list(data_utils.DATASET_PROFILES.items()):
            patch.setitem(data_utils.DATASET_PROFILES, name, dataclasses.replace(profile, val_size=FAKE_VAL_SIZE))
        yield


@pytest.fixture
def fake_cifar():
    with fake_cifar_archives():
        yield


@pytest.fixture(autouse=True)
def _quiet_progress():
    set_progress(False)
    yield
    set_progress(True)


@pytest.fixture
def toy_unet_config() -> UNetConfig:
    return UNetConfig(depth=1, width=4)


@pytest.fixture
def toy_resnet_config() -> ResNetConfig:
    return ResNetConfig(num_classes=4, stages=1, blocks_per_stage=1, width=4)


@pytest.fixture
def toy_split() -> DatasetSplit:
    """4 classes of 8x8 images: 48 train, 16 val, 16 test"""
    return make_synthetic_split(num_classes=4, sizes=(48, 16, 16), split_seed=3, image_shape=(3, 8, 8))


@pytest.fixture
def toy_transform(toy_unet_config):
    return build_transform_net(toy_unet_config, init_seed=0)


@pytest.fixture
def toy_inverse(toy_unet_config):
    return build_inverse_net(toy_unet_config, init_seed=1)


@pytest.fixture
def toy_classifier(toy_resnet_config):
    return build_classifier(toy_resnet_config, init_seed=0)


@pytest.fixture
def toy_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=16, base_lr=0.05, lr_milestones=[])


@pytest.fixture
def toy_attack_config() -> AttackConfig:
    return AttackConfig(epochs=2, batch_size=16, base_lr=0.05, lr_milestones=[])


@pytest.fixture
def toy_images() -> torch.Tensor:
    generator = torch.Generator().manual_seed(0)
    return torch.rand((6, 3, 8, 8), generator=generator)


def cifar_available(name: str = "cifar-10-batches-py") -> bool:
    return (CIFAR_ROOT / name).is_dir()


def read_report(path: Path) -> Tuple[Dict[str, Any], List[float]]:
    """Report summary plus its PSNR values, one float per line of the side file"""
    with open(path, encoding="utf-8") as handle:
        summary = yaml.safe_load(handle)
    lines = (path.parent / summary["psnr_file"]).read_text(encoding="utf-8").split()
    return summary, [float(line) for line in lines]
