"""
Dataset ingestion, deterministic train/validation/test splitting, augmentation and label encoding.

CIFAR archives are read through torchvision; images are kept as uint8 [N, C, H, W] tensors and
scaled to [0, 1] (divide by 255, no per-channel standardization) when handed to a network.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, Sampler
import torchvision
import torchvision.transforms.functional as TF

from colors import info, warning
from debug_utils import debug_print, status_print
from errors import ConfigurationError, DomainError, IngestionError
from utils import derive_seed, torch_generator

CIFAR_TRAIN_SIZE = 50_000
TEST_INDEX_OFFSET = CIFAR_TRAIN_SIZE  # test images are numbered after the 50,000 training images


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    num_classes: int
    val_size: int
    archive_dir: str
    loader: type


DATASET_PROFILES: Dict[str, DatasetProfile] = {
    "cifar10": DatasetProfile("cifar10", 10, 5_000, "cifar-10-batches-py", torchvision.datasets.CIFAR10),
    "cifar100": DatasetProfile("cifar100", 100, 2_500, "cifar-100-python", torchvision.datasets.CIFAR100),
}


@dataclass
class LabeledImage:
    """One image [C, H, W] with values in [0, 1] and its integer class"""
    pixels: torch.Tensor
    label: int


@dataclass
class ImageSet:
    """
    A block of labeled images.

    pixels is uint8 [N, C, H, W] (or floating point already in [0, 1]); indices are the images'
    positions in the source archive, used to check split disjointness.
    """
    pixels: torch.Tensor
    labels: torch.Tensor
    num_classes: int
    indices: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.pixels.dim() != 4:
            raise DomainError(f"expected [N, C, H, W] pixels, got {tuple(self.pixels.shape)}")
        if self.labels.shape != (self.pixels.shape[0],):
            raise DomainError(f"{len(self.labels)} labels for {self.pixels.shape[0]} images")
        self.labels = self.labels.to(torch.int64)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        if self.pixels.is_floating_point() and len(self.pixels):
            if self.pixels.min() < 0 or self.pixels.max() > 1:
                raise DomainError("floating point pixels must lie in [0, 1]")
        if self.indices is None:
            self.indices = torch.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(to_unit_range(self.pixels[i]), int(self.labels[i]))

    def __iter__(self) -> Iterator[LabeledImage]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])

    def images(self) -> torch.Tensor:
        """All images as a float32 [N, C, H, W] batch in [0, 1]"""
        return to_unit_range(self.pixels)

    def take(self, positions: Union[torch.Tensor, List[int]]) -> "ImageSet":
        positions = torch.as_tensor(positions, dtype=torch.int64)
        return ImageSet(self.pixels[positions], self.labels[positions], self.num_classes, self.indices[positions])

    def head(self, n: Optional[int]) -> "ImageSet":
        if n is None or n >= len(self):
            return self
        return self.take(torch.arange(n))


@dataclass
class DatasetSplit:
    name: str
    train: ImageSet
    val: ImageSet
    test: ImageSet
    c: int
    split_seed: int = 0

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def is_disjoint(self) -> bool:
        seen = [set(part.indices.tolist()) for part in (self.train, self.val, self.test)]
        return not (seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2])


@dataclass
class AugmentationPolicy:
    """Random crop from a zero-padded image plus horizontal flip"""
    crop_padding: int = 4
    flip_probability: float = 0.5
    enabled: bool = True

    def validate(self, prefix: str = "data.augmentation.") -> None:
        if self.crop_padding < 0:
            raise ConfigurationError("must be >= 0", key=f"{prefix}crop_padding")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", key=f"{prefix}flip_probability")


def to_unit_range(pixels: torch.Tensor) -> torch.Tensor:
    if pixels.dtype == torch.uint8:
        return pixels.to(torch.float32) / 255.0
    return pixels.to(torch.float32)


def one_hot(label: int, c: int) -> torch.Tensor:
    """Length-c vector with a single 1 at index label"""
    if not 0 <= label < c:
        raise DomainError(f"label {label} outside [0, {c})")
    vector = torch.zeros(c)
    vector[label] = 1.0
    return vector


def one_hot_matrix(labels: torch.Tensor, c: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise DomainError(f"labels outside [0, {c})")
    return torch.nn.functional.one_hot(labels, c).to(torch.float32)


def augment(
    image: LabeledImage,
    policy: AugmentationPolicy,
    rng: torch.Generator,
    force_offset: Optional[Tuple[int, int]] = None,
    force_flip: Optional[bool] = None,
) -> LabeledImage:
    """
    Random crop of the zero-padded image at an rng-chosen (top, left) offset, then a horizontal
    flip with policy.flip_probability. Shape, label and value range are preserved.
    """
    if not policy.enabled:
        return image
    pixels = image.pixels
    height, width = pixels.shape[-2:]
    pad = policy.crop_padding

    if pad > 0:
        if force_offset is None:
            top, left = torch.randint(0, 2 * pad + 1, (2,), generator=rng).tolist()
        else:
            top, left = force_offset
        padded = TF.pad(pixels, [pad, pad, pad, pad], fill=0)
        pixels = TF.crop(padded, top, left, height, width)

    flip = force_flip
    if flip is None:
        flip = bool(torch.rand(1, generator=rng).item() < policy.flip_probability)
    if flip:
        pixels = TF.hflip(pixels)
    return LabeledImage(pixels, image.label)


class AugmentedImages(Dataset):
    """
    Dataset view of an ImageSet yielding (image, label) with per-sample augmentation.

    The rng of sample i in epoch e is seeded from (seed, e, i), so results do not depend on
    worker count or iteration order.
    """

    def __init__(self, images: ImageSet, policy: Optional[AugmentationPolicy] = None, seed: int = 0):
        self.images = images
        self.policy = policy or AugmentationPolicy(enabled=False)
        self.seed = seed
        self.epoch = 1

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int):
        image = self.images[i]
        if self.policy.enabled:
            rng = torch_generator(derive_seed(self.seed, "augment", self.epoch, i))
            image = augment(image, self.policy, rng)
        return image.pixels, image.label


class EpochPermutation(Sampler):
    """Seed-derived permutation of range(n), redrawn per epoch"""

    def __init__(self, n: int, seed: int, shuffle: bool = True):
        self.n = n
        self.seed = seed
        self.shuffle = shuffle
        self.epoch = 1

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __iter__(self):
        if not self.shuffle:
            return iter(range(self.n))
        order = torch.randperm(self.n, generator=torch_generator(derive_seed(self.seed, "shuffle", self.epoch)))
        return iter(order.tolist())

    def __len__(self) -> int:
        return self.n


def make_loader(
    images: ImageSet,
    batch_size: int,
    seed: int = 0,
    policy: Optional[AugmentationPolicy] = None,
    shuffle: bool = False,
    num_workers: int = 0,
) -> DataLoader:
    """DataLoader whose dataset and sampler expose set_epoch()"""
    dataset = AugmentedImages(images, policy, seed)
    sampler = EpochPermutation(len(images), seed, shuffle)
    return DataLoader(dataset, batch_size=batch_size, sampler=sampler, num_workers=num_workers, drop_last=False)


def set_loader_epoch(loader: DataLoader, epoch: int) -> None:
    loader.dataset.set_epoch(epoch)
    loader.sampler.set_epoch(epoch)


def _read_archive(profile: DatasetProfile, root: Path, train: bool, download: bool):
    try:
        archive = profile.loader(root=str(root), train=train, download=download)
    except RuntimeError as e:
        raise IngestionError(f"{profile.name} archive missing or corrupt: {e}", [root / profile.archive_dir]) from e
    except (OSError, EOFError, ValueError, KeyError) as e:
        raise IngestionError(f"cannot read {profile.name} archive: {e}", [root / profile.archive_dir]) from e
    pixels = torch.from_numpy(np.ascontiguousarray(archive.data)).permute(0, 3, 1, 2).contiguous()
    labels = torch.tensor(archive.targets, dtype=torch.int64)
    return pixels, labels


def _validation_order(name: str, n: int, split_seed: int) -> torch.Tensor:
    return torch.randperm(n, generator=torch_generator(derive_seed(split_seed, name, "validation-split")))


def load_dataset(
    name: str,
    root: Union[str, Path] = "./data",
    split_seed: int = 0,
    download: bool = False,
    limits: Optional[Tuple[Optional[int], Optional[int], Optional[int]]] = None,
) -> DatasetSplit:
    """
    Load a dataset and split its training archive into train/validation.

    The validation images are drawn uniformly from the training archive by a permutation seeded
    from (name, split_seed). limits optionally caps (train, val, test) sizes for desk-scale runs;
    capped parts keep the first images of the seeded order, so they are nested across limits.
    """
    profile = DATASET_PROFILES.get(name)
    if profile is None:
        raise ConfigurationError(f"unknown dataset {name!r} (available: {', '.join(DATASET_PROFILES)})",
                                 key="dataset")
    train_limit, val_limit, test_limit = limits or (None, None, None)

    root = Path(root)
    debug_print(f"data: reading {name} from {root} (download={download})", info)
    pixels, labels = _read_archive(profile, root, train=True, download=download)
    test_pixels, test_labels = _read_archive(profile, root, train=False, download=download)
    if len(labels) != CIFAR_TRAIN_SIZE:
        raise IngestionError(f"{name}: expected {CIFAR_TRAIN_SIZE} training images, found {len(labels)}",
                             [root / profile.archive_dir])

    order = _validation_order(name, len(labels), split_seed)
    val_positions = order[:profile.val_size][:val_limit]
    train_positions = order[profile.val_size:][:train_limit]
    val_positions, _ = torch.sort(val_positions)
    train_positions, _ = torch.sort(train_positions)

    full = ImageSet(pixels, labels, profile.num_classes)
    test = ImageSet(test_pixels, test_labels, profile.num_classes,
                    torch.arange(len(test_labels)) + TEST_INDEX_OFFSET).head(test_limit)
    split = DatasetSplit(name, full.take(train_positions), full.take(val_positions), test,
                         profile.num_classes, split_seed)
    if not split.is_disjoint():
        raise IngestionError(f"{name}: train, validation and test images overlap", [root / profile.archive_dir])
    if limits:
        status_print(f"Using a {name} subset: {split.sizes()} (train/val/test)", warning)
    return split

