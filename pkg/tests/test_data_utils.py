import pytest
import torch

from conftest import CIFAR_ROOT, FAKE_TEST_SIZE, FAKE_TRAIN_SIZE, FAKE_VAL_SIZE, cifar_available
from data_utils import (
    AugmentationPolicy,
    ImageSet,
    LabeledImage,
    augment,
    load_dataset,
    make_loader,
    one_hot,
    one_hot_matrix,
    set_loader_epoch,
)
from errors import ConfigurationError, DomainError, IngestionError
from utils import torch_generator


def test_one_hot_places_single_one():
    assert one_hot(3, 10).tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert one_hot(0, 1).tolist() == [1.0]


@pytest.mark.parametrize("label", [-1, 10])
def test_one_hot_rejects_out_of_range(label):
    with pytest.raises(DomainError):
        one_hot(label, 10)


def test_one_hot_matrix_rows_sum_to_one():
    matrix = one_hot_matrix(torch.tensor([2, 0, 1]), 3)
    assert matrix.shape == (3, 3)
    assert torch.equal(matrix.sum(dim=1), torch.ones(3))
    assert torch.equal(matrix.argmax(dim=1), torch.tensor([2, 0, 1]))


def test_image_set_rejects_bad_labels():
    pixels = torch.zeros((2, 3, 4, 4), dtype=torch.uint8)
    with pytest.raises(DomainError):
        ImageSet(pixels, torch.tensor([0, 5]), num_classes=3)
    with pytest.raises(DomainError):
        ImageSet(pixels, torch.tensor([0]), num_classes=3)


def test_image_set_scales_uint8_to_unit_range():
    pixels = torch.full((1, 3, 2, 2), 255, dtype=torch.uint8)
    images = ImageSet(pixels, torch.tensor([0]), num_classes=2)
    assert torch.equal(images.images(), torch.ones((1, 3, 2, 2)))
    assert images[0].label == 0


def test_seeded_split_is_deterministic_and_disjoint(fake_cifar):
    first = load_dataset("cifar10", split_seed=5)
    second = load_dataset("cifar10", split_seed=5)
    assert first.sizes() == (FAKE_TRAIN_SIZE - FAKE_VAL_SIZE, FAKE_VAL_SIZE, FAKE_TEST_SIZE)
    assert first.is_disjoint()
    for a, b in ((first.train, second.train), (first.val, second.val), (first.test, second.test)):
        assert torch.equal(a.indices, b.indices)
        assert torch.equal(a.pixels, b.pixels)


def test_split_seed_changes_validation_membership(fake_cifar):
    first = load_dataset("cifar10", split_seed=5)
    other = load_dataset("cifar10", split_seed=6)
    assert not torch.equal(first.val.indices, other.val.indices)
    assert torch.equal(first.test.indices, other.test.indices)


def test_limited_split_is_nested_in_the_full_one(fake_cifar):
    full = load_dataset("cifar10", split_seed=2)
    limited = load_dataset("cifar10", split_seed=2, limits=(20, 8, 4))
    assert limited.sizes() == (20, 8, 4)
    assert set(limited.train.indices.tolist()) <= set(full.train.indices.tolist())
    assert set(limited.val.indices.tolist()) <= set(full.val.indices.tolist())
    assert limited.is_disjoint()


def test_missing_archive_is_an_ingestion_error(tmp_path):
    with pytest.raises(IngestionError) as raised:
        load_dataset("cifar10", tmp_path)
    assert raised.value.exit_code == 3
    assert raised.value.paths == [str(tmp_path / "cifar-10-batches-py")]


def test_corrupt_archive_is_an_ingestion_error(tmp_path):
    archive = tmp_path / "cifar-10-batches-py"
    archive.mkdir()
    for name in ["batches.meta", "test_batch"] + [f"data_batch_{i}" for i in range(1, 6)]:
        (archive / name).write_bytes(b"truncated")
    with pytest.raises(IngestionError):
        load_dataset("cifar10", tmp_path)


def test_augment_preserves_shape_label_and_range():
    image = LabeledImage(torch.rand((3, 8, 8)), 2)
    policy = AugmentationPolicy(crop_padding=2, flip_probability=0.5)
    out = augment(image, policy, torch_generator(0))
    assert out.pixels.shape == (3, 8, 8)
    assert out.label == 2
    assert 0.0 <= float(out.pixels.min()) and float(out.pixels.max()) <= 1.0


def test_augment_centre_crop_without_flip_is_identity():
    image = LabeledImage(torch.rand((3, 8, 8)), 1)
    policy = AugmentationPolicy(crop_padding=4)
    out = augment(image, policy, torch_generator(0), force_offset=(4, 4), force_flip=False)
    assert torch.equal(out.pixels, image.pixels)


def test_augment_forced_flip_mirrors_columns():
    pixels = torch.arange(3 * 2 * 4, dtype=torch.float32).reshape(3, 2, 4) / 24
    policy = AugmentationPolicy(crop_padding=0)
    out = augment(LabeledImage(pixels, 0), policy, torch_generator(0), force_flip=True)
    assert torch.equal(out.pixels, pixels.flip(-1))


def test_augment_corner_crop_shifts_in_zero_padding():
    pixels = torch.ones((3, 8, 8))
    policy = AugmentationPolicy(crop_padding=4)
    out = augment(LabeledImage(pixels, 0), policy, torch_generator(0), force_offset=(0, 0), force_flip=False)
    assert torch.all(out.pixels[:, :4, :] == 0)
    assert torch.all(out.pixels[:, 4:, 4:] == 1)


def test_disabled_policy_returns_input():
    image = LabeledImage(torch.rand((3, 8, 8)), 0)
    assert augment(image, AugmentationPolicy(enabled=False), torch_generator(0)) is image


def test_augmentation_policy_validation():
    with pytest.raises(ConfigurationError):
        AugmentationPolicy(flip_probability=1.5).validate()
    with pytest.raises(ConfigurationError):
        AugmentationPolicy(crop_padding=-1).validate()


def _epoch_batches(loader, epoch):
    set_loader_epoch(loader, epoch)
    return [(x.clone(), y.clone()) for x, y in loader]


def test_loader_is_reproducible_per_epoch(toy_split):
    policy = AugmentationPolicy()
    first = make_loader(toy_split.train, batch_size=16, seed=7, policy=policy, shuffle=True)
    second = make_loader(toy_split.train, batch_size=16, seed=7, policy=policy, shuffle=True)
    a, b = _epoch_batches(first, 3), _epoch_batches(second, 3)
    for (xa, ya), (xb, yb) in zip(a, b):
        assert torch.equal(xa, xb)
        assert torch.equal(ya, yb)


def test_loader_reshuffles_between_epochs(toy_split):
    loader = make_loader(toy_split.train, batch_size=48, seed=7, shuffle=True)
    (_, labels_1), = _epoch_batches(loader, 1)
    (_, labels_2), = _epoch_batches(loader, 2)
    assert sorted(labels_1.tolist()) == sorted(labels_2.tolist())
    order_1 = list(loader.sampler)
    set_loader_epoch(loader, 1)
    assert list(loader.sampler) != order_1 or len(order_1) < 2


def test_unknown_dataset_is_a_configuration_error():
    with pytest.raises(ConfigurationError) as raised:
        load_dataset("mnist")
    assert raised.value.key == "dataset"


def test_cifar100_profile_has_100_classes(fake_cifar):
    split = load_dataset("cifar100", limits=(30, 10, 5))
    assert split.sizes() == (30, 10, 5)
    assert split.c == 100


@pytest.mark.slow
@pytest.mark.skipif(not cifar_available(), reason="CIFAR-10 archive not present")
def test_cifar10_split_sizes_and_disjointness():
    split = load_dataset("cifar10", CIFAR_ROOT)
    assert split.sizes() == (45_000, 5_000, 10_000)
    assert split.is_disjoint()
    assert split.train.image_shape == (3, 32, 32)


@pytest.mark.slow
@pytest.mark.skipif(not cifar_available("cifar-100-python"), reason="CIFAR-100 archive not present")
def test_cifar100_split_sizes():
    split = load_dataset("cifar100", CIFAR_ROOT)
    assert split.sizes() == (47_500, 2_500, 10_000)
    assert split.c == 100
