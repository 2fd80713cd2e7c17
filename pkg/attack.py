"""
ITN-Attack: with the public transform h, build (plain, protected) pairs, train an inverse
network g on them, and estimate plain images from protected ones.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
import yaml
from torch.utils.data import DataLoader, TensorDataset

from checkpoint import checkpoint_digest
from colors import dim, metric, stage
from config import AttackConfig
from data_utils import EpochPermutation, ImageSet, LabeledImage
from debug_utils import debug_print, progress, status_print
from errors import DomainError, FileError, TrainingDivergedError
from Networks.common import evaluating, network_device, network_dtype, run_batched
from Networks.unet import forward_transform
from training import make_lr_schedule, sgd_step
from utils import derive_seed, sha256_bytes

PathLike = Union[str, Path]


@dataclass
class AttackPair:
    plain: torch.Tensor
    protected: torch.Tensor


@dataclass
class PairSet:
    """n (plain, protected) pairs stored as two aligned [n, C, H, W] batches"""
    plain: torch.Tensor
    protected: torch.Tensor

    def __post_init__(self):
        if self.plain.shape != self.protected.shape:
            raise DomainError(f"plain {tuple(self.plain.shape)} and protected {tuple(self.protected.shape)} differ")

    def __len__(self) -> int:
        return len(self.plain)

    def __getitem__(self, i: int) -> AttackPair:
        return AttackPair(self.plain[i], self.protected[i])

    def __iter__(self) -> Iterator[AttackPair]:
        for i in range(len(self)):
            yield self[i]

    def digests(self) -> Tuple[str, str]:
        return (sha256_bytes(self.plain.cpu().numpy().tobytes()),
                sha256_bytes(self.protected.cpu().numpy().tobytes()))


@dataclass
class AttackEpochRecord:
    epoch: int
    lr: float
    train_mse: float


def _as_batch(images: Union[ImageSet, Sequence[LabeledImage], torch.Tensor]) -> torch.Tensor:
    if isinstance(images, ImageSet):
        return images.images()
    if isinstance(images, torch.Tensor):
        return images
    images = list(images)
    if not images:
        raise DomainError("no images to build attack pairs from")
    return torch.stack([img.pixels if isinstance(img, LabeledImage) else img for img in images])


def generate_pairs(h: torch.nn.Module, images, batch_size: int = 512) -> PairSet:
    """One pair per image, in input order; protected = h(plain) in eval mode"""
    plain = _as_batch(images)
    if len(plain) == 0:
        raise DomainError("no images to build attack pairs from")
    protected = forward_transform(h, plain, batch_size=batch_size)
    debug_print(f"attack: generated {len(plain)} pairs")
    return PairSet(plain, protected)


def verify_pairs(h: torch.nn.Module, pairs: PairSet, batch_size: int = 512) -> bool:
    """True when recomputing h(plain) reproduces every stored protected image exactly"""
    recomputed = forward_transform(h, pairs.plain, batch_size=batch_size)
    return torch.equal(recomputed, pairs.protected)


def write_pair_manifest(pairs: PairSet, path: PathLike, transform_checkpoint: Optional[PathLike],
                        pair_source: str) -> Path:
    """Record which h checkpoint (by sha256) produced the pairs"""
    path = Path(path)
    plain_digest, protected_digest = pairs.digests()
    manifest = {
        "pairs": len(pairs),
        "pair_source": pair_source,
        "image_shape": list(pairs.plain.shape[1:]),
        "transform_checkpoint": str(transform_checkpoint) if transform_checkpoint else None,
        "transform_sha256": checkpoint_digest(transform_checkpoint) if transform_checkpoint else None,
        "plain_sha256": plain_digest,
        "protected_sha256": protected_digest,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(manifest, handle, sort_keys=False)
    except OSError as e:
        raise FileError(f"cannot write pair manifest: {e}", [path]) from e
    return path


def reconstruction_mse(g: torch.nn.Module, pairs: PairSet, batch_size: int = 512) -> float:
    """Mean squared pixel error of g(protected) against plain over all pairs"""
    estimates = estimate(g, pairs.protected, batch_size=batch_size)
    return float(F.mse_loss(estimates.double(), pairs.plain.double()))


def train_inverse(
    pairs: PairSet, g: torch.nn.Module, cfg: AttackConfig, epochs: Optional[int] = None
) -> Tuple[torch.nn.Module, List[AttackEpochRecord]]:
    """
    Fit g to map protected images back to plain ones by minibatch SGD on pixel MSE.

    Uses the same schedule and sgd_step as the protection trainer. epochs overrides cfg.epochs;
    0 epochs returns g untouched.

    Returns:
        (g, per-epoch records)
    """
    if len(pairs) == 0:
        raise DomainError("train_inverse needs at least one pair")
    epochs = cfg.epochs if epochs is None else epochs
    if epochs < 0:
        raise DomainError(f"epochs must be >= 0, got {epochs}")
    records: List[AttackEpochRecord] = []
    if epochs == 0:
        return g, records

    g.check_batch(pairs.protected[:1])
    schedule = make_lr_schedule(cfg.base_lr, cfg.lr_milestones, cfg.lr_factor)
    device, dtype = network_device(g), network_dtype(g)
    params = list(g.parameters())
    velocity = [None] * len(params)

    sampler = EpochPermutation(len(pairs), derive_seed(cfg.seed, "attack"))
    loader = DataLoader(TensorDataset(pairs.protected, pairs.plain), batch_size=cfg.batch_size, sampler=sampler)

    status_print(f"{stage('attack')} training inverse network on {len(pairs)} pairs for {epochs} epochs")
    for epoch in range(1, epochs + 1):
        lr = schedule(epoch)
        sampler.set_epoch(epoch)
        g.train()
        total, seen = 0.0, 0
        for batch_index, (protected, plain) in enumerate(progress(loader, desc=f"attack {epoch}/{epochs}"), start=1):
            protected = protected.to(device=device, dtype=dtype)
            plain = plain.to(device=device, dtype=dtype)
            loss = F.mse_loss(g(protected), plain)
            value = float(loss)
            if not math.isfinite(value):
                raise TrainingDivergedError("train_inverse", epoch, batch_index, value)
            grads = torch.autograd.grad(loss, params)
            sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, velocity)
            total += value * len(plain)
            seen += len(plain)
        record = AttackEpochRecord(epoch, lr, total / seen)
        records.append(record)
        status_print(f"attack epoch {epoch:>3}/{epochs} {dim(f'lr={lr:g}')} mse {metric(f'{record.train_mse:.5f}')}")
    g.eval()
    return g, records


def estimate(g: torch.nn.Module, protected: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """g's estimate of the plain images; same shape as protected, values in [0, 1]"""
    g.check_batch(protected)
    with evaluating(g):
        return run_batched(g, protected, batch_size)
