"""
Joint optimization of the transformation network h_theta and the classifier psi.

One SGD step updates both parameter sets from the same minibatch objective; validation runs
after every epoch, each epoch is checkpointed, and the epoch with the lowest validation loss
is selected at the end.
"""

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import torch
from torch import nn

from base import BaseNetwork
from checkpoint import CheckpointManifest, save_checkpoint
from colors import dim, metric, stage
from config import TrainConfig
from data_utils import AugmentationPolicy, DatasetSplit, ImageSet, make_loader, one_hot_matrix, set_loader_epoch
from debug_utils import debug_print, progress, status_print
from errors import ConfigurationError, DomainError, TrainingDivergedError
from losses import batch_objective_terms, transformation_terms
from Networks.common import evaluating, network_device, network_dtype
from Networks.features import FeatureExtractor

LRSchedule = Callable[[int], float]
VelocityState = List[Optional[torch.Tensor]]


def make_lr_schedule(base: float, milestones: Sequence[int], factor: float) -> LRSchedule:
    """
    Step decay: lr(e) = base * factor ** #{m in milestones : m <= e} for 1-indexed epochs e.

    Values are rounded to 15 significant digits so decimal recipes come out as written
    (0.1 * 0.2 gives 0.02, not 0.020000000000000004).
    """
    if base <= 0:
        raise ConfigurationError(f"must be > 0, got {base}", key="base_lr")
    if factor <= 0:
        raise ConfigurationError(f"must be > 0, got {factor}", key="lr_factor")
    milestones = list(milestones)
    if any(b <= a for a, b in zip(milestones, milestones[1:])):
        raise ConfigurationError(f"must be strictly increasing, got {milestones}", key="lr_milestones")

    def lr(epoch: int) -> float:
        if epoch < 1:
            raise DomainError(f"epochs are 1-indexed, got {epoch}")
        decays = sum(1 for m in milestones if m <= epoch)
        return float(f"{base * factor ** decays:.15g}")

    return lr


def sgd_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[Optional[torch.Tensor]],
    lr: float,
    momentum: float,
    weight_decay: float,
    state: Optional[VelocityState] = None,
) -> VelocityState:
    """
    Classical momentum with coupled weight decay, in place:
        v <- momentum * v + (grad + weight_decay * param)
        param <- param - lr * v
    Velocities start at zero; returns the updated velocity buffers.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise DomainError(f"{len(params)} parameters but {len(grads)} gradients")
    if state is None:
        state = [None] * len(params)
    elif len(state) != len(params):
        raise DomainError(f"{len(params)} parameters but {len(state)} velocity buffers")

    with torch.no_grad():
        for i, (param, grad) in enumerate(zip(params, grads)):
            if grad is None:
                continue
            if grad.shape != param.shape:
                raise DomainError(f"parameter {i}: gradient shape {tuple(grad.shape)} != {tuple(param.shape)}")
            step = grad + weight_decay * param if weight_decay else grad.clone()
            velocity = state[i]
            if velocity is None:
                velocity = torch.zeros_like(param)
            elif velocity.shape != param.shape:
                raise DomainError(f"parameter {i}: velocity shape {tuple(velocity.shape)} != {tuple(param.shape)}")
            velocity.mul_(momentum).add_(step)
            param.sub_(lr * velocity)
            state[i] = velocity
    return state


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_total: float
    train_class: float
    train_feat: float
    val_total: float
    val_accuracy: float

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class CheckpointRef:
    """
    One epoch's (h, psi) snapshot: file paths when the run writes to disk, otherwise parameter
    copies (kept only for the best epoch so far, to bound memory).
    """
    epoch: int
    transform_path: Optional[Path] = None
    classifier_path: Optional[Path] = None
    states: Optional[Dict[str, Dict[str, torch.Tensor]]] = None

    @property
    def on_disk(self) -> bool:
        return self.transform_path is not None


class MetricsLog:
    """metrics.csv with one row per epoch, flushed as each epoch finishes"""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(EpochRecord.columns())

    def append(self, record: EpochRecord) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as handle:
            csv.DictWriter(handle, fieldnames=EpochRecord.columns()).writerow(asdict(record))


def read_metrics(path: Union[str, Path]) -> List[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    return [
        EpochRecord(int(row["epoch"]), *(float(row[name]) for name in EpochRecord.columns()[1:]))
        for row in rows
    ]


def _snapshot(net: nn.Module) -> Dict[str, torch.Tensor]:
    return {name: tensor.detach().cpu().clone() for name, tensor in net.state_dict().items()}


def _labels_to_targets(labels: torch.Tensor, c: int, device, dtype) -> torch.Tensor:
    return one_hot_matrix(labels, c).to(device=device, dtype=dtype)


def validate_epoch(
    h: nn.Module, psi: nn.Module, phi: FeatureExtractor, images: ImageSet, alpha: float, batch_size: int
) -> Tuple[float, float]:
    """(mean transformation loss without augmentation, accuracy in percent), computed in eval mode"""
    device, dtype = network_device(psi), network_dtype(psi)
    loader = make_loader(images, batch_size, shuffle=False)
    total, correct, count = 0.0, 0, 0
    with evaluating(h, psi):
        for x, labels in loader:
            x = x.to(device=device, dtype=dtype)
            y = _labels_to_targets(labels, images.num_classes, device, dtype)
            x_hat = h(x)
            terms = transformation_terms(x, x_hat, y, psi, phi, alpha)
            total += float(terms.total) * len(x)
            predictions = torch.argmax(psi(x_hat), dim=1)
            correct += int((predictions.cpu() == labels).sum())
            count += len(x)
    return total / count, 100.0 * correct / count


def train_joint(
    cfg: TrainConfig,
    data: DatasetSplit,
    h: BaseNetwork,
    psi: BaseNetwork,
    phi: FeatureExtractor,
    out_dir: Optional[Union[str, Path]] = None,
    policy: Optional[AugmentationPolicy] = None,
    num_workers: int = 0,
    seeds: Optional[Dict[str, int]] = None,
) -> Tuple[List[CheckpointRef], List[EpochRecord]]:
    """
    Minimize the minibatch objective over h's and (when cfg.joint) psi's parameters.

    Each epoch shuffles the training set with a permutation seeded from (cfg.seed, epoch),
    augments each sample from (cfg.seed, epoch, index), takes one sgd_step per minibatch at
    lr(epoch), then validates and checkpoints. With out_dir set, writes
    checkpoints/epoch_NNN_{transform,classifier}.pt and metrics.csv there.

    Returns:
        (checkpoint refs, epoch records), one of each per epoch
    """
    cfg.validate()
    if data.c != getattr(psi, "num_classes", data.c):
        raise ConfigurationError(f"{data.name} has {data.c} classes, classifier has {psi.num_classes}",
                                 key="classifier.num_classes")
    if len(data.train) == 0 or len(data.val) == 0:
        raise DomainError(f"training needs non-empty train and validation sets, got {data.sizes()}")

    schedule = make_lr_schedule(cfg.base_lr, cfg.lr_milestones, cfg.lr_factor)
    device, dtype = network_device(psi), network_dtype(psi)
    params = list(h.parameters()) + (list(psi.parameters()) if cfg.joint else [])
    if not params:
        raise ConfigurationError("nothing to train: the transform has no parameters and psi is frozen", key="train.joint")
    velocity: VelocityState = [None] * len(params)

    loader = make_loader(data.train, cfg.batch_size, seed=cfg.seed, policy=policy, shuffle=True,
                         num_workers=num_workers)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics = MetricsLog(out_dir / "metrics.csv") if out_dir is not None else None
    run_seeds = {"train": cfg.seed, "init": cfg.init_seed, "split": data.split_seed, **(seeds or {})}

    status_print(
        f"{stage('train')} {data.name}: {len(data.train)} train / {len(data.val)} val, alpha={cfg.alpha}, "
        f"{cfg.epochs} epochs, phi={phi.description}, joint={cfg.joint}"
    )

    checkpoints: List[CheckpointRef] = []
    records: List[EpochRecord] = []
    best_val = math.inf
    for epoch in range(1, cfg.epochs + 1):
        lr = schedule(epoch)
        set_loader_epoch(loader, epoch)
        h.train()
        psi.train(cfg.joint)

        sums = {"total": 0.0, "class": 0.0, "feat": 0.0}
        seen = 0
        batches = progress(loader, desc=f"epoch {epoch}/{cfg.epochs}", total=len(loader))
        for batch_index, (x, labels) in enumerate(batches, start=1):
            x = x.to(device=device, dtype=dtype)
            y = _labels_to_targets(labels, data.c, device, dtype)
            terms = batch_objective_terms(x, y, h, psi, phi, cfg.alpha)
            value = float(terms.total)
            if not math.isfinite(value):
                raise TrainingDivergedError("train_joint", epoch, batch_index, value)

            grads = torch.autograd.grad(terms.total, params, allow_unused=True)
            sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, velocity)

            m = len(x)
            sums["total"] += value * m
            sums["class"] += float(terms.class_term) * m
            sums["feat"] += float(terms.feat_term) * m
            seen += m

        val_total, val_accuracy = validate_epoch(h, psi, phi, data.val, cfg.alpha, cfg.batch_size)
        if not math.isfinite(val_total):
            raise TrainingDivergedError("validation", epoch, 0, val_total)
        record = EpochRecord(epoch, lr, sums["total"] / seen, sums["class"] / seen, sums["feat"] / seen,
                             val_total, val_accuracy)
        records.append(record)

        if out_dir is not None:
            ref = _save_epoch(out_dir, epoch, h, psi, record, cfg, data.name, run_seeds)
            metrics.append(record)
        else:
            ref = CheckpointRef(epoch)
            if val_total < best_val:
                for previous in checkpoints:
                    previous.states = None
                ref.states = {"transform": _snapshot(h), "classifier": _snapshot(psi)}
        best_val = min(best_val, val_total)
        checkpoints.append(ref)

        status_print(
            f"epoch {epoch:>3}/{cfg.epochs} {dim(f'lr={lr:g}')} "
            f"train {record.train_total:.4f} (class {record.train_class:.4f}, feat {record.train_feat:.4f}) "
            f"val {metric(f'{val_total:.4f}')} acc {metric(f'{val_accuracy:.2f}%')}"
        )
        debug_print(f"training: epoch {epoch} saw {seen} samples in {batch_index} batches")

    return checkpoints, records


def _save_epoch(out_dir: Path, epoch: int, h: BaseNetwork, psi: BaseNetwork, record: EpochRecord,
                cfg: TrainConfig, dataset: str, seeds: Dict[str, int]) -> CheckpointRef:
    folder = out_dir / "checkpoints"
    paths = {}
    for role, net in (("transform", h), ("classifier", psi)):
        manifest = CheckpointManifest(
            epoch=epoch, val_loss=record.val_total, alpha=cfg.alpha, seeds=dict(seeds), dataset=dataset, role=role,
            extra={"val_accuracy": record.val_accuracy, "joint": cfg.joint, "plain": cfg.plain},
        )
        paths[role] = save_checkpoint(net, manifest, folder / f"epoch_{epoch:03d}_{role}.pt")
    return CheckpointRef(epoch, paths["transform"], paths["classifier"])


def best_index(records: Sequence[EpochRecord]) -> int:
    """Position of the lowest val_total; ties go to the earliest epoch"""
    if not records:
        raise DomainError("no epoch records to select from")
    best = 0
    for i, record in enumerate(records):
        if record.val_total < records[best].val_total:
            best = i
    return best


def select_best_checkpoint(records: Sequence[EpochRecord], checkpoints: Sequence[CheckpointRef]):
    if len(records) != len(checkpoints):
        raise DomainError(f"{len(records)} records but {len(checkpoints)} checkpoints")
    return checkpoints[best_index(records)]
