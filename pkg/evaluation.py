"""
Classification accuracy, PSNR, box statistics, structured reports and image-grid export.
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import yaml

from attack import estimate
from data_utils import ImageSet, LabeledImage
from debug_utils import debug_print, progress
from errors import DomainError, FileError
from image_io import load_float_tiff, save_float_tiff
from Networks.resnet import classify
from Networks.unet import forward_transform

PathLike = Union[str, Path]
ArrayLike = Union[torch.Tensor, np.ndarray]

GRID_METADATA_KEY = "itn-grid"


def _labeled_batch(test: Union[ImageSet, Sequence[LabeledImage]]) -> Tuple[torch.Tensor, torch.Tensor]:
    if isinstance(test, ImageSet):
        return test.images(), test.labels
    test = list(test)
    if not test:
        return torch.empty(0), torch.empty(0, dtype=torch.int64)
    return torch.stack([img.pixels for img in test]), torch.tensor([img.label for img in test])


def predictions(probabilities: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax; ties go to the lowest class index"""
    # torch.argmax returns the first maximal index
    return torch.argmax(probabilities, dim=1)


def accuracy_from_predictions(predicted: ArrayLike, labels: ArrayLike) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DomainError("accuracy of an empty test set is undefined")
    if predicted.shape != labels.shape:
        raise DomainError(f"{len(predicted)} predictions for {len(labels)} labels")
    return 100.0 * float(np.mean(predicted == labels))


def accuracy(h: torch.nn.Module, psi: torch.nn.Module, test: Union[ImageSet, Sequence[LabeledImage]],
             batch_size: int = 512) -> float:
    """Percentage of test images whose protected version psi labels correctly"""
    images, labels = _labeled_batch(test)
    if len(labels) == 0:
        raise DomainError("accuracy of an empty test set is undefined")
    probabilities = classify(psi, forward_transform(h, images, batch_size), batch_size)
    return accuracy_from_predictions(predictions(probabilities).cpu().numpy(), labels.cpu().numpy())


def psnr(a: ArrayLike, b: ArrayLike, peak: float = 1.0) -> float:
    """10 * log10(peak**2 / MSE) in dB; identical inputs give math.inf"""
    a = np.asarray(a.detach().cpu() if isinstance(a, torch.Tensor) else a, dtype=np.float64)
    b = np.asarray(b.detach().cpu() if isinstance(b, torch.Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DomainError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_batch(a: torch.Tensor, b: torch.Tensor, peak: float = 1.0) -> List[float]:
    """Per-image PSNR for two aligned [m, C, H, W] batches"""
    if a.shape != b.shape:
        raise DomainError(f"batch shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return [psnr(x, y, peak) for x, y in zip(a, b)]


@dataclass
class BoxStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    n: int
    excluded: int = 0  # infinite values left out

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def box_stats(values: Sequence[float]) -> BoxStats:
    """
    Quartiles by linear interpolation between order statistics; whiskers are the most extreme
    observed values within 1.5 IQR of the box. Infinite values are excluded and counted.
    """
    array = np.asarray(list(values), dtype=np.float64)
    if array.size == 0:
        raise DomainError("box statistics of an empty list are undefined")
    if np.isnan(array).any():
        raise DomainError("box statistics got NaN values")
    finite = array[np.isfinite(array)]
    excluded = int(array.size - finite.size)
    if finite.size == 0:
        raise DomainError(f"all {excluded} values are infinite")

    q1, median, q3 = np.quantile(finite, [0.25, 0.5, 0.75], method="linear")
    reach = 1.5 * (q3 - q1)
    inside = finite[(finite >= q1 - reach) & (finite <= q3 + reach)]
    return BoxStats(float(q1), float(median), float(q3), float(inside.min()), float(inside.max()),
                    int(finite.size), excluded)


@dataclass
class EvalReport:
    kind: str
    accuracy_percent: Optional[float] = None
    psnr_values: List[float] = field(default_factory=list)
    box: Optional[BoxStats] = None
    grid_paths: List[str] = field(default_factory=list)
    config_digest: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def mean_psnr(self) -> Optional[float]:
        finite = [v for v in self.psnr_values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else None

    def save(self, out_dir: PathLike, name: str) -> Path:
        """Write <name>.yaml (summary) and <name>_psnr.txt (one value per line, inf allowed)"""
        out_dir = Path(out_dir)
        report_path = out_dir / f"{name}.yaml"
        psnr_path = out_dir / f"{name}_psnr.txt"
        summary = {
            "kind": self.kind,
            "accuracy_percent": self.accuracy_percent,
            "images": len(self.psnr_values),
            "mean_psnr": self.mean_psnr,
            "box": asdict(self.box) if self.box else None,
            "psnr_file": psnr_path.name,
            "grid_paths": list(self.grid_paths),
            "config_digest": self.config_digest,
            "extra": dict(self.extra),
        }
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(psnr_path, "w", encoding="utf-8") as handle:
                handle.writelines(f"{value!r}\n" for value in self.psnr_values)
            with open(report_path, "w", encoding="utf-8") as handle:
                yaml.safe_dump(summary, handle, sort_keys=False)
        except OSError as e:
            raise FileError(f"cannot write report: {e}", [report_path]) from e
        return report_path


def _scored_box(values: List[float]) -> Optional[BoxStats]:
    try:
        return box_stats(values)
    except DomainError:
        return None


def evaluate_attack(g: torch.nn.Module, h: torch.nn.Module, test: Union[ImageSet, Sequence[LabeledImage]],
                    peak: float = 1.0, batch_size: int = 512, config_digest: str = "") -> EvalReport:
    """PSNR of g(h(x)) against x for every test image, in input order"""
    images, _ = _labeled_batch(test)
    if len(images) == 0:
        raise DomainError("attack evaluation needs at least one test image")
    values: List[float] = []
    for chunk in progress(torch.split(images, batch_size), desc="attack eval"):
        estimates = estimate(g, forward_transform(h, chunk, batch_size), batch_size)
        values.extend(psnr_batch(estimates, chunk, peak))
    debug_print(f"evaluation: scored {len(values)} estimates")
    return EvalReport("attack", psnr_values=values, box=_scored_box(values), config_digest=config_digest)


def evaluate_protection(h: torch.nn.Module, psi: torch.nn.Module, test: Union[ImageSet, Sequence[LabeledImage]],
                        peak: float = 1.0, batch_size: int = 512, config_digest: str = "") -> EvalReport:
    """Accuracy on protected test images plus the PSNR of each h(x) against x"""
    images, labels = _labeled_batch(test)
    if len(labels) == 0:
        raise DomainError("accuracy of an empty test set is undefined")
    values: List[float] = []
    predicted: List[torch.Tensor] = []
    for chunk in progress(torch.split(images, batch_size), desc="eval"):
        protected = forward_transform(h, chunk, batch_size)
        predicted.append(predictions(classify(psi, protected, batch_size)).cpu())
        values.extend(psnr_batch(protected, chunk, peak))
    percent = accuracy_from_predictions(torch.cat(predicted).numpy(), labels.cpu().numpy())
    return EvalReport("protection", percent, values, _scored_box(values), config_digest=config_digest)


def export_grid(rows: Sequence[Tuple[str, Sequence[torch.Tensor]]], path: PathLike, gap: int = 2) -> Path:
    """
    One float TIFF with a row per (label, images) entry; shorter rows are padded with black.

    The layout and row labels are stored with the image so load_grid can split the
    composite back into the original float images, bit for bit.
    """
    if not rows:
        raise DomainError("a grid needs at least one row")
    shapes = {tuple(img.shape) for _, images in rows for img in images}
    if len(shapes) != 1:
        raise DomainError(f"grid images must share one shape, got {sorted(shapes)}")
    channels, height, width = shapes.pop()
    columns = max(len(images) for _, images in rows)

    canvas = torch.zeros((channels, len(rows) * (height + gap) - gap, columns * (width + gap) - gap),
                         dtype=torch.float32)
    for r, (_, images) in enumerate(rows):
        for c, image in enumerate(images):
            top, left = r * (height + gap), c * (width + gap)
            canvas[:, top:top + height, left:left + width] = image.detach().cpu().to(torch.float32)

    layout = {
        "labels": [str(label) for label, _ in rows],
        "counts": [len(images) for _, images in rows],
        "image_shape": [channels, height, width],
        "gap": gap,
    }
    return save_float_tiff(canvas, path, {GRID_METADATA_KEY: layout})


def load_grid(path: PathLike) -> List[Tuple[str, List[torch.Tensor]]]:
    """Split a grid written by export_grid back into labeled rows of float [C, H, W] images"""
    canvas, metadata = load_float_tiff(path)
    layout = metadata.get(GRID_METADATA_KEY)
    if not isinstance(layout, dict):
        raise FileError("not a grid image: no layout recorded", [Path(path)])
    _, height, width = layout["image_shape"]
    gap = layout["gap"]
    rows = []
    for r, (label, count) in enumerate(zip(layout["labels"], layout["counts"])):
        top = r * (height + gap)
        images = [canvas[:, top:top + height, c * (width + gap):c * (width + gap) + width].clone()
                  for c in range(count)]
        rows.append((label, images))
    return rows
