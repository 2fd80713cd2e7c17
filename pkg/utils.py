import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import torch

from errors import ConfigurationError

SEED_MASK = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """
    Derive a child seed from a tuple of parts (global seed, purpose, epoch, index, ...).

    Uses sha256 rather than hash() so streams are identical across processes and workers.
    """
    text = "/".join(str(part) for part in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & SEED_MASK


def torch_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


@contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Run a block under a fixed torch seed without disturbing the caller's global RNG state"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class GradCheckResult:
    """Outcome of a finite-difference gradient comparison"""
    checked: int
    max_rel_error: float
    worst: Tuple[int, int] = (-1, -1)  # (parameter index, flat element index)
    errors: List[float] = field(default_factory=list)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def finite_difference_check(
    objective: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    n_samples: int = 200,
    eps: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckResult:
    """
    Compare autograd gradients of a scalar objective with central finite differences.

    Args:
        objective: Zero-argument callable recomputing the scalar from the current params
        params: Leaf tensors (requires_grad) the gradient is taken against
        n_samples: Number of (param, element) coordinates to check; all if fewer exist
        eps: Half-width of the central difference
        seed: Sampling seed for the checked coordinates
        floor: Lower bound for the relative-error denominator

    Returns:
        GradCheckResult with the largest relative error seen
    """
    params = list(params)
    analytic = torch.autograd.grad(objective(), params, allow_unused=True)
    analytic = [g if g is not None else torch.zeros_like(p) for g, p in zip(analytic, params)]

    coords = [(pi, ei) for pi, p in enumerate(params) for ei in range(p.numel())]
    if n_samples < len(coords):
        order = torch.randperm(len(coords), generator=torch_generator(seed))[:n_samples]
        coords = [coords[i] for i in order.tolist()]

    result = GradCheckResult(checked=0, max_rel_error=0.0)
    with torch.no_grad():
        for pi, ei in coords:
            flat = params[pi].view(-1)
            original = flat[ei].item()
            flat[ei] = original + eps
            f_plus = objective().item()
            flat[ei] = original - eps
            f_minus = objective().item()
            flat[ei] = original

            numeric = (f_plus - f_minus) / (2 * eps)
            exact = analytic[pi].view(-1)[ei].item()
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            result.errors.append(rel)
            result.checked += 1
            if rel > result.max_rel_error:
                result.max_rel_error = rel
                result.worst = (pi, ei)
    return result


def dataclass_from_dict(cls, values: Optional[Dict[str, Any]], prefix: str = ""):
    """
    Build dataclass cls from a plain dict (one YAML section), checking keys and value types
    against the defaults. Errors name the dotted key, e.g. "train.alpha".
    """
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigurationError("expected a mapping", key=prefix.rstrip(".") or None)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError("unknown key", key=f"{prefix}{unknown[0]}")
    defaults = cls()
    coerced = {name: _coerce(value, getattr(defaults, name), f"{prefix}{name}") for name, value in values.items()}
    return cls(**coerced)


def _coerce(value: Any, default: Any, key: str) -> Any:
    def fail() -> ConfigurationError:
        expected = type(default).__name__ if default is not None else "scalar"
        return ConfigurationError(f"expected {expected}, got {value!r}", key=key)

    if default is None:
        if value is None or (isinstance(value, (int, float, str)) and not isinstance(value, bool)):
            return value
        raise fail()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise fail()
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise fail()
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise fail()
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise fail()
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise fail()
        items = list(value)
        if any(isinstance(item, bool) or not isinstance(item, (int, float)) for item in items):
            raise fail()
        return items
    return value
