"""
Checkpoint archives: a torch.save container tagged with a magic string and format version,
plus a human-readable YAML manifest written next to it.
"""

import pickle
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch
import yaml

import Networks  # noqa: F401  (registers the network classes)
from base import NETWORK_REGISTRY, BaseNetwork
from debug_utils import debug_print
from colors import info
from errors import ConfigurationError, FileError, SerializationError
from utils import sha256_file

MAGIC = "ITN-CHECKPOINT"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


@dataclass
class CheckpointManifest:
    """Training provenance stored with every checkpoint"""
    architecture: str = ""
    epoch: Optional[int] = None
    val_loss: Optional[float] = None
    alpha: Optional[float] = None
    seeds: Dict[str, int] = field(default_factory=dict)
    dataset: Optional[str] = None
    role: Optional[str] = None  # "transform", "classifier" or "inverse"
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "CheckpointManifest":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def manifest_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.manifest.yaml")


def save_checkpoint(net: BaseNetwork, meta: Optional[CheckpointManifest], path: PathLike) -> Path:
    """Write net's parameters and provenance to path (plus a YAML manifest beside it)"""
    path = Path(path)
    meta = meta or CheckpointManifest()
    meta.architecture = net.arch_id
    state = {name: tensor.detach().cpu().clone() for name, tensor in net.state_dict().items()}
    archive = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "arch": net.arch_id,
        "topology": net.config.to_dict(),
        "manifest": meta.to_dict(),
        "state_dict": state,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(archive, path)
        readable = {
            "format": f"{MAGIC} v{FORMAT_VERSION}",
            "arch": net.arch_id,
            "topology": net.config.to_dict(),
            "manifest": meta.to_dict(),
            "shapes": {name: list(tensor.shape) for name, tensor in state.items()},
            "sha256": sha256_file(path),
        }
        with open(manifest_path(path), "w", encoding="utf-8") as handle:
            yaml.safe_dump(readable, handle, sort_keys=False)
    except OSError as e:
        raise FileError(f"cannot write checkpoint: {e}", [path]) from e
    debug_print(f"checkpoint: wrote {net.arch_id} to {path}", info)
    return path


def load_checkpoint(path: PathLike, map_location: str = "cpu") -> Tuple[BaseNetwork, CheckpointManifest]:
    """Rebuild the network stored at path; fails loudly on anything but a well-formed archive"""
    path = Path(path)
    if not path.is_file():
        raise FileError("checkpoint not found", [path])
    try:
        archive = torch.load(path, map_location=map_location, weights_only=True)
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile, ValueError, OSError) as e:
        raise SerializationError(f"{path}: corrupt or truncated checkpoint ({type(e).__name__}: {e})") from e

    if not isinstance(archive, dict) or archive.get("magic") != MAGIC:
        raise SerializationError(f"{path}: not a checkpoint archive (magic string missing)")
    version = archive.get("format_version")
    if version != FORMAT_VERSION:
        raise SerializationError(f"{path}: format version {version}, expected {FORMAT_VERSION}")

    arch = archive.get("arch")
    cls = NETWORK_REGISTRY.get(arch)
    if cls is None:
        raise SerializationError(f"{path}: unknown architecture {arch!r}")
    try:
        config = cls.config_cls.from_dict(archive.get("topology") or {})
        net = cls(config)
        net.load_state_dict(archive["state_dict"], strict=True)
    except (ConfigurationError, KeyError, RuntimeError) as e:
        raise SerializationError(f"{path}: parameters do not match {arch} ({e})") from e

    manifest = CheckpointManifest.from_dict(archive.get("manifest") or {})
    debug_print(f"checkpoint: loaded {arch} from {path}", info)
    return net, manifest


def checkpoint_digest(path: PathLike) -> str:
    return sha256_file(path)
