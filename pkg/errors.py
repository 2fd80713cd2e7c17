"""Exception hierarchy shared by every pipeline stage.

Each error carries the exit code the CLI returns for it.
"""

from typing import Optional


class ITNError(Exception):
    """Base class for all expected failures"""
    exit_code = 1


class DomainError(ITNError, ValueError):
    """Argument value or shape outside an operation's domain"""
    exit_code = 1


class ConfigurationError(ITNError):
    """Invalid configuration key, value, dataset id or topology"""
    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class FileError(ITNError):
    """Unreadable or unwritable file(s)"""
    exit_code = 3

    def __init__(self, message: str, paths=None):
        self.paths = [str(p) for p in (paths or [])]
        if self.paths:
            message = f"{message} ({', '.join(self.paths)})"
        super().__init__(message)


class IngestionError(FileError):
    """Dataset archive missing or corrupt"""


class SerializationError(ITNError):
    """Checkpoint archive has a bad magic string, wrong version or is truncated"""
    exit_code = 4


class TrainingDivergedError(ITNError):
    """Loss became non-finite during optimization"""
    exit_code = 5

    def __init__(self, stage: str, epoch: int, batch: int, value: float):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"{stage} diverged at epoch {epoch}, batch {batch} (loss={value})")


class TransportError(ITNError):
    """Classification server unreachable"""
    exit_code = 6

    def __init__(self, message: str, retries: int):
        self.retries = retries
        super().__init__(f"{message} after {retries} attempt{'s' if retries != 1 else ''}")


class ProtocolError(ITNError):
    """Malformed or oversized request payload"""
    exit_code = 6

    def __init__(self, reason: str, status: int = 400):
        self.reason = reason
        self.status = status
        super().__init__(reason)
