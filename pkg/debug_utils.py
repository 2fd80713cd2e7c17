import sys
from typing import Callable, Iterable, Optional, TypeVar

from tqdm import tqdm

_DEBUG_ENABLED = False
_PROGRESS_ENABLED = True

Formatter = Optional[Callable[[str], str]]
T = TypeVar("T")


def set_debug(enabled: bool) -> None:
    global _DEBUG_ENABLED
    _DEBUG_ENABLED = enabled


def is_debug() -> bool:
    return _DEBUG_ENABLED


def set_progress(enabled: bool) -> None:
    global _PROGRESS_ENABLED
    _PROGRESS_ENABLED = enabled


def debug_print(message: str, formatter: Formatter = None) -> None:
    if not _DEBUG_ENABLED:
        return
    if formatter:
        message = formatter(message)
    print(message, file=sys.stderr)


def status_print(message: str, formatter: Formatter = None) -> None:
    """Always-on status line on stderr (stdout stays free for results)"""
    if formatter:
        message = formatter(message)
    print(message, file=sys.stderr)


def progress(iterable: Iterable[T], desc: str, total: Optional[int] = None, leave: bool = False) -> Iterable[T]:
    """Wrap a loop in a tqdm bar unless progress output is switched off or stderr is not a terminal"""
    disable = not _PROGRESS_ENABLED or not sys.stderr.isatty()
    return tqdm(iterable, desc=desc, total=total, leave=leave, disable=disable, file=sys.stderr)
