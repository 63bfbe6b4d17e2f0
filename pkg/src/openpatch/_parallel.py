"""Ordered thread-pool helper honoring the OPENPATCH_THREADS cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "OPENPATCH_THREADS"


def worker_count() -> int:
    """Worker cap from OPENPATCH_THREADS; 0 or unset means auto."""
    raw = os.environ.get(ENV_THREADS, "0").strip()
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ValueError(f"{ENV_THREADS} must be >= 0, got {value}")
    if value == 0:
        return os.cpu_count() or 1
    return value


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map preserving order; falls back to a plain loop when 1 worker suffices."""
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
