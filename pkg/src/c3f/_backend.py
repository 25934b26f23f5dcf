"""Kernel backend selection and thread-level parallelism knobs.

Set ``C3F_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The choice is
made once at import time. ``C3F_THREADS`` bounds the worker pool used for
per-group and per-replicate work.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_FALSY = {"", "0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("C3F_DISABLE_NUMBA", "0").strip().lower() in _FALSY


try:
    import numba as _numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


def n_threads() -> int:
    """Worker count from ``C3F_THREADS`` (default 1)."""
    raw = os.environ.get("C3F_THREADS", "1").strip()
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"C3F_THREADS must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"C3F_THREADS must be a positive integer, got {raw!r}")
    return value


def parallel_map(fn, items, threads: int | None = None) -> list:
    """Ordered map over ``items``; results never depend on the worker count."""
    items = list(items)
    threads = n_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
