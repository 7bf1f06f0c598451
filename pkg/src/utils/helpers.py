"""
Common utility functions: output directories, JSON evidence files and timing.
"""

import json
import os
import statistics
import time
from contextlib import contextmanager
from typing import Any, Callable, Dict, List

import numpy as np


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def save_json(obj: Any, path: str) -> None:
    """Write a run summary/config JSON, creating the parent directory."""
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False, default=str)


def trapezoid_weights(n_steps: int, dt: float):
    """Weights of the composite trapezoidal rule on n_steps + 1 uniform time levels."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if n_steps == 0:
        return np.ones(1)
    w = np.full(n_steps + 1, float(dt))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@contextmanager
def stopwatch(record: Dict[str, float], name: str):
    """Accumulate monotonic wall-clock seconds of a block into record[name]."""
    start = time.perf_counter()
    try:
        yield
    finally:
        record[name] = record.get(name, 0.0) + (time.perf_counter() - start)


def median_time(fn: Callable[[], Any], repeats: int = 3) -> float:
    """Median wall-clock seconds of `repeats` calls of fn."""
    samples: List[float] = []
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(statistics.median(samples))
