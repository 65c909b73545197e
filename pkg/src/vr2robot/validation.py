"""Input validation helpers shared across the pipeline modules.

Small check_* functions in the scikit-learn spirit: coerce to float64,
validate shape/finiteness, raise ValueError with a named argument so CLI
diagnostics stay readable.
"""

from __future__ import annotations

import numpy as np

from .geometry import FrameTag, Pose


def check_array(x, shape: tuple[int, ...] | None = None, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        try:
            arr = arr.reshape(shape)
        except ValueError as e:
            raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}") from e
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_unit(v, name: str = "vector", atol: float = 1e-9) -> np.ndarray:
    arr = check_array(v, name=name)
    n = float(np.linalg.norm(arr))
    if abs(n - 1.0) > atol:
        raise ValueError(f"{name}: norm {n} not within {atol} of 1")
    return arr


def check_frame(pose: Pose, expected: FrameTag, name: str = "pose") -> Pose:
    if pose.frame is not expected:
        raise ValueError(f"{name}: expected frame '{expected.value}', got '{pose.frame.value}'")
    return pose


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return float(value)


def check_monotonic(ts: np.ndarray, name: str = "timestamps") -> np.ndarray:
    ts = check_array(ts, name=name).reshape(-1)
    deltas = np.diff(ts)
    bad = np.nonzero(deltas <= 0)[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise ValueError(f"{name} not strictly increasing at index {i} ({ts[i]} <= {ts[i - 1]})")
    return ts
