"""Utility functions for output files, checksums and configuration digests.

This module provides the helpers the runner uses to emit deterministic CSV
tables, write manifests atomically, and fingerprint files and configurations.
"""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .classical import TrajectorySet
from .config import FLOAT_FORMAT
from .fields import Grid, RealField


def file_sha256(path: str | Path) -> str:
    """Hex SHA-256 digest of a file's bytes.

    Args:
        path: File to hash

    Returns:
        64-character lowercase hex digest.
    """
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_digest(payload: dict[str, Any]) -> str:
    """Short, order-independent fingerprint of a configuration.

    Args:
        payload: JSON-serializable configuration dump

    Returns:
        First 12 hex characters of the SHA-256 of the sorted-key JSON.

    Examples:
        >>> config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
        True
    """
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    """Write a table with 17-significant-digit floats and Unix line endings.

    Args:
        frame: Table to write
        path: Destination

    Returns:
        The destination path.
    """
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def atomic_write_json(payload: dict[str, Any], path: str | Path) -> Path:
    """Write JSON to a temporary sibling file, then rename it into place.

    Args:
        payload: JSON-serializable document
        path: Destination

    Returns:
        The destination path.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def trajectory_frame(trajectories: TrajectorySet) -> pd.DataFrame:
    """Long-format ensemble table: particle, t, q0..q{rank-1}, flagged.

    Args:
        trajectories: Particle positions at the stored times

    Returns:
        One row per (particle, time), particles outermost.
    """
    n_times, n_particles, rank = trajectories.positions.shape
    data: dict[str, np.ndarray] = {
        "particle": np.repeat(np.arange(n_particles), n_times),
        "t": np.tile(trajectories.times, n_particles),
    }
    ordered = trajectories.positions.transpose(1, 0, 2).reshape(-1, rank)
    for k in range(rank):
        data[f"q{k}"] = ordered[:, k]
    data["flagged"] = np.repeat(trajectories.flagged, n_times)
    return pd.DataFrame(data)


def profile_frame(field: RealField, name: str = "value") -> pd.DataFrame:
    """Coordinates and values of a 1-D field.

    Args:
        field: Field on a rank-1 grid
        name: Value column name

    Returns:
        Two-column table (q, name).
    """
    grid: Grid = field.grid
    return pd.DataFrame({"q": grid.coordinates(0), name: field.values})
