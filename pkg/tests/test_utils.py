"""Tests for output helpers."""

import json

import numpy as np
import pandas as pd

from hvquant.classical import TrajectorySet
from hvquant.fields import RealField
from hvquant.utils import (
    atomic_write_json,
    config_digest,
    file_sha256,
    profile_frame,
    trajectory_frame,
    write_csv,
)


def test_csv_keeps_full_precision(tmp_path):
    path = write_csv(pd.DataFrame({"x": [1.0 / 3.0]}), tmp_path / "t.csv")
    text = path.read_bytes()
    assert b"\r" not in text
    assert float(text.decode().splitlines()[1]) == 1.0 / 3.0


def test_sha256_of_known_bytes(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")
    assert file_sha256(path) == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )


def test_config_digest_ignores_key_order():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})
    assert len(config_digest({})) == 12


def test_atomic_write_leaves_only_target(tmp_path):
    target = atomic_write_json({"status": "pass"}, tmp_path / "manifest.json")
    assert json.loads(target.read_text()) == {"status": "pass"}
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]


def test_trajectory_frame_layout():
    positions = np.arange(12, dtype=float).reshape(3, 2, 2)
    traj = TrajectorySet(np.array([0.0, 0.5, 1.0]), positions, np.array([False, True]))
    frame = trajectory_frame(traj)
    assert list(frame.columns) == ["particle", "t", "q0", "q1", "flagged"]
    assert frame["particle"].tolist() == [0, 0, 0, 1, 1, 1]
    assert frame["q0"].tolist() == [0.0, 4.0, 8.0, 2.0, 6.0, 10.0]
    assert frame["flagged"].tolist() == [False] * 3 + [True] * 3


def test_profile_frame(periodic_grid):
    x = periodic_grid.coordinates(0)
    frame = profile_frame(RealField(periodic_grid, np.cos(x)), "rho")
    assert list(frame.columns) == ["q", "rho"]
    assert len(frame) == 128
