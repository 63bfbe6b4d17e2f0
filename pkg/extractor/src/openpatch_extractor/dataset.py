"""Labeled point-cloud folder loader.

Layout: one subdirectory per class, holding ``.xyz`` (whitespace text, one
``x y z`` row per point) or ``.npy`` (N, 3) files. A directory literally
named ``UNKNOWN`` marks novelty-evaluation samples and is excluded from the
class table. Class ids are assigned densely over the sorted directory
names; samples are ordered by (class dir, file name) so loading is
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNKNOWN_DIR = "UNKNOWN"
UNKNOWN_LABEL = -1


@dataclass(frozen=True)
class CloudSample:
    sample_id: int
    label: int
    points: np.ndarray
    source: str


def _load_points(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        points = np.load(path)
    elif path.suffix == ".xyz":
        points = np.loadtxt(path, dtype=np.float64)
    else:
        raise ValueError(f"{path}: unsupported point-cloud extension {path.suffix!r}")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise ValueError(f"{path}: expected an (N, 3) cloud, got {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError(f"{path}: cloud contains NaN or Inf")
    return points


def load_dataset(root: str | Path) -> tuple[list[CloudSample], dict[int, str]]:
    """Read every cloud under ``root``; returns (samples, class name table)."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    class_dirs = sorted(d.name for d in root.iterdir() if d.is_dir() and d.name != UNKNOWN_DIR)
    names = {i: name for i, name in enumerate(class_dirs)}
    labels = {name: i for i, name in names.items()}
    samples: list[CloudSample] = []
    ordered_dirs = class_dirs + ([UNKNOWN_DIR] if (root / UNKNOWN_DIR).is_dir() else [])
    for dir_name in ordered_dirs:
        label = labels.get(dir_name, UNKNOWN_LABEL)
        for path in sorted((root / dir_name).iterdir()):
            if path.suffix not in (".xyz", ".npy"):
                continue
            samples.append(CloudSample(len(samples), label, _load_points(path), str(path)))
    if not samples:
        raise ValueError(f"no point-cloud files found under {root}")
    return samples, names
