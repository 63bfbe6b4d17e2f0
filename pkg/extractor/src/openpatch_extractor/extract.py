"""Run a frozen backbone over a dataset and emit OPBK embedding files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .backbones import create_backbone
from .dataset import CloudSample, load_dataset
from .opbk_writer import EmbeddingRecord, write_class_map, write_records
from .pointops import normalize_cloud, resample_points
from .spec import ExtractionSpec


def save_checkpoint(backbone: str, path: str | Path, seed: int = 0) -> None:
    """Create a checkpoint with freshly initialized weights."""
    torch.manual_seed(seed)
    model = create_backbone(backbone)
    torch.save({"backbone": backbone, "state_dict": model.state_dict()}, path)


def load_backbone(spec: ExtractionSpec) -> torch.nn.Module:
    """Load the checkpointed backbone named by the spec; no training state."""
    try:
        payload = torch.load(spec.checkpoint, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ValueError(f"checkpoint {spec.checkpoint} does not exist")
    tag = payload.get("backbone")
    if tag != spec.backbone:
        raise ValueError(
            f"checkpoint {spec.checkpoint} holds a {tag!r} backbone, spec wants {spec.backbone!r}"
        )
    model = create_backbone(spec.backbone)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def sample_features(
    model: torch.nn.Module, spec: ExtractionSpec, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Patch features, anchors, and the pooled global vector for one cloud."""
    prepared = normalize_cloud(resample_points(points, spec.points_per_cloud))
    with torch.no_grad():
        out = model(torch.from_numpy(prepared))
    feats, centers = out["layers"][spec.layer]
    if feats.dim() == 3:  # (P, R, C) rotation stack
        feats = feats.max(dim=1).values if spec.rotation_aggregation == "max" else feats.mean(dim=1)
    return (
        feats.numpy().astype(np.float32),
        centers.numpy().astype(np.float32),
        out["global"].numpy().astype(np.float32),
    )


def extract_records(
    spec: ExtractionSpec, samples: list[CloudSample]
) -> list[EmbeddingRecord]:
    if not samples:
        raise ValueError("empty dataset")
    model = load_backbone(spec)
    records = []
    for sample in samples:
        feats, anchors, pooled = sample_features(model, spec, sample.points)
        records.append(EmbeddingRecord(sample.sample_id, sample.label, feats, anchors, pooled))
    return records


def extract(spec: ExtractionSpec, data_root: str | Path, out_path: str | Path) -> dict:
    """Extract every cloud under ``data_root`` into one OPBK file.

    Also writes ``classes.map`` next to the output. Returns a small summary
    (sample count, patch counts, channels) for logging.
    """
    samples, names = load_dataset(data_root)
    records = extract_records(spec, samples)
    write_records(records, out_path)
    write_class_map(names, Path(out_path).with_name("classes.map"))
    return {
        "samples": len(records),
        "channels": int(records[0].values.shape[1]),
        "patches_per_sample": sorted({int(r.values.shape[0]) for r in records}),
        "classes": len(names),
    }
