"""Standalone OPBK embedding-set writer.

Implements the engine's file contract directly (header, flags, per-sample
payload) rather than importing the engine, so the extractor's only coupling
to it is the byte layout itself:

    magic b"OPBK" | version u32=1 | record_kind u8=0 | C u32
    | class_count u32 | patch_count u64 | flags u32 (1=anchors, 2=globals)
    then per sample: sample_id u64 | label i32 | P u32 | P*C f32
    | P*3 f32 anchors | G u32 + G f32 global

All integers little-endian, floats IEEE-754 binary32 little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4sIBIIQI")
_SAMPLE_HEAD = struct.Struct("<QiI")
_U32 = struct.Struct("<I")

FLAG_ANCHORS = 1
FLAG_GLOBALS = 2


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: int
    label: int
    values: np.ndarray   # (P, C) float32
    anchors: np.ndarray  # (P, 3) float32
    pooled: np.ndarray   # (G,) float32


def pack_records(records: list[EmbeddingRecord]) -> bytes:
    if not records:
        raise ValueError("no records to write")
    dim = records[0].values.shape[1]
    labels = {r.label for r in records if r.label >= 0}
    total = sum(r.values.shape[0] for r in records)
    flags = FLAG_ANCHORS | FLAG_GLOBALS
    parts = [_HEADER.pack(b"OPBK", 1, 0, dim, len(labels), total, flags)]
    for r in records:
        p = r.values.shape[0]
        if r.values.shape != (p, dim):
            raise ValueError(f"sample {r.sample_id}: values shape {r.values.shape} != ({p}, {dim})")
        if r.anchors.shape != (p, 3):
            raise ValueError(f"sample {r.sample_id}: anchors shape {r.anchors.shape}")
        for arr in (r.values, r.anchors, r.pooled):
            if not np.isfinite(arr).all():
                raise ValueError(f"sample {r.sample_id}: non-finite output")
        parts.append(_SAMPLE_HEAD.pack(r.sample_id, r.label, p))
        parts.append(np.ascontiguousarray(r.values, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(r.anchors, dtype="<f4").tobytes())
        parts.append(_U32.pack(r.pooled.shape[0]))
        parts.append(np.ascontiguousarray(r.pooled, dtype="<f4").tobytes())
    return b"".join(parts)


def write_records(records: list[EmbeddingRecord], path: str | Path) -> None:
    Path(path).write_bytes(pack_records(records))


def write_class_map(names: dict[int, str], path: str | Path) -> None:
    lines = [f"{class_id}={names[class_id]}" for class_id in sorted(names)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
