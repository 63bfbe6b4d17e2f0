"""OPBK binary files: bit-exact storage for embedding sets and banks.

All integers are little-endian fixed-width, all floats IEEE-754 binary32
little-endian, so files are platform independent and round-trip byte for
byte.

Header (29 bytes)::

    magic       4 bytes  b"OPBK"
    version     u32      1
    record_kind u8       0 = embedding sets, 1 = unified bank
    C           u32      embedding channels
    class_count u32      distinct known classes in the payload
    patch_count u64      total patches in the payload
    flags       u32      bit 0: anchor points present, bit 1: globals present

record_kind 0 payload, repeated per sample::

    sample_id u64 | label i32 | P u32 | P*C f32 values (row-major)
    | P*3 f32 anchors (flag bit 0) | G u32 + G f32 global (flag bit 1)

record_kind 1 payload::

    n_pairs u32, then per metadata pair: len u32 + UTF-8 key,
                                         len u32 + UTF-8 value
    then per class in ascending id:
    class_id i32 | n u64 | n*C f32 values
    | n * (sample_id u64 + patch_index u32) provenance
    | n*3 f32 anchors (flag bit 0)

Readers reject bad magic, unsupported versions or flags, truncated or
oversized payloads, count mismatches, and any NaN/Inf scalar.

The sidecar manifest ``classes.map`` is UTF-8 text with one ``<id>=<name>``
line per class.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .banks import ClassMemoryBank, SampleEmbeddingSet, UnifiedBank

MAGIC = b"OPBK"
VERSION = 1
KIND_EMBEDDING_SETS = 0
KIND_BANK = 1
FLAG_ANCHORS = 1 << 0
FLAG_GLOBALS = 1 << 1

_HEADER = struct.Struct("<4sIBIIQI")


class OpbkError(Exception):
    """Raised for malformed, truncated, or inconsistent OPBK data."""


class _Reader:
    """Sequential cursor over an in-memory OPBK payload."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise OpbkError(f"truncated file: wanted {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def f32_array(self, count: int, what: str) -> np.ndarray:
        arr = np.frombuffer(self.take(count * 4), dtype="<f4").astype(np.float32)
        if not np.isfinite(arr).all():
            raise OpbkError(f"{what} contains NaN or Inf")
        return arr

    def done(self) -> bool:
        return self.pos == len(self.buf)


_U32 = struct.Struct("<I")
_SAMPLE_HEAD = struct.Struct("<QiI")
_CLASS_HEAD = struct.Struct("<iQ")
_PROV_DTYPE = np.dtype([("sample_id", "<u8"), ("patch_index", "<u4")])

_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1


def _header_bytes(record_kind: int, dim: int, class_count: int, patch_count: int, flags: int) -> bytes:
    if patch_count > _U64_MAX:
        raise OpbkError("patch_count overflows u64")
    return _HEADER.pack(MAGIC, VERSION, record_kind, dim, class_count, patch_count, flags)


def _read_header(reader: _Reader, expected_kind: int) -> tuple[int, int, int, int]:
    magic, version, kind, dim, class_count, patch_count, flags = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise OpbkError(f"bad magic {magic!r}")
    if version != VERSION:
        raise OpbkError(f"unsupported version {version}")
    if kind != expected_kind:
        raise OpbkError(f"record_kind {kind} does not match expected {expected_kind}")
    if flags & ~(FLAG_ANCHORS | FLAG_GLOBALS):
        raise OpbkError(f"unsupported flags 0x{flags:x}")
    if dim < 1:
        raise OpbkError("C must be >= 1")
    return dim, class_count, patch_count, flags


def pack_embedding_sets(sets: Sequence[SampleEmbeddingSet]) -> bytes:
    """Serialize embedding sets to OPBK bytes. See the module docstring."""
    if not sets:
        raise OpbkError("no samples to write")
    dim = sets[0].dim
    have_anchors = sets[0].anchors is not None
    have_globals = sets[0].global_embedding is not None
    total = 0
    labels = set()
    for s in sets:
        if s.dim != dim:
            raise OpbkError(f"sample {s.sample_id} has dim {s.dim}, expected {dim}")
        if (s.anchors is not None) != have_anchors:
            raise OpbkError("either all samples carry anchors or none do")
        if (s.global_embedding is not None) != have_globals:
            raise OpbkError("either all samples carry a global embedding or none do")
        if s.patch_count > _U32_MAX:
            raise OpbkError(f"sample {s.sample_id}: patch count overflows u32")
        total += s.patch_count
        if s.label >= 0:
            labels.add(s.label)
    flags = (FLAG_ANCHORS if have_anchors else 0) | (FLAG_GLOBALS if have_globals else 0)
    parts = [_header_bytes(KIND_EMBEDDING_SETS, dim, len(labels), total, flags)]
    for s in sets:
        parts.append(_SAMPLE_HEAD.pack(s.sample_id, s.label, s.patch_count))
        parts.append(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
        if have_anchors:
            parts.append(np.ascontiguousarray(s.anchors, dtype="<f4").tobytes())
        if have_globals:
            g = s.global_embedding
            parts.append(_U32.pack(g.shape[0]))
            parts.append(np.ascontiguousarray(g, dtype="<f4").tobytes())
    return b"".join(parts)


def parse_embedding_sets(buf: bytes) -> list[SampleEmbeddingSet]:
    reader = _Reader(buf)
    dim, class_count, patch_count, flags = _read_header(reader, KIND_EMBEDDING_SETS)
    sets: list[SampleEmbeddingSet] = []
    seen = 0
    labels = set()
    while not reader.done():
        sample_id, label, p = reader.unpack(_SAMPLE_HEAD)
        if p < 1:
            raise OpbkError(f"sample {sample_id} declares zero patches")
        if label < -1:
            raise OpbkError(f"sample {sample_id} has invalid label {label}")
        features = reader.f32_array(p * dim, f"sample {sample_id} values").reshape(p, dim)
        anchors = None
        if flags & FLAG_ANCHORS:
            anchors = reader.f32_array(p * 3, f"sample {sample_id} anchors").reshape(p, 3)
        global_embedding = None
        if flags & FLAG_GLOBALS:
            (g,) = reader.unpack(_U32)
            if g < 1:
                raise OpbkError(f"sample {sample_id} declares empty global embedding")
            global_embedding = reader.f32_array(g, f"sample {sample_id} global")
        try:
            sets.append(SampleEmbeddingSet(sample_id, label, features, anchors, global_embedding))
        except ValueError as exc:
            raise OpbkError(f"sample {sample_id}: {exc}") from exc
        seen += p
        if label >= 0:
            labels.add(label)
    if seen != patch_count:
        raise OpbkError(f"header declares {patch_count} patches, payload has {seen}")
    if len(labels) != class_count:
        raise OpbkError(f"header declares {class_count} classes, payload has {len(labels)}")
    return sets


def write_embedding_sets(sets: Sequence[SampleEmbeddingSet], path: str | Path) -> None:
    Path(path).write_bytes(pack_embedding_sets(sets))


def read_embedding_sets(path: str | Path) -> list[SampleEmbeddingSet]:
    return parse_embedding_sets(Path(path).read_bytes())


def pack_bank(bank: UnifiedBank) -> bytes:
    have_anchors = all(b.anchors is not None for b in bank.banks.values())
    flags = FLAG_ANCHORS if have_anchors else 0
    parts = [_header_bytes(KIND_BANK, bank.dim, bank.class_count, bank.total_patches, flags)]
    parts.append(_U32.pack(len(bank.metadata)))
    for key, value in bank.metadata.items():
        for text in (key, value):
            raw = text.encode("utf-8")
            parts.append(_U32.pack(len(raw)))
            parts.append(raw)
    for class_id in sorted(bank.banks):
        cls = bank.banks[class_id]
        parts.append(_CLASS_HEAD.pack(class_id, cls.patch_count))
        parts.append(np.ascontiguousarray(cls.features, dtype="<f4").tobytes())
        prov = np.empty(cls.patch_count, dtype=_PROV_DTYPE)
        prov["sample_id"] = cls.provenance[:, 0]
        prov["patch_index"] = cls.provenance[:, 1]
        parts.append(prov.tobytes())
        if have_anchors:
            parts.append(np.ascontiguousarray(cls.anchors, dtype="<f4").tobytes())
    return b"".join(parts)


def parse_bank(buf: bytes) -> UnifiedBank:
    reader = _Reader(buf)
    dim, class_count, patch_count, flags = _read_header(reader, KIND_BANK)
    if class_count < 1:
        raise OpbkError("bank has zero classes")
    (n_pairs,) = reader.unpack(_U32)
    metadata: dict[str, str] = {}
    for _ in range(n_pairs):
        pair = []
        for what in ("key", "value"):
            (length,) = reader.unpack(_U32)
            try:
                pair.append(reader.take(length).decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise OpbkError(f"metadata {what} is not valid UTF-8") from exc
        metadata[pair[0]] = pair[1]
    banks: dict[int, ClassMemoryBank] = {}
    seen = 0
    for _ in range(class_count):
        class_id, n = reader.unpack(_CLASS_HEAD)
        if class_id < 0:
            raise OpbkError(f"negative class id {class_id}")
        if class_id in banks:
            raise OpbkError(f"duplicate class id {class_id}")
        if n < 1:
            raise OpbkError(f"class {class_id} has zero patches")
        features = reader.f32_array(n * dim, f"class {class_id} values").reshape(n, dim)
        raw = np.frombuffer(reader.take(n * _PROV_DTYPE.itemsize), dtype=_PROV_DTYPE)
        if raw["sample_id"].max() >= 2**63:
            raise OpbkError(f"class {class_id}: provenance sample_id overflows")
        provenance = np.column_stack(
            [raw["sample_id"].astype(np.int64), raw["patch_index"].astype(np.int64)]
        )
        anchors = None
        if flags & FLAG_ANCHORS:
            anchors = reader.f32_array(n * 3, f"class {class_id} anchors").reshape(n, 3)
        try:
            banks[class_id] = ClassMemoryBank(class_id, features, provenance, anchors)
        except ValueError as exc:
            raise OpbkError(f"class {class_id}: {exc}") from exc
        seen += n
    if not reader.done():
        raise OpbkError(f"{len(buf) - reader.pos} trailing bytes after payload")
    if seen != patch_count:
        raise OpbkError(f"header declares {patch_count} patches, payload has {seen}")
    if sorted(banks) != list(range(len(banks))):
        raise OpbkError(f"class ids must be dense 0..K-1, got {sorted(banks)}")
    return UnifiedBank(banks, dim, metadata)


def write_bank(bank: UnifiedBank, path: str | Path) -> None:
    Path(path).write_bytes(pack_bank(bank))


def read_bank(path: str | Path) -> UnifiedBank:
    return parse_bank(Path(path).read_bytes())


def write_class_map(names: Mapping[int, str], path: str | Path) -> None:
    """Write the ``<id>=<name>`` sidecar manifest, sorted by class id."""
    lines = [f"{int(class_id)}={names[class_id]}" for class_id in sorted(names)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_class_map(path: str | Path) -> dict[int, str]:
    mapping: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        key, sep, name = line.partition("=")
        if not sep:
            raise OpbkError(f"{path}:{lineno}: expected <id>=<name>")
        try:
            class_id = int(key)
        except ValueError as exc:
            raise OpbkError(f"{path}:{lineno}: bad class id {key!r}") from exc
        if class_id in mapping:
            raise OpbkError(f"{path}:{lineno}: duplicate class id {class_id}")
        mapping[class_id] = name
    return mapping
