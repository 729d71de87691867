"""Embedding/manifest data model and the binary persistence layer.

Embedding files are little-endian float32 row-major with a length-prefixed
JSON header (see FORMATS.md). Variant tensors use the same layout with an
extra class axis. Manifests are JSONL, one SampleRecord per line; a CSV
import shim is provided for flat metadata.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBEDDING_MAGIC = b"METR"
TENSOR_MAGIC = b"METT"
FORMAT_VERSION = 1

_NORM_TOL = 1e-4


class FormatError(ValueError):
    """Raised on malformed embedding files or manifests."""


class ValidationError(ValueError):
    """Raised when a data object violates its invariants."""


@dataclass(frozen=True)
class EmbeddingSet:
    """Ids plus an n x d float32 matrix produced by one encoder."""

    encoder_tag: str
    ids: tuple[str, ...]
    matrix: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.float32)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "ids", tuple(self.ids))
        if mat.ndim != 2:
            raise ValidationError(f"matrix must be 2-D, got shape {mat.shape}")
        if mat.shape[0] != len(self.ids):
            raise ValidationError(
                f"{mat.shape[0]} rows but {len(self.ids)} ids"
            )
        if mat.shape[1] < 1:
            raise ValidationError("embedding dim must be positive")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate sample ids")
        if not np.all(np.isfinite(mat)):
            raise ValidationError("matrix contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(mat.astype(np.float64), axis=1)
            if norms.size and np.max(np.abs(norms - 1.0)) > _NORM_TOL:
                raise ValidationError(
                    "normalized flag set but some row norms deviate from 1"
                )
        mat.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def row_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}


@dataclass(frozen=True)
class SampleRecord:
    """One manifest entry: image identity, semantic label, optional metadata."""

    sample_id: str
    source_path: str
    semantic_label: int
    photographer_id: str | None = None
    exif: dict[str, str] | None = None
    pair_id: str | None = None
    camera_type: str | None = None  # "smart" | "non-smart"

    def __post_init__(self):
        if self.camera_type is not None and self.camera_type not in ("smart", "non-smart"):
            raise ValidationError(
                f"camera_type must be 'smart' or 'non-smart', got {self.camera_type!r}"
            )

    def to_json(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "source_path": self.source_path,
            "semantic_label": self.semantic_label,
        }
        for key in ("photographer_id", "exif", "pair_id", "camera_type"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        return cls(
            sample_id=obj["sample_id"],
            source_path=obj.get("source_path", ""),
            semantic_label=int(obj.get("semantic_label", -1)),
            photographer_id=obj.get("photographer_id"),
            exif=obj.get("exif"),
            pair_id=obj.get("pair_id"),
            camera_type=obj.get("camera_type"),
        )


@dataclass(frozen=True)
class VariantEmbeddingTensor:
    """n x M x d embeddings of every image under every processing class."""

    encoder_tag: str
    ids: tuple[str, ...]
    family: str
    class_names: tuple[str, ...]
    tensor: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.tensor, dtype=np.float32)
        object.__setattr__(self, "tensor", arr)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if arr.ndim != 3:
            raise ValidationError(f"tensor must be 3-D, got shape {arr.shape}")
        n, M, d = arr.shape
        if n != len(self.ids):
            raise ValidationError(f"{n} rows but {len(self.ids)} ids")
        if M != len(self.class_names):
            raise ValidationError(
                f"{M} class slices but {len(self.class_names)} class names"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate sample ids")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("tensor contains NaN or Inf")
        arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    @property
    def M(self) -> int:
        return self.tensor.shape[1]

    @property
    def d(self) -> int:
        return self.tensor.shape[2]

    def class_slice(self, j: int) -> EmbeddingSet:
        """EmbeddingSet view of processing class j."""
        return EmbeddingSet(
            encoder_tag=self.encoder_tag,
            ids=self.ids,
            matrix=np.ascontiguousarray(self.tensor[:, j, :]),
        )


def _write_with_header(path, magic: bytes, header: dict, body: np.ndarray) -> None:
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(body, dtype="<f4").tobytes())


def _read_with_header(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError(f"{path}: file too short to hold a header")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic bytes {data[:4]!r}")
    version = int.from_bytes(data[4:8], "little")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    hlen = int.from_bytes(data[8:16], "little")
    if len(data) < 16 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    return header, data[16 + hlen :]


def save_embeddings(emb: EmbeddingSet, path) -> None:
    """Write an EmbeddingSet to the binary embedding format."""
    header = {
        "kind": "embeddings",
        "encoder_tag": emb.encoder_tag,
        "n": emb.n,
        "d": emb.d,
        "normalized": emb.normalized,
        "ids": list(emb.ids),
    }
    _write_with_header(path, EMBEDDING_MAGIC, header, emb.matrix)


def load_embeddings(path) -> EmbeddingSet:
    """Read and validate an EmbeddingSet from the binary embedding format."""
    header, body = _read_with_header(path, EMBEDDING_MAGIC)
    try:
        n, d = int(header["n"]), int(header["d"])
        ids = header["ids"]
        encoder_tag = header["encoder_tag"]
        normalized = bool(header.get("normalized", False))
    except KeyError as exc:
        raise FormatError(f"{path}: header missing field {exc}") from exc
    expected = n * d * 4
    if len(body) != expected:
        raise FormatError(
            f"{path}: body holds {len(body)} bytes, expected {expected}"
        )
    matrix = np.frombuffer(body, dtype="<f4").reshape(n, d)
    try:
        return EmbeddingSet(
            encoder_tag=encoder_tag, ids=ids, matrix=matrix, normalized=normalized
        )
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_tensor(tensor: VariantEmbeddingTensor, path) -> None:
    """Write a VariantEmbeddingTensor to the binary tensor format."""
    header = {
        "kind": "variant_tensor",
        "encoder_tag": tensor.encoder_tag,
        "n": tensor.n,
        "M": tensor.M,
        "d": tensor.d,
        "family": tensor.family,
        "class_names": list(tensor.class_names),
        "ids": list(tensor.ids),
    }
    _write_with_header(path, TENSOR_MAGIC, header, tensor.tensor)


def load_tensor(path) -> VariantEmbeddingTensor:
    """Read and validate a VariantEmbeddingTensor."""
    header, body = _read_with_header(path, TENSOR_MAGIC)
    try:
        n, M, d = int(header["n"]), int(header["M"]), int(header["d"])
        ids = header["ids"]
        family = header["family"]
        class_names = header["class_names"]
        encoder_tag = header["encoder_tag"]
    except KeyError as exc:
        raise FormatError(f"{path}: header missing field {exc}") from exc
    expected = n * M * d * 4
    if len(body) != expected:
        raise FormatError(
            f"{path}: body holds {len(body)} bytes, expected {expected}"
        )
    arr = np.frombuffer(body, dtype="<f4").reshape(n, M, d)
    try:
        return VariantEmbeddingTensor(
            encoder_tag=encoder_tag,
            ids=ids,
            family=family,
            class_names=class_names,
            tensor=arr,
        )
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_manifest(records: list[SampleRecord], path) -> None:
    """Write records as JSONL, one per line, preserving order."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def load_manifest(path) -> list[SampleRecord]:
    """Read a JSONL manifest; rejects duplicate sample ids."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = SampleRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: bad record: {exc}") from exc
            if rec.sample_id in seen:
                raise FormatError(
                    f"{path}:{lineno}: duplicate sample_id {rec.sample_id!r}"
                )
            seen.add(rec.sample_id)
            records.append(rec)
    return records


def import_manifest_csv(path) -> list[SampleRecord]:
    """CSV import shim: flat columns, Exif tags prefixed with 'exif.'."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            exif = {
                key[len("exif."):]: val
                for key, val in row.items()
                if key.startswith("exif.") and val
            }
            records.append(
                SampleRecord(
                    sample_id=row["sample_id"],
                    source_path=row.get("source_path", ""),
                    semantic_label=int(row.get("semantic_label", -1)),
                    photographer_id=row.get("photographer_id") or None,
                    exif=exif or None,
                    pair_id=row.get("pair_id") or None,
                    camera_type=row.get("camera_type") or None,
                )
            )
    return records


@dataclass(frozen=True)
class AlignedDataset:
    """Manifest records paired with their embedding rows, in manifest order."""

    records: tuple[SampleRecord, ...]
    matrix: np.ndarray
    dropped: tuple[str, ...] = field(default=())

    @property
    def semantic_labels(self) -> np.ndarray:
        return np.array([r.semantic_label for r in self.records], dtype=np.int64)


def join(records: list[SampleRecord], emb: EmbeddingSet, strict: bool = True) -> AlignedDataset:
    """Pair manifest records with embedding rows, preserving manifest order."""
    seen = set()
    for rec in records:
        if rec.sample_id in seen:
            raise ValidationError(f"duplicate manifest id {rec.sample_id!r}")
        seen.add(rec.sample_id)
    index = emb.row_index()
    kept, rows, dropped = [], [], []
    for rec in records:
        row = index.get(rec.sample_id)
        if row is None:
            if strict:
                raise ValidationError(
                    f"sample_id {rec.sample_id!r} missing from embedding set"
                )
            dropped.append(rec.sample_id)
            continue
        kept.append(rec)
        rows.append(row)
    if dropped:
        warnings.warn(f"join dropped {len(dropped)} records missing embeddings")
    matrix = emb.matrix[np.array(rows, dtype=np.intp)] if rows else np.zeros(
        (0, emb.d), dtype=np.float32
    )
    return AlignedDataset(records=tuple(kept), matrix=matrix, dropped=tuple(dropped))


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit L2 norm; rejects zero rows."""
    norms = np.linalg.norm(emb.matrix.astype(np.float64), axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = [emb.ids[i] for i in np.nonzero(norms[:, 0] == 0.0)[0][:5]]
        raise ValidationError(f"zero-norm rows: {bad}")
    matrix = (emb.matrix.astype(np.float64) / norms).astype(np.float32)
    return EmbeddingSet(
        encoder_tag=emb.encoder_tag, ids=emb.ids, matrix=matrix, normalized=True
    )
