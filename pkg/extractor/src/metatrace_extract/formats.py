"""Standalone reader/writer for the shared binary embedding formats.

Implements the `METR` (embeddings) and `METT` (variant tensor) file
layouts documented in the engine's FORMATS.md: magic, u32 LE version,
u64 LE header length, UTF-8 JSON header, little-endian float32 body.
Deliberately self-contained so the extractor has no dependency on the
evaluation engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

EMBEDDING_MAGIC = b"METR"
TENSOR_MAGIC = b"METT"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised on malformed embedding or tensor files."""


@dataclass(frozen=True)
class EmbeddingFile:
    encoder_tag: str
    ids: tuple[str, ...]
    matrix: np.ndarray
    normalized: bool = False


@dataclass(frozen=True)
class TensorFile:
    encoder_tag: str
    ids: tuple[str, ...]
    family: str
    class_names: tuple[str, ...]
    tensor: np.ndarray


def _write(path, magic: bytes, header: dict, body: np.ndarray) -> None:
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(body, dtype="<f4").tobytes())


def _read(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise FormatError(f"{path}: too short")
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version = int.from_bytes(data[4:8], "little")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    hlen = int.from_bytes(data[8:16], "little")
    if len(data) < 16 + hlen:
        raise FormatError(f"{path}: truncated header")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    return header, data[16 + hlen :]


def write_embeddings(path, encoder_tag: str, ids, matrix: np.ndarray,
                     normalized: bool = False) -> None:
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise FormatError(f"matrix shape {matrix.shape} does not fit {len(ids)} ids")
    if not np.isfinite(matrix).all():
        raise FormatError("matrix holds non-finite values")
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate ids")
    header = {
        "kind": "embeddings",
        "encoder_tag": encoder_tag,
        "n": matrix.shape[0],
        "d": matrix.shape[1],
        "normalized": normalized,
        "ids": list(ids),
    }
    _write(path, EMBEDDING_MAGIC, header, matrix)


def read_embeddings(path) -> EmbeddingFile:
    header, body = _read(path, EMBEDDING_MAGIC)
    n, d = int(header["n"]), int(header["d"])
    matrix = np.frombuffer(body, dtype="<f4")
    if matrix.size != n * d:
        raise FormatError(f"{path}: body holds {matrix.size} floats, want {n * d}")
    matrix = matrix.reshape(n, d)
    ids = tuple(str(s) for s in header["ids"])
    if len(ids) != n or len(set(ids)) != n:
        raise FormatError(f"{path}: ids do not match n={n}")
    if not np.isfinite(matrix).all():
        raise FormatError(f"{path}: non-finite values")
    return EmbeddingFile(
        encoder_tag=str(header["encoder_tag"]),
        ids=ids,
        matrix=matrix,
        normalized=bool(header.get("normalized", False)),
    )


def write_tensor(path, encoder_tag: str, ids, family: str, class_names,
                 tensor: np.ndarray) -> None:
    tensor = np.asarray(tensor, dtype=np.float32)
    if tensor.ndim != 3 or tensor.shape[0] != len(ids) or tensor.shape[1] != len(class_names):
        raise FormatError(
            f"tensor shape {tensor.shape} does not fit {len(ids)} ids x "
            f"{len(class_names)} classes"
        )
    if not np.isfinite(tensor).all():
        raise FormatError("tensor holds non-finite values")
    header = {
        "kind": "variant_tensor",
        "encoder_tag": encoder_tag,
        "n": tensor.shape[0],
        "M": tensor.shape[1],
        "d": tensor.shape[2],
        "family": family,
        "class_names": list(class_names),
        "ids": list(ids),
    }
    _write(path, TENSOR_MAGIC, header, tensor)


def read_tensor(path) -> TensorFile:
    header, body = _read(path, TENSOR_MAGIC)
    n, M, d = int(header["n"]), int(header["M"]), int(header["d"])
    tensor = np.frombuffer(body, dtype="<f4")
    if tensor.size != n * M * d:
        raise FormatError(f"{path}: body holds {tensor.size} floats, want {n * M * d}")
    return TensorFile(
        encoder_tag=str(header["encoder_tag"]),
        ids=tuple(str(s) for s in header["ids"]),
        family=str(header["family"]),
        class_names=tuple(str(c) for c in header["class_names"]),
        tensor=tensor.reshape(n, M, d),
    )
