"""Batch feature extraction over manifests and pipeline ledgers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from metatrace_extract.formats import write_embeddings, write_tensor
from metatrace_extract.models import ModelSpec, build_model


class ExtractError(RuntimeError):
    """Raised on unreadable inputs or incomplete ledgers."""


@dataclass(frozen=True)
class ExtractorJob:
    manifest: str
    model: str
    output: str
    batch_size: int = 32
    device: str = "cpu"
    pretrained: bool = False
    seed: int = 0
    skip_bad: bool = False
    extra: dict = field(default_factory=dict)


def _preprocess(spec: ModelSpec):
    return transforms.Compose([
        transforms.Resize(spec.resize_side),
        transforms.CenterCrop(spec.resolution),
        transforms.ToTensor(),
        transforms.Normalize(mean=spec.mean, std=spec.std),
    ])


def _encoder_tag(spec: ModelSpec, pretrained: bool) -> str:
    weights = "pretrained" if pretrained else "untrained"
    return f"{spec.name}+{weights}+{spec.preprocessing_fingerprint}"


def _read_manifest_paths(path) -> list[tuple[str, str]]:
    """(sample_id, source_path) pairs in manifest order."""
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            sid = str(obj["sample_id"])
            if sid in seen:
                raise ExtractError(f"{path}:{lineno}: duplicate sample_id {sid!r}")
            seen.add(sid)
            entries.append((sid, str(obj["source_path"])))
    return entries


def _embed_paths(paths, spec, forward, preprocess, batch_size, device,
                 skip_bad=False):
    """Embeddings for an ordered path list; returns (matrix, skipped)."""
    rows = []
    skipped = []
    batch, batch_slots = [], []
    out = np.zeros((len(paths), spec.dim), dtype=np.float32)

    def flush():
        if not batch:
            return
        with torch.no_grad():
            feats = forward(torch.stack(batch).to(device)).cpu().numpy()
        for slot, feat in zip(batch_slots, feats):
            out[slot] = feat
        batch.clear()
        batch_slots.clear()

    for i, path in enumerate(paths):
        try:
            img = Image.open(path).convert("RGB")
        except (OSError, ValueError) as exc:
            if skip_bad:
                skipped.append({"path": str(path), "error": str(exc)})
                continue
            raise ExtractError(f"unreadable image {path}: {exc}") from exc
        batch.append(preprocess(img))
        batch_slots.append(i)
        if len(batch) >= batch_size:
            flush()
    flush()
    if not np.isfinite(out).all():
        raise ExtractError("encoder produced non-finite features")
    rows = [i for i in range(len(paths))
            if not any(s["path"] == str(paths[i]) for s in skipped)]
    return out[rows], skipped


def extract(job: ExtractorJob) -> Path:
    """One embedding row per manifest entry, in manifest order."""
    spec, _, forward = build_model(job.model, pretrained=job.pretrained, seed=job.seed)
    preprocess = _preprocess(spec)
    entries = _read_manifest_paths(job.manifest)
    paths = [p for _, p in entries]
    matrix, skipped = _embed_paths(
        paths, spec, forward, preprocess, job.batch_size, job.device,
        skip_bad=job.skip_bad,
    )
    kept_paths = {s["path"] for s in skipped}
    ids = [sid for sid, p in entries if p not in kept_paths]
    out = Path(job.output)
    write_embeddings(out, _encoder_tag(spec, job.pretrained), ids, matrix)
    if skipped:
        ledger = out.with_suffix(out.suffix + ".skipped.jsonl")
        with open(ledger, "w", encoding="utf-8") as fh:
            for entry in skipped:
                fh.write(json.dumps(entry) + "\n")
    return out


def _read_ledger(path):
    """Group a pipeline ledger by sample; class order = first appearance."""
    by_sample: dict[str, dict[str, str]] = {}
    class_order: list[str] = []
    family = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            family = family or str(obj["family"])
            if str(obj["family"]) != family:
                raise ExtractError(f"ledger mixes families {family!r} and {obj['family']!r}")
            cls = str(obj["class"])
            if cls not in class_order:
                class_order.append(cls)
            by_sample.setdefault(str(obj["sample_id"]), {})[cls] = str(obj["output_path"])
    if family is None:
        raise ExtractError(f"{path}: empty ledger")
    return family, class_order, by_sample


def extract_variants(ledger_path, model: str, output, batch_size: int = 32,
                     device: str = "cpu", pretrained: bool = False,
                     seed: int = 0) -> Path:
    """n x M x d tensor over a pipeline ledger; class order from the ledger."""
    family, class_order, by_sample = _read_ledger(ledger_path)
    missing = [
        (sid, cls)
        for sid, cells in by_sample.items()
        for cls in class_order
        if cls not in cells
    ]
    if missing:
        raise ExtractError(f"ledger missing cells: {missing[:10]}")

    spec, _, forward = build_model(model, pretrained=pretrained, seed=seed)
    preprocess = _preprocess(spec)
    ids = list(by_sample)
    paths = [by_sample[sid][cls] for sid in ids for cls in class_order]
    flat, _ = _embed_paths(paths, spec, forward, preprocess, batch_size, device)
    tensor = flat.reshape(len(ids), len(class_order), spec.dim)
    out = Path(output)
    write_tensor(out, _encoder_tag(spec, pretrained), ids, family, class_order, tensor)
    return out
