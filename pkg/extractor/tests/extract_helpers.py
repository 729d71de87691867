from __future__ import annotations

import json

import numpy as np
from PIL import Image


def write_images(dir_path, n, rng, size=(32, 32)):
    """n random RGB PNGs plus a manifest; returns the manifest path."""
    dir_path.mkdir(parents=True, exist_ok=True)
    manifest = dir_path / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(n):
            arr = rng.integers(0, 256, size=(*size, 3), dtype=np.uint8)
            path = dir_path / f"img{i}.png"
            Image.fromarray(arr).save(path)
            fh.write(json.dumps({
                "sample_id": f"img{i}",
                "source_path": str(path),
                "semantic_label": i % 3,
            }) + "\n")
    return manifest
