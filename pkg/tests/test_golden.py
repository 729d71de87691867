"""Byte-exact format pinning against checked-in golden fixtures."""

import json
from pathlib import Path

import numpy as np

from metatrace.coredata import (
    load_embeddings,
    load_manifest,
    load_tensor,
    save_embeddings,
    save_manifest,
    save_tensor,
)

FIXTURES = Path(__file__).parent / "fixtures"


def _meta():
    with open(FIXTURES / "golden.json") as fh:
        return json.load(fh)


def test_golden_embeddings_read():
    emb = load_embeddings(FIXTURES / "golden.emb")
    want = _meta()["emb"]
    assert emb.encoder_tag == want["encoder_tag"]
    assert list(emb.ids) == want["ids"]
    assert np.array_equal(emb.matrix, np.array(want["matrix"], dtype=np.float32))


def test_golden_tensor_read():
    tns = load_tensor(FIXTURES / "golden.tns")
    want = _meta()["tns"]
    assert tns.family == want["family"]
    assert list(tns.class_names) == want["class_names"]
    assert list(tns.ids) == want["ids"]
    assert np.array_equal(tns.tensor, np.array(want["tensor"], dtype=np.float32))


def test_golden_manifest_read():
    records = load_manifest(FIXTURES / "golden.jsonl")
    assert [r.sample_id for r in records] == _meta()["manifest_ids"]
    assert records[0].exif == {"ISOSpeedRatings": "200", "Make": "Canon"}
    assert records[0].pair_id == records[1].pair_id == "pairA"
    assert records[2].photographer_id is None


def test_golden_roundtrip_is_byte_identical(tmp_path):
    for name, load, save in (
        ("golden.emb", load_embeddings, save_embeddings),
        ("golden.tns", load_tensor, save_tensor),
        ("golden.jsonl", load_manifest, save_manifest),
    ):
        obj = load(FIXTURES / name)
        out = tmp_path / name
        save(obj, out)
        assert out.read_bytes() == (FIXTURES / name).read_bytes(), name
