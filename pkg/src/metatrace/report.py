"""Experiment orchestration and structured report emission.

A RunConfig names the protocol (knn / probe / retrieve), its inputs, and the
grid settings; run_experiment executes every grid cell and assembles an
EvalReport whose aggregates are exact arithmetic means of its cells, with
enough provenance (seeds, config hash, input checksums) to re-run
bit-identically. Reports land append-only under out/<config-hash>/.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import metatrace
from metatrace.coredata import load_embeddings, load_manifest, load_tensor
from metatrace.knn import KnnConfig, evaluate_scheme
from metatrace.labels import LabelSpace
from metatrace.plans import SETUP_KINDS, enumerate_setup_grid
from metatrace.probe import ProbeConfig, evaluate_probe, random_baseline, train_probe
from metatrace.retrieval import build_instances, recall_at_k

K_CURVE_GRID = (1, 5, 10, 20, 50, 100, 200, 500, 1000)


class ConfigError(ValueError):
    """Raised on invalid run configurations (exit code 2)."""


class ComputeError(RuntimeError):
    """Raised when a grid cell fails during execution (exit code 3)."""


def _worker_count() -> int:
    env = os.environ.get("METATRACE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"METATRACE_THREADS must be an integer, got {env!r}")
    return min(8, os.cpu_count() or 1)


def _file_checksum(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one experiment run."""

    kind: str  # knn | probe | retrieve
    master_seed: int
    paths: dict[str, str]
    descriptor: dict
    out_dir: str = "out"

    def __post_init__(self):
        if self.kind not in ("knn", "probe", "retrieve"):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for name, p in self.paths.items():
            if not Path(p).exists():
                raise ConfigError(f"path {name!r} does not resolve: {p}")
        if self.kind == "knn":
            if not self.descriptor.get("k_list"):
                raise ConfigError("knn runs require a nonempty k list")
            for setup in self.descriptor.get("setups", ["all_same"]):
                if setup not in SETUP_KINDS:
                    raise ConfigError(f"unknown setup kind {setup!r}")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                obj = tomllib.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        try:
            return cls(
                kind=obj["kind"],
                master_seed=int(obj.get("master_seed", 0)),
                paths=dict(obj.get("paths", {})),
                descriptor=dict(obj.get("descriptor", {})),
                out_dir=obj.get("out_dir", "out"),
            )
        except KeyError as exc:
            raise ConfigError(f"config missing field {exc}") from exc

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "master_seed": self.master_seed,
            "paths": dict(self.paths),
            "descriptor": dict(self.descriptor),
            "out_dir": self.out_dir,
        }

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical_json(self.to_json()).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EvalReport:
    """Per-cell metrics, exact-mean aggregates, and full provenance."""

    descriptor: dict
    cells: tuple[dict, ...]
    aggregates: dict
    provenance: dict
    wall_clock_s: float = 0.0
    version: str = "1"

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "descriptor": self.descriptor,
            "cells": list(self.cells),
            "aggregates": self.aggregates,
            "provenance": self.provenance,
            "wall_clock_s": self.wall_clock_s,
        }


def _aggregate(cells: list[dict], group_key: str, value_key: str) -> dict:
    """Arithmetic mean of cell values grouped by one key."""
    groups: dict[str, list[float]] = {}
    for cell in cells:
        groups.setdefault(str(cell[group_key]), []).append(cell[value_key])
    return {g: float(np.mean(vals)) for g, vals in sorted(groups.items())}


def check_aggregate_consistency(report_obj: dict, tol: float = 1e-12) -> None:
    """Verify that stored aggregates equal the means of their cells."""
    cells = report_obj["cells"]
    for group, stored in report_obj["aggregates"].items():
        vals = [c["value"] for c in cells if str(c.get("group")) == group]
        if vals and abs(float(np.mean(vals)) - stored) > tol:
            raise ComputeError(
                f"aggregate {group!r} = {stored} but cell mean is {np.mean(vals)}"
            )


def _semantic_labels_for(ids, manifest_records) -> np.ndarray:
    by_id = {r.sample_id: r.semantic_label for r in manifest_records}
    missing = [sid for sid in ids if sid not in by_id]
    if missing:
        raise ConfigError(f"manifest missing semantic labels for ids: {missing[:5]}")
    return np.array([by_id[sid] for sid in ids], dtype=np.int64)


def _run_knn(config: RunConfig) -> tuple[list[dict], dict]:
    train_tensor = load_tensor(config.paths["train_tensor"])
    test_tensor = load_tensor(config.paths["test_tensor"])
    train_manifest = load_manifest(config.paths["train_manifest"])
    test_manifest = load_manifest(config.paths["test_manifest"])
    train_semantic = _semantic_labels_for(train_tensor.ids, train_manifest)
    test_semantic = _semantic_labels_for(test_tensor.ids, test_manifest)
    space = LabelSpace(family=train_tensor.family, class_names=train_tensor.class_names)
    setups = config.descriptor.get("setups", ["all_same"])
    k_list = [int(k) for k in config.descriptor["k_list"]]
    uniform_seeds = [
        config.master_seed + i
        for i in range(int(config.descriptor.get("uniform_seeds", 10)))
    ]

    jobs = []
    for setup in setups:
        seeds = uniform_seeds if setup == "uniform" else None
        for scheme in enumerate_setup_grid(space, setup, seeds=seeds):
            for k in k_list:
                if k <= train_tensor.n:
                    jobs.append((setup, scheme, k))

    def run_cell(job):
        setup, scheme, k = job
        test_set = test_tensor.class_slice(scheme.test_class)
        try:
            acc = evaluate_scheme(
                test_set, test_semantic, train_tensor, train_semantic,
                scheme, KnnConfig(k=k),
            )
        except Exception as exc:
            raise ComputeError(
                f"cell {setup} pi={scheme.test_class} pj={scheme.train_class} "
                f"k={k} failed: {exc}"
            ) from exc
        return {
            "group": f"{setup}@k={k}",
            "setup": setup,
            "test_class": scheme.test_class,
            "train_class": scheme.train_class,
            "seed": scheme.seed,
            "k": k,
            "metric": "accuracy",
            "value": acc,
        }

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        cells = list(pool.map(run_cell, jobs))
    aggregates = _aggregate(cells, "group", "value")
    return cells, aggregates


def _load_label_map(path) -> dict[str, int]:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return {str(k): int(v) for k, v in obj.items()}


def _run_probe(config: RunConfig) -> tuple[list[dict], dict]:
    train_emb = load_embeddings(config.paths["train_embeddings"])
    test_emb = load_embeddings(config.paths["test_embeddings"])
    train_labels = _load_label_map(config.paths["train_labels"])
    test_labels = _load_label_map(config.paths["test_labels"])
    y_train = np.array([train_labels[sid] for sid in train_emb.ids], dtype=np.int64)
    y_test = np.array([test_labels[sid] for sid in test_emb.ids], dtype=np.int64)
    cfg = ProbeConfig(
        trials=int(config.descriptor.get("trials", 30)),
        epochs=int(config.descriptor.get("epochs", 100)),
        batch_size=int(config.descriptor.get("batch_size", 256)),
        normalize_inputs=bool(config.descriptor.get("normalize_inputs", True)),
        seed=config.master_seed,
    )
    try:
        model = train_probe(train_emb.matrix, y_train, cfg)
        acc = evaluate_probe(model, test_emb.matrix, y_test)
    except Exception as exc:
        raise ComputeError(f"probe run failed: {exc}") from exc
    cells = [
        {
            "group": "probe",
            "metric": "accuracy",
            "value": acc,
            "chosen_lr": model.chosen_lr,
            "chosen_wd": model.chosen_wd,
            "final_val_accuracy": model.final_val_accuracy,
            "trial_log": [
                {"index": t.index, "lr": t.lr, "wd": t.wd, "val_accuracy": t.val_accuracy}
                for t in model.trial_log
            ],
            "random_baseline": random_baseline(model.num_classes),
        }
    ]
    return cells, _aggregate(cells, "group", "value")


def _run_retrieve(config: RunConfig) -> tuple[list[dict], dict]:
    records = load_manifest(config.paths["manifest"])
    emb = load_embeddings(config.paths["embeddings"])
    modes = config.descriptor.get("modes", ["same", "different"])
    k_list = [int(k) for k in config.descriptor.get("k_list", [1])]
    cells = []
    for mode in modes:
        try:
            instances = build_instances(records, mode=mode, seed=config.master_seed)
            report = recall_at_k(instances, emb, k_list)
        except Exception as exc:
            raise ComputeError(f"retrieval mode {mode!r} failed: {exc}") from exc
        for k, value in report.recall.items():
            cells.append(
                {
                    "group": f"{mode}@k={k}",
                    "mode": mode,
                    "k": k,
                    "metric": "recall",
                    "value": value,
                    "n_queries": report.n_queries,
                }
            )
    return cells, _aggregate(cells, "group", "value")


_RUNNERS = {"knn": _run_knn, "probe": _run_probe, "retrieve": _run_retrieve}


def run_experiment(config: RunConfig) -> EvalReport:
    """Execute the configured protocol over its full grid."""
    start = time.monotonic()
    cells, aggregates = _RUNNERS[config.kind](config)
    provenance = {
        "toolkit_version": metatrace.__version__,
        "master_seed": config.master_seed,
        "config_hash": config.config_hash(),
        "input_checksums": {
            name: _file_checksum(p) for name, p in sorted(config.paths.items())
        },
    }
    return EvalReport(
        descriptor={"kind": config.kind, **config.descriptor},
        cells=tuple(cells),
        aggregates=aggregates,
        provenance=provenance,
        wall_clock_s=time.monotonic() - start,
    )


def save_report(report: EvalReport, config: RunConfig) -> Path:
    """Write the report append-only under out/<config-hash>/."""
    out_dir = Path(config.out_dir) / config.config_hash()
    out_dir.mkdir(parents=True, exist_ok=True)
    index = 1
    while (out_dir / f"report_{index}.json").exists():
        index += 1
    path = out_dir / f"report_{index}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
    return path


def load_report(path) -> dict:
    """Read a report and verify its aggregate/cell consistency."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    check_aggregate_consistency(obj)
    return obj


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def export_plot_data(report_obj: dict, kind: str, out_dir) -> list[Path]:
    """Emit TSV plot data (accuracy-vs-k curves, retrieval scatter, histograms)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = report_obj["cells"]
    written = []
    if kind == "accuracy_vs_k":
        rows = [c for c in cells if c.get("metric") == "accuracy" and "k" in c]
        if not rows:
            raise ConfigError("report holds no accuracy-vs-k cells")
        setups = sorted({c["setup"] for c in rows})
        ks = sorted({c["k"] for c in rows})
        path = out_dir / "accuracy_vs_k.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k\t" + "\t".join(setups) + "\n")
            for k in ks:
                vals = []
                for setup in setups:
                    cell_vals = [c["value"] for c in rows if c["k"] == k and c["setup"] == setup]
                    vals.append(_fmt(float(np.mean(cell_vals))) if cell_vals else "")
                fh.write(f"{k}\t" + "\t".join(vals) + "\n")
        written.append(path)
    elif kind == "retrieval_scatter":
        rows = [c for c in cells if c.get("metric") == "recall" and c.get("k") == 1]
        by_mode = {c["mode"]: c["value"] for c in rows}
        if "same" not in by_mode or "different" not in by_mode:
            raise ConfigError("report lacks recall@1 for both retrieval modes")
        path = out_dir / "retrieval_scatter.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("recall_same\trecall_different\n")
            fh.write(f"{_fmt(by_mode['same'])}\t{_fmt(by_mode['different'])}\n")
        written.append(path)
    elif kind == "histogram":
        hist_cells = [c for c in cells if c.get("metric") == "histogram"]
        if not hist_cells:
            raise ConfigError("report holds no histogram cells")
        for c in hist_cells:
            name = f"histogram_{c['sem_match']}_{c['meta_match']}.tsv"
            path = out_dir / name
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("bin_left\tbin_right\tdensity\n")
                edges = c["bin_edges"]
                for left, right, dens in zip(edges[:-1], edges[1:], c["density"]):
                    fh.write(f"{_fmt(left)}\t{_fmt(right)}\t{_fmt(dens)}\n")
            written.append(path)
    else:
        raise ConfigError(f"unknown plot kind {kind!r}")
    return written
