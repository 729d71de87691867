import json

import numpy as np
import pytest
from click.testing import CliRunner

from synth import make_space
from metatrace.cli import main
from metatrace.coredata import (
    EmbeddingSet,
    SampleRecord,
    VariantEmbeddingTensor,
    save_embeddings,
    save_manifest,
    save_tensor,
)
from metatrace.report import (
    ConfigError,
    RunConfig,
    check_aggregate_consistency,
    export_plot_data,
    load_report,
    run_experiment,
    save_report,
)


@pytest.fixture
def knn_inputs(tmp_path, rng):
    space = make_space(3)
    n_train, n_test, d = 30, 10, 6
    train_arr = rng.standard_normal((n_train, 3, d)).astype(np.float32)
    test_arr = rng.standard_normal((n_test, 3, d)).astype(np.float32)

    def write_tensor(arr, name, prefix):
        ids = tuple(f"{prefix}{i}" for i in range(arr.shape[0]))
        tensor = VariantEmbeddingTensor(
            encoder_tag="enc", ids=ids, family=space.family,
            class_names=space.class_names, tensor=arr,
        )
        path = tmp_path / name
        save_tensor(tensor, path)
        return path, ids

    train_path, train_ids = write_tensor(train_arr, "train.tns", "tr")
    test_path, test_ids = write_tensor(test_arr, "test.tns", "te")

    def write_manifest(ids, name):
        records = [
            SampleRecord(sample_id=sid, source_path="", semantic_label=int(i % 3))
            for i, sid in enumerate(ids)
        ]
        path = tmp_path / name
        save_manifest(records, path)
        return path

    train_man = write_manifest(train_ids, "train.jsonl")
    test_man = write_manifest(test_ids, "test.jsonl")
    return {
        "train_tensor": str(train_path),
        "test_tensor": str(test_path),
        "train_manifest": str(train_man),
        "test_manifest": str(test_man),
    }


class TestRunConfig:
    def test_missing_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig(
                kind="knn", master_seed=0,
                paths={"train_tensor": str(tmp_path / "nope.tns")},
                descriptor={"k_list": [1]},
            )

    def test_empty_k_list_rejected(self, knn_inputs):
        with pytest.raises(ConfigError):
            RunConfig(kind="knn", master_seed=0, paths=knn_inputs, descriptor={"k_list": []})

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(kind="magic", master_seed=0, paths={}, descriptor={})

    def test_config_hash_stable(self, knn_inputs):
        a = RunConfig(kind="knn", master_seed=0, paths=knn_inputs, descriptor={"k_list": [1]})
        b = RunConfig(kind="knn", master_seed=0, paths=dict(knn_inputs), descriptor={"k_list": [1]})
        assert a.config_hash() == b.config_hash()


class TestRunExperiment:
    def test_all_same_aggregate_is_cell_mean(self, knn_inputs, tmp_path):
        config = RunConfig(
            kind="knn", master_seed=0, paths=knn_inputs,
            descriptor={"setups": ["all_same"], "k_list": [5]},
            out_dir=str(tmp_path / "out"),
        )
        report = run_experiment(config)
        assert len(report.cells) == 3  # M cells
        vals = [c["value"] for c in report.cells]
        assert report.aggregates["all_same@k=5"] == pytest.approx(np.mean(vals), abs=1e-15)

    def test_rerun_identical_modulo_wallclock(self, knn_inputs, tmp_path):
        config = RunConfig(
            kind="knn", master_seed=1, paths=knn_inputs,
            descriptor={"setups": ["all_same", "pos_same"], "k_list": [3]},
            out_dir=str(tmp_path / "out"),
        )
        a = run_experiment(config).to_json()
        b = run_experiment(config).to_json()
        a.pop("wall_clock_s"), b.pop("wall_clock_s")
        assert a == b

    def test_worker_count_does_not_change_results(self, knn_inputs, tmp_path, monkeypatch):
        config = RunConfig(
            kind="knn", master_seed=1, paths=knn_inputs,
            descriptor={"setups": ["all_diff"], "k_list": [3]},
        )
        monkeypatch.setenv("METATRACE_THREADS", "1")
        a = run_experiment(config).to_json()
        monkeypatch.setenv("METATRACE_THREADS", "4")
        b = run_experiment(config).to_json()
        a.pop("wall_clock_s"), b.pop("wall_clock_s")
        assert a == b

    def test_save_report_append_only(self, knn_inputs, tmp_path):
        config = RunConfig(
            kind="knn", master_seed=0, paths=knn_inputs,
            descriptor={"setups": ["all_same"], "k_list": [1]},
            out_dir=str(tmp_path / "out"),
        )
        report = run_experiment(config)
        p1 = save_report(report, config)
        p2 = save_report(report, config)
        assert p1 != p2 and p1.exists() and p2.exists()
        loaded = load_report(p1)
        check_aggregate_consistency(loaded)

    def test_provenance_fields(self, knn_inputs):
        config = RunConfig(
            kind="knn", master_seed=9, paths=knn_inputs,
            descriptor={"setups": ["all_same"], "k_list": [1]},
        )
        report = run_experiment(config)
        prov = report.provenance
        assert prov["master_seed"] == 9
        assert set(prov["input_checksums"]) == set(knn_inputs)
        assert prov["config_hash"] == config.config_hash()


class TestExportPlotData:
    def test_accuracy_vs_k(self, knn_inputs, tmp_path):
        config = RunConfig(
            kind="knn", master_seed=0, paths=knn_inputs,
            descriptor={"setups": ["all_same", "all_diff"], "k_list": [1, 5, 10, 20]},
        )
        report = run_experiment(config)
        paths = export_plot_data(report.to_json(), "accuracy_vs_k", tmp_path)
        text = paths[0].read_text()
        header = text.splitlines()[0].split("\t")
        assert header == ["k", "all_diff", "all_same"]
        assert len(text.splitlines()) == 5  # header + 4 k values

    def test_missing_metric_family(self, knn_inputs, tmp_path):
        config = RunConfig(
            kind="knn", master_seed=0, paths=knn_inputs,
            descriptor={"setups": ["all_same"], "k_list": [1]},
        )
        report = run_experiment(config)
        with pytest.raises(ConfigError):
            export_plot_data(report.to_json(), "retrieval_scatter", tmp_path)


class TestCli:
    def test_knn_subcommand(self, knn_inputs, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main,
            [
                "knn",
                "--train-tensor", knn_inputs["train_tensor"],
                "--test-tensor", knn_inputs["test_tensor"],
                "--train-manifest", knn_inputs["train_manifest"],
                "--test-manifest", knn_inputs["test_manifest"],
                "--setup", "all_same",
                "--k", "5",
                "--out-dir", str(tmp_path / "out"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "report written" in result.output

    def test_validation_error_exit_code(self, tmp_path):
        runner = CliRunner()
        config = {"kind": "knn", "paths": {"train_tensor": "/does/not/exist"},
                  "descriptor": {"k_list": [1]}}
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(config))
        result = runner.invoke(main, ["report", "--config", str(cfg_path)])
        assert result.exit_code == 2

    def test_plan_subcommand(self):
        runner = CliRunner()
        result = runner.invoke(main, ["plan", "--family", "jpeg", "--setup", "all_diff"])
        assert result.exit_code == 0
        schemes = json.loads(result.output[: result.output.rfind("]") + 1])
        assert len(schemes) == 30

    def test_retrieve_subcommand(self, tmp_path, rng):
        records = []
        basis = np.linalg.qr(rng.standard_normal((12, 12)))[0]
        rows, ids = [], []
        for p in range(5):
            for suffix, t in (("a", "smart"), ("b", "non-smart")):
                sid = f"p{p}{suffix}"
                ids.append(sid)
                rows.append(basis[p] + 0.05 * rng.standard_normal(12))
                records.append(
                    SampleRecord(sample_id=sid, source_path="", semantic_label=p,
                                 pair_id=f"pr{p}", camera_type=t)
                )
        man_path = tmp_path / "pairs.jsonl"
        save_manifest(records, man_path)
        emb = EmbeddingSet(encoder_tag="t", ids=tuple(ids),
                           matrix=np.array(rows, dtype=np.float32))
        emb_path = tmp_path / "pairs.emb"
        save_embeddings(emb, emb_path)
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["retrieve", "--manifest", str(man_path), "--emb", str(emb_path),
             "--both", "--k", "1", "--out-dir", str(tmp_path / "out")],
        )
        assert result.exit_code == 0, result.output

    def test_split_subcommand(self, tmp_path, rng):
        records = []
        for c, iso in enumerate(("100", "400")):
            for i in range(300):
                records.append(
                    SampleRecord(
                        sample_id=f"s{c}_{i}", source_path="", semantic_label=0,
                        photographer_id=f"ph{rng.integers(0, 40)}",
                        exif={"ISOSpeedRatings": iso},
                    )
                )
        man_path = tmp_path / "m.jsonl"
        save_manifest(records, man_path)
        out = tmp_path / "split.json"
        runner = CliRunner()
        # default thresholds are unreachable at this corpus size: expect loud failure
        result = runner.invoke(
            main, ["split", "--manifest", str(man_path), "--family", "iso",
                   "--out", str(out)],
        )
        assert result.exit_code == 3
        assert "error" in result.output
