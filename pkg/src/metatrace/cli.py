"""metatrace command-line interface.

Exit codes: 0 success, 2 validation error, 3 compute error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from metatrace.coredata import FormatError, ValidationError, load_manifest
from metatrace.exifbin import (
    BinningError,
    SplitError,
    build_acquisition_split,
    default_binning_config,
    load_binning_config,
)
from metatrace.labels import (
    ACQUISITION_FAMILIES,
    LabelSpaceError,
    PROCESSING_FAMILIES,
    builtin_space,
)
from metatrace.pipeline import PipelineError, process_manifest
from metatrace.plans import PlanError, SETUP_KINDS, enumerate_setup_grid
from metatrace.report import (
    ComputeError,
    ConfigError,
    RunConfig,
    export_plot_data,
    run_experiment,
    save_report,
)

EXIT_VALIDATION = 2
EXIT_COMPUTE = 3

_VALIDATION_ERRORS = (
    ConfigError,
    ValidationError,
    FormatError,
    BinningError,
    PlanError,
    LabelSpaceError,
    PipelineError,
    click.ClickException,
)


def _run(fn):
    try:
        fn()
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (ComputeError, SplitError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_COMPUTE)


@click.group()
def main():
    """Audit metadata traces in frozen visual-encoder embeddings."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--family", required=True, type=click.Choice(PROCESSING_FAMILIES))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
def process(manifest, family, out_dir, seed):
    """Apply every class of a processing family to each manifest image."""

    def body():
        records = load_manifest(manifest)
        ledger = process_manifest(records, family, out_dir, seed)
        click.echo(f"wrote {len(ledger)} variants to {out_dir}")

    _run(body)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--family", required=True, type=click.Choice(ACQUISITION_FAMILIES))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
def split(manifest, family, config_path, seed, out):
    """Build a balanced, photographer-disjoint acquisition split."""

    def body():
        records = load_manifest(manifest)
        config = load_binning_config(config_path) if config_path else default_binning_config(family)
        result = build_acquisition_split(records, family, config=config, seed=seed)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(result.to_json(), fh, indent=2)
        prov = result.provenance
        click.echo(
            f"split: {len(result.train)} train / {len(result.val)} val / "
            f"{len(result.test)} test over {len(prov['retained_classes'])} classes"
        )
        click.echo(f"dropped: {prov['dropped']}")

    _run(body)


@main.command()
@click.option("--family", required=True)
@click.option("--setup", "kind", required=True, type=click.Choice(SETUP_KINDS))
@click.option("--out", type=click.Path())
def plan(family, kind, out):
    """Enumerate the scheme grid for one setup kind."""

    def body():
        space = builtin_space(family)
        schemes = [s.to_json() for s in enumerate_setup_grid(space, kind)]
        text = json.dumps(schemes, indent=2)
        if out:
            Path(out).write_text(text + "\n", encoding="utf-8")
        else:
            click.echo(text)
        click.echo(f"{len(schemes)} schemes", err=True)

    _run(body)


def _report_command(kind, paths, descriptor, seed, out_dir):
    config = RunConfig(
        kind=kind, master_seed=seed, paths=paths, descriptor=descriptor, out_dir=out_dir
    )
    report = run_experiment(config)
    path = save_report(report, config)
    click.echo(f"report written to {path}")
    return report, path


@main.command()
@click.option("--train-tensor", required=True, type=click.Path(exists=True))
@click.option("--test-tensor", required=True, type=click.Path(exists=True))
@click.option("--train-manifest", required=True, type=click.Path(exists=True))
@click.option("--test-manifest", required=True, type=click.Path(exists=True))
@click.option("--setup", "setups", multiple=True, type=click.Choice(SETUP_KINDS))
@click.option("--grid", is_flag=True, help="run all five setups")
@click.option("--k", "k_list", multiple=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out-dir", default="out", type=click.Path())
def knn(train_tensor, test_tensor, train_manifest, test_manifest, setups, grid, k_list, seed, out_dir):
    """Counterfactual kNN semantic classification over a setup grid."""

    def body():
        chosen = list(SETUP_KINDS) if grid else list(setups) or ["all_same"]
        ks = list(k_list) or [1, 5, 10, 20, 50, 100, 200, 500, 1000]
        _, path = _report_command(
            "knn",
            {
                "train_tensor": train_tensor,
                "test_tensor": test_tensor,
                "train_manifest": train_manifest,
                "test_manifest": test_manifest,
            },
            {"setups": chosen, "k_list": ks},
            seed,
            out_dir,
        )
        from metatrace.report import load_report

        export_plot_data(load_report(path), "accuracy_vs_k", Path(path).parent)

    _run(body)


@main.command()
@click.option("--train-emb", required=True, type=click.Path(exists=True))
@click.option("--test-emb", required=True, type=click.Path(exists=True))
@click.option("--train-labels", required=True, type=click.Path(exists=True))
@click.option("--test-labels", required=True, type=click.Path(exists=True))
@click.option("--trials", default=30, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--raw", is_flag=True, help="probe raw (unnormalized) embeddings")
@click.option("--out-dir", default="out", type=click.Path())
def probe(train_emb, test_emb, train_labels, test_labels, trials, seed, raw, out_dir):
    """Linear-probe metadata-label prediction with hyperparameter search."""

    def body():
        _report_command(
            "probe",
            {
                "train_embeddings": train_emb,
                "test_embeddings": test_emb,
                "train_labels": train_labels,
                "test_labels": test_labels,
            },
            {"trials": trials, "normalize_inputs": not raw},
            seed,
            out_dir,
        )

    _run(body)


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--emb", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["same", "different"]))
@click.option("--both", is_flag=True)
@click.option("--k", "k_list", multiple=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out-dir", default="out", type=click.Path())
def retrieve(manifest, emb, mode, both, k_list, seed, out_dir):
    """Paired-capture retrieval recall under same/different-type negatives."""

    def body():
        modes = ["same", "different"] if both or not mode else [mode]
        report, path = _report_command(
            "retrieve",
            {"manifest": manifest, "embeddings": emb},
            {"modes": modes, "k_list": list(k_list) or [1]},
            seed,
            out_dir,
        )
        if len(modes) == 2 and 1 in (list(k_list) or [1]):
            from metatrace.report import load_report

            export_plot_data(load_report(path), "retrieval_scatter", Path(path).parent)

    _run(body)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def report(config_path):
    """Run an experiment described by a JSON/TOML config file."""

    def body():
        config = RunConfig.from_file(config_path)
        result = run_experiment(config)
        path = save_report(result, config)
        click.echo(f"report written to {path}")

    _run(body)


if __name__ == "__main__":
    main()
