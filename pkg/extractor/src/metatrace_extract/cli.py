"""metatrace-extract command-line interface."""

from __future__ import annotations

import sys

import click

from metatrace_extract.extract import ExtractError, ExtractorJob, extract, extract_variants
from metatrace_extract.formats import FormatError
from metatrace_extract.models import ModelError, list_models


def _run(fn):
    try:
        fn()
    except (ModelError, FormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ExtractError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


@click.group()
def main():
    """Run pretrained visual encoders and write the shared embedding format."""


@main.command("extract")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--model", required=True)
@click.option("--output", required=True, type=click.Path())
@click.option("--batch-size", default=32, type=int)
@click.option("--device", default="cpu")
@click.option("--pretrained/--untrained", default=False,
              help="load hub weights (needs network) or seeded random init")
@click.option("--seed", default=0, type=int)
@click.option("--skip-bad", is_flag=True, help="skip unreadable images, log them")
def extract_cmd(manifest, model, output, batch_size, device, pretrained, seed, skip_bad):
    """One embedding row per manifest entry, in manifest order."""

    def body():
        job = ExtractorJob(
            manifest=manifest, model=model, output=output, batch_size=batch_size,
            device=device, pretrained=pretrained, seed=seed, skip_bad=skip_bad,
        )
        path = extract(job)
        click.echo(f"embeddings written to {path}")

    _run(body)


@main.command("extract-variants")
@click.option("--ledger", required=True, type=click.Path(exists=True))
@click.option("--model", required=True)
@click.option("--output", required=True, type=click.Path())
@click.option("--batch-size", default=32, type=int)
@click.option("--device", default="cpu")
@click.option("--pretrained/--untrained", default=False)
@click.option("--seed", default=0, type=int)
def extract_variants_cmd(ledger, model, output, batch_size, device, pretrained, seed):
    """n x M x d variant tensor over a processing-pipeline ledger."""

    def body():
        path = extract_variants(
            ledger, model, output, batch_size=batch_size, device=device,
            pretrained=pretrained, seed=seed,
        )
        click.echo(f"tensor written to {path}")

    _run(body)


@main.command("list-models")
def list_models_cmd():
    """Supported encoders: name, regime, dim, input resolution."""
    click.echo(f"{'name':<16} {'regime':<6} {'dim':>5} {'resolution':>10}")
    for spec in list_models():
        click.echo(f"{spec.name:<16} {spec.regime:<6} {spec.dim:>5} {spec.resolution:>10}")


if __name__ == "__main__":
    main()
