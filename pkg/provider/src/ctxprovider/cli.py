"""Command line entry point for the contextual vector exporter."""

import json
import sys

import click

from . import __version__
from .export import ProviderConfig, export


@click.group()
@click.version_option(version=__version__)
def main():
    """Contextual vector provider."""


@main.command("export")
@click.option("--model", required=True,
              help="Model identifier (hub name or local path).")
@click.option("--in", "in_path", required=True,
              type=click.Path(exists=True),
              help="Sentence file: JSON Lines {id, tokens}.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--max-length", default=512, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
def cmd_export(model, in_path, out_path, max_length, batch_size):
    """Write token-aligned last-hidden-state vectors for every sentence."""
    config = ProviderConfig(model=model, max_sequence_length=max_length,
                            batch_size=batch_size)
    summary = export(config, in_path, out_path)
    print(json.dumps({"event": "export_done", **summary}, sort_keys=True),
          file=sys.stderr)
    click.echo(f"{summary['written']} sentence(s) written to {out_path}")
    if summary["skipped"]:
        click.echo(f"{len(summary['skipped'])} sentence(s) skipped; see "
                   f"{out_path}.errors.jsonl")


if __name__ == "__main__":
    main()
