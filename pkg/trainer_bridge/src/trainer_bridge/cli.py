"""CLI for emitting training configs and supervising fine-tuning launches."""

from __future__ import annotations

import sys

import click

from .bridge import (
    DEFAULT_MAX_STEPS,
    ManifestError,
    MissingDependencyError,
    StageSequenceError,
    TrainingError,
    emit_training_config,
    run_finetune,
)

_ERRORS = (ManifestError, MissingDependencyError, StageSequenceError, TrainingError, ValueError, OSError)


@click.group()
def main():
    pass


@main.command("emit-config")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--base-model", required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--max-steps", type=int, default=DEFAULT_MAX_STEPS, show_default=True)
@click.option("--output-dir", type=click.Path(), default=None)
@click.option("--resume-adapter", type=click.Path(), default=None,
              help="Stage-one adapter directory (required before a stage-two launch).")
def emit_config(manifest_path, base_model, out_path, max_steps, output_dir, resume_adapter):
    """Write a training config for an emitted dataset + manifest."""
    try:
        path = emit_training_config(
            manifest_path,
            base_model,
            out_path,
            max_steps=max_steps,
            output_dir=output_dir,
            resume_adapter=resume_adapter,
        )
    except _ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(str(path))


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--stage", type=click.Choice(["one", "two"]), required=True)
@click.option("--dry-run", is_flag=True, default=False)
@click.option("--launcher", default=None, help="Override the framework command (space-separated).")
def launch(config_path, stage, dry_run, launcher):
    """Validate and launch a fine-tuning run for one stage."""
    try:
        handle = run_finetune(
            config_path,
            stage,
            dry_run=dry_run,
            launcher=tuple(launcher.split()) if launcher else None,
        )
    except _ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if handle.launched:
        click.echo(f"finished: outputs in {handle.output_dir}, log at {handle.log_path}")
    else:
        click.echo(f"dry run ok: config {handle.config_path} validates")


if __name__ == "__main__":
    main()
