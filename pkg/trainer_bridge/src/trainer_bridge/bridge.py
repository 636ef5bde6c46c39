"""Config emission and subprocess supervision for low-rank-adapter SFT runs.

The bridge consumes the dataset pipeline's emitted files (sft_stage{1,2}.jsonl
plus manifest.json) and drives an external fine-tuning framework.  It never
implements a training loop itself, so the pipeline stays GPU-free and the
framework stays replaceable.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

import yaml

#: low-rank adaptation hyperparameters and the step budget the runs use
LORA_RANK = 8
LORA_ALPHA = 16
LEARNING_RATE = 1e-5
DEFAULT_MAX_STEPS = 6400

DEFAULT_LAUNCHER = ("llamafactory-cli", "train")

STAGE_TWO_REQUIRES_ADAPTER = (
    "stage two resumes from the stage-one adapters: run stage one first and "
    "set resume_adapter to its output directory"
)

LOG_TAIL_LINES = 30


class ManifestError(Exception):
    """Manifest missing, malformed, or inconsistent with its dataset file."""


class MissingDependencyError(Exception):
    """The external fine-tuning framework is not installed."""


class StageSequenceError(Exception):
    """Stage-two launch attempted without stage-one outputs."""


class TrainingError(Exception):
    """The framework subprocess exited non-zero."""


@dataclass(frozen=True)
class RunHandle:
    config_path: Path
    output_dir: Path
    log_path: Path | None
    launched: bool
    returncode: int | None = None


def _load_manifest(manifest_path: Path) -> tuple[dict, Path]:
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    for key in ("file", "dataset_sha256", "stage"):
        if key not in manifest:
            raise ManifestError(f"manifest {manifest_path} lacks required key '{key}'")
    dataset_path = manifest_path.parent / manifest["file"]
    if not dataset_path.exists():
        raise ManifestError(f"dataset file {dataset_path} named by the manifest does not exist")
    return manifest, dataset_path


def _verify_digest(manifest: dict, dataset_path: Path) -> None:
    actual = hashlib.sha256(dataset_path.read_bytes()).hexdigest()
    if actual != manifest["dataset_sha256"]:
        raise ManifestError(
            f"dataset digest mismatch for {dataset_path}: manifest says "
            f"{manifest['dataset_sha256'][:12]}..., file is {actual[:12]}..."
        )


def emit_training_config(
    manifest_path: str | Path,
    base_model_id: str,
    out_path: str | Path,
    max_steps: int = DEFAULT_MAX_STEPS,
    output_dir: str | Path | None = None,
    resume_adapter: str | Path | None = None,
) -> Path:
    """Write a YAML training config for the dataset behind ``manifest_path``.

    Validates the manifest/dataset digest first; emission is deterministic
    for a given (manifest, base_model_id) pair.
    """
    manifest_path = Path(manifest_path)
    manifest, dataset_path = _load_manifest(manifest_path)
    _verify_digest(manifest, dataset_path)

    out_path = Path(out_path)
    stage = int(manifest["stage"])
    if output_dir is None:
        output_dir = out_path.parent / f"stage{stage}_output"

    config = {
        "base_model": base_model_id,
        "stage": stage,
        "method": "lora",
        "lora_rank": LORA_RANK,
        "lora_alpha": LORA_ALPHA,
        "learning_rate": LEARNING_RATE,
        "max_steps": max_steps,
        "dataset": {
            "path": str(dataset_path.resolve()),
            "sha256": manifest["dataset_sha256"],
            "format": "chat_messages_jsonl",
            "schema": {
                "messages_field": "messages",
                "role_field": "role",
                "content_field": "content",
                "user_role": "user",
                "assistant_role": "assistant",
            },
        },
        "output_dir": str(Path(output_dir).resolve()),
        "resume_adapter": str(Path(resume_adapter).resolve()) if resume_adapter else None,
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return out_path


def run_finetune(
    config_path: str | Path,
    stage: str,
    dry_run: bool = False,
    launcher: tuple[str, ...] | None = None,
) -> RunHandle:
    """Launch (or, with ``dry_run``, only validate) a fine-tuning run.

    Stage "two" refuses to start unless the config points at an existing
    stage-one adapter directory.  The framework binary must be on PATH; a
    non-zero exit surfaces with the log tail attached.
    """
    if stage not in ("one", "two"):
        raise ValueError(f"stage must be 'one' or 'two', not {stage!r}")
    config_path = Path(config_path)
    try:
        config = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read training config {config_path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ManifestError(f"training config {config_path} is not a mapping")

    dataset = config.get("dataset") or {}
    dataset_path = Path(dataset.get("path", ""))
    if not dataset_path.exists():
        raise ManifestError(f"dataset {dataset_path} named by the config does not exist")
    actual = hashlib.sha256(dataset_path.read_bytes()).hexdigest()
    if actual != dataset.get("sha256"):
        raise ManifestError(f"dataset {dataset_path} does not match the digest in the config")

    if stage == "two":
        adapter = config.get("resume_adapter")
        if not adapter or not Path(adapter).exists():
            raise StageSequenceError(STAGE_TWO_REQUIRES_ADAPTER)

    output_dir = Path(config["output_dir"])
    if dry_run:
        return RunHandle(config_path=config_path, output_dir=output_dir, log_path=None, launched=False)

    command = tuple(launcher or config.get("launcher") or DEFAULT_LAUNCHER) + (str(config_path),)
    if shutil.which(command[0]) is None:
        raise MissingDependencyError(
            f"fine-tuning framework '{command[0]}' not found on PATH; install it "
            f"or pass an explicit launcher command"
        )

    output_dir.mkdir(parents=True, exist_ok=True)
    log_path = output_dir / f"train_stage_{stage}.log"
    completed = subprocess.run(command, capture_output=True, text=True)
    log_path.write_text(completed.stdout + completed.stderr, encoding="utf-8")
    if completed.returncode != 0:
        tail = "\n".join((completed.stdout + completed.stderr).splitlines()[-LOG_TAIL_LINES:])
        raise TrainingError(
            f"'{' '.join(command)}' exited with {completed.returncode}; log tail:\n{tail}"
        )
    return RunHandle(
        config_path=config_path,
        output_dir=output_dir,
        log_path=log_path,
        launched=True,
        returncode=completed.returncode,
    )
