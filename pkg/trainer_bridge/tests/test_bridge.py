from __future__ import annotations

import hashlib
import json
import stat
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from trainer_bridge.bridge import (
    STAGE_TWO_REQUIRES_ADAPTER,
    ManifestError,
    MissingDependencyError,
    StageSequenceError,
    TrainingError,
    emit_training_config,
    run_finetune,
)
from trainer_bridge.cli import main as cli_main


def make_dataset(root: Path, stage: int = 1) -> Path:
    """Write a dataset + manifest pair in the pipeline's emitted format."""
    records = [
        {
            "problem_id": f"p{i}",
            "messages": [
                {"role": "user", "content": f"question {i}"},
                {"role": "assistant", "content": f"<hypnosis>hint</hypnosis><think>\nwork\n</think>\n\nThe final answer is \\boxed{{{i}}}."},
            ],
            "difficulty": "easy" if i % 2 == 0 else "hard",
            "provenance": "short_cot" if i % 2 == 0 else "long_cot",
        }
        for i in range(4)
    ]
    filename = f"sft_stage{stage}.jsonl"
    payload = "\n".join(json.dumps(r) for r in records) + "\n"
    (root / filename).write_text(payload, encoding="utf-8")
    manifest = {
        "stage": stage,
        "seed": 42,
        "file": filename,
        "sample_count": len(records),
        "dataset_sha256": hashlib.sha256(payload.encode("utf-8")).hexdigest(),
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def fake_launcher(root: Path, exit_code: int = 0) -> Path:
    script = root / "fake-trainer"
    script.write_text(f"#!/bin/sh\necho training with \"$@\"\nexit {exit_code}\n")
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return script


def test_emit_config_carries_hyperparameters(tmp_path):
    manifest = make_dataset(tmp_path)
    out = emit_training_config(manifest, "base-7b", tmp_path / "cfg" / "stage1.yaml")
    config = yaml.safe_load(out.read_text())
    assert config["lora_rank"] == 8
    assert config["lora_alpha"] == 16
    assert config["learning_rate"] == 1e-5
    assert config["max_steps"] == 6400
    assert config["method"] == "lora"
    assert config["base_model"] == "base-7b"
    assert config["stage"] == 1
    assert config["dataset"]["schema"]["messages_field"] == "messages"
    assert Path(config["dataset"]["path"]).exists()


def test_emit_config_is_deterministic(tmp_path):
    manifest = make_dataset(tmp_path)
    first = emit_training_config(manifest, "base-7b", tmp_path / "a.yaml")
    second = emit_training_config(manifest, "base-7b", tmp_path / "b.yaml")
    assert first.read_bytes() == second.read_bytes()


def test_emit_config_rejects_tampered_dataset(tmp_path):
    manifest = make_dataset(tmp_path)
    dataset = tmp_path / "sft_stage1.jsonl"
    dataset.write_text(dataset.read_text() + "{}\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="digest mismatch"):
        emit_training_config(manifest, "base-7b", tmp_path / "cfg.yaml")


def test_emit_config_requires_dataset_file(tmp_path):
    manifest = make_dataset(tmp_path)
    (tmp_path / "sft_stage1.jsonl").unlink()
    with pytest.raises(ManifestError, match="does not exist"):
        emit_training_config(manifest, "base-7b", tmp_path / "cfg.yaml")


def test_emit_config_requires_manifest_keys(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"stage": 1}))
    with pytest.raises(ManifestError, match="lacks required key"):
        emit_training_config(path, "base-7b", tmp_path / "cfg.yaml")


def _tree(root: Path) -> set[str]:
    return {str(p.relative_to(root)) for p in root.rglob("*")}


def test_dry_run_validates_without_side_effects(tmp_path):
    manifest = make_dataset(tmp_path)
    config = emit_training_config(manifest, "base-7b", tmp_path / "cfg" / "stage1.yaml")
    before = _tree(tmp_path)
    handle = run_finetune(config, "one", dry_run=True)
    assert handle.launched is False
    assert handle.log_path is None
    assert _tree(tmp_path) == before


def test_stage_two_without_stage_one_adapter_fails(tmp_path):
    manifest = make_dataset(tmp_path, stage=2)
    config = emit_training_config(manifest, "base-7b", tmp_path / "stage2.yaml")
    with pytest.raises(StageSequenceError, match="run stage one first"):
        run_finetune(config, "two", dry_run=True)
    assert STAGE_TWO_REQUIRES_ADAPTER.startswith("stage two resumes")


def test_stage_two_with_missing_adapter_path_fails(tmp_path):
    manifest = make_dataset(tmp_path, stage=2)
    config = emit_training_config(
        manifest, "base-7b", tmp_path / "stage2.yaml",
        resume_adapter=tmp_path / "never_created",
    )
    with pytest.raises(StageSequenceError):
        run_finetune(config, "two", dry_run=True)


def test_missing_framework_is_actionable(tmp_path):
    manifest = make_dataset(tmp_path)
    config = emit_training_config(manifest, "base-7b", tmp_path / "cfg.yaml")
    with pytest.raises(MissingDependencyError, match="definitely-not-a-trainer"):
        run_finetune(config, "one", launcher=("definitely-not-a-trainer",))


def test_launch_supervises_subprocess(tmp_path):
    manifest = make_dataset(tmp_path)
    config = emit_training_config(manifest, "base-7b", tmp_path / "cfg.yaml")
    launcher = fake_launcher(tmp_path)
    handle = run_finetune(config, "one", launcher=(str(launcher),))
    assert handle.launched is True
    assert handle.returncode == 0
    assert "training with" in handle.log_path.read_text()


def test_nonzero_exit_surfaces_log_tail(tmp_path):
    manifest = make_dataset(tmp_path)
    config = emit_training_config(manifest, "base-7b", tmp_path / "cfg.yaml")
    launcher = fake_launcher(tmp_path, exit_code=7)
    with pytest.raises(TrainingError, match="exited with 7"):
        run_finetune(config, "one", launcher=(str(launcher),))


def test_two_stage_sequencing(tmp_path):
    launcher = fake_launcher(tmp_path)
    stage1_dir = tmp_path / "d1"
    stage2_dir = tmp_path / "d2"
    stage1_dir.mkdir()
    stage2_dir.mkdir()
    m1 = make_dataset(stage1_dir, stage=1)
    m2 = make_dataset(stage2_dir, stage=2)

    c1 = emit_training_config(m1, "base-7b", tmp_path / "stage1.yaml", output_dir=tmp_path / "out1")
    h1 = run_finetune(c1, "one", launcher=(str(launcher),))

    c2 = emit_training_config(
        m2, "base-7b", tmp_path / "stage2.yaml",
        output_dir=tmp_path / "out2",
        resume_adapter=h1.output_dir,
    )
    config2 = yaml.safe_load(c2.read_text())
    assert config2["resume_adapter"] == str(h1.output_dir.resolve())
    h2 = run_finetune(c2, "two", launcher=(str(launcher),))
    assert h2.launched is True


def test_cli_emit_and_dry_run(tmp_path):
    manifest = make_dataset(tmp_path)
    runner = CliRunner()
    result = runner.invoke(cli_main, [
        "emit-config",
        "--manifest", str(manifest),
        "--base-model", "base-7b",
        "--out", str(tmp_path / "cfg.yaml"),
    ], catch_exceptions=False)
    assert result.exit_code == 0, result.output

    result = runner.invoke(cli_main, [
        "launch", "--config", str(tmp_path / "cfg.yaml"), "--stage", "one", "--dry-run",
    ], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    assert "dry run ok" in result.output


def test_cli_stage_two_error_message(tmp_path):
    manifest = make_dataset(tmp_path, stage=2)
    runner = CliRunner()
    runner.invoke(cli_main, [
        "emit-config", "--manifest", str(manifest),
        "--base-model", "b", "--out", str(tmp_path / "cfg.yaml"),
    ], catch_exceptions=False)
    result = runner.invoke(cli_main, [
        "launch", "--config", str(tmp_path / "cfg.yaml"), "--stage", "two", "--dry-run",
    ])
    assert result.exit_code == 2
    assert "run stage one first" in result.output
