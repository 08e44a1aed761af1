"""End-to-end tests of the command-line tool on micro configurations."""
import json
import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import cli
from config.run_config import load_run_config
from conftest import MICRO_DATA, MICRO_ENCODER, schema_violations
from core.tensor import Tensor
from models.config_schemas import MODULE_IDS
from models.report_schemas import EvalReport, ExplainReport, RunSummary
from pipeline import trainer as trainer_module
from pipeline.model import GamedModel
from pipeline.serialization import parse_model, save_model
from pipeline.trainer import METRICS_COLUMNS

ROOT = Path(__file__).parent.parent


def load_schema(name: str) -> dict:
    return json.loads((ROOT / "schemas" / name).read_text())


def toml_table(name, values):
    lines = [f"[{name}]"] + [f"{key} = {json.dumps(value)}" for key, value in values.items()]
    return "\n".join(lines) + "\n"


def write_run_config(path: Path, **train) -> Path:
    text = "seed = 0\n\n" + toml_table("encoder", MICRO_ENCODER) + toml_table("model", {"n_experts": 2}) \
        + toml_table("data", MICRO_DATA) + toml_table("train", {"epochs": 1, "batch_size": 16, "lr": 1e-3, **train})
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.toml"
    spec.write_text(toml_table("data", MICRO_DATA))
    write_run_config(root / "run.toml")
    assert cli.main(["gen-data", "--spec", str(spec), "--out", str(root / "data"), "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    config = workspace / "run.toml"
    out = workspace / "run"
    assert cli.main(["train", "--config", str(config), "--data", str(workspace / "data"), "--out", str(out)]) == 0
    return out


def test_gen_data_writes_splits_and_manifest(workspace):
    data = workspace / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["spec"]["n_train"] == MICRO_DATA["n_train"]
    for split in ("train", "val", "test"):
        info = manifest["splits"][split]
        assert info["file"] == f"{split}.jsonl"
        assert info["records"] == MICRO_DATA[f"n_{split}"]
        assert (data / info["file"]).is_file()


def test_gen_data_is_byte_identical(workspace):
    spec = workspace / "spec.toml"
    again = workspace / "again"
    assert cli.main(["gen-data", "--spec", str(spec), "--out", str(again), "--seed", "3"]) == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
        assert (again / name).read_bytes() == (workspace / "data" / name).read_bytes()


def test_gen_data_gzip(workspace):
    out = workspace / "gz"
    assert cli.main(["gen-data", "--spec", str(workspace / "spec.toml"), "--out", str(out), "--gzip"]) == 0
    train, val, test = cli.load_splits(out)
    assert (len(train), len(val), len(test)) == (48, 16, 16)


def test_gen_data_without_out_is_a_config_error(workspace, capsys):
    assert cli.main(["gen-data", "--spec", str(workspace / "spec.toml")]) == 2
    assert "out" in capsys.readouterr().err


def test_gen_data_overrides_apply_without_a_spec_file(workspace):
    out = workspace / "flags-only"
    assert cli.main(["gen-data", "--out", str(out), "--seed", "5", "--set", "n_train=5",
                     "--set", "data.n_val=3", "--set", "n_test=2"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert (manifest["spec"]["n_train"], manifest["spec"]["n_val"], manifest["seed"]) == (5, 3, 5)
    assert len((out / "train.jsonl").read_text().splitlines()) == 5
    assert cli.main(["gen-data", "--out", str(workspace / "bad"), "--set", "n_train=0"]) == 2


def test_unexpected_failure_exits_with_one(workspace, monkeypatch):
    def explode(spec):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "generate", explode)
    assert cli.main(["gen-data", "--out", str(workspace / "boom"), "--set", "n_train=2"]) == 1


def test_train_writes_artifacts(trained):
    assert {p.name for p in trained.iterdir()} >= {"metrics.csv", "model.bin", "run.json"}
    frame = pd.read_csv(trained / "metrics.csv")
    assert list(frame.columns) == METRICS_COLUMNS
    assert set(frame["epoch"]) == {0, 1}
    assert set(frame["module"]) == {"full", *MODULE_IDS}
    summary = RunSummary.model_validate_json((trained / "run.json").read_text())
    assert summary.epochs == 1 and summary.variant == "full"


def test_zero_learning_rate_keeps_metrics_constant(workspace):
    config = write_run_config(workspace / "lr0.toml", epochs=2, lr=0.0)
    out = workspace / "lr0"
    assert cli.main(["train", "--config", str(config), "--data", str(workspace / "data"), "--out", str(out)]) == 0
    frame = pd.read_csv(out / "metrics.csv")
    spread = frame.groupby(["split", "module"])[["loss", "acc", "p", "r", "f1"]].agg(lambda v: v.max() - v.min())
    assert (spread.to_numpy() <= 1e-5).all()


def test_same_seed_training_is_reproducible(workspace, trained):
    config = workspace / "run.toml"
    out = workspace / "rerun"
    assert cli.main(["train", "--config", str(config), "--data", str(workspace / "data"), "--out", str(out)]) == 0
    assert (out / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
    _, state = parse_model((out / "model.bin").read_bytes())
    _, reference = parse_model((trained / "model.bin").read_bytes())
    for name, values in reference.items():
        np.testing.assert_array_equal(state[name], values)


def test_eval_with_and_without_veto(workspace, trained):
    test_split = str(workspace / "data" / "test.jsonl")
    assert cli.main(["eval", "--model", str(trained / "model.bin"), "--data", test_split]) == 0
    veto = EvalReport.model_validate_json((trained / "eval.json").read_text())
    out = workspace / "no-veto"
    assert cli.main(["eval", "--model", str(trained / "model.bin"), "--data", test_split,
                     "--no-veto", "--out", str(out)]) == 0
    plain = EvalReport.model_validate_json((out / "eval.json").read_text())

    assert veto.use_veto and not plain.use_veto
    assert plain.metrics == plain.mix
    assert set(veto.modules) == set(MODULE_IDS)
    changed = abs(veto.metrics.accuracy - plain.metrics.accuracy) * veto.records
    assert round(changed) <= veto.veto_overrides


def test_emitted_reports_satisfy_their_schemas(workspace, trained):
    test_split = workspace / "data" / "test.jsonl"
    assert cli.main(["eval", "--model", str(trained / "model.bin"), "--data", str(test_split),
                     "--out", str(workspace / "schema-eval")]) == 0
    raw_eval = json.loads((workspace / "schema-eval" / "eval.json").read_text())
    assert schema_violations(raw_eval, load_schema("eval.schema.json")) == []
    report = EvalReport.model_validate(raw_eval)
    assert report.records == MICRO_DATA["n_test"] == report.metrics.n == report.mix.n
    assert set(report.modules) == set(MODULE_IDS)

    for record_id in ("test-00000", "test-00001", "test-00007"):
        assert cli.main(["explain", "--model", str(trained / "model.bin"), "--data", str(test_split),
                         "--id", record_id, "--out", str(workspace / "schema-traces")]) == 0
        raw = json.loads((workspace / "schema-traces" / f"trace-{record_id}.json").read_text())
        assert schema_violations(raw, load_schema("trace.schema.json")) == []
        trace = ExplainReport.model_validate(raw)
        assert trace.record_id == record_id and trace.label in (0, 1)
        assert trace.predicted_label == int(trace.final_p_mix > 0.5)
        assert trace.rule3_reading in ("prose", "formula")
        assert [step.module for step in trace.steps] == list(MODULE_IDS)
        assert {step.rule for step in trace.steps} <= {"R2", "R3", "R4"}
        assert set(trace.module_confidences) == set(MODULE_IDS)
        for step in trace.steps:
            assert 0.0 <= step.confidence <= 1.0 and 0.0 <= step.p_mix_after <= 1.0
            assert step.confidence == pytest.approx(trace.module_confidences[step.module])
        assert trace.steps[-1].p_mix_after == pytest.approx(trace.final_p_mix)
        assert len(trace.summary) >= len(trace.steps)

    raw_run = json.loads((trained / "run.json").read_text())
    assert schema_violations(raw_run, RunSummary.model_json_schema()) == []
    summary = RunSummary.model_validate(raw_run)
    assert summary.test.n == MICRO_DATA["n_test"] and summary.val.n == MICRO_DATA["n_val"]
    assert summary.parameters == GamedModel(load_run_config(workspace / "run.toml")).parameter_count()
    assert sorted(summary.files) == sorted(p.name for p in trained.iterdir() if p.name in summary.files)


def zero_model_file(workspace, name, text_bias=None) -> Path:
    cfg = load_run_config(write_run_config(workspace / f"{name}.toml"), ["model.init=zeros"])
    model = GamedModel(cfg)
    if text_bias is not None:
        model.heads["t"].classifier.bias.values = np.array([text_bias], dtype=np.float32)
    return save_model(model, workspace / name / "model.bin")


def test_explain_all_mid_confidence_record(workspace, capsys):
    model_path = zero_model_file(workspace, "zero")
    assert cli.main(["explain", "--model", str(model_path), "--data", str(workspace / "data" / "test.jsonl"),
                     "--id", "test-00002"]) == 0
    trace_path = model_path.parent / "trace-test-00002.json"
    raw = json.loads(trace_path.read_text())
    assert schema_violations(raw, load_schema("trace.schema.json")) == []

    report = ExplainReport.model_validate(raw)
    assert [step.rule for step in report.steps] == ["R4"] * 4
    assert report.initial_p_mix == report.final_p_mix == 0.5
    assert report.module_confidences == {m: 0.5 for m in MODULE_IDS}
    assert "the concatenated prediction decided" in report.summary[-1]
    printed = capsys.readouterr().out
    assert "R4" in printed and "final: P_mix" in printed


def test_explain_boosted_text_head_replaces(workspace):
    model_path = zero_model_file(workspace, "boosted", text_bias=5.0)
    assert cli.main(["explain", "--model", str(model_path), "--data", str(workspace / "data" / "val.jsonl"),
                     "--id", "val-00000", "--out", str(workspace / "traces")]) == 0
    report = ExplainReport.model_validate_json((workspace / "traces" / "trace-val-00000.json").read_text())
    assert [step.rule for step in report.steps] == ["R4", "R4", "R2", "R4"]
    assert report.predicted_label == 1
    assert report.final_p_mix == pytest.approx(1.0 / (1.0 + np.exp(-5.0)), abs=1e-6)


def test_ablate_writes_sorted_rows(workspace, capsys):
    out = workspace / "ablation"
    assert cli.main(["ablate", "--config", str(workspace / "run.toml"), "--data", str(workspace / "data"),
                     "--grid", "none,module_subset=mm", "--out", str(out)]) == 0
    frame = pd.read_csv(out / "ablation.csv")
    assert list(frame.columns) == ["variant", "acc", "p", "r", "f1"]
    assert set(frame["variant"]) == {"full", "module_subset=mm"}
    assert list(frame["acc"]) == sorted(frame["acc"], reverse=True)
    assert "module_subset=mm" in capsys.readouterr().out


def test_similarity_writes_pairs(workspace, trained):
    assert cli.main(["similarity", "--model", str(trained / "model.bin"),
                     "--data", str(workspace / "data" / "test.jsonl"), "--per-class", "2"]) == 0
    frame = pd.read_csv(trained / "similarity.csv")
    assert set(frame["module"]) == {*MODULE_IDS, "mix"}
    assert len(frame) == 5 * 4 * 4
    diagonal = frame[frame["id_a"] == frame["id_b"]]
    assert np.all(np.isclose(diagonal["cosine"], 1.0, atol=1e-5) | (diagonal["cosine"] == 0.0))


def test_exit_code_config_error(workspace, trained):
    assert cli.main(["train", "--config", str(workspace / "run.toml"), "--data", str(workspace / "data"),
                     "--out", str(workspace / "bad"), "--set", "train.lr=-1"]) == 2
    assert cli.main(["ablate", "--config", str(workspace / "run.toml"), "--data", str(workspace / "data"),
                     "--grid", "bogus", "--out", str(workspace / "bad")]) == 2


def test_exit_code_data_error(workspace, capsys):
    assert cli.main(["train", "--config", str(workspace / "run.toml"), "--data", str(workspace / "absent"),
                     "--out", str(workspace / "bad")]) == 3

    broken = workspace / "broken-data"
    shutil.copytree(workspace / "data", broken)
    lines = (broken / "train.jsonl").read_text().splitlines()
    lines[1] = lines[1][:20]
    (broken / "train.jsonl").write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert cli.main(["train", "--config", str(workspace / "run.toml"), "--data", str(broken),
                     "--out", str(workspace / "bad")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_exit_code_numeric_divergence(workspace, monkeypatch):
    monkeypatch.setattr(trainer_module, "compute_loss", lambda *args, **kwargs: Tensor(float("inf")))
    assert cli.main(["train", "--config", str(workspace / "run.toml"), "--data", str(workspace / "data"),
                     "--out", str(workspace / "diverged")]) == 4


def test_exit_code_model_format(workspace, trained, capsys):
    broken = workspace / "broken.bin"
    broken.write_bytes(b"NOPE" + (trained / "model.bin").read_bytes()[4:])
    assert cli.main(["eval", "--model", str(broken), "--data", str(workspace / "data" / "test.jsonl")]) == 5
    assert "bad magic" in capsys.readouterr().err


def test_exit_code_unknown_record(workspace, trained):
    assert cli.main(["explain", "--model", str(trained / "model.bin"),
                     "--data", str(workspace / "data" / "test.jsonl"), "--id", "nope"]) == 6


@pytest.mark.slow
def test_reference_run_beats_fusion_only(tmp_path):
    """Default data and model: test accuracy of at least 0.90 and above the mm-only variant."""
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(data), "--seed", "0"]) == 0
    config = ROOT / "configs" / "default.toml"
    assert cli.main(["train", "--config", str(config), "--data", str(data), "--out", str(tmp_path / "run")]) == 0
    summary = RunSummary.model_validate_json((tmp_path / "run" / "run.json").read_text())
    assert summary.test.accuracy >= 0.90

    assert cli.main(["ablate", "--config", str(config), "--data", str(data), "--grid", "module_subset=mm",
                     "--out", str(tmp_path / "mm")]) == 0
    mm_only = pd.read_csv(tmp_path / "mm" / "ablation.csv")["acc"].iloc[0]
    assert summary.test.accuracy > mm_only


@pytest.mark.slow
def test_ablation_directions_over_three_seeds(tmp_path):
    """Full model at least as accurate as w/o AdaIN and w/o veto on most seeds."""
    config = ROOT / "configs" / "default.toml"
    wins = {"disable_adain": 0, "disable_veto": 0}
    for seed in (0, 1, 2):
        data = tmp_path / f"data-{seed}"
        out = tmp_path / f"ablate-{seed}"
        assert cli.main(["gen-data", "--out", str(data), "--seed", str(seed)]) == 0
        assert cli.main(["ablate", "--config", str(config), "--data", str(data), "--seed", str(seed),
                         "--grid", "none,disable_adain,disable_veto", "--out", str(out)]) == 0
        acc = pd.read_csv(out / "ablation.csv").set_index("variant")["acc"]
        for variant in wins:
            wins[variant] += int(acc["full"] >= acc[variant])
    assert all(count >= 2 for count in wins.values())
