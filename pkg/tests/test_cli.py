import json
import subprocess
import sys

import pytest

from mmfuse.cli import main
from mmfuse.metrics import load_report


def run_cli(*argv):
    return main(list(argv))


def make_dataset(tmp_path, per_class=6, seed=0):
    out = tmp_path / "ds"
    assert run_cli(
        "synth", "--out", str(out), "--n-coarse", "3", "--n-fine", "2",
        "--per-class", str(per_class), "--d-text", "8", "--d-image", "16",
        "--regions", "2", "--seed", str(seed),
    ) == 0
    descriptor = out / "dataset.desc"
    assert run_cli("split", "--dataset", str(descriptor), "--test-fraction", "0.2",
                   "--seed", str(seed)) == 0
    return descriptor


def test_dims_average_plan(capsys):
    assert run_cli("dims", "--inner", "avg", "--outer", "avg", "--final", "avg",
                   "--d-text", "768", "--d-image", "2048") == 0
    out = capsys.readouterr().out
    assert "d_fused=768" in out
    assert "adapter_target=768" in out


def test_dims_concat_growth(capsys):
    assert run_cli("dims", "--inner", "concat", "--outer", "concat", "--final", "concat",
                   "--d-text", "768", "--d-image", "2048") == 0
    out = capsys.readouterr().out
    assert "text_dim=3072" in out and "d_fused=3840" in out


def test_dims_rejects_impossible_plan(capsys):
    assert run_cli("dims", "--inner", "concat", "--outer", "concat", "--final", "avg",
                   "--d-text", "768", "--d-image", "2048") == 2
    assert "error" in capsys.readouterr().err


def test_synth_split_validate_pipeline(tmp_path, capsys):
    descriptor = make_dataset(tmp_path)
    assert run_cli("validate", "--dataset", str(descriptor)) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_flags_corrupt_dataset(tmp_path, capsys):
    descriptor = make_dataset(tmp_path)
    region_file = descriptor.parent / "image_regions.mmeb"
    region_file.write_bytes(region_file.read_bytes()[:-2])
    assert run_cli("validate", "--dataset", str(descriptor)) == 1
    assert "offset" in capsys.readouterr().err


def test_validate_flags_bad_label(tmp_path, capsys):
    descriptor = make_dataset(tmp_path)
    manifest = descriptor.parent / "manifest.csv"
    lines = manifest.read_text().splitlines()
    sample_id = lines[1].split(",")[0]
    lines[1] = f"{sample_id},999,train"
    manifest.write_text("\n".join(lines) + "\n")
    assert run_cli("validate", "--dataset", str(descriptor)) == 1
    assert "label" in capsys.readouterr().err


def test_train_eval_round_trip(tmp_path, capsys):
    descriptor = make_dataset(tmp_path, per_class=8)
    params = tmp_path / "params.mmpr"
    metrics = tmp_path / "metrics.json"
    assert run_cli(
        "train", "--dataset", str(descriptor), "--epochs", "3", "--batch-size", "8",
        "--hidden", "16,8", "--seed", "1",
        "--out-params", str(params), "--out-metrics", str(metrics),
    ) == 0
    out = capsys.readouterr().out
    assert "Accuracy" in out and "Macro-F1" in out and "%" in out
    assert params.is_file() and metrics.is_file()
    report = load_report(metrics)
    assert len(report.loss_curve) == 3

    eval_metrics = tmp_path / "eval.json"
    assert run_cli("eval", "--dataset", str(descriptor), "--params", str(params),
                   "--split", "test", "--per-class", "--out-metrics", str(eval_metrics)) == 0
    out = capsys.readouterr().out
    assert "class" in out  # per-class table
    assert load_report(eval_metrics).split == "test"


def test_eval_supports_masks(tmp_path, capsys):
    descriptor = make_dataset(tmp_path, per_class=8)
    params = tmp_path / "params.mmpr"
    assert run_cli("train", "--dataset", str(descriptor), "--epochs", "1",
                   "--hidden", "8,8", "--out-params", str(params),
                   "--out-metrics", str(tmp_path / "m.json")) == 0
    capsys.readouterr()
    assert run_cli("eval", "--dataset", str(descriptor), "--params", str(params),
                   "--split", "val", "--mask", "text") == 0
    assert "Accuracy" in capsys.readouterr().out


def test_train_outputs_are_reproducible(tmp_path, capsys):
    descriptor = make_dataset(tmp_path, per_class=8)
    blobs = []
    for tag in ("a", "b"):
        params = tmp_path / f"params-{tag}.mmpr"
        metrics = tmp_path / f"metrics-{tag}.json"
        assert run_cli("train", "--dataset", str(descriptor), "--epochs", "2",
                       "--hidden", "16,8", "--seed", "7",
                       "--out-params", str(params), "--out-metrics", str(metrics)) == 0
        blobs.append((params.read_bytes(), metrics.read_bytes()))
    assert blobs[0] == blobs[1]


def test_seeded_subcommands_write_identical_bytes(tmp_path):
    outputs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert run_cli("synth", "--out", str(out), "--n-coarse", "2", "--n-fine", "2",
                       "--per-class", "5", "--d-text", "4", "--d-image", "8",
                       "--regions", "2", "--seed", "13") == 0
        assert run_cli("split", "--dataset", str(out / "dataset.desc"),
                       "--test-fraction", "0.2", "--seed", "13") == 0
        blobs = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
        outputs.append(blobs)
    assert outputs[0] == outputs[1]


def test_train_without_dataset_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exit_info:
        run_cli("train")
    assert exit_info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exit_info:
        run_cli("frobnicate")
    assert exit_info.value.code == 2


def test_no_subcommand_prints_usage(capsys):
    assert run_cli() == 2
    assert "usage" in capsys.readouterr().err


def test_gradcheck_small_geometry(capsys):
    assert run_cli("gradcheck", "--seed", "7", "--d-text", "4", "--d-image", "16",
                   "--classes", "2") == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert out.count("ok") == 27


def test_gradcheck_exit_one_on_unreachable_tolerance(capsys):
    assert run_cli("gradcheck", "--seed", "7", "--d-text", "4", "--d-image", "16",
                   "--classes", "2", "--tolerance", "1e-18") == 1


def test_config_file_defaults_and_flag_override(tmp_path, capsys):
    descriptor = make_dataset(tmp_path, per_class=8)
    config = tmp_path / "run.ini"
    config.write_text(
        "[run]\nseed = 3\n\n[train]\nepochs = 1\nhidden = 8,8\n\n"
        f"[paths]\ndataset = {descriptor}\n"
    )
    metrics = tmp_path / "metrics.json"
    assert run_cli("train", "--config", str(config),
                   "--out-params", str(tmp_path / "p.mmpr"),
                   "--out-metrics", str(metrics)) == 0
    assert len(load_report(metrics).loss_curve) == 1

    assert run_cli("train", "--config", str(config), "--epochs", "2",
                   "--out-params", str(tmp_path / "p2.mmpr"),
                   "--out-metrics", str(metrics)) == 0
    assert len(load_report(metrics).loss_curve) == 2


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "bad.ini"
    config.write_text("[train]\nepochz = 1\n")
    assert run_cli("dims", "--config", str(config)) == 2
    assert "epochz" in capsys.readouterr().err

    config.write_text("[mystery]\nx = 1\n")
    assert run_cli("dims", "--config", str(config)) == 2
    assert "mystery" in capsys.readouterr().err


def test_config_env_var(tmp_path, capsys, monkeypatch):
    config = tmp_path / "env.ini"
    config.write_text("[plan]\nd_text = 8\nd_image = 16\n")
    monkeypatch.setenv("MMFUSE_CONFIG", str(config))
    assert run_cli("dims", "--inner", "avg", "--outer", "avg", "--final", "avg") == 0
    assert "d_fused=8" in capsys.readouterr().out
    monkeypatch.setenv("MMFUSE_CONFIG", str(tmp_path / "missing.ini"))
    assert run_cli("dims") == 2


def test_module_entry_point(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "mmfuse.cli", "dims", "--inner", "avg",
         "--outer", "avg", "--final", "avg"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert "d_fused=768" in result.stdout


def test_metrics_json_is_machine_readable(tmp_path):
    descriptor = make_dataset(tmp_path, per_class=8)
    metrics = tmp_path / "metrics.json"
    assert run_cli("train", "--dataset", str(descriptor), "--epochs", "1",
                   "--hidden", "8,8", "--out-params", str(tmp_path / "p.mmpr"),
                   "--out-metrics", str(metrics)) == 0
    payload = json.loads(metrics.read_text())
    assert set(payload) >= {"accuracy", "macro_f1", "confusion", "loss_curve",
                            "precision", "recall", "f1"}
