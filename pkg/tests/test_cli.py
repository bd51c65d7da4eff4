"""Command line behavior: subcommands, exit codes, artifacts."""

import json

import pytest

from kwinnow.cli import build_parser, main
from kwinnow.harness import RunRecord


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def tiny_train_overlay():
    return {"dataset": "blobs", "classes": 4, "train_count": 160,
            "test_count": 80, "dtype": "float64",
            "arch": {"preset": "fc", "input_dim": 16, "hidden": [12],
                     "classes": 4},
            "lr": 0.02, "weight_decay": 0.0, "epochs": 2,
            "batch_size": 16}


def test_every_documented_subcommand_parses():
    parser = build_parser()
    for name in ("train", "imp", "noise-eval", "continual", "grid"):
        args = parser.parse_args([name, "--seed", "1", "--out", "x",
                                  "--full"])
        assert args.command == name
        assert args.seed == 1 and args.full
    args = parser.parse_args(["data", "fetch", "--data-dir", "d"])
    assert args.data_command == "fetch"
    args = parser.parse_args(["plotdata", "r.jsonl", "--out", "plots"])
    assert args.records == ["r.jsonl"]


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == 2


def test_train_writes_record_and_prints_summary(tmp_path, capsys):
    cfg = write_config(tmp_path, tiny_train_overlay())
    out = tmp_path / "run"
    code = main(["train", "--config", cfg, "--out", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("done accuracy=")
    assert "record:" in stdout
    record = RunRecord.load(out / "record.jsonl")
    assert record.config["dataset"] == "blobs"
    assert record.config["epochs"] == 2
    assert len(record.events_of("epoch")) == 2
    assert record.events_of("summary")


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, dict(tiny_train_overlay(), seed=4))
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--seed", "9",
                 "--out", str(out)]) == 0
    record = RunRecord.load(out / "record.jsonl")
    assert record.config["seed"] == 9


def test_config_errors_exit_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert main(["train", "--config", missing]) == 2
    assert "config error" in capsys.readouterr().err

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["train", "--config", str(broken)]) == 2

    not_object = tmp_path / "list.json"
    not_object.write_text("[1, 2]")
    assert main(["train", "--config", str(not_object)]) == 2

    wrong = write_config(tmp_path, {"protocol": "imp"}, "wrong.json")
    assert main(["train", "--config", wrong]) == 2
    assert "subcommand" in capsys.readouterr().err

    bad_dtype = write_config(
        tmp_path, dict(tiny_train_overlay(), dtype="float16"), "dt.json")
    assert main(["train", "--config", bad_dtype]) == 2


def test_missing_data_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {"dataset": "mnist",
                                  "data_dir": str(tmp_path / "nowhere"),
                                  "train_count": 100, "epochs": 1})
    assert main(["train", "--config", cfg]) == 3
    assert "data error" in capsys.readouterr().err


def test_data_fetch_verifies_vendored_copy(data_dir, capsys):
    assert main(["data", "fetch", "--data-dir", str(data_dir)]) == 0
    assert "mnist ready" in capsys.readouterr().out


def test_data_fetch_downloads_from_alternate_url(tmp_path, data_dir,
                                                 capsys):
    src = data_dir / "mnist" / "raw"
    code = main(["data", "fetch", "--data-dir", str(tmp_path),
                 "--base-url", src.as_uri() + "/"])
    assert code == 0
    raw = tmp_path / "mnist" / "raw"
    assert (raw / "train-images-idx3-ubyte.gz").exists()


def test_data_fetch_unreachable_exits_3(tmp_path, capsys):
    code = main(["data", "fetch", "--data-dir", str(tmp_path),
                 "--base-url", (tmp_path / "void").as_uri() + "/"])
    assert code == 3
    assert "data error" in capsys.readouterr().err


def test_imp_subcommand_tiny(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "dataset": "blobs", "classes": 4, "train_count": 160,
        "test_count": 80, "dtype": "float64",
        "arch": {"preset": "fc", "input_dim": 16, "hidden": [12],
                 "classes": 4},
        "lr": 0.01, "epochs_per_round": 1, "batch_size": 32,
        "prune_fraction": 0.25, "target_density": 0.5,
        "random_rounds": [], "save_mask_rounds": []})
    out = tmp_path / "imp"
    assert main(["imp", "--config", cfg, "--out", str(out)]) == 0
    assert "final_density" in capsys.readouterr().out
    assert (out / "mask_final.bin").exists()
    record = RunRecord.load(out / "record.jsonl")
    assert record.events_of("round")


def test_noise_eval_subcommand_tiny(tmp_path):
    cfg = write_config(tmp_path, {
        "imp": {"dataset": "blobs", "classes": 4, "train_count": 160,
                "test_count": 80, "dtype": "float64",
                "arch": {"preset": "fc", "input_dim": 16, "hidden": [12],
                         "classes": 4},
                "lr": 0.01, "epochs_per_round": 1, "batch_size": 32,
                "prune_fraction": 0.25, "target_density": 0.5},
        "arms": [{"name": "dense", "imp_round": 0},
                 {"name": "thin", "imp_round": 2}],
        "ps": [0.0, 0.3]})
    out = tmp_path / "noise"
    assert main(["noise-eval", "--config", cfg, "--out", str(out)]) == 0
    record = RunRecord.load(out / "record.jsonl")
    assert record.config["protocol"] == "noise"
    assert len(record.events_of("noise")) == 4


def test_grid_subcommand_tiny(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "fixed": {"dataset": "blobs", "classes": 4, "train_count": 120,
                  "test_count": 60, "dtype": "float64",
                  "arch": {"preset": "fc", "input_dim": 16,
                           "hidden": [12], "classes": 4},
                  "optimizer": "adam", "epochs": 1, "batch_size": 32},
        "axes": {"lr": [0.03, 0.01]}})
    out = tmp_path / "grid"
    assert main(["grid", "--config", cfg, "--out", str(out)]) == 0
    assert "completed=2" in capsys.readouterr().out
    record = RunRecord.load(out / "record.jsonl")
    assert len(record.events_of("point")) == 2


def test_plotdata_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path, tiny_train_overlay())
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run)]) == 0
    plots = tmp_path / "plots"
    capsys.readouterr()
    assert main(["plotdata", str(run), "--out", str(plots)]) == 0
    stdout = capsys.readouterr().out
    assert "manifest.json" in stdout
    assert (plots / "manifest.json").exists()
    tables = json.loads((plots / "manifest.json").read_text())
    assert len(tables["files"]) == 1


def test_plotdata_missing_record_exits_3(tmp_path, capsys):
    assert main(["plotdata", str(tmp_path / "ghost"),
                 "--out", str(tmp_path / "plots")]) == 3
    assert "no run record" in capsys.readouterr().err
