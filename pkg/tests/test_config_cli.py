import json

import numpy as np
import pytest

from lreid.cli import main
from lreid.config import ConfigError, RunConfig, apply_overrides, parse_config, serialize_config
from lreid.data import load_folder
from lreid.records import read_records


def test_config_round_trip_identity():
    cfg = RunConfig(seed=11, lr=0.01, use_align=False, emphasis_mode="mask")
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("sed = 7\n")


def test_bad_value_reports_key():
    with pytest.raises(ConfigError, match="bad value for seed"):
        parse_config("seed = banana\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("use_ortho = maybe\n")


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# a comment\n\nseed = 5  # trailing\n")
    assert cfg.seed == 5


def test_overrides_apply_and_validate():
    cfg = apply_overrides(RunConfig(), ["seed=9", "lr=0.5", "use_distill=false"])
    assert (cfg.seed, cfg.lr, cfg.use_distill) == (9, 0.5, False)
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["nope=1"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["seed"])


def tiny_args(tmp_path, extra=()):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "\n".join(
            [
                "seed = 3",
                "num_tasks = 2",
                "ids_per_task = 4",
                "epochs_per_task = 2",
                "batch_p = 4",
                "embed_dim = 16",
                "depth = 1",
                "heads = 2",
                "buffer_ids_per_task = 4",
                "unseen_specs = 1",
                f"out_dir = {tmp_path / 'out'}",
            ]
        )
    )
    return ["--config", str(cfg_file), *extra]


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cli_train_eval_round_trip(tmp_path, capsys):
    assert main(["train", *tiny_args(tmp_path)]) == 0
    out = tmp_path / "out"
    assert (out / "config.echo").exists()
    assert (out / "results.txt").exists()
    records = read_records(out / "metrics.jsonl")
    assert records[-1]["record"] == "summary"
    train_eval = {r["dataset"]: r["map"] for r in records if r["record"] == "eval"}

    ckpt = out / "task2_epoch2.ckpt"
    assert ckpt.exists()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--out", str(tmp_path / "eval.jsonl")]) == 0
    eval_records = read_records(tmp_path / "eval.jsonl")
    # checkpoint + regenerated datasets reproduce training-time eval exactly
    for r in eval_records:
        assert r["map"] == train_eval[r["dataset"]]


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cli_eval_dataset_selection_and_errors(tmp_path, capsys):
    assert main(["train", *tiny_args(tmp_path)]) == 0
    ckpt = tmp_path / "out" / "task2_epoch2.ckpt"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--data", "task1"]) == 0
    printed = capsys.readouterr().out
    assert "task1" in printed and "task2" not in printed
    assert main(["eval", "--checkpoint", str(ckpt), "--data", "bogus"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert "\n" not in err.strip()


def test_cli_missing_checkpoint_errors(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_cli_bad_config_key_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("sed = 7\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_cli_gen_data_round_trips(tmp_path):
    out = tmp_path / "folder"
    assert main(["gen-data", "--out", str(out), "--ids", "4", "--cams", "2", "--imgs", "3", "--seed", "5"]) == 0
    data = load_folder(out, image_size=32)
    assert len(data) == 24
    assert len(np.unique(data.person_ids)) == 4

    out2 = tmp_path / "folder2"
    assert main(["gen-data", "--out", str(out2), "--ids", "4", "--cams", "2", "--imgs", "3", "--seed", "5"]) == 0
    for f in sorted(out.iterdir()):
        assert f.read_bytes() == (out2 / f.name).read_bytes()


def test_cli_gradcheck_quick(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 9 and "FAIL" not in out


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cli_ablate_writes_seven_rows(tmp_path, capsys):
    args = tiny_args(tmp_path, extra=["--set", "epochs_per_task=1", "--set", "unseen_specs=1"])
    assert main(["ablate", *args]) == 0
    rows = read_records(tmp_path / "out" / "ablate" / "ablate.jsonl")
    assert len(rows) == 7
    assert [r["row"] for r in rows] == [
        "base",
        "distill",
        "distill+align",
        "distill+soft",
        "align",
        "align+soft",
        "full",
    ]
    for r in rows:
        echo = tmp_path / "out" / "ablate" / r["row"] / "config.echo"
        assert echo.exists()  # per-row configs logged verbatim
    table = (tmp_path / "out" / "ablate" / "ablate.txt").read_text()
    assert table.count("\n") >= 8


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_cli_train_from_generated_folders(tmp_path):
    for t in range(2):
        assert main(["gen-data", "--out", str(tmp_path / f"t{t}"), "--ids", "4", "--cams", "2", "--imgs", "4", "--seed", str(t)]) == 0
    out = tmp_path / "out"
    dirs = ";".join(str(tmp_path / f"t{t}") for t in range(2))
    args = [
        "train",
        "--set", f"task_dirs={dirs}",
        "--set", "epochs_per_task=1",
        "--set", "batch_p=4",
        "--set", "embed_dim=16",
        "--set", "depth=1",
        "--set", "heads=2",
        "--set", "unseen_specs=0",
        "--set", f"out_dir={out}",
    ]
    assert main(args) == 0
    records = read_records(out / "metrics.jsonl")
    evals = [r for r in records if r["record"] == "eval"]
    assert {r["dataset"] for r in evals} == {"task1", "task2"}


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    env_dir = tmp_path / "env_out"
    monkeypatch.setenv("LREID_OUT_DIR", str(env_dir))
    assert main(["train", *tiny_args(tmp_path)]) == 0
    assert (env_dir / "metrics.jsonl").exists()


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_metric_stream_is_valid_jsonl(tmp_path):
    assert main(["train", *tiny_args(tmp_path)]) == 0
    with open(tmp_path / "out" / "metrics.jsonl") as fh:
        for line in fh:
            json.loads(line)
