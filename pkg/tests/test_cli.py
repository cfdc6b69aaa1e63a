import os

import numpy as np
import pytest

from evidgen import cli


def _run(tmp_path, *argv):
    config = cli.build_config(list(argv) + ["--out", str(tmp_path / "runs")])
    status = cli.run(config)
    runs = sorted((tmp_path / "runs").glob("*")) if (tmp_path / "runs").exists() else []
    return status, runs


TINY = ["--seed", "7", "--n-per-class", "24", "--iterations", "20",
        "--epochs", "3", "--batch-size", "12", "--resolution", "12"]


def test_missing_dataset_exits_2_without_partial_run_dir(tmp_path):
    status, runs = _run(tmp_path, "train-gen", "--preset", "mnist",
                        "--dataset-images", str(tmp_path / "nope.idx"),
                        "--dataset-labels", str(tmp_path / "nope2.idx"))
    assert status == cli.EXIT_CONFIG
    assert runs == []


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("trainer.bogus_knob=12\n")
    with pytest.raises(cli.ConfigError, match="bogus_knob"):
        cli.build_config(["train-gen", "--config", str(cfg)])


def test_config_file_parsed_and_flags_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# comment line\n"
        "trainer.epochs = 9\n"
        "seed=3\n"
        "oodgen.batch-size=17\n"
    )
    config = cli.build_config(["reproduce-toy", "--config", str(cfg), "--seed", "5"])
    assert config.epochs == 9          # from file
    assert config.batch_size == 17     # dashes normalize to underscores
    assert config.seed == 5            # flag wins over file


def test_bad_epsilon_grid_rejected(tmp_path):
    status, runs = _run(tmp_path, "reproduce-toy", "--epsilon-grid", "0.5,0.2")
    assert status == cli.EXIT_CONFIG
    assert runs == []


def test_reproduce_toy_writes_expected_artifacts(tmp_path):
    status, runs = _run(tmp_path, "reproduce-toy", *TINY)
    assert status == cli.EXIT_OK
    assert len(runs) == 1
    names = {p.name for p in runs[0].iterdir()}
    for expected in ("manifest.txt", "stack.ckpt", "classifier.ckpt", "objectives.csv",
                     "epochs.csv", "boundary.csv", "boundary.pgm", "generated.csv",
                     "metrics.csv"):
        assert expected in names, f"missing {expected} in {sorted(names)}"
    manifest = (runs[0] / "manifest.txt").read_text()
    assert "seed=7" in manifest
    assert "task=reproduce-toy" in manifest
    assert "version.evidgen=" in manifest


def test_run_dir_naming_convention(tmp_path):
    status, runs = _run(tmp_path, "reproduce-toy", *TINY)
    assert status == cli.EXIT_OK
    name = runs[0].name
    assert name.startswith("reproduce-toy-")
    assert name.endswith("-7")


def test_same_config_and_seed_give_byte_identical_csvs(tmp_path):
    status1, runs1 = _run(tmp_path, "reproduce-toy", *TINY)
    status2, runs2 = _run(tmp_path, "reproduce-toy", *TINY)
    assert status1 == status2 == cli.EXIT_OK
    first, second = runs2[0], runs2[1]
    csvs = sorted(p.name for p in first.iterdir() if p.suffix == ".csv")
    assert csvs
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    assert (first / "manifest.txt").read_bytes() == (second / "manifest.txt").read_bytes()


def test_stage_chaining_and_eval_tasks(tmp_path):
    status, runs = _run(tmp_path, "train-gen", *TINY)
    assert status == cli.EXIT_OK
    stack_ckpt = str(runs[0] / "stack.ckpt")

    status, runs = _run(tmp_path, "train-clf", "--stack-ckpt", stack_ckpt, *TINY)
    assert status == cli.EXIT_OK
    clf_dir = [r for r in runs if r.name.startswith("train-clf")][0]
    clf_ckpt = str(clf_dir / "classifier.ckpt")
    assert (clf_dir / "epochs.csv").read_text().startswith("epoch,loss,train_acc,test_acc")

    status, runs = _run(tmp_path, "eval-boundary", "--classifier-ckpt", clf_ckpt, *TINY)
    assert status == cli.EXIT_OK
    bdir = [r for r in runs if r.name.startswith("eval-boundary")][0]
    lines = (bdir / "boundary.csv").read_text().splitlines()
    assert lines[0] == "x,y,confidence"
    assert len(lines) == 1 + 12 * 12

    status, runs = _run(tmp_path, "eval-adv", "--classifier-ckpt", clf_ckpt,
                        "--epsilon-grid", "0,0.3,0.6", *TINY)
    assert status == cli.EXIT_OK
    adir = [r for r in runs if r.name.startswith("eval-adv")][0]
    assert len((adir / "sweep.csv").read_text().splitlines()) == 4

    status, runs = _run(tmp_path, "eval-ood", "--classifier-ckpt", clf_ckpt, *TINY)
    assert status == cli.EXIT_OK
    odir = [r for r in runs if r.name.startswith("eval-ood")][0]
    assert (odir / "ecdf.csv").exists()
    assert (odir / "metrics.csv").exists()


def test_eval_anomaly_requires_class_sets(tmp_path):
    status, runs = _run(tmp_path, "eval-anomaly", "--classifier-ckpt", "missing.ckpt")
    assert status == cli.EXIT_CONFIG


def test_eval_anomaly_on_toy_split(tmp_path):
    # score one toy class as in-distribution against the other held out
    status, runs = _run(tmp_path, "train-gen", *TINY)
    stack_ckpt = str(runs[0] / "stack.ckpt")
    status, runs = _run(tmp_path, "train-clf", "--stack-ckpt", stack_ckpt, *TINY)
    clf_ckpt = str([r for r in runs if r.name.startswith("train-clf")][0] / "classifier.ckpt")

    status, runs = _run(tmp_path, "eval-anomaly", "--classifier-ckpt", clf_ckpt,
                        "--in-classes", "0", "--out-classes", "1", *TINY)
    assert status == cli.EXIT_OK
    adir = [r for r in runs if r.name.startswith("eval-anomaly")][0]
    text = (adir / "auroc.csv").read_text()
    assert text.startswith("metric,value\nauroc,")
    value = float(text.splitlines()[1].split(",")[1])
    assert 0.0 <= value <= 1.0


def test_train_clf_requires_stack(tmp_path):
    status, runs = _run(tmp_path, "train-clf", *TINY)
    assert status == cli.EXIT_CONFIG
    assert runs == []


def test_main_entry_point(tmp_path):
    status = cli.main(["reproduce-toy", *TINY, "--out", str(tmp_path / "r")])
    assert status == cli.EXIT_OK
