import json
import subprocess
import sys

import numpy as np
import pytest

from distloss import cli, experiment, labels, metrics, nn
from distloss.config import load


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture
def pipeline(tiny_config, tmp_path):
    path = tiny_config()
    assert run("generate", "--config", path) == 0
    assert run("train", "--config", path) == 0
    assert run("evaluate", "--config", path) == 0
    return path, tmp_path / "run"


def test_full_pipeline_outputs(pipeline, capsys):
    path, out = pipeline
    for rel in ("resolved.ini", "density.tsv", "data/signals.npy", "data/labels.txt", "data/manifest.json",
                "arms/plain/checkpoint.npz", "arms/dist/train_log.tsv", "report/report.json",
                "report/meta.json", "report/metrics.tsv", "report/records.txt", "report/comparison.txt",
                "report/plots/histogram_dist.tsv", "report/plots/scatter_plain.tsv",
                "report/figures/histogram_plain.png", "report/figures/scatter_dist.png",
                "report/figures/training_curves.png", "report/figures/few_shot_summary.png"):
        assert (out / rel).is_file(), rel
    log_lines = (out / "arms/dist/train_log.tsv").read_text().strip().splitlines()
    assert len(log_lines) == 1 + 2
    table = (out / "report/comparison.txt").read_text()
    assert table.count("\nplain ") >= 1 and "overall region" in table
    rows = (out / "report/metrics.tsv").read_text().strip().splitlines()[1:]
    for region in ("overall", "many_shot"):
        assert sum(r.split("\t")[1] == region for r in rows) == 2


def test_manifest_echoes_resolved_config(pipeline):
    path, out = pipeline
    manifest = json.loads((out / "data/manifest.json").read_text())
    assert manifest["config"] == json.loads(json.dumps(load(path).resolved))
    assert manifest["config"]["train"]["lr"] == 0.003


def test_report_matches_direct_metric_calls(pipeline):
    path, out = pipeline
    cfg = load(path)
    train_set, test_set, density = experiment.load_data(cfg)
    model, _ = nn.load_checkpoint(out / "arms/dist/checkpoint.npz")
    pred = model.predict(test_set.signals)
    direct = {r.region: r for r in metrics.evaluate(test_set.labels, pred, density, labels.few_shot_region(density))}
    report = json.loads((out / "report/report.json").read_text())
    for region, rep in direct.items():
        got = report["arms"]["dist"]["metrics"][region]
        assert got["mae"] == rep.mae and got["overlap_ratio"] == rep.overlap_ratio
    hist = np.genfromtxt(out / "report/plots/histogram_dist.tsv", names=True, delimiter="\t")
    assert hist["label_count"].sum() == len(test_set) == hist["prediction_count"].sum()


def test_plain_arm_matches_direct_training(pipeline):
    # lambda = 0 through the CLI is the same run as a plain-loss train() call
    path, out = pipeline
    cfg = load(path)
    train_set, _, density = experiment.load_data(cfg)
    model = experiment.make_model(cfg, train_set.labels)
    nn.train(model, train_set.signals, train_set.labels, experiment.with_arm_loss(cfg, cfg.arm("plain")), density)
    saved, _ = nn.load_checkpoint(out / "arms/plain/checkpoint.npz")
    for k, v in saved.state_dict().items():
        np.testing.assert_array_equal(v, model.params[k].value)


def test_retrain_is_deterministic(pipeline):
    path, out = pipeline
    first = experiment.read_train_log(out / "arms/dist/train_log.tsv")
    assert run("train", "--config", path, "--arm", "dist") == 0
    second = experiment.read_train_log(out / "arms/dist/train_log.tsv")
    assert abs(first[-1]["loss"] - second[-1]["loss"]) <= 1e-12


def test_report_command(pipeline, capsys):
    path, _ = pipeline
    capsys.readouterr()
    assert run("report", "--config", path) == 0
    printed = capsys.readouterr().out
    assert "few_shot region" in printed or "many_shot region" in printed
    assert "figure" in printed


def test_malformed_config_leaves_no_files(tmp_path, capsys):
    out = tmp_path / "never"
    bad = tmp_path / "bad.ini"
    bad.write_text(f"[output]\ndir = {out}\n[synth]\nbogus = 1\n[arm.a]\n")
    assert run("generate", "--config", bad) == 1
    assert not out.exists()
    assert "unknown key" in capsys.readouterr().err


def test_usage_errors():
    assert run() == 1
    assert run("fly", "--config", "x") == 1
    assert run("generate") == 1


def test_unknown_arm_is_config_error(tiny_config):
    assert run("train", "--config", tiny_config(), "--arm", "nope") == 1


def test_missing_artifacts_are_runtime_errors(tiny_config, capsys):
    path = tiny_config()
    assert run("train", "--config", path) == 2
    assert run("evaluate", "--config", path) == 2
    assert run("report", "--config", path) == 2
    assert run("generate", "--config", path) == 0
    assert run("evaluate", "--config", path) == 2
    assert "checkpoint" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_nonzero(tiny_config, capsys):
    path = tiny_config("[arm.huge]\nlambda = 1\n")
    assert run("generate", "--config", path) == 0
    text = path.read_text().replace("[train]\n", "[train]\nlr = 1e30\n")
    path.write_text(text)
    assert run("train", "--config", path, "--arm", "huge") == 2
    assert "epoch" in capsys.readouterr().err


def test_parallel_arms(tiny_config):
    path = tiny_config()
    assert run("generate", "--config", path) == 0
    assert run("train", "--config", path, "--parallel-arms") == 0
    assert run("evaluate", "--config", path, "--no-figures") == 0


def test_module_entry_point(tiny_config):
    proc = subprocess.run([sys.executable, "-m", "distloss", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate" in proc.stdout
