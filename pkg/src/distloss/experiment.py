"""End-to-end experiment: generate, train arms, evaluate, calibrate, report.

Directory layout under the output directory::

    resolved.ini                 resolved config echo
    data/                        signals.npy, labels.txt, manifest.json
    density.tsv                  training-label density on the grid
    arms/<name>/checkpoint.npz   model parameters + config echo
    arms/<name>/train_log.tsv    per-epoch lr, loss, plain and dist terms
    report/report.json           machine-readable report (deterministic)
    report/meta.json             timestamps and host details
    report/metrics.tsv           one row per (arm, region)
    report/records.txt           key=value EvalReport records
    report/comparison.txt        human-readable tables
    report/plots/*.tsv           histogram and scatter plot data
    report/figures/*.png         rendered figures
"""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, calibration, labels, metrics, nn, synth
from .config import ExperimentConfig, with_arm_loss

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


class MissingCheckpoint(MissingArtifact):
    pass


@dataclass
class Paths:
    root: Path

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def density(self) -> Path:
        return self.root / "density.tsv"

    def arm_dir(self, name: str) -> Path:
        return self.root / "arms" / name

    def checkpoint(self, name: str) -> Path:
        return self.arm_dir(name) / "checkpoint.npz"

    def train_log(self, name: str) -> Path:
        return self.arm_dir(name) / "train_log.tsv"

    @property
    def report(self) -> Path:
        return self.root / "report"


def build_label_space(train_labels: np.ndarray, section: dict) -> labels.LabelSpace:
    width = float(section["bin_width"])
    bw = section["bandwidth"]
    pad = labels.silverman_bandwidth(train_labels) if bw == labels.AUTO else float(bw)
    auto = labels.LabelSpace.covering(train_labels, width, pad=pad)
    lo = auto.values[0] if section["lo"] == labels.AUTO else float(section["lo"])
    hi = auto.values[-1] if section["hi"] == labels.AUTO else float(section["hi"])
    return labels.LabelSpace.from_range(lo, hi, width)


def fit_density(train_labels: np.ndarray, section: dict) -> labels.LabelDensity:
    space = build_label_space(train_labels, section)
    return labels.estimate_density(train_labels, space, section["bandwidth"])


def make_model(cfg: ExperimentConfig, train_labels: np.ndarray) -> nn.Net1DLite:
    # predictions are produced on the label scale of the training set
    mcfg = replace(cfg.model, output_shift=float(train_labels.mean()), output_scale=float(train_labels.std()))
    return nn.Net1DLite(mcfg)


# --- generate -----------------------------------------------------------

def generate(cfg: ExperimentConfig) -> Path:
    paths = Paths(cfg.output_dir)
    dataset = synth.generate(cfg.synth)
    synth.split(dataset, cfg.train_fraction, cfg.synth.seed)
    paths.root.mkdir(parents=True, exist_ok=True)
    # write into a scratch directory first so a failure leaves no partial dataset
    tmp = Path(tempfile.mkdtemp(prefix=".data-", dir=paths.root))
    try:
        synth.save_dataset(dataset, tmp, config=cfg.resolved, seed=cfg.synth.seed)
        if paths.data.exists():
            shutil.rmtree(paths.data)
        tmp.rename(paths.data)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    train_set, _ = synth.train_test(dataset)
    fit_density(train_set.labels, cfg.label_space).save(paths.density)
    (paths.root / "resolved.ini").write_text(cfg.to_ini())
    return paths.data


def load_data(cfg: ExperimentConfig) -> tuple[synth.Dataset, synth.Dataset, labels.LabelDensity]:
    paths = Paths(cfg.output_dir)
    if not (paths.data / "manifest.json").exists():
        raise MissingArtifact(f"no dataset under {paths.data}; run 'generate' first")
    dataset, _ = synth.load_dataset(paths.data)
    train_set, test_set = synth.train_test(dataset)
    if paths.density.exists():
        density = labels.LabelDensity.load(paths.density)
    else:
        density = fit_density(train_set.labels, cfg.label_space)
    return train_set, test_set, density


# --- train --------------------------------------------------------------

def train_arm(cfg: ExperimentConfig, arm_name: str, train_set=None, density=None) -> nn.TrainResult:
    if train_set is None or density is None:
        train_set, _, density = load_data(cfg)
    arm = cfg.arm(arm_name)
    tcfg = with_arm_loss(cfg, arm)
    model = make_model(cfg, train_set.labels)

    def progress(e: nn.EpochLog):
        log.info("arm %s epoch %d lr %.2e loss %.4f (plain %.4f, dist %.4f)",
                 arm_name, e.epoch, e.lr, e.loss, e.plain, e.dist)

    result = nn.train(model, train_set.signals, train_set.labels, tcfg, density, progress=progress)
    paths = Paths(cfg.output_dir)
    nn.save_checkpoint(paths.checkpoint(arm_name), model, tcfg, extra={"arm": arm_name})
    write_train_log(paths.train_log(arm_name), result.log)
    return result


def _train_arm_worker(args):
    cfg, name = args
    train_arm(cfg, name)
    return name


def train_all(cfg: ExperimentConfig, arm_names=None, parallel: bool = False) -> None:
    names = list(arm_names or [a.name for a in cfg.arms])
    if parallel and len(names) > 1:
        with ProcessPoolExecutor(max_workers=min(len(names), os.cpu_count() or 1)) as pool:
            list(pool.map(_train_arm_worker, [(cfg, n) for n in names]))
        return
    train_set, _, density = load_data(cfg)
    for name in names:
        train_arm(cfg, name, train_set, density)


def write_train_log(path: Path, entries: list[nn.EpochLog]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = ["epoch\tlr\tloss\tplain\tdist"]
    rows += [f"{e.epoch}\t{e.lr!r}\t{e.loss!r}\t{e.plain!r}\t{e.dist!r}" for e in entries]
    path.write_text("\n".join(rows) + "\n")


def read_train_log(path: Path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    keys = lines[0].split("\t")
    out = []
    for line in lines[1:]:
        vals = line.split("\t")
        out.append({k: (int(v) if k == "epoch" else float(v)) for k, v in zip(keys, vals)})
    return out


# --- evaluate -----------------------------------------------------------

@dataclass
class ArmOutcome:
    name: str
    reports: list[metrics.EvalReport]
    test_pred: np.ndarray
    test_corrected: np.ndarray
    fit: calibration.ResidualFit
    subgroups: dict[str, int]
    curve: list[dict]


def evaluate_predictions(name: str, train_y, train_pred, test_y, test_pred, density, threshold: float,
                         curve=None) -> ArmOutcome:
    mask = labels.few_shot_region(density)
    reports = metrics.evaluate(test_y, test_pred, density, mask)
    # residual trend learned on the training split, applied to held-out predictions
    fit = calibration.fit_residuals(train_y, train_pred)
    corrected = calibration.correct(test_pred, test_y, fit)
    groups = calibration.assign_subgroups(test_y, corrected, threshold)
    return ArmOutcome(name, reports, np.asarray(test_pred), corrected, fit, groups.counts(), curve or [])


def evaluate(cfg: ExperimentConfig, render: bool = True) -> dict:
    paths = Paths(cfg.output_dir)
    train_set, test_set, density = load_data(cfg)
    outcomes = []
    for arm in cfg.arms:
        ckpt = paths.checkpoint(arm.name)
        if not ckpt.exists():
            raise MissingCheckpoint(f"arm {arm.name!r} has no checkpoint at {ckpt}; run 'train' first")
        model, _ = nn.load_checkpoint(ckpt)
        curve = read_train_log(paths.train_log(arm.name)) if paths.train_log(arm.name).exists() else []
        outcomes.append(evaluate_predictions(
            arm.name,
            train_set.labels, model.predict(train_set.signals),
            test_set.labels, model.predict(test_set.signals),
            density, cfg.calibration_threshold, curve,
        ))
    report = build_report(cfg, density, outcomes)
    write_report(paths.report, report, density, test_set.labels, outcomes, render=render)
    return report


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


def build_report(cfg: ExperimentConfig, density: labels.LabelDensity, outcomes: list[ArmOutcome]) -> dict:
    mask = labels.few_shot_region(density)
    few_values = density.space.values[mask.few_shot]
    return _clean({
        "toolkit": {"name": "distloss", "version": __version__},
        "seed": {"synth": cfg.synth.seed, "train": cfg.train.seed},
        "config": cfg.resolved,
        "label_space": {
            "lo": float(density.space.values[0]),
            "hi": float(density.space.values[-1]),
            "bin_width": density.space.bin_width,
            "few_shot_threshold": mask.threshold,
            "few_shot_bins": [float(v) for v in few_values],
        },
        "arms": {
            o.name: {
                "metrics": {r.region: {k: v for k, v in r.to_dict().items() if k != "region"} for r in o.reports},
                "calibration": o.fit.to_dict(),
                "subgroups": o.subgroups,
                "training_curve": o.curve,
            }
            for o in outcomes
        },
    })


def comparison_table(report: dict) -> str:
    cols = [("r", "pearson_r"), ("MAE", "mae"), ("RMSE", "rmse"), ("OR", "overlap_ratio"),
            ("wMAE", "weighted_mae"), ("wRMSE", "weighted_rmse"), ("MAE/OR", "mae_over_or"),
            ("RMSE/OR", "rmse_over_or")]
    lines = []
    for region in metrics.REGIONS:
        rows = [(name, arm["metrics"][region]) for name, arm in report["arms"].items() if region in arm["metrics"]]
        if not rows:
            continue
        lines.append(f"{region} region")
        head = f"{'arm':<12}{'n':>7}" + "".join(f"{c:>10}" for c, _ in cols)
        lines += [head, "-" * len(head)]
        for name, m in rows:
            cells = "".join(f"{_num(m[key]):>10}" for _, key in cols)
            lines.append(f"{name:<12}{m['n']:>7}{cells}")
        lines.append("")
    lines.append("residual correction (fit on train, applied to test) and age-gap subgroups")
    head = f"{'arm':<12}{'intercept':>11}{'slope':>9}{'younger':>9}{'neutral':>9}{'older':>9}"
    lines += [head, "-" * len(head)]
    for name, arm in report["arms"].items():
        c, g = arm["calibration"], arm["subgroups"]
        lines.append(f"{name:<12}{c['intercept']:>11.3f}{c['slope']:>9.3f}"
                     f"{g['younger']:>9}{g['neutral']:>9}{g['older']:>9}")
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return v if isinstance(v, str) else f"{v:.3f}"


def histogram_rows(space: labels.LabelSpace, y, yhat) -> str:
    obs, pred = space.counts(y), space.counts(yhat)
    rows = ["bin\tlabel_count\tprediction_count"]
    rows += [f"{v!r}\t{o}\t{p}" for v, o, p in zip(space.values.tolist(), obs, pred)]
    return "\n".join(rows) + "\n"


def scatter_rows(y, yhat, corrected) -> str:
    rows = ["label\tprediction\tcorrected"]
    rows += [f"{a!r}\t{b!r}\t{c!r}" for a, b, c in zip(np.asarray(y).tolist(), np.asarray(yhat).tolist(),
                                                      np.asarray(corrected).tolist())]
    return "\n".join(rows) + "\n"


def write_report(directory: Path, report: dict, density, test_y, outcomes: list[ArmOutcome],
                 render: bool = True) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    meta = {
        "created": datetime.now(timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "host": platform.node(),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    rows = ["arm\t" + metrics.EvalReport.header()]
    records = []
    for o in outcomes:
        for r in o.reports:
            rows.append(f"{o.name}\t{r.to_row()}")
            records.append(f"[{o.name}]\n{r.to_record()}")
    (directory / "metrics.tsv").write_text("\n".join(rows) + "\n")
    (directory / "records.txt").write_text("\n".join(records))
    (directory / "comparison.txt").write_text(comparison_table(report))
    plots = directory / "plots"
    plots.mkdir(exist_ok=True)
    for o in outcomes:
        (plots / f"histogram_{o.name}.tsv").write_text(histogram_rows(density.space, test_y, o.test_pred))
        (plots / f"scatter_{o.name}.tsv").write_text(scatter_rows(test_y, o.test_pred, o.test_corrected))
    if render:
        render_figures(directory)


def render_figures(directory: Path) -> list[Path]:
    from . import plotting

    return plotting.render_report(directory)
