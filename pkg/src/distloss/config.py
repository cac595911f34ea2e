"""Experiment configuration files.

Grammar: an INI file (``configparser`` syntax: ``[section]`` headers,
``key = value`` lines, ``#`` or ``;`` comments).  Nesting is written with
dotted section names.  Recognised sections and keys (defaults in brackets):

``[synth]``
    n_samples [20000], length [100], noise_std [0.5], age_jitter [0],
    seed [0], label_lo [30], label_hi [80], train_fraction [0.6]
``[synth.label_dist]``
    kind [skewnormal] (normal | skewnormal | mixture), loc [70], scale [13],
    alpha [-5]; for ``mixture``: components (comma-separated
    ``normal(loc, scale)`` / ``skewnormal(loc, scale, alpha)`` terms) and
    weights (comma-separated numbers)
``[label_space]``
    bin_width [1.0], bandwidth [auto], lo [auto], hi [auto]
``[model]``
    channels [16], blocks [2], kernel_size [7], pool [4], se_ratio [4],
    dtype [float32]
``[train]``
    batch_size [256], epochs [50], lr [0.003], weight_decay [0.0001],
    seed [0]
``[calibration]``
    threshold [10]
``[output]``
    dir [runs/default]
``[arm.<name>]`` (one or more)
    lambda [1.0], base_metric [mae], epsilon [1.0]

Any other section or key is an error.
"""
from __future__ import annotations

import configparser
import copy
import io
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .labels import AUTO
from .loss import LossConfig
from .nn import Net1DConfig, TrainConfig
from .synth import LabelDist, SynthConfig


class ConfigError(ValueError):
    pass


_SCHEMA: dict[str, dict[str, type | str]] = {
    "synth": {"n_samples": int, "length": int, "noise_std": float, "age_jitter": float, "seed": int,
              "label_lo": float, "label_hi": float, "train_fraction": float},
    "synth.label_dist": {"kind": str, "loc": float, "scale": float, "alpha": float,
                         "components": str, "weights": str},
    "label_space": {"bin_width": float, "bandwidth": "auto_float", "lo": "auto_float", "hi": "auto_float"},
    "model": {"channels": int, "blocks": int, "kernel_size": int, "pool": int, "se_ratio": int, "dtype": str},
    "train": {"batch_size": int, "epochs": int, "lr": float, "weight_decay": float, "seed": int},
    "calibration": {"threshold": float},
    "output": {"dir": str},
}
_ARM_SCHEMA: dict[str, type] = {"lambda": float, "base_metric": str, "epsilon": float}

DEFAULTS: dict[str, dict[str, object]] = {
    "synth": {"n_samples": 20000, "length": 100, "noise_std": 0.5, "age_jitter": 0.0, "seed": 0,
              "label_lo": 30.0, "label_hi": 80.0, "train_fraction": 0.6},
    "synth.label_dist": {"kind": "skewnormal", "loc": 70.0, "scale": 13.0, "alpha": -5.0},
    "label_space": {"bin_width": 1.0, "bandwidth": AUTO, "lo": AUTO, "hi": AUTO},
    "model": {"channels": 16, "blocks": 2, "kernel_size": 7, "pool": 4, "se_ratio": 4, "dtype": "float32"},
    "train": {"batch_size": 256, "epochs": 50, "lr": 0.003, "weight_decay": 0.0001, "seed": 0},
    "calibration": {"threshold": 10.0},
    "output": {"dir": "runs/default"},
}
ARM_DEFAULTS: dict[str, object] = {"lambda": 1.0, "base_metric": "mae", "epsilon": 1.0}

_COMPONENT = re.compile(r"^\s*(normal|skewnormal)\s*\(([^)]*)\)\s*$")


@dataclass(frozen=True)
class Arm:
    name: str
    loss: LossConfig


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig
    train_fraction: float
    model: Net1DConfig
    train: TrainConfig
    label_space: dict
    calibration_threshold: float
    arms: tuple[Arm, ...]
    output_dir: Path
    resolved: dict

    def arm(self, name: str) -> Arm:
        for a in self.arms:
            if a.name == name:
                return a
        raise ConfigError(f"no arm named {name!r}; known arms: {', '.join(a.name for a in self.arms)}")

    def to_ini(self) -> str:
        return dump_ini(self.resolved)


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind == "auto_float":
            return AUTO if raw.strip().lower() == AUTO else float(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _parse_components(text: str) -> tuple[LabelDist, ...]:
    parts = re.split(r",\s*(?=[a-z])", text.strip())
    comps = []
    for part in parts:
        m = _COMPONENT.match(part)
        if not m:
            raise ConfigError(f"[synth.label_dist] components: cannot parse {part!r}")
        nums = [float(t) for t in m.group(2).split(",") if t.strip()]
        kind = m.group(1)
        if kind == "normal" and len(nums) == 2:
            comps.append(LabelDist("normal", nums[0], nums[1], 0.0))
        elif kind == "skewnormal" and len(nums) == 3:
            comps.append(LabelDist("skewnormal", *nums))
        else:
            raise ConfigError(f"[synth.label_dist] components: wrong number of parameters in {part!r}")
    return tuple(comps)


def parse_config(text: str) -> dict:
    """Parse INI text into a resolved nested dict with defaults filled in."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    resolved: dict = copy.deepcopy(DEFAULTS)
    resolved["arms"] = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section.startswith("arm."):
            name = section[4:]
            if not name:
                raise ConfigError("arm section needs a name: [arm.<name>]")
            arm = dict(ARM_DEFAULTS)
            for key, raw in items.items():
                if key not in _ARM_SCHEMA:
                    raise ConfigError(f"[{section}] unknown key {key!r}")
                arm[key] = _convert(section, key, raw, _ARM_SCHEMA[key])
            resolved["arms"][name] = arm
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in items.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            resolved[section][key] = _convert(section, key, raw, _SCHEMA[section][key])
    if not resolved["arms"]:
        raise ConfigError("config defines no [arm.<name>] sections")
    return resolved


def build(resolved: dict, seed_override: int | None = None, out_override: str | None = None) -> ExperimentConfig:
    resolved = copy.deepcopy(resolved)
    if seed_override is not None:
        resolved["synth"]["seed"] = int(seed_override)
        resolved["train"]["seed"] = int(seed_override)
    if out_override is not None:
        resolved["output"]["dir"] = str(out_override)
    s, d = resolved["synth"], resolved["synth.label_dist"]
    if d["kind"] == "mixture":
        if "components" not in d or "weights" not in d:
            raise ConfigError("[synth.label_dist] mixture needs components and weights")
        try:
            weights = tuple(float(w) for w in str(d["weights"]).split(","))
        except ValueError:
            raise ConfigError("[synth.label_dist] weights must be comma-separated numbers") from None
        dist = LabelDist("mixture", components=_parse_components(str(d["components"])), weights=weights)
    else:
        dist = LabelDist(d["kind"], d["loc"], d["scale"], d["alpha"])
    synth = SynthConfig(n_samples=s["n_samples"], length=s["length"], label_dist=dist,
                        label_range=(s["label_lo"], s["label_hi"]), noise_std=s["noise_std"], seed=s["seed"],
                        age_jitter=s["age_jitter"])
    try:
        synth.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < s["train_fraction"] < 1:
        raise ConfigError("[synth] train_fraction must lie strictly between 0 and 1")
    m = resolved["model"]
    if m["dtype"] not in ("float32", "float64"):
        raise ConfigError("[model] dtype must be float32 or float64")
    if min(m["channels"], m["blocks"] + 1, m["pool"], m["se_ratio"]) < 1 or m["kernel_size"] % 2 == 0:
        raise ConfigError("[model] sizes must be positive and kernel_size odd")
    if s["length"] % m["pool"]:
        raise ConfigError("[model] pool must divide [synth] length")
    model = Net1DConfig(length=s["length"], channels=m["channels"], blocks=m["blocks"],
                        kernel_size=m["kernel_size"], pool=m["pool"], se_ratio=m["se_ratio"],
                        dtype=m["dtype"], seed=resolved["train"]["seed"])
    ls = resolved["label_space"]
    if not ls["bin_width"] > 0:
        raise ConfigError("[label_space] bin_width must be positive")
    if ls["bandwidth"] != AUTO and not ls["bandwidth"] > 0:
        raise ConfigError("[label_space] bandwidth must be positive or auto")
    if resolved["calibration"]["threshold"] <= 0:
        raise ConfigError("[calibration] threshold must be positive")
    arms = []
    try:
        for name, a in resolved["arms"].items():
            arms.append(Arm(name, LossConfig(lam=a["lambda"], base_metric=a["base_metric"], epsilon=a["epsilon"])))
        t = resolved["train"]
        train = TrainConfig(batch_size=t["batch_size"], epochs=t["epochs"], lr=t["lr"],
                            weight_decay=t["weight_decay"], seed=t["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(
        synth=synth,
        train_fraction=s["train_fraction"],
        model=model,
        train=train,
        label_space=dict(ls),
        calibration_threshold=resolved["calibration"]["threshold"],
        arms=tuple(arms),
        output_dir=Path(resolved["output"]["dir"]),
        resolved=resolved,
    )


def load(path, seed_override: int | None = None, out_override: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build(parse_config(text), seed_override, out_override)


def dump_ini(resolved: dict) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in resolved.items():
        if section == "arms":
            continue
        parser[section] = {k: _fmt(v) for k, v in values.items()}
    for name, values in resolved["arms"].items():
        parser[f"arm.{name}"] = {k: _fmt(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def with_arm_loss(cfg: ExperimentConfig, arm: Arm) -> TrainConfig:
    return replace(cfg.train, loss=arm.loss)
