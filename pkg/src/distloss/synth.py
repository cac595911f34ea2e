"""Synthetic pulse waveforms whose shape encodes a latent age label.

Each waveform is a sum of two Gaussian lobes on ``t = 0 .. L-1``:

* systolic lobe: amplitude 1, centre ``0.2 * L``, width ``0.06 * L``;
* dicrotic lobe: amplitude ``dicrotic_amplitude(a)``, centre
  ``0.2 * L + dicrotic_delay(a, L)``, width ``0.08 * L``;

where, with ``u = (a - 30) / 50``,

* ``dicrotic_amplitude(a) = 0.8 - 0.01 * (a - 30)``   (0.8 at 30, 0.3 at 80)
* ``dicrotic_delay(a, L) = 0.25 * L + 0.3 * L * u``    (samples)

The age ``a`` that shapes the waveform is the label plus an optional
per-sample offset drawn from ``N(0, age_jitter)`` (zero by default), a stand-in
for the gap between the age a pulse looks and the recorded age.  i.i.d.
Gaussian noise with standard deviation ``noise_std`` is added and each
waveform is then z-normalized with the population standard deviation.
Sample ``i`` draws its noise from ``default_rng([seed, 1, i])`` so the
output does not depend on how generation is chunked.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

SYSTOLIC_CENTER = 0.2
SYSTOLIC_WIDTH = 0.06
DICROTIC_WIDTH = 0.08


class InvalidConfig(ValueError):
    pass


class ConstantSignal(ValueError):
    pass


@dataclass(frozen=True)
class LabelDist:
    """Label distribution: ``normal``, ``skewnormal`` or a ``mixture`` of those."""

    kind: str = "skewnormal"
    loc: float = 70.0
    scale: float = 13.0
    alpha: float = -5.0
    components: tuple["LabelDist", ...] = ()
    weights: tuple[float, ...] = ()

    def validate(self) -> None:
        if self.kind not in ("normal", "skewnormal", "mixture"):
            raise InvalidConfig(f"unknown label distribution {self.kind!r}")
        if self.kind == "mixture":
            if not self.components or len(self.components) != len(self.weights):
                raise InvalidConfig("mixture needs matching components and weights")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise InvalidConfig("mixture weights must be non-negative with positive sum")
            for c in self.components:
                c.validate()
        elif not self.scale > 0:
            raise InvalidConfig("label distribution scale must be positive")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(self.loc, self.scale, size=n)
        if self.kind == "skewnormal":
            return stats.skewnorm.rvs(self.alpha, loc=self.loc, scale=self.scale, size=n, random_state=rng)
        w = np.asarray(self.weights, dtype=np.float64)
        which = rng.choice(len(self.components), size=n, p=w / w.sum())
        out = np.empty(n)
        for k, comp in enumerate(self.components):
            sel = which == k
            out[sel] = comp.sample(int(sel.sum()), rng)
        return out


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 20000
    length: int = 100
    label_dist: LabelDist = field(default_factory=LabelDist)
    label_range: tuple[float, float] = (30.0, 80.0)
    noise_std: float = 0.5
    seed: int = 0
    age_jitter: float = 0.0

    def validate(self) -> None:
        if self.n_samples < 1:
            raise InvalidConfig("n_samples must be positive")
        if self.length < 2:
            raise InvalidConfig("length must be at least 2")
        lo, hi = self.label_range
        if not lo < hi:
            raise InvalidConfig("label_range must satisfy lo < hi")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be non-negative")
        if self.age_jitter < 0:
            raise InvalidConfig("age_jitter must be non-negative")
        self.label_dist.validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    signals: np.ndarray  # (N, L)
    labels: np.ndarray  # (N,)
    split: np.ndarray | None = None  # per-sample "train" / "test"

    def __len__(self) -> int:
        return self.labels.size

    def subset(self, idx) -> "Dataset":
        split = None if self.split is None else self.split[idx]
        return Dataset(self.signals[idx], self.labels[idx], split)


def dicrotic_amplitude(age):
    return 0.8 - 0.01 * (np.asarray(age, dtype=np.float64) - 30.0)


def dicrotic_delay(age, length: int):
    return 0.25 * length + 0.3 * length * (np.asarray(age, dtype=np.float64) - 30.0) / 50.0


def clean_waveform(age, length: int) -> np.ndarray:
    """Noise-free, un-normalized waveform(s) for one age or an array of ages."""
    age = np.atleast_1d(np.asarray(age, dtype=np.float64))
    t = np.arange(length, dtype=np.float64)[None, :]
    c_sys = SYSTOLIC_CENTER * length
    w_sys = SYSTOLIC_WIDTH * length
    w_dic = DICROTIC_WIDTH * length
    c_dic = c_sys + dicrotic_delay(age, length)[:, None]
    systolic = np.exp(-0.5 * ((t - c_sys) / w_sys) ** 2)
    dicrotic = dicrotic_amplitude(age)[:, None] * np.exp(-0.5 * ((t - c_dic) / w_dic) ** 2)
    return systolic + dicrotic


def normalize(signal) -> np.ndarray:
    """Zero mean, unit population standard deviation."""
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("normalization needs at least two samples")
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    if np.any(sd == 0):
        raise ConstantSignal("cannot normalize a constant signal")
    return (x - mu) / sd


def sample_labels(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    lo, hi = cfg.label_range
    return np.clip(cfg.label_dist.sample(cfg.n_samples, rng), lo, hi)


def generate(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    labels = sample_labels(cfg)
    shape_age = labels
    if cfg.age_jitter > 0:
        shape_age = labels + cfg.age_jitter * np.random.default_rng([cfg.seed, 5]).standard_normal(labels.size)
    signals = clean_waveform(shape_age, cfg.length)
    if cfg.noise_std > 0:
        for i in range(cfg.n_samples):
            signals[i] += cfg.noise_std * np.random.default_rng([cfg.seed, 1, i]).standard_normal(cfg.length)
    return Dataset(normalize(signals), labels)


def split(dataset: Dataset, train_fraction: float = 0.6, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    perm = np.random.default_rng([seed, 2]).permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    tags = np.empty(n, dtype=object)
    tags[train_idx] = "train"
    tags[test_idx] = "test"
    dataset.split = tags.astype(str)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# on-disk layout: signals.npy (float64, row-major N x L), labels.txt (one
# label per line, repr precision), manifest.json (config, seed, split tags)

def save_dataset(dataset: Dataset, directory, config: dict | None = None, seed: int | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / "signals.npy", np.ascontiguousarray(dataset.signals, dtype=np.float64))
    (d / "labels.txt").write_text("".join(f"{v!r}\n" for v in dataset.labels.astype(float).tolist()))
    manifest = {
        "config": config or {},
        "seed": seed,
        "n_samples": len(dataset),
        "length": int(dataset.signals.shape[1]),
        "split": None if dataset.split is None else dataset.split.tolist(),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_dataset(directory) -> tuple[Dataset, dict]:
    d = Path(directory)
    signals = np.load(d / "signals.npy")
    labels = np.array([float(t) for t in (d / "labels.txt").read_text().split()])
    manifest = json.loads((d / "manifest.json").read_text())
    split_tags = manifest.get("split")
    ds = Dataset(signals, labels, None if split_tags is None else np.asarray(split_tags))
    return ds, manifest


def train_test(dataset: Dataset) -> tuple[Dataset, Dataset]:
    if dataset.split is None:
        raise ValueError("dataset has no split assignment")
    return dataset.subset(dataset.split == "train"), dataset.subset(dataset.split == "test")
