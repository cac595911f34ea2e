"""Label space, KDE label density, few-shot region and expected labels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AUTO = "auto"


class LabelError(ValueError):
    pass


class EmptyLabels(LabelError):
    pass


class NonFiniteLabel(LabelError):
    pass


class DegenerateBandwidth(LabelError):
    pass


@dataclass(frozen=True, eq=False)
class LabelSpace:
    """Ascending, evenly spaced grid of label values."""

    values: np.ndarray
    bin_width: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise LabelError("a label space needs at least two grid points")
        if not self.bin_width > 0:
            raise LabelError("bin_width must be positive")
        gaps = np.diff(values)
        if not np.allclose(gaps, self.bin_width, rtol=1e-9, atol=0.0):
            raise LabelError("grid values must be strictly increasing with constant spacing bin_width")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_range(cls, lo: float, hi: float, bin_width: float = 1.0) -> "LabelSpace":
        n = int(round((hi - lo) / bin_width)) + 1
        return cls(lo + bin_width * np.arange(n), float(bin_width))

    @classmethod
    def covering(cls, labels, bin_width: float = 1.0, pad: float = 0.0) -> "LabelSpace":
        """Grid spanning ``[min - pad, max + pad]`` snapped outward to multiples of bin_width."""
        labels = np.asarray(labels, dtype=np.float64)
        lo = math.floor((labels.min() - pad) / bin_width) * bin_width
        hi = math.ceil((labels.max() + pad) / bin_width) * bin_width
        if hi - lo < bin_width:
            hi = lo + bin_width
        return cls.from_range(lo, hi, bin_width)

    def __len__(self) -> int:
        return self.values.size

    def bin_index(self, y) -> np.ndarray:
        """Nearest-bin index for each value, clamped to the grid."""
        y = np.asarray(y, dtype=np.float64)
        idx = np.rint((y - self.values[0]) / self.bin_width).astype(np.int64)
        return np.clip(idx, 0, self.values.size - 1)

    def discretize(self, y) -> np.ndarray:
        return self.values[self.bin_index(y)]

    def counts(self, y) -> np.ndarray:
        return np.bincount(self.bin_index(y), minlength=len(self)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class LabelDensity:
    space: LabelSpace
    probs: np.ndarray
    bandwidth: float = field(default=float("nan"))

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != self.space.values.shape:
            raise LabelError("probs must have one entry per grid point")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise LabelError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise LabelError(f"probabilities sum to {probs.sum()!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def prob_at(self, y) -> np.ndarray:
        return self.probs[self.space.bin_index(y)]

    def save(self, path) -> None:
        lines = ["value\tprobability"]
        lines += [f"{v:.17g}\t{p:.17g}" for v, p in zip(self.space.values, self.probs)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "LabelDensity":
        rows = Path(path).read_text().strip().splitlines()
        if not rows or rows[0].split("\t") != ["value", "probability"]:
            raise LabelError(f"{path}: expected header 'value<TAB>probability'")
        data = np.array([[float(t) for t in r.split("\t")] for r in rows[1:]])
        values = data[:, 0]
        width = float(np.round(np.mean(np.diff(values)), 12))
        return cls(LabelSpace(values, width), data[:, 1])


@dataclass(frozen=True, eq=False)
class RegionMask:
    space: LabelSpace
    few_shot: np.ndarray
    threshold: float

    def is_few_shot(self, y) -> np.ndarray:
        return self.few_shot[self.space.bin_index(y)]


def silverman_bandwidth(labels) -> float:
    labels = np.asarray(labels, dtype=np.float64)
    sigma = labels.std(ddof=1)
    if sigma == 0:
        raise DegenerateBandwidth("all labels identical; Silverman bandwidth would be zero")
    return 1.06 * sigma * labels.size ** (-0.2)


def estimate_density(labels, space: LabelSpace, bandwidth: float | str = AUTO) -> LabelDensity:
    """Gaussian KDE evaluated on the grid and renormalized to sum to one."""
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if labels.size < 2:
        raise EmptyLabels(f"need at least 2 labels, got {labels.size}")
    if not np.all(np.isfinite(labels)):
        raise NonFiniteLabel("labels contain NaN or inf")
    if isinstance(bandwidth, str):
        if bandwidth != AUTO:
            raise ValueError(f"bandwidth must be a positive number or {AUTO!r}")
        if labels.size < 3:
            raise EmptyLabels("automatic bandwidth needs at least 3 labels")
        h = silverman_bandwidth(labels)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
    # kernel sums over unique values keep memory at O(grid * distinct labels)
    uniq, mult = np.unique(labels, return_counts=True)
    z = (space.values[:, None] - uniq[None, :]) / h
    dens = np.exp(-0.5 * z * z) @ mult.astype(np.float64)
    total = dens.sum()
    if total <= 0:
        raise DegenerateBandwidth("kernel mass on the grid underflowed to zero")
    return LabelDensity(space, dens / total, bandwidth=h)


def few_shot_region(density: LabelDensity) -> RegionMask:
    threshold = density.probs.max() / 3.0
    return RegionMask(density.space, density.probs < threshold, threshold)


def expected_counts(probs, n: int) -> np.ndarray:
    """floor(n * p) per bin, topped up to n by largest remainder (ties -> lower index)."""
    if n < 1:
        raise ValueError("n must be positive")
    scaled = n * np.asarray(probs, dtype=np.float64)
    counts = np.floor(scaled).astype(np.int64)
    remainder = n - int(counts.sum())
    if remainder > 0:
        frac = scaled - counts
        order = np.lexsort((np.arange(frac.size), -frac))
        counts[order[:remainder]] += 1
    return counts


def expected_labels(density: LabelDensity, n: int) -> np.ndarray:
    """Sorted length-``n`` multiset of grid values following the density."""
    return np.repeat(density.space.values, expected_counts(density.probs, n))
