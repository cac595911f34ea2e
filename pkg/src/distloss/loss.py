"""Distribution-alignment loss and the composite training objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    base_metric: str = "mae"
    epsilon: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.base_metric not in ("mae", "mse"):
            raise ValueError(f"base_metric must be 'mae' or 'mse', got {self.base_metric!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_lengths(preds: ad.DiffArray, other) -> None:
    n = len(other)
    if preds.value.ndim != 1 or preds.shape[0] != n:
        raise LengthMismatch(f"{preds.shape[0] if preds.value.ndim else 1} predictions vs {n} reference values")


def _metric(a: ad.DiffArray, b, base_metric: str) -> ad.DiffArray:
    diff = ad.sub(a, b)
    err = ad.absolute(diff) if base_metric == "mae" else ad.square(diff)
    return ad.mean(err)


def plain_loss(preds: ad.DiffArray, targets, base_metric: str = "mae") -> ad.DiffArray:
    """Mean absolute or squared error against the targets."""
    preds = ad.as_diff(preds)
    targets = np.asarray(targets)
    _check_lengths(preds, targets)
    return _metric(preds, targets, base_metric)


def dist_loss(preds: ad.DiffArray, expected, cfg: LossConfig = LossConfig()) -> ad.DiffArray:
    """Base metric between the soft-sorted predictions and the sorted expected labels."""
    preds = ad.as_diff(preds)
    expected = np.asarray(expected)
    _check_lengths(preds, expected)
    sorted_preds = ad.soft_sort(preds, epsilon=cfg.epsilon, direction="ascending")
    return _metric(sorted_preds, expected, cfg.base_metric)


@dataclass
class LossTerms:
    total: ad.DiffArray
    plain: float
    dist: float


def total_loss_terms(preds, targets, expected, cfg: LossConfig = LossConfig()) -> LossTerms:
    preds = ad.as_diff(preds)
    targets = np.asarray(targets)
    expected = np.asarray(expected)
    _check_lengths(preds, targets)
    _check_lengths(preds, expected)
    plain = plain_loss(preds, targets, cfg.base_metric)
    if cfg.lam == 0:
        # keep the graph identical to plain_loss; the dist term is only logged
        detached = dist_loss(ad.DiffArray(preds.value), expected, cfg)
        return LossTerms(plain, float(plain.value), float(detached.value))
    dist = dist_loss(preds, expected, cfg)
    total = ad.add(plain, ad.mul(dist, cfg.lam))
    return LossTerms(total, float(plain.value), float(dist.value))


def total_loss(preds, targets, expected, cfg: LossConfig = LossConfig()) -> ad.DiffArray:
    return total_loss_terms(preds, targets, expected, cfg).total
