"""Imbalance-aware regression metrics and region-stratified evaluation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .labels import LabelDensity, LabelSpace, RegionMask


class MetricError(ValueError):
    pass


class EmptyInput(MetricError):
    pass


class ConstantInput(MetricError):
    pass


class ZeroMeanProbability(MetricError):
    pass


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise MetricError(f"length mismatch: {y.size} labels vs {yhat.size} predictions")
    if y.size == 0:
        raise EmptyInput("metrics need at least one sample")
    return y, yhat


def pearson_r(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise EmptyInput("correlation needs at least two samples")
    dy = y - y.mean()
    dp = yhat - yhat.mean()
    sy, sp = np.dot(dy, dy), np.dot(dp, dp)
    if sy == 0 or sp == 0:
        raise ConstantInput("correlation is undefined for a constant input")
    r = np.dot(dy, dp) / math.sqrt(sy * sp)
    return float(min(1.0, max(-1.0, r)))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def _weights(y: np.ndarray, density: LabelDensity) -> np.ndarray:
    p = density.prob_at(y)
    mean_p = p.mean()
    if mean_p <= 0:
        raise ZeroMeanProbability("every sample falls in a zero-probability bin")
    return p / mean_p


def weighted_mae(y, yhat, density: LabelDensity) -> float:
    """MAE with each error scaled by P(y_i) / mean(P) over the evaluated sample."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat) * _weights(y, density)))


def weighted_rmse(y, yhat, density: LabelDensity) -> float:
    # the weight multiplies the residual before squaring
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean(((y - yhat) * _weights(y, density)) ** 2)))


def overlap_from_counts(observed, predicted) -> float:
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    denom = np.maximum(observed, predicted).sum()
    if denom == 0:
        raise EmptyInput("both histograms are empty")
    return float(np.minimum(observed, predicted).sum() / denom)


def overlap_ratio(y, yhat, space: LabelSpace, bins=None) -> float:
    """Histogram overlap of labels and predictions on the label grid.

    Values snap to the nearest grid bin (clamped at the ends).  ``bins`` is an
    optional boolean mask restricting the comparison to a subset of bins.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.size == 0 or yhat.size == 0:
        raise EmptyInput("overlap ratio needs non-empty labels and predictions")
    obs, pred = space.counts(y), space.counts(yhat)
    if bins is not None:
        obs, pred = obs[bins], pred[bins]
    return overlap_from_counts(obs, pred)


REGIONS = ("overall", "few_shot", "many_shot")


@dataclass(frozen=True)
class EvalReport:
    region: str
    n: int
    pearson_r: float
    mae: float
    rmse: float
    weighted_mae: float
    weighted_rmse: float
    overlap_ratio: float
    mae_over_or: float
    rmse_over_or: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_record(self) -> str:
        """``key=value`` lines, floats in round-trippable repr."""
        return "\n".join(f"{k}={_fmt(v)}" for k, v in self.to_dict().items()) + "\n"

    @classmethod
    def from_record(cls, text: str) -> "EvalReport":
        raw = dict(line.split("=", 1) for line in text.strip().splitlines())
        kwargs = {}
        for f in fields(cls):
            v = raw[f.name]
            kwargs[f.name] = v if f.name == "region" else int(v) if f.name == "n" else float(v)
        return cls(**kwargs)

    @staticmethod
    def header(delimiter: str = "\t") -> str:
        return delimiter.join(f.name for f in fields(EvalReport))

    def to_row(self, delimiter: str = "\t") -> str:
        return delimiter.join(_fmt(v) for v in self.to_dict().values())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.inf


def _safe_pearson(y, yhat) -> float:
    try:
        return pearson_r(y, yhat)
    except (ConstantInput, EmptyInput):
        return math.nan


def region_report(region: str, y, yhat, density: LabelDensity, bins=None) -> EvalReport:
    y, yhat = _pair(y, yhat)
    m, r = mae(y, yhat), rmse(y, yhat)
    ov = overlap_ratio(y, yhat, density.space, bins=bins)
    return EvalReport(
        region=region,
        n=int(y.size),
        pearson_r=_safe_pearson(y, yhat),
        mae=m,
        rmse=r,
        weighted_mae=weighted_mae(y, yhat, density),
        weighted_rmse=weighted_rmse(y, yhat, density),
        overlap_ratio=ov,
        mae_over_or=_safe_ratio(m, ov),
        rmse_over_or=_safe_ratio(r, ov),
    )


def evaluate(y, yhat, density: LabelDensity, mask: RegionMask) -> list[EvalReport]:
    """Overall, few-shot and many-shot reports.

    Region membership follows the true label's bin; the region's overlap
    ratio compares histograms over that region's bins only.  A region with no
    samples is omitted from the result.
    """
    y, yhat = _pair(y, yhat)
    reports = [region_report("overall", y, yhat, density)]
    in_few = mask.is_few_shot(y)
    for region, sel, bins in (
        ("few_shot", in_few, mask.few_shot),
        ("many_shot", ~in_few, ~mask.few_shot),
    ):
        if sel.any():
            reports.append(region_report(region, y[sel], yhat[sel], density, bins=bins))
    return reports
