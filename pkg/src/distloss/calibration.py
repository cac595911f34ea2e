"""Residual trend correction and age-gap subgrouping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConstantLabels(ValueError):
    pass


@dataclass(frozen=True)
class ResidualFit:
    intercept: float
    slope: float
    fit_n: int
    in_sample: bool = False

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "slope": self.slope, "fit_n": self.fit_n, "in_sample": self.in_sample}


def fit_residuals(y, yhat, in_sample: bool = False) -> ResidualFit:
    """OLS of ``yhat - y`` on ``y``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.size != yhat.size:
        raise ValueError("y and yhat differ in length")
    if y.size < 2:
        raise ValueError("need at least two samples to fit a line")
    dy = y - y.mean()
    sxx = np.dot(dy, dy)
    if sxx == 0:
        raise ConstantLabels("labels are constant; the residual slope is undefined")
    r = yhat - y
    slope = np.dot(dy, r - r.mean()) / sxx
    intercept = r.mean() - slope * y.mean()
    return ResidualFit(float(intercept), float(slope), int(y.size), in_sample)


def correct(yhat, y, fit: ResidualFit) -> np.ndarray:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ValueError("y and yhat differ in length")
    return yhat - (fit.intercept + fit.slope * y)


GROUPS = ("younger", "neutral", "older")


@dataclass(frozen=True)
class SubgroupAssignment:
    groups: np.ndarray
    threshold: float

    def counts(self) -> dict[str, int]:
        return {g: int(np.sum(self.groups == g)) for g in GROUPS}


def assign_subgroups(y, y_corrected, threshold: float = 10.0) -> SubgroupAssignment:
    """younger: gap < -threshold, older: gap > threshold, neutral otherwise (bounds inclusive)."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    gap = np.asarray(y_corrected, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    groups = np.full(gap.shape, "neutral", dtype="<U7")
    groups[gap < -threshold] = "younger"
    groups[gap > threshold] = "older"
    return SubgroupAssignment(groups, float(threshold))
