"""Differentiable sorting by projection onto the permutohedron.

The L2-regularized soft sort of ``x`` is the Euclidean projection of
``rho / epsilon`` (``rho = (n, n-1, ..., 1)``) onto the permutohedron spanned
by ``x``.  After a hard pre-sort the projection reduces to an isotonic
regression, solved here with pool-adjacent-violators (PAV).  The Jacobian is
block diagonal over the PAV partition: inside a pool of size ``k`` every
entry is ``1/k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class SoftSortConfig:
    epsilon: float = 1.0
    direction: str = "ascending"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.direction not in ("ascending", "descending"):
            raise ValueError(f"direction must be 'ascending' or 'descending', got {self.direction!r}")


def pav_decreasing(y: np.ndarray) -> list[int]:
    """Block sizes of the isotonic fit ``argmin_{v_1 >= ... >= v_n} ||v - y||^2``.

    Returns the sizes of consecutive pools; the fitted value of each pool is
    the mean of ``y`` over it.
    """
    sums: list[float] = []
    sizes: list[int] = []
    for value in y:
        sums.append(float(value))
        sizes.append(1)
        # merge while the last pool's mean exceeds the previous one's
        while len(sums) > 1 and sums[-2] * sizes[-1] <= sums[-1] * sizes[-2]:
            s, c = sums.pop(), sizes.pop()
            sums[-1] += s
            sizes[-1] += c
    return sizes


def isotonic_decreasing(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    start = 0
    for size in pav_decreasing(y):
        out[start:start + size] = y[start:start + size].mean()
        start += size
    return out


def _check(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("soft sort expects a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("soft sort input contains NaN or inf")
    return x


def _forward(x: np.ndarray, cfg: SoftSortConfig) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Soft sort plus the permutation and pool sizes needed for the VJP."""
    sign = 1.0 if cfg.direction == "descending" else -1.0
    z = sign * x
    n = z.size
    perm = np.argsort(-z, kind="stable")
    s = z[perm]
    rho = np.arange(n, 0, -1, dtype=np.float64)
    sizes = pav_decreasing(rho / cfg.epsilon - s)
    # w_i - mean(w - s) rewritten so each pool sums exactly to its inputs
    out = _block_means(s, sizes) + (rho - _block_means(rho, sizes)) / cfg.epsilon
    return sign * out, perm, _pool_ties(s, sizes)


def _block_means(values: np.ndarray, sizes: list[int]) -> np.ndarray:
    sizes_arr = np.asarray(sizes)
    starts = np.concatenate(([0], np.cumsum(sizes_arr)[:-1]))
    return np.repeat(np.add.reduceat(values, starts) / sizes_arr, sizes_arr)


def _pool_ties(s: np.ndarray, sizes: list[int]) -> list[int]:
    """Merge PAV pools that are joined by exactly tied sorted inputs.

    The forward value is unaffected; the gradient is averaged across tied
    entries instead of following the arbitrary order of the pre-sort.
    """
    cuts = np.cumsum(sizes)[:-1]
    keep = [c for c in cuts if s[c - 1] != s[c]]
    edges = [0, *keep, len(s)]
    return [b - a for a, b in zip(edges[:-1], edges[1:])]


def _vjp_from_partition(upstream: np.ndarray, perm: np.ndarray, sizes: list[int]) -> np.ndarray:
    grad = np.empty(len(perm))
    grad[perm] = _block_means(np.asarray(upstream, dtype=np.float64), sizes)
    return grad


def soft_sort(x, cfg: SoftSortConfig | None = None) -> np.ndarray:
    """Regularized sort of ``x``; converges to the hard sort as epsilon -> 0."""
    cfg = cfg or SoftSortConfig()
    return _forward(_check(x), cfg)[0]


def soft_sort_vjp(x, upstream, cfg: SoftSortConfig | None = None) -> np.ndarray:
    """Vector-Jacobian product ``upstream^T J`` of :func:`soft_sort` at ``x``."""
    cfg = cfg or SoftSortConfig()
    x = _check(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match input {x.shape}")
    if not np.all(np.isfinite(upstream)):
        raise NonFiniteInput("upstream gradient contains NaN or inf")
    _, perm, sizes = _forward(x, cfg)
    return _vjp_from_partition(upstream, perm, sizes)


def hard_sort(x, direction: str = "ascending") -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=np.float64))
    return x if direction == "ascending" else x[::-1]
