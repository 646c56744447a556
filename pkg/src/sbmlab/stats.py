"""Estimator statistics: running moments, mergeable accumulators, KS tests.

Monte Carlo estimates are accumulated as (count, mean, M2) triples merged by
Chan's parallel update with compensated additions, so partial results from
replica chunks combine in any order to the same value up to float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KS_COEFF = {0.05: 1.3581, 0.01: 1.6276}


class MergeError(ValueError):
    """Partial accumulators disagree on what they estimate."""


def neumaier_sum(values) -> float:
    """Compensated sum; insensitive to summation order at ~1 ulp."""
    s = 0.0
    c = 0.0
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@dataclass
class RunningMoments:
    """Mergeable count/mean/M2 accumulator with a label guarding merges."""

    label: str = ""
    count: float = 0.0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_samples(cls, x, label: str = "") -> "RunningMoments":
        x = np.asarray(x, dtype=float)
        n = x.size
        if n == 0:
            return cls(label)
        mu = float(np.mean(x))
        return cls(label, float(n), mu, float(np.sum((x - mu) ** 2)))

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if self.label != other.label:
            raise MergeError(f"cannot merge {self.label!r} with {other.label!r}")
        if other.count == 0:
            return RunningMoments(self.label, self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.label, other.count, other.mean, other.m2)
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * (other.count / n)
        m2 = self.m2 + other.m2 + d * d * (self.count * other.count / n)
        return RunningMoments(self.label, n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else float("nan")


def estimator_merge(partials) -> tuple[float, float]:
    """Merge homogeneous partial accumulators; returns (mean, SE)."""
    parts = list(partials)
    if not parts:
        raise MergeError("nothing to merge")
    acc = parts[0]
    for p in parts[1:]:
        acc = acc.merge(p)
    return acc.mean, acc.se


def mc_mean(x, label: str = "") -> RunningMoments:
    return RunningMoments.from_samples(x, label)


def ks_two_sample(a, b) -> tuple[float, float, float]:
    """Two-sample KS statistic with asymptotic 5%/1% critical values."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test requires nonempty samples")
    stat = _ks_statistic(a, np.ones(a.size), b, np.ones(b.size))
    scale = math.sqrt((a.size + b.size) / (a.size * b.size))
    return stat, KS_COEFF[0.05] * scale, KS_COEFF[0.01] * scale


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    s = w.sum()
    return float(s * s / np.sum(w * w)) if s > 0 else 0.0


def ks_two_sample_weighted(a, wa, b, wb=None) -> tuple[float, float, float, float]:
    """Weighted KS with Kish effective sample sizes in the critical values.

    Returns (statistic, crit 5%, crit 1%, min effective sample size).
    """
    a = np.asarray(a, dtype=float)
    wa = np.asarray(wa, dtype=float)
    b = np.asarray(b, dtype=float)
    wb = np.ones(b.size) if wb is None else np.asarray(wb, dtype=float)
    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    stat = _ks_statistic(a[ia], wa[ia], b[ib], wb[ib])
    na, nb = effective_sample_size(wa), effective_sample_size(wb)
    scale = math.sqrt((na + nb) / (na * nb))
    return stat, KS_COEFF[0.05] * scale, KS_COEFF[0.01] * scale, min(na, nb)


def _ks_statistic(a_sorted, wa, b_sorted, wb) -> float:
    """sup |F_a - F_b| over the pooled support for weighted ECDFs."""
    grid = np.concatenate([a_sorted, b_sorted])
    grid.sort(kind="stable")
    ca = np.cumsum(wa) / np.sum(wa)
    cb = np.cumsum(wb) / np.sum(wb)
    fa = ca[np.minimum(np.searchsorted(a_sorted, grid, side="right"), a_sorted.size) - 1]
    fa = np.where(np.searchsorted(a_sorted, grid, side="right") == 0, 0.0, fa)
    fb = cb[np.minimum(np.searchsorted(b_sorted, grid, side="right"), b_sorted.size) - 1]
    fb = np.where(np.searchsorted(b_sorted, grid, side="right") == 0, 0.0, fb)
    return float(np.max(np.abs(fa - fb)))


def three_se_check(estimate: float, se: float, target: float,
                   floor: float = 0.0) -> tuple[bool, float]:
    """|estimate - target| <= max(3*SE, floor); returns (ok, discrepancy/SE)."""
    diff = abs(estimate - target)
    tol = max(3.0 * se, floor)
    z = diff / se if se > 0 else math.inf
    return diff <= tol, z
