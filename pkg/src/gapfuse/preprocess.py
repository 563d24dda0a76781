"""Residual-cloud outlier removal, density-based sample selection, and
Akima-based training-target construction.

Outlier removal deletes isolated downward spikes: a value far below both of
its nearest present neighbors, where the neighbors themselves stay level or
rise.  Genuine management events (a drop followed by slow regrowth) fail the
rebound condition and survive; senescence declines fail it too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TemporalGrid
from .interp import fill_akima

# Season-interior window (June 1 - July 31 of a leap year) where the
# density rules are strictest.
SUMMER_WINDOW: tuple[int, int] = (153, 213)


@dataclass(frozen=True)
class OutlierParams:
    """Thresholds of the downward-spike filter.

    alpha: minimum drop from the previous present neighbor.
    beta: minimum rebound to the next present neighbor.
    gamma: floor on neighbor-to-neighbor change; a strongly negative
        straddle means the decline is real (senescence/mowing), not a spike.
    per_day: when true, drop and rebound are compared per day of gap
        instead of as raw differences.
    """

    alpha: float = 0.15
    beta: float = 0.15
    gamma: float = -0.05
    per_day: bool = False

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class DensityCriteria:
    """Per-series observation-density requirements for training eligibility."""

    max_consecutive_summer: int = 1
    max_total_summer: int = 3
    max_consecutive_other: int = 2
    max_overall_coverage: float = 0.35
    summer_window: tuple[int, int] = SUMMER_WINDOW

    def __post_init__(self) -> None:
        if min(self.max_consecutive_summer, self.max_total_summer, self.max_consecutive_other) < 0:
            raise ValueError("count bounds must be >= 0")
        if not 0.0 <= self.max_overall_coverage <= 1.0:
            raise ValueError("max_overall_coverage must lie in [0, 1]")
        if self.summer_window[0] > self.summer_window[1]:
            raise ValueError("summer_window must be ordered")


def remove_outliers(
    ndvi: np.ndarray, grid: TemporalGrid, params: OutlierParams = OutlierParams()
) -> np.ndarray:
    """Return a copy with downward-spike steps set absent.

    A present step t with nearest present neighbors t- and t+ is removed iff
        S(t-) - S(t) >= alpha  and  S(t+) - S(t) >= beta
        and  S(t+) - S(t-) >= gamma.
    Single left-to-right pass over the original values: removals never feed
    back into later neighbor lookups.  Values are never altered, only
    deleted, so the surviving set is a subset of the input's present set.
    """
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.shape != (grid.length,):
        raise ValueError(f"series length {ndvi.shape} != grid length {grid.length}")
    present_idx = np.flatnonzero(~np.isnan(ndvi))
    out = ndvi.copy()
    if present_idx.size < 3:
        return out
    doys = grid.doys.astype(np.float64)
    for k in range(1, present_idx.size - 1):
        lo, t, hi = present_idx[k - 1], present_idx[k], present_idx[k + 1]
        drop = ndvi[lo] - ndvi[t]
        rise = ndvi[hi] - ndvi[t]
        straddle = ndvi[hi] - ndvi[lo]
        if params.per_day:
            drop /= doys[t] - doys[lo]
            rise /= doys[hi] - doys[t]
            straddle /= doys[hi] - doys[lo]
        if drop >= params.alpha and rise >= params.beta and straddle >= params.gamma:
            out[t] = np.nan
    return out


def coverage(ndvi: np.ndarray) -> float:
    """Fraction of steps with no observation."""
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.ndim != 1 or ndvi.size == 0:
        raise ValueError("series must be 1-D and non-empty")
    return float(np.mean(np.isnan(ndvi)))


def _max_run(flags: np.ndarray) -> int:
    run = best = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


def passes_density(
    ndvi: np.ndarray, grid: TemporalGrid, criteria: DensityCriteria = DensityCriteria()
) -> bool:
    """True iff the series is dense enough to serve as a training sample.

    Four rules: longest absent run inside the summer window, total absences
    inside the window, longest absent run outside it, and overall coverage.
    A run straddling the window boundary contributes its inside portion to
    the summer rules and its outside portion to the off-summer rule, which
    keeps the predicate monotone in presence.
    """
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.shape != (grid.length,):
        raise ValueError(f"series length {ndvi.shape} != grid length {grid.length}")
    absent = np.isnan(ndvi)
    doys = grid.doys
    lo, hi = criteria.summer_window
    summer = (doys >= lo) & (doys <= hi)
    if int(np.sum(absent & summer)) > criteria.max_total_summer:
        return False
    if _max_run(absent & summer) > criteria.max_consecutive_summer:
        return False
    if _max_run(absent & ~summer) > criteria.max_consecutive_other:
        return False
    if coverage(ndvi) > criteria.max_overall_coverage:
        return False
    return True


def build_target(ndvi: np.ndarray, grid: TemporalGrid) -> tuple[np.ndarray, np.ndarray]:
    """Fill a density-compliant series into a full training target.

    Returns (target, observed): `target` is fully present with gaps filled
    by Akima interpolation; `observed` flags the steps backed by a real
    observation (loss-weight eligible) as opposed to interpolated ones
    (weight 0 downstream).
    """
    ndvi = np.asarray(ndvi, dtype=np.float64)
    observed = ~np.isnan(ndvi)
    target = fill_akima(ndvi, grid)
    return target, observed
