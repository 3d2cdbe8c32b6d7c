"""Threshold estimation by SSR grid search and the sequential detection loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NpthreshError, SearchError
from .estimators import RegimeInterval, RegimePartition, Sample, Smoother
from .inference import DEFAULT_GRID_TRIM, DEFAULT_M, SequentialTestReport, sequential_test
from .kernels import KernelConfig, WeightBox

# SSR values closer than this fraction of mean(Y^2) count as ties.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SearchConfig:
    grid_points: int = 100
    trim_fraction: float = 0.05
    max_thresholds: int = 5
    alpha: float = 0.05
    m: int = DEFAULT_M
    grid_trim: float = DEFAULT_GRID_TRIM
    # Re-search every Q value between the coarse minimiser's grid neighbours.
    refine: bool = True

    def __post_init__(self):
        if self.grid_points < 3:
            raise DomainError("grid_points must be >= 3", grid_points=self.grid_points)
        if not 0.0 <= self.trim_fraction < 0.5:
            raise DomainError("trim_fraction must lie in [0, 0.5)", trim_fraction=self.trim_fraction)
        if self.max_thresholds < 1:
            raise DomainError("max_thresholds must be >= 1", max_thresholds=self.max_thresholds)
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)", alpha=self.alpha)
        if self.m < 1:
            raise DomainError("m must be >= 1", m=self.m)
        if not 0.0 <= self.grid_trim < 0.5:
            raise DomainError("grid_trim must lie in [0, 0.5)", grid_trim=self.grid_trim)

    def to_dict(self) -> dict:
        return {"grid_points": self.grid_points, "trim_fraction": self.trim_fraction,
                "max_thresholds": self.max_thresholds, "alpha": self.alpha, "m": self.m, "grid_trim": self.grid_trim, "refine": self.refine}


@dataclass
class DetectionResult:
    s_hat: int
    gammas: list[float]
    round_ssr: list[float]
    reports: list[SequentialTestReport]
    skipped_intervals: list[RegimeInterval] = field(default_factory=list)
    ssr0: float = math.nan
    cap_reached: bool = False
    stalled: bool = False
    discovery_order: list[float] = field(default_factory=list)

    @property
    def partition(self) -> RegimePartition:
        return RegimePartition(tuple(self.gammas))

    def to_dict(self) -> dict:
        return {
            "s_hat": self.s_hat,
            "gammas": list(self.gammas),
            "discovery_order": list(self.discovery_order),
            "ssr0": self.ssr0,
            "round_ssr": list(self.round_ssr),
            "cap_reached": self.cap_reached,
            "stalled": self.stalled,
            "skipped_intervals": [iv.to_dict() for iv in self.skipped_intervals],
            "rounds": [r.to_dict() for r in self.reports],
        }


def split_grid(q_block: np.ndarray, interval: RegimeInterval, search: SearchConfig,
               min_obs: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate thresholds from trimmed empirical quantiles of sorted ``q_block``.

    Returns the candidate values and the number of block observations
    falling below each one.
    """
    n_i = len(q_block)
    edge = max(math.ceil(search.trim_fraction * n_i), min_obs)
    if n_i - edge < edge:
        raise SearchError("no feasible grid point", interval=interval, count=n_i)
    pos = np.unique(np.rint(np.linspace(edge, n_i - edge, search.grid_points)).astype(int))
    pos = pos[pos < n_i]
    gammas = np.unique(q_block[pos])
    gammas = gammas[gammas > interval.lo]
    cuts = np.searchsorted(q_block, gammas, side="left")
    ok = (cuts >= min_obs) & (n_i - cuts >= min_obs)
    if not np.any(ok):
        raise SearchError("no feasible grid point", interval=interval, count=n_i)
    return gammas[ok], cuts[ok]


def _split_ssr(sm: Smoother, a: int, b: int, cuts: np.ndarray) -> np.ndarray:
    """Sum of squared residuals inside rows ``[a, b)`` for each split position."""
    n_i = b - a
    points = np.unique(np.concatenate(([0], cuts, [n_i])))
    where = np.searchsorted(points, cuts)
    y = sm.y[a:b]
    floor = sm.den_floor
    out = np.zeros(len(cuts))
    rows_all = np.arange(n_i)
    for chunk in sm._row_chunks(slice(a, b)):
        k = sm.kernel_block(chunk, slice(a, b))
        cum = []
        for vals in (None, y):
            kw = k if vals is None else k * vals
            cells = np.add.reduceat(kw, points[:-1], axis=1)
            c = np.zeros((k.shape[0], len(points)))
            np.cumsum(cells, axis=1, out=c[:, 1:])
            cum.append(c)
        l0, l1 = cum[0][:, where], cum[1][:, where]
        r0 = cum[0][:, -1:] - l0
        r1 = cum[1][:, -1:] - l1
        fit_l = l1 / np.maximum(l0, floor)
        fit_r = r1 / np.maximum(r0, floor)
        rows = rows_all[chunk.start - a:chunk.stop - a]
        fit = np.where(rows[:, None] < cuts[None, :], fit_l, fit_r)
        resid = y[rows][:, None] - fit
        out += np.sum(resid * resid, axis=0)
    return out


def _refine_cuts(q_block: np.ndarray, cuts: np.ndarray, best: int) -> np.ndarray:
    """Every feasible split position strictly between the neighbours of ``cuts[best]``."""
    lo = cuts[best - 1] + 1 if best > 0 else cuts[0]
    hi = cuts[best + 1] if best + 1 < len(cuts) else cuts[-1] + 1
    pos = np.arange(lo, hi)
    # a split position is usable only where Q changes value
    return pos[q_block[pos] > q_block[pos - 1]]


def _outside_ssr(sm: Smoother, fixed: RegimePartition, interval: RegimeInterval) -> float:
    outside = 0.0
    for regime in fixed.regimes():
        if regime == interval:
            continue
        ra, rb = sm.span(regime)
        if rb - ra < sm.config.min_regime_obs:
            raise SearchError("under-populated regime", interval=regime, count=rb - ra)
        s0, s1, _ = sm.span_sums([(ra, rb)], rows=slice(ra, rb))
        resid = sm.y[ra:rb] - s1[:, 0] / np.maximum(s0[:, 0], sm.den_floor)
        outside += float(np.dot(resid, resid))
    return outside


def _first_min(total: np.ndarray, tol: float) -> int:
    return int(np.flatnonzero(total <= total.min() + tol)[0])


def _search(sm: Smoother, fixed: RegimePartition, interval: RegimeInterval,
            search: SearchConfig) -> tuple[float, float]:
    if interval not in fixed.regimes():
        raise DomainError("interval must be a regime of the fixed partition", interval=interval)
    a, b = sm.span(interval)
    q_block = sm.q[a:b]
    gammas, cuts = split_grid(q_block, interval, search, sm.config.min_regime_obs)
    outside = _outside_ssr(sm, fixed, interval)
    tol = TIE_RTOL * float(np.mean(sm.y2))
    total = (outside + _split_ssr(sm, a, b, cuts)) / sm.n
    best = _first_min(total, tol)
    if search.refine:
        fine = _refine_cuts(q_block, cuts, best)
        if fine.size:
            gammas = np.concatenate((gammas, q_block[fine]))
            total = np.concatenate((total, (outside + _split_ssr(sm, a, b, fine)) / sm.n))
            order = np.argsort(gammas, kind="stable")
            gammas, total = gammas[order], total[order]
            best = _first_min(total, tol)
    return float(gammas[best]), float(total[best])


def estimate_one_threshold(sample: Sample, fixed: RegimePartition, interval: RegimeInterval,
                           config: KernelConfig, search: SearchConfig,
                           smoother: Smoother | None = None) -> tuple[float, float]:
    """Split ``interval`` (a regime of ``fixed``) where the full-partition SSR is smallest.

    The trimmed grid of ``search.grid_points`` Q values is scanned first; with
    ``search.refine`` every Q value between the best grid point's neighbours
    is then scanned as well. Returns the threshold and the SSR of the
    partition with it inserted. Exact ties resolve to the smallest threshold.
    """
    sm = smoother or Smoother(sample, config)
    return _search(sm, fixed, interval, search)


def detect(sample: Sample, config: KernelConfig, search: SearchConfig, box: WeightBox,
           smoother: Smoother | None = None) -> DetectionResult:
    """Sequentially test for and insert thresholds until the test stops rejecting."""
    need = 4 * config.min_regime_obs
    if sample.n < need:
        raise SearchError("sample too small for detection", n=sample.n, required=need)
    sm = smoother or Smoother(sample, config)
    result = DetectionResult(s_hat=0, gammas=[], round_ssr=[], reports=[])
    partition = RegimePartition()
    try:
        result.ssr0 = sm.ssr(partition)
        while True:
            report = sequential_test(sample, partition, search.m, search.alpha, config, box, sm,
                                     grid_trim=search.grid_trim)
            result.reports.append(report)
            if not report.reject:
                break
            if partition.s >= search.max_thresholds:
                result.cap_reached = True
                break
            best = None
            for regime in partition.regimes():
                try:
                    gamma, value = _search(sm, partition, regime, search)
                except SearchError:
                    if regime not in result.skipped_intervals:
                        result.skipped_intervals.append(regime)
                    continue
                if best is None or value < best[1]:
                    best = (gamma, value)
            if best is None:
                result.stalled = True
                break
            partition = partition.insert(best[0])
            result.discovery_order.append(best[0])
            result.gammas = list(partition.thresholds)
            result.s_hat = partition.s
            result.round_ssr.append(sm.ssr(partition))
    except NpthreshError as exc:
        exc.context["partial"] = result
        raise
    return result
