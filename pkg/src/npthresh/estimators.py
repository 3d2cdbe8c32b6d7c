"""Regime-restricted kernel density, Nadaraya-Watson mean and variance, and SSR.

Regimes are half-open intervals ``[lo, hi)`` of the threshold variable Q.
:class:`Smoother` holds a sample sorted by Q so that every regime is a
contiguous block of columns of the kernel matrix; interval sums then reduce
to ``np.add.reduceat`` over those blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EstimationError
from .kernels import KernelConfig, kernel_matrix

# Smoother keeps the full n x n kernel matrix in memory up to this size.
KERNEL_CACHE_MAX_N = 5000
_ROW_CHUNK = 1024


@dataclass(frozen=True)
class Sample:
    """Aligned response ``y`` (n,), covariates ``x`` (n, p) and threshold variable ``q`` (n,)."""

    y: np.ndarray
    x: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        q = np.asarray(self.q, dtype=float).ravel()
        if not (len(y) == x.shape[0] == len(q)):
            raise DomainError("y, x and q must have equal row counts",
                              n_y=len(y), n_x=x.shape[0], n_q=len(q))
        if len(y) < 1:
            raise DomainError("sample is empty")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise DomainError("sample contains non-finite values")
        for arr in (y, x, q):
            arr.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class RegimeInterval:
    """Half-open interval ``[lo, hi)``; either end may be infinite."""

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi) or not lo < hi:
            raise DomainError("interval requires lo < hi", lo=lo, hi=hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (q >= self.lo) & (q < self.hi)

    def split(self, tau: float) -> tuple[RegimeInterval, RegimeInterval]:
        return RegimeInterval(self.lo, tau), RegimeInterval(tau, self.hi)

    def to_dict(self) -> dict:
        return {"lo": _json_float(self.lo), "hi": _json_float(self.hi)}

    def __str__(self):
        return f"[{self.lo:g}, {self.hi:g})"


@dataclass(frozen=True)
class RegimePartition:
    """Strictly increasing thresholds; regimes use sentinels at -inf and +inf."""

    thresholds: tuple[float, ...] = ()

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if any(not math.isfinite(v) for v in t):
            raise DomainError("thresholds must be finite", thresholds=list(t))
        if any(b <= a for a, b in zip(t, t[1:])):
            raise DomainError("thresholds must be strictly increasing", thresholds=list(t))
        object.__setattr__(self, "thresholds", t)

    @property
    def s(self) -> int:
        return len(self.thresholds)

    def regimes(self) -> list[RegimeInterval]:
        edges = (-math.inf, *self.thresholds, math.inf)
        return [RegimeInterval(a, b) for a, b in zip(edges, edges[1:])]

    def insert(self, gamma: float) -> RegimePartition:
        return RegimePartition(tuple(sorted((*self.thresholds, gamma))))


def regime_indicator(q_value: float, interval: RegimeInterval) -> int:
    if not math.isfinite(q_value):
        raise DomainError("q must be finite", q=q_value)
    return int(interval.lo <= q_value < interval.hi)


def _as_points(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, p) if x.size % p == 0 and x.size > p else x.reshape(1, -1)
    if x.shape[1] != p:
        raise DomainError("evaluation point has wrong dimension", dim=x.shape[1], p=p)
    return x


def _regime_kernel_sums(sample: Sample, interval: RegimeInterval, x, config: KernelConfig):
    pts = _as_points(x, sample.p)
    mask = interval.contains(sample.q)
    k = kernel_matrix(pts, sample.x[mask], config.h)
    y = sample.y[mask]
    return k.sum(axis=1), k @ y, k @ (y * y), int(mask.sum())


def density_hat(sample: Sample, interval: RegimeInterval, x, config: KernelConfig):
    """Kernel density of X restricted to ``Q in interval``, at one or more points."""
    s0, _, _, _ = _regime_kernel_sums(sample, interval, x, config)
    out = s0 / sample.n
    return float(out[0]) if out.size == 1 else out


def nw_hat(sample: Sample, interval: RegimeInterval, x, config: KernelConfig):
    """Nadaraya-Watson mean of Y using only observations with Q in ``interval``."""
    s0, s1, _, count = _regime_kernel_sums(sample, interval, x, config)
    if count == 0:
        raise EstimationError("empty regime", interval=interval)
    out = s1 / np.maximum(s0, config.density_floor * sample.n)
    return float(out[0]) if out.size == 1 else out


def cond_var_hat(sample: Sample, interval: RegimeInterval, x, config: KernelConfig):
    """NW estimate of E[Y^2] minus the squared NW mean, clamped at zero."""
    s0, s1, s2, count = _regime_kernel_sums(sample, interval, x, config)
    if count == 0:
        raise EstimationError("empty regime", interval=interval)
    den = np.maximum(s0, config.density_floor * sample.n)
    m = s1 / den
    out = np.maximum(s2 / den - m * m, 0.0)
    return float(out[0]) if out.size == 1 else out


class Smoother:
    """A sample sorted by Q with cached kernel sums over Q-intervals.

    All arrays returned by the interval methods are indexed by the sorted
    observation order, evaluated at every ``X_i``.
    """

    def __init__(self, sample: Sample, config: KernelConfig):
        if sample.p != config.dim_p:
            raise DomainError("covariate dimension does not match kernel config",
                              p=sample.p, dim_p=config.dim_p)
        self.sample = sample
        self.config = config
        self.order = np.argsort(sample.q, kind="stable")
        self.x = sample.x[self.order]
        self.y = sample.y[self.order]
        self.q = sample.q[self.order]
        self.y2 = self.y * self.y
        self.n = sample.n
        self._kernel = kernel_matrix(self.x, self.x, config.h) if self.n <= KERNEL_CACHE_MAX_N else None
        self._fhat = None

    @property
    def den_floor(self) -> float:
        """Lower clamp on ``sum_i K_h(X_i - x)`` (equals ``density_floor * n``)."""
        return self.config.density_floor * self.n

    def span(self, interval: RegimeInterval) -> tuple[int, int]:
        lo = int(np.searchsorted(self.q, interval.lo, side="left"))
        hi = int(np.searchsorted(self.q, interval.hi, side="left"))
        return lo, hi

    def count(self, interval: RegimeInterval) -> int:
        lo, hi = self.span(interval)
        return hi - lo

    def kernel_block(self, rows: slice, cols: slice) -> np.ndarray:
        if self._kernel is not None:
            return self._kernel[rows, cols]
        return kernel_matrix(self.x[rows], self.x[cols], self.config.h)

    def _row_chunks(self, rows: slice):
        start, stop = rows.start, rows.stop
        if self._kernel is not None:
            yield slice(start, stop)
            return
        for a in range(start, stop, _ROW_CHUNK):
            yield slice(a, min(a + _ROW_CHUNK, stop))

    def span_sums(self, spans: Sequence[tuple[int, int]], rows: slice | None = None):
        """Kernel sums of 1, Y and Y^2 over column spans.

        Returns three arrays of shape ``(n_rows, len(spans))``.
        """
        rows = rows or slice(0, self.n)
        n_rows = rows.stop - rows.start
        points = sorted({v for sp in spans for v in sp})
        out = [np.zeros((n_rows, len(spans))) for _ in range(3)]
        if len(points) < 2:
            return tuple(out)
        first, last = points[0], points[-1]
        starts = np.asarray(points[:-1]) - first
        pos = {v: i for i, v in enumerate(points)}
        cols = slice(first, last)
        for chunk in self._row_chunks(rows):
            k = self.kernel_block(chunk, cols)
            r = slice(chunk.start - rows.start, chunk.stop - rows.start)
            for arr, vals in zip(out, (None, self.y[cols], self.y2[cols])):
                kw = k if vals is None else k * vals
                cells = np.add.reduceat(kw, starts, axis=1)
                for j, (a, b) in enumerate(spans):
                    if b > a:
                        ia, ib = pos[a], pos[b]
                        arr[r, j] = cells[:, ia] if ib == ia + 1 else cells[:, ia:ib].sum(axis=1)
        return tuple(out)

    def interval_stats(self, intervals: Sequence[RegimeInterval]):
        """Density, NW mean and NW variance at every sorted ``X_i`` per interval.

        Returns ``(f, m, v)`` each of shape ``(n, len(intervals))``.
        """
        spans = [self.span(iv) for iv in intervals]
        s0, s1, s2 = self.span_sums(spans)
        den = np.maximum(s0, self.den_floor)
        m = s1 / den
        v = np.maximum(s2 / den - m * m, 0.0)
        return s0 / self.n, m, v

    def q_bounds(self, trim: float) -> tuple[float, float]:
        """Sample quantiles of Q at ``trim`` and ``1 - trim``."""
        lo, hi = np.quantile(self.q, [trim, 1.0 - trim])
        return float(lo), float(hi)

    def unrestricted_density(self) -> np.ndarray:
        if self._fhat is None:
            self._fhat = self.span_sums([(0, self.n)])[0][:, 0] / self.n
        return self._fhat

    def fitted(self, partition: RegimePartition) -> np.ndarray:
        """Regime-wise NW fit at each sorted observation (its own regime only)."""
        fit = np.empty(self.n)
        min_obs = self.config.min_regime_obs
        for iv in partition.regimes():
            a, b = self.span(iv)
            if b - a < min_obs:
                raise EstimationError("under-populated regime", interval=iv, count=b - a,
                                      min_regime_obs=min_obs)
            s0, s1, _ = self.span_sums([(a, b)], rows=slice(a, b))
            fit[a:b] = s1[:, 0] / np.maximum(s0[:, 0], self.den_floor)
        return fit

    def ssr(self, partition: RegimePartition) -> float:
        resid = self.y - self.fitted(partition)
        return float(np.dot(resid, resid) / self.n)


def ssr(sample: Sample, partition: RegimePartition, config: KernelConfig,
        smoother: Smoother | None = None) -> float:
    """Mean squared residual of the regime-wise NW fit under ``partition``."""
    smoother = smoother or Smoother(sample, config)
    return smoother.ssr(partition)


def _json_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def partition_from(values: Iterable[float]) -> RegimePartition:
    return RegimePartition(tuple(sorted(values)))
