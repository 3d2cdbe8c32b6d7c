"""Test for an additional threshold inside the regimes of a partition.

For a candidate split ``tau`` of a regime ``[lo, hi)`` the statistic
``gamma_tilde`` measures the weighted squared gap between the one-regime NW
fit and the two sub-regime fits. Centering by the bias estimate ``xi`` and
scaling by ``sigma`` gives ``delta``, asymptotically N(0, 1). A regime is
tested on ``m`` equally spaced candidates whose ``delta`` values are
decorrelated with the inverse square root of their estimated covariance and
averaged into ``Z``. The partition-level statistic is the maximum ``Z`` over
regimes, with null CDF ``Phi(x)**k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, InferenceError
from .estimators import RegimeInterval, RegimePartition, Sample, Smoother
from .kernels import KernelConfig, WeightBox, c2_constant, c3_constant

DEFAULT_M = 7
DEFAULT_EIG_FLOOR = 1e-8
DEFAULT_VARIANCE_FLOOR = 1e-12
# Infinite regime ends are replaced by these sample quantiles of Q.
DEFAULT_GRID_TRIM = 0.15
COVARIANCE_METHODS = ("derived", "verbatim")


@dataclass(frozen=True)
class CandidateGrid:
    """``m`` equally spaced interior split points of a regime.

    An infinite regime end is replaced by a trimmed sample quantile of Q
    (``q_min`` below, ``q_max`` above); when that quantile falls outside the
    regime, the trimmed quantile of the Q values inside the regime is used.
    """

    regime: RegimeInterval
    taus: tuple[float, ...]
    lo: float = math.nan
    hi: float = math.nan

    @classmethod
    def build(cls, regime: RegimeInterval, m: int, q_in_regime: np.ndarray,
              q_min: float | None = None, q_max: float | None = None,
              trim: float = DEFAULT_GRID_TRIM) -> CandidateGrid:
        if m < 1:
            raise DomainError("m must be >= 1", m=m)
        if not 0.0 <= trim < 0.5:
            raise DomainError("grid trim must lie in [0, 0.5)", trim=trim)
        q_in_regime = np.asarray(q_in_regime, dtype=float)
        if q_in_regime.size < 2:
            raise InferenceError("no viable candidates", regime=regime)
        lo, hi = regime.lo, regime.hi
        if not math.isfinite(lo):
            lo = q_min if q_min is not None and q_min < hi else float(np.quantile(q_in_regime, trim))
        if not math.isfinite(hi):
            hi = q_max if q_max is not None and q_max > lo else float(np.quantile(q_in_regime, 1.0 - trim))
        if not lo < hi:
            raise InferenceError("no viable candidates", regime=regime)
        step = (hi - lo) / (m + 1)
        taus = tuple(lo + step * k for k in range(1, m + 1))
        return cls(regime, taus, lo, hi)

    @property
    def m(self) -> int:
        return len(self.taus)


@dataclass
class RegimeTestResult:
    grid: CandidateGrid
    taus: np.ndarray
    gamma_tilde: np.ndarray
    xi_hat: np.ndarray
    sigma2_hat: np.ndarray
    delta_hat: np.ndarray
    sigma_matrix: np.ndarray
    delta_star: np.ndarray
    z: float
    dropped: list[tuple[float, str]] = field(default_factory=list)

    @property
    def regime(self) -> RegimeInterval:
        return self.grid.regime

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.to_dict(),
            "grid": list(self.grid.taus),
            "grid_bounds": [self.grid.lo, self.grid.hi],
            "taus": self.taus.tolist(),
            "gamma_tilde": self.gamma_tilde.tolist(),
            "xi_hat": self.xi_hat.tolist(),
            "sigma2_hat": self.sigma2_hat.tolist(),
            "delta_hat": self.delta_hat.tolist(),
            "sigma_matrix": self.sigma_matrix.tolist(),
            "delta_star": self.delta_star.tolist(),
            "z": self.z,
            "dropped": [{"tau": t, "reason": r} for t, r in self.dropped],
        }


@dataclass
class SequentialTestReport:
    s_null: int
    per_regime: list[RegimeTestResult]
    skipped: list[tuple[RegimeInterval, str]]
    f_stat: float
    k: int
    critical_value: float
    p_value: float
    alpha: float
    reject: bool

    def to_dict(self) -> dict:
        return {
            "s_null": self.s_null,
            "f_stat": self.f_stat,
            "k": self.k,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "per_regime": [r.to_dict() for r in self.per_regime],
            "skipped": [{"regime": iv.to_dict(), "reason": why} for iv, why in self.skipped],
        }


class _RegimeSplits:
    """Per-point ingredients for every candidate split of one regime."""

    def __init__(self, sm: Smoother, regime: RegimeInterval, taus, box: WeightBox):
        self.sm = sm
        self.regime = regime
        self.taus = np.asarray(taus, dtype=float)
        self.row_lo, self.row_hi = sm.span(regime)
        self.cuts = np.searchsorted(sm.q, self.taus, side="left")
        m = len(self.taus)
        intervals = [regime]
        intervals += [RegimeInterval(regime.lo, t) for t in self.taus]
        intervals += [RegimeInterval(t, regime.hi) for t in self.taus]
        self._pair_index = {}
        for l_ in range(m):
            for k in range(l_ + 1, m):
                self._pair_index[(l_, k)] = len(intervals)
                intervals.append(RegimeInterval(self.taus[l_], self.taus[k]))
        f, mhat, v = sm.interval_stats(intervals)
        floor = sm.config.density_floor
        self.f, self.mhat, self.v = f, mhat, v
        self.f_den = np.maximum(f, floor)
        self.a = box.indicator(sm.x)
        self.fhat = np.maximum(sm.unrestricted_density(), floor)
        self.g = self.a / self.fhat
        self.m = m

    def _cols(self, k):
        return 1 + k, 1 + self.m + k

    def counts(self, k) -> tuple[int, int]:
        cut = self.cuts[k]
        return cut - self.row_lo, self.row_hi - cut

    def check(self, k):
        n_lo, n_hi = self.counts(k)
        need = self.sm.config.min_regime_obs
        if n_lo < need or n_hi < need:
            raise InferenceError("thin split", tau=float(self.taus[k]), counts=[n_lo, n_hi],
                                 min_regime_obs=need)

    def gamma_tilde(self, k) -> float:
        lc, uc = self._cols(k)
        a, cut, b = self.row_lo, self.cuts[k], self.row_hi
        m_r = self.mhat[:, 0]
        d_lo = (m_r[a:cut] - self.mhat[a:cut, lc]) ** 2 * self.a[a:cut]
        d_hi = (m_r[cut:b] - self.mhat[cut:b, uc]) ** 2 * self.a[cut:b]
        return float((d_lo.sum() + d_hi.sum()) / self.sm.n)

    def nuisance(self, k) -> dict:
        lc, uc = self._cols(k)
        n = self.sm.n
        f_r = self.f_den[:, 0]
        v_r = self.v[:, 0]
        w_lo = 1.0 - 2.0 * self.f[:, lc] / f_r
        w_hi = 1.0 - 2.0 * self.f[:, uc] / f_r
        g = self.g
        xi1 = float(np.sum(v_r * g) / n)
        xi2 = float(np.sum(w_lo * self.v[:, lc] * g) / n + np.sum(w_hi * self.v[:, uc] * g) / n)
        s1 = float(np.sum(v_r ** 2 * g) / n)
        s2 = float(np.sum(w_lo * self.v[:, lc] ** 2 * g) / n
                   + np.sum(w_hi * self.v[:, uc] ** 2 * g) / n)
        return {"xi1": xi1, "xi2": xi2, "sigma2_1": s1, "sigma2_2": s2}

    def v_cross(self, l_, k) -> float:
        """Asymptotic covariance kernel of the split statistics at ``l_`` and ``k``.

        For splits ``S`` of candidate ``l_`` and ``T`` of candidate ``k``::

            B_ST = (v_R - v_S - v_T) / f_R + v_{S&T} f_{S&T} / (f_S f_T)
            V    = mean_i[ a/f_hat * sum_{S,T} f_S f_T B_ST^2 ]

        With ``l_ == k`` this equals ``sigma2_1 + sigma2_2`` whenever the
        regime variance decomposes over its two splits.
        """
        if l_ > k:
            l_, k = k, l_
        f, fd, v = self.f, self.f_den, self.v
        lo_l, hi_l = self._cols(l_)
        lo_k, hi_k = self._cols(k)
        if l_ == k:
            middle = None
        else:
            middle = self._pair_index[(l_, k)]
        pairs = ((lo_l, lo_k, lo_l), (lo_l, hi_k, None), (hi_l, lo_k, middle), (hi_l, hi_k, hi_k))
        f_r = fd[:, 0]
        total = np.zeros(self.sm.n)
        for a, b, both in pairs:
            coef = (v[:, 0] - v[:, a] - v[:, b]) / f_r
            if both is not None:
                coef = coef + v[:, both] * f[:, both] / (fd[:, a] * fd[:, b])
            total += f[:, a] * f[:, b] * coef * coef
        return float(np.sum(total * self.g) / self.sm.n)

    def c_terms(self, l_, k) -> np.ndarray:
        """The nine covariance terms for candidates ``l_ < k``."""
        if not l_ < k:
            raise DomainError("covariance terms need tau_l < tau_k", l=l_, k=k)
        n = self.sm.n
        f, fd, v = self.f, self.f_den, self.v
        R = 0
        Ll, Ul = self._cols(l_)
        Lk, Uk = self._cols(k)
        M = self._pair_index[(l_, k)]
        g = self.g  # a^2 / f_hat with indicator weights
        fh = self.fhat
        fR = fd[:, R]

        def mean(arr):
            return float(np.sum(arr * g) / n)

        c1 = mean(v[:, R] ** 2)
        c2 = -2.0 * (mean(v[:, R] * v[:, Lk] * f[:, Lk] / fR)
                     + mean(v[:, R] * v[:, Uk] * f[:, Uk] / fR))
        c3 = mean(v[:, Lk] ** 2 * f[:, Lk] / fR) + mean(v[:, Uk] ** 2 * f[:, Uk] / fR)
        c4 = -2.0 * (mean(v[:, R] * v[:, Ll] * f[:, Ll] / fR)
                     + mean(v[:, R] * v[:, Ul] * f[:, Ul] / fR))
        c5 = 4.0 * (mean(v[:, R] * v[:, Ll] * f[:, Ll] / fh)
                    + mean(v[:, R] * v[:, M] * f[:, M] / fR)
                    + mean(v[:, R] * v[:, Uk] * f[:, Uk] / fR))
        c6 = -2.0 * (mean(v[:, Lk] * v[:, Ll] * f[:, Ll] / fh)
                     + mean(v[:, Lk] * v[:, M] * f[:, M] / fR)
                     + mean(v[:, Uk] ** 2 * f[:, Uk] / fR))
        c7 = mean(v[:, Ll] ** 2 * f[:, Ll] / fR) + mean(v[:, Ul] ** 2 * f[:, Ul] / fR)
        c8 = -2.0 * (mean(v[:, Ll] ** 2 * f[:, Ll] / fh)
                     + mean(v[:, Uk] * v[:, M] * f[:, M] / fR)
                     + mean(v[:, Ul] * v[:, Uk] * f[:, Uk] / fR))
        c9 = (mean(v[:, Ll] ** 2 * f[:, Ll] / fd[:, Lk])
              + mean(v[:, M] ** 2 * f[:, M] ** 2 / (fd[:, Lk] * fd[:, Ul]))
              + mean(v[:, Uk] ** 2 * f[:, Uk] / fd[:, Ul]))
        return np.array([c1, c2, c3, c4, c5, c6, c7, c8, c9])


def _splits(sample, regime, taus, config, box, smoother=None) -> _RegimeSplits:
    sm = smoother or Smoother(sample, config)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if not np.all((taus > regime.lo) & (taus < regime.hi)):
        raise DomainError("candidate split must lie strictly inside the regime",
                          regime=regime, taus=taus.tolist())
    return _RegimeSplits(sm, regime, taus, box)


def gamma_tilde(sample: Sample, regime: RegimeInterval, tau: float, config: KernelConfig,
                box: WeightBox, smoother: Smoother | None = None) -> float:
    sp = _splits(sample, regime, [tau], config, box, smoother)
    sp.check(0)
    return sp.gamma_tilde(0)


def nuisance_terms(sample: Sample, regime: RegimeInterval, tau: float, config: KernelConfig,
                   box: WeightBox, smoother: Smoother | None = None) -> dict:
    """Unscaled pieces ``xi1, xi2, sigma2_1, sigma2_2`` for one split."""
    sp = _splits(sample, regime, [tau], config, box, smoother)
    sp.check(0)
    return sp.nuisance(0)


def xi_hat(sample: Sample, regime: RegimeInterval, tau: float, config: KernelConfig,
           box: WeightBox, smoother: Smoother | None = None) -> float:
    """Bias estimate ``C2 * (xi1 + xi2)``."""
    t = nuisance_terms(sample, regime, tau, config, box, smoother)
    return c2_constant(config.dim_p) * (t["xi1"] + t["xi2"])


def _sigma2(terms: dict, p: int, floor: float, tau: float) -> float:
    s2 = 2.0 * c3_constant(p) * (terms["sigma2_1"] + terms["sigma2_2"])
    if not s2 > floor:
        raise InferenceError("degenerate variance", tau=tau, sigma2=s2)
    return s2


def sigma2_hat(sample: Sample, regime: RegimeInterval, tau: float, config: KernelConfig,
               box: WeightBox, smoother: Smoother | None = None,
               variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
    """Variance estimate ``2 C3 (sigma2_1 + sigma2_2)``."""
    t = nuisance_terms(sample, regime, tau, config, box, smoother)
    return _sigma2(t, config.dim_p, variance_floor, tau)


def delta_hat(sample: Sample, regime: RegimeInterval, tau: float, config: KernelConfig,
              box: WeightBox, smoother: Smoother | None = None,
              variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> float:
    sp = _splits(sample, regime, [tau], config, box, smoother)
    sp.check(0)
    return _delta(sp, 0, config, variance_floor)[0]


def _delta(sp: _RegimeSplits, k: int, config: KernelConfig, variance_floor: float):
    h, p, n = config.h, config.dim_p, sp.sm.n
    gt = sp.gamma_tilde(k)
    t = sp.nuisance(k)
    xi = c2_constant(p) * (t["xi1"] + t["xi2"])
    s2 = _sigma2(t, p, variance_floor, float(sp.taus[k]))
    d = (n * h ** (p / 2) * gt - h ** (-p / 2) * xi) / math.sqrt(s2)
    return d, gt, xi, s2, t


def _cov_from_terms(sp: _RegimeSplits, l_: int, k: int, t_l: dict, t_k: dict) -> float:
    b_l = t_l["sigma2_1"] + t_l["sigma2_2"]
    b_k = t_k["sigma2_1"] + t_k["sigma2_2"]
    if not (b_l > 0 and b_k > 0):
        raise InferenceError("degenerate variance", taus=[float(sp.taus[l_]), float(sp.taus[k])])
    return float(np.sum(sp.c_terms(l_, k)) / math.sqrt(b_l * b_k))


def cov_terms(sample: Sample, regime: RegimeInterval, tau_l: float, tau_k: float,
              config: KernelConfig, box: WeightBox, smoother: Smoother | None = None) -> np.ndarray:
    """The nine covariance terms ``c1..c9`` for ``tau_l < tau_k``."""
    if not tau_l < tau_k:
        raise DomainError("cov_terms requires tau_l < tau_k", tau_l=tau_l, tau_k=tau_k)
    sp = _splits(sample, regime, [tau_l, tau_k], config, box, smoother)
    sp.check(0)
    sp.check(1)
    return sp.c_terms(0, 1)


def cov_hat(sample: Sample, regime: RegimeInterval, tau_l: float, tau_k: float,
            config: KernelConfig, box: WeightBox, smoother: Smoother | None = None) -> float:
    """Estimated covariance of ``delta(tau_l)`` and ``delta(tau_k)``."""
    if not tau_l < tau_k:
        raise DomainError("cov_hat requires tau_l < tau_k", tau_l=tau_l, tau_k=tau_k)
    sp = _splits(sample, regime, [tau_l, tau_k], config, box, smoother)
    sp.check(0)
    sp.check(1)
    return _cov_from_terms(sp, 0, 1, sp.nuisance(0), sp.nuisance(1))


def corr_hat(sample: Sample, regime: RegimeInterval, tau_l: float, tau_k: float,
             config: KernelConfig, box: WeightBox, smoother: Smoother | None = None) -> float:
    """Estimated correlation of ``delta(tau_l)`` and ``delta(tau_k)`` used by :func:`regime_test`."""
    if not tau_l < tau_k:
        raise DomainError("corr_hat requires tau_l < tau_k", tau_l=tau_l, tau_k=tau_k)
    sp = _splits(sample, regime, [tau_l, tau_k], config, box, smoother)
    sp.check(0)
    sp.check(1)
    return _corr(sp, 0, 1, sp.v_cross(0, 0), sp.v_cross(1, 1))


def _corr(sp: _RegimeSplits, l_: int, k: int, v_l: float, v_k: float) -> float:
    if not (v_l > 0 and v_k > 0):
        raise InferenceError("degenerate variance", taus=[float(sp.taus[l_]), float(sp.taus[k])])
    return sp.v_cross(l_, k) / math.sqrt(v_l * v_k)


def matrix_inv_sqrt(m, eig_floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Symmetric inverse square root with eigenvalues floored at ``eig_floor``."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("matrix must be square", shape=list(m.shape))
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-8 * scale):
        raise DomainError("matrix must be symmetric")
    if not eig_floor > 0:
        raise DomainError("eig_floor must be positive", eig_floor=eig_floor)
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    lam = np.maximum(lam, eig_floor)
    r = (vec * lam ** -0.5) @ vec.T
    return 0.5 * (r + r.T)


def regime_test(sample: Sample, regime: RegimeInterval, m: int, config: KernelConfig,
                box: WeightBox, smoother: Smoother | None = None,
                eig_floor: float = DEFAULT_EIG_FLOOR,
                variance_floor: float = DEFAULT_VARIANCE_FLOOR,
                grid_trim: float = DEFAULT_GRID_TRIM,
                covariance: str = "derived") -> RegimeTestResult:
    """Regime statistic ``Z`` over ``m`` equally spaced candidate splits.

    Candidates with a thin or degenerate split are dropped. ``covariance``
    selects how off-diagonal entries of the candidate covariance are
    estimated: ``"derived"`` (:meth:`_RegimeSplits.v_cross`, normalised to a
    correlation) or ``"verbatim"`` (the nine-term sum of :func:`cov_terms`).
    """
    if covariance not in COVARIANCE_METHODS:
        raise DomainError("unknown covariance method", covariance=covariance)
    sm = smoother or Smoother(sample, config)
    a, b = sm.span(regime)
    q_min, q_max = sm.q_bounds(grid_trim)
    grid = CandidateGrid.build(regime, m, sm.q[a:b], q_min, q_max, grid_trim)
    sp = _RegimeSplits(sm, regime, grid.taus, box)
    kept, dropped = [], []
    values, scale = {}, {}
    for k, tau in enumerate(grid.taus):
        try:
            sp.check(k)
            values[k] = _delta(sp, k, config, variance_floor)
            if covariance == "derived":
                scale[k] = sp.v_cross(k, k)
                if not scale[k] > 0:
                    raise InferenceError("degenerate variance", tau=float(tau))
            kept.append(k)
        except InferenceError as exc:
            dropped.append((float(tau), str(exc)))
    if not kept:
        raise InferenceError("no viable candidates", regime=regime, dropped=dropped)

    size = len(kept)
    sigma = np.eye(size)
    for i in range(size):
        for j in range(i + 1, size):
            l_, k = kept[i], kept[j]
            if covariance == "derived":
                entry = _corr(sp, l_, k, scale[l_], scale[k])
            else:
                entry = _cov_from_terms(sp, l_, k, values[l_][4], values[k][4])
            sigma[i, j] = sigma[j, i] = entry
    d = np.array([values[k][0] for k in kept])
    d_star = matrix_inv_sqrt(sigma, eig_floor) @ d
    z = float(np.sum(d_star) / math.sqrt(size))
    return RegimeTestResult(
        grid=grid,
        taus=np.array([grid.taus[k] for k in kept]),
        gamma_tilde=np.array([values[k][1] for k in kept]),
        xi_hat=np.array([values[k][2] for k in kept]),
        sigma2_hat=np.array([values[k][3] for k in kept]),
        delta_hat=d,
        sigma_matrix=sigma,
        delta_star=d_star,
        z=z,
        dropped=dropped,
    )


def critical_value(k: int, alpha: float) -> float:
    """Upper-``alpha`` quantile of the max of ``k`` independent standard normals."""
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer", k=k)
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)", alpha=alpha)
    return float(special.ndtri(math.exp(math.log1p(-alpha) / k)))


def p_value(f_stat: float, k: int) -> float:
    """``1 - Phi(f_stat)**k``."""
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer", k=k)
    if math.isnan(f_stat):
        raise DomainError("statistic is NaN")
    return float(-math.expm1(k * float(special.log_ndtr(f_stat))))


def sequential_test(sample: Sample, partition: RegimePartition, m: int, alpha: float,
                    config: KernelConfig, box: WeightBox, smoother: Smoother | None = None,
                    eig_floor: float = DEFAULT_EIG_FLOOR,
                    variance_floor: float = DEFAULT_VARIANCE_FLOOR,
                    grid_trim: float = DEFAULT_GRID_TRIM,
                    covariance: str = "derived") -> SequentialTestReport:
    """Test ``s`` thresholds against ``s + 1`` by the max of the regime statistics.

    Regimes too small to split, or whose candidates are all dropped, are
    recorded as skipped and the critical value uses the remaining count.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)", alpha=alpha)
    sm = smoother or Smoother(sample, config)
    results, skipped = [], []
    for regime in partition.regimes():
        if sm.count(regime) < 2 * config.min_regime_obs:
            skipped.append((regime, "under-populated regime"))
            continue
        try:
            results.append(regime_test(sample, regime, m, config, box, sm, eig_floor,
                                       variance_floor, grid_trim, covariance))
        except InferenceError as exc:
            skipped.append((regime, str(exc)))
    if not results:
        raise InferenceError("all regimes skipped", skipped=[(str(r), w) for r, w in skipped])
    k = len(results)
    f_stat = max(r.z for r in results)
    cv = critical_value(k, alpha)
    return SequentialTestReport(
        s_null=partition.s, per_regime=results, skipped=skipped, f_stat=f_stat, k=k,
        critical_value=cv, p_value=p_value(f_stat, k), alpha=alpha, reject=f_stat > cv,
    )
