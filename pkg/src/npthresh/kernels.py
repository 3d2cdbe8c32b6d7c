"""Gaussian product kernel, bandwidth rule and the indicator weighting box."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

DEFAULT_DELTA = 4.25
DEFAULT_C = 1.0
DEFAULT_DENSITY_FLOOR = 1e-10
DEFAULT_MIN_REGIME_OBS = 10


def c2_constant(p: int) -> float:
    """Integral of the squared Gaussian product kernel, ``(2 sqrt(pi))^-p``."""
    return (2.0 * math.sqrt(math.pi)) ** -p


def c3_constant(p: int) -> float:
    """Integral of the squared Gaussian self-convolution, ``(2 sqrt(2 pi))^-p``."""
    return (2.0 * math.sqrt(2.0 * math.pi)) ** -p


@dataclass(frozen=True)
class KernelConfig:
    """Resolved smoothing parameters shared by every estimator.

    Attributes
    ----------
    h : float
        Bandwidth.
    dim_p : int
        Covariate dimension.
    order_r : int
        Kernel order. Only the second-order Gaussian kernel is implemented;
        the value is carried for bookkeeping.
    c, delta, scale : float
        Inputs of the rule ``h = c * scale * n**(-1/delta)`` when the
        bandwidth was resolved from it.
    density_floor : float
        Lower clamp for any density estimate used as a denominator.
    min_regime_obs : int
        Minimum number of observations a regime or split must hold.
    """

    h: float
    dim_p: int = 1
    order_r: int = 2
    c: float = DEFAULT_C
    delta: float = DEFAULT_DELTA
    scale: float = 1.0
    density_floor: float = DEFAULT_DENSITY_FLOOR
    min_regime_obs: int = DEFAULT_MIN_REGIME_OBS

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise DomainError("bandwidth must be positive and finite", h=self.h)
        if self.dim_p < 1:
            raise DomainError("dim_p must be >= 1", dim_p=self.dim_p)
        if self.order_r < 2 or self.order_r % 2:
            raise DomainError("kernel order must be even and >= 2", order_r=self.order_r)
        if not self.density_floor > 0:
            raise DomainError("density_floor must be positive", density_floor=self.density_floor)
        if self.min_regime_obs < 1:
            raise DomainError("min_regime_obs must be >= 1", min_regime_obs=self.min_regime_obs)

    @classmethod
    def from_rule(cls, n: int, *, c: float = DEFAULT_C, scale: float = 1.0,
                  delta: float = DEFAULT_DELTA, dim_p: int = 1, **kwargs) -> KernelConfig:
        h = resolve_bandwidth(c, scale, n, delta)
        return cls(h=h, dim_p=dim_p, c=c, delta=delta, scale=scale, **kwargs)

    def with_bandwidth(self, h: float) -> KernelConfig:
        return replace(self, h=h)

    def to_dict(self) -> dict:
        return {
            "h": self.h, "dim_p": self.dim_p, "order_r": self.order_r, "c": self.c,
            "delta": self.delta, "scale": self.scale, "density_floor": self.density_floor,
            "min_regime_obs": self.min_regime_obs,
        }


@dataclass(frozen=True)
class WeightBox:
    """Closed box ``[lower, upper]`` in covariate space; the weight is its indicator."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise DomainError("box bounds must be non-empty and of equal length",
                              lower=list(lo), upper=list(hi))
        if not np.all(lo < hi):
            raise DomainError("box requires lower < upper in every dimension",
                              lower=list(lo), upper=list(hi))
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @classmethod
    def around(cls, x, width: float = 2.0) -> WeightBox:
        """Box of ``mean +/- width * sd`` per covariate column."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        mu = x.mean(axis=0)
        sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(x.shape[1])
        sd = np.where(sd > 0, sd, 1.0)
        return cls(tuple(mu - width * sd), tuple(mu + width * sd))

    def indicator(self, x) -> np.ndarray:
        """Vectorised weight for the rows of an ``(n, p)`` array."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.dim:
            raise DomainError("dimension mismatch between points and box",
                              point_dim=x.shape[1], box_dim=self.dim)
        return np.all((x >= self._lo) & (x <= self._hi), axis=1).astype(float)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


def kernel_value(u, config: KernelConfig | None = None) -> float:
    """Gaussian product kernel evaluated at ``u`` (unscaled)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise DomainError("kernel argument must be finite", u=u.tolist())
    if config is not None and u.size != config.dim_p:
        raise DomainError("kernel argument has wrong dimension", size=u.size, dim_p=config.dim_p)
    return float(np.exp(-0.5 * np.dot(u, u)) / _SQRT_2PI ** u.size)


def resolve_bandwidth(c: float, scale: float, n: int, delta: float) -> float:
    """``c * scale * n**(-1/delta)``."""
    if n is None or int(n) != n or n < 1:
        raise DomainError("n must be a positive integer", n=n)
    for name, val in (("c", c), ("scale", scale), ("delta", delta)):
        if not (math.isfinite(val) and val > 0):
            raise DomainError(f"{name} must be positive", **{name: val})
    return c * scale * math.exp(-math.log(n) / delta)


def weight(x, box: WeightBox) -> int:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != box.dim:
        raise DomainError("dimension mismatch between point and box", point_dim=x.size, box_dim=box.dim)
    return int(box.indicator(x[None, :])[0])


def kernel_matrix(x_eval: np.ndarray, x_data: np.ndarray, h: float) -> np.ndarray:
    """``K_h(x_data[j] - x_eval[i])`` for every pair, shape ``(len(x_eval), len(x_data))``."""
    p = x_eval.shape[1]
    sq = np.zeros((x_eval.shape[0], x_data.shape[0]))
    for d in range(p):
        diff = (x_data[None, :, d] - x_eval[:, d, None]) / h
        sq += diff * diff
    out = np.exp(-0.5 * sq)
    out *= 1.0 / (_SQRT_2PI * h) ** p
    return out
