"""Market uncertainty model: volatility/drift bands, rate curves and the G generator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class VolatilityBand:
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not (0.0 < self.sigma_lo <= self.sigma_hi) or not math.isfinite(self.sigma_hi):
            raise DomainError(
                f"volatility band requires 0 < sigma_lo <= sigma_hi, got [{self.sigma_lo}, {self.sigma_hi}]"
            )

    @property
    def var_lo(self) -> float:
        return self.sigma_lo**2

    @property
    def var_hi(self) -> float:
        return self.sigma_hi**2

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_lo == self.sigma_hi

    def contains(self, sigma) -> bool:
        sigma = np.asarray(sigma)
        return bool(np.all((sigma >= self.sigma_lo) & (sigma <= self.sigma_hi)))


@dataclass(frozen=True)
class MeanBand:
    mu_lo: float
    mu_hi: float

    def __post_init__(self):
        if not self.mu_lo <= self.mu_hi:
            raise DomainError(f"mean band requires mu_lo <= mu_hi, got [{self.mu_lo}, {self.mu_hi}]")


@dataclass(frozen=True)
class RateCurve:
    """Piecewise-constant, right-continuous short rate.

    ``segments`` is a sequence of ``(t_start, rate)`` pairs; the first start
    must be 0 and starts must increase strictly. The last rate extends up to
    ``horizon`` (unbounded by default). ``rate_band`` optionally declares an
    interval of admissible rates for rate-ambiguous pricing.
    """

    segments: Tuple[Tuple[float, float], ...]
    rate_band: Optional[Tuple[float, float]] = None
    horizon: float = math.inf
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _rates: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple((float(t), float(r)) for t, r in self.segments)
        if not segs:
            raise DomainError("rate curve needs at least one segment")
        starts = np.array([s[0] for s in segs])
        rates = np.array([s[1] for s in segs])
        if starts[0] != 0.0:
            raise DomainError("first rate segment must start at t=0")
        if np.any(np.diff(starts) <= 0):
            raise DomainError("rate segment starts must be strictly increasing")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise DomainError("short rates must be finite and nonnegative")
        if not self.horizon > starts[-1]:
            raise DomainError("rate curve horizon must exceed the last segment start")
        if self.rate_band is not None:
            lo, hi = (float(v) for v in self.rate_band)
            if not 0.0 <= lo <= hi:
                raise DomainError(f"rate band requires 0 <= r_lo <= r_hi, got [{lo}, {hi}]")
            object.__setattr__(self, "rate_band", (lo, hi))
        object.__setattr__(self, "segments", segs)
        # cumulative integral of r up to each segment start
        cum = np.concatenate([[0.0], np.cumsum(np.diff(starts) * rates[:-1])])
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_rates", rates)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def flat(cls, rate: float, rate_band=None, horizon: float = math.inf) -> "RateCurve":
        return cls(((0.0, rate),), rate_band=rate_band, horizon=horizon)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon) or not np.all(np.isfinite(t)):
            raise DomainError(f"time outside rate curve domain [0, {self.horizon}]")
        return t

    def rate_at(self, t):
        t = self._check(t)
        idx = np.searchsorted(self._starts, t, side="right") - 1
        return self._rates[idx]

    def integral(self, t0, t1):
        """Exact integral of the short rate over [t0, t1] (vectorized)."""
        t0 = self._check(t0)
        t1 = self._check(t1)
        if np.any(t0 > t1):
            raise DomainError("integral requires t0 <= t1")
        return self._primitive(t1) - self._primitive(t0)

    def _primitive(self, t):
        idx = np.searchsorted(self._starts, t, side="right") - 1
        return self._cum[idx] + (t - self._starts[idx]) * self._rates[idx]

    def average(self, t0: float, t1: float) -> float:
        if t1 == t0:
            return float(self.rate_at(t0))
        return float(self.integral(t0, t1)) / (t1 - t0)


@dataclass(frozen=True)
class MarketSpec:
    spot: float
    band: VolatilityBand
    rates: RateCurve
    maturity: float
    mean_band: Optional[MeanBand] = None

    def __post_init__(self):
        if not (self.spot > 0 and math.isfinite(self.spot)):
            raise DomainError(f"spot must be positive, got {self.spot}")
        if not (self.maturity > 0 and math.isfinite(self.maturity)):
            raise DomainError(f"maturity must be positive, got {self.maturity}")
        if self.maturity > self.rates.horizon:
            raise DomainError("rate curve does not cover the maturity")

    def with_band(self, band: VolatilityBand) -> "MarketSpec":
        return MarketSpec(self.spot, band, self.rates, self.maturity, self.mean_band)


def discount_factor(rates: RateCurve, t0: float, t1: float) -> float:
    """exp(-integral of r over [t0, t1]), exact for the piecewise-constant curve."""
    if t0 > t1:
        raise DomainError(f"discount_factor needs t0 <= t1, got {t0} > {t1}")
    return float(np.exp(-rates.integral(t0, t1)))


def g_function(band: VolatilityBand, a):
    """G(a) = 1/2 sup over sigma^2 in the band of sigma^2 * a."""
    a = np.asarray(a, dtype=float)
    out = 0.5 * (band.var_hi * np.maximum(a, 0.0) - band.var_lo * np.maximum(-a, 0.0))
    return float(out) if out.ndim == 0 else out


def log_return_mean_band(mu: float, band: VolatilityBand) -> Tuple[float, float]:
    """Range of the mean continuously-compounded return mu - sigma^2/2 over the band."""
    return mu - 0.5 * band.var_hi, mu - 0.5 * band.var_lo


class ConfidenceInterval(NamedTuple):
    ln_lo: float
    ln_hi: float
    # False outside sigma in [0.2, 0.4], T <= 1 where coverage is not argued
    coverage_guaranteed: bool


def robust_confidence_interval(spec: MarketSpec, z: float = 1.96) -> ConfidenceInterval:
    """Interval for ln S_T built at the top of the volatility band."""
    T = spec.maturity
    r = spec.rates.average(0.0, T)
    s = spec.band.sigma_hi
    centre = math.log(spec.spot) + (r - 0.5 * s * s) * T
    half = z * s * math.sqrt(T)
    ok = T <= 1.0 and spec.band.sigma_lo >= 0.2 and spec.band.sigma_hi <= 0.4
    return ConfidenceInterval(centre - half, centre + half, ok)
