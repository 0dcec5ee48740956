"""Stock paths with volatility and drift chosen inside their bands.

Each path draws from its own Philox stream keyed by (seed, path index), so a
path depends only on its key and never on how many other paths are generated
or in what order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bsb import PriceSurface, _vol_policy, greeks_at
from .errors import DomainError
from .market import MarketSpec

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class VolPolicy:
    kind: str
    sigma: Optional[float] = None
    sigma_a: Optional[float] = None
    sigma_b: Optional[float] = None
    switch_time: Optional[float] = None
    surface: Optional[PriceSurface] = None

    @classmethod
    def constant(cls, sigma: float) -> "VolPolicy":
        return cls("constant", sigma=sigma)

    @classmethod
    def random_band(cls) -> "VolPolicy":
        return cls("random_band")

    @classmethod
    def bang_bang(cls, surface: PriceSurface) -> "VolPolicy":
        return cls("bang_bang", surface=surface)

    @classmethod
    def two_regime(cls, sigma_a: float, sigma_b: float, switch_time: float) -> "VolPolicy":
        return cls("two_regime", sigma_a=sigma_a, sigma_b=sigma_b, switch_time=switch_time)

    def validate(self, spec: MarketSpec):
        band = spec.band
        if self.kind == "constant":
            vols = [self.sigma]
        elif self.kind == "two_regime":
            vols = [self.sigma_a, self.sigma_b]
            if self.switch_time is None or self.switch_time < 0:
                raise DomainError("two_regime needs a nonnegative switch_time")
        elif self.kind == "bang_bang":
            if self.surface is None:
                raise DomainError("bang_bang policy needs a surface")
            vols = []
        elif self.kind == "random_band":
            vols = []
        else:
            raise DomainError(f"unknown volatility policy {self.kind!r}")
        for v in vols:
            if v is None or not band.contains(v):
                raise DomainError(f"policy volatility {v} outside band [{band.sigma_lo}, {band.sigma_hi}]")


@dataclass(frozen=True)
class DriftPolicy:
    kind: str = "risk_neutral_zero"
    mu: Optional[float] = None
    gamma: Optional[float] = None

    @classmethod
    def risk_neutral_zero(cls) -> "DriftPolicy":
        return cls()

    @classmethod
    def constant(cls, mu: float) -> "DriftPolicy":
        return cls("constant", mu=mu)

    @classmethod
    def coupled(cls, gamma: float) -> "DriftPolicy":
        return cls("coupled", gamma=gamma)

    def validate(self, spec: MarketSpec):
        mb = spec.mean_band
        if self.kind == "risk_neutral_zero":
            return
        if self.kind == "constant":
            if self.mu is None:
                raise DomainError("constant drift needs mu")
            if mb is not None and not mb.mu_lo <= self.mu <= mb.mu_hi:
                raise DomainError(f"drift {self.mu} outside mean band [{mb.mu_lo}, {mb.mu_hi}]")
            return
        if self.kind == "coupled":
            if mb is None:
                raise DomainError("coupled drift needs a mean band (mu_lo)")
            if self.gamma is None or self.gamma < 0:
                raise DomainError("coupled drift needs gamma >= 0")
            top = mb.mu_lo + 0.5 * self.gamma * (spec.band.var_hi - spec.band.var_lo)
            if top > mb.mu_hi * (1 + 1e-12) + 1e-15:
                raise DomainError(f"coupled drift reaches {top} above mu_hi={mb.mu_hi}")
            return
        raise DomainError(f"unknown drift policy {self.kind!r}")


@dataclass(frozen=True)
class SimulatedPath:
    times: np.ndarray
    S: np.ndarray
    # per-step quadratic-variation increment sigma_t^2 dt
    d_qv: np.ndarray
    # per-step drift excess (mu_t - r_t) dt
    beta_increments: np.ndarray
    seed: int
    path_id: int

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def realized_variance(self) -> np.ndarray:
        return self.d_qv / self.dt


class PathSet(Sequence):
    """A batch of simulated paths stored as (n_paths, n_steps) arrays."""

    def __init__(self, times, S, d_qv, beta, seed, path_ids):
        self.times = times
        self.S = S
        self.d_qv = d_qv
        self.beta = beta
        self.seed = seed
        self.path_ids = path_ids

    def __len__(self):
        return self.S.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return SimulatedPath(self.times, self.S[i], self.d_qv[i], self.beta[i], self.seed, int(self.path_ids[i]))


def _stream(seed: int, path: int) -> np.random.Generator:
    key = ((seed & _MASK64) << 64) | (path & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def _draws(seed, path_ids, n_steps, need_uniform):
    Z = np.empty((len(path_ids), n_steps))
    U = np.empty((len(path_ids), n_steps)) if need_uniform else None
    for row, p in enumerate(path_ids):
        gen = _stream(seed, int(p))
        Z[row] = gen.standard_normal(n_steps)
        if need_uniform:
            U[row] = gen.random(n_steps)
    return Z, U


def simulate_paths(
    spec: MarketSpec,
    vol_policy: VolPolicy,
    drift_policy: DriftPolicy = DriftPolicy(),
    n_paths: int = 1,
    n_steps: int = 252,
    seed: int = 0,
    first_path: int = 0,
) -> PathSet:
    """Log-Euler simulation with a piecewise-constant volatility per step.

    ln S advances by int r + (mu - r) dt - d_qv / 2 + sqrt(d_qv) Z per step.
    """
    if n_paths < 1 or n_steps < 1:
        raise DomainError("n_paths and n_steps must be >= 1")
    vol_policy.validate(spec)
    drift_policy.validate(spec)
    band = spec.band
    T = spec.maturity
    times = np.linspace(0.0, T, n_steps + 1)
    dt = np.diff(times)
    r_int = spec.rates.integral(times[:-1], times[1:])
    ids = np.arange(first_path, first_path + n_paths, dtype=np.int64)
    Z, U = _draws(seed, ids, n_steps, vol_policy.kind == "random_band")

    # per-step variance; d_qv = var * dt
    if vol_policy.kind == "constant":
        var = np.full((n_paths, n_steps), vol_policy.sigma**2)
    elif vol_policy.kind == "random_band":
        sig = band.sigma_lo + (band.sigma_hi - band.sigma_lo) * U
        var = sig * sig
    elif vol_policy.kind == "two_regime":
        ts = vol_policy.switch_time
        before = np.clip(np.minimum(times[1:], ts) - times[:-1], 0.0, None)
        row = (vol_policy.sigma_a**2 * before + vol_policy.sigma_b**2 * (dt - before)) / dt
        var = np.broadcast_to(row, (n_paths, n_steps)).copy()
    else:
        var = None

    def beta_of(v, j):
        if drift_policy.kind == "risk_neutral_zero":
            return np.zeros_like(v)
        r_avg = r_int[j] / dt[j]
        if drift_policy.kind == "constant":
            mu = np.full_like(v, drift_policy.mu)
        else:
            mu = spec.mean_band.mu_lo + 0.5 * drift_policy.gamma * (v - band.var_lo)
        return (mu - r_avg) * dt[j]

    lnS = np.empty((n_paths, n_steps + 1))
    lnS[:, 0] = math.log(spec.spot)
    beta = np.empty((n_paths, n_steps))
    d_qv = np.empty((n_paths, n_steps))
    if var is None:
        surf = vol_policy.surface
        lo_x, hi_x = surf.log_prices[0], surf.log_prices[-1]
        for j in range(n_steps):
            t_q = min(times[j], surf.maturity)
            x_q = np.clip(lnS[:, j], lo_x, hi_x)
            _, _, gamma, _ = greeks_at(surf, np.full(n_paths, t_q), np.exp(x_q))
            v = _vol_policy(np.asarray(gamma), band, surf.side)
            d_qv[:, j] = v * dt[j]
            beta[:, j] = beta_of(v, j)
            lnS[:, j + 1] = lnS[:, j] + r_int[j] + beta[:, j] - 0.5 * d_qv[:, j] + np.sqrt(d_qv[:, j]) * Z[:, j]
    else:
        # sigma*sigma can round a ulp outside the band
        var = np.clip(var, band.var_lo, band.var_hi)
        d_qv[:] = var * dt
        for j in range(n_steps):
            beta[:, j] = beta_of(var[:, j], j)
        incr = r_int[None, :] + beta - 0.5 * d_qv + np.sqrt(d_qv) * Z
        lnS[:, 1:] = lnS[:, :1] + np.cumsum(incr, axis=1)
    S = np.exp(lnS)
    S[:, 0] = spec.spot
    return PathSet(times, S, d_qv, beta, seed, ids)


def quadratic_variation(path: SimulatedPath) -> np.ndarray:
    """Running quadratic variation of the volatility driver, starting at 0."""
    return np.concatenate([[0.0], np.cumsum(path.d_qv)])


def paths_to_csv(paths: PathSet, path) -> None:
    """One row per (path, time node); increments are those ending at that node."""
    P, n1 = paths.S.shape
    pid = np.repeat(paths.path_ids, n1)
    step = np.tile(np.arange(n1), P)
    t = np.tile(paths.times, P)
    qv = np.concatenate([np.zeros((P, 1)), paths.d_qv], axis=1).ravel()
    beta = np.concatenate([np.zeros((P, 1)), paths.beta], axis=1).ravel()
    data = np.column_stack([pid, step, t, paths.S.ravel(), qv, beta])
    fmt = ["%d", "%d", "%.17g", "%.17g", "%.17g", "%.17g"]
    np.savetxt(path, data, delimiter=",", fmt=fmt, header="path_id,step,t,S,sigma2_dt,beta_dt", comments="")
