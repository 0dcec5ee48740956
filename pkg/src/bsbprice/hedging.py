"""Discrete delta hedging along a simulated path, managed on a BSB surface.

The hedger starts with the managing price, holds delta shares, keeps the rest
in cash at the short rate, and after each step withdraws the gamma P&L

    short_upper:  1/2 S^2 gamma (sigma_sel^2 dt - d_qv),  sigma_sel the maximizer
    long_lower:   1/2 S^2 gamma (d_qv - sigma_sel^2 dt),  sigma_sel the minimizer

into a pocket that earns nothing. The running sum of withdrawals is K.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsb import PriceSurface, greeks_at
from .errors import DomainError
from .market import MarketSpec, VolatilityBand
from .paths import SimulatedPath

SIDES = {"short_upper": ("upper", 1.0), "long_lower": ("lower", -1.0)}
_VAR_RTOL = 1e-12


def pnl_increment(gamma, S, dt, d_qv, band: VolatilityBand, side: str = "short_upper"):
    """Gamma P&L of one step; nonnegative whenever d_qv / dt lies in the band."""
    if side not in SIDES:
        raise DomainError(f"side must be one of {sorted(SIDES)}, got {side!r}")
    gamma, S, dt, d_qv = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gamma, S, dt, d_qv)))
    if np.any(dt <= 0):
        raise DomainError("dt must be positive")
    lo, hi = band.var_lo * dt, band.var_hi * dt
    if np.any(d_qv < lo * (1 - _VAR_RTOL)) or np.any(d_qv > hi * (1 + _VAR_RTOL)):
        raise DomainError("realized variance d_qv / dt outside the volatility band")
    pos = gamma >= 0
    if side == "short_upper":
        gap = np.where(pos, np.maximum(hi - d_qv, 0.0), np.minimum(lo - d_qv, 0.0))
    else:
        gap = np.where(pos, np.maximum(d_qv - lo, 0.0), np.minimum(d_qv - hi, 0.0))
    out = 0.5 * S * S * gamma * gap
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class HedgeLedger:
    times: np.ndarray
    S: np.ndarray
    delta: np.ndarray
    # managing price V(t, S_t) read from the surface
    value: np.ndarray
    # hedge account plus withdrawn P&L (wealth before withdrawals)
    portfolio_value: np.ndarray
    pnl_increments: np.ndarray
    K_cumulative: np.ndarray
    # realized change of (account - V) per step, net of the withdrawal
    hedge_error: np.ndarray
    terminal_payoff: float
    terminal_shortfall: float
    side: str
    path_id: int
    clamped: bool

    @property
    def min_increment(self) -> float:
        return float(self.pnl_increments.min()) if len(self.pnl_increments) else 0.0

    def consistency_residual(self) -> np.ndarray:
        """portfolio_value minus signed K, minus the managing price."""
        sign = SIDES[self.side][1]
        return self.portfolio_value - sign * self.K_cumulative - self.value


def run_delta_hedge(
    surface: PriceSurface,
    path: SimulatedPath,
    spec: MarketSpec,
    side: str = "short_upper",
    clamp: bool = False,
    payoff=None,
) -> HedgeLedger:
    """Hedge one path. ``payoff`` defaults to the surface's terminal slice."""
    if side not in SIDES:
        raise DomainError(f"side must be one of {sorted(SIDES)}, got {side!r}")
    surf_side, sign = SIDES[side]
    if surface.side != surf_side:
        raise DomainError(f"{side} hedging needs a {surf_side} surface, got {surface.side}")
    if abs(path.times[-1] - surface.maturity) > 1e-12 * max(1.0, surface.maturity):
        raise DomainError("path horizon differs from the surface maturity")
    lo, hi = np.exp(surface.log_prices[0]), np.exp(surface.log_prices[-1])
    S = path.S
    outside = (S < lo) | (S > hi)
    if outside.any() and not clamp:
        raise DomainError(f"path {path.path_id} leaves the grid domain [{lo:.6g}, {hi:.6g}]")
    Sq = np.clip(S, lo, hi)
    t = np.minimum(path.times, surface.maturity)
    V, delta, gamma, _ = greeks_at(surface, t, Sq)
    if payoff is None:
        V_T = float(V[-1])
    else:
        V_T = float(np.asarray(payoff.evaluate(S[-1]), dtype=float))

    dt = np.diff(path.times)
    growth = np.exp(spec.rates.integral(path.times[:-1], path.times[1:]))
    inc = pnl_increment(gamma[:-1], S[:-1], dt, path.d_qv, spec.band, side)

    n = len(dt)
    acct = np.empty(n + 1)
    acct[0] = V[0]
    gain = delta[:-1] * (S[1:] - S[:-1] * growth)
    for j in range(n):
        acct[j + 1] = acct[j] * growth[j] + gain[j] - sign * inc[j]
    K = np.concatenate([[0.0], np.cumsum(inc)])
    wealth = acct + sign * K
    err = (acct[1:] - V[1:]) - (acct[:-1] - V[:-1]) * growth
    return HedgeLedger(
        times=path.times,
        S=S,
        delta=delta,
        value=V,
        portfolio_value=wealth,
        pnl_increments=inc,
        K_cumulative=K,
        hedge_error=err,
        terminal_payoff=V_T,
        terminal_shortfall=float(sign * (V_T - wealth[-1])),
        side=side,
        path_id=path.path_id,
        clamped=bool(outside.any()),
    )


def ledger_to_csv(ledger: HedgeLedger, path) -> None:
    """Row j holds the state at t_j and the P&L of the step ending there."""
    n1 = len(ledger.times)
    pnl = np.concatenate([[0.0], ledger.pnl_increments])
    data = np.column_stack([np.arange(n1), ledger.times, ledger.S, ledger.delta, ledger.value, pnl, ledger.K_cumulative])
    fmt = ["%d"] + ["%.17g"] * 6
    np.savetxt(path, data, delimiter=",", fmt=fmt, header="step,t,S,delta,value,pnl,K_cum", comments="")
