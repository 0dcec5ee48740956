"""Black-Scholes-Barenblatt solver on a log-uniform price grid.

Upper (superhedging) prices solve

    V_t + sup_sigma 1/2 sigma^2 S^2 V_SS + r S V_S - r V + f = 0,   V(T) = payoff

with the sup over [sigma_lo, sigma_hi]; the lower price uses the inf. The
optimal volatility is bang-bang on the sign of the discrete gamma, so each
implicit step is solved by Howard (policy) iteration over a two-point policy
per node.

Nodes are uniform in x = ln S but the difference weights are taken in S, so
the discrete gamma of any affine function of S is exactly zero. Far-field
boundaries impose linearity in S (gamma = 0) by extrapolating from the two
neighbouring nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .errors import DomainError, SolverError
from .market import MarketSpec, VolatilityBand
from .payoff import Payoff

SCHEMES = ("implicit_policy_iteration", "explicit")
SIDES = ("upper", "lower")

Source = Union[None, Callable[[float, np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    n_space: int = 400
    n_time: int = 400
    # half-width of the log-price domain in units of sigma * sqrt(T)
    domain_width: float = 6.0
    scheme: str = "implicit_policy_iteration"
    # volatility used to size the domain; defaults to the band's upper edge.
    # Fix it to compare surfaces from different bands on identical nodes.
    width_sigma: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if self.n_space < 16:
            raise DomainError("n_space must be >= 16")
        if self.n_time < 8:
            raise DomainError("n_time must be >= 8")
        if not self.domain_width > 0:
            raise DomainError("domain_width must be positive")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.width_sigma is not None and not self.width_sigma > 0:
            raise DomainError("width_sigma must be positive")

    def refined(self, factor: int = 2) -> "GridSpec":
        return replace(self, n_space=self.n_space * factor, n_time=self.n_time * factor)


def log_grid(spot: float, sigma: float, maturity: float, grid: GridSpec) -> np.ndarray:
    """Uniform x = ln S nodes with ln(spot) on node ``n_space // 2``."""
    n = grid.n_space
    half = grid.domain_width * sigma * math.sqrt(maturity)
    h = 2.0 * half / (n - 1)
    j0 = n // 2
    return math.log(spot) + (np.arange(n) - j0) * h


class _Stencil:
    """Non-uniform three-point weights in S on the interior nodes."""

    def __init__(self, S: np.ndarray):
        self.S = S
        hm = S[1:-1] - S[:-2]
        hp = S[2:] - S[1:-1]
        tot = hm + hp
        self.Si = S[1:-1]
        self.S2 = self.Si**2
        self.d2 = (2.0 / (hm * tot), -2.0 / (hm * hp), 2.0 / (hp * tot))
        self.d1 = (-hp / (hm * tot), (hp - hm) / (hm * hp), hm / (hp * tot))
        self.hp = hp
        # node 0 = a0*V1 + b0*V2, node n-1 = a1*V[n-2] + b1*V[n-3]
        self.b0 = (S[0] - S[1]) / (S[2] - S[1])
        self.a0 = 1.0 - self.b0
        self.b1 = (S[-1] - S[-2]) / (S[-3] - S[-2])
        self.a1 = 1.0 - self.b1

    def drift_weights(self, var_min: float, rate_max: float):
        """Central first difference where it keeps the scheme monotone, forward otherwise."""
        wm, w0, wp = (w.copy() for w in self.d1)
        ok = 0.5 * var_min * self.S2 * self.d2[0] + rate_max * self.Si * wm >= 0
        bad = ~ok
        wm[bad] = 0.0
        w0[bad] = -1.0 / self.hp[bad]
        wp[bad] = 1.0 / self.hp[bad]
        return wm, w0, wp

    def greeks(self, V: np.ndarray):
        """Delta and gamma over the last axis; gamma is zero on the boundary nodes."""
        S = self.S
        delta = np.empty_like(V)
        gamma = np.zeros_like(V)
        inner = V[..., 1:-1]
        left, right = V[..., :-2], V[..., 2:]
        delta[..., 1:-1] = self.d1[0] * left + self.d1[1] * inner + self.d1[2] * right
        gamma[..., 1:-1] = self.d2[0] * left + self.d2[1] * inner + self.d2[2] * right
        delta[..., 0] = (V[..., 1] - V[..., 0]) / (S[1] - S[0])
        delta[..., -1] = (V[..., -1] - V[..., -2]) / (S[-1] - S[-2])
        return delta, gamma

    def extrapolate(self, V: np.ndarray):
        V[..., 0] = self.a0 * V[..., 1] + self.b0 * V[..., 2]
        V[..., -1] = self.a1 * V[..., -2] + self.b1 * V[..., -3]
        return V


def _vol_policy(gamma_inner, band: VolatilityBand, side: str):
    if side == "upper":
        return np.where(gamma_inner >= 0, band.var_hi, band.var_lo)
    return np.where(gamma_inner < 0, band.var_hi, band.var_lo)


def _rate_policy(excess, rate_band, side: str):
    lo, hi = rate_band
    if side == "upper":
        return np.where(excess >= 0, hi, lo)
    return np.where(excess < 0, hi, lo)


class _Operator:
    """Discrete generator for a fixed (var, rate) policy, batched over rows."""

    def __init__(self, st: _Stencil, drift_w):
        self.st = st
        self.w1 = drift_w

    def coefficients(self, var, rate):
        st = self.st
        half = 0.5 * var * st.S2
        rS = rate * st.Si
        a = half * st.d2[0] + rS * self.w1[0]
        b = half * st.d2[1] + rS * self.w1[1] - rate
        c = half * st.d2[2] + rS * self.w1[2]
        return a, b, c

    def solve_implicit(self, var, rate, rhs, dt):
        """Solve (I - dt L) V = rhs on interior nodes, boundaries eliminated."""
        st = self.st
        a, b, c = self.coefficients(var, rate)
        B, m = rhs.shape
        sub = np.broadcast_to(-dt * a, (B, m)).copy()
        diag = np.broadcast_to(1.0 - dt * b, (B, m)).copy()
        sup = np.broadcast_to(-dt * c, (B, m)).copy()
        diag[:, 0] += sub[:, 0] * st.a0
        sup[:, 0] += sub[:, 0] * st.b0
        sub[:, 0] = 0.0
        diag[:, -1] += sup[:, -1] * st.a1
        sub[:, -1] += sup[:, -1] * st.b1
        sup[:, -1] = 0.0
        ab = np.zeros((3, B * m))
        ab[0, 1:] = sup.ravel()[:-1]
        ab[1] = diag.ravel()
        ab[2, :-1] = sub.ravel()[1:]
        u = solve_banded((1, 1), ab, rhs.ravel(), check_finite=False)
        V = np.empty((B, m + 2))
        V[:, 1:-1] = u.reshape(B, m)
        return st.extrapolate(V)

    def apply(self, var, rate, V):
        a, b, c = self.coefficients(var, rate)
        return a * V[..., :-2] + b * V[..., 1:-1] + c * V[..., 2:]


def _howard_step(op: _Operator, V_next, dt, band, side, rate, rate_band, src, grid, step):
    """One backward implicit step; returns the new full-grid values."""
    st = op.st
    rhs = V_next[:, 1:-1] + (dt * src if src is not None else 0.0)
    _, gamma = st.greeks(V_next)
    var = _vol_policy(gamma[:, 1:-1], band, side)
    if rate_band is not None:
        delta, _ = st.greeks(V_next)
        rate = _rate_policy(st.Si * delta[:, 1:-1] - V_next[:, 1:-1], rate_band, side)
    V_prev = None
    for it in range(grid.max_iter):
        V = op.solve_implicit(var, rate, rhs, dt)
        delta, gamma = st.greeks(V)
        new_var = _vol_policy(gamma[:, 1:-1], band, side)
        same = np.array_equal(new_var, var)
        if rate_band is not None:
            new_rate = _rate_policy(st.Si * delta[:, 1:-1] - V[:, 1:-1], rate_band, side)
            same = same and np.array_equal(new_rate, rate)
        if same:
            return V, it + 1
        if V_prev is not None:
            change = np.max(np.abs(V - V_prev))
            if change <= grid.tol * max(1.0, float(np.max(np.abs(V)))):
                return V, it + 1
        V_prev = V
        var = new_var
        if rate_band is not None:
            rate = new_rate
    flips = int(np.sum(new_var != var))
    raise SolverError(
        f"policy iteration did not converge in {grid.max_iter} iterations at step {step}",
        step=step,
        iterations=grid.max_iter,
        policy_flips=flips,
        last_change=float(np.max(np.abs(V - V_prev))) if V_prev is not None else None,
    )


@dataclass(frozen=True)
class PriceSurface:
    times: np.ndarray
    log_prices: np.ndarray
    values: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    side: str
    spot_index: int
    iterations: int = 0

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.log_prices)

    @property
    def price(self) -> float:
        """Value at time 0 and the spot node."""
        return float(self.values[0, self.spot_index])

    @property
    def maturity(self) -> float:
        return float(self.times[-1])


def _source_slice(source: Source, n, t, S):
    if source is None:
        return None
    if callable(source):
        return np.broadcast_to(np.asarray(source(t, S), dtype=float), S.shape)
    return np.asarray(source[n], dtype=float)


def _solve(
    terminal: np.ndarray,
    spec: MarketSpec,
    grid: GridSpec,
    side: str,
    S: np.ndarray,
    times: np.ndarray,
    source: Source = None,
    rate_band=None,
    store: bool = True,
):
    """Backward sweep for a batch of terminal rows (shape (B, n)).

    Returns the (n_t, B, n) value stack if ``store`` else the time-0 slice,
    plus the total number of policy iterations.
    """
    if side not in SIDES:
        raise DomainError(f"side must be 'upper' or 'lower', got {side!r}")
    band = spec.band
    st = _Stencil(S)
    if rate_band is not None:
        rate_max = rate_band[1]
    else:
        rate_max = float(max(r for _, r in spec.rates.segments))
    op = _Operator(st, st.drift_weights(band.var_lo, rate_max))
    V = np.atleast_2d(np.asarray(terminal, dtype=float)).copy()
    n_t = len(times) - 1
    stack = np.empty((n_t + 1,) + V.shape) if store else None
    if store:
        stack[-1] = V
    total_iter = 0
    if grid.scheme == "explicit":
        h = math.log(S[1] / S[0])
        dt_max = float(np.max(np.diff(times)))
        if dt_max > h * h / band.var_hi:
            raise SolverError(
                f"explicit scheme unstable: dt={dt_max:.3g} > dx^2/sigma_hi^2={h * h / band.var_hi:.3g}",
                dt=dt_max,
                dx=h,
            )
    for n in range(n_t - 1, -1, -1):
        t0, t1 = times[n], times[n + 1]
        dt = t1 - t0
        src = _source_slice(source, n, t0, S)
        src_inner = None if src is None else src[..., 1:-1]
        rate = spec.rates.average(t0, t1) if rate_band is None else None
        if grid.scheme == "explicit":
            delta, gamma = st.greeks(V)
            var = _vol_policy(gamma[:, 1:-1], band, side)
            if rate_band is not None:
                rate = _rate_policy(st.Si * delta[:, 1:-1] - V[:, 1:-1], rate_band, side)
            new = V.copy()
            new[:, 1:-1] = V[:, 1:-1] + dt * op.apply(var, rate, V)
            if src_inner is not None:
                new[:, 1:-1] += dt * src_inner
            V = st.extrapolate(new)
            total_iter += 1
        else:
            V, its = _howard_step(op, V, dt, band, side, rate, rate_band, src_inner, grid, n)
            total_iter += its
        if store:
            stack[n] = V
    return (stack if store else V), total_iter


def _surface_from_stack(stack2d, times, x, side, spot_index, iterations):
    st = _Stencil(np.exp(x))
    delta, gamma = st.greeks(stack2d)
    eta = 0.5 * np.exp(2 * x) * gamma
    return PriceSurface(times, x, stack2d, delta, gamma, eta, side, spot_index, iterations)


def _setup(spec: MarketSpec, grid: GridSpec):
    width_sigma = grid.width_sigma or spec.band.sigma_hi
    x = log_grid(spec.spot, width_sigma, spec.maturity, grid)
    times = np.linspace(0.0, spec.maturity, grid.n_time + 1)
    return x, times


def _terminal_values(payoff: Payoff, S: np.ndarray) -> np.ndarray:
    if not payoff.is_state_dependent:
        raise DomainError("solve_bsb needs a payoff without fixing references; use solve_path_dependent")
    return np.broadcast_to(payoff.evaluate(S), S.shape).astype(float)


def solve_bsb(
    payoff: Payoff,
    spec: MarketSpec,
    grid: GridSpec = GridSpec(),
    side: str = "upper",
    source: Source = None,
) -> PriceSurface:
    """Upper or lower robust price surface for a state-dependent payoff.

    ``source`` is an optional running term f(t, S) added to the generator;
    it may be a callable or an array indexed by (time index, node).
    """
    x, times = _setup(spec, grid)
    S = np.exp(x)
    stack, its = _solve(_terminal_values(payoff, S), spec, grid, side, S, times, source)
    return _surface_from_stack(stack[:, 0, :], times, x, side, grid.n_space // 2, its)


def solve_bsb_rate_uncertain(
    payoff: Payoff,
    spec: MarketSpec,
    grid: GridSpec = GridSpec(),
    side: str = "upper",
) -> PriceSurface:
    """Price with the short rate also chosen adversarially inside ``spec.rates.rate_band``."""
    if spec.rates.rate_band is None:
        raise DomainError("solve_bsb_rate_uncertain needs a rate curve with rate_band")
    x, times = _setup(spec, grid)
    S = np.exp(x)
    stack, its = _solve(
        _terminal_values(payoff, S), spec, grid, side, S, times, rate_band=spec.rates.rate_band
    )
    return _surface_from_stack(stack[:, 0, :], times, x, side, grid.n_space // 2, its)


def black_scholes_closed_form(spot, strike, rate, sigma, T, kind: str = "call"):
    """Classical Black-Scholes price (vectorized over spot)."""
    spot = np.asarray(spot, dtype=float)
    if np.any(spot <= 0) or strike <= 0 or sigma <= 0 or T <= 0:
        raise DomainError("Black-Scholes inputs must be positive")
    if kind not in ("call", "put"):
        raise DomainError(f"kind must be 'call' or 'put', got {kind!r}")
    vol = sigma * math.sqrt(T)
    d1 = (np.log(spot / strike) + (rate + 0.5 * sigma * sigma) * T) / vol
    d2 = d1 - vol
    disc = strike * math.exp(-rate * T)
    if kind == "call":
        out = spot * ndtr(d1) - disc * ndtr(d2)
    else:
        out = disc * ndtr(-d2) - spot * ndtr(-d1)
    return float(out) if out.ndim == 0 else out


def _bracket(grid_pts, q, what):
    lo, hi = grid_pts[0], grid_pts[-1]
    slack = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(q < lo - slack) or np.any(q > hi + slack):
        raise DomainError(f"{what} outside grid domain [{lo}, {hi}]")
    q = np.clip(q, lo, hi)
    i = np.clip(np.searchsorted(grid_pts, q, side="right") - 1, 0, len(grid_pts) - 2)
    w = (q - grid_pts[i]) / (grid_pts[i + 1] - grid_pts[i])
    return i, w


def greeks_at(surface: PriceSurface, t, S):
    """Bilinear interpolation in (t, S) of value, delta and gamma; eta = S^2 gamma / 2."""
    t = np.asarray(t, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise DomainError("price must be positive")
    i, wt = _bracket(surface.times, t, "time")
    j, _ = _bracket(surface.log_prices, np.log(S), "price")
    # weights linear in S so affine profiles interpolate exactly
    nodes = surface.prices
    wx = np.clip((S - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)

    def interp(field):
        f00 = field[i, j]
        f01 = field[i, j + 1]
        f10 = field[i + 1, j]
        f11 = field[i + 1, j + 1]
        return (1 - wt) * ((1 - wx) * f00 + wx * f01) + wt * ((1 - wx) * f10 + wx * f11)

    value = interp(surface.values)
    delta = interp(surface.delta)
    gamma = interp(surface.gamma)
    eta = 0.5 * S * S * gamma
    out = (value, delta, gamma, eta)
    if np.ndim(value) == 0:
        return tuple(float(v) for v in out)
    return out


def surface_to_csv(surface: PriceSurface, path) -> None:
    """Rows ordered by time then space, 17 significant digits."""
    n_t, n_x = surface.values.shape
    t = np.repeat(surface.times, n_x)
    x = np.tile(surface.log_prices, n_t)
    cols = np.column_stack(
        [t, x, np.exp(x), surface.values.ravel(), surface.delta.ravel(), surface.gamma.ravel(), surface.eta.ravel()]
    )
    np.savetxt(path, cols, delimiter=",", fmt="%.17g", header="t,x,S,value,delta,gamma,eta", comments="")
