"""Discretely monitored payoffs via a backward chain of BSB solves.

The state is augmented with one running statistic of the fixings (average,
maximum or minimum). Between monitoring dates the statistic is frozen and
every stat slice is an independent BSB problem; at each date the surface
jumps by re-reading the later solution at the updated statistic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .bsb import GridSpec, _setup, _solve
from .errors import DomainError, UnsupportedPayoffError
from .market import MarketSpec
from .payoff import MonitoringSchedule, Payoff

STAT_OF_AGGREGATE = {"AVG": "running_avg", "MAXF": "running_max", "MINF": "running_min"}


@dataclass(frozen=True)
class AugmentedSurface:
    stat_kind: Optional[str]
    stat_nodes: np.ndarray
    times: np.ndarray
    log_prices: np.ndarray
    # values[time, stat, x]; stat holds the statistic of fixings 1..segment-1
    values: np.ndarray
    side: str
    segment: int


def update_stat(kind: Optional[str], a, S, k: int):
    """Statistic after the k-th fixing S, given ``a`` over the first k-1 fixings."""
    if kind is None:
        return np.broadcast_to(a, np.broadcast(a, S).shape)
    if kind == "running_avg":
        return ((k - 1) * a + S) / k
    if kind == "running_max":
        return np.maximum(a, S) if k > 1 else np.broadcast_to(S, np.broadcast(a, S).shape)
    if kind == "running_min":
        return np.minimum(a, S) if k > 1 else np.broadcast_to(S, np.broadcast(a, S).shape)
    raise DomainError(f"unknown statistic {kind!r}")


def _classify(payoff: Payoff, n_dates: int) -> Optional[str]:
    if len(payoff.aggregates) > 1:
        raise UnsupportedPayoffError(
            f"payoff combines {sorted(payoff.aggregates)}; only one running statistic is supported"
        )
    extra = payoff.fixing_indices - {n_dates}
    if extra:
        raise UnsupportedPayoffError(
            f"fixings {sorted(extra)} are referenced individually; only the terminal fixing S[{n_dates}] "
            "or a single AVG/MAXF/MINF statistic is supported"
        )
    if payoff.n_fixings > n_dates:
        raise DomainError(f"payoff references S[{payoff.n_fixings}] but the schedule has {n_dates} dates")
    if not payoff.aggregates:
        return None
    return STAT_OF_AGGREGATE[next(iter(payoff.aggregates))]


def _interp_stat(log_nodes: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Linear interpolation in ln(stat) column by column: values (n_a, n_x), query (m, n_x)."""
    n_a = len(log_nodes)
    if n_a == 1:
        return np.broadcast_to(values[0], query.shape).copy()
    du = log_nodes[1] - log_nodes[0]
    u = (np.log(query) - log_nodes[0]) / du
    u = np.clip(u, 0.0, n_a - 1)
    i = np.minimum(np.floor(u).astype(int), n_a - 2)
    w = u - i
    cols = np.broadcast_to(np.arange(values.shape[1]), query.shape)
    return (1 - w) * values[i, cols] + w * values[i + 1, cols]


def solve_path_dependent(
    payoff: Payoff,
    schedule: MonitoringSchedule,
    spec: MarketSpec,
    grid: GridSpec = GridSpec(),
    side: str = "upper",
    n_stat: Optional[int] = None,
    store_all_times: bool = False,
) -> Tuple[float, List[AugmentedSurface]]:
    """Time-0 robust price of a discretely monitored payoff.

    Returns the price at the spot and one surface per monitoring segment
    (ordered from the first segment to the last). Unless ``store_all_times``
    is set, each surface keeps only its two end slices.
    """
    if not math.isclose(schedule.maturity, spec.maturity, rel_tol=0, abs_tol=1e-12):
        raise DomainError("last monitoring date must equal the maturity")
    N = len(schedule)
    kind = _classify(payoff, N)
    x, _ = _setup(spec, grid)
    S = np.exp(x)
    if kind is None:
        log_nodes = np.array([x[grid.n_space // 2]])
    else:
        m = n_stat or max(2, grid.n_space // 2)
        log_nodes = np.linspace(x[0], x[-1], m)
    a = np.exp(log_nodes)[:, None]

    final_stat = update_stat(kind, a, S[None, :], N)
    fixings = np.full(final_stat.shape + (max(payoff.n_fixings, 1),), np.nan)
    fixings[..., -1] = S[None, :]
    aggs = {agg: final_stat for agg in payoff.aggregates}
    V = np.broadcast_to(
        payoff.evaluate(np.broadcast_to(S, final_stat.shape), fixings if payoff.n_fixings else None, aggs),
        final_stat.shape,
    ).astype(float)

    dates = (0.0,) + schedule.dates
    surfaces: List[AugmentedSurface] = []
    for k in range(N, 0, -1):
        t0, t1 = dates[k - 1], dates[k]
        n_k = max(1, int(round(grid.n_time * (t1 - t0) / spec.maturity)))
        times = np.linspace(t0, t1, n_k + 1)
        if store_all_times:
            stack, _ = _solve(V, spec, grid, side, S, times, store=True)
            stored_t, stored_v = times, stack
        else:
            start, _ = _solve(V, spec, grid, side, S, times, store=False)
            stored_t, stored_v = np.array([t0, t1]), np.stack([start, V])
        surfaces.append(AugmentedSurface(kind, np.exp(log_nodes), stored_t, x, stored_v, side, k))
        V = stored_v[0]
        if k > 1:
            # fixing k-1 at t0: the earlier statistic a' jumps to update(a', S)
            V = _interp_stat(log_nodes, V, update_stat(kind, a, S[None, :], k - 1))
    surfaces.reverse()
    return float(V[0, grid.n_space // 2]), surfaces


def tensor_to_csv(surfaces: List[AugmentedSurface], path) -> None:
    rows = []
    for surf in surfaces:
        n_t, n_a, n_x = surf.values.shape
        t = np.repeat(surf.times, n_a * n_x)
        a = np.tile(np.repeat(surf.stat_nodes, n_x), n_t)
        x = np.tile(surf.log_prices, n_t * n_a)
        rows.append(np.column_stack([t, x, np.exp(x), a, surf.values.ravel()]))
    np.savetxt(path, np.vstack(rows), delimiter=",", fmt="%.17g", header="t,x,S,stat,value", comments="")
