"""Acceptance criteria 1-12.

Each ``criterion_N`` returns (passed, detail). The pytest wrappers record the
outcome so a one-line PASS/FAIL summary per criterion is printed at the end
of the run; ``python tests/test_acceptance.py`` prints the same lines.
"""
from __future__ import annotations

import math
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

from bsbprice import (  # noqa: E402
    GridSpec,
    MarketSpec,
    MonitoringSchedule,
    RateCurve,
    VolatilityBand,
    VolPolicy,
    cooperation_check,
    gbsde_linear_price,
    parity_check,
    parse_payoff,
    quadratic_variation,
    run_delta_hedge,
    simulate_paths,
    solve_bsb,
    solve_path_dependent,
    spread,
)
from bsbprice.payoff import Aggregate, Binary, NAry, Num, Spot, Unary, to_text  # noqa: E402

CALL = "max(S - 100, 0)"
PUT = "max(100 - S, 0)"
FLY = "max(S-90,0) - 2*max(S-100,0) + max(S-110,0)"
R = 0.05


def _spec(lo, hi, r=R, T=1.0):
    return MarketSpec(100.0, VolatilityBand(lo, hi), RateCurve.flat(r), T)


def criterion_1():
    spec = _spec(0.2, 0.2)
    oracle = oracles.bs_price(100, 100, R, 0.2, 1.0)
    t0 = time.perf_counter()
    up = solve_bsb(parse_payoff(CALL), spec, GridSpec(), "upper").price
    lo = solve_bsb(parse_payoff(CALL), spec, GridSpec(), "lower").price
    elapsed = (time.perf_counter() - t0) / 2
    e_up, e_lo = abs(up / oracle - 1), abs(lo / oracle - 1)
    ok = e_up < 1e-3 and e_lo < 1e-3 and elapsed < 5.0
    return ok, f"oracle={oracle:.6f} upper={up:.6f} ({e_up:.2e}) lower={lo:.6f} ({e_lo:.2e}) solve={elapsed:.2f}s"


def criterion_2():
    spec = _spec(0.1, 0.3)
    up = solve_bsb(parse_payoff(CALL), spec, GridSpec(), "upper").price
    lo = solve_bsb(parse_payoff(CALL), spec, GridSpec(), "lower").price
    bs_hi, bs_lo = oracles.bs_price(100, 100, R, 0.3, 1), oracles.bs_price(100, 100, R, 0.1, 1)
    e_up, e_lo = abs(up / bs_hi - 1), abs(lo / bs_lo - 1)
    return e_up < 2e-3 and e_lo < 2e-3, f"upper={up:.5f} vs {bs_hi:.5f} ({e_up:.2e}); lower={lo:.5f} vs {bs_lo:.5f} ({e_lo:.2e})"


def criterion_3():
    spec = _spec(0.1, 0.3)
    fly = parse_payoff(FLY)
    g = GridSpec()
    p = [solve_bsb(fly, spec, g.refined(f), "upper").price for f in (1, 2, 4)]
    _, err = oracles.richardson(*p)
    bs_max = max(oracles.bs_butterfly(100, R, 0.1, 1), oracles.bs_butterfly(100, R, 0.3, 1))
    margin = p[0] - bs_max
    return margin > 3 * err, f"upper={p[0]:.5f} max BS={bs_max:.5f} margin={margin:.4f} grid err={err:.2e}"


def criterion_4():
    spec = _spec(0.1, 0.3)
    g = GridSpec()
    parts, ok = [], True
    for side in ("upper", "lower"):
        a = parity_check(spec, 100.0, g, side)
        b = parity_check(spec, 100.0, g.refined(), side)
        ok &= a < 1e-3 and a / b >= 1.8
        parts.append(f"{side}: {a:.3e} -> {b:.3e} (x{a / b:.2f})")
    return ok, "; ".join(parts)


def criterion_5():
    g = GridSpec(width_sigma=0.3)
    n = g.n_space
    mid = slice(n // 4, n - n // 4)
    tol = 1e-8
    worst = 0.0
    for text in (CALL, FLY):
        p = parse_payoff(text)
        up = solve_bsb(p, _spec(0.1, 0.3), g, "upper").values[:, mid]
        lo = solve_bsb(p, _spec(0.1, 0.3), g, "lower").values[:, mid]
        for s in (0.1, 0.15, 0.2, 0.25, 0.3):
            fixed = solve_bsb(p, _spec(s, s), g, "upper").values[:, mid]
            worst = max(worst, (lo - fixed).max(), (fixed - up).max())
        up_n = solve_bsb(p, _spec(0.15, 0.25), g, "upper").values[:, mid]
        lo_n = solve_bsb(p, _spec(0.15, 0.25), g, "lower").values[:, mid]
        worst = max(worst, (up_n - up).max(), (lo - lo_n).max())
    return worst <= tol, f"largest ordering/monotonicity violation {worst:.2e} (tol {tol:g})"


HEDGE_POLICIES = {
    "const 0.1": VolPolicy.constant(0.1),
    "const 0.2": VolPolicy.constant(0.2),
    "const 0.3": VolPolicy.constant(0.3),
    "random_band": VolPolicy.random_band(),
    "two_regime": VolPolicy.two_regime(0.1, 0.3, 0.5),
}


def hedge_violation(n_steps, n_paths=50, seed=2024):
    """Largest per-step and terminal violations across the policy sweep."""
    spec = _spec(0.1, 0.3)
    call = parse_payoff(CALL)
    surface = solve_bsb(call, spec, GridSpec(n_time=n_steps), "upper")
    inc_viol, term_viol, by_policy = 0.0, 0.0, {}
    for name, pol in HEDGE_POLICIES.items():
        worst = 0.0
        for path in simulate_paths(spec, pol, n_paths=n_paths, n_steps=n_steps, seed=seed):
            led = run_delta_hedge(surface, path, spec, "short_upper", clamp=True, payoff=call)
            inc_viol = max(inc_viol, -led.min_increment)
            worst = max(worst, led.terminal_shortfall)
        by_policy[name] = worst
        term_viol = max(term_viol, worst)
    return surface.price, inc_viol, term_viol, by_policy


def criterion_6():
    t0 = time.perf_counter()
    prem, inc1, term1, pol1 = hedge_violation(252)
    elapsed = time.perf_counter() - t0
    _, inc2, term2, _ = hedge_violation(504)
    eps1, eps2 = max(inc1, term1, 0.0), max(inc2, term2, 0.0)
    limit = 0.005 * prem
    ok = inc1 <= limit and eps1 < limit and eps2 <= eps1 / 2 and elapsed < 30
    worst = max(pol1, key=pol1.get)
    return ok, (
        f"premium={prem:.4f} limit={limit:.4f}; min increment viol={inc1:.1e}; "
        f"terminal shortfall 252={term1:.4f} ({worst}) 504={term2:.4f} ratio={eps1 / max(eps2, 1e-300):.2f}; "
        f"run={elapsed:.1f}s"
    )


def criterion_7():
    spec = _spec(0.1, 0.3)
    parts, ok = [], True
    for name, text in (("call", CALL), ("put", PUT), ("butterfly", FLY)):
        rep = spread(parse_payoff(text), spec, GridSpec())
        good = rep.spread <= rep.bound + 2 * rep.grid_tolerance
        ok &= good
        parts.append(f"{name}: e={rep.spread:.4f} <= {rep.bound:.3f}")
    deg = spread(parse_payoff(CALL), _spec(0.2, 0.2), GridSpec(), estimate_tolerance=False)
    ok &= deg.spread == 0.0
    parts.append(f"degenerate e={deg.spread!r}")
    return ok, "; ".join(parts)


def criterion_8():
    spec = _spec(0.1, 0.3)
    call = parse_payoff(CALL)
    v = gbsde_linear_price(call, 0.5, spec, GridSpec())
    target = solve_bsb(call, spec, GridSpec()).price + 0.5 * (1 - math.exp(-0.05)) / 0.05
    return abs(v - target) < 1e-8, f"|difference|={abs(v - target):.2e}"


def criterion_9():
    g = GridSpec()
    spec = _spec(0.2, 0.2)
    van = solve_bsb(parse_payoff(CALL), spec, g).price
    n1, _ = solve_path_dependent(parse_payoff("max(AVG - 100, 0)"), MonitoringSchedule((1.0,)), spec, g)
    e1 = abs(n1 / van - 1)
    dates = (0.25, 0.5, 0.75, 1.0)
    mc, se = oracles.asian_call_mc(100, 100, R, 0.2, dates, n_paths=200_000, seed=1)
    n4, _ = solve_path_dependent(parse_payoff("max(AVG - 100, 0)"), MonitoringSchedule(dates), spec, g)
    e4 = abs(n4 / mc - 1)
    return e1 < 1e-6 and e4 < 5e-3, f"N=1 rel diff {e1:.1e}; N=4 PDE={n4:.5f} MC={mc:.5f}+-{se:.5f} ({e4:.2e})"


def criterion_10():
    spec = _spec(0.1, 0.3)
    n, steps = 100_000, 16
    ps = simulate_paths(spec, VolPolicy.random_band(), n_paths=n, n_steps=steps, seed=99)
    dt = np.diff(ps.times)
    per_step = bool(np.all(ps.d_qv >= spec.band.var_lo * dt) and np.all(ps.d_qv <= spec.band.var_hi * dt))
    qv_all = np.array([quadratic_variation(p)[-1] for p in ps])
    final = bool(np.all(qv_all >= spec.band.var_lo * 1.0 * (1 - 1e-12)) and np.all(qv_all <= spec.band.var_hi * (1 + 1e-12)))
    again = simulate_paths(spec, VolPolicy.random_band(), n_paths=n, n_steps=steps, seed=99)
    same = np.array_equal(ps.S, again.S) and np.array_equal(ps.d_qv, again.d_qv)
    deg = _spec(0.2, 0.2)
    dp = simulate_paths(deg, VolPolicy.constant(0.2), n_paths=n, n_steps=steps, seed=7)
    disc = dp.S[:, -1] * math.exp(-R)
    z = (disc.mean() - 100.0) / (disc.std(ddof=1) / math.sqrt(n))
    ok = bool(per_step and final and same and abs(z) < 3)
    return ok, f"per-step confined={per_step} final QV confined={final} rerun identical={same} discounted mean z={z:.2f}"


def criterion_11():
    res = cooperation_check(parse_payoff(CALL), parse_payoff(PUT), _spec(0.1, 0.3), GridSpec())
    return res.holds, f"lhs={res.lhs:.6f} rhs={res.rhs:.6f}"


def _random_ast(rng: random.Random, depth=0):
    if depth > 3 or rng.random() < 0.3:
        c = rng.random()
        if c < 0.4:
            return Spot()
        if c < 0.6:
            return Aggregate(rng.choice(["AVG", "MAXF", "MINF"]))
        return Num(rng.choice([round(rng.uniform(0, 200), rng.randint(0, 4)), rng.uniform(0, 1) * 10 ** rng.randint(-8, 8)]))
    c = rng.random()
    if c < 0.5:
        return Binary(rng.choice("+-*/^"), _random_ast(rng, depth + 1), _random_ast(rng, depth + 1))
    if c < 0.75:
        return NAry(rng.choice(["max", "min"]), tuple(_random_ast(rng, depth + 1) for _ in range(rng.randint(2, 3))))
    return Unary(rng.choice(["neg", "abs", "exp", "log"]), _random_ast(rng, depth + 1))


def criterion_12():
    rng = random.Random(12)
    bad = 0
    for _ in range(1000):
        ast = _random_ast(rng)
        text = to_text(ast)
        p1 = parse_payoff(text)
        p2 = parse_payoff(str(p1))
        if p1.ast != p2.ast or str(p2) != text:
            bad += 1
    call = parse_payoff("max(S - 100, 0)").ast
    asian = parse_payoff("max(AVG - 95, 0)").ast
    fly = parse_payoff("max(S-90,0) - 2*max(S-100,0) + max(S-110,0)").ast
    c = NAry("max", (Binary("-", Spot(), Num(100.0)), Num(0.0)))
    a = NAry("max", (Binary("-", Aggregate("AVG"), Num(95.0)), Num(0.0)))

    def leg(k):
        return NAry("max", (Binary("-", Spot(), Num(k)), Num(0.0)))

    f = Binary("+", Binary("-", leg(90.0), Binary("*", Num(2.0), leg(100.0))), leg(110.0))
    examples = call == c and asian == a and fly == f
    return bad == 0 and examples, f"round-trip failures {bad}/1000; grammar examples match={examples}"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 13)}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_acceptance_criterion(number, acceptance_log):
    passed, detail = CRITERIA[number]()
    acceptance_log[number] = (passed, detail)
    assert passed, detail


def main():
    for i, fn in CRITERIA.items():
        passed, detail = fn()
        print(f"criterion {i:2d}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)


if __name__ == "__main__":
    main()
