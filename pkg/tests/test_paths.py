import math

import numpy as np
import pytest

from bsbprice import (
    DomainError,
    DriftPolicy,
    GridSpec,
    MarketSpec,
    MeanBand,
    RateCurve,
    VolatilityBand,
    VolPolicy,
    parse_payoff,
    paths_to_csv,
    quadratic_variation,
    simulate_paths,
    solve_bsb,
)


def spec(lo, hi, r=0.05, mean_band=None):
    return MarketSpec(100.0, VolatilityBand(lo, hi), RateCurve.flat(r), 1.0, mean_band)


def test_degenerate_variance_constant():
    ps = simulate_paths(spec(0.2, 0.2), VolPolicy.constant(0.2), n_paths=20, n_steps=50, seed=1)
    assert np.all(ps.d_qv / np.diff(ps.times) == pytest.approx(0.04, rel=1e-14))


def test_qv_examples():
    p = simulate_paths(spec(0.1, 0.4), VolPolicy.constant(0.2), n_steps=252, seed=3)[0]
    assert quadratic_variation(p)[-1] == pytest.approx(0.04, rel=1e-12)
    assert quadratic_variation(p)[0] == 0.0
    p = simulate_paths(spec(0.1, 0.4), VolPolicy.two_regime(0.2, 0.4, 0.5), n_steps=252, seed=3)[0]
    assert quadratic_variation(p)[-1] == pytest.approx(0.10, rel=1e-12)
    p = simulate_paths(spec(0.1, 0.4), VolPolicy.two_regime(0.2, 0.4, 0.5), n_steps=3, seed=3)[0]
    assert quadratic_variation(p)[-1] == pytest.approx(0.10, rel=1e-12)


def test_random_band_confined():
    s = spec(0.1, 0.3)
    ps = simulate_paths(s, VolPolicy.random_band(), n_paths=2000, n_steps=30, seed=5)
    dt = np.diff(ps.times)
    assert np.all(ps.d_qv >= s.band.var_lo * dt) and np.all(ps.d_qv <= s.band.var_hi * dt)
    assert np.all(ps.S > 0)


def test_martingale_property():
    ps = simulate_paths(spec(0.2, 0.2), VolPolicy.constant(0.2), n_paths=100_000, n_steps=4, seed=17)
    disc = ps.S[:, -1] * math.exp(-0.05)
    assert abs(disc.mean() - 100.0) < 3 * disc.std(ddof=1) / math.sqrt(len(disc))


def test_lognormal_moments():
    sigma, n = 0.2, 100_000
    ps = simulate_paths(spec(sigma, sigma), VolPolicy.constant(sigma), n_paths=n, n_steps=8, seed=23)
    x = np.log(ps.S[:, -1])
    mean, var = math.log(100) + 0.05 - 0.5 * sigma**2, sigma**2
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
    # standard error of the sample variance of a normal law
    assert abs(x.var(ddof=1) - var) < 4 * var * math.sqrt(2 / (n - 1))


def test_reproducible_and_order_independent():
    s = spec(0.1, 0.3)
    a = simulate_paths(s, VolPolicy.random_band(), n_paths=10, n_steps=20, seed=42)
    b = simulate_paths(s, VolPolicy.random_band(), n_paths=10, n_steps=20, seed=42)
    c = simulate_paths(s, VolPolicy.random_band(), n_paths=4, n_steps=20, seed=42, first_path=6)
    assert np.array_equal(a.S, b.S) and np.array_equal(a.d_qv, b.d_qv)
    assert np.array_equal(a.S[6:], c.S)
    d = simulate_paths(s, VolPolicy.random_band(), n_paths=10, n_steps=20, seed=43)
    assert not np.array_equal(a.S, d.S)


def test_coupled_drift_at_floor():
    s = spec(0.1, 0.3, mean_band=MeanBand(0.02, 0.2))
    p = simulate_paths(s, VolPolicy.constant(0.1), DriftPolicy.coupled(1.0), n_steps=50, seed=2)[0]
    assert np.allclose(p.beta_increments / p.dt, 0.02 - 0.05, rtol=0, atol=1e-14)
    top = simulate_paths(s, VolPolicy.constant(0.3), DriftPolicy.coupled(1.0), n_steps=50, seed=2)[0]
    assert np.allclose(top.beta_increments / top.dt, 0.02 + 0.5 * (0.09 - 0.01) - 0.05, atol=1e-14)


def test_drift_band_confinement():
    s = spec(0.1, 0.3, mean_band=MeanBand(0.02, 0.2))
    ps = simulate_paths(s, VolPolicy.random_band(), DriftPolicy.coupled(2.0), n_paths=200, n_steps=20, seed=9)
    b = ps.beta / np.diff(ps.times)
    assert np.all(b >= 0.02 - 0.05 - 1e-12) and np.all(b <= 0.2 - 0.05 + 1e-12)
    with pytest.raises(DomainError):
        simulate_paths(s, VolPolicy.random_band(), DriftPolicy.coupled(10.0))
    with pytest.raises(DomainError):
        simulate_paths(s, VolPolicy.random_band(), DriftPolicy.constant(0.5))
    with pytest.raises(DomainError):
        simulate_paths(spec(0.1, 0.3), VolPolicy.random_band(), DriftPolicy.coupled(1.0))


def test_policy_validation():
    with pytest.raises(DomainError):
        simulate_paths(spec(0.1, 0.3), VolPolicy.constant(0.4))
    with pytest.raises(DomainError):
        simulate_paths(spec(0.1, 0.3), VolPolicy.two_regime(0.1, 0.5, 0.5))
    with pytest.raises(DomainError):
        simulate_paths(spec(0.1, 0.3), VolPolicy.random_band(), n_paths=0)


def test_bang_bang_policy():
    s = spec(0.1, 0.3)
    surf = solve_bsb(parse_payoff("max(S-90,0) - 2*max(S-100,0) + max(S-110,0)"), s, GridSpec(n_space=200, n_time=50))
    ps = simulate_paths(s, VolPolicy.bang_bang(surf), n_paths=50, n_steps=50, seed=4)
    v = ps.d_qv / np.diff(ps.times)
    assert np.all(np.isclose(v, 0.01) | np.isclose(v, 0.09))
    assert np.any(np.isclose(v, 0.01)) and np.any(np.isclose(v, 0.09))
    convex = solve_bsb(parse_payoff("max(S-100,0)"), s, GridSpec(n_space=200, n_time=50))
    ps = simulate_paths(s, VolPolicy.bang_bang(convex), n_paths=20, n_steps=50, seed=4)
    assert np.allclose(ps.d_qv / np.diff(ps.times), 0.09)


def test_paths_csv(tmp_path):
    ps = simulate_paths(spec(0.1, 0.3), VolPolicy.random_band(), n_paths=3, n_steps=5, seed=1)
    path = tmp_path / "paths.csv"
    paths_to_csv(ps, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "path_id,step,t,S,sigma2_dt,beta_dt"
    assert len(lines) == 1 + 3 * 6
    assert lines[1].startswith("0,0,0,100,0,0")
