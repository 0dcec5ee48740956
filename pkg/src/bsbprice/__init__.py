"""Robust option prices, hedges and spreads when volatility is only known to lie in a band."""

__version__ = "0.1.0"

from .bsb import (
    GridSpec,
    PriceSurface,
    black_scholes_closed_form,
    greeks_at,
    solve_bsb,
    solve_bsb_rate_uncertain,
    surface_to_csv,
)
from .errors import (
    DomainError,
    PayoffEvaluationError,
    PayoffSyntaxError,
    SolverError,
    UnsupportedPayoffError,
)
from .hedging import HedgeLedger, ledger_to_csv, pnl_increment, run_delta_hedge
from .market import (
    MarketSpec,
    MeanBand,
    RateCurve,
    VolatilityBand,
    discount_factor,
    g_function,
    log_return_mean_band,
    robust_confidence_interval,
)
from .metrics import SpreadReport, cooperation_check, gbsde_linear_price, parity_check, spread
from .pathdep import AugmentedSurface, solve_path_dependent, tensor_to_csv, update_stat
from .paths import (
    DriftPolicy,
    PathSet,
    SimulatedPath,
    VolPolicy,
    paths_to_csv,
    quadratic_variation,
    simulate_paths,
)
from .payoff import MonitoringSchedule, Payoff, eval_payoff, parse_payoff
