"""Batch command line: ``bsbprice <command> --config run.json --out dir [--seed N]``.

Exit codes: 0 success, 1 invalid configuration (nothing written),
2 solver failure (manifest.json still written with the error).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import platform
import sys
import time
from pathlib import Path
from typing import Any, Dict, List

import jsonschema
import numpy as np
import scipy

from . import __version__
from .bsb import GridSpec, solve_bsb, solve_bsb_rate_uncertain, surface_to_csv
from .errors import DomainError, PayoffSyntaxError, UnsupportedPayoffError
from .hedging import ledger_to_csv, run_delta_hedge
from .market import (
    MarketSpec,
    MeanBand,
    RateCurve,
    VolatilityBand,
    log_return_mean_band,
    robust_confidence_interval,
)
from .metrics import parity_check, spread
from .pathdep import _classify, solve_path_dependent
from .paths import DriftPolicy, VolPolicy, paths_to_csv, simulate_paths
from .payoff import MonitoringSchedule, parse_payoff

SCHEMA_VERSION = 1
COMMANDS = ("price", "price-path-dep", "hedge", "spread", "parity", "simulate", "band-stats")

# every default in one place; resolved values are echoed in the manifest
DEFAULTS: Dict[str, Any] = {
    "grid": {
        "n_space": 400,
        "n_time": 400,
        "domain_width": 6.0,
        "scheme": "implicit_policy_iteration",
        "tol": 1e-10,
        "max_iter": 50,
    },
    "price": {"side": "both", "rate_uncertain": False},
    "path_dep": {"side": "upper", "n_stat": None},
    "hedge": {
        "side": "short_upper",
        "policy": {"kind": "constant", "sigma": None},
        "drift": {"kind": "risk_neutral_zero"},
        "n_paths": 10,
        "n_steps": 252,
        "seed": 0,
        "clamp": True,
    },
    "simulate": {
        "policy": {"kind": "random_band"},
        "drift": {"kind": "risk_neutral_zero"},
        "n_paths": 100,
        "n_steps": 252,
        "seed": 0,
    },
    "parity": {"strike": None, "side": "upper"},
    "spread": {"estimate_tolerance": True},
    "band_stats": {"mu": 0.0},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_POLICY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "random_band", "bang_bang", "two_regime"]},
        "sigma": _pos,
        "sigma_a": _pos,
        "sigma_b": _pos,
        "switch_time": _num,
    },
}
_DRIFT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {"kind": {"enum": ["risk_neutral_zero", "constant", "coupled"]}, "mu": _num, "gamma": _num},
}


def _block(props: Dict[str, Any]) -> Dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": props}


CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "market"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "market": {
            "type": "object",
            "additionalProperties": False,
            "required": ["spot", "sigma_lo", "sigma_hi", "maturity"],
            "properties": {
                "spot": _pos,
                "sigma_lo": _pos,
                "sigma_hi": _pos,
                "maturity": _pos,
                "rate": {"type": "number", "minimum": 0},
                "rate_segments": {"type": "array", "minItems": 1, "items": _pair},
                "rate_band": _pair,
                "mean_band": _pair,
            },
        },
        "payoff": {"type": "string", "minLength": 1},
        "schedule": {"type": "array", "minItems": 1, "items": _pos},
        "grid": _block(
            {
                "n_space": {"type": "integer", "minimum": 16},
                "n_time": {"type": "integer", "minimum": 8},
                "domain_width": _pos,
                "scheme": {"enum": ["implicit_policy_iteration", "explicit"]},
                "tol": _pos,
                "max_iter": _count,
            }
        ),
        "price": _block({"side": {"enum": ["upper", "lower", "both"]}, "rate_uncertain": {"type": "boolean"}}),
        "path_dep": _block({"side": {"enum": ["upper", "lower", "both"]}, "n_stat": {"type": ["integer", "null"], "minimum": 2}}),
        "hedge": _block(
            {
                "side": {"enum": ["short_upper", "long_lower"]},
                "policy": _POLICY,
                "drift": _DRIFT,
                "n_paths": _count,
                "n_steps": _count,
                "seed": {"type": "integer", "minimum": 0},
                "clamp": {"type": "boolean"},
            }
        ),
        "simulate": _block(
            {
                "policy": _POLICY,
                "drift": _DRIFT,
                "n_paths": _count,
                "n_steps": _count,
                "seed": {"type": "integer", "minimum": 0},
            }
        ),
        "parity": _block({"strike": _pos, "side": {"enum": ["upper", "lower"]}}),
        "spread": _block({"estimate_tolerance": {"type": "boolean"}}),
        "band_stats": _block({"mu": _num}),
    },
}

NEEDS_PAYOFF = {"price", "price-path-dep", "hedge", "spread"}


class ConfigError(Exception):
    pass


def _merge(defaults: Dict[str, Any], given: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("policy", "drift"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _market(m: Dict[str, Any]) -> MarketSpec:
    if "rate" in m and "rate_segments" in m:
        raise ConfigError("give either market.rate or market.rate_segments, not both")
    segs = m.get("rate_segments") or [[0.0, m.get("rate", 0.0)]]
    band = VolatilityBand(m["sigma_lo"], m["sigma_hi"])
    rates = RateCurve(tuple(tuple(s) for s in segs), rate_band=m.get("rate_band"))
    mb = MeanBand(*m["mean_band"]) if "mean_band" in m else None
    return MarketSpec(m["spot"], band, rates, m["maturity"], mb)


def _vol_policy(p: Dict[str, Any], spec: MarketSpec, surface=None) -> VolPolicy:
    kind = p["kind"]
    if kind == "constant":
        if p.get("sigma") is None:
            raise ConfigError("constant policy needs sigma")
        return VolPolicy.constant(p["sigma"])
    if kind == "random_band":
        return VolPolicy.random_band()
    if kind == "two_regime":
        missing = [k for k in ("sigma_a", "sigma_b", "switch_time") if k not in p]
        if missing:
            raise ConfigError(f"two_regime policy needs {missing}")
        return VolPolicy.two_regime(p["sigma_a"], p["sigma_b"], p["switch_time"])
    if surface is None:
        raise ConfigError("bang_bang policy needs a payoff to solve for the driving surface")
    return VolPolicy.bang_bang(surface)


def _drift(d: Dict[str, Any]) -> DriftPolicy:
    if d["kind"] == "constant":
        if "mu" not in d:
            raise ConfigError("constant drift needs mu")
        return DriftPolicy.constant(d["mu"])
    if d["kind"] == "coupled":
        if "gamma" not in d:
            raise ConfigError("coupled drift needs gamma")
        return DriftPolicy.coupled(d["gamma"])
    return DriftPolicy()


def load_config(path, command: str, seed=None) -> Dict[str, Any]:
    """Read, schema-check and resolve a run configuration.

    Returns a dict with the resolved config and the constructed domain
    objects. Raises ConfigError (or a domain error) on any invalid input.
    """
    try:
        raw_text = Path(path).read_text()
        raw = json.loads(raw_text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        for block in ("hedge", "simulate"):
            cfg[block]["seed"] = seed
    g = cfg["grid"]
    grid = GridSpec(g["n_space"], g["n_time"], g["domain_width"], g["scheme"], tol=g["tol"], max_iter=g["max_iter"])
    spec = _market(cfg["market"])
    payoff = None
    if command in NEEDS_PAYOFF or (command == "simulate" and cfg["simulate"]["policy"]["kind"] == "bang_bang"):
        if "payoff" not in cfg:
            raise ConfigError(f"command {command} needs a payoff")
        payoff = parse_payoff(cfg["payoff"])
    schedule = None
    if command == "price-path-dep":
        schedule = MonitoringSchedule(tuple(cfg.get("schedule", [spec.maturity])))
        if abs(schedule.maturity - spec.maturity) > 1e-12:
            raise ConfigError("last schedule date must equal market.maturity")
        _classify(payoff, len(schedule))
    elif payoff is not None and not payoff.is_state_dependent:
        raise ConfigError(f"command {command} needs a payoff of S only; use price-path-dep")
    if command == "parity" and cfg["parity"]["strike"] is None:
        raise ConfigError("parity needs parity.strike")
    for block in ("hedge", "simulate"):
        if command == block:
            pol = cfg[block]["policy"]
            if block == "hedge" and pol["kind"] == "constant" and pol.get("sigma") is None:
                pol["sigma"] = spec.band.sigma_hi
            if pol["kind"] != "bang_bang":
                _vol_policy(pol, spec).validate(spec)
            _drift(cfg[block]["drift"]).validate(spec)
    return {
        "config": cfg,
        "raw_text": raw_text,
        "grid": grid,
        "spec": spec,
        "payoff": payoff,
        "schedule": schedule,
    }


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return repr(v)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _run_command(command: str, ctx: Dict[str, Any], out: Path) -> Dict[str, Any]:
    cfg, grid, spec, payoff = ctx["config"], ctx["grid"], ctx["spec"], ctx["payoff"]
    written: List[str] = []
    summary: Dict[str, Any] = {}

    if command == "price":
        side = cfg["price"]["side"]
        solver = solve_bsb_rate_uncertain if cfg["price"]["rate_uncertain"] else solve_bsb
        sides = ["upper", "lower"] if side == "both" else [side]
        surfaces = {s: solver(payoff, spec, grid, s) for s in sides}
        result = {"payoff": str(payoff), "spot": spec.spot, "surface_side": sides[0]}
        for s, surf in surfaces.items():
            result[s] = surf.price
        if side != "both":
            result["value"] = surfaces[side].price
        _write_json(out / "price.json", result)
        surface_to_csv(surfaces[sides[0]], out / "surface.csv")
        written += ["price.json", "surface.csv"]
        summary = result

    elif command == "price-path-dep":
        side = cfg["path_dep"]["side"]
        sides = ["upper", "lower"] if side == "both" else [side]
        result = {"payoff": str(payoff), "spot": spec.spot, "schedule": list(ctx["schedule"].dates)}
        for s in sides:
            result[s], _ = solve_path_dependent(payoff, ctx["schedule"], spec, grid, s, n_stat=cfg["path_dep"]["n_stat"])
        if side != "both":
            result["value"] = result[side]
        _write_json(out / "price.json", result)
        written.append("price.json")
        summary = result

    elif command == "hedge":
        h = cfg["hedge"]
        surf_side = "upper" if h["side"] == "short_upper" else "lower"
        hgrid = GridSpec(grid.n_space, h["n_steps"], grid.domain_width, grid.scheme, tol=grid.tol, max_iter=grid.max_iter)
        surface = solve_bsb(payoff, spec, hgrid, surf_side)
        policy = _vol_policy(h["policy"], spec, surface)
        paths = simulate_paths(spec, policy, _drift(h["drift"]), h["n_paths"], h["n_steps"], h["seed"])
        rows = []
        for p in paths:
            led = run_delta_hedge(surface, p, spec, h["side"], clamp=h["clamp"], payoff=payoff)
            ledger_to_csv(led, out / f"ledger_{led.path_id}.csv")
            written.append(f"ledger_{led.path_id}.csv")
            rows.append(
                {
                    "path_id": led.path_id,
                    "K_T": float(led.K_cumulative[-1]),
                    "min_increment": led.min_increment,
                    "terminal_shortfall": led.terminal_shortfall,
                    "clamped": led.clamped,
                }
            )
        summary = {
            "premium": surface.price,
            "max_terminal_shortfall": max(r["terminal_shortfall"] for r in rows),
            "min_increment": min(r["min_increment"] for r in rows),
            "paths": rows,
        }

    elif command == "spread":
        rep = spread(payoff, spec, grid, estimate_tolerance=cfg["spread"]["estimate_tolerance"])
        summary = rep.to_json()
        _write_json(out / "spread.json", summary)
        written.append("spread.json")

    elif command == "parity":
        p = cfg["parity"]
        res = parity_check(spec, p["strike"], grid, p["side"])
        summary = {"residual": res, "strike": p["strike"], "side": p["side"]}
        _write_json(out / "parity.json", summary)
        written.append("parity.json")

    elif command == "simulate":
        s = cfg["simulate"]
        surface = None
        if s["policy"]["kind"] == "bang_bang":
            surface = solve_bsb(payoff, spec, GridSpec(grid.n_space, s["n_steps"], grid.domain_width), "upper")
        paths = simulate_paths(spec, _vol_policy(s["policy"], spec, surface), _drift(s["drift"]), s["n_paths"], s["n_steps"], s["seed"])
        paths_to_csv(paths, out / "paths.csv")
        written.append("paths.csv")
        summary = {"n_paths": len(paths), "n_steps": s["n_steps"]}

    elif command == "band-stats":
        mu = cfg["band_stats"]["mu"]
        lo, hi = log_return_mean_band(mu, spec.band)
        ci = robust_confidence_interval(spec)
        summary = {
            "mu": mu,
            "mean_band": [lo, hi],
            "confidence_interval": [ci.ln_lo, ci.ln_hi],
            "coverage_guaranteed": ci.coverage_guaranteed,
        }
        _write_json(out / "band_stats.json", summary)
        written.append("band_stats.json")

    return {"outputs": written, "summary": summary}


def _seed_of(command, cfg):
    if command in ("hedge", "simulate"):
        return cfg[command]["seed"]
    return None


def run(command: str, config_path, out_dir, seed=None) -> int:
    if command not in COMMANDS:
        print(f"error: unknown command {command!r}", file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        ctx = load_config(config_path, command, seed)
    except (ConfigError, DomainError, PayoffSyntaxError, UnsupportedPayoffError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "config_sha256": hashlib.sha256(ctx["raw_text"].encode()).hexdigest(),
        "versions": {
            "bsbprice": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": _seed_of(command, ctx["config"]),
        "resolved": ctx["config"],
    }
    code = 0
    try:
        res = _run_command(command, ctx, out)
        manifest.update(status="ok", outputs=res["outputs"], summary=res["summary"])
    except Exception as exc:  # solver-side failure: still leave a manifest
        diag = getattr(exc, "diagnostics", None)
        manifest.update(status="error", error_type=type(exc).__name__, error=str(exc), diagnostics=diag)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 2
    manifest["wall_time_s"] = time.perf_counter() - t0
    _write_json(out / "manifest.json", manifest)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsbprice", description="Robust option pricing under volatility bands.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
