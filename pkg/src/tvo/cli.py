"""Command-line front end.

Every command writes ``<out>/<command>.json`` holding the resolved
configuration, the seed, the market digest and the results, plus any CSV
artifacts. Exit status: 0 success, 1 validation or usage error, 2 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .hjb import PdeGrid, solve_reduced_hjb
from .market import MarketData, bundled_market, build_nu, load_market
from .nn import load_checkpoint, save_checkpoint
from .pricing import TvoSpec, bs_closed_price, mc_price
from .rl import (
    DirectPolicyConfig,
    NeuralPolicy,
    PpoConfig,
    evaluate_policy,
    train_direct,
    train_ppo,
)
from .simulator import SimConfig, fixing_grid, simulate_tvs
from .strategy import (
    BangBangStrategy,
    ConstrainedStrategy,
    OptimalFreeStrategy,
    baseline,
    direction_for,
    optimal_bang_bang,
    optimal_constrained,
    optimal_free,
)

SCHEMA_VERSION = 1
OUT_ENV = "TVO_OUTPUT_DIR"
BUNDLED = ("bs_2asset", "bs_3asset", "lv_2asset")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


def _grid_spec(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like 400x400") from None


def _common(p: argparse.ArgumentParser, tvo: bool = True) -> None:
    p.add_argument("--market", default="bs_2asset",
                   help=f"market JSON path or a bundled name ({', '.join(BUNDLED)})")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./tvo-out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    if tvo:
        p.add_argument("--spot-index", type=float, default=1.0)
        p.add_argument("--strike", type=float, default=1.0)
        p.add_argument("--maturity", type=float, default=2.0)
        p.add_argument("--target-vol", type=float, default=0.05)
        p.add_argument("--payoff", choices=("call", "put"), default="call")
        p.add_argument("--fixings-per-year", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tvo", description="Target-volatility option pricing and allocation control.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("price-bs", help="closed-form price")
    _common(p)
    p.add_argument("--strategy", default="auto",
                   help="auto, S_A, S_B, S_C, bang-bang or constrained")
    p.add_argument("--constraint", choices=("free", "long-only"), default="free")

    p = sub.add_parser("price-mc", help="Monte Carlo price")
    _common(p)
    p.add_argument("--strategy", default="auto")
    p.add_argument("--constraint", choices=("free", "long-only"), default="free")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--substeps-per-year", type=int, default=100)
    p.add_argument("--cap-omega", action="store_true")
    p.add_argument("--write-paths", action="store_true", help="also write paths.csv")

    p = sub.add_parser("solve-strategy", help="optimal allocation on the fixing grid")
    _common(p)
    p.add_argument("--kind", choices=("free", "bang-bang", "constrained"), default="free")
    p.add_argument("--constraint", choices=("free", "long-only"), default="long-only")

    p = sub.add_parser("compare-baselines", help="closed-form prices of BS* and S_A, S_B, S_C")
    _common(p)

    p = sub.add_parser("hjb-check", help="finite-difference HJB value against the closed form")
    _common(p)
    p.add_argument("--grid", type=_grid_spec, default=(400, 400), help="space x time, e.g. 400x400")
    p.add_argument("--mode", choices=("monotone", "pointwise"), default="monotone")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--write-surface", action="store_true", help="also write surface.csv")

    p = sub.add_parser("train-direct", help="direct pathwise policy search")
    _common(p)
    p.add_argument("--hidden", type=_ints, default=(20, 15, 5))
    p.add_argument("--activation", choices=("tanh", "elu"), default="tanh")
    p.add_argument("--optimizer", choices=("rmsprop", "nadam"), default="rmsprop")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--batch-episodes", type=int, default=1024)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--action-mode", choices=("free", "baseline"), default="free")
    p.add_argument("--substeps", type=int, default=1, help="Euler substeps per fixing")

    p = sub.add_parser("train-ppo", help="PPO with a Gaussian policy")
    _common(p)
    p.add_argument("--hidden", type=_ints, default=(8, 8, 8, 8, 8))
    p.add_argument("--activation", choices=("tanh", "elu"), default="tanh")
    p.add_argument("--gamma", type=float, default=None, help="default 1 (terminal) or 0.98 (shaped)")
    p.add_argument("--lam", type=float, default=0.95)
    p.add_argument("--clip", type=float, default=0.2)
    p.add_argument("--value-coef", type=float, default=0.7)
    p.add_argument("--entropy-coef", type=float, default=0.0)
    p.add_argument("--learning-rate", type=float, default=3e-4)
    p.add_argument("--minibatch-episodes", type=int, default=2048)
    p.add_argument("--n-minibatches", type=int, default=4)
    p.add_argument("--epochs-per-update", type=int, default=10)
    p.add_argument("--updates", type=int, default=146)
    p.add_argument("--log-std", type=_floats, default=(-1.0, -3.0), help="start,end of the schedule")
    p.add_argument("--reward", choices=("terminal", "shaped"), default="terminal")
    p.add_argument("--action-mode", choices=("free", "baseline"), default="free")
    p.add_argument("--substeps", type=int, default=1, help="Euler substeps per fixing")

    p = sub.add_parser("evaluate", help="out-of-sample price of a trained policy checkpoint")
    _common(p, tvo=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--substeps", type=int, default=None, help="default: the training value")
    p.add_argument("--baseline", action="store_true", help="also price the closed-form baseline")
    return parser


# -- helpers -----------------------------------------------------------------

def _load_market(ref: str) -> MarketData:
    if Path(ref).is_file():
        return load_market(ref)
    if ref in BUNDLED:
        return bundled_market(ref)
    raise FileNotFoundError(f"market {ref!r} is neither a file nor a bundled market")


def _tvo(args) -> TvoSpec:
    return TvoSpec(args.spot_index, args.strike, args.maturity, args.target_vol, args.payoff)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "tvo-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args) -> dict:
    skip = {"out", "threads", "command"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in skip}


def _named_strategy(name: str, market: MarketData, tvo: TvoSpec, grid, constraint: str):
    direction = direction_for(tvo.payoff)
    if name == "auto":
        if constraint == "long-only":
            return ConstrainedStrategy(market, "long-only", direction)
        return OptimalFreeStrategy(market, direction)
    if name in ("S_A", "S_B", "S_C"):
        return baseline(name, market, grid)
    if name == "bang-bang":
        return BangBangStrategy(market)
    if name == "constrained":
        return ConstrainedStrategy(market, constraint, direction)
    raise ValueError(f"unknown strategy {name!r}")


def _substeps(per_year: int, grid) -> int:
    return max(1, math.ceil(per_year * max(np.diff(grid))))


# -- commands ------------------------------------------------------------------

def cmd_price_bs(args, market, out):
    tvo = _tvo(args)
    grid = fixing_grid(tvo.T, args.fixings_per_year, market)
    if args.strategy == "auto":
        price = bs_closed_price(market, tvo, "auto", constraint=args.constraint)
    else:
        strat = _named_strategy(args.strategy, market, tvo, grid, args.constraint)
        price = bs_closed_price(market, tvo, strat, grid=grid)
    return {"price": price, "grid": list(grid)}


def cmd_price_mc(args, market, out):
    tvo = _tvo(args)
    grid = fixing_grid(tvo.T, args.fixings_per_year, market)
    strat = _named_strategy(args.strategy, market, tvo, grid, args.constraint)
    cfg = SimConfig(args.paths, grid, _substeps(args.substeps_per_year, grid), args.seed, "price-mc",
                    cap_omega=args.cap_omega, threads=args.threads)
    paths = simulate_tvs(market, strat, tvo, cfg)
    res = mc_price(paths, tvo, market)
    result = {**res.describe(), "sim": cfg.describe()}
    if args.write_paths:
        paths.to_csv(out / "paths.csv")
    if not market.is_local_vol and args.strategy == "auto" and not args.cap_omega:
        closed = bs_closed_price(market, tvo, "auto", constraint=args.constraint)
        z = (res.price - closed) / res.std_error if res.std_error > 0 else 0.0
        result["self_check"] = {"closed_form": closed, "z": z, "pass": abs(z) <= 3.0}
    return result


def cmd_solve_strategy(args, market, out):
    tvo = _tvo(args)
    grid = fixing_grid(tvo.T, args.fixings_per_year, market)
    direction = direction_for(tvo.payoff)
    rows = []
    for t in grid[:-1]:
        # local-vol markets are solved at the forward
        mu, nu = market.mu(t), build_nu(market, t, market.forward(t) if market.is_local_vol else None)
        if args.kind == "free":
            sol = optimal_free(mu, nu, direction)
            alpha, obj = sol.alpha, sol.objective
        elif args.kind == "bang-bang":
            _, alpha = optimal_bang_bang(mu, nu @ nu.T)
            obj = float(alpha @ mu / math.sqrt(alpha @ (nu @ nu.T) @ alpha))
        else:
            sol = optimal_constrained(mu, nu, args.constraint, direction)
            alpha, obj = sol.alpha, sol.objective
        rows.append({"t": t, "alpha": [float(a) for a in alpha], "objective": float(obj)})
    with open(out / "strategy.csv", "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(f"alpha_{i + 1}" for i in range(market.n)) + ",objective\n")
        for r in rows:
            fh.write(",".join(repr(x) for x in [r["t"], *r["alpha"], r["objective"]]) + "\n")
    return {"kind": args.kind, "direction": direction, "timetable": rows}


def cmd_compare_baselines(args, market, out):
    tvo = _tvo(args)
    grid = fixing_grid(tvo.T, args.fixings_per_year, market)
    prices = {"BS*": bs_closed_price(market, tvo, "auto")}
    for name in ("S_A", "S_B", "S_C"):
        prices[name] = bs_closed_price(market, tvo, baseline(name, market, grid), grid=grid)
    with open(out / "baselines.csv", "w", encoding="utf-8") as fh:
        fh.write("strategy,price\n")
        for k, v in prices.items():
            fh.write(f"{k},{v!r}\n")
    return {"prices": prices, "grid": list(grid)}


def cmd_hjb_check(args, market, out):
    tvo = _tvo(args)
    ns, nt = args.grid
    if min(ns, nt) < 100:
        raise ValueError("hjb-check halves the grid, so both counts must be >= 100")
    closed = bs_closed_price(market, tvo, "auto")
    errors = {}
    for f in (2, 1):
        res = solve_reduced_hjb(market, tvo, PdeGrid(ns // f, nt // f), args.mode)
        errors[f"{ns // f}x{nt // f}"] = (res.value - closed) / closed
    fine = res
    coarse_err, rel = errors.values()
    factor = abs(coarse_err) / abs(rel) if rel != 0 else math.inf
    if args.write_surface:
        fine.to_csv(out / "surface.csv")
    return {"closed_form": closed, "hjb": fine.value, "relative_error": rel,
            "relative_errors": errors, "convergence_factor": factor,
            "within_tolerance": abs(rel) < args.tolerance, "converging": factor >= 3.0,
            "diagnostics": fine.diagnostics}


def _write_curve(curve, out: Path):
    curve.to_csv(out / "curve.csv")


def cmd_train_direct(args, market, out):
    tvo = _tvo(args)
    cfg = DirectPolicyConfig(args.hidden, args.activation, args.optimizer, args.learning_rate,
                             args.epochs, args.batch_episodes, args.restarts, args.action_mode,
                             args.fixings_per_year, args.substeps)
    res = train_direct(market, tvo, cfg, args.seed)
    _write_curve(res.curve, out)
    save_checkpoint(res.policy.net, out / "policy.json", _policy_extra(res.policy, res.grid, cfg.substeps,
                                                                     market, args.seed))
    return {"config": cfg.describe(), "restart_scores": res.restart_scores,
            "best_restart": res.best_restart, "final_loss": res.curve.tail_mean(cfg.select_window),
            "checkpoint": "policy.json", "curve": "curve.csv"}


def cmd_train_ppo(args, market, out):
    tvo = _tvo(args)
    gamma = args.gamma if args.gamma is not None else (0.98 if args.reward == "shaped" else 1.0)
    if len(args.log_std) != 2:
        raise ValueError("--log-std needs start,end")
    cfg = PpoConfig(args.hidden, args.activation, gamma, args.lam, args.clip, args.value_coef,
                    args.entropy_coef, args.learning_rate, args.minibatch_episodes, args.n_minibatches,
                    args.epochs_per_update, args.updates, args.log_std[0], args.log_std[1],
                    args.reward, args.action_mode, args.fixings_per_year, args.substeps)
    res = train_ppo(market, tvo, cfg, args.seed)
    _write_curve(res.curve, out)
    save_checkpoint(res.policy.net, out / "policy.json", _policy_extra(res.policy, res.grid, cfg.substeps,
                                                                     market, args.seed))
    save_checkpoint(res.value_net, out / "value.json")
    return {"config": cfg.describe(), "final_reward": res.curve.value[-1],
            "checkpoint": "policy.json", "value_checkpoint": "value.json", "curve": "curve.csv"}


def _policy_extra(policy: NeuralPolicy, grid, substeps, market, seed) -> dict:
    return {"mode": policy.mode, "tvo": policy.tvo.describe(), "grid": list(grid),
            "substeps": substeps, "market_digest": market.digest(), "train_seed": seed}


def cmd_evaluate(args, market, out):
    net, extra = load_checkpoint(args.checkpoint)
    if extra.get("market_digest") not in (None, market.digest()):
        raise ValueError("checkpoint was trained on a different market")
    tvo = TvoSpec(**extra["tvo"])
    grid = tuple(extra["grid"])
    substeps = args.substeps or extra.get("substeps", 1)
    policy = NeuralPolicy(net, market, tvo, extra.get("mode", "free"))
    res = evaluate_policy(policy, market, tvo, args.paths, args.seed, grid, substeps, args.threads)
    result = {"policy": res.describe(), "tvo": tvo.describe(), "grid": list(grid), "substeps": substeps}
    if args.baseline:
        base = evaluate_policy(OptimalFreeStrategy(market, direction_for(tvo.payoff)), market, tvo,
                               args.paths, args.seed, grid, substeps, args.threads)
        z = (res.price - base.price) / math.hypot(res.std_error, base.std_error)
        result["baseline"] = base.describe()
        result["z_vs_baseline"] = z
        result["compatible"] = abs(z) <= 2.0
    if not market.is_local_vol:
        result["closed_form"] = bs_closed_price(market, tvo, "auto")
    return result


COMMANDS = {
    "price-bs": cmd_price_bs,
    "price-mc": cmd_price_mc,
    "solve-strategy": cmd_solve_strategy,
    "compare-baselines": cmd_compare_baselines,
    "hjb-check": cmd_hjb_check,
    "train-direct": cmd_train_direct,
    "train-ppo": cmd_train_ppo,
    "evaluate": cmd_evaluate,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:      # --help
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        market = _load_market(args.market)
        out = _out_dir(args)
        result = COMMANDS[args.command](args, market, out)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": _resolved(args),
        "seed": args.seed,
        "market": {"source": args.market, "digest": market.digest(), "mode": "lv" if market.is_local_vol else "bs"},
        "result": result,
        "timing": {"seconds": time.perf_counter() - started, "threads": args.threads},
    }
    path = out / f"{args.command}.json"
    path.write_text(json.dumps(report, indent=2, default=_jsonable), encoding="utf-8")
    print(json.dumps(result, default=_jsonable)[:2000])
    return 0


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
