"""Command line entry point: ``gbwm <command> [options]``.

Every output file gets a ``<name>.meta.json`` sidecar holding the resolved
configuration, the seed and a digest of the input data. Failures exit with
status 1 and a single ``error: <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dp, evaluation as ev
from .config import CONFIG_ENV_VAR, RunConfig, load_config
from .market_data import ReturnSeries, load_returns, save_returns, split_train_test
from .ppo import ActorCritic, RLPolicy, config_dict, export_policy_grid, train, write_curve, write_policy_grid
from .trajectories import estimate_moments, simulated_batch

log = logging.getLogger("gbwm")


# -- helpers ----------------------------------------------------------------


def _load_series(cfg: RunConfig) -> tuple[ReturnSeries, ReturnSeries, ReturnSeries]:
    d = cfg.data
    full = load_returns(d.path, date_col=d.date_col, bond_col=d.bond_col, stock_col=d.stock_col)
    train_part, test_part = split_train_test(full, d.split)
    return full, train_part, test_part


def _write_meta(out: Path, cfg: RunConfig, command: str, seed, **extra) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        **extra,
    }
    Path(f"{out}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _prepare(out) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _benchmark_params(cfg: RunConfig, train_part: ReturnSeries) -> tuple[float, float, dict]:
    """Merton gamma and VB budget: configured values, else the training-sweep argmax."""
    b = cfg.benchmarks
    chosen = {"gamma": b.gamma, "budget": b.budget}
    sweeps = {}
    need = [k for k, v in (("mc", b.gamma), ("vb", b.budget)) if v is None]
    if need:
        trajs = simulated_batch(train_part.returns, cfg.generator.train_windows, cfg.env.horizon, b.sweep_count, b.sweep_seed)
        ctx = ev.strategy_context(train_part, cfg.env)
        for family in need:
            grid = ev.parse_grid(b.gamma_grid if family == "mc" else b.budget_grid)
            res = ev.sweep_parameter(family, grid, trajs, ctx, cfg.env)
            chosen["gamma" if family == "mc" else "budget"] = res.best
            sweeps[family] = res.curve
    return chosen["gamma"], chosen["budget"], sweeps


def _load_rl(path) -> ActorCritic | None:
    p = Path(path)
    return ActorCritic.load(p) if p.is_file() else None


def _policy_from_spec(spec: str, cfg: RunConfig, train_part: ReturnSeries):
    """``dg``, ``mc[:gamma]``, ``vb[:budget]``, ``dp[:table.csv]`` or ``rl[:checkpoint]``."""
    name, _, arg = spec.partition(":")
    ctx = ev.strategy_context(train_part, cfg.env)
    if name == "dg":
        return ev.GlidePathPolicy(), {}
    if name in ("mc", "vb"):
        if arg:
            value = float(arg)
        else:
            gamma, budget, _ = _benchmark_params(cfg, train_part)
            value = gamma if name == "mc" else budget
        return ev.make_policy(name, ctx, value), {"parameter": value}
    if name == "dp":
        if arg:
            table = dp.PolicyTable.from_csv(arg, cfg.env)
        else:
            table = dp.solve_from_moments(estimate_moments(train_part), cfg.env, cfg.dp.nodes, cfg.dp.alphas)
        return dp.DPPolicy(table), {"root_value": table.root_value()}
    if name == "rl":
        path = arg or cfg.eval.checkpoint
        net = _load_rl(path)
        if net is None:
            raise FileNotFoundError(f"missing RL checkpoint: {path}")
        return RLPolicy(net), {"checkpoint": str(path)}
    raise ValueError(f"unknown policy spec {spec!r}")


# -- commands ---------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig) -> None:
    full, train_part, test_part = _load_series(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train_part), ("test", test_part)):
        save_returns(part, out / f"{name}.csv")
        _write_meta(
            out / f"{name}.csv", cfg, "ingest", None,
            months=[list(part.first_month), list(part.last_month)], rows=len(part),
            digest=ev.series_digest(part),
        )
    print(f"train {len(train_part)} months, test {len(test_part)} months -> {out}")


def cmd_simulate(args, cfg: RunConfig) -> None:
    full, train_part, test_part = _load_series(cfg)
    series = {"train": train_part, "test": test_part, "all": full}[args.part]
    protocol = ev.EvalProtocol(args.kind, tuple(args.sizes), args.count, args.seed, cfg.env.horizon)
    trajs = protocol.trajectories(series)
    out = _prepare(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "step", "bond_return", "stock_return"])
        for i, path in enumerate(trajs):
            for t, (rb, rs) in enumerate(path):
                w.writerow([i, t, repr(float(rb)), repr(float(rs))])
    _write_meta(out, cfg, "simulate", args.seed, protocol=protocol.label, part=args.part,
                count=len(trajs), data_digest=ev.series_digest(series))
    print(f"wrote {len(trajs)} trajectories to {out}")


def cmd_dp_solve(args, cfg: RunConfig) -> None:
    _, train_part, _ = _load_series(cfg)
    table = dp.solve_from_moments(estimate_moments(train_part), cfg.env, cfg.dp.nodes, cfg.dp.alphas)
    out = _prepare(args.out)
    table.to_csv(out)
    _write_meta(out, cfg, "dp-solve", None, root_value=table.root_value(), data_digest=ev.series_digest(train_part))
    print(f"root value {table.root_value():.6f} -> {out}")


def cmd_train(args, cfg: RunConfig) -> None:
    _, train_part, _ = _load_series(cfg)
    returns = train_part.returns
    windows, horizon, gseed = cfg.generator.train_windows, cfg.env.horizon, cfg.generator.seed

    def generator(count, first):
        return simulated_batch(returns, windows, horizon, count, gseed, offset=first)

    def progress(row):
        log.info("episode %d  eval success %.4f", row["episode"], row["eval_success_rate"])

    out = _prepare(args.out)
    dump = Path(f"{out}.nan.json")
    result = train(cfg.ppo, generator, cfg.env, progress=progress, nan_dump=dump)
    meta = {"best_episode": result.best_episode, "best_eval_success": result.best_success, "ppo": config_dict(cfg.ppo)}
    result.policy.save(out, meta)
    curve = Path(args.curve) if args.curve else out.with_suffix(".curve.csv")
    write_curve(result.curve, curve)
    _write_meta(out, cfg, "train", cfg.ppo.seed, curve=str(curve), data_digest=ev.series_digest(train_part), **meta)
    _write_meta(curve, cfg, "train", cfg.ppo.seed, checkpoint=str(out))
    print(f"best held-out success {result.best_success:.4f} at episode {result.best_episode} -> {out}")


def cmd_evaluate(args, cfg: RunConfig) -> None:
    _, train_part, test_part = _load_series(cfg)
    series = {"train": train_part, "test": test_part}[args.part]
    policy, info = _policy_from_spec(args.policy, cfg, train_part)
    protocol = ev.parse_protocol(args.protocol, args.count, args.seed, cfg.env.horizon)
    row = ev.run_protocol(policy, protocol, series, cfg.env, args.workers, name=args.policy.partition(":")[0])
    report = ev.EvalReport([row])
    out = _prepare(args.out)
    report.to_csv(out)
    _write_meta(out, cfg, "evaluate", args.seed, policy=args.policy, protocol=protocol.label,
                part=args.part, data_digest=ev.series_digest(series), **info)
    print(f"{row.strategy} {row.protocol}: {row.success_rate:.4f} over {row.count} trajectories")


def cmd_sweep(args, cfg: RunConfig) -> None:
    _, train_part, _ = _load_series(cfg)
    b = cfg.benchmarks
    grid = ev.parse_grid(args.grid or (b.gamma_grid if args.strategy == "mc" else b.budget_grid))
    trajs = simulated_batch(train_part.returns, cfg.generator.train_windows, cfg.env.horizon, args.count, args.seed)
    res = ev.sweep_parameter(args.strategy, grid, trajs, ev.strategy_context(train_part, cfg.env), cfg.env)
    out = _prepare(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "success_rate"])
        for value, rate in res.curve:
            w.writerow([repr(value), repr(rate)])
    _write_meta(out, cfg, "sweep", args.seed, strategy=args.strategy, best=res.best, count=args.count,
                data_digest=ev.series_digest(train_part))
    print(f"{args.strategy} best parameter {res.best} -> {out}")


def cmd_table(args, cfg: RunConfig) -> None:
    _, train_part, test_part = _load_series(cfg)
    gamma, budget, sweeps = _benchmark_params(cfg, train_part)
    policies: dict = ev.calibrate_benchmarks(train_part, cfg.env, gamma, budget, cfg.dp.nodes, cfg.dp.alphas)
    net = _load_rl(args.checkpoint or cfg.eval.checkpoint)
    policies["rl"] = RLPolicy(net) if net is not None else None
    if net is None:
        print(f"warning: no RL checkpoint at {args.checkpoint or cfg.eval.checkpoint}; row left empty", file=sys.stderr)
    protocols = ev.table_protocols(args.count, args.seed, cfg.env.horizon)
    report = ev.build_table(policies, protocols, test_part, cfg.env, args.workers)
    glide_set = ev.EvalProtocol("simulated", (36,), args.count, args.seed, cfg.env.horizon).trajectories(test_part)
    for name, policy in policies.items():
        if policy is not None and len(glide_set) >= 100:
            report.glide_paths[name] = ev.glide_path(policy, glide_set, cfg.env)
    report.meta.update({"gamma": gamma, "budget": budget, "sweeps": sweeps})
    out = _prepare(args.out)
    report.to_table_csv(out)
    report.to_csv(out.with_suffix(".long.csv"))
    report.to_json(out.with_suffix(".json"))
    _write_meta(out, cfg, "table", args.seed, gamma=gamma, budget=budget, data_digest=ev.series_digest(test_part))
    print(out.read_text(), end="")


def cmd_policy_grid(args, cfg: RunConfig) -> None:
    path = args.checkpoint or cfg.eval.checkpoint
    net = _load_rl(path)
    if net is None:
        raise FileNotFoundError(f"missing RL checkpoint: {path}")
    ts, ws, alpha = export_policy_grid(net, args.n_time, args.n_wealth, args.max_wealth)
    out = _prepare(args.out)
    write_policy_grid(ts, ws, alpha, out)
    _write_meta(out, cfg, "policy-grid", None, checkpoint=str(path))
    print(f"{alpha.shape[0]}x{alpha.shape[1]} grid -> {out}")


def cmd_spread(args, cfg: RunConfig) -> None:
    _, train_part, test_part = _load_series(cfg)
    series = {"train": train_part, "test": test_part}[args.part]
    spread = ev.mean_estimate_spread(series, args.windows, args.samples, args.seed)
    out = _prepare(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "mean_stock_return"])
        for window, means in spread.items():
            for m in means:
                w.writerow([window, repr(float(m))])
    _write_meta(out, cfg, "spread", args.seed, part=args.part, data_digest=ev.series_digest(series))
    print(f"{sum(len(v) for v in spread.values())} estimates -> {out}")


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="gbwm", description="Goal-based wealth management experiments.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help=f"INI config file (default: ${CONFIG_ENV_VAR} if set)")
    common.add_argument("--data", default=None, help="returns CSV (overrides [data] path)")
    common.add_argument("--split", default=None, help="first test month YYYY-MM (overrides [data] split)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "Validate a returns file and write canonical train/test CSVs.")
    p.add_argument("--date-col", default=None, help="date column (overrides [data] date_col)")
    p.add_argument("--bond-col", default=None, help="bond return column")
    p.add_argument("--stock-col", default=None, help="stock return column")
    p.add_argument("--out", default="runs/data", help="output directory")

    p = add("simulate", cmd_simulate, "Write trajectories from one generator as long-format CSV.")
    p.add_argument("--kind", choices=["simulated", "bootstrap", "historical"], default="simulated", help="generator")
    p.add_argument("--sizes", type=int, nargs="+", default=[120], help="estimation windows or block sizes")
    p.add_argument("--count", type=int, default=100, help="number of trajectories")
    p.add_argument("--seed", type=int, default=7, help="generator seed")
    p.add_argument("--part", choices=["train", "test", "all"], default="train", help="source series")
    p.add_argument("--out", default="runs/trajectories.csv", help="output CSV")

    p = add("dp-solve", cmd_dp_solve, "Solve the dynamic programme on training moments.")
    p.add_argument("--nodes", type=int, default=None, help="wealth grid size (overrides [dp] nodes)")
    p.add_argument("--alphas", type=int, default=None, help="number of stock weights (overrides [dp] alphas)")
    p.add_argument("--out", default="runs/dp_table.csv", help="output CSV")

    p = add("train", cmd_train, "Train the PPO agent on simulated training trajectories.")
    p.add_argument("--episodes", type=int, default=None, help="total episodes (overrides [ppo] total_episodes)")
    p.add_argument("--seed", type=int, default=None, help="PPO seed (overrides [ppo] seed)")
    p.add_argument("--out", default="runs/rl_policy.json", help="checkpoint path")
    p.add_argument("--curve", default=None, help="training curve CSV (default: <out>.curve.csv)")

    p = add("evaluate", cmd_evaluate, "Success rate of one policy under one protocol.")
    p.add_argument("--policy", required=True, help="dg | mc[:gamma] | vb[:budget] | dp[:table.csv] | rl[:checkpoint]")
    p.add_argument("--protocol", required=True, help="historical | simulated:36 | simulated:24,36,48 | bootstrap:1,2,3")
    p.add_argument("--count", type=int, default=10_000, help="trajectories for random protocols")
    p.add_argument("--seed", type=int, default=7, help="protocol seed")
    p.add_argument("--part", choices=["train", "test"], default="test", help="series the protocol draws from")
    p.add_argument("--workers", type=int, default=1, help="parallel evaluation processes")
    p.add_argument("--out", default="runs/report.csv", help="output CSV")

    p = add("sweep", cmd_sweep, "Success rate across a Merton or variance-budget parameter grid.")
    p.add_argument("--strategy", choices=["mc", "vb"], required=True, help="benchmark family")
    p.add_argument("--grid", default=None, help="from:to:step or comma list (default from [benchmarks])")
    p.add_argument("--count", type=int, default=10_000, help="training trajectories")
    p.add_argument("--seed", type=int, default=11, help="trajectory seed")
    p.add_argument("--out", default="runs/sweep.csv", help="output CSV")

    p = add("table", cmd_table, "Five strategies by seven protocols on the test series.")
    p.add_argument("--all", action="store_true", help="all strategies and protocols (the only mode)")
    p.add_argument("--checkpoint", default=None, help="RL checkpoint (default [eval] checkpoint)")
    p.add_argument("--count", type=int, default=10_000, help="trajectories per random protocol")
    p.add_argument("--seed", type=int, default=7, help="protocol seed")
    p.add_argument("--workers", type=int, default=1, help="parallel evaluation processes")
    p.add_argument("--out", default="runs/table1.csv", help="output CSV (.long.csv and .json written alongside)")

    p = add("policy-grid", cmd_policy_grid, "Mode allocation of the RL policy over (t/T, W/W_G).")
    p.add_argument("--checkpoint", default=None, help="RL checkpoint (default [eval] checkpoint)")
    p.add_argument("--n-time", type=int, default=25, help="time points in [0, 1]")
    p.add_argument("--n-wealth", type=int, default=41, help="wealth points in [0, max]")
    p.add_argument("--max-wealth", type=float, default=2.0, help="largest wealth/goal ratio")
    p.add_argument("--out", default="runs/policy_grid.csv", help="output CSV")

    p = add("spread", cmd_spread, "Fitted stock means over every window of each size.")
    p.add_argument("--windows", type=int, nargs="+", default=[24, 36, 48, 60], help="window sizes")
    p.add_argument("--samples", type=int, default=None, help="random subset per window size")
    p.add_argument("--seed", type=int, default=0, help="subset seed")
    p.add_argument("--part", choices=["train", "test"], default="test", help="source series")
    p.add_argument("--out", default="runs/mean_spread.csv", help="output CSV")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = cfg.replace("data", path=args.data, split=args.split,
                      date_col=getattr(args, "date_col", None), bond_col=getattr(args, "bond_col", None),
                      stock_col=getattr(args, "stock_col", None))
    cfg = cfg.replace("dp", nodes=getattr(args, "nodes", None), alphas=getattr(args, "alphas", None))
    cfg = cfg.replace("ppo", total_episodes=getattr(args, "episodes", None))
    if args.command == "train":
        cfg = cfg.replace("ppo", seed=args.seed)
    if args.command == "table":
        cfg = cfg.replace("eval", count=args.count, seed=args.seed, workers=args.workers,
                          checkpoint=args.checkpoint)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except Exception as exc:  # one parseable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
