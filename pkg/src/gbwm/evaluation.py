"""Evaluation protocols, benchmark calibration, sweeps and the results table."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dp
from .env import BatchEnv, EnvConfig
from .market_data import ReturnSeries
from .strategies import GlidePathPolicy, MertonPolicy, Policy, StrategyContext, VariancePolicy
from .trajectories import bootstrap_batch, estimate_moments, historical_batch, simulated_batch

GAMMA_RANGE = (0.004, 0.05)
BUDGET_RANGE = (0.001, 0.02)
STRATEGIES = ("dg", "mc", "vb", "dp", "rl")


@dataclass(frozen=True)
class EvalProtocol:
    kind: str  # historical | simulated | bootstrap
    params: tuple = ()
    count: int = 10_000
    seed: int = 7
    length: int = 120

    def __post_init__(self):
        if self.kind not in ("historical", "simulated", "bootstrap"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted(int(p) for p in self.params)))
        if self.kind != "historical":
            if not self.params:
                raise ValueError(f"{self.kind} protocol needs window/block sizes")
            if self.count < 1:
                raise ValueError("count must be >= 1")
            lo = 2 if self.kind == "simulated" else 1
            if min(self.params) < lo:
                raise ValueError(f"{self.kind} sizes must be >= {lo}")

    @property
    def label(self) -> str:
        if self.kind == "historical":
            return "historical"
        return f"{self.kind}[{'/'.join(map(str, self.params))}]"

    def trajectories(self, series: ReturnSeries | np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Trajectories ``start:stop`` of this protocol (all of them by default)."""
        returns = series.returns if isinstance(series, ReturnSeries) else np.asarray(series)
        if self.kind == "historical":
            return historical_batch(returns, self.length)[start:stop]
        stop = self.count if stop is None else min(stop, self.count)
        make = simulated_batch if self.kind == "simulated" else bootstrap_batch
        return make(returns, self.params, self.length, stop - start, self.seed, offset=start)

    def size(self, series) -> int:
        if self.kind == "historical":
            return len(series) - self.length + 1
        return self.count


def parse_protocol(text: str, count: int = 10_000, seed: int = 7, length: int = 120) -> EvalProtocol:
    """``historical``, ``simulated:36``, ``simulated:24,36,48``, ``bootstrap:1,2,3``."""
    kind, _, rest = text.partition(":")
    params = tuple(int(p) for p in rest.split(",") if p.strip()) if rest else ()
    return EvalProtocol(kind.strip(), params, count, seed, length)


def table_protocols(count: int = 10_000, seed: int = 7, length: int = 120) -> list[EvalProtocol]:
    return [
        EvalProtocol("historical", (), count, seed, length),
        EvalProtocol("simulated", (36,), count, seed, length),
        EvalProtocol("simulated", (24, 36, 48), count, seed, length),
        EvalProtocol("simulated", (60,), count, seed, length),
        EvalProtocol("bootstrap", (1,), count, seed, length),
        EvalProtocol("bootstrap", (1, 2, 3), count, seed, length),
        EvalProtocol("bootstrap", (4, 5, 6), count, seed, length),
    ]


# -- running policies -------------------------------------------------------


@dataclass
class Rollout:
    wealth: np.ndarray  # terminal wealth, (B,)
    success: np.ndarray  # (B,) bool
    actions: np.ndarray | None = None  # (B, T) when recorded


def run_policy(policy: Policy, trajectories: np.ndarray, env_config: EnvConfig, record: bool = False) -> Rollout:
    env = BatchEnv(env_config, trajectories)
    policy.begin(len(env), env_config)
    actions = np.empty((len(env), env_config.horizon)) if record else None
    for t in range(env_config.horizon):
        a = np.clip(policy.act(t, env.wealth / env_config.goal_wealth), 0.0, 1.0)
        if record:
            actions[:, t] = a
        env.step(a)
        policy.observe(env.current_returns())
    return Rollout(env.wealth, env.wealth >= env_config.goal_wealth, actions)


def _chunk_success(args):
    policy, protocol, returns, env_config, start, stop = args
    return run_policy(policy, protocol.trajectories(returns, start, stop), env_config).success


def protocol_success(policy: Policy, protocol: EvalProtocol, series, env_config: EnvConfig, workers: int = 1) -> np.ndarray:
    """Per-trajectory success flags; identical for any worker count."""
    n = protocol.size(series)
    if workers <= 1 or n < 2 * workers:
        return run_policy(policy, protocol.trajectories(series), env_config).success
    returns = series.returns if isinstance(series, ReturnSeries) else np.asarray(series)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [(policy, protocol, returns, env_config, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(workers) as pool:
        return np.concatenate(list(pool.map(_chunk_success, jobs)))


@dataclass
class EvalRow:
    strategy: str
    protocol: str
    success_rate: float | None
    count: int
    seed: int | None
    note: str = ""


def run_protocol(policy: Policy, protocol: EvalProtocol, series, env_config: EnvConfig, workers: int = 1, name: str | None = None) -> EvalRow:
    success = protocol_success(policy, protocol, series, env_config, workers)
    note = ""
    if protocol.kind == "historical":
        note = f"{len(success)} overlapping windows (N-L+1); paths are dependent"
    seed = None if protocol.kind == "historical" else protocol.seed
    return EvalRow(name or policy.name, protocol.label, float(success.mean()), len(success), seed, note)


def glide_path(policy: Policy, trajectories: np.ndarray, env_config: EnvConfig) -> np.ndarray:
    """Mean stock weight at each step across trajectories."""
    if len(trajectories) < 100:
        raise ValueError("glide path needs at least 100 trajectories")
    return run_policy(policy, trajectories, env_config, record=True).actions.mean(axis=0)


def mean_estimate_spread(series, windows, samples: int | None = None, seed: int = 0) -> dict[int, np.ndarray]:
    """Fitted monthly stock means over every contiguous window of each size.

    ``samples`` keeps a random subset of windows per size.
    """
    returns = series.returns if isinstance(series, ReturnSeries) else np.asarray(series)
    stock = returns[:, 1]
    csum = np.concatenate([[0.0], np.cumsum(stock)])
    rng = np.random.default_rng(seed)
    out = {}
    for w in sorted(int(w) for w in windows):
        if not 1 <= w <= len(stock):
            raise ValueError(f"window {w} outside [1, {len(stock)}]")
        means = (csum[w:] - csum[:-w]) / w
        if samples is not None and samples < len(means):
            means = np.sort(rng.choice(means, samples, replace=False))
        out[w] = means
    return out


# -- benchmarks and sweeps --------------------------------------------------


def strategy_context(train: ReturnSeries, env_config: EnvConfig) -> StrategyContext:
    return StrategyContext.from_moments(estimate_moments(train), env_config.horizon_years)


def make_policy(family: str, ctx: StrategyContext, value: float) -> Policy:
    if family == "mc":
        return MertonPolicy(ctx, value)
    if family == "vb":
        return VariancePolicy(ctx, value)
    raise ValueError(f"no parameter sweep for strategy {family!r}")


def parse_grid(text: str) -> np.ndarray:
    """``from:to:step`` (inclusive of ``to`` up to rounding) or a comma list."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(n), 12)
    return np.array([float(x) for x in text.split(",")])


def default_grid(family: str, n: int = 24) -> np.ndarray:
    lo, hi = GAMMA_RANGE if family == "mc" else BUDGET_RANGE
    return np.round(np.linspace(lo, hi, n), 12)


@dataclass
class SweepResult:
    family: str
    best: float
    curve: list[tuple[float, float]]


def sweep_parameter(family: str, grid, trajectories: np.ndarray, ctx: StrategyContext, env_config: EnvConfig) -> SweepResult:
    """Success rate per parameter on one shared trajectory set; ties go to the smaller value."""
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if len(grid) == 0:
        raise ValueError("empty parameter grid")
    curve = []
    for value in grid:
        rate = float(run_policy(make_policy(family, ctx, value), trajectories, env_config).success.mean())
        curve.append((float(value), rate))
    rates = np.array([r for _, r in curve])
    best = float(grid[int(np.argmax(rates >= rates.max()))])
    return SweepResult(family, best, curve)


def calibrate_benchmarks(
    train: ReturnSeries,
    env_config: EnvConfig,
    gamma: float,
    budget: float,
    dp_nodes: int = 300,
    dp_alphas: int = 21,
) -> dict[str, Policy]:
    """DG, MC, VB and DP frozen on training-set moments."""
    moments = estimate_moments(train)
    ctx = StrategyContext.from_moments(moments, env_config.horizon_years)
    table = dp.solve_from_moments(moments, env_config, dp_nodes, dp_alphas)
    return {
        "dg": GlidePathPolicy(),
        "mc": MertonPolicy(ctx, gamma),
        "vb": VariancePolicy(ctx, budget),
        "dp": dp.DPPolicy(table),
    }


# -- reports ----------------------------------------------------------------


def series_digest(series: ReturnSeries) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(series.months).tobytes())
    h.update(np.ascontiguousarray(series.returns).tobytes())
    return h.hexdigest()


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    glide_paths: dict = field(default_factory=dict)

    def strategies(self) -> list[str]:
        return list(dict.fromkeys(r.strategy for r in self.rows))

    def protocols(self) -> list[str]:
        return list(dict.fromkeys(r.protocol for r in self.rows))

    def rate(self, strategy: str, protocol: str) -> float | None:
        for r in self.rows:
            if r.strategy == strategy and r.protocol == protocol:
                return r.success_rate
        raise KeyError((strategy, protocol))

    def matrix(self) -> np.ndarray:
        return np.array(
            [[np.nan if self.rate(s, p) is None else self.rate(s, p) for p in self.protocols()] for s in self.strategies()]
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "protocol", "success_rate", "count", "seed", "note"])
            for r in self.rows:
                rate = "" if r.success_rate is None else repr(r.success_rate)
                w.writerow([r.strategy, r.protocol, rate, r.count, "" if r.seed is None else r.seed, r.note])

    def to_table_csv(self, path) -> None:
        """Wide layout: one row per strategy, one column per protocol."""
        protocols = self.protocols()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", *protocols])
            for s in self.strategies():
                vals = [self.rate(s, p) for p in protocols]
                w.writerow([s, *("" if v is None else f"{v:.4f}" for v in vals)])

    def to_json(self, path) -> None:
        payload = {
            "meta": self.meta,
            "rows": [r.__dict__ for r in self.rows],
            "glide_paths": {k: list(map(float, v)) for k, v in self.glide_paths.items()},
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def build_table(
    policies: dict[str, Policy | None],
    protocols: list[EvalProtocol],
    test: ReturnSeries,
    env_config: EnvConfig,
    workers: int = 1,
) -> EvalReport:
    """Success-rate matrix; a missing policy yields an empty row instead of aborting."""
    report = EvalReport()
    for name, policy in policies.items():
        for protocol in protocols:
            if policy is None:
                report.rows.append(EvalRow(name, protocol.label, None, 0, None, "artifact missing"))
                continue
            report.rows.append(run_protocol(policy, protocol, test, env_config, workers, name=name))
    report.meta = {
        "test_months": [list(test.first_month), list(test.last_month)],
        "test_length": len(test),
        "test_digest": series_digest(test),
        "protocols": [
            {"label": p.label, "kind": p.kind, "params": list(p.params), "count": p.size(test), "seed": p.seed, "length": p.length}
            for p in protocols
        ],
        "env": {"horizon": env_config.horizon, "goal_wealth": env_config.goal_wealth, "initial_wealth_ratio": env_config.initial_wealth_ratio},
    }
    return report
