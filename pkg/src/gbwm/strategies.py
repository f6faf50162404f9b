"""Closed-form benchmark allocation rules and the common batched policy interface.

Policies act on a batch of parallel episodes:

    policy.begin(n, config)          # new episodes
    alpha = policy.act(t, wealth)    # wealth as W_t / W_G, shape (n,)
    policy.observe(returns)          # (n, 2) bond/stock returns of step t

Units: every quantity is monthly except the variance-budget horizon, which
is in years. The budget sweep parameter ``v`` is the total variance budget
V**2, so the rule uses V = sqrt(v).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .env import EnvConfig
from .trajectories import Moments

MIN_VOL_OBS = 12
VOL_FLOOR = 1e-6


@dataclass(frozen=True)
class StrategyContext:
    mu_stock: float
    mu_bond: float
    sigma_stock: float
    r: float
    variance_budget: float = 0.0
    horizon_years: float = 10.0
    realized_vol: float | None = None

    def __post_init__(self):
        if self.sigma_stock < 0:
            raise ValueError("sigma_stock must be >= 0")
        if self.variance_budget < 0:
            raise ValueError("variance budget must be >= 0")
        if self.realized_vol is not None and self.realized_vol < 0:
            raise ValueError("realized_vol must be >= 0")

    @classmethod
    def from_moments(cls, moments: Moments, horizon_years: float = 10.0, **kw) -> "StrategyContext":
        """Freeze benchmark inputs from fitted moments; the bond mean is the riskless rate."""
        return cls(
            mu_stock=moments.mu_stock,
            mu_bond=moments.mu_bond,
            sigma_stock=moments.sigma_stock,
            r=moments.mu_bond,
            horizon_years=horizon_years,
            **kw,
        )

    def with_budget(self, v: float) -> "StrategyContext":
        return replace(self, variance_budget=float(np.sqrt(v)))


def glide_path_action(t, T):
    steps = np.asarray(t, dtype=np.float64)
    if np.any(steps < 0) or np.any(steps > T):
        raise ValueError("glide path step outside [0, T]")
    out = 1.0 - steps / T
    return float(out) if out.ndim == 0 else out


def merton_raw(ctx: StrategyContext, gamma: float) -> float:
    if gamma >= 1:
        raise ValueError("CRRA parameter gamma must be < 1")
    if ctx.sigma_stock <= 0:
        raise ValueError("Merton weight undefined for zero volatility")
    return (ctx.mu_stock - ctx.r) / ((1.0 - gamma) * ctx.sigma_stock**2)


def merton_action(ctx: StrategyContext, gamma: float) -> float:
    return float(np.clip(merton_raw(ctx, gamma), 0.0, 1.0))


def variance_budget_raw(budget, vol, horizon_years, wealth):
    vol = np.asarray(vol, dtype=np.float64)
    wealth = np.asarray(wealth, dtype=np.float64)
    if np.any(vol <= 0):
        raise ValueError("variance budgeting needs positive volatility")
    if np.any(wealth <= 0):
        raise ValueError("variance budgeting needs positive wealth")
    if horizon_years <= 0:
        raise ValueError("horizon must be positive")
    return budget / (vol * np.sqrt(horizon_years) * wealth)


def variance_budget_action(ctx: StrategyContext, wealth, horizon_years: float | None = None):
    """clip(V / (sigma_t sqrt(T) X_t), 0, 1) with sigma_t = ``ctx.realized_vol``."""
    T = ctx.horizon_years if horizon_years is None else horizon_years
    vol = ctx.sigma_stock if ctx.realized_vol is None else ctx.realized_vol
    out = np.clip(variance_budget_raw(ctx.variance_budget, vol, T, wealth), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def estimate_running_vol(stock_returns, fallback: float) -> float:
    """Sample std of in-episode stock returns; ``fallback`` below 12 observations."""
    x = np.asarray(stock_returns, dtype=np.float64)
    if len(x) < MIN_VOL_OBS:
        return float(fallback)
    return max(float(np.std(x, ddof=1)), VOL_FLOOR)


# -- batched policies -------------------------------------------------------


class Policy:
    name = "policy"

    def begin(self, n: int, config: EnvConfig) -> None:
        self.n = n
        self.config = config

    def act(self, t: int, wealth: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, returns: np.ndarray) -> None:
        pass


class GlidePathPolicy(Policy):
    name = "dg"

    def act(self, t, wealth):
        return np.full(self.n, glide_path_action(t, self.config.horizon))


class ConstantPolicy(Policy):
    def __init__(self, alpha: float, name: str = "const"):
        self.alpha = float(np.clip(alpha, 0.0, 1.0))
        self.name = name

    def act(self, t, wealth):
        return np.full(self.n, self.alpha)


class MertonPolicy(ConstantPolicy):
    def __init__(self, ctx: StrategyContext, gamma: float):
        super().__init__(merton_action(ctx, gamma), name="mc")
        self.gamma = gamma
        self.ctx = ctx


class VariancePolicy(Policy):
    """Variance budgeting with a running within-episode volatility estimate.

    Uses Welford accumulators so each step costs O(n).
    """

    name = "vb"

    def __init__(self, ctx: StrategyContext, budget: float):
        self.budget = float(budget)
        self.ctx = ctx.with_budget(budget)

    def begin(self, n, config):
        super().begin(n, config)
        self.count = 0
        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)

    def vol(self) -> np.ndarray:
        if self.count < MIN_VOL_OBS:
            return np.full(self.n, self.ctx.sigma_stock)
        sd = np.sqrt(np.maximum(self.m2, 0.0) / (self.count - 1))
        return np.maximum(sd, VOL_FLOOR)

    def act(self, t, wealth):
        raw = variance_budget_raw(self.ctx.variance_budget, self.vol(), self.config.horizon_years, wealth)
        return np.clip(raw, 0.0, 1.0)

    def observe(self, returns):
        x = returns[:, 1]
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)
