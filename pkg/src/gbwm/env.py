"""Episodic goal-attainment MDP.

State is (t/T, W_t/W_G); the action is the stock weight in [0, 1]; the only
reward is the terminal indicator W_T >= W_G.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 120
    goal_wealth: float = 1.0
    initial_wealth_ratio: float = 0.6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.goal_wealth > 0:
            raise ValueError("goal_wealth must be positive")
        if not self.initial_wealth_ratio > 0:
            raise ValueError("initial_wealth_ratio must be positive")

    @property
    def initial_wealth(self) -> float:
        return self.initial_wealth_ratio * self.goal_wealth

    @property
    def horizon_years(self) -> float:
        return self.horizon / 12.0


@dataclass(frozen=True)
class EnvState:
    step: int
    wealth: float
    config: EnvConfig

    @property
    def observation(self) -> tuple[float, float]:
        return (self.step / self.config.horizon, self.wealth / self.config.goal_wealth)

    @property
    def done(self) -> bool:
        return self.step >= self.config.horizon


def portfolio_return(alpha, bond_return, stock_return):
    return alpha * stock_return + (1.0 - alpha) * bond_return


def reset(config: EnvConfig, trajectory) -> EnvState:
    n = len(trajectory)
    if n != config.horizon:
        raise ValueError(f"trajectory length {n} != horizon {config.horizon}")
    return EnvState(0, config.initial_wealth, config)


def step(state: EnvState, alpha: float, trajectory) -> tuple[EnvState, float, bool]:
    """Rebalance to ``alpha`` in stocks, apply one month of returns."""
    cfg = state.config
    if state.step >= cfg.horizon:
        raise RuntimeError("step() called on a finished episode")
    returns = getattr(trajectory, "returns", trajectory)
    a = min(max(float(alpha), 0.0), 1.0)
    r_bond, r_stock = returns[state.step]
    wealth = state.wealth * (1.0 + portfolio_return(a, r_bond, r_stock))
    t = state.step + 1
    done = t == cfg.horizon
    reward = float(wealth >= cfg.goal_wealth) if done else 0.0
    return EnvState(t, wealth, cfg), reward, done


class BatchEnv:
    """Vectorised episodes over a (B, T, 2) block of trajectories."""

    def __init__(self, config: EnvConfig, trajectories: np.ndarray):
        trajectories = np.asarray(trajectories, dtype=np.float64)
        if trajectories.ndim != 3 or trajectories.shape[1] != config.horizon:
            raise ValueError(
                f"trajectories shape {trajectories.shape} incompatible with horizon {config.horizon}"
            )
        self.config = config
        self.trajectories = trajectories
        self.t = 0
        self.wealth = np.full(len(trajectories), config.initial_wealth)

    def __len__(self) -> int:
        return len(self.trajectories)

    def observation(self) -> np.ndarray:
        obs = np.empty((len(self), 2))
        obs[:, 0] = self.t / self.config.horizon
        obs[:, 1] = self.wealth / self.config.goal_wealth
        return obs

    def step(self, alpha) -> tuple[np.ndarray, bool]:
        cfg = self.config
        if self.t >= cfg.horizon:
            raise RuntimeError("step() called on finished episodes")
        a = np.clip(alpha, 0.0, 1.0)
        r = self.trajectories[:, self.t]
        self.wealth = self.wealth * (1.0 + portfolio_return(a, r[:, 0], r[:, 1]))
        self.t += 1
        done = self.t == cfg.horizon
        if done:
            reward = (self.wealth >= cfg.goal_wealth).astype(np.float64)
        else:
            reward = np.zeros(len(self))
        return reward, done

    def current_returns(self) -> np.ndarray:
        """Returns realised in the most recent step, shape (B, 2)."""
        return self.trajectories[:, self.t - 1]
