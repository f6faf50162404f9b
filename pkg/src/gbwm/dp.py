"""Backward induction over a (time, wealth) grid maximising P(W_T >= W_G).

Wealth follows a geometric Brownian motion per candidate portfolio. Monthly
simple-return moments (mu_p, sigma_p) map to a lognormal one-step increment
with matching mean and variance:

    s^2 = log(1 + sigma_p^2 / (1 + mu_p)^2),   m = log(1 + mu_p) - s^2 / 2

The grid is uniform in log-wealth with W_0 and W_G placed exactly on nodes.
Transition weights come from the log-normal density on the nodes (see
``transition_matrix``). The last step integrates the terminal indicator
exactly instead of going through the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .env import EnvConfig, EnvState
from .strategies import Policy
from .trajectories import Moments

TIE_TOL = 1e-12
LATTICE_MIN_WIDTH = 0.7


@dataclass(frozen=True)
class PortfolioSet:
    alphas: np.ndarray
    mu: np.ndarray  # monthly simple-return mean per candidate
    sigma: np.ndarray  # monthly simple-return std per candidate

    def __post_init__(self):
        for name in ("alphas", "mu", "sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if not (len(self.alphas) == len(self.mu) == len(self.sigma)) or len(self.alphas) == 0:
            raise ValueError("candidate arrays must be non-empty and equally long")
        if np.any(self.sigma < 0):
            raise ValueError("candidate sigma must be >= 0")
        if np.any(self.mu <= -1):
            raise ValueError("candidate mean return must exceed -1")
        order = np.argsort(self.alphas, kind="stable")
        for name in ("alphas", "mu", "sigma"):
            object.__setattr__(self, name, getattr(self, name)[order])

    def __len__(self) -> int:
        return len(self.alphas)

    @classmethod
    def from_moments(cls, moments: Moments, n_alphas: int = 21) -> "PortfolioSet":
        if n_alphas < 2:
            raise ValueError("need at least 2 alpha grid points")
        a = np.linspace(0.0, 1.0, n_alphas)
        (sbb, ssb), (_, sss) = moments.sigma
        mu = a * moments.mu_stock + (1 - a) * moments.mu_bond
        var = a**2 * sss + 2 * a * (1 - a) * ssb + (1 - a) ** 2 * sbb
        return cls(a, mu, np.sqrt(np.maximum(var, 0.0)))

    def log_params(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step (drift, vol) of log-wealth for each candidate."""
        s2 = np.log1p((self.sigma / (1.0 + self.mu)) ** 2)
        return np.log1p(self.mu) - 0.5 * s2, np.sqrt(s2)


@dataclass(frozen=True)
class WealthGrid:
    log_start: float  # log of the lowest node
    step: float  # spacing in log-wealth
    size: int

    @property
    def log_nodes(self) -> np.ndarray:
        return self.log_start + self.step * np.arange(self.size)

    @property
    def nodes(self) -> np.ndarray:
        return np.exp(self.log_nodes)

    def nearest(self, wealth) -> np.ndarray:
        """Index of the nearest node in log-wealth, clamped to the grid."""
        pos = (np.log(np.maximum(wealth, 1e-300)) - self.log_start) / self.step
        return np.clip(np.rint(pos), 0, self.size - 1).astype(np.int64)


def build_grid(config: EnvConfig, portfolios: PortfolioSet, n_nodes: int = 300) -> WealthGrid:
    """Geometric grid spanning W_0 * exp(+-(|m| T + 4 s sqrt(T))).

    The spacing is adjusted so that both W_0 and W_G fall exactly on nodes.
    """
    if n_nodes < 16:
        raise ValueError("n_nodes must be >= 16")
    drift, vol = portfolios.log_params()
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(vol))):
        raise ValueError("non-finite portfolio moments")
    T = config.horizon
    half = float(np.max(np.abs(drift)) * T + 4.0 * np.max(vol) * np.sqrt(T))
    x0 = np.log(config.initial_wealth)
    xg = np.log(config.goal_wealth)
    lo = min(x0 - half, xg)
    hi = max(x0 + half, xg)
    span = hi - lo
    if span <= 0:
        # W_0 == W_G with no dispersion: keep a small band around W_0
        lo, hi, span = x0 - 0.5, x0 + 0.5, 1.0
    step = span / (n_nodes - 1)
    gap = abs(xg - x0)
    if gap > 0:
        step = gap / max(1, round(gap / step))
    below = int(np.ceil((x0 - lo) / step - 1e-9))
    below = min(below, n_nodes - 1)
    log_start = x0 - below * step
    grid = WealthGrid(log_start, step, n_nodes)
    top = log_start + (n_nodes - 1) * step
    # snapping the step can leave the goal just outside; slide the window by whole steps
    if xg > top + 1e-12:
        grid = WealthGrid(log_start + np.ceil((xg - top) / step - 1e-9) * step, step, n_nodes)
    elif xg < log_start - 1e-12:
        grid = WealthGrid(log_start - np.ceil((log_start - xg) / step - 1e-9) * step, step, n_nodes)
    return grid


def transition_matrix(grid: WealthGrid, drift: float, vol: float) -> np.ndarray:
    """Row-stochastic matrix P[i, j] of moving from node i to node j in one step.

    Wide kernels (vol >= LATTICE_MIN_WIDTH grid steps) use the normal density
    sampled at the nodes and normalised. Narrower kernels put mass on the
    three nodes around the mean, matching mean and variance exactly where a
    three-point law can (else the two-point law with the right mean). Mass
    leaving the grid is held on the end nodes.
    """
    n = grid.size
    tau = vol / grid.step
    shift = drift / grid.step
    idx = np.arange(n)
    if tau >= LATTICE_MIN_WIDTH:
        c = (idx[None, :] - idx[:, None]) - shift
        P = np.exp(-0.5 * (c / tau) ** 2)
        # fold tail mass beyond the grid onto the end nodes
        P[:, 0] += _tail_mass(-0.5 - shift - idx, tau)
        P[:, -1] += _tail_mass(idx + shift - (n - 1) - 0.5, tau)
    else:
        P = np.zeros((n, n))
        j = int(np.floor(shift + 0.5))
        u = shift - j
        m2 = tau**2 + u**2
        if m2 < abs(u):
            p_lo, p_mid, p_hi = max(-u, 0.0), 1.0 - abs(u), max(u, 0.0)
        else:
            p_lo, p_mid, p_hi = 0.5 * (m2 - u), 1.0 - m2, 0.5 * (m2 + u)
        for off, p in ((-1, p_lo), (0, p_mid), (1, p_hi)):
            np.add.at(P, (idx, np.clip(idx + j + off, 0, n - 1)), p)
    P /= P.sum(axis=1, keepdims=True)
    return P


def _tail_mass(z, tau):
    """Lattice-density mass lying beyond a grid edge ``z`` steps past the mean."""
    return np.sqrt(2.0 * np.pi) * tau * ndtr(z / tau)


def transition_probs(wealth_index: int, drift: float, vol: float, grid: WealthGrid) -> np.ndarray:
    return transition_matrix(grid, drift, vol)[wealth_index]


def _terminal_step_probs(grid: WealthGrid, drift, vol, log_goal: float) -> np.ndarray:
    """P(x_i + drift + vol Z >= log_goal) for every node i and candidate."""
    gap = grid.log_nodes[:, None] + drift[None, :] - log_goal
    risky = vol > 0
    p = (gap >= -1e-12).astype(np.float64)
    p[:, risky] = ndtr(gap[:, risky] / vol[risky])
    return p


@dataclass
class PolicyTable:
    grid: WealthGrid
    alphas: np.ndarray  # candidate alpha grid
    action: np.ndarray  # (T, n_nodes) chosen alpha
    value: np.ndarray  # (T + 1, n_nodes) success probability
    config: EnvConfig

    @property
    def horizon(self) -> int:
        return self.action.shape[0]

    def root_value(self) -> float:
        i = int(self.grid.nearest(self.config.initial_wealth))
        return float(self.value[0, i])

    def to_csv(self, path) -> None:
        nodes = self.grid.nodes
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "node_wealth", "alpha", "value"])
            for t in range(self.horizon + 1):
                for i, node in enumerate(nodes):
                    a = repr(float(self.action[t, i])) if t < self.horizon else ""
                    w.writerow([t, repr(float(node)), a, repr(float(self.value[t, i]))])

    @classmethod
    def from_csv(cls, path, config: EnvConfig) -> "PolicyTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        T = max(int(r["t"]) for r in rows)
        nodes = np.array([float(r["node_wealth"]) for r in rows if int(r["t"]) == 0])
        n = len(nodes)
        action = np.zeros((T, n))
        value = np.zeros((T + 1, n))
        for k, r in enumerate(rows):
            t, i = divmod(k, n)
            value[t, i] = float(r["value"])
            if t < T:
                action[t, i] = float(r["alpha"])
        logs = np.log(nodes)
        step = (logs[-1] - logs[0]) / (n - 1)
        grid = WealthGrid(float(logs[0]), float(step), n)
        return cls(grid, np.unique(action), action, value, config)


def solve(grid: WealthGrid, portfolios: PortfolioSet, config: EnvConfig) -> PolicyTable:
    T = config.horizon
    n = grid.size
    drift, vol = portfolios.log_params()
    log_goal = np.log(config.goal_wealth)
    value = np.zeros((T + 1, n))
    action = np.zeros((T, n))
    value[T] = (grid.log_nodes >= log_goal - 1e-12).astype(np.float64)

    q = _terminal_step_probs(grid, drift, vol, log_goal)  # (n, K)
    value[T - 1], action[T - 1] = _pick(q, portfolios.alphas)

    if T > 1:
        K = len(portfolios)
        mats = np.concatenate([transition_matrix(grid, d, s) for d, s in zip(drift, vol)])  # (K n, n)
        for t in range(T - 2, -1, -1):
            cand = (mats @ value[t + 1]).reshape(K, n).T
            value[t], action[t] = _pick(cand, portfolios.alphas)
    np.clip(value, 0.0, 1.0, out=value)
    return PolicyTable(grid, portfolios.alphas.copy(), action, value, config)


def _pick(cand: np.ndarray, alphas: np.ndarray):
    """Row-wise max with ties resolved toward the smallest alpha (first column)."""
    best = cand.max(axis=1)
    first = np.argmax(cand >= best[:, None] - TIE_TOL, axis=1)
    return best, alphas[first]


def dp_policy_action(table: PolicyTable, state: EnvState) -> float:
    if state.step >= table.horizon:
        raise ValueError("no action at the terminal step")
    return float(table.action[state.step, table.grid.nearest(state.wealth)])


class DPPolicy(Policy):
    name = "dp"

    def __init__(self, table: PolicyTable):
        self.table = table

    def act(self, t, wealth):
        w = np.asarray(wealth) * self.table.config.goal_wealth
        return self.table.action[t, self.table.grid.nearest(w)]


def solve_from_moments(moments: Moments, config: EnvConfig, n_nodes: int = 300, n_alphas: int = 21) -> PolicyTable:
    portfolios = PortfolioSet.from_moments(moments, n_alphas)
    grid = build_grid(config, portfolios, n_nodes)
    return solve(grid, portfolios, config)
