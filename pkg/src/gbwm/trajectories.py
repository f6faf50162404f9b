"""Episode trajectory generators.

Three sources of (bond, stock) return paths:

* rolling-window Gaussian simulation: pick an end index k, fit mean and
  covariance on the returns ending at k, draw i.i.d. Gaussian returns;
* block bootstrap of historical rows (block size 1 is the plain bootstrap);
* overlapping historical windows.

All batch generators derive one random stream per trajectory from
``(seed, trajectory_index)`` so results do not depend on how the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market_data import ReturnSeries

RETURN_FLOOR = -0.99


@dataclass(frozen=True)
class Moments:
    mu: np.ndarray  # (bond, stock) monthly means
    sigma: np.ndarray  # 2x2 covariance

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (len(mu), len(mu)):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu length {len(mu)}")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-15):
            raise ValueError("sigma is not symmetric")
        if np.any(np.diag(sigma) < 0):
            raise ValueError("negative variance on the diagonal")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def mu_bond(self) -> float:
        return float(self.mu[0])

    @property
    def mu_stock(self) -> float:
        return float(self.mu[1])

    @property
    def sigma_stock(self) -> float:
        return float(np.sqrt(self.sigma[1, 1]))


@dataclass
class Trajectory:
    returns: np.ndarray  # (L, 2): bond, stock
    kind: str = "simulated"
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.returns)

    @property
    def bond(self) -> np.ndarray:
        return self.returns[:, 0]

    @property
    def stock(self) -> np.ndarray:
        return self.returns[:, 1]


def _as_array(window) -> np.ndarray:
    if isinstance(window, ReturnSeries):
        return window.returns
    return np.asarray(window, dtype=np.float64)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` under master ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def estimate_moments(window) -> Moments:
    """Sample mean and unbiased (n-1) covariance of a (n, 2) window."""
    x = _as_array(window)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError(f"moment window needs at least 2 rows, got {len(x)}")
    # shift by the first row so constant windows give an exact mean and zero covariance
    d0 = x - x[0]
    mu = x[0] + d0.mean(axis=0)
    d = d0 - d0.mean(axis=0)
    sigma = d.T @ d / (len(x) - 1)
    sigma = 0.5 * (sigma + sigma.T)
    return Moments(mu, sigma)


def psd_cholesky(sigma: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = sigma for positive semidefinite sigma.

    Zero pivots are allowed (their column is set to zero), so a zero matrix
    factors to zero and degenerate Gaussians stay exact.
    """
    s = np.asarray(sigma, dtype=np.float64)
    n = s.shape[0]
    scale = max(float(np.max(np.abs(np.diag(s)))), 1.0)
    L = np.zeros_like(s)
    for j in range(n):
        d = s[j, j] - L[j, :j] @ L[j, :j]
        if d < -tol * scale:
            raise np.linalg.LinAlgError(f"covariance not positive semidefinite (pivot {d:.3e})")
        if d <= tol * scale:
            # semidefinite direction: off-diagonal remainder must vanish too
            rest = s[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]
            if np.any(np.abs(rest) > np.sqrt(tol) * scale):
                raise np.linalg.LinAlgError("covariance not positive semidefinite")
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (s[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sample_mvn(moments: Moments, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from N(mu, sigma), clamped at the return floor.

    Returns shape (2,) when ``size`` is None, else (size, 2).
    """
    L = psd_cholesky(moments.sigma)
    n = 1 if size is None else size
    z = rng.standard_normal((n, len(moments.mu)))
    draws = moments.mu + z @ L.T
    np.maximum(draws, RETURN_FLOOR, out=draws)
    return draws[0] if size is None else draws


def fitting_window(series_returns: np.ndarray, k: int, n: int) -> np.ndarray:
    """Rows k-n .. k inclusive (0-based end index ``k``), i.e. n + 1 observations."""
    return series_returns[k - n : k + 1]


def _simulate(returns: np.ndarray, n: int, length: int, rng: np.random.Generator):
    N = len(returns)
    if n < 2:
        raise ValueError(f"window size must be >= 2, got {n}")
    if N <= n:
        raise ValueError(f"series length {N} must exceed window size {n}")
    # 1-based k in {n+1, ..., N}  <=>  0-based k in {n, ..., N-1}
    k = int(rng.integers(n, N))
    moments = estimate_moments(fitting_window(returns, k, n))
    return sample_mvn(moments, rng, size=length), k


def simulate_trajectory(series, window: int, length: int, rng: np.random.Generator) -> Trajectory:
    returns = _as_array(series)
    path, k = _simulate(returns, window, length, rng)
    return Trajectory(path, "simulated", {"window": window, "k": k})


def simulate_trajectory_mixed(series, windows, length: int, rng: np.random.Generator) -> Trajectory:
    windows = sorted(int(w) for w in windows)
    if not windows:
        raise ValueError("empty window-size set")
    returns = _as_array(series)
    for w in windows:
        if w < 2 or w >= len(returns):
            raise ValueError(f"window size {w} not in [2, {len(returns) - 1}]")
    n = windows[int(rng.integers(len(windows)))]
    path, k = _simulate(returns, n, length, rng)
    return Trajectory(path, "simulated", {"window": n, "k": k})


def block_bootstrap_trajectory(series, block_sizes, length: int, rng: np.random.Generator) -> Trajectory:
    """Concatenate uniformly placed blocks of consecutive rows until ``length`` rows."""
    blocks = sorted(int(b) for b in block_sizes)
    if not blocks:
        raise ValueError("empty block-size set")
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    returns = _as_array(series)
    N = len(returns)
    for b in blocks:
        if b < 1 or b > N:
            raise ValueError(f"block size {b} impossible for series length {N}")
    rows = []
    starts = []
    got = 0
    while got < length:
        b = blocks[int(rng.integers(len(blocks)))]
        s = int(rng.integers(0, N - b + 1))
        rows.append(returns[s : s + b])
        starts.append((s, b))
        got += b
    path = np.concatenate(rows)[:length].copy()
    return Trajectory(path, "bootstrap", {"block_sizes": blocks, "blocks": starts})


def historical_windows(series, length: int) -> list[Trajectory]:
    returns = _as_array(series)
    N = len(returns)
    if N < length:
        raise ValueError(f"series length {N} shorter than trajectory length {length}")
    return [
        Trajectory(returns[s : s + length].copy(), "historical", {"start": s})
        for s in range(N - length + 1)
    ]


# -- batch forms ------------------------------------------------------------


def simulated_batch(series, windows, length: int, count: int, seed: int, offset: int = 0) -> np.ndarray:
    """(count, length, 2) array of rolling-window Gaussian trajectories."""
    returns = _as_array(series)
    out = np.empty((count, length, 2))
    for i in range(count):
        rng = trajectory_rng(seed, offset + i)
        out[i] = simulate_trajectory_mixed(returns, windows, length, rng).returns
    return out


def bootstrap_batch(series, block_sizes, length: int, count: int, seed: int, offset: int = 0) -> np.ndarray:
    returns = _as_array(series)
    out = np.empty((count, length, 2))
    for i in range(count):
        rng = trajectory_rng(seed, offset + i)
        out[i] = block_bootstrap_trajectory(returns, block_sizes, length, rng).returns
    return out


def historical_batch(series, length: int) -> np.ndarray:
    returns = _as_array(series)
    if len(returns) < length:
        raise ValueError(f"series length {len(returns)} shorter than trajectory length {length}")
    view = np.lib.stride_tricks.sliding_window_view(returns, (length, 2))[:, 0]
    return np.ascontiguousarray(view)
