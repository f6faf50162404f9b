"""Goal-based wealth management: market simulation, benchmarks, DP and PPO."""

__version__ = "0.1.0"
