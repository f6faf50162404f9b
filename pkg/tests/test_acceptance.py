"""Acceptance suite: one test per criterion, each recording a PASS/FAIL summary line.

Run with ``pytest tests/test_acceptance.py -v``; the summary prints at the end.

Environment knobs:

* ``GBWM_REFERENCE_CSV``: monthly bond/stock returns (same columns as the bundled
  stand-in) with enough history for the 1991 split. Needed for criterion 5, used by 6-8
  when present.
* ``GBWM_CHECKPOINT``: trained agent for criteria 6-7 (default ``runs/rl_policy.json``).
* ``GBWM_ACCEPT_COUNT``: trajectories per protocol for criteria 5-6 (default 10000).
"""

import csv
import json
import math
import os
import statistics
from pathlib import Path

import numpy as np
import pytest

from gbwm import cli, dp
from gbwm.env import EnvConfig
from gbwm.evaluation import run_policy
from gbwm.market_data import load_returns, split_train_test
from gbwm.neural import backward, flatten, forward, init_mlp
from gbwm.ppo import ActorCritic, PpoConfig, beta_logpdf, export_policy_grid, ppo_loss_and_grads
from gbwm.strategies import (
    GlidePathPolicy,
    MertonPolicy,
    StrategyContext,
    VariancePolicy,
    glide_path_action,
    merton_action,
    variance_budget_action,
)
from gbwm.trajectories import block_bootstrap_trajectory, estimate_moments, sample_mvn, trajectory_rng

from conftest import ROOT

STAND_IN = ROOT / "data" / "synthetic_monthly.csv"
REFERENCE = os.environ.get("GBWM_REFERENCE_CSV")
DATA = Path(REFERENCE) if REFERENCE else STAND_IN
CHECKPOINT = Path(os.environ.get("GBWM_CHECKPOINT", ROOT / "runs" / "rl_policy.json"))
COUNT = int(os.environ.get("GBWM_ACCEPT_COUNT", "10000"))
ENV = EnvConfig()


def _parts(path=DATA):
    return split_train_test(load_returns(path), "1991-01")


# -- 1 ----------------------------------------------------------------------


def test_1_formula_exactness(criterion):
    worst = 0.0

    def check(got, want):
        nonlocal worst
        worst = max(worst, abs(float(got) - float(want)))

    for T in (1, 12, 120, 360):
        for t in range(T + 1):
            check(glide_path_action(t, T), 1.0 - t / T)

    # Merton: interior, both clamps, and exactly on each boundary
    cases = [
        (0.008, 0.003, 0.045, 0.004),
        (0.008, 0.003, 0.045, 0.5),
        (0.003, 0.008, 0.045, 0.1),  # negative premium -> 0
        (0.05, 0.0, 0.01, 0.0),  # huge -> 1
        (0.003, 0.003, 0.04, 0.2),  # exactly 0
        (0.0016 + 0.002, 0.002, 0.04, 0.0),  # exactly 1
    ]
    for mu_s, r, sig, gamma in cases:
        ctx = StrategyContext(mu_s, r, sig, r)
        raw = (mu_s - r) / ((1.0 - gamma) * sig * sig)
        check(merton_action(ctx, gamma), min(max(raw, 0.0), 1.0))
        pol = MertonPolicy(ctx, gamma)
        pol.begin(3, ENV)
        for a in pol.act(0, np.ones(3)):
            check(a, min(max(raw, 0.0), 1.0))

    # VB on a grid that crosses the upper clamp
    for v in (0.001, 0.009, 0.02):
        for sig in (0.01, 0.045, 0.2):
            for x in (0.05, 0.3, 0.6, 1.0, 2.5):
                ctx = StrategyContext(0.008, 0.003, sig, 0.003, horizon_years=10.0).with_budget(v)
                raw = math.sqrt(v) / (sig * math.sqrt(10.0) * x)
                check(variance_budget_action(ctx, x), min(raw, 1.0))

    # batched policies along real paths, against a scalar re-derivation
    rng = np.random.default_rng(5)
    paths = np.stack([rng.normal(0.003, 0.01, (24, 8)), rng.normal(0.008, 0.05, (24, 8))], axis=-1).transpose(1, 0, 2)
    cfg = EnvConfig(horizon=24)
    ctx = StrategyContext(0.008, 0.003, 0.045, 0.003, horizon_years=2.0)
    for v in (0.002, 0.009):
        got = run_policy(VariancePolicy(ctx, v), paths, cfg, record=True).actions
        for i, path in enumerate(paths):
            w = cfg.initial_wealth
            for t in range(cfg.horizon):
                seen = path[:t, 1]
                sig = ctx.sigma_stock if t < 12 else max(statistics.stdev(seen), 1e-6)
                a = min(max(math.sqrt(v) / (sig * math.sqrt(2.0) * w), 0.0), 1.0)
                check(got[i, t], a)
                w *= 1.0 + a * path[t, 1] + (1.0 - a) * path[t, 0]
    got = run_policy(GlidePathPolicy(), paths, cfg, record=True).actions
    for t in range(cfg.horizon):
        for a in got[:, t]:
            check(a, 1.0 - t / 24)

    ok = worst <= 1e-12
    criterion(1, ok, f"max |action - closed form| = {worst:.2e} (tol 1e-12)")
    assert ok


# -- 2 ----------------------------------------------------------------------


def _fd(theta_get, theta_set, f, h=1e-6):
    theta = theta_get()
    out = np.empty_like(theta)
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        theta_set(up)
        fp = f()
        theta_set(dn)
        fm = f()
        out[i] = (fp - fm) / (2 * h)
    theta_set(theta)
    return out


def _rel(analytic, numeric):
    """Vector relative error ||a - n|| / max(||a||, ||n||)."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def test_2_gradient_correctness(criterion):
    worst = {"actor": 0.0, "critic": 0.0, "surrogate": 0.0}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        for name, top in (("actor", [2, 6, 6, 2]), ("critic", [2, 6, 6, 1])):
            net = init_mlp(top, rng)
            net.set_flat(net.get_flat() + rng.normal(0, 0.3, net.n_params))
            x = rng.random((8, 2)) * [1, 2]
            g = rng.normal(size=(8, top[-1]))
            _, cache = forward(net, x)
            analytic = flatten(backward(net, cache, g))
            numeric = _fd(net.get_flat, net.set_flat, lambda: float(np.sum(g * forward(net, x)[0])))
            worst[name] = max(worst[name], _rel(analytic, numeric))

        ac = ActorCritic.init(rng)
        # zero initial biases put dead-unit pre-activations exactly on the ReLU kink
        ac.actor.set_flat(ac.actor.get_flat() + rng.normal(0, 0.5, ac.actor.n_params))
        ac.critic.set_flat(ac.critic.get_flat() + rng.normal(0, 0.5, ac.critic.n_params))
        cfg = PpoConfig(entropy_coef=0.0 if seed % 2 else 0.01)
        obs = rng.random((16, 2)) * [1, 2]
        act = rng.uniform(0.05, 0.95, 16)
        a, b, _, _ = ac.shapes(obs)
        old = beta_logpdf(act, a, b) + rng.normal(0, 0.1, 16)
        adv, ret = rng.normal(size=16), rng.random(16)
        _, ga, gc = ppo_loss_and_grads(ac, obs, act, old, adv, ret, cfg)
        loss = lambda: ppo_loss_and_grads(ac, obs, act, old, adv, ret, cfg)[0].total
        for analytic, part in ((flatten(ga), ac.actor), (flatten(gc), ac.critic)):
            worst["surrogate"] = max(worst["surrogate"], _rel(analytic, _fd(part.get_flat, part.set_flat, loss)))

    ok = max(worst.values()) < 1e-4
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(2, ok, f"worst relative FD error over 100 seeds: {detail} (tol 1e-4)")
    assert ok


# -- 3 ----------------------------------------------------------------------


def test_3_simulator_fidelity(criterion):
    train, _ = _parts()
    m = estimate_moments(train.returns[-61:])
    n = 100_000
    x = sample_mvn(m, np.random.default_rng(0), size=n)
    s = m.sigma
    mean_z = np.abs(x.mean(0) - m.mu) / np.sqrt(np.diag(s) / n)
    cov = np.cov(x, rowvar=False)
    cov_se = np.sqrt((np.outer(np.diag(s), np.diag(s)) + s**2) / n)
    cov_z = np.abs(cov - s) / cov_se
    stats_ok = mean_z.max() < 4 and cov_z.max() < 4

    # tag each source row with its index so output rows can be traced back
    src = np.column_stack([np.arange(300.0), np.arange(300.0) + 0.5])
    rows_ok = runs_ok = True
    for seed in range(200):
        sizes = [(1,), (1, 2, 3), (4, 5, 6), (12,)][seed % 4]
        traj = block_bootstrap_trajectory(src, sizes, 120, trajectory_rng(seed, 0))
        idx = traj.returns[:, 0]
        rows_ok &= bool(np.all(idx == np.round(idx)) and np.all(traj.returns[:, 1] == idx + 0.5) and idx.min() >= 0 and idx.max() < 300)
        pos = 0
        for start, b in traj.params["blocks"]:
            run = idx[pos : pos + b]
            runs_ok &= bool(np.array_equal(run, start + np.arange(len(run))))
            pos += b
        runs_ok &= pos >= 120
    ok = stats_ok and rows_ok and runs_ok
    criterion(3, ok, f"mean max z {mean_z.max():.2f}, cov max z {cov_z.max():.2f} (<4); "
                     f"bootstrap rows from source {rows_ok}, blocks contiguous {runs_ok}")
    assert ok


# -- 4 ----------------------------------------------------------------------


def test_4_dp_self_consistency(criterion):
    train, _ = _parts()
    moments = estimate_moments(train)
    table = dp.solve_from_moments(moments, ENV, n_nodes=300)
    ps = dp.PortfolioSet.from_moments(moments, len(table.alphas))
    drift, vol = ps.log_params()
    g = table.grid

    n = 100_000
    z = np.random.default_rng(2024).standard_normal((n, ENV.horizon))
    x = np.full(n, np.log(ENV.initial_wealth))
    for t in range(ENV.horizon):
        node = np.clip(np.rint((x - g.log_start) / g.step), 0, g.size - 1).astype(int)
        k = np.searchsorted(ps.alphas, table.action[t, node])
        x = x + drift[k] + vol[k] * z[:, t]
    rate = float(np.mean(x >= np.log(ENV.goal_wealth) - 1e-12))
    se = math.sqrt(rate * (1 - rate) / n)
    root = table.root_value()
    mc_ok = abs(rate - root) <= 3 * se

    v = table.value
    shape_ok = bool(np.all(np.diff(v, axis=1) >= -1e-12) and v.min() >= 0 and v.max() <= 1)
    r200 = dp.solve_from_moments(moments, ENV, n_nodes=200).root_value()
    r400 = dp.solve_from_moments(moments, ENV, n_nodes=400).root_value()
    ok = mc_ok and shape_ok and abs(r400 - r200) < 0.01
    criterion(4, ok, f"MC {rate:.4f} vs value {root:.4f} ({abs(rate - root) / se:.2f} SE, tol 3); "
                     f"monotone/bounded {shape_ok}; root 200 {r200:.4f} vs 400 {r400:.4f}")
    assert ok


# -- helpers for the data-scale criteria ------------------------------------


@pytest.fixture(scope="module")
def full_table(tmp_path_factory):
    """The seven-protocol table on DATA with the stored checkpoint (None without one)."""
    if not CHECKPOINT.is_file():
        return None
    out = tmp_path_factory.mktemp("table") / "table.csv"
    rc = cli.main(["table", "--data", str(DATA), "--checkpoint", str(CHECKPOINT), "--count", str(COUNT), "--out", str(out)])
    assert rc == 0
    return json.loads(out.with_suffix(".json").read_text())


def _rates(report):
    out = {}
    for row in report["rows"]:
        out.setdefault(row["strategy"], {})[row["protocol"]] = row["success_rate"]
    return out


# -- 5 ----------------------------------------------------------------------


def test_5_benchmark_levels(criterion, tmp_path):
    if not REFERENCE:
        criterion(5, None, "needs GBWM_REFERENCE_CSV (Shiller-equivalent data); bundled stand-in is synthetic")
        pytest.skip("no reference market data supplied (set GBWM_REFERENCE_CSV)")
    out = tmp_path / "bench.csv"
    want = {"dg": 0.792, "mc": 0.807, "vb": 0.872, "dp": 0.889}
    got = {}
    for name in want:
        rc = cli.main(["evaluate", "--data", str(DATA), "--policy", name, "--protocol", "bootstrap:1",
                       "--count", str(COUNT), "--out", str(out)])
        assert rc == 0
        with out.open() as fh:
            got[name] = float(next(csv.DictReader(fh))["success_rate"])
    levels = all(abs(got[k] - want[k]) <= 0.05 for k in want)
    order = got["dp"] >= got["vb"] - 0.02 and got["vb"] >= got["mc"] - 0.02
    ok = levels and order
    detail = ", ".join(f"{k} {got[k]:.3f}" for k in want)
    criterion(5, ok, f"{detail}; within 5pp {levels}; DP>=VB>=MC (2pp slack) {order}")
    assert ok


# -- 6 ----------------------------------------------------------------------


def test_6_rl_superiority(criterion, full_table):
    if full_table is None:
        criterion(6, None, f"no checkpoint at {CHECKPOINT}; run scripts/reproduce_table.py")
        pytest.skip("trained checkpoint missing")
    rates = _rates(full_table)
    protocols = list(rates["rl"])
    short = []
    for p in protocols:
        best = max(rates[s][p] for s in ("dg", "mc", "vb", "dp"))
        if rates["rl"][p] < best - 0.02:
            short.append(f"{p} rl {rates['rl'][p]:.3f} < best {best:.3f} - 0.02")
    margin = rates["rl"]["historical"] - rates["dg"]["historical"]
    ok = not short and margin >= 0.05 and len(protocols) == 7
    rl = " ".join(f"{rates['rl'][p]:.3f}" for p in protocols)
    criterion(6, ok, f"data={DATA.name} RL [{rl}]; shortfalls: {short or 'none'}; RL-DG historical {margin:+.3f} (>= 0.05)")
    assert ok


# -- 7 ----------------------------------------------------------------------


def test_7_policy_shape(criterion, full_table):
    if full_table is None:
        criterion(7, None, f"no checkpoint at {CHECKPOINT}")
        pytest.skip("trained checkpoint missing")
    net = ActorCritic.load(CHECKPOINT)
    ts, ws, alpha = export_policy_grid(net, n_time=11, n_wealth=13, max_wealth_ratio=1.2)
    lo, hi = alpha[9, 7], alpha[9, 12]  # t/T = 0.9; W/W_G = 0.7 and 1.2
    assert ts[9] == pytest.approx(0.9) and ws[7] == pytest.approx(0.7) and ws[12] == pytest.approx(1.2)
    glide = np.array(full_table["glide_paths"]["rl"])
    early, late = glide[:30].mean(), glide[-30:].mean()
    ok = lo > hi and early > late
    criterion(7, ok, f"alpha(0.9, 0.7) {lo:.3f} > alpha(0.9, 1.2) {hi:.3f}; glide first30 {early:.3f} > last30 {late:.3f}")
    assert ok


# -- 8 ----------------------------------------------------------------------


def test_8_sweeps(criterion, tmp_path):
    best = {}
    curves = {}
    for family in ("mc", "vb"):
        out = tmp_path / f"{family}.csv"
        assert cli.main(["sweep", "--data", str(DATA), "--strategy", family, "--out", str(out)]) == 0
        best[family] = json.loads(Path(f"{out}.meta.json").read_text())["best"]
        with out.open() as fh:
            curves[family] = [(float(r["parameter"]), float(r["success_rate"])) for r in csv.DictReader(fh)]
    vb = curves["vb"]
    grid = [p for p, _ in vb]
    i = grid.index(best["vb"])
    # near-interior: not on either end of the grid
    interior = 0 < i < len(grid) - 1
    mc_flat = len({r for _, r in curves["mc"]}) == 1
    ok = best["mc"] <= 0.008 and interior
    note = " (flat curve: every gamma clamps to the same weight)" if mc_flat else ""
    criterion(8, ok, f"Merton argmax {best['mc']} (<= 0.008){note}; VB argmax {best['vb']} at grid index {i}/{len(grid) - 1}")
    assert ok


# -- 9 ----------------------------------------------------------------------


def _run_twice(tmp_path, args, name):
    # same output path both times: sidecars record it
    out = tmp_path / name
    digests = []
    for _ in range(2):
        assert cli.main([*args, "--data", str(STAND_IN), "--out", str(out)]) == 0
        files = sorted(p for p in out.parent.iterdir() if p.name.startswith(out.stem))
        digests.append({p.name: p.read_bytes() for p in files})
        for p in files:
            p.unlink()
    return digests[0] == digests[1] and bool(digests[0])


def test_9_determinism(criterion, tmp_path):
    ckpt = tmp_path / "agent.json"
    runs = {
        "simulate": (["simulate", "--kind", "simulated", "--sizes", "24", "36", "48", "--count", "50", "--seed", "3"], "sim.csv"),
        "bootstrap": (["simulate", "--kind", "bootstrap", "--sizes", "1", "2", "3", "--count", "50", "--seed", "3"], "boot.csv"),
        "dp-solve": (["dp-solve", "--nodes", "200"], "dp.csv"),
        "sweep": (["sweep", "--strategy", "vb", "--grid", "0.004,0.009", "--count", "300"], "sweep.csv"),
        "train": (["train", "--episodes", "640", "--seed", "5"], "agent.json"),
        "evaluate": (["evaluate", "--policy", "vb:0.009", "--protocol", "bootstrap:4,5,6", "--count", "300"], "eval.csv"),
        "table": (["table", "--count", "120", "--checkpoint", str(ckpt)], "table.csv"),
        "spread": (["spread", "--windows", "24", "60"], "spread.csv"),
    }
    cli.main(["train", "--episodes", "320", "--seed", "1", "--data", str(STAND_IN), "--out", str(ckpt)])
    same = {name: _run_twice(tmp_path / name, args, out) for name, (args, out) in runs.items()}
    ok = all(same.values())
    bad = [k for k, v in same.items() if not v]
    criterion(9, ok, f"{len(same)} commands rerun byte-identically; mismatches: {bad or 'none'}")
    assert ok
