"""PPO with a Beta-distributed allocation and hand-written gradients.

Actor and critic are separate 2-6-6 ReLU networks. The actor emits two raw
scores (z1, z2) read as a mode m = sigmoid(z1) and a concentration
c = softplus(z2); the Beta shapes are a = 1 + m c, b = 1 + (1 - m) c (plus a
1e-6 floor), so the density has a unique interior mode equal to m.

Parametrising a and b directly lets one shape collapse onto its floor, where
the softplus gradient vanishes and the mode sticks at a bound.

Both networks see the observation shifted by OBS_CENTER, i.e. (t/T - 1/2,
W/W_G - 1). Without the shift every ReLU feature grows with wealth, so the
early "more stocks" gradient also tilts the allocation upward in wealth and
training settles on a near-constant all-stock policy.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import betaln, digamma, polygamma

from .env import BatchEnv, EnvConfig
from .neural import Adam, Mlp, backward, flatten, forward, init_mlp, mlp_from_dict, mlp_to_dict, sgd_adam_step
from .strategies import Policy

log = logging.getLogger(__name__)

SHAPE_FLOOR = 1.0 + 1e-6
ACTION_EPS = 1e-9
CHECKPOINT_FORMAT = "gbwm-actor-critic/1"
OBS_CENTER = np.array([0.5, 1.0])


@dataclass
class PpoConfig:
    learning_rate: float = 1e-4
    gamma: float = 1.0
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    epochs_per_update: int = 10
    episodes_per_batch: int = 256
    minibatch_size: int = 256
    total_episodes: int = 200_000
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    target_kl: float = 0.05
    hidden: tuple = (6, 6)
    eval_every: int = 7  # updates between held-out evaluations
    eval_episodes: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def beta_logpdf(x, a, b):
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def beta_entropy(a, b):
    return (
        betaln(a, b)
        - (a - 1.0) * digamma(a)
        - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
    )


@dataclass
class ActorCritic:
    actor: Mlp
    critic: Mlp

    @classmethod
    def init(cls, rng: np.random.Generator, hidden=(6, 6)) -> "ActorCritic":
        # small last actor layer: initial policy is near-uniform over states
        actor = init_mlp([2, *hidden, 2], rng, out_scale=0.01)
        critic = init_mlp([2, *hidden, 1], rng)
        return cls(actor, critic)

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.actor.copy(), self.critic.copy())

    def shapes(self, obs):
        """Beta parameters (a, b), the raw scores and the forward cache."""
        raw, cache = forward(self.actor, np.atleast_2d(obs) - OBS_CENTER)
        m = sigmoid(raw[:, 0])
        c = softplus(raw[:, 1])
        return SHAPE_FLOOR + m * c, SHAPE_FLOOR + (1.0 - m) * c, raw, cache

    def value(self, obs) -> np.ndarray:
        out, _ = forward(self.critic, np.atleast_2d(obs) - OBS_CENTER)
        return out[:, 0]

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "obs_center": OBS_CENTER.tolist(),
            "actor": mlp_to_dict(self.actor),
            "critic": mlp_to_dict(self.critic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorCritic":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unknown checkpoint format {d.get('format')!r}")
        if d.get("obs_center", OBS_CENTER.tolist()) != OBS_CENTER.tolist():
            raise ValueError("checkpoint was trained with a different observation centring")
        return cls(mlp_from_dict(d["actor"]), mlp_from_dict(d["critic"]))

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d["meta"] = extra
        Path(path).write_text(json.dumps(d, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ActorCritic":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_action(policy: ActorCritic, obs, rng: np.random.Generator):
    """Draw alpha ~ Beta(a, b); returns (alpha, log_prob) arrays."""
    a, b, _, _ = policy.shapes(obs)
    x = np.clip(rng.beta(a, b), ACTION_EPS, 1.0 - ACTION_EPS)
    return x, beta_logpdf(x, a, b)


def mode_action(policy: ActorCritic, obs) -> np.ndarray:
    a, b, _, _ = policy.shapes(obs)
    return (a - 1.0) / (a + b - 2.0)


# -- rollouts ---------------------------------------------------------------


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (E, T, 2)
    actions: np.ndarray  # (E, T)
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray  # (E,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_episodes(self) -> int:
        return self.obs.shape[0]

    def flat(self, name: str) -> np.ndarray:
        x = getattr(self, name)
        return x.reshape(-1, *x.shape[2:])


Generator = Callable[[int, int], np.ndarray]  # (count, first_index) -> (count, T, 2)


def collect_rollouts(
    policy: ActorCritic,
    generator: Generator,
    env_config: EnvConfig,
    n_episodes: int,
    rng: np.random.Generator,
    first_episode: int = 0,
) -> RolloutBuffer:
    T = env_config.horizon
    trajectories = generator(n_episodes, first_episode)
    env = BatchEnv(env_config, trajectories)
    E = n_episodes
    obs = np.empty((E, T, 2))
    actions = np.empty((E, T))
    log_probs = np.empty((E, T))
    values = np.empty((E, T))
    rewards = np.zeros((E, T))
    dones = np.zeros((E, T), dtype=bool)
    for t in range(T):
        o = env.observation()
        obs[:, t] = o
        actions[:, t], log_probs[:, t] = sample_action(policy, o, rng)
        values[:, t] = policy.value(o)
        rewards[:, t], done = env.step(actions[:, t])
        dones[:, t] = done
    ids = np.arange(first_episode, first_episode + E)
    return RolloutBuffer(obs, actions, log_probs, values, rewards, dones, ids)


def gae(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates over (E, T) arrays; value after a done is 0."""
    E, T = rewards.shape
    adv = np.zeros((E, T))
    running = np.zeros(E)
    next_value = np.zeros(E)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * next_value * live - values[:, t]
        running = delta + gamma * lam * live * running
        adv[:, t] = running
        next_value = values[:, t]
    return adv


def compute_advantages(buffer: RolloutBuffer, gamma: float, lam: float, normalize: bool = True) -> RolloutBuffer:
    raw = gae(buffer.rewards, buffer.values, buffer.dones, gamma, lam)
    buffer.returns = raw + buffer.values
    if normalize:
        buffer.advantages = (raw - raw.mean()) / (raw.std() + 1e-8)
    else:
        buffer.advantages = raw
    return buffer


# -- loss and update --------------------------------------------------------


@dataclass
class LossTerms:
    total: float
    policy: float  # negative clipped surrogate
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss_and_grads(policy: ActorCritic, obs, actions, old_log_probs, advantages, returns, config: PpoConfig):
    """Loss = -surrogate + value_coef * MSE - entropy_coef * entropy, and its gradients.

    Returns (LossTerms, actor_grads, critic_grads).
    """
    B = len(actions)
    eps = config.clip_eps
    a, b, raw, acache = policy.shapes(obs)
    logp = beta_logpdf(actions, a, b)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    unclipped_term = ratio * advantages
    clipped_term = clipped * advantages
    surrogate = np.minimum(unclipped_term, clipped_term)
    active = unclipped_term <= clipped_term

    ent = beta_entropy(a, b)
    v, ccache = forward(policy.critic, np.atleast_2d(obs) - OBS_CENTER)
    v = v[:, 0]
    v_err = v - returns

    # d loss / d log_prob
    g_logp = -(advantages * ratio * active) / B
    psi_ab = digamma(a + b)
    dlogp_da = np.log(actions) - digamma(a) + psi_ab
    dlogp_db = np.log1p(-actions) - digamma(b) + psi_ab
    g_a = g_logp * dlogp_da
    g_b = g_logp * dlogp_db
    if config.entropy_coef:
        tri_ab = polygamma(1, a + b)
        g_ent = -config.entropy_coef / B
        g_a = g_a + g_ent * (-(a - 1.0) * polygamma(1, a) + (a + b - 2.0) * tri_ab)
        g_b = g_b + g_ent * (-(b - 1.0) * polygamma(1, b) + (a + b - 2.0) * tri_ab)
    m = sigmoid(raw[:, 0])
    c = softplus(raw[:, 1])
    g_raw = np.column_stack([(g_a - g_b) * c * m * (1.0 - m), (g_a * m + g_b * (1.0 - m)) * sigmoid(raw[:, 1])])
    actor_grads = backward(policy.actor, acache, g_raw)
    critic_grads = backward(policy.critic, ccache, (2.0 * config.value_coef / B * v_err)[:, None])

    p_loss = -float(surrogate.mean())
    v_loss = float(np.mean(v_err**2))
    e_mean = float(ent.mean())
    log_ratio = logp - old_log_probs
    terms = LossTerms(
        total=p_loss + config.value_coef * v_loss - config.entropy_coef * e_mean,
        policy=p_loss,
        value=v_loss,
        entropy=e_mean,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        approx_kl=float(np.mean(np.expm1(log_ratio) - log_ratio)),
    )
    return terms, actor_grads, critic_grads


@dataclass
class UpdateStats:
    epochs_run: int
    minibatches: int
    first: LossTerms
    last: LossTerms
    max_kl: float
    early_stop: bool


class TrainingError(RuntimeError):
    pass


@dataclass
class Optimizers:
    actor: Adam
    critic: Adam

    @classmethod
    def create(cls, lr: float) -> "Optimizers":
        return cls(Adam(lr=lr), Adam(lr=lr))


def ppo_update(
    policy: ActorCritic,
    buffer: RolloutBuffer,
    config: PpoConfig,
    optim: Optimizers,
    rng: np.random.Generator,
) -> UpdateStats:
    if buffer.advantages is None:
        raise ValueError("compute_advantages() must run before ppo_update()")
    obs = buffer.flat("obs")
    act = buffer.flat("actions")
    old = buffer.flat("log_probs")
    adv = buffer.flat("advantages")
    ret = buffer.flat("returns")
    N = len(act)
    mb = min(config.minibatch_size, N)
    first = last = None
    max_kl = 0.0
    count = 0
    epochs = 0
    stop = False
    for _ in range(config.epochs_per_update):
        perm = rng.permutation(N)
        for s in range(0, N, mb):
            idx = perm[s : s + mb]
            terms, ga, gc = ppo_loss_and_grads(policy, obs[idx], act[idx], old[idx], adv[idx], ret[idx], config)
            ga, gc = flatten(ga), flatten(gc)
            if not (np.isfinite(terms.total) and np.isfinite(ga).all() and np.isfinite(gc).all()):
                raise TrainingError(f"non-finite loss during update: {terms}")
            first = first or terms
            last = terms
            max_kl = max(max_kl, terms.approx_kl)
            if terms.approx_kl > config.target_kl:
                stop = True
                break
            sgd_adam_step(policy.actor, ga, optim.actor)
            sgd_adam_step(policy.critic, gc, optim.critic)
            count += 1
        epochs += 1
        if stop:
            break
    return UpdateStats(epochs, count, first, last, max_kl, stop)


# -- training ---------------------------------------------------------------


class RLPolicy(Policy):
    """Batched evaluation wrapper: mode action by default, sampled if ``rng`` is given."""

    name = "rl"

    def __init__(self, net: ActorCritic, rng: np.random.Generator | None = None):
        self.net = net
        self.rng = rng

    def act(self, t, wealth):
        obs = np.column_stack([np.full(len(wealth), t / self.config.horizon), wealth])
        if self.rng is None:
            return mode_action(self.net, obs)
        return sample_action(self.net, obs, self.rng)[0]


def deterministic_success(net: ActorCritic, trajectories: np.ndarray, env_config: EnvConfig) -> float:
    env = BatchEnv(env_config, trajectories)
    reward = None
    for t in range(env_config.horizon):
        reward, _ = env.step(mode_action(net, env.observation()))
    return float(reward.mean())


@dataclass
class TrainResult:
    policy: ActorCritic  # best held-out checkpoint
    final: ActorCritic
    curve: list[dict] = field(default_factory=list)
    best_episode: int = 0
    best_success: float = float("nan")


def train(
    config: PpoConfig,
    generator: Generator,
    env_config: EnvConfig,
    eval_trajectories: np.ndarray | None = None,
    progress: Callable[[dict], None] | None = None,
    nan_dump: str | Path | None = None,
) -> TrainResult:
    """Collect/update loop; keeps the checkpoint with the best held-out success rate."""
    rng = np.random.default_rng(config.seed)
    policy = ActorCritic.init(rng, config.hidden)
    optim = Optimizers.create(config.learning_rate)
    if eval_trajectories is None:
        # held-out indices far beyond any training index
        eval_trajectories = generator(config.eval_episodes, 10**9)

    curve: list[dict] = []
    best = policy.copy()
    best_rate = deterministic_success(policy, eval_trajectories, env_config)
    best_episode = 0
    curve.append({"episode": 0, "eval_success_rate": best_rate})
    episodes = 0
    update = 0
    last_good = policy.copy()
    while episodes < config.total_episodes:
        n = min(config.episodes_per_batch, config.total_episodes - episodes)
        buf = collect_rollouts(policy, generator, env_config, n, rng, first_episode=episodes)
        compute_advantages(buf, config.gamma, config.gae_lambda)
        try:
            stats = ppo_update(policy, buf, config, optim, rng)
        except TrainingError:
            if nan_dump is not None:
                last_good.save(nan_dump, {"episode": episodes, "reason": "non-finite loss"})
            raise
        episodes += n
        update += 1
        if not (np.isfinite(policy.actor.flat).all() and np.isfinite(policy.critic.flat).all()):
            if nan_dump is not None:
                last_good.save(nan_dump, {"episode": episodes, "reason": "non-finite parameters"})
            raise TrainingError(f"non-finite parameters after episode {episodes}")
        last_good = policy.copy()
        if update % config.eval_every == 0 or episodes >= config.total_episodes:
            rate = deterministic_success(policy, eval_trajectories, env_config)
            row = {
                "episode": episodes,
                "eval_success_rate": rate,
                "train_success_rate": float(buf.rewards[:, -1].mean()),
                "policy_loss": stats.last.policy,
                "value_loss": stats.last.value,
                "entropy": stats.last.entropy,
                "clip_fraction": stats.last.clip_fraction,
                "approx_kl": stats.max_kl,
                "epochs_run": stats.epochs_run,
            }
            curve.append(row)
            if progress:
                progress(row)
            log.debug("episode %d eval success %.4f", episodes, rate)
            if rate > best_rate:
                best_rate, best, best_episode = rate, policy.copy(), episodes
    return TrainResult(best, policy, curve, best_episode, best_rate)


def write_curve(curve: list[dict], path) -> None:
    keys = [
        "episode", "eval_success_rate", "train_success_rate", "policy_loss", "value_loss",
        "entropy", "clip_fraction", "approx_kl", "epochs_run",
    ]
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n", restval="")
        w.writeheader()
        for row in curve:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def export_policy_grid(policy: ActorCritic, n_time: int = 25, n_wealth: int = 41, max_wealth_ratio: float = 2.0):
    """Mode actions over (t/T, W/W_G) in [0, 1] x [0, max_wealth_ratio].

    Returns (time_fractions, wealth_ratios, alpha) with alpha of shape (n_time, n_wealth).
    """
    ts = np.linspace(0.0, 1.0, n_time)
    ws = np.linspace(0.0, max_wealth_ratio, n_wealth)
    tt, ww = np.meshgrid(ts, ws, indexing="ij")
    alpha = mode_action(policy, np.column_stack([tt.ravel(), ww.ravel()])).reshape(n_time, n_wealth)
    return ts, ws, alpha


def write_policy_grid(ts, ws, alpha, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_frac", "wealth_ratio", "alpha"])
        for i, t in enumerate(ts):
            for j, x in enumerate(ws):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(alpha[i, j]))])


def config_dict(config: PpoConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
