"""Q-learning with replay, adaptive reward-sparsity sampling, reward
injection, target clipping and a periodically synced target network.

One training iteration is one accepted exploration transition followed by one
network update; epsilon decays by ``1/num_episodes`` per iteration, so it
reaches zero exactly when training ends.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .env import AttentionEnv, EnvConfig, Transition
from .qnet import (AdamState, DuelingQNet, NetConfig, build_net, copy_params, entry_loss,
                   q_values, save_checkpoint, sgd_step)
from .synthdata import Corpus, Label

log = logging.getLogger(__name__)

LOG_KEYS = ("episode", "updates", "loss", "epsilon", "p_pos", "positive_fraction",
            "mean_return", "episodes_completed", "buffer")


@dataclass(frozen=True)
class TrainConfig:
    num_episodes: int = 2000
    gamma: float = 0.9
    lr: float = 1e-3
    batch_size: int = 32
    replay_capacity: int = 50_000
    target_sync_every: int = 500
    target_positive_reward_prob: float = 0.5
    p_pos_init: float = 0.5
    p_pos_step: float = 0.01
    reward_window: int = 1000
    epsilon_init: float = 1.0
    replay_mix: float = 0.5
    # uniformly random transitions collected before the first update
    warmup: int = 0
    inject: str = "action"
    max_rejects: int = 10_000
    grad_clip: float = 10.0
    log_every: int = 50
    seed: int = 0
    net: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.inject not in ("action", "full"):
            raise ValueError("inject must be 'action' or 'full'")
        if self.num_episodes < 0 or self.warmup < 0 or self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("num_episodes and warmup must be non-negative, batch_size and replay_capacity positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def append(self, tr) -> None:
        self._items.append(tr)

    def random_sample(self, rng: np.random.Generator):
        return self._items[int(rng.integers(len(self._items)))]

    def sample(self, rng: np.random.Generator, k: int) -> list:
        idx = rng.integers(len(self._items), size=k)
        return [self._items[int(i)] for i in idx]


class SparsityController:
    """Tracks recently accepted rewards and the probability of accepting a
    positive-reward candidate."""

    def __init__(self, window: int = 1000, p_pos: float = 0.5, step: float = 0.01,
                 bounds: tuple[float, float] = (0.05, 0.95)):
        self.reward_history: deque = deque(maxlen=window)
        self.bounds = bounds
        self.step = step
        self.p_pos = float(np.clip(p_pos, *bounds))

    def record(self, reward: float) -> None:
        self.reward_history.append(reward)

    def positive_fraction(self) -> float:
        if not self.reward_history:
            return 0.0
        return sum(r > 0 for r in self.reward_history) / len(self.reward_history)


def update_sparsity(sc: SparsityController, target_p: float) -> SparsityController:
    if sc.positive_fraction() > target_p:
        sc.p_pos -= sc.step
    else:
        sc.p_pos += sc.step
    sc.p_pos = min(max(sc.p_pos, sc.bounds[0]), sc.bounds[1])
    return sc


def accept_candidate(reward: float, u: float, p_pos: float) -> bool:
    return (reward > 0 and u < p_pos) or (reward < 0 and u >= p_pos)


def epsilon_decay(epsilon: float, num_episodes: int) -> float:
    if num_episodes <= 0:
        raise ValueError("num_episodes must be positive")
    step = 1.0 / num_episodes
    e = epsilon - step
    # absorb float residue so that exactly num_episodes decays land on 0
    return 0.0 if e < 0.5 * step else e


def inject_known_q(target: np.ndarray, label, r_correct: float = 1.0,
                   r_incorrect: float = -1.0) -> np.ndarray:
    """Overwrite the two classify slots (the last two entries) with the
    rewards the label dictates."""
    label = Label.parse(label)
    out = np.array(target, dtype=np.float64, copy=True)
    k = out.shape[-1] - 2
    out[..., k + int(label)] = r_correct
    out[..., k + 1 - int(label)] = r_incorrect
    return out


class QAgent(Protocol):
    def q(self, observations: Sequence) -> np.ndarray: ...
    def q_target(self, observations: Sequence) -> np.ndarray: ...
    def update(self, observations: Sequence, sample_idx, action_idx, targets) -> float: ...
    def sync(self) -> None: ...


class NetAgent:
    """Main + target dueling networks with an Adam optimizer."""

    def __init__(self, net: DuelingQNet, lr: float = 1e-3, grad_clip: float = 10.0):
        self.net = net
        self.target = DuelingQNet(net.cfg).to(next(net.parameters()).dtype)
        copy_params(net, self.target)
        self.opt = AdamState()
        self.lr = lr
        self.grad_clip = grad_clip

    def q(self, observations):
        return q_values(self.net, observations)

    def q_target(self, observations):
        return q_values(self.target, observations)

    def update(self, observations, sample_idx, action_idx, targets) -> float:
        loss = entry_loss(self.net, observations, sample_idx, action_idx, targets)
        self.net.zero_grad(set_to_none=False)
        loss.backward()
        grads = {n: p.grad.detach().double().numpy() for n, p in self.net.named_parameters()}
        sgd_step(self.net, grads, self.opt, self.lr, self.grad_clip)
        return float(loss.item())

    def sync(self) -> None:
        copy_params(self.net, self.target)


def sync_target(agent, step: int, every: int) -> bool:
    """Hard-copy main into target when ``step`` is a multiple of ``every``."""
    if every > 0 and step % every == 0:
        agent.sync()
        return True
    return False


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Greedy action among allowed ones; ties go to the lowest index."""
    return int(np.argmax(np.where(mask, q, -np.inf)))


def q_targets(transitions: Sequence[Transition], agent, env, gamma: float,
              q_min: float, q_max: float) -> np.ndarray:
    """Bootstrapped targets ``r + gamma * max_a' Q_target(s', a')`` over valid
    ``a'``, or ``r`` for terminal transitions, clipped to ``[q_min, q_max]``."""
    y = np.array([tr.reward for tr in transitions], dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite reward")
    live = [i for i, tr in enumerate(transitions) if not tr.done]
    if live:
        obs = [env.observe(transitions[i].state_after) for i in live]
        qn = agent.q_target(obs)
        for row, i in enumerate(live):
            mask = env.action_mask(transitions[i].state_after)
            y[i] += gamma * float(np.max(qn[row][mask]))
    return np.clip(y, q_min, q_max)


def q_target(tr: Transition, agent, env, gamma: float, q_min: float, q_max: float) -> float:
    return float(q_targets([tr], agent, env, gamma, q_min, q_max)[0])


class Explorer:
    """Owns the live environment episode used for fresh interactions."""

    def __init__(self, env, clip_source: Callable[[np.random.Generator], tuple], rng):
        self.env = env
        self.clip_source = clip_source
        self.rng = rng
        self.state = None
        self.episode_return = 0.0
        self.completed_returns: list[float] = []

    def fresh(self, agent, epsilon: float) -> Transition:
        if self.state is None:
            clip, clip_id = self.clip_source(self.rng)
            self.state, _ = self.env.reset(clip, clip_id)
            self.episode_return = 0.0
        mask = self.env.action_mask(self.state)
        if self.rng.random() < epsilon:
            action = int(self.rng.choice(np.flatnonzero(mask)))
        else:
            q = agent.q([self.env.observe(self.state)])[0]
            action = masked_argmax(q, mask)
        tr, nxt = self.env.step(self.state, action)
        self.episode_return += tr.reward
        self.state = nxt
        if tr.done:
            self.completed_returns.append(self.episode_return)
        return tr


def explore_step(explorer, agent, epsilon: float, sparsity: SparsityController,
                 buffer: ReplayBuffer, rng: np.random.Generator, replay_mix: float = 0.5,
                 max_rejects: int = 10_000):
    """Draw candidates (fresh w.p. ``1 - replay_mix`` or replayed) until one
    passes the reward-sparsity acceptance test; record and return it."""
    for _ in range(max_rejects):
        if len(buffer) and rng.random() < replay_mix:
            tr = buffer.random_sample(rng)
        else:
            tr = explorer.fresh(agent, epsilon)
        if accept_candidate(tr.reward, rng.random(), sparsity.p_pos):
            sparsity.record(tr.reward)
            buffer.append(tr)
            return tr
    raise RuntimeError(f"no candidate accepted after {max_rejects} draws "
                       f"(p_pos={sparsity.p_pos:.3f}); check reward signs and p_pos bounds")


def network_update(batch: Sequence[Transition], agent, env, cfg: TrainConfig,
                   q_min: float, q_max: float, n_regions: int,
                   r_correct: float, r_incorrect: float) -> float:
    y = q_targets(batch, agent, env, cfg.gamma, q_min, q_max)
    s_idx, a_idx, t_vals = [], [], []
    for i, tr in enumerate(batch):
        known = inject_known_q(np.zeros(n_regions + 2), tr.label, r_correct, r_incorrect)
        if cfg.inject == "full":
            s_idx += [i, i]
            a_idx += [n_regions, n_regions + 1]
            t_vals += [known[n_regions], known[n_regions + 1]]
            if tr.action < n_regions:
                s_idx.append(i)
                a_idx.append(tr.action)
                t_vals.append(y[i])
        else:
            s_idx.append(i)
            a_idx.append(tr.action)
            t_vals.append(known[tr.action] if tr.action >= n_regions else y[i])
    obs = [env.observe(tr.state_before) for tr in batch]
    return agent.update(obs, s_idx, a_idx, t_vals)


@dataclass
class TrainResult:
    agent: object
    log: list
    epsilon: float
    sparsity: SparsityController
    buffer: ReplayBuffer


def run_training(cfg: TrainConfig, env, agent, clip_source, *, q_min: float, q_max: float,
                 n_regions: int, r_correct: float = 1.0, r_incorrect: float = -1.0,
                 on_log: Callable[[dict], None] | None = None) -> TrainResult:
    """The shared loop behind :func:`train` and tabular training."""
    rng = np.random.default_rng(cfg.seed)
    buffer = ReplayBuffer(cfg.replay_capacity)
    sparsity = SparsityController(cfg.reward_window, cfg.p_pos_init, cfg.p_pos_step)
    explorer = Explorer(env, clip_source, rng)
    epsilon = cfg.epsilon_init
    records = []
    losses = []
    updates = 0
    # a buffer that grows by one transition per update gets memorized; seed it
    # with random-policy experience first
    for _ in range(cfg.warmup if cfg.num_episodes else 0):
        explore_step(explorer, agent, 1.0, sparsity, buffer, rng, 0.0, cfg.max_rejects)
        update_sparsity(sparsity, cfg.target_positive_reward_prob)
    n_done_logged = len(explorer.completed_returns)
    for episode in range(1, cfg.num_episodes + 1):
        explore_step(explorer, agent, epsilon, sparsity, buffer, rng, cfg.replay_mix,
                     cfg.max_rejects)
        update_sparsity(sparsity, cfg.target_positive_reward_prob)
        batch = buffer.sample(rng, min(cfg.batch_size, len(buffer)))
        loss = network_update(batch, agent, env, cfg, q_min, q_max, n_regions,
                              r_correct, r_incorrect)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at episode {episode}")
        losses.append(loss)
        updates += 1
        sync_target(agent, updates, cfg.target_sync_every)
        epsilon = epsilon_decay(epsilon, cfg.num_episodes)
        if episode % cfg.log_every == 0 or episode == cfg.num_episodes:
            done = explorer.completed_returns[n_done_logged:]
            n_done_logged = len(explorer.completed_returns)
            rec = {
                "episode": episode,
                "updates": updates,
                "loss": float(np.mean(losses)),
                "epsilon": float(epsilon),
                "p_pos": float(sparsity.p_pos),
                "positive_fraction": float(sparsity.positive_fraction()),
                "mean_return": float(np.mean(done)) if done else None,
                "episodes_completed": len(explorer.completed_returns),
                "buffer": len(buffer),
            }
            losses = []
            records.append(rec)
            if on_log:
                on_log(rec)
    return TrainResult(agent, records, epsilon, sparsity, buffer)


def corpus_clip_source(corpus: Corpus, indices: Sequence[int]):
    if not indices:
        raise ValueError("training split is empty")
    indices = list(indices)

    def draw(rng):
        i = indices[int(rng.integers(len(indices)))]
        return corpus.get(i), i
    return draw


def net_config_for(env_cfg: EnvConfig, overrides: dict | None = None, stream: str = "rgb") -> NetConfig:
    kw = dict(stream=stream, t_in=env_cfg.t_in, h_in=env_cfg.h_in, w_in=env_cfg.w_in,
              n_steps=env_cfg.n_max_steps, n_regions=env_cfg.n_regions)
    kw.update(overrides or {})
    return NetConfig.from_dict(kw)


def train(cfg: TrainConfig, corpus: Corpus, env_cfg: EnvConfig, out_dir=None,
          stream: str = "rgb") -> TrainResult:
    """Train a dueling Q-network on the corpus' train split.

    With ``out_dir`` the final checkpoint goes to ``checkpoint.ssha`` and the
    JSON-lines log to ``train_log.jsonl``.
    """
    if stream != "rgb" and not env_cfg.use_flow:
        env_cfg = dataclasses.replace(env_cfg, use_flow=True)
    torch.manual_seed(cfg.seed)
    net_cfg = net_config_for(env_cfg, cfg.net, stream)
    net = build_net(net_cfg, seed=cfg.seed)
    agent = NetAgent(net, cfg.lr, cfg.grad_clip)
    env = AttentionEnv(env_cfg, cache_size=2048)
    source = corpus_clip_source(corpus, corpus.indices("train"))

    log_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")

    def on_log(rec):
        log.info("episode %(episode)d loss %(loss).4f eps %(epsilon).3f p_pos %(p_pos).2f", rec)
        if log_fh:
            log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log_fh.flush()

    try:
        result = run_training(cfg, env, agent, source, q_min=env_cfg.q_min, q_max=env_cfg.q_max,
                              n_regions=env_cfg.n_regions, r_correct=env_cfg.r_correct,
                              r_incorrect=env_cfg.r_incorrect, on_log=on_log)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "checkpoint.ssha", agent.net, agent.opt, extra={
            "env": env_cfg.to_dict(), "train": cfg.to_dict(),
        })
    return result
