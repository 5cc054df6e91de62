"""PPO with GAE over cDFA-augmented environments.

Rollout workers are environment instances stepped in lockstep, each with its
own RNG stream; one batched forward pass serves all of them per step.
Parameters are only written by :func:`ppo_update`, between rollouts.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..automata import Cdfa
from ..envs import DUMMY_HORIZON, LETTER_HORIZON, DummyEnv, LetterEnv, LetterLayout
from ..featurize import featurize_cdfa
from ..neural import autodiff as ad
from ..neural.nets import Agent, AgentSpec, GraphBatch
from ..neural.params import RMSprop
from ..tasks import RadConfig, TaskSpec, parse_spec, sample_class, stream
from .config import TrainConfig

log = logging.getLogger(__name__)

POLICY_STREAM = 10_000  # stream index offset separating policy noise from env streams
EVAL_STREAM = 20_000

Sampler = Callable[[np.random.Generator], Cdfa]


def gae(rewards, values, dones, last_values, discount: float, lam: float):
    """Generalized advantage estimates and returns over a time-major rollout.

    ``rewards``, ``values`` and ``dones`` are (T, ...) arrays; ``last_values``
    bootstraps the step after the final one. ``dones[t]`` marks that the
    episode ended at step t, cutting both the bootstrap and the recursion.
    """
    rewards, values, dones = (np.asarray(x, dtype=np.float64) for x in (rewards, values, dones))
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    last_values = np.asarray(last_values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(last_values)
    next_value = last_values
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + discount * next_value * live - values[t]
        running = delta + discount * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def make_sampler(spec: TaskSpec | str, alphabet_size: int, rad: Optional[RadConfig] = None) -> Sampler:
    spec = parse_spec(spec) if isinstance(spec, str) else spec
    return partial(sample_class, spec, alphabet_size=alphabet_size, rad=rad)


def make_env(cfg: TrainConfig, rng: np.random.Generator, task: Optional[str] = None,
             layout: Optional[LetterLayout] = None, sampler: Optional[Sampler] = None):
    """Environment for ``cfg``; ``sampler`` overrides the task spec when given."""
    sampler = sampler or make_sampler(task or cfg.task, cfg.alphabet_size, cfg.rad())
    if cfg.env == "dummy":
        return DummyEnv(sampler, rng, cfg.horizon or DUMMY_HORIZON)
    return LetterEnv(sampler, rng, cfg.horizon or LETTER_HORIZON,
                     resample_layout=cfg.resample_layout, free_start=cfg.free_start, layout=layout)


def agent_spec(cfg: TrainConfig) -> AgentSpec:
    if cfg.env == "dummy":
        return AgentSpec(feature_dim=4 + cfg.alphabet_size, num_actions=cfg.alphabet_size,
                         pretraining_heads=True, reinject=cfg.encoder_reinject)
    return AgentSpec(feature_dim=4 + cfg.alphabet_size, num_actions=LetterEnv.num_actions,
                     obs_shape=LetterEnv.obs_shape, reinject=cfg.encoder_reinject)


def build_agent(cfg: TrainConfig) -> Agent:
    agent = Agent(agent_spec(cfg), seed=cfg.seed)
    if cfg.encoder_mode != "fresh":
        agent.store.load(cfg.encoder_checkpoint, prefix="encoder.")
        if cfg.encoder_mode == "pretrained_frozen":
            agent.freeze_encoder()
    return agent


def _obs_batch(obs_list) -> Optional[np.ndarray]:
    return None if obs_list[0].size == 0 else np.stack(obs_list)


def _sample_actions(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(logp.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), logp.shape[1] - 1)


def act(agent: Agent, cdfas, obs_list, rng: Optional[np.random.Generator] = None):
    """One batched forward pass; greedy when ``rng`` is None."""
    with ad.no_grad():
        batch = GraphBatch.from_graphs([featurize_cdfa(c) for c in cdfas])
        emb = agent.embed(batch)
        logp, value = agent.heads(emb, _obs_batch(obs_list))
    actions = logp.data.argmax(axis=1) if rng is None else _sample_actions(logp.data, rng)
    return actions, logp.data, value.data, emb.data


@dataclass
class RolloutBuffer:
    cdfas: list = field(default_factory=list)  # (T, W) nested
    obs: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.actions) * (len(self.actions[0]) if self.actions else 0)

    def finish(self, last_values, discount, lam):
        self.advantages, self.returns = gae(
            np.array(self.rewards), np.array(self.values), np.array(self.dones),
            last_values, discount, lam)

    def flat(self):
        """Time-major rollout flattened to per-sample arrays/lists."""
        if self.advantages is None:
            raise RuntimeError("advantages must be computed before the update")
        cdfas = [c for row in self.cdfas for c in row]
        obs = [o for row in self.obs for o in row]
        return dict(
            cdfas=cdfas, obs=obs,
            embeddings=np.concatenate(self.embeddings),
            actions=np.concatenate(self.actions),
            logps=np.concatenate(self.logps),
            values=np.concatenate(self.values),
            advantages=self.advantages.reshape(-1),
            returns=self.returns.reshape(-1),
        )

    def clear(self):
        self.__init__()


class Workers:
    """Environment instances with auto-reset and episode bookkeeping."""

    def __init__(self, cfg: TrainConfig, layout: Optional[LetterLayout] = None, stream_base: int = 0,
                 sampler: Optional[Sampler] = None):
        self.envs = [make_env(cfg, stream(cfg.seed, stream_base + i), layout=layout, sampler=sampler)
                     for i in range(cfg.workers)]
        self.finished: list[tuple[str, int, float]] = []  # (outcome, length, return)
        self.results = [self._reset(env) for env in self.envs]

    def _reset(self, env):
        res = env.reset()
        while res.done:  # task decided before the first step
            self.finished.append((res.info["outcome"], 0, res.reward))
            res = env.reset()
        return res

    def current(self):
        return [env.state.cdfa for env in self.envs], [r.observation for r in self.results]

    def step(self, actions):
        rewards, dones = np.zeros(len(self.envs)), np.zeros(len(self.envs))
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            res = env.step(int(a))
            rewards[i], dones[i] = res.reward, float(res.done)
            if res.done:
                self.finished.append((res.info["outcome"], env.state.steps, res.reward))
                res = self._reset(env)
            self.results[i] = res
        return rewards, dones

    def drain(self):
        out, self.finished = self.finished, []
        return out


def collect(agent: Agent, workers: Workers, cfg: TrainConfig, rng: np.random.Generator) -> RolloutBuffer:
    buf = RolloutBuffer()
    for _ in range(cfg.rollout_len):
        cdfas, obs = workers.current()
        actions, logp, value, emb = act(agent, cdfas, obs, rng)
        rewards, dones = workers.step(actions)
        buf.cdfas.append(cdfas)
        buf.obs.append(obs)
        buf.embeddings.append(emb)
        buf.actions.append(actions)
        buf.logps.append(logp[np.arange(len(actions)), actions])
        buf.values.append(value)
        buf.rewards.append(rewards)
        buf.dones.append(dones)
    cdfas, obs = workers.current()
    _, _, last_values, _ = act(agent, cdfas, obs, None)
    buf.finish(last_values, cfg.discount, cfg.gae_lambda)
    return buf


def ppo_loss(agent: Agent, data: dict, idx: np.ndarray, cfg: TrainConfig):
    if agent.encoder_frozen:
        emb = ad.Tensor(data["embeddings"][idx])
    else:
        emb = agent.embed(GraphBatch.from_graphs([featurize_cdfa(data["cdfas"][i]) for i in idx]))
    obs = _obs_batch([data["obs"][i] for i in idx])
    logp, value = agent.heads(emb, obs)
    actions = data["actions"][idx]
    adv = data["advantages"][idx]
    if cfg.normalize_advantages and idx.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ratio = ad.exp(ad.sub(ad.pick(logp, actions), data["logps"][idx]))
    surrogate = ad.minimum(ad.mul(ratio, adv),
                           ad.mul(ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv))
    policy_loss = ad.neg(ad.mean(surrogate))
    value_loss = ad.mean(ad.square(ad.sub(value, data["returns"][idx])))
    entropy = ad.neg(ad.mean(ad.sum(ad.mul(ad.exp(logp), logp), axis=1)))
    loss = ad.sub(ad.add(policy_loss, ad.mul(value_loss, cfg.value_loss_coef)),
                  ad.mul(entropy, cfg.entropy_coef))
    stats = {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(),
             "entropy": entropy.item()}
    return loss, stats


def ppo_update(agent: Agent, buf: RolloutBuffer, cfg: TrainConfig, opt: RMSprop,
               rng: np.random.Generator) -> dict:
    data = buf.flat()
    n = data["actions"].size
    totals: dict[str, float] = {}
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, stats = ppo_loss(agent, data, idx, cfg)
            if not np.isfinite(loss.item()):
                dump = {k: (v[idx].tolist() if isinstance(v, np.ndarray) else None) for k, v in data.items()}
                raise FloatingPointError(f"non-finite PPO loss; batch: {json.dumps(dump)[:2000]}")
            agent.store.zero_grad()
            ad.backward(loss)
            stats["grad_norm"] = opt.step(agent.store)
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    agent.store.zero_grad()
    buf.clear()
    return {k: v / count for k, v in totals.items()}


@dataclass
class EvalResult:
    satisfaction: float
    mean_steps: float
    episodes: int
    outcomes: dict

    def to_dict(self):
        return {"satisfaction": self.satisfaction, "mean_steps": self.mean_steps,
                "episodes": self.episodes, "outcomes": self.outcomes}


def run_episodes(agent_or_policy, envs, seed: int, greedy: bool = True) -> EvalResult:
    """Run one episode per environment in lockstep.

    ``agent_or_policy`` is an :class:`Agent` or a callable mapping the list of
    active environments to actions.
    """
    rng = None if greedy else np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(EVAL_STREAM,)))
    results = [env.reset() for env in envs]
    active = [i for i, r in enumerate(results) if not r.done]
    while active:
        if isinstance(agent_or_policy, Agent):
            actions, *_ = act(agent_or_policy, [envs[i].state.cdfa for i in active],
                              [results[i].observation for i in active], rng)
        else:
            actions = agent_or_policy([envs[i] for i in active])
        for i, a in zip(active, actions):
            results[i] = envs[i].step(int(a))
        active = [i for i in active if not results[i].done]
    outcomes = {"accepted": 0, "rejected": 0, "timeout": 0}
    for env in envs:
        outcomes[env.state.outcome] += 1
    steps = [env.state.steps for env in envs]
    return EvalResult(outcomes["accepted"] / len(envs), float(np.mean(steps)), len(envs), outcomes)


def evaluate(agent, cfg: TrainConfig, task: Optional[str] = None, episodes: int = 200,
             seed: int = 0, greedy: bool = True, layout: Optional[LetterLayout] = None,
             sampler: Optional[Sampler] = None) -> EvalResult:
    """Satisfaction likelihood and mean episode length over fresh episodes."""
    envs = [make_env(cfg, stream(seed, EVAL_STREAM + i), task=task, layout=layout, sampler=sampler)
            for i in range(episodes)]
    return run_episodes(agent, envs, seed, greedy)


@dataclass
class TrainResult:
    agent: Agent
    curve: list[dict]
    steps: int
    reached_target: bool


def train(cfg: TrainConfig, agent: Optional[Agent] = None, metrics_path: Optional[Path] = None,
          layout: Optional[LetterLayout] = None, eval_task: Optional[str] = None,
          sampler: Optional[Sampler] = None) -> TrainResult:
    """Run PPO until ``total_steps`` environment steps (or the target is met)."""
    agent = agent if agent is not None else build_agent(cfg)
    opt = RMSprop(cfg.learning_rate, cfg.rmsprop_alpha, max_grad_norm=cfg.max_grad_norm)
    workers = Workers(cfg, layout=layout, sampler=sampler)
    rng = stream(cfg.seed, POLICY_STREAM)
    curve: list[dict] = []
    steps, update = 0, 0
    reached = False
    sink = open(metrics_path, "w") if metrics_path is not None else None
    per_update = cfg.workers * cfg.rollout_len
    try:
        while steps + per_update <= cfg.total_steps:
            t0 = time.perf_counter()
            buf = collect(agent, workers, cfg, rng)
            steps += per_update
            stats = ppo_update(agent, buf, cfg, opt, rng)
            update += 1
            episodes = workers.drain()
            record = {
                "update": update, "step": steps,
                "episodes": len(episodes),
                "mean_return": float(np.mean([e[2] for e in episodes])) if episodes else None,
                "satisfaction_rate": (float(np.mean([e[0] == "accepted" for e in episodes]))
                                      if episodes else None),
                "rejection_rate": (float(np.mean([e[0] == "rejected" for e in episodes]))
                                   if episodes else None),
                "mean_episode_length": float(np.mean([e[1] for e in episodes])) if episodes else None,
                **stats,
                "seconds": round(time.perf_counter() - t0, 3),
            }
            if cfg.eval_every and update % cfg.eval_every == 0:
                ev = evaluate(agent, cfg, task=eval_task, episodes=cfg.eval_episodes,
                              seed=cfg.seed + update, layout=layout,
                              sampler=None if eval_task else sampler)
                record["eval_satisfaction"] = ev.satisfaction
                record["eval_mean_steps"] = ev.mean_steps
                reached = cfg.target_satisfaction is not None and ev.satisfaction >= cfg.target_satisfaction
            curve.append(record)
            log.info("update %d step %d sat %.3f rej %.3f len %.1f ent %.3f eval %s", update, steps,
                     record["satisfaction_rate"] or 0.0, record["rejection_rate"] or 0.0,
                     record["mean_episode_length"] or 0.0, stats["entropy"], record.get("eval_satisfaction"))
            if sink is not None:
                sink.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
                sink.flush()
            if reached:
                break
    finally:
        if sink is not None:
            sink.close()
    return TrainResult(agent, curve, steps, reached)


def _jsonable(record: dict) -> dict:
    return {k: (round(v, 10) if isinstance(v, float) else v) for k, v in record.items() if k != "seconds"}


def pretrain(cfg: TrainConfig, out_dir: Optional[Path] = None) -> TrainResult:
    """Train encoder + single-layer heads on RAD tasks in the dummy MDP."""
    if cfg.env != "dummy":
        raise ValueError("pretraining runs in the dummy environment")
    out_dir = Path(out_dir) if out_dir is not None else None
    result = train(cfg, metrics_path=out_dir / "metrics.jsonl" if out_dir else None)
    if out_dir is not None:
        result.agent.store.save(out_dir / "agent.ckpt")
        result.agent.store.save(out_dir / "encoder.ckpt", prefix="encoder.")
    return result
