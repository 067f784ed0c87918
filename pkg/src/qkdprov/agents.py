"""Soft actor-critic agents with Q-network lending and federated policy averaging.

Manager agents observe rewards and train twin Q-networks plus a squashed
Gaussian policy. Controller agents store reward-less transitions; once per
episode they borrow the manager's trained critics to improve their own
policies, and every agent then adopts the buffer-size-weighted average of
the policy networks. Experiences never leave their owner's replay buffer;
only parameter snapshots cross agent boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .env import AllocationEnv, EnvConfig
from .nnet import (AdamState, Architecture, ParamSet, adam_step, backward,
                   forward, forward_cached, init_params, save_params,
                   soft_update)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SacConfig:
    """Hyperparameters; defaults follow the evaluated configuration."""

    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...] = (64, 64)
    q_learning_rate: float = 0.003
    policy_learning_rate: float = 0.0001
    entropy_temp: float = 0.01
    discount: float = 0.95
    target_blend: float = 0.01
    buffer_capacity: int = 20000
    batch_size: int = 64
    warmup_transitions: int = 200
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    log_std_init: float = -1.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if self.entropy_temp <= 0:
            raise ValueError("entropy temperature must be positive")


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored as flat arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, action, reward, next_obs, done) -> None:
        i = self._cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self.size == 0:
            raise ValueError("replay buffer is empty")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }


class SacAgent:
    """One learning agent: policy, twin critics with targets, buffer, role."""

    def __init__(self, config: SacConfig, role: str, seed: int = 0):
        if role not in ("manager", "controller"):
            raise ValueError("role must be manager or controller")
        self.config = config
        self.role = role
        rng = np.random.default_rng([seed, 0xACE])
        policy_arch = Architecture(config.obs_dim, config.hidden, 2 * config.act_dim,
                                   hidden_activation="tanh")
        q_arch = Architecture(config.obs_dim + config.act_dim, config.hidden, 1,
                              hidden_activation="relu")
        self.policy = init_params(policy_arch, rng)
        self.q1 = init_params(q_arch, rng)
        self.q2 = init_params(q_arch, rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.policy_opt = AdamState.for_params(self.policy, config.policy_learning_rate)
        self.q1_opt = AdamState.for_params(self.q1, config.q_learning_rate)
        self.q2_opt = AdamState.for_params(self.q2, config.q_learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity, config.obs_dim, config.act_dim)


def _split_policy_head(agent: SacAgent, raw: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, clipped log-std, and the not-clipped mask for gradient flow."""
    act = agent.config.act_dim
    mu = raw[..., :act]
    pre = raw[..., act:] + agent.config.log_std_init
    log_std = np.clip(pre, agent.config.log_std_min, agent.config.log_std_max)
    open_mask = ((pre > agent.config.log_std_min)
                 & (pre < agent.config.log_std_max)).astype(float)
    return mu, log_std, open_mask


def _squash(mu: np.ndarray, log_std: np.ndarray, noise: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample a = tanh(mu + std*noise) and its log-density."""
    std = np.exp(log_std)
    u = mu + std * noise
    action = np.tanh(u)
    gauss = -log_std - 0.5 * noise**2 - 0.5 * LOG_2PI
    # log(1 - tanh(u)^2) in stable form.
    correction = 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    log_prob = np.sum(gauss - correction, axis=-1)
    return action, log_prob, u


def select_action(agent: SacAgent, obs: np.ndarray,
                  rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> tuple[np.ndarray, float]:
    """Squashed-Gaussian action in (-1, 1) per coordinate, with log-probability."""
    raw = forward(agent.policy, obs)
    mu, log_std, _ = _split_policy_head(agent, raw)
    if deterministic:
        noise = np.zeros_like(mu)
    else:
        if rng is None:
            raise ValueError("stochastic action selection needs an rng")
        noise = rng.standard_normal(mu.shape)
    action, log_prob, _ = _squash(mu, log_std, noise)
    return action, float(log_prob)


def compute_q_target(agent: SacAgent, batch: dict[str, np.ndarray],
                     rng: np.random.Generator) -> np.ndarray:
    """Reward plus discounted entropy-regularized minimum target-Q value."""
    cfg = agent.config
    raw = forward(agent.policy, batch["next_obs"])
    mu, log_std, _ = _split_policy_head(agent, raw)
    noise = rng.standard_normal(mu.shape)
    next_action, next_log_prob, _ = _squash(mu, log_std, noise)
    joint = np.concatenate([batch["next_obs"], next_action], axis=1)
    q1 = forward(agent.q1_target, joint)[:, 0]
    q2 = forward(agent.q2_target, joint)[:, 0]
    soft_value = np.minimum(q1, q2) - cfg.entropy_temp * next_log_prob
    return batch["rewards"] + cfg.discount * (1.0 - batch["dones"]) * soft_value


def manager_q_update(agent: SacAgent, batch: dict[str, np.ndarray],
                     rng: np.random.Generator) -> tuple[float, float]:
    """One mean-squared-error gradient step on each critic."""
    if agent.role != "manager":
        raise ValueError("only managers hold rewards to fit critics")
    if len(batch["rewards"]) == 0:
        raise ValueError("empty batch")
    target = compute_q_target(agent, batch, rng)
    joint = np.concatenate([batch["obs"], batch["actions"]], axis=1)
    losses = []
    for net, opt in ((agent.q1, agent.q1_opt), (agent.q2, agent.q2_opt)):
        out, cache = forward_cached(net, joint)
        err = out[:, 0] - target
        losses.append(float(np.mean(err**2)))
        grads, _ = backward(net, cache, (2.0 * err / len(err))[:, None])
        adam_step(net, grads, opt)
    return losses[0], losses[1]


def _policy_update(agent: SacAgent, critic1: ParamSet, critic2: ParamSet,
                   batch: dict[str, np.ndarray], rng: np.random.Generator) -> float:
    """Reparameterized ascent on min-Q plus entropy, through given critics."""
    cfg = agent.config
    obs = batch["obs"]
    if len(obs) == 0:
        raise ValueError("empty batch")
    expected_in = cfg.obs_dim + cfg.act_dim
    if critic1.arch.input_dim != expected_in or critic2.arch.input_dim != expected_in:
        raise ValueError("critic architecture incompatible with observations/actions")
    n = len(obs)
    raw, policy_cache = forward_cached(agent.policy, obs)
    mu, log_std, open_mask = _split_policy_head(agent, raw)
    noise = rng.standard_normal(mu.shape)
    action, log_prob, u = _squash(mu, log_std, noise)
    std = np.exp(log_std)

    joint = np.concatenate([obs, action], axis=1)
    q1_out, q1_cache = forward_cached(critic1, joint)
    q2_out, q2_cache = forward_cached(critic2, joint)
    q1_out, q2_out = q1_out[:, 0], q2_out[:, 0]
    q_min = np.minimum(q1_out, q2_out)
    loss = -float(np.mean(q_min - cfg.entropy_temp * log_prob))

    pick1 = (q1_out <= q2_out).astype(float)
    _, in_grad1 = backward(critic1, q1_cache, (-pick1 / n)[:, None])
    _, in_grad2 = backward(critic2, q2_cache, (-(1.0 - pick1) / n)[:, None])
    d_action = (in_grad1 + in_grad2)[:, cfg.obs_dim:]

    tanh_u = np.tanh(u)
    d_log_prob = cfg.entropy_temp / n
    d_u = d_action * (1.0 - tanh_u**2) + d_log_prob * 2.0 * tanh_u
    d_mu = d_u
    d_pre = (d_u * std * noise - d_log_prob) * open_mask
    head_grad = np.concatenate([d_mu, d_pre], axis=1)
    grads, _ = backward(agent.policy, policy_cache, head_grad)
    adam_step(agent.policy, grads, agent.policy_opt)
    return loss


def manager_policy_update(agent: SacAgent, batch: dict[str, np.ndarray],
                          rng: np.random.Generator) -> float:
    return _policy_update(agent, agent.q1, agent.q2, batch, rng)


def controller_policy_update(agent: SacAgent, borrowed_q1: ParamSet,
                             borrowed_q2: ParamSet, batch: dict[str, np.ndarray],
                             rng: np.random.Generator) -> float:
    """Policy step through critics lent by a manager; local critics stay untrained."""
    return _policy_update(agent, borrowed_q1, borrowed_q2, batch, rng)


def lend_critics(manager: SacAgent, controller: SacAgent) -> None:
    """Overwrite the controller's template critics with manager snapshots."""
    if manager.q1.arch != controller.q1.arch:
        raise ValueError("critic architecture mismatch")
    controller.q1 = manager.q1.copy()
    controller.q2 = manager.q2.copy()


def fedavg_policies(policies: list[ParamSet], weights: list[float]) -> ParamSet:
    """Buffer-size-weighted elementwise average of policy parameters."""
    if len(policies) != len(weights) or not policies:
        raise ValueError("need one weight per policy")
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("total weight must be positive")
    if any(p.arch != policies[0].arch for p in policies):
        raise ValueError("architecture mismatch")
    out = policies[0].copy()
    for arrays in (out.weights, out.biases):
        for a in arrays:
            a[:] = 0.0
    for policy, weight in zip(policies, weights):
        scale = weight / total
        for t, s in zip(out.weights, policy.weights):
            t += scale * s
        for t, s in zip(out.biases, policy.biases):
            t += scale * s
    return out


@dataclass
class EpisodeRecord:
    episode: int
    mean_manager_reward: float
    mean_cost: float
    policy_loss: float
    q_loss: float


@dataclass
class TrainResult:
    records: list[EpisodeRecord]
    agents: dict[int, SacAgent]
    scheme: str

    def rewards(self) -> list[float]:
        return [r.mean_manager_reward for r in self.records]

    def csv(self) -> str:
        rows = ["episode,mean_manager_reward,mean_cost,policy_loss,q_loss"]
        rows += [f"{r.episode},{r.mean_manager_reward:.10g},{r.mean_cost:.10g},"
                 f"{r.policy_loss:.10g},{r.q_loss:.10g}" for r in self.records]
        return "\n".join(rows) + "\n"

    def save_checkpoints(self, directory) -> None:
        from pathlib import Path
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for agent_id, agent in self.agents.items():
            save_params(agent.policy, directory / f"agent{agent_id}_policy.npz")
            save_params(agent.q1, directory / f"agent{agent_id}_q1.npz")
            save_params(agent.q2, directory / f"agent{agent_id}_q2.npz")


def build_agents(env: AllocationEnv, config: SacConfig | None = None,
                 seed: int = 0) -> dict[int, SacAgent]:
    if config is None:
        config = SacConfig(obs_dim=env.observation_dim, act_dim=env.action_dim)
    if config.obs_dim != env.observation_dim or config.act_dim != env.action_dim:
        config = replace(config, obs_dim=env.observation_dim, act_dim=env.action_dim)
    return {
        agent_id: SacAgent(
            config,
            role="manager" if agent_id in env.managers else "controller",
            seed=seed * 1000 + i,
        )
        for i, agent_id in enumerate(env.agents)
    }


def _train(env: AllocationEnv, agents: dict[int, SacAgent], episodes: int,
           seed: int, federate: bool, scheme: str) -> TrainResult:
    rng = np.random.default_rng([seed, 0xF])
    managers = [a for a in env.agents if agents[a].role == "manager"]
    controllers = [a for a in env.agents if agents[a].role == "controller"]
    if not managers:
        raise ValueError("need at least one manager agent")
    lender = agents[managers[0]]
    records: list[EpisodeRecord] = []
    for episode in range(1, episodes + 1):
        obs = env.reset()
        rewards_seen: list[float] = []
        costs_seen: list[float] = []
        policy_loss = q_loss = math.nan
        for _ in range(env.config.slots_per_episode):
            actions = {}
            for agent_id in env.agents:
                action, _ = select_action(agents[agent_id], obs[agent_id], rng)
                actions[agent_id] = action
            next_obs, rewards, done, info = env.step(actions)
            for agent_id in env.agents:
                agent = agents[agent_id]
                stored_reward = rewards[agent_id] if agent.role == "manager" else 0.0
                agent.buffer.push(obs[agent_id], actions[agent_id], stored_reward,
                                  next_obs[agent_id], done)
            rewards_seen.append(np.mean([rewards[m] for m in managers]))
            costs_seen.append(info["cost"])
            for manager_id in managers:
                manager = agents[manager_id]
                if len(manager.buffer) >= manager.config.warmup_transitions:
                    batch = manager.buffer.sample(manager.config.batch_size, rng)
                    l1, l2 = manager_q_update(manager, batch, rng)
                    q_loss = 0.5 * (l1 + l2)
                    batch = manager.buffer.sample(manager.config.batch_size, rng)
                    policy_loss = manager_policy_update(manager, batch, rng)
                    soft_update(manager.q1_target, manager.q1,
                                manager.config.target_blend)
                    soft_update(manager.q2_target, manager.q2,
                                manager.config.target_blend)
            obs = next_obs
        # Federation engages once the lending manager has started learning.
        if federate and len(lender.buffer) >= lender.config.warmup_transitions:
            for controller_id in controllers:
                controller = agents[controller_id]
                lend_critics(lender, controller)
                if len(controller.buffer) >= controller.config.batch_size:
                    batch = controller.buffer.sample(controller.config.batch_size, rng)
                    controller_policy_update(controller, controller.q1,
                                             controller.q2, batch, rng)
            weights = [float(len(agents[a].buffer)) for a in env.agents]
            merged = fedavg_policies([agents[a].policy for a in env.agents], weights)
            for agent_id in env.agents:
                agents[agent_id].policy = merged.copy()
        records.append(EpisodeRecord(
            episode=episode,
            mean_manager_reward=float(np.mean(rewards_seen)),
            mean_cost=float(np.mean(costs_seen)),
            policy_loss=float(policy_loss),
            q_loss=float(q_loss),
        ))
    return TrainResult(records=records, agents=agents, scheme=scheme)


def train_fedsac(env: AllocationEnv, episodes: int, seed: int = 0,
                 config: SacConfig | None = None) -> TrainResult:
    """Federated training: manager critics lent out, policies averaged."""
    agents = build_agents(env, config, seed)
    return _train(env, agents, episodes, seed, federate=True, scheme="fedsac")


def train_decsac(env: AllocationEnv, episodes: int, seed: int = 0,
                 config: SacConfig | None = None) -> TrainResult:
    """Decentralized baseline: managers learn alone, no lending or averaging.

    Build the environment with ``manager_only_layout`` so the managers'
    action spaces cover every link and costs stay comparable.
    """
    agents = build_agents(env, config, seed)
    return _train(env, agents, episodes, seed, federate=False, scheme="decsac")


def manager_only_layout(config: EnvConfig) -> EnvConfig:
    """Expand manager partitions to cover all links, dropping controllers."""
    managers = tuple(sorted(config.managers))
    links = sorted(l for links in config.partition.values() for l in links)
    base, extra = divmod(len(links), len(managers))
    partition: dict[int, tuple] = {}
    start = 0
    for i, manager in enumerate(managers):
        size = base + (1 if i < extra else 0)
        partition[manager] = tuple(links[start:start + size])
        start += size
    return replace(config, partition=partition, managers=managers)
