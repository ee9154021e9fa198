"""Rainbow and Double DQN learners plus the rule-based MOBIL ego driver."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from . import kernels
from .drivers import PROFILES, Action, DriverProfile, mobil_decision
from .network import (Adam, Network, NetworkConfig, expected_values, load_checkpoint,
                      log_softmax,
                      network_config_from_dict, network_config_to_dict, save_checkpoint,
                      softmax, sync_target)
from .replay import NStepAccumulator, PrioritizedReplay, TerminalKind, beta_schedule


@dataclass(frozen=True)
class HyperParams:
    gamma: float = 0.99
    n_step: int = 2
    replay_size: int = 50_000
    target_sync: int = 500
    learning_rate: float = 1e-4
    batch_size: int = 32
    omega: float = 0.6
    beta_start: float = 0.4
    beta_steps: int = 100_000
    train_start: int = 1000
    train_every: int = 1
    clip_norm: float = 10.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_steps: int = 100_000
    huber_delta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        counts = (self.n_step, self.replay_size, self.target_sync, self.batch_size,
                  self.beta_steps, self.train_every, self.eps_steps)
        if any(c <= 0 for c in counts) or self.train_start < 0:
            raise ValueError("all counts must be positive")
        if self.batch_size > self.replay_size:
            raise ValueError("batch_size exceeds replay_size")


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest action index."""
    return np.argmax(q, axis=-1)


def project_distribution(n_step_reward, discount, next_probs, support: np.ndarray) -> np.ndarray:
    """Categorical projection of ``r + discount * z`` back onto ``support``."""
    r = np.atleast_1d(np.asarray(n_step_reward, dtype=np.float64))
    g = np.atleast_1d(np.asarray(discount, dtype=np.float64))
    p = np.atleast_2d(np.asarray(next_probs, dtype=np.float64))
    return kernels.project_categorical(r, g, np.ascontiguousarray(p), float(support[0]),
                                       float(support[-1]))


def _kind(status) -> TerminalKind:
    return TerminalKind(status.value) if status.value != "running" else TerminalKind.NONE


class LearningAgent:
    """Shared plumbing: networks, optimiser, n-step replay, counters, checkpoints."""

    kind = "base"

    def __init__(self, net_config: NetworkConfig, hyper: HyperParams = HyperParams(),
                 seed: int = 0, dtype=np.float32):
        self.net_config = net_config
        self.hyper = hyper
        init_seq, self._run_seq = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(self._run_seq)
        self.online = Network(net_config, np.random.default_rng(init_seq), dtype=dtype)
        self.target = self.online.clone()
        self.optim = Adam(self.online.flat.size, lr=hyper.learning_rate,
                          clip_norm=hyper.clip_norm, dtype=dtype)
        self.buffer = PrioritizedReplay(hyper.replay_size, net_config.obs_size, self._omega(),
                                        dtype=dtype)
        self.nstep = NStepAccumulator(hyper.n_step, hyper.gamma)
        self.steps = 0
        self.updates = 0
        self.syncs = 0
        self.training = True

    def _omega(self) -> float:
        return self.hyper.omega

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def record(self, obs, action, reward, next_obs, status) -> Optional[Dict]:
        """Store one environment step and run a learning update when due."""
        for tr in self.nstep.push(np.array(obs), int(action), reward, np.array(next_obs),
                                  _kind(status)):
            self.buffer.add(tr)
        self.steps += 1
        h = self.hyper
        if self.steps >= h.train_start and self.steps % h.train_every == 0 \
                and len(self.buffer) >= h.batch_size:
            return self.train_step()
        return None

    def _after_update(self):
        self.updates += 1
        if self.updates % self.hyper.target_sync == 0:
            sync_target(self.online, self.target)
            self.syncs += 1

    # checkpoints ------------------------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("online", self.online), ("target", self.target)):
            for k, v in net.params.items():
                out[f"{prefix}/{k}"] = v
        out["adam/m"] = self.optim.m
        out["adam/v"] = self.optim.v
        return out

    def save(self, path, echo: Optional[Dict] = None) -> None:
        header = {
            "agent_kind": self.kind, "network": network_config_to_dict(self.net_config),
            "hyper": asdict(self.hyper), "steps": self.steps, "updates": self.updates,
            "syncs": self.syncs, "adam_t": self.optim.t,
            "rng_state": self.rng.bit_generator.state, "echo": echo or {},
        }
        save_checkpoint(path, self.state_arrays(), header)

    @classmethod
    def load(cls, path, expect_echo: Optional[Dict] = None) -> "LearningAgent":
        header, arrays = load_checkpoint(path)
        kinds = {c.kind: c for c in (RainbowAgent, DoubleDQNAgent)}
        klass = kinds.get(header["agent_kind"])
        if klass is None or (cls is not LearningAgent and klass is not cls):
            raise ValueError(f"checkpoint holds a {header['agent_kind']!r} agent")
        if expect_echo is not None and header["echo"] != expect_echo:
            raise ValueError("checkpoint config echo does not match the requested run")
        agent = klass(network_config_from_dict(header["network"]),
                      HyperParams(**header["hyper"]))
        for prefix, net in (("online", agent.online), ("target", agent.target)):
            for k, v in net.params.items():
                np.copyto(v, arrays[f"{prefix}/{k}"])
        np.copyto(agent.optim.m, arrays["adam/m"])
        np.copyto(agent.optim.v, arrays["adam/v"])
        agent.steps = header["steps"]
        agent.updates = header["updates"]
        agent.syncs = header["syncs"]
        agent.optim.t = header["adam_t"]
        agent.rng.bit_generator.state = header["rng_state"]
        agent.header = header
        return agent


class RainbowAgent(LearningAgent):
    """Noisy dueling C51 network trained on prioritised n-step double-Q targets."""

    kind = "rainbow"

    def __init__(self, net_config: NetworkConfig, hyper: HyperParams = HyperParams(),
                 seed: int = 0, dtype=np.float32):
        if not (net_config.distributional and net_config.noisy and net_config.dueling):
            raise ValueError("RainbowAgent needs a noisy dueling distributional network")
        super().__init__(net_config, hyper, seed, dtype)
        self.support = net_config.support(np.float64)

    def act(self, obs, env=None) -> int:
        if self.training:
            self.online.resample_noise(self.rng)
        q = self.online.q_values(obs, sampled=self.training)
        return int(greedy(q)[0])

    def q_distribution(self, obs, sampled: bool = False):
        probs = self.online.probabilities(obs, sampled=sampled)[0].astype(np.float64)
        return probs, expected_values(probs, self.support)

    def compute_targets(self, batch):
        """Projected target distributions and the online-selected next actions."""
        q_next = self.online.q_values(batch["next_obs"], sampled=True)
        a_star = greedy(q_next)
        p_next = self.target.probabilities(batch["next_obs"], sampled=True)
        p_sel = p_next[np.arange(len(a_star)), a_star]
        m = project_distribution(batch["rewards"], batch["discounts"], p_sel, self.support)
        return m, a_star

    def loss_and_grads(self, batch, weights, targets):
        """Importance-weighted cross-entropy and its parameter gradients."""
        logits, cache = self.online.forward(batch["obs"], sampled=True, with_cache=True)
        b = np.arange(logits.shape[0])
        a = batch["actions"]
        logp = log_softmax(logits.astype(np.float64))[b, a]
        losses = -(targets * logp).sum(axis=1)
        d = np.zeros(logits.shape, dtype=np.float64)
        d[b, a] = (np.exp(logp) - targets) * (np.asarray(weights)[:, None] / len(b))
        grads = self.online.backward(cache, d)
        return losses, grads

    def train_step(self) -> Dict:
        h = self.hyper
        batch, weights, idx = self.buffer.sample(h.batch_size,
                                                 beta_schedule(self.steps, h.beta_start,
                                                               h.beta_steps), self.rng)
        self.online.resample_noise(self.rng)
        self.target.resample_noise(self.rng)
        m, a_star = self.compute_targets(batch)
        losses, grads = self.loss_and_grads(batch, weights, m)
        norm = self.optim.step(self.online.flat, self.online.flat_grad(grads))
        self.buffer.update_priorities(idx, losses)
        self._after_update()
        return {"loss": float(np.mean(losses)), "grad_norm": norm, "next_actions": a_star}


class DoubleDQNAgent(LearningAgent):
    """Scalar-Q baseline: same encoder, epsilon-greedy, uniform replay, Huber loss."""

    kind = "double_dqn"

    def __init__(self, net_config: NetworkConfig, hyper: HyperParams = HyperParams(),
                 seed: int = 0, dtype=np.float32):
        if net_config.distributional or net_config.noisy or net_config.dueling:
            raise ValueError("DoubleDQNAgent needs a plain scalar-Q network")
        super().__init__(net_config, hyper, seed, dtype)

    def _omega(self) -> float:
        return 0.0

    def epsilon(self) -> float:
        h = self.hyper
        frac = min(1.0, self.steps / h.eps_steps)
        return h.eps_start + frac * (h.eps_end - h.eps_start)

    def act(self, obs, env=None) -> int:
        if self.training and self.rng.random() < self.epsilon():
            return int(self.rng.integers(self.net_config.action_count))
        return int(greedy(self.online.q_values(obs, sampled=False))[0])

    def compute_targets(self, batch):
        a_star = greedy(self.online.q_values(batch["next_obs"], sampled=False))
        q_t = self.target.q_values(batch["next_obs"], sampled=False).astype(np.float64)
        boot = q_t[np.arange(len(a_star)), a_star]
        return batch["rewards"] + batch["discounts"] * boot, a_star

    def loss_and_grads(self, batch, weights, targets):
        logits, cache = self.online.forward(batch["obs"], sampled=False, with_cache=True)
        b = np.arange(logits.shape[0])
        a = batch["actions"]
        err = logits[b, a, 0].astype(np.float64) - targets
        k = self.hyper.huber_delta
        absd = np.abs(err)
        losses = np.where(absd <= k, 0.5 * err ** 2, k * (absd - 0.5 * k))
        d = np.zeros(logits.shape, dtype=np.float64)
        d[b, a, 0] = np.clip(err, -k, k) * (np.asarray(weights) / len(b))
        return losses, self.online.backward(cache, d)

    def train_step(self) -> Dict:
        h = self.hyper
        batch, weights, idx = self.buffer.sample(h.batch_size, 0.0, self.rng)
        y, a_star = self.compute_targets(batch)
        losses, grads = self.loss_and_grads(batch, weights, y)
        norm = self.optim.step(self.online.flat, self.online.flat_grad(grads))
        self.buffer.update_priorities(idx, losses)
        self._after_update()
        return {"loss": float(np.mean(losses)), "grad_norm": norm, "next_actions": a_star}


class MobilAgent:
    """Drives the ego with MOBIL; needs the environment for neighbour views."""

    kind = "mobil"

    def __init__(self, profile: DriverProfile):
        self.profile = profile
        self.steps = 0

    @classmethod
    def named(cls, name: str) -> "MobilAgent":
        return cls(PROFILES[name])

    def act(self, obs, env=None) -> int:
        if env is None:
            raise ValueError("MobilAgent needs the environment to act")
        w = env.world
        if w.maneuvering(w.ego):
            return int(Action.KEEP_LANE)
        return int(mobil_decision(w.vehicle(w.ego), self.profile, *env.ego_views(),
                                  length=w.geom.length))

    def train(self):
        pass

    def eval(self):
        pass

    def record(self, *args, **kw):
        return None


class RandomAgent:
    kind = "random"

    def __init__(self, seed: int = 0, action_count: int = 3):
        self.rng = np.random.default_rng(seed)
        self.action_count = action_count

    def act(self, obs, env=None) -> int:
        return int(self.rng.integers(self.action_count))

    def train(self):
        pass

    def eval(self):
        pass

    def record(self, *args, **kw):
        return None


__all__ = ["HyperParams", "RainbowAgent", "DoubleDQNAgent", "MobilAgent", "RandomAgent",
           "project_distribution", "greedy", "softmax"]
