"""N-step transition assembly and proportional prioritized replay."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, List, Optional

import numpy as np

from . import kernels

PRIORITY_EPS = 1e-6


class TerminalKind(Enum):
    NONE = "none"
    SOLVED = "solved"
    COLLIDED = "collided"
    TRUNCATED = "truncated"


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    n_step_reward: float
    next_observation: np.ndarray
    discount_to_bootstrap: float
    terminal_kind: TerminalKind = TerminalKind.NONE


def beta_schedule(step: int, beta_start: float = 0.4, steps: int = 100_000) -> float:
    return min(1.0, beta_start + step * (1.0 - beta_start) / steps)


class NStepAccumulator:
    """Sliding window over step records that emits n-step transitions.

    A true terminal flushes every pending record with a shortened horizon and
    zero bootstrap. Truncation also flushes, but keeps ``gamma**k`` so the
    learner still bootstraps from the cut-off state.
    """

    def __init__(self, n: int = 2, gamma: float = 0.99):
        if n < 1:
            raise ValueError("n must be positive")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        self.n = n
        self.gamma = gamma
        self._window: Deque = deque()

    def __len__(self):
        return len(self._window)

    def reset(self):
        self._window.clear()

    def _emit(self, next_obs, kind: TerminalKind) -> Transition:
        obs, action, _ = self._window[0]
        ret = 0.0
        for k, (_, _, r) in enumerate(self._window):
            ret += self.gamma ** k * r
        if kind in (TerminalKind.SOLVED, TerminalKind.COLLIDED):
            disc = 0.0
        else:
            disc = self.gamma ** len(self._window)
        self._window.popleft()
        return Transition(obs, int(action), ret, next_obs, disc, kind)

    def push(self, obs, action, reward: float, next_obs,
             kind: TerminalKind = TerminalKind.NONE) -> List[Transition]:
        self._window.append((obs, action, float(reward)))
        out = []
        if kind is TerminalKind.NONE:
            if len(self._window) == self.n:
                out.append(self._emit(next_obs, kind))
            return out
        while self._window:
            out.append(self._emit(next_obs, kind))
        return out


class SumTree:
    """Binary sum tree in an array; root at index 1, leaves at ``capacity + i``."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("size must be positive")
        cap = 1
        while cap < size:
            cap *= 2
        self.capacity = cap
        self.size = size
        self.tree = np.zeros(2 * cap, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity:self.capacity + self.size]

    def set(self, idx, values) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape).copy()
        if np.any(idx >= self.size):
            raise IndexError("leaf index out of range")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("priorities must be finite and non-negative")
        kernels.sumtree_set(self.tree, self.capacity, idx, values)

    def find(self, targets) -> np.ndarray:
        t = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        return kernels.sumtree_find(self.tree, self.capacity, t)

    def audit(self) -> float:
        """Largest relative mismatch between a node and the sum of its children."""
        worst = 0.0
        for node in range(self.capacity - 1, 0, -1):
            s = self.tree[2 * node] + self.tree[2 * node + 1]
            scale = max(abs(s), 1e-12)
            worst = max(worst, abs(self.tree[node] - s) / scale)
        return worst


class InsufficientFillError(RuntimeError):
    pass


class PrioritizedReplay:
    """Ring buffer with proportional prioritisation.

    Leaves store ``p**omega``; ``omega = 0`` gives uniform replay.
    """

    def __init__(self, capacity: int, obs_size: int, omega: float = 0.6,
                 dtype=np.float32):
        self.capacity = int(capacity)
        self.omega = float(omega)
        self.tree = SumTree(self.capacity)
        self.obs = np.zeros((self.capacity, obs_size), dtype=dtype)
        self.next_obs = np.zeros((self.capacity, obs_size), dtype=dtype)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.discounts = np.zeros(self.capacity, dtype=np.float64)
        self.kinds: List[Optional[TerminalKind]] = [None] * self.capacity
        self.max_priority = 1.0
        self.cursor = 0
        self.count = 0

    def __len__(self):
        return self.count

    def add(self, tr: Transition) -> int:
        i = self.cursor
        self.obs[i] = tr.observation
        self.next_obs[i] = tr.next_observation
        self.actions[i] = tr.action
        self.rewards[i] = tr.n_step_reward
        self.discounts[i] = tr.discount_to_bootstrap
        self.kinds[i] = tr.terminal_kind
        self.tree.set(i, self.max_priority ** self.omega)
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return i

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator):
        """Stratified proportional sample.

        Returns ``(batch, weights, indices)`` where ``batch`` is a dict of arrays
        and weights are normalised by their maximum.
        """
        if self.count < batch_size:
            raise InsufficientFillError(
                f"buffer holds {self.count} transitions, batch needs {batch_size}")
        total = self.tree.total
        seg = total / batch_size
        targets = (np.arange(batch_size) + rng.random(batch_size)) * seg
        targets = np.minimum(targets, np.nextafter(total, 0.0))
        idx = self.tree.find(targets)
        # a leaf past the fill level can only be hit through rounding; fall back to the last filled one
        idx = np.minimum(idx, self.count - 1)
        probs = self.tree.tree[self.tree.capacity + idx] / total
        weights = (self.count * probs) ** (-beta)
        weights = weights / weights.max()
        batch = {
            "obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx], "discounts": self.discounts[idx],
        }
        return batch, weights, idx

    def update_priorities(self, idx, losses) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        losses = np.asarray(losses, dtype=np.float64)
        if np.any(idx < 0) or np.any(idx >= self.count):
            raise IndexError("priority update for an index that holds no transition")
        p = np.abs(losses) + PRIORITY_EPS
        self.max_priority = max(self.max_priority, float(p.max()))
        self.tree.set(idx, p ** self.omega)

    def dump_priorities(self, path) -> None:
        leaves = self.tree.leaves()[:self.count]
        np.savetxt(path, np.column_stack([np.arange(self.count), leaves]), delimiter=",",
                   header="index,leaf_priority", comments="", fmt=["%d", "%.10g"])
