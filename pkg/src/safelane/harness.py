"""Training and evaluation loops, metrics files and the settling-step metric."""
from __future__ import annotations

import csv
import json
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agent import DoubleDQNAgent, LearningAgent, MobilAgent, RainbowAgent
from .config import RunConfig, from_dict
from .drivers import PROFILES
from .env import HighwayEnv, Status
from .safety import SafetyLayer

METRICS_SCHEMA = "safelane.metrics/1"
EVAL_SCHEMA = "safelane.eval/1"
EPISODE_FIELDS = ["episode", "end_step", "reward", "solved", "collided", "truncated",
                  "lane_changes", "safety_violations", "length", "trailing100"]
TRAILING = 100


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class EpisodeRecord:
    episode: int
    end_step: int
    reward: float
    solved: int
    collided: int
    truncated: int
    lane_changes: int
    safety_violations: int
    length: int
    trailing100: float = 0.0


@dataclass
class TrainingResult:
    seed: int
    episodes: List[EpisodeRecord]
    checkpoints: List[str]
    metrics_path: Optional[str]
    settling_step: int
    agent: object = field(repr=False, default=None)

    @property
    def curve_steps(self) -> np.ndarray:
        return np.array([e.end_step for e in self.episodes], dtype=np.int64)

    @property
    def curve(self) -> np.ndarray:
        return np.array([e.trailing100 for e in self.episodes], dtype=np.float64)


@dataclass
class EvalSummary:
    episodes: int
    solved_ratio: float
    collision_ratio: float
    truncation_ratio: float
    mean_reward: float
    std_reward: float
    mean_lane_changes: float
    safety_violations: int
    lane_change_collisions: int
    settling_step: int
    records: List[EpisodeRecord] = field(repr=False, default_factory=list)

    def row(self) -> Dict:
        d = asdict(self)
        d.pop("records")
        return d


# factories ---------------------------------------------------------------------------

def make_env(run: RunConfig, seed: Optional[int] = None, record_trace: bool = False) -> HighwayEnv:
    ego = None
    if run.agent.startswith("mobil_"):
        ego = PROFILES[run.agent.split("_", 1)[1]]
    return HighwayEnv(run.env_config(), SafetyLayer(run.window(), run.safety_enabled), seed,
                      ego_profile=ego, record_trace=record_trace)


def make_agent(run: RunConfig, seed: int):
    if run.agent.startswith("mobil_"):
        return MobilAgent.named(run.agent.split("_", 1)[1])
    klass = DoubleDQNAgent if run.agent == "double_dqn" else RainbowAgent
    return klass(run.network_config(), run.hyper_params(), seed=seed)


# metrics -----------------------------------------------------------------------------

def settling_step(curve: Sequence[float], steps: Optional[Sequence[int]] = None,
                  fraction: float = 0.95, tail: float = 0.1) -> int:
    """First step from which the curve stays at ``fraction`` of its settled value.

    The settled value is the mean of the last ``tail`` share of the curve. For a
    negative settled value the band is ``settled - (1 - fraction) * |settled|``
    so that "95 %" still means "within 5 % of the settled level". A curve that
    qualifies from its first point (constant curves included) settles at 0.
    """
    y = np.asarray(curve, dtype=np.float64)
    if y.size == 0:
        raise ValueError("curve is empty")
    x = np.arange(y.size) if steps is None else np.asarray(steps)
    k = max(1, int(round(tail * y.size)))
    settled = float(y[-k:].mean())
    threshold = settled - (1.0 - fraction) * abs(settled)
    below = np.flatnonzero(y < threshold)
    if below.size == 0:
        return 0
    first = int(below[-1]) + 1
    return int(x[first]) if first < y.size else int(x[-1])


def steps_to_reach(curve: Sequence[float], steps: Sequence[int], level: float) -> Optional[int]:
    """First step at which the curve reaches ``level``; None if it never does."""
    y = np.asarray(curve, dtype=np.float64)
    hit = np.flatnonzero(y >= level)
    return int(np.asarray(steps)[hit[0]]) if hit.size else None


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(path, records: List[EpisodeRecord], echo: Dict, seed: int,
                  summary: Dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={METRICS_SCHEMA}\n")
        fh.write("# seed=" + str(seed) + "\n")
        fh.write("# config=" + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in EPISODE_FIELDS])
        fh.write("# summary=" + json.dumps(summary, sort_keys=True) + "\n")


def read_metrics(path):
    meta: Dict = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition("=")
                meta[key] = value if key == "schema" else json.loads(value)
            else:
                rows.append(line)
    return meta, list(csv.DictReader(rows))


def summarize(records: List[EpisodeRecord]) -> Dict:
    if not records:
        return {"episodes": 0}
    rewards = np.array([r.reward for r in records])
    return {
        "episodes": len(records),
        "solved_ratio": float(np.mean([r.solved for r in records])),
        "collision_ratio": float(np.mean([r.collided for r in records])),
        "truncation_ratio": float(np.mean([r.truncated for r in records])),
        "mean_reward": float(rewards.mean()),
        "final_trailing100": float(records[-1].trailing100),
    }


# loops -------------------------------------------------------------------------------

class _EpisodeTracker:
    def __init__(self):
        self.returns: deque = deque(maxlen=TRAILING)
        self.records: List[EpisodeRecord] = []
        self.reset()

    def reset(self):
        self.reward = 0.0
        self.length = 0
        self.violations = 0
        self.lc_collisions = 0

    def step(self, res):
        self.reward += res.reward
        self.length += 1
        self.violations += int(res.info.safety_violation)
        self.lc_collisions += int(res.info.lane_change_collision)

    def finish(self, res, end_step: int) -> EpisodeRecord:
        self.returns.append(self.reward)
        rec = EpisodeRecord(
            episode=len(self.records), end_step=end_step, reward=self.reward,
            solved=int(res.status is Status.SOLVED), collided=int(res.status is Status.COLLIDED),
            truncated=int(res.status is Status.TRUNCATED),
            lane_changes=res.info.lane_changes_so_far, safety_violations=self.violations,
            length=self.length, trailing100=float(np.mean(self.returns)))
        self.records.append(rec)
        return rec


# run length may grow on resume; everything else must match
_RUN_LENGTH_KEYS = ("total_steps", "eval_episodes", "checkpoint_every")


def _resume_key(echo: Dict) -> Dict:
    return {k: v for k, v in echo.items() if k not in _RUN_LENGTH_KEYS}


def run_training(run: RunConfig, seed: int, out_dir: Optional[str] = None,
                 resume: Optional[str] = None, progress=None) -> TrainingResult:
    """Train one seed. Checkpoints go to ``out_dir`` every ``checkpoint_every`` steps.

    Returns the per-episode records; when ``out_dir`` is given the metrics CSV
    and checkpoints are written there. ``resume`` continues from a checkpoint of
    the same configuration with an empty replay buffer and a fresh episode.
    """
    if not run.learned:
        raise ValueError(f"{run.agent} is rule based and has nothing to train")
    echo = run.echo()
    if resume is not None:
        agent = LearningAgent.load(resume)
        if _resume_key(agent.header["echo"]) != _resume_key(echo):
            raise ValueError("checkpoint config echo does not match the requested run")
    else:
        agent = make_agent(run, seed)
    start = agent.steps
    env = make_env(run, derive_seed(seed, 0, start))
    agent.train()
    checkpoints: List[str] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint(step):
        if out_dir is None:
            return
        path = os.path.join(out_dir, f"ckpt_{step:08d}.bin")
        agent.save(path, echo)
        checkpoints.append(path)

    if start == 0:
        checkpoint(0)
    tracker = _EpisodeTracker()
    obs = env.reset() if run.total_steps > start else None
    for step in range(start, run.total_steps):
        action = agent.act(obs, env)
        res = env.step(action)
        agent.record(obs, action, res.reward, res.observation, res.status)
        tracker.step(res)
        if res.status.done:
            rec = tracker.finish(res, step + 1)
            if progress is not None:
                progress(rec)
            tracker.reset()
            obs = env.reset()
        else:
            obs = res.observation
        if (step + 1) % run.checkpoint_every == 0:
            checkpoint(step + 1)
    if run.total_steps > start and run.total_steps % run.checkpoint_every != 0:
        checkpoint(run.total_steps)

    records = tracker.records
    settle = settling_step([r.trailing100 for r in records],
                           [r.end_step for r in records]) if records else 0
    metrics_path = None
    if out_dir is not None:
        metrics_path = os.path.join(out_dir, "metrics.csv")
        summary = summarize(records)
        summary["settling_step"] = settle
        summary["total_steps"] = run.total_steps
        write_metrics(metrics_path, records, echo, seed, summary)
    return TrainingResult(seed, records, checkpoints, metrics_path, settle, agent)


def run_evaluation(run: RunConfig, agent=None, seed: int = 0,
                   episodes: Optional[int] = None, settling: int = 0,
                   trace_path: Optional[str] = None) -> EvalSummary:
    """Evaluate a learned agent (noise off, no exploration) or a MOBIL ego.

    Episode ``i`` is generated from its own seed so that any single episode
    can be replayed in isolation.
    """
    if agent is None:
        if run.learned:
            raise ValueError("a learned agent needs a checkpoint to evaluate")
        agent = make_agent(run, seed)
    agent.eval()
    n = run.eval_episodes if episodes is None else episodes
    env = make_env(run, record_trace=trace_path is not None)
    tracker = _EpisodeTracker()
    lc_collisions = 0
    for i in range(n):
        ep_seed = derive_seed(seed, 1, i)
        obs = env.reset(seed=ep_seed)
        while True:
            res = env.step(agent.act(obs, env))
            tracker.step(res)
            if res.status.done:
                break
            obs = res.observation
        lc_collisions += tracker.lc_collisions
        tracker.finish(res, tracker.length)
        tracker.reset()
        if trace_path is not None and i == 0:
            env.write_trace(trace_path, {"config": run.echo(), "episode_seed": ep_seed})
    recs = tracker.records
    rewards = np.array([r.reward for r in recs]) if recs else np.zeros(0)
    return EvalSummary(
        episodes=n,
        solved_ratio=float(np.mean([r.solved for r in recs])) if recs else 0.0,
        collision_ratio=float(np.mean([r.collided for r in recs])) if recs else 0.0,
        truncation_ratio=float(np.mean([r.truncated for r in recs])) if recs else 0.0,
        mean_reward=float(rewards.mean()) if recs else 0.0,
        std_reward=float(rewards.std()) if recs else 0.0,
        mean_lane_changes=float(np.mean([r.lane_changes for r in recs])) if recs else 0.0,
        safety_violations=int(sum(r.safety_violations for r in recs)),
        lane_change_collisions=lc_collisions,
        settling_step=0 if not run.learned else settling,
        records=recs)


def write_eval(path, summary: EvalSummary, echo: Dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={EVAL_SCHEMA}\n")
        fh.write("# config=" + json.dumps(echo, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_FIELDS[:-1])
        for r in summary.records:
            w.writerow([_fmt(getattr(r, f)) for f in EPISODE_FIELDS[:-1]])
        fh.write("# summary=" + json.dumps(summary.row(), sort_keys=True) + "\n")


def load_agent(path) -> tuple:
    """Agent plus the run configuration recorded in its checkpoint."""
    agent = LearningAgent.load(path)
    echo = dict(agent.header["echo"])
    echo.setdefault("seeds", [0])
    echo.setdefault("out_dir", ".")
    return agent, from_dict(echo)


def replay_qdist(agent: RainbowAgent, run: RunConfig, trace_path, out_path) -> int:
    """Re-drive a recorded episode and dump the agent's Q distribution at each decision."""
    from .env import read_trace

    header, rows = read_trace(trace_path)
    if "episode_seed" not in header:
        raise ValueError("trace has no episode seed to replay from")
    if header.get("config") and header["config"]["benchmark"] != run.benchmark:
        raise ValueError("trace and checkpoint come from different benchmarks")
    env = make_env(run)
    obs = env.reset(seed=int(header["episode_seed"]))
    support = agent.support
    names = ["keep_lane", "change_left", "change_right"]
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "action", "expected_q"] + [f"p_{z:g}" for z in support])
        t = 0
        for row in rows:
            probs, q = agent.q_distribution(obs)
            for a in range(probs.shape[0]):
                w.writerow([t, names[a], repr(float(q[a]))] + [repr(float(p)) for p in probs[a]])
            res = env.step(names.index(row["action_requested"]))
            t += 1
            obs = res.observation
            if res.status.done:
                break
    return t
