"""Run configuration and its INI file form.

A run file has a ``[run]`` section plus optional ``[scenario]``, ``[env]``,
``[network]``, ``[hyper]`` and ``[safety]`` sections whose keys override the
defaults of the matching dataclass. Tuples are written comma separated.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

from .agent import HyperParams
from .env import EnvConfig
from .network import NetworkConfig
from .safety import BlindSpotWindow
from .scenario import BENCHMARKS, ScenarioConfig

AGENTS = ("rainbow", "rainbow_blindspot", "rainbow_blindspot_comp", "double_dqn",
          "mobil_timid", "mobil_aggressive")
LEARNED = ("rainbow", "rainbow_blindspot", "rainbow_blindspot_comp", "double_dqn")
SAFETY_AGENTS = ("rainbow_blindspot", "rainbow_blindspot_comp")

# override sections and the dataclass each one targets
SECTIONS = {
    "scenario": ScenarioConfig,
    "env": EnvConfig,
    "network": NetworkConfig,
    "hyper": HyperParams,
    "safety": BlindSpotWindow,
}
# fields that are structural and cannot be overridden from a file
_FIXED = {
    "env": {"scenario", "geometry", "observation"},
    "network": {"vehicle_slots", "features_per_slot", "ego_features", "action_count",
                "distributional", "noisy", "dueling"},
}


@dataclass
class RunConfig:
    benchmark: str = "A"
    agent: str = "rainbow_blindspot"
    total_steps: int = 50_000
    eval_episodes: int = 100
    seeds: Tuple[int, ...] = (0, 1, 2)
    out_dir: str = "runs"
    checkpoint_every: int = 10_000
    scenario: Dict[str, Any] = field(default_factory=dict)
    env: Dict[str, Any] = field(default_factory=dict)
    network: Dict[str, Any] = field(default_factory=dict)
    hyper: Dict[str, Any] = field(default_factory=dict)
    safety: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"benchmark must be one of {sorted(BENCHMARKS)}")
        if self.agent not in AGENTS:
            raise ValueError(f"agent must be one of {AGENTS}")
        if self.total_steps < 0 or self.eval_episodes < 0 or self.checkpoint_every <= 0:
            raise ValueError("step and episode counts must be non-negative")
        self.seeds = tuple(int(s) for s in self.seeds)
        for name, klass in SECTIONS.items():
            known = {f.name for f in dataclasses.fields(klass)} - _FIXED.get(name, set())
            unknown = set(getattr(self, name)) - known
            if unknown:
                raise ValueError(f"unknown [{name}] keys: {sorted(unknown)}")

    @property
    def learned(self) -> bool:
        return self.agent in LEARNED

    @property
    def safety_enabled(self) -> bool:
        return self.agent in SAFETY_AGENTS

    @property
    def observation(self) -> str:
        return "compact" if self.agent == "rainbow_blindspot_comp" else "full"

    def scenario_config(self) -> ScenarioConfig:
        return BENCHMARKS[self.benchmark](**self.scenario)

    def env_config(self) -> EnvConfig:
        return EnvConfig(scenario=self.scenario_config(), observation=self.observation,
                         **self.env)

    def hyper_params(self) -> HyperParams:
        return HyperParams(**self.hyper)

    def window(self) -> BlindSpotWindow:
        return BlindSpotWindow(**self.safety)

    def network_config(self) -> NetworkConfig:
        slots = self.env_config().observation_spec().slots
        if self.agent == "double_dqn":
            return NetworkConfig.baseline(slots, **self.network)
        return NetworkConfig.rainbow(slots, **self.network)

    def echo(self) -> Dict[str, Any]:
        """Everything that defines the experiment; seeds and paths excluded."""
        d = to_dict(self)
        for k in ("seeds", "out_dir"):
            d.pop(k)
        return d


def to_dict(run: RunConfig) -> Dict[str, Any]:
    d = dataclasses.asdict(run)
    d["seeds"] = list(run.seeds)
    for name in SECTIONS:
        d[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(d[name].items())}
    return d


def from_dict(d: Dict[str, Any]) -> RunConfig:
    d = dict(d)
    for name, klass in SECTIONS.items():
        if name in d:
            d[name] = {k: _coerce(klass, k, v) for k, v in d[name].items()}
    return RunConfig(**d)


def _default(klass, key):
    for f in dataclasses.fields(klass):
        if f.name == key:
            if f.default is not dataclasses.MISSING:
                return f.default
            return f.default_factory()
    raise ValueError(f"unknown key {key!r} for {klass.__name__}")


def _parse_scalar(proto, text):
    if isinstance(proto, bool):
        low = str(text).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(proto, int):
        return int(text)
    if isinstance(proto, float):
        return float(text)
    return str(text).strip()


def _coerce(klass, key, value):
    proto = _default(klass, key)
    if isinstance(proto, tuple):
        items = value if isinstance(value, (list, tuple)) else \
            [x for x in str(value).split(",") if x.strip()]
        elem = proto[0] if proto else float
        return tuple(_parse_scalar(elem, x) for x in items)
    return _parse_scalar(proto, value)


_RUN_KEYS = {"benchmark": str, "agent": str, "total_steps": int, "eval_episodes": int,
             "out_dir": str, "checkpoint_every": int}


def parse_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    kw: Dict[str, Any] = {}
    for sec in cp.sections():
        if sec == "run":
            for k, v in cp.items(sec):
                if k == "seeds":
                    kw["seeds"] = tuple(int(x) for x in v.split(",") if x.strip())
                elif k in _RUN_KEYS:
                    kw[k] = _RUN_KEYS[k](v.strip())
                else:
                    raise ValueError(f"unknown [run] key {k!r}")
        elif sec in SECTIONS:
            kw[sec] = {k: _coerce(SECTIONS[sec], k, v) for k, v in cp.items(sec)}
        else:
            raise ValueError(f"unknown section [{sec}]")
    return RunConfig(**kw)


def load_ini(path) -> RunConfig:
    with open(path) as fh:
        return parse_ini(fh.read())


def dump_ini(run: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["run"] = {k: str(getattr(run, k)) for k in _RUN_KEYS}
    cp["run"]["seeds"] = ",".join(str(s) for s in run.seeds)
    for name in SECTIONS:
        sec = getattr(run, name)
        if sec:
            cp[name] = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                        for k, v in sec.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
