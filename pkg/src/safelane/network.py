"""Value networks with hand-written backward passes.

Observation layout is ``[ego_0, ego_1, slot_0 (3), slot_1 (3), ...]``. Every
vehicle slot goes through the same two-layer encoder (a width-3, stride-3
convolution over the slot axis) and the encodings are max-pooled, which makes
the output invariant to slot order. The pooled code is concatenated with the
ego features and fed to either

* the Rainbow head: noisy dueling value/advantage streams producing
  per-action categorical distributions over a fixed return support, or
* the baseline head: a plain two-layer scalar-Q head.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class NetworkConfig:
    vehicle_slots: int = 20
    features_per_slot: int = 3
    ego_features: int = 2
    conv_widths: Tuple[int, ...] = (32, 64)
    head_width: int = 256
    atom_count: int = 51
    v_min: float = -120.0
    v_max: float = 120.0
    noisy_sigma0: float = 0.5
    action_count: int = 3
    distributional: bool = True
    noisy: bool = True
    dueling: bool = True

    def __post_init__(self):
        if self.distributional and self.atom_count < 2:
            raise ValueError("atom_count must be at least 2")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        widths = (self.vehicle_slots, self.features_per_slot, self.head_width,
                  self.action_count, *self.conv_widths)
        if any(w <= 0 for w in widths) or not self.conv_widths:
            raise ValueError("layer widths must be positive")

    @property
    def obs_size(self) -> int:
        return self.ego_features + self.vehicle_slots * self.features_per_slot

    @property
    def units(self) -> int:
        """Outputs per action: atoms for the distributional head, 1 for scalar Q."""
        return self.atom_count if self.distributional else 1

    def support(self, dtype=np.float64) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.atom_count).astype(dtype)

    @classmethod
    def rainbow(cls, slots: int, **kw) -> "NetworkConfig":
        return cls(vehicle_slots=slots, **kw)

    @classmethod
    def baseline(cls, slots: int, **kw) -> "NetworkConfig":
        kw.setdefault("distributional", False)
        kw.setdefault("noisy", False)
        kw.setdefault("dueling", False)
        return cls(vehicle_slots=slots, **kw)


def _f(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.sqrt(np.abs(x))


class Network:
    """Parameters, factorised noise and forward/backward for one value network."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.noise: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self._layers = []  # (name, fan_in, fan_out, noisy)
        c = config
        fan = c.features_per_slot
        for k, w in enumerate(c.conv_widths):
            self._add(f"enc{k}", fan, w, False, rng)
            fan = w
        trunk = fan + c.ego_features
        out = c.action_count * c.units
        if c.dueling:
            self._add("val0", trunk, c.head_width, c.noisy, rng)
            self._add("val1", c.head_width, c.units, c.noisy, rng)
            self._add("adv0", trunk, c.head_width, c.noisy, rng)
            self._add("adv1", c.head_width, out, c.noisy, rng)
        else:
            self._add("q0", trunk, c.head_width, c.noisy, rng)
            self._add("q1", c.head_width, out, c.noisy, rng)
        self._pack()
        self.resample_noise(rng)

    def _pack(self):
        """Move every parameter into one flat buffer; ``params`` keeps named views."""
        arrays = list(self.params.items())
        self.flat = np.concatenate([v.ravel() for _, v in arrays]).astype(self.dtype)
        self.params = OrderedDict()
        off = 0
        for k, v in arrays:
            self.params[k] = self.flat[off:off + v.size].reshape(v.shape)
            off += v.size

    def flat_grad(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(grads[k], dtype=self.dtype).ravel()
                               for k in self.params])

    def _add(self, name, fan_in, fan_out, noisy, rng):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        if noisy:
            sigma = self.config.noisy_sigma0 / np.sqrt(fan_in)
            self.params[f"{name}_w_mu"] = w.astype(self.dtype)
            self.params[f"{name}_w_sigma"] = np.full((fan_in, fan_out), sigma, dtype=self.dtype)
            self.params[f"{name}_b_mu"] = b.astype(self.dtype)
            self.params[f"{name}_b_sigma"] = np.full(fan_out, sigma, dtype=self.dtype)
        else:
            self.params[f"{name}_w"] = w.astype(self.dtype)
            self.params[f"{name}_b"] = b.astype(self.dtype)
        self._layers.append((name, fan_in, fan_out, noisy))

    def noisy_layers(self):
        return [name for name, _, _, noisy in self._layers if noisy]

    def resample_noise(self, rng: np.random.Generator) -> None:
        for name, fan_in, fan_out, noisy in self._layers:
            if not noisy:
                continue
            e_in = _f(rng.standard_normal(fan_in)).astype(self.dtype)
            e_out = _f(rng.standard_normal(fan_out)).astype(self.dtype)
            self.noise[name] = (np.outer(e_in, e_out), e_out)

    def effective_weights(self, name: str, sampled: bool = True):
        p = self.params
        if f"{name}_w" in p:
            return p[f"{name}_w"], p[f"{name}_b"]
        w, b = p[f"{name}_w_mu"], p[f"{name}_b_mu"]
        if sampled:
            ew, eb = self.noise[name]
            w = w + p[f"{name}_w_sigma"] * ew
            b = b + p[f"{name}_b_sigma"] * eb
        return w, b

    # forward / backward -------------------------------------------------------------

    def _linear(self, name, x, sampled, cache):
        w, b = self.effective_weights(name, sampled)
        cache[name] = (x, w, sampled)
        return x @ w + b

    def forward(self, obs: np.ndarray, sampled: bool = True, with_cache: bool = False):
        """Return head logits of shape ``(batch, actions, units)`` (and the cache)."""
        c = self.config
        obs = np.asarray(obs, dtype=self.dtype)
        if obs.ndim == 1:
            obs = obs[None]
        if obs.shape[1] != c.obs_size:
            raise ValueError(f"observation length {obs.shape[1]} != {c.obs_size}")
        batch = obs.shape[0]
        cache: Dict = {}
        ego = obs[:, :c.ego_features]
        h = obs[:, c.ego_features:].reshape(batch * c.vehicle_slots, c.features_per_slot)
        for k in range(len(c.conv_widths)):
            pre = self._linear(f"enc{k}", h, False, cache)
            cache[f"enc{k}_pre"] = pre
            h = np.maximum(pre, 0)
        width = c.conv_widths[-1]
        h = h.reshape(batch, c.vehicle_slots, width)
        arg = np.argmax(h, axis=1)
        pooled = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0]
        cache["pool_arg"] = arg
        trunk = np.concatenate([pooled, ego], axis=1)
        A, U = c.action_count, c.units
        if c.dueling:
            v_pre = self._linear("val0", trunk, sampled, cache)
            cache["val0_pre"] = v_pre
            value = self._linear("val1", np.maximum(v_pre, 0), sampled, cache)
            a_pre = self._linear("adv0", trunk, sampled, cache)
            cache["adv0_pre"] = a_pre
            adv = self._linear("adv1", np.maximum(a_pre, 0), sampled, cache).reshape(batch, A, U)
            logits = value[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
        else:
            q_pre = self._linear("q0", trunk, sampled, cache)
            cache["q0_pre"] = q_pre
            logits = self._linear("q1", np.maximum(q_pre, 0), sampled, cache).reshape(batch, A, U)
        cache["batch"] = batch
        return (logits, cache) if with_cache else logits

    def _linear_back(self, name, dy, grads):
        x, w, sampled = self._cache[name]
        dw = x.T @ dy
        db = dy.sum(axis=0)
        if f"{name}_w" in self.params:
            grads[f"{name}_w"] = dw
            grads[f"{name}_b"] = db
        else:
            grads[f"{name}_w_mu"] = dw
            grads[f"{name}_b_mu"] = db
            if sampled:
                ew, eb = self.noise[name]
                grads[f"{name}_w_sigma"] = dw * ew
                grads[f"{name}_b_sigma"] = db * eb
            else:
                grads[f"{name}_w_sigma"] = np.zeros_like(dw)
                grads[f"{name}_b_sigma"] = np.zeros_like(db)
        return dy @ w.T

    def backward(self, cache: Dict, d_logits: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dlogits."""
        c = self.config
        self._cache = cache
        batch = cache["batch"]
        A, U = c.action_count, c.units
        grads: Dict[str, np.ndarray] = {}
        d_logits = np.asarray(d_logits, dtype=self.dtype)
        if c.dueling:
            d_value = d_logits.sum(axis=1)
            d_adv = d_logits - d_logits.mean(axis=1, keepdims=True)
            dh = self._linear_back("val1", d_value, grads)
            d_trunk = self._linear_back("val0", dh * (cache["val0_pre"] > 0), grads)
            dh = self._linear_back("adv1", d_adv.reshape(batch, A * U), grads)
            d_trunk = d_trunk + self._linear_back("adv0", dh * (cache["adv0_pre"] > 0), grads)
        else:
            dh = self._linear_back("q1", d_logits.reshape(batch, A * U), grads)
            d_trunk = self._linear_back("q0", dh * (cache["q0_pre"] > 0), grads)
        width = c.conv_widths[-1]
        d_pooled = d_trunk[:, :width]
        dh = np.zeros((batch, c.vehicle_slots, width), dtype=d_pooled.dtype)
        np.put_along_axis(dh, cache["pool_arg"][:, None, :], d_pooled[:, None, :], axis=1)
        dh = dh.reshape(batch * c.vehicle_slots, width)
        for k in reversed(range(len(c.conv_widths))):
            dh = dh * (cache[f"enc{k}_pre"] > 0)
            dh = self._linear_back(f"enc{k}", dh, grads)
        self._cache = None
        return OrderedDict((k, grads[k]) for k in self.params)

    # helpers ------------------------------------------------------------------------

    def probabilities(self, obs, sampled: bool = True) -> np.ndarray:
        return softmax(self.forward(obs, sampled))

    def q_values(self, obs, sampled: bool = True) -> np.ndarray:
        logits = self.forward(obs, sampled)
        if self.config.distributional:
            return expected_values(softmax(logits), self.config.support(logits.dtype))
        return logits[..., 0]

    def copy_from(self, other: "Network") -> None:
        """Hard copy of every parameter (target-network sync)."""
        np.copyto(self.flat, other.flat)

    def clone(self, dtype=None) -> "Network":
        net = Network.__new__(Network)
        net.config = self.config
        net.dtype = self.dtype if dtype is None else np.dtype(dtype)
        net._layers = list(self._layers)
        net.params = OrderedDict((k, v.astype(net.dtype)) for k, v in self.params.items())
        net._pack()
        net.noise = {k: (a.astype(net.dtype), b.astype(net.dtype))
                     for k, (a, b) in self.noise.items()}
        return net

    def astype(self, dtype) -> "Network":
        return self.clone(dtype)


def sync_target(online: Network, target: Network) -> None:
    target.copy_from(online)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def expected_values(probs: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Row-wise expectation. A BLAS matmul may round identical rows differently,
    which would break the lowest-index tie rule, so sum elementwise instead."""
    return (probs * support).sum(axis=-1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Adam:
    """Adam over a flat parameter vector with global-norm gradient clipping."""

    def __init__(self, size: int, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, clip_norm: Optional[float] = 10.0, dtype=np.float32):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self._tmp = np.zeros(size, dtype=dtype)

    def step(self, flat: np.ndarray, grad: np.ndarray, lr: Optional[float] = None) -> float:
        """Update ``flat`` in place; returns the pre-clip gradient norm.

        A non-finite gradient raises before any state is touched.
        """
        lr = self.lr if lr is None else lr
        norm = float(np.sqrt(np.dot(grad, grad)))
        if not np.isfinite(norm):
            raise FloatingPointError("non-finite gradient, optimizer step rejected")
        if self.clip_norm is not None and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        tmp = self._tmp
        self.m *= self.beta1
        np.multiply(grad, 1.0 - self.beta1, out=tmp)
        self.m += tmp
        self.v *= self.beta2
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - self.beta2
        self.v += tmp
        if lr != 0.0:
            np.multiply(self.v, 1.0 / c2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(self.m, tmp, out=tmp)
            tmp *= lr / c1
            flat -= tmp
        return norm


# checkpoint files ---------------------------------------------------------------------

MAGIC = b"SAFELANE"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray], header: Dict) -> None:
    """Versioned JSON header followed by little-endian float32 arrays in header order."""
    layout = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    meta = dict(header)
    meta["arrays"] = layout
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> Tuple[Dict, "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, n = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(n).decode("utf-8"))
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for item in meta.pop("arrays"):
            shape = tuple(item["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"truncated checkpoint at array {item['name']}")
            arrays[item["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
        if fh.read(1):
            raise ValueError("trailing bytes after the last array")
    return meta, arrays


def network_config_from_dict(d: Dict) -> NetworkConfig:
    d = dict(d)
    d["conv_widths"] = tuple(d["conv_widths"])
    return NetworkConfig(**d)


def network_config_to_dict(c: NetworkConfig) -> Dict:
    return asdict(c)
