"""Configurable multi-head feed-forward classifier with hand-written backprop.

Trunk layers apply Linear -> BatchNorm -> Activation -> Dropout in that
order; one or more linear output heads branch off the trunk. Classification
heads emit raw logits (softmax lives in the loss); projection heads emit
metric-space vectors for the pairwise/triplet losses.

Fixed numerical choices, documented for reproducibility:

* He initialization, std = sqrt(2 / fan_in); biases zero.
* Batch norm: eps 1e-5; running stats updated with momentum 0.1 using the
  unbiased batch variance; initialized to mean 0 / var 1.
* Dropout is inverted: surviving units are scaled by 1/(1-rate) at train
  time so eval needs no rescaling.
* LeakyReLU slope 0.01; Swish is x * sigmoid(x); ELU alpha 1.

Checkpoint format ("EMTN"): magic ``EMTN``, u32 little-endian format
version (1), u32 LE byte length of the UTF-8 JSON-encoded NetworkConfig,
the JSON itself, then every parameter array in declaration order as raw
little-endian float64 — per trunk layer W, b (+ gamma, beta, running mean,
running var when batch norm is on), then per head W, b. Round-trips are
bit-exact.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .tensor import Matrix, Rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.01

CHECKPOINT_MAGIC = b"EMTN"
CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ELU = "elu"
    SWISH = "swish"


class HeadRole(str, Enum):
    CLASSIFICATION = "classification"
    PROJECTION = "projection"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class HeadConfig:
    role: HeadRole
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "role", HeadRole(self.role))
        if self.output_dim < 1:
            raise ConfigError(f"head output_dim must be >= 1, got {self.output_dim}")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (256, 128, 64)
    activation: Activation = Activation.RELU
    dropout_rate: float = 0.3
    batch_norm: bool = True
    heads: tuple[HeadConfig, ...] = (HeadConfig(HeadRole.CLASSIFICATION, 10),)

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 1 <= len(self.hidden_sizes) <= 4:
            raise ConfigError(
                f"1 to 4 hidden layers supported, got {len(self.hidden_sizes)}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"zero-width hidden layer in {self.hidden_sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not self.heads:
            raise ConfigError("at least one output head required")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation.value,
            "dropout_rate": self.dropout_rate,
            "batch_norm": self.batch_norm,
            "heads": [{"role": h.role.value, "output_dim": h.output_dim}
                      for h in self.heads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_sizes=tuple(d["hidden_sizes"]),
            activation=Activation(d["activation"]),
            dropout_rate=float(d["dropout_rate"]),
            batch_norm=bool(d["batch_norm"]),
            heads=tuple(HeadConfig(HeadRole(h["role"]), int(h["output_dim"]))
                        for h in d["heads"]),
        )


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def apply_activation(kind: Activation, z: Matrix) -> Matrix:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.LEAKY_RELU:
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if kind is Activation.ELU:
        return np.where(z > 0, z, np.exp(np.minimum(z, 0.0)) - 1.0)
    if kind is Activation.SWISH:
        return z * _sigmoid(z)
    raise ConfigError(f"unknown activation {kind}")


def activation_grad(kind: Activation, z: Matrix) -> Matrix:
    """Derivative of the activation w.r.t. its pre-activation input."""
    if kind is Activation.RELU:
        return (z > 0).astype(np.float64)
    if kind is Activation.LEAKY_RELU:
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if kind is Activation.ELU:
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind is Activation.SWISH:
        s = _sigmoid(z)
        return s + z * s * (1.0 - s)
    raise ConfigError(f"unknown activation {kind}")


# --------------------------------------------------------------------------
# caches and gradients
# --------------------------------------------------------------------------

@dataclass
class LayerCache:
    x_in: Matrix          # input to the linear transform
    z_lin: Matrix         # after linear, before batch norm
    xhat: Matrix | None   # normalized values (batch norm only)
    inv_std: np.ndarray | None
    z_act: Matrix         # input to the activation
    mask: Matrix | None   # dropout keep mask (None when dropout inactive)


@dataclass
class ForwardCache:
    """Backprop bookkeeping; produced only by Train-mode forward passes."""

    layers: list[LayerCache]
    trunk_out: Matrix
    batch_size: int


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    d_input: Matrix


class Network:
    """Parameter container plus forward/backward/predict.

    A network under training (train-mode forwards mutate running stats)
    is single-owner. Eval-mode forward and predict are read-only and safe
    to call from many threads on a frozen network.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.mode = Mode.EVAL
        self.params: dict[str, np.ndarray] = {}
        dims = [config.input_dim, *config.hidden_sizes]
        for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"layer{l}.W"] = np.zeros((fan_in, fan_out))
            self.params[f"layer{l}.b"] = np.zeros(fan_out)
            if config.batch_norm:
                self.params[f"layer{l}.gamma"] = np.ones(fan_out)
                self.params[f"layer{l}.beta"] = np.zeros(fan_out)
                self.params[f"layer{l}.running_mean"] = np.zeros(fan_out)
                self.params[f"layer{l}.running_var"] = np.ones(fan_out)
        trunk_dim = config.hidden_sizes[-1]
        for h, head in enumerate(config.heads):
            self.params[f"head{h}.W"] = np.zeros((trunk_dim, head.output_dim))
            self.params[f"head{h}.b"] = np.zeros(head.output_dim)

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, config: NetworkConfig, rng: Rng) -> "Network":
        """He-initialized network; weights drawn layer by layer in order."""
        net = cls(config)
        dims = [config.input_dim, *config.hidden_sizes]
        for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            net.params[f"layer{l}.W"] = rng.normal(
                fan_in, fan_out, 0.0, np.sqrt(2.0 / fan_in))
        trunk_dim = config.hidden_sizes[-1]
        for h, head in enumerate(config.heads):
            net.params[f"head{h}.W"] = rng.normal(
                trunk_dim, head.output_dim, 0.0, np.sqrt(2.0 / trunk_dim))
        return net

    def copy(self) -> "Network":
        dup = Network(self.config)
        dup.mode = self.mode
        dup.params = {k: v.copy() for k, v in self.params.items()}
        return dup

    # -- parameter traversal -----------------------------------------------

    def state_items(self):
        """All arrays in checkpoint declaration order."""
        for l in range(len(self.config.hidden_sizes)):
            yield f"layer{l}.W", self.params[f"layer{l}.W"]
            yield f"layer{l}.b", self.params[f"layer{l}.b"]
            if self.config.batch_norm:
                for suffix in ("gamma", "beta", "running_mean", "running_var"):
                    yield f"layer{l}.{suffix}", self.params[f"layer{l}.{suffix}"]
        for h in range(len(self.config.heads)):
            yield f"head{h}.W", self.params[f"head{h}.W"]
            yield f"head{h}.b", self.params[f"head{h}.b"]

    def named_parameters(self):
        """Trainable arrays only (running stats excluded)."""
        for name, arr in self.state_items():
            if not name.endswith(("running_mean", "running_var")):
                yield name, arr

    # -- forward -----------------------------------------------------------

    def forward(self, batch: Matrix, mode: Mode | None = None,
                rng: Rng | None = None) -> tuple[list[Matrix], ForwardCache | None]:
        """Run the trunk and every head; cache intermediates in Train mode."""
        cfg = self.config
        mode = Mode(mode) if mode is not None else self.mode
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ShapeError(f"batch shape {x.shape} does not match "
                             f"input_dim {cfg.input_dim}")
        train = mode is Mode.TRAIN
        n = x.shape[0]
        if train and cfg.batch_norm and n < 2:
            raise ShapeError("batch of 1 is too small for batch norm in train mode")
        if train and cfg.dropout_rate > 0 and rng is None:
            raise ConfigError("train-mode forward with dropout needs an rng")

        caches: list[LayerCache] = []
        for l in range(len(cfg.hidden_sizes)):
            x_in = x
            z_lin = x_in @ self.params[f"layer{l}.W"] + self.params[f"layer{l}.b"]
            xhat = inv_std = None
            if cfg.batch_norm:
                if train:
                    mu = z_lin.mean(axis=0)
                    var = z_lin.var(axis=0)
                    inv_std = 1.0 / np.sqrt(var + BN_EPS)
                    xhat = (z_lin - mu) * inv_std
                    unbiased = var * n / (n - 1)
                    rm, rv = f"layer{l}.running_mean", f"layer{l}.running_var"
                    self.params[rm] = (1 - BN_MOMENTUM) * self.params[rm] + BN_MOMENTUM * mu
                    self.params[rv] = (1 - BN_MOMENTUM) * self.params[rv] + BN_MOMENTUM * unbiased
                else:
                    mu = self.params[f"layer{l}.running_mean"]
                    inv = 1.0 / np.sqrt(self.params[f"layer{l}.running_var"] + BN_EPS)
                    xhat = (z_lin - mu) * inv
                z_act = self.params[f"layer{l}.gamma"] * xhat + self.params[f"layer{l}.beta"]
            else:
                z_act = z_lin
            h_act = apply_activation(cfg.activation, z_act)
            mask = None
            if train and cfg.dropout_rate > 0:
                mask = (rng.uniform(*h_act.shape) >= cfg.dropout_rate).astype(np.float64)
                x = h_act * mask / (1.0 - cfg.dropout_rate)
            else:
                x = h_act
            if train:
                caches.append(LayerCache(x_in, z_lin, xhat, inv_std, z_act, mask))

        outputs = [x @ self.params[f"head{h}.W"] + self.params[f"head{h}.b"]
                   for h in range(len(cfg.heads))]
        cache = ForwardCache(caches, x, n) if train else None
        return outputs, cache

    # -- backward ------------------------------------------------------------

    def backward(self, cache: ForwardCache, head_grads: list[Matrix]) -> Gradients:
        """Backprop head gradients to every parameter and to the input.

        ``head_grads`` holds d(loss)/d(head output) per head, aligned with
        ``config.heads``; trunk contributions from all heads are summed.
        """
        cfg = self.config
        if cache is None or len(cache.layers) != len(cfg.hidden_sizes):
            raise ConfigError("forward cache does not match network config")
        if len(head_grads) != len(cfg.heads):
            raise ConfigError(f"{len(head_grads)} head gradients for "
                              f"{len(cfg.heads)} heads")

        grads: dict[str, np.ndarray] = {}
        d_trunk = np.zeros_like(cache.trunk_out)
        for h, g in enumerate(head_grads):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (cache.batch_size, cfg.heads[h].output_dim):
                raise ShapeError(f"head {h} gradient has shape {g.shape}")
            grads[f"head{h}.W"] = cache.trunk_out.T @ g
            grads[f"head{h}.b"] = g.sum(axis=0)
            d_trunk += g @ self.params[f"head{h}.W"].T

        d = d_trunk
        n = cache.batch_size
        for l in reversed(range(len(cfg.hidden_sizes))):
            lc = cache.layers[l]
            if lc.mask is not None:
                d = d * lc.mask / (1.0 - cfg.dropout_rate)
            d = d * activation_grad(cfg.activation, lc.z_act)
            if cfg.batch_norm:
                gamma = self.params[f"layer{l}.gamma"]
                grads[f"layer{l}.gamma"] = (d * lc.xhat).sum(axis=0)
                grads[f"layer{l}.beta"] = d.sum(axis=0)
                dxhat = d * gamma
                d = (lc.inv_std / n) * (
                    n * dxhat
                    - dxhat.sum(axis=0)
                    - lc.xhat * (dxhat * lc.xhat).sum(axis=0)
                )
            grads[f"layer{l}.W"] = lc.x_in.T @ d
            grads[f"layer{l}.b"] = d.sum(axis=0)
            d = d @ self.params[f"layer{l}.W"].T
        return Gradients(params=grads, d_input=d)

    # -- inference -----------------------------------------------------------

    def classification_head_index(self) -> int:
        for h, head in enumerate(self.config.heads):
            if head.role is HeadRole.CLASSIFICATION:
                return h
        raise ConfigError("network has no classification head")

    def predict(self, batch: Matrix) -> np.ndarray:
        """Argmax class per row from the first classification head (eval mode).

        Ties break toward the lowest class index.
        """
        h = self.classification_head_index()
        outputs, _ = self.forward(batch, mode=Mode.EVAL)
        return np.argmax(outputs[h], axis=1)


# --------------------------------------------------------------------------
# checkpoint IO
# --------------------------------------------------------------------------

def save_checkpoint(net: Network, path) -> None:
    cfg_json = json.dumps(net.config.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(cfg_json)))
        f.write(cfg_json)
        for _, arr in net.state_items():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r} at offset 0")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    cfg_end = 12 + cfg_len
    if len(blob) < cfg_end:
        raise FormatError(f"truncated config block: need {cfg_end} bytes, "
                          f"file has {len(blob)}")
    try:
        config = NetworkConfig.from_dict(json.loads(blob[12:cfg_end].decode("utf-8")))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"malformed config JSON at offset 12: {exc}") from exc

    net = Network(config)
    offset = cfg_end
    for name, arr in net.state_items():
        nbytes = arr.size * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"truncated parameter data for {name} at offset "
                              f"{offset}: need {nbytes} bytes, "
                              f"{len(blob) - offset} left")
        net.params[name] = np.frombuffer(
            blob, dtype="<f8", count=arr.size, offset=offset
        ).reshape(arr.shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after offset {offset}")
    return net
