"""Hazard-complement models over static bits and temporal vitals.

Three model kinds share one forward contract, mapping a batch of
patients to per-hour probabilities q(t) of surviving step t (the
complement of the discrete hazard):

* ``dynst``  - transformer over embedded static+temporal inputs with
  sinusoidal position encodings, causally masked self-attention, and a
  two-layer sigmoid head;
* ``static`` - the same architecture with the temporal input zeroed, so
  predictions vary over time only through the position encodings;
* ``linear`` - sigmoid(w . z + b_t) with per-hour intercepts, which
  ignores the vitals entirely and serves as the deliberately
  misspecified baseline.

Output position k (0-based) predicts survival of hour k+1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError

__all__ = [
    "ModelConfig",
    "positional_encoding",
    "DynstModel",
    "LinearHazardModel",
    "build_model",
    "parameter_count",
    "survival_from_step_probs",
    "expected_time_from_step_probs",
    "save_model",
    "load_model",
    "MODEL_KINDS",
]

MODEL_KINDS = ("dynst", "static", "linear")

# logit of the hourly-survival prior used to initialize output biases
HEAD_BIAS_INIT = 5.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    d_ff: int
    t_max: int
    p_static: int
    q_temporal: int
    n_heads: int = 8
    dropout_p: float = 0.1

    def __post_init__(self):
        if min(self.d_model, self.n_layers, self.d_ff, self.n_heads) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.t_max < 1:
            raise ConfigError("t_max must be at least 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_model % 2 != 0:
            raise ConfigError("d_model must be even for sinusoidal encodings")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.p_static < 0 or self.q_temporal < 0:
            raise ConfigError("feature counts cannot be negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def positional_encoding(t_max: int, d_model: int) -> np.ndarray:
    """Sinusoidal encodings, positions 0..t_max-1, shape (t_max, d_model)."""
    if d_model % 2 != 0:
        raise ConfigError("d_model must be even for sinusoidal encodings")
    pos = np.arange(t_max, dtype=float)[:, None]
    i = np.arange(0, d_model, 2, dtype=float)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.empty((t_max, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class DynstModel:
    """Causally masked transformer encoder with a sigmoid hazard head.

    ``use_temporal=False`` turns it into the static-only variant: the
    vitals input is replaced by zeros while the position encodings are
    kept, so the predicted curve still varies over time.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 use_temporal: bool = True):
        self.config = config
        self.use_temporal = use_temporal
        self.kind = "dynst" if use_temporal else "static"
        self.pe = positional_encoding(config.t_max, config.d_model)
        self._causal_mask = np.triu(np.ones((config.t_max, config.t_max), dtype=bool), k=1)
        # additive form of masked_fill(mask, -1e9): same forward values, and
        # the exp underflow makes masked attention weights (and their
        # gradients) exactly zero, at less memory traffic
        self._mask_bias = Tensor(np.where(self._causal_mask, -1e9, 0.0))
        self.params: dict[str, Tensor] = {}
        self._init_params(rng)

    def _param(self, name: str, fan_in: int, shape, rng) -> None:
        self.params[name] = Tensor(_uniform_init(rng, fan_in, shape), requires_grad=True)

    def _init_params(self, rng) -> None:
        cfg = self.config
        d, f = cfg.d_model, cfg.d_ff
        self._param("embed.temporal.w", cfg.q_temporal, (cfg.q_temporal, d), rng)
        self._param("embed.temporal.b", cfg.q_temporal, (d,), rng)
        if cfg.p_static > 0:
            self._param("embed.static.w", cfg.p_static, (cfg.p_static, d), rng)
            self._param("embed.static.b", cfg.p_static, (d,), rng)
        for i in range(cfg.n_layers):
            for proj in ("q", "k", "v", "o"):
                self._param(f"layer{i}.attn.w{proj}", d, (d, d), rng)
                self._param(f"layer{i}.attn.b{proj}", d, (d,), rng)
            for norm in ("norm1", "norm2"):
                self.params[f"layer{i}.{norm}.gain"] = Tensor(np.ones(d), requires_grad=True)
                self.params[f"layer{i}.{norm}.bias"] = Tensor(np.zeros(d), requires_grad=True)
            self._param(f"layer{i}.ff.w1", d, (d, f), rng)
            self._param(f"layer{i}.ff.b1", d, (f,), rng)
            self._param(f"layer{i}.ff.w2", f, (f, d), rng)
            self._param(f"layer{i}.ff.b2", f, (d,), rng)
        self._param("head.w1", d, (d, d), rng)
        self._param("head.b1", d, (d,), rng)
        self._param("head.w2", d, (d, 1), rng)
        # output bias starts at the hourly-survival prior (q near 1), so the
        # head does not have to climb the whole logit range during training
        self.params["head.b2"] = Tensor(np.full(1, HEAD_BIAS_INIT), requires_grad=True)

    # --- forward pieces ---------------------------------------------------

    def embed_inputs(self, z: np.ndarray, v: np.ndarray) -> Tensor:
        """Temporal embedding + static embedding + position encodings."""
        cfg = self.config
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        if z.ndim != 2 or z.shape[1] != cfg.p_static:
            raise ShapeError("embed_inputs.static", z.shape, (-1, cfg.p_static))
        if v.ndim != 3 or v.shape[1:] != (cfg.t_max, cfg.q_temporal):
            raise ShapeError("embed_inputs.temporal", v.shape, (-1, cfg.t_max, cfg.q_temporal))
        if z.shape[0] != v.shape[0]:
            raise ShapeError("embed_inputs.batch", z.shape, v.shape)
        if not self.use_temporal:
            v = np.zeros_like(v)
        p = self.params
        x = ad.linear(Tensor(v), p["embed.temporal.w"], p["embed.temporal.b"])
        if cfg.p_static > 0:
            w_z = ad.linear(Tensor(z), p["embed.static.w"], p["embed.static.b"])
            x = ad.add(x, ad.reshape(w_z, (z.shape[0], 1, cfg.d_model)))
        return ad.add(x, Tensor(self.pe))

    def _attention(self, x: Tensor, layer: int, collect=None) -> Tensor:
        cfg = self.config
        p = self.params
        batch = x.shape[0]
        heads, d_k = cfg.n_heads, cfg.d_model // cfg.n_heads

        def split(name):
            proj = ad.linear(x, p[f"layer{layer}.attn.w{name}"], p[f"layer{layer}.attn.b{name}"])
            proj = ad.reshape(proj, (batch, cfg.t_max, heads, d_k))
            return ad.transpose(proj, (0, 2, 1, 3))

        q, k, v = split("q"), split("k"), split("v")
        # scale q instead of the (t x t) score matrix; same values, less traffic
        scores = ad.matmul(ad.mul(q, 1.0 / math.sqrt(d_k)), ad.transpose(k, (0, 1, 3, 2)))
        scores = ad.add(scores, self._mask_bias)
        attn = ad.softmax(scores, axis=-1)
        if collect is not None:
            collect.append(attn.data)
        ctx = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3))
        ctx = ad.reshape(ctx, (batch, cfg.t_max, cfg.d_model))
        return ad.linear(ctx, p[f"layer{layer}.attn.wo"], p[f"layer{layer}.attn.bo"])

    def _norm(self, x: Tensor, layer: int, which: str) -> Tensor:
        gain = self.params[f"layer{layer}.{which}.gain"]
        bias = self.params[f"layer{layer}.{which}.bias"]
        return ad.add(ad.mul(ad.layer_norm(x, axis=-1), gain), bias)

    def encode(self, x: Tensor, train: bool = False,
               rng: np.random.Generator | None = None, collect_attention=None) -> Tensor:
        """Post-norm encoder stack under the causal mask."""
        cfg = self.config
        p = self.params
        for i in range(cfg.n_layers):
            a = self._attention(x, i, collect=collect_attention)
            a = ad.dropout(a, cfg.dropout_p, train, rng)
            x = self._norm(ad.add(x, a), i, "norm1")
            h = ad.max_with_zero(ad.linear(x, p[f"layer{i}.ff.w1"], p[f"layer{i}.ff.b1"]))
            h = ad.linear(h, p[f"layer{i}.ff.w2"], p[f"layer{i}.ff.b2"])
            h = ad.dropout(h, cfg.dropout_p, train, rng)
            x = self._norm(ad.add(x, h), i, "norm2")
        return x

    def hazard_head(self, encoded: Tensor) -> Tensor:
        """Two-layer head with sigmoid output, (B, t_max) in (0, 1)."""
        p = self.params
        h = ad.max_with_zero(ad.linear(encoded, p["head.w1"], p["head.b1"]))
        logits = ad.linear(h, p["head.w2"], p["head.b2"])
        batch = logits.shape[0]
        return ad.sigmoid(ad.reshape(logits, (batch, self.config.t_max)))

    def forward(self, z: np.ndarray, v: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None, collect_attention=None) -> Tensor:
        x = self.embed_inputs(z, v)
        x = self.encode(x, train=train, rng=rng, collect_attention=collect_attention)
        return self.hazard_head(x)


class LinearHazardModel:
    """q(t) = sigmoid(w . z + b_t): linear in the static bits, blind to vitals."""

    kind = "linear"

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.params = {
            "w": Tensor(_uniform_init(rng, config.p_static, (config.p_static, 1)),
                        requires_grad=True),
            "b": Tensor(np.full(config.t_max, HEAD_BIAS_INIT), requires_grad=True),
        }

    def forward(self, z: np.ndarray, v: np.ndarray = None, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != self.config.p_static:
            raise ShapeError("linear_forward", z.shape, (-1, self.config.p_static))
        score = ad.matmul(Tensor(z), self.params["w"])  # (B, 1)
        return ad.sigmoid(ad.add(score, self.params["b"]))


def build_model(kind: str, config: ModelConfig, rng: np.random.Generator):
    if kind == "dynst":
        return DynstModel(config, rng, use_temporal=True)
    if kind == "static":
        return DynstModel(config, rng, use_temporal=False)
    if kind == "linear":
        return LinearHazardModel(config, rng)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def parameter_count(kind: str, config: ModelConfig) -> int:
    """Closed-form parameter count for a model kind under ``config``."""
    d, f, p, q = config.d_model, config.d_ff, config.p_static, config.q_temporal
    if kind == "linear":
        return p + config.t_max
    total = q * d + d  # temporal embedding
    if p > 0:
        total += p * d + d
    per_layer = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d)
    total += config.n_layers * per_layer
    total += (d * d + d) + (d + 1)  # head
    return total


def survival_from_step_probs(step_probs: np.ndarray) -> np.ndarray:
    """Predicted survival curve: cumulative product of q(1..t)."""
    return np.cumprod(step_probs, axis=-1)


def expected_time_from_step_probs(step_probs: np.ndarray) -> np.ndarray:
    """Predicted survival time: sum of the predicted survival curve."""
    return survival_from_step_probs(step_probs).sum(axis=-1)


def predict_step_probs(model, z: np.ndarray, v: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Batched eval-mode forward returning a plain (n, t_max) array."""
    outs = []
    with no_grad():
        for start in range(0, len(z), batch_size):
            sl = slice(start, start + batch_size)
            outs.append(model.forward(z[sl], v[sl]).data)
    return np.concatenate(outs, axis=0)


def save_model(path, model) -> None:
    header = {"kind": model.kind, "config": model.config.to_dict()}
    save_checkpoint(path, model.params, header=header)


def load_model(path):
    header, arrays = load_checkpoint(path)
    config = ModelConfig.from_dict(header["config"])
    model = build_model(header["kind"], config, np.random.default_rng(0))
    for name, arr in arrays.items():
        if name not in model.params:
            raise ConfigError(f"checkpoint parameter {name!r} not in model")
        if model.params[name].data.shape != arr.shape:
            raise ConfigError(f"checkpoint parameter {name!r} has shape {arr.shape}, "
                              f"expected {model.params[name].data.shape}")
        model.params[name].data = arr
    return model
