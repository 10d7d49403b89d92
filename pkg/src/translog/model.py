"""Transformer encoder with per-layer bottleneck adapters and a pooled head.

Parameter names follow a flat ``layers.<i>.<block>.<leaf>`` scheme so that the
checkpoint header can list them and freeze groups can be selected by prefix.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MODES = ("scratch", "finetune", "adapter")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 768
    heads: int = 8
    layers: int = 1
    ffn_dim: int = 3072
    adapter_dim: int = 128
    head_hidden: int = 256
    l: int = 20  # noqa: E741
    dropout: float = 0.1

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if not 1 <= self.adapter_dim < self.d:
            raise ConfigError(f"adapter_dim must satisfy 1 <= m < d, got m={self.adapter_dim}")
        if self.ffn_dim < 1 or self.head_hidden < 1 or self.l < 1:
            raise ConfigError("ffn_dim, head_hidden and l must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def backbone_hash(self) -> str:
        """Identity of the frozen part: anything that changes backbone shapes or semantics."""
        key = {k: getattr(self, k) for k in ("d", "heads", "layers", "ffn_dim", "l")}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def param_shapes(config: ModelConfig, adapters: bool = False) -> dict[str, tuple[int, ...]]:
    d, f, m, hh = config.d, config.ffn_dim, config.adapter_dim, config.head_hidden
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(config.layers):
        p = f"layers.{i}."
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        shapes[p + "ffn.fc1.weight"] = (f, d)
        shapes[p + "ffn.fc1.bias"] = (f,)
        shapes[p + "ffn.fc2.weight"] = (d, f)
        shapes[p + "ffn.fc2.bias"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        if adapters:
            shapes[p + "adapter.down.weight"] = (m, d)
            shapes[p + "adapter.down.bias"] = (m,)
            shapes[p + "adapter.up.weight"] = (d, m)
            shapes[p + "adapter.up.bias"] = (d,)
    shapes["head.fc1.weight"] = (hh, d)
    shapes["head.fc1.bias"] = (hh,)
    shapes["head.fc2.weight"] = (1, hh)
    shapes["head.fc2.bias"] = (1,)
    return shapes


def param_group(name: str) -> str:
    """One of ``backbone``, ``norm``, ``adapter``, ``head``."""
    if name.startswith("head."):
        return "head"
    if ".adapter." in name:
        return "adapter"
    if ".ln1." in name or ".ln2." in name:
        return "norm"
    return "backbone"


def is_trainable(name: str, mode: str) -> bool:
    group = param_group(name)
    if mode == "adapter":
        return group != "backbone"
    if mode in ("scratch", "finetune"):
        return group != "adapter"
    raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")


def count_params(config: ModelConfig, mode: str) -> int:
    """Number of trainable scalars in ``mode``."""
    shapes = param_shapes(config, adapters=(mode == "adapter"))
    return sum(int(np.prod(s)) for n, s in shapes.items() if is_trainable(n, mode))


def _init_tensor(name: str, shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
    if name.endswith(".gamma"):
        data = np.ones(shape, np.float32)
    elif name.endswith(".beta") or ".adapter.up." in name:
        data = np.zeros(shape, np.float32)
    else:
        bound = 1.0 / math.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(data)


def _fan_in(name: str, shapes: dict[str, tuple[int, ...]]) -> int:
    weight = name.rsplit(".", 1)[0] + ".weight"
    return shapes[weight][1] if weight in shapes else 1


def init_params(config: ModelConfig, rng: np.random.Generator,
                adapters: bool = False) -> dict[str, Tensor]:
    shapes = param_shapes(config, adapters)
    return {n: _init_tensor(n, s, _fan_in(n, shapes), rng) for n, s in shapes.items()}


def positional_encoding(l: int, d: int) -> np.ndarray:  # noqa: E741
    pos = np.arange(l)[:, None]
    i = np.arange(0, d, 2)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((l, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(np.float32)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None, heads: int,
              out_weight: Tensor | None = None, out_bias: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product attention over (b, l, d) inputs.

    ``mask`` is (b, l) with True at real (non-padded) positions; padded keys get
    zero weight. Without ``out_weight`` the concatenated head outputs are returned.
    """
    b, l, d = q.shape  # noqa: E741
    if d % heads:
        raise ConfigError(f"d={d} is not divisible by heads={heads}")
    dk = d // heads

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, l, heads, dk)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    key_mask = None if mask is None else np.asarray(mask, bool)[:, None, None, :]
    weights = ad.softmax(scores, key_mask)
    ctx = ad.matmul(weights, vh)
    out = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, l, d))
    if out_weight is not None:
        out = ad.linear(out, out_weight, out_bias)
    return out


def adapter_forward(h: Tensor, w_down: Tensor, w_up: Tensor,
                    b_down: Tensor | None = None, b_up: Tensor | None = None) -> Tensor:
    """``h' = W_up tanh(W_down h + b_down) + b_up + h``."""
    d = h.shape[-1]
    if w_down.ndim != 2 or w_up.ndim != 2 or w_down.shape[1] != d \
            or w_up.shape != (d, w_down.shape[0]):
        raise ad.ShapeError(
            f"adapter: incompatible shapes {w_down.shape} and {w_up.shape} for d={d}")
    z = ad.tanh(ad.linear(h, w_down, b_down))
    return ad.add(ad.linear(z, w_up, b_up), h)


class TransLog:
    """Encoder + head bound to a parameter store.

    ``mode`` decides which parameter groups are trainable and whether the
    adapters sit in the forward graph.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], mode: str = "scratch"):
        self.config = config
        self.params = params
        self._pe = positional_encoding(config.l, config.d)
        self.set_mode(mode)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator,
                   mode: str = "scratch") -> TransLog:
        return cls(config, init_params(config, rng, adapters=(mode == "adapter")), mode)

    @property
    def has_adapters(self) -> bool:
        return any(param_group(n) == "adapter" for n in self.params)

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "adapter" and not self.has_adapters:
            raise ConfigError("mode=adapter needs adapter weights; call add_adapters() first")
        self.mode = mode
        for name, t in self.params.items():
            t.requires_grad = is_trainable(name, mode)

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if is_trainable(n, self.mode)]

    def num_trainable(self) -> int:
        return sum(self.params[n].data.size for n in self.trainable_names())

    def backbone_names(self) -> list[str]:
        return [n for n in self.params if param_group(n) == "backbone"]

    def add_adapters(self, rng: np.random.Generator) -> None:
        """Insert fresh adapters (up-projection zeroed, so the network function is unchanged)."""
        shapes = param_shapes(self.config, adapters=True)
        for n, s in shapes.items():
            if param_group(n) == "adapter":
                self.params[n] = _init_tensor(n, s, _fan_in(n, shapes), rng)
        self.params = {n: self.params[n] for n in shapes if n in self.params}

    def drop_adapters(self) -> None:
        self.params = {n: t for n, t in self.params.items() if param_group(n) != "adapter"}
        if self.mode == "adapter":
            self.set_mode("finetune")

    def reinit_head(self, rng: np.random.Generator) -> None:
        shapes = param_shapes(self.config)
        for n, s in shapes.items():
            if param_group(n) == "head":
                self.params[n] = _init_tensor(n, s, _fan_in(n, shapes), rng)
        self.set_mode(self.mode)

    def forward(self, x, mask, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Anomaly probabilities, shape (b,), for inputs (b, l, d) and masks (b, l)."""
        cfg, p = self.config, self.params
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))
        mask = np.asarray(mask, bool)
        if x.ndim != 3 or x.shape[1:] != (cfg.l, cfg.d) or mask.shape != x.shape[:2]:
            raise ad.ShapeError(
                f"forward: expected (b, {cfg.l}, {cfg.d}) inputs with (b, {cfg.l}) mask, "
                f"got {x.shape} and {mask.shape}")
        use_adapters = self.mode == "adapter"
        if use_adapters and not self.has_adapters:
            raise ConfigError("mode=adapter needs adapter weights")
        drop = cfg.dropout
        # unit-scale embeddings would be swamped by the sinusoids otherwise
        h = ad.add(ad.scale(x, math.sqrt(cfg.d)), Tensor(self._pe))
        for i in range(cfg.layers):
            pre = f"layers.{i}."
            q = ad.linear(h, p[pre + "attn.q.weight"], p[pre + "attn.q.bias"])
            k = ad.linear(h, p[pre + "attn.k.weight"], p[pre + "attn.k.bias"])
            v = ad.linear(h, p[pre + "attn.v.weight"], p[pre + "attn.v.bias"])
            a = attention(q, k, v, mask, cfg.heads, p[pre + "attn.o.weight"], p[pre + "attn.o.bias"])
            h = ad.layer_norm(ad.add(h, ad.dropout(a, drop, train, rng)),
                              p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
            f = ad.relu(ad.linear(h, p[pre + "ffn.fc1.weight"], p[pre + "ffn.fc1.bias"]))
            f = ad.linear(f, p[pre + "ffn.fc2.weight"], p[pre + "ffn.fc2.bias"])
            h = ad.layer_norm(ad.add(h, ad.dropout(f, drop, train, rng)),
                              p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
            if use_adapters:
                h = adapter_forward(h, p[pre + "adapter.down.weight"], p[pre + "adapter.up.weight"],
                                    p[pre + "adapter.down.bias"], p[pre + "adapter.up.bias"])
        pooled = ad.mean_pool(h, mask)
        z = ad.tanh(ad.linear(pooled, p["head.fc1.weight"], p["head.fc1.bias"]))
        logit = ad.linear(z, p["head.fc2.weight"], p["head.fc2.bias"])
        return ad.sigmoid(ad.reshape(logit, (logit.shape[0],)))

    def predict(self, x, mask, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size], mask[i:i + batch_size]).data
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, np.float32)


def forward(batch_x, batch_mask, params: dict[str, Tensor], config: ModelConfig,
            mode: str) -> Tensor:
    """Functional entry point: probabilities for a batch under ``mode``."""
    return TransLog(config, params, mode).forward(batch_x, batch_mask)
