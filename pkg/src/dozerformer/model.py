"""The Dozerformer forecaster: decomposition, trend linear, DI embedding,
patching, sparse-attention encoder/decoder, 1x1 output head.

Tensors flowing through the seasonal branch use the layouts

    embedding      (B, c, T, D)
    patches        (B, c, N, p, D)
    tokens         (B * D, N, c * p)     one sequence per variable

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted names.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .attention import HeadConfig, mha_param_shapes, multi_head_attention
from .errors import ConfigError, ParameterError
from .masks import AttnMask, CrossCoords, SparsityParams, count_pairs, cross_mask, self_mask
from .tensor import Tensor, as_tensor, concat, dropout, layer_norm

Params = dict[str, Tensor]


@dataclass(frozen=True)
class DozerformerConfig:
    I: int = 96
    L: int = 24
    O: int = 24
    D: int = 1
    p: int = 24
    c: int = 4
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    sparsity: SparsityParams = field(default_factory=SparsityParams)
    kernels: tuple[int, ...] = (13, 17)
    d_ff: int | None = None
    dropout: float = 0.1
    self_components: tuple[str, ...] = ("local", "stride")
    cross_components: tuple[str, ...] = ("local", "stride", "vary")
    stride_anchor: str = "phase"
    trend_per_variable: bool = False

    def __post_init__(self):
        if isinstance(self.sparsity, Mapping):
            object.__setattr__(self, "sparsity", SparsityParams(**self.sparsity))
        for name in ("kernels", "self_components", "cross_components"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("I", "L", "O", "D", "p", "c", "heads", "enc_layers", "dec_layers"):
            value = getattr(self, name)
            lower = 0 if name == "L" else 1
            if not isinstance(value, (int, np.integer)) or value < lower:
                raise ConfigError(f"{name} must be an integer >= {lower}, got {value!r}")
        if self.L % self.p or self.O % self.p:
            raise ConfigError(f"patch size p={self.p} must divide L={self.L} and O={self.O}")
        if self.L > self.I:
            raise ConfigError(f"label length L={self.L} exceeds look-back I={self.I}")
        if not self.kernels or any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise ConfigError(f"decomposition kernels must be odd positive integers, got {self.kernels}")
        if self.d_model % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_model=c*p={self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.stride_anchor not in ("phase", "end"):
            raise ConfigError(f"stride_anchor must be 'phase' or 'end', got {self.stride_anchor!r}")

    @property
    def d_model(self) -> int:
        return self.c * self.p

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 2 * self.d_model

    @property
    def n_enc(self) -> int:
        return math.ceil(self.I / self.p)

    @property
    def n_dec(self) -> int:
        return (self.L + self.O) // self.p

    @property
    def coords(self) -> CrossCoords:
        return CrossCoords.from_lengths(self.I, self.L, self.O, self.p)

    @property
    def head_config(self) -> HeadConfig:
        return HeadConfig(self.d_model, self.heads)

    def replace(self, **changes) -> "DozerformerConfig":
        data = self.to_dict()
        if "sparsity" in changes and isinstance(changes["sparsity"], SparsityParams):
            changes["sparsity"] = asdict(changes["sparsity"])
        data.update(changes)
        return DozerformerConfig.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("kernels", "self_components", "cross_components"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "DozerformerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class SeasonalTrend:
    seasonal: np.ndarray
    trend: np.ndarray


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _ln_shapes(prefix: str, d: int) -> dict:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def _ff_shapes(prefix: str, d: int, d_ff: int) -> dict:
    return {f"{prefix}.w1": (d, d_ff), f"{prefix}.b1": (d_ff,), f"{prefix}.w2": (d_ff, d), f"{prefix}.b2": (d,)}


def param_shapes(cfg: DozerformerConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor, in a fixed order."""
    d, d_ff = cfg.d_model, cfg.ff_width
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.trend_per_variable:
        shapes["trend.w"] = (cfg.D, cfg.I, cfg.O)
        shapes["trend.b"] = (cfg.D, cfg.O)
    else:
        shapes["trend.w"] = (cfg.I, cfg.O)
        shapes["trend.b"] = (cfg.O,)
    shapes["embed.w"] = (3, cfg.c)
    shapes["embed.b"] = (cfg.c,)
    for layer in range(cfg.enc_layers):
        pre = f"enc{layer}"
        shapes.update({f"{pre}.attn.{k}": s for k, s in mha_param_shapes(d).items()})
        shapes.update(_ln_shapes(f"{pre}.ln1", d))
        shapes.update(_ff_shapes(f"{pre}.ff", d, d_ff))
        shapes.update(_ln_shapes(f"{pre}.ln2", d))
    for layer in range(cfg.dec_layers):
        pre = f"dec{layer}"
        shapes.update({f"{pre}.self.{k}": s for k, s in mha_param_shapes(d).items()})
        shapes.update(_ln_shapes(f"{pre}.ln1", d))
        shapes.update({f"{pre}.cross.{k}": s for k, s in mha_param_shapes(d).items()})
        shapes.update(_ln_shapes(f"{pre}.ln2", d))
        shapes.update(_ff_shapes(f"{pre}.ff", d, d_ff))
        shapes.update(_ln_shapes(f"{pre}.ln3", d))
    shapes["head.w"] = (cfg.c,)
    shapes["head.b"] = ()
    return shapes


def _fan_in(name: str, shape: tuple, cfg: DozerformerConfig) -> int:
    if name.startswith("trend."):
        return cfg.I
    if name.startswith("embed."):
        return 3
    if name.startswith("head."):
        return cfg.c
    if name.endswith(".b2") or name.endswith(".w2"):
        return cfg.ff_width
    return cfg.d_model


def init_params(cfg: DozerformerConfig, seed: int | np.random.Generator = 0) -> Params:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)); layer norms start at gain 1, bias 0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g") and ".ln" in name:
            data = np.ones(shape)
        elif name.endswith(".b") and ".ln" in name:
            data = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / _fan_in(name, shape, cfg))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def count_params(params: Mapping[str, Tensor]) -> int:
    return int(sum(t.size for t in params.values()))


def _sub(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# ---------------------------------------------------------------------------
# seasonal / trend branch pieces
# ---------------------------------------------------------------------------

def moving_average(x: np.ndarray, k: int) -> np.ndarray:
    """Length-preserving moving average along axis 0 with replicate padding."""
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"moving-average kernel must be odd and positive, got {k}")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(x.shape[0], -1)
    return _kernels.kernels.moving_average(flat, k).reshape(x.shape)


def decompose(x: np.ndarray, kernels: Sequence[int] = (13, 17)) -> SeasonalTrend:
    """Trend is the mean of several replicate-padded moving averages; seasonal is the rest.

    ``x`` is (T, D) or (B, T, D); time is the second-to-last axis.
    """
    if not kernels:
        raise ParameterError("decompose needs at least one kernel size")
    for k in kernels:
        if k < 1 or k % 2 == 0:
            raise ParameterError(f"decomposition kernel sizes must be odd, got {k}")
    x = np.asarray(x, dtype=np.float64)
    # bring time to the front so the kernel sees a (T, everything-else) grid
    xt = np.moveaxis(x, -2, 0)
    # average deviations from the first step so flat columns stay exactly flat
    ref = xt[:1]
    dev = xt - ref
    trend = ref + sum(moving_average(dev, k) for k in kernels) / len(kernels)
    trend = np.moveaxis(trend, 0, -2)
    return SeasonalTrend(seasonal=x - trend, trend=trend)


def trend_forecast(x_t, params: Mapping[str, Tensor], per_variable: bool | None = None) -> Tensor:
    """Affine I -> O projection along time for each variable. (B, I, D) -> (B, O, D)."""
    x_t = as_tensor(x_t)
    w, b = params["trend.w"], params["trend.b"]
    if per_variable is None:
        per_variable = w.ndim == 3
    squeeze = x_t.ndim == 2
    if squeeze:
        x_t = x_t.reshape(1, *x_t.shape)
    B, I, D = x_t.shape
    if w.shape[-2] != I:
        raise ConfigError(f"trend weight expects I={w.shape[-2]}, got input length {I}")
    xv = x_t.transpose(0, 2, 1)  # (B, D, I)
    if per_variable:
        if w.shape[0] != D:
            raise ConfigError(f"per-variable trend weight has D={w.shape[0]}, input has D={D}")
        out = (xv.reshape(B, D, 1, I) @ w).reshape(B, D, w.shape[-1]) + b
    else:
        out = xv @ w + b
    out = out.transpose(0, 2, 1)
    return out.reshape(out.shape[1:]) if squeeze else out


def di_embed(x_s, params: Mapping[str, Tensor]) -> Tensor:
    """Width-3 temporal convolution (replicate padded) producing c feature maps.

    (B, T, D) -> (B, c, T, D); kernels are shared across variables.  Kernel
    taps apply to (x[t-1], x[t], x[t+1]).
    """
    x = np.asarray(x_s.data if isinstance(x_s, Tensor) else x_s, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    padded = np.concatenate([x[:, :1], x, x[:, -1:]], axis=1)
    taps = np.stack([padded[:, :-2], padded[:, 1:-1], padded[:, 2:]], axis=-1)  # (B, T, D, 3)
    w, b = params["embed.w"], params["embed.b"]
    maps = Tensor(taps) @ w + b  # (B, T, D, c)
    maps = maps.transpose(0, 3, 1, 2)
    return maps.reshape(maps.shape[1:]) if squeeze else maps


def patchify(x, p: int) -> Tensor:
    """(..., c, T, D) -> (..., c, ceil(T/p), p, D) with trailing zero padding."""
    if p < 1:
        raise ParameterError(f"patch size must be >= 1, got {p}")
    x = as_tensor(x)
    *lead, c, T, D = x.shape
    n = math.ceil(T / p)
    pad = n * p - T
    if pad:
        x = concat([x, Tensor(np.zeros((*lead, c, pad, D)))], axis=-2)
    return x.reshape(*lead, c, n, p, D)


def unpatch(x, T: int | None = None) -> Tensor:
    """(..., c, N, p, D) -> (..., c, N*p, D), optionally truncated to the first T steps."""
    x = as_tensor(x)
    *lead, c, n, p, D = x.shape
    out = x.reshape(*lead, c, n * p, D)
    if T is not None and T != n * p:
        out = out[(Ellipsis, slice(0, T), slice(None))]
    return out


def build_decoder_input(x_s: np.ndarray, L: int, O: int) -> np.ndarray:
    """Last L seasonal steps followed by O zeros, along the time axis (-2)."""
    x_s = np.asarray(x_s, dtype=np.float64)
    I = x_s.shape[-2]
    if L > I:
        raise ConfigError(f"label length L={L} exceeds look-back I={I}")
    hist = x_s[..., I - L:, :]
    zeros = np.zeros((*x_s.shape[:-2], O, x_s.shape[-1]))
    return np.concatenate([hist, zeros], axis=-2)


def to_tokens(patches: Tensor) -> Tensor:
    """(B, c, N, p, D) -> (B*D, N, c*p)."""
    B, c, n, p, D = patches.shape
    return patches.transpose(0, 4, 2, 1, 3).reshape(B * D, n, c * p)


def from_tokens(tokens: Tensor, B: int, D: int, c: int, p: int) -> Tensor:
    """(B*D, N, c*p) -> (B, c, N, p, D)."""
    n = tokens.shape[1]
    return tokens.reshape(B, D, n, c, p).transpose(0, 3, 2, 4, 1)


def feed_forward(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    return (x @ params["w1"] + params["b1"]).gelu() @ params["w2"] + params["b2"]


def encoder_forward(tokens: Tensor, mask: AttnMask, params: Mapping[str, Tensor], cfg: DozerformerConfig,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Post-norm encoder stack: [self-attn + residual + LN, FFN + residual + LN] x enc_layers."""
    n = tokens.shape[-2]
    if mask.shape != (n, n):
        raise ConfigError(f"encoder mask {mask.shape} does not match {n} tokens")
    hc = cfg.head_config
    x = tokens
    for layer in range(cfg.enc_layers):
        pre = f"enc{layer}"
        a = multi_head_attention(x, x, mask, hc, _sub(params, f"{pre}.attn"))
        x = layer_norm(x + dropout(a, cfg.dropout, rng), params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        f = feed_forward(x, _sub(params, f"{pre}.ff"))
        x = layer_norm(x + dropout(f, cfg.dropout, rng), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
    return x


def decoder_forward(tokens: Tensor, enc_out: Tensor, self_m: AttnMask, cross_m: AttnMask,
                    params: Mapping[str, Tensor], cfg: DozerformerConfig,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Post-norm decoder stack: self-attn, cross-attn to the encoder, FFN; each with residual + LN."""
    n_dec, n_enc = tokens.shape[-2], enc_out.shape[-2]
    if self_m.shape != (n_dec, n_dec):
        raise ConfigError(f"decoder self mask {self_m.shape} does not match {n_dec} tokens")
    if cross_m.shape != (n_dec, n_enc):
        raise ConfigError(f"cross mask {cross_m.shape} does not match ({n_dec}, {n_enc})")
    hc = cfg.head_config
    x = tokens
    for layer in range(cfg.dec_layers):
        pre = f"dec{layer}"
        a = multi_head_attention(x, x, self_m, hc, _sub(params, f"{pre}.self"))
        x = layer_norm(x + dropout(a, cfg.dropout, rng), params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        a = multi_head_attention(x, enc_out, cross_m, hc, _sub(params, f"{pre}.cross"))
        x = layer_norm(x + dropout(a, cfg.dropout, rng), params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        f = feed_forward(x, _sub(params, f"{pre}.ff"))
        x = layer_norm(x + dropout(f, cfg.dropout, rng), params[f"{pre}.ln3.g"], params[f"{pre}.ln3.b"])
    return x


def output_head(h: Tensor, params: Mapping[str, Tensor], O: int) -> Tensor:
    """1x1 conv over feature maps then keep the last O steps. (B, c, N, p, D) -> (B, O, D)."""
    h = as_tensor(h)
    squeeze = h.ndim == 4
    if squeeze:
        h = h.reshape(1, *h.shape)
    B, c, n, p, D = h.shape
    w = params["head.w"]
    if w.shape != (c,):
        raise ConfigError(f"head weight has shape {w.shape}, expected ({c},)")
    combined = (h.transpose(0, 2, 3, 4, 1) @ w.reshape(c, 1)).reshape(B, n * p, D) + params["head.b"]
    out = combined[:, n * p - O:, :]
    return out.reshape(O, D) if squeeze else out


@lru_cache(maxsize=None)
def _masks_for(cfg: DozerformerConfig) -> tuple[AttnMask, AttnMask, AttnMask]:
    sp = cfg.sparsity
    enc = self_mask(cfg.n_enc, sp, cfg.self_components)
    dec = self_mask(cfg.n_dec, sp, cfg.self_components)
    cross = cross_mask(cfg.coords, sp, cfg.cross_components, cfg.stride_anchor)
    return enc, dec, cross


def model_masks(cfg: DozerformerConfig) -> tuple[AttnMask, AttnMask, AttnMask]:
    """(encoder self, decoder self, decoder cross) masks for a config."""
    return _masks_for(cfg)


def forward(x, cfg: DozerformerConfig, params: Mapping[str, Tensor], rng: np.random.Generator | None = None,
            masks: tuple[AttnMask, AttnMask, AttnMask] | None = None) -> Tensor:
    """Forecast O steps from an (I, D) or (B, I, D) history.

    Dropout is active only when ``rng`` is given.  ``masks`` overrides the
    configured (encoder self, decoder self, cross) masks.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, I, D = x.shape
    if I != cfg.I:
        raise ConfigError(f"input has {I} steps, config expects I={cfg.I}")
    enc_m, dec_m, cross_m = masks if masks is not None else model_masks(cfg)

    parts = decompose(x, cfg.kernels)
    trend_pred = trend_forecast(parts.trend, params)

    enc_tokens = to_tokens(patchify(di_embed(parts.seasonal, params), cfg.p))
    dec_in = build_decoder_input(parts.seasonal, cfg.L, cfg.O)
    dec_tokens = to_tokens(patchify(di_embed(dec_in, params), cfg.p))

    enc_out = encoder_forward(enc_tokens, enc_m, params, cfg, rng)
    dec_out = decoder_forward(dec_tokens, enc_out, dec_m, cross_m, params, cfg, rng)
    seasonal_pred = output_head(from_tokens(dec_out, B, D, cfg.c, cfg.p), params, cfg.O)

    pred = seasonal_pred + trend_pred
    return pred.reshape(cfg.O, D) if squeeze else pred


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    params: int
    attn_pairs: int
    flops_estimate: int


def _attn_flops(n_q: int, n_k: int, pairs: int, d: int) -> int:
    projections = 2 * n_q * d * d * 2 + 2 * n_k * d * d * 2  # q, o on queries; k, v on keys
    return projections + 4 * pairs * d  # scores and weighted values, summed over heads


def model_cost_report(cfg: DozerformerConfig, masks: tuple[AttnMask, AttnMask, AttnMask] | None = None) -> CostReport:
    """Parameter count, total mask pairs and a matmul-FLOP estimate for one (I, D) sample.

    attn_pairs sums the mask pair counts over every attention site of one
    variable's sequence; FLOPs cover projections, scores, value products,
    feed-forward, embedding, trend and head, multiplied over D variables.
    """
    enc_m, dec_m, cross_m = masks if masks is not None else model_masks(cfg)
    n_params = int(sum(int(np.prod(s)) for s in param_shapes(cfg).values()))
    pe, pd_, pc = (count_pairs(m).counted for m in (enc_m, dec_m, cross_m))
    attn_pairs = cfg.enc_layers * pe + cfg.dec_layers * (pd_ + pc)

    d, d_ff = cfg.d_model, cfg.ff_width
    n_enc, n_dec = cfg.n_enc, cfg.n_dec
    ffn = lambda n: 2 * n * d * d_ff * 2  # noqa: E731
    per_var = cfg.enc_layers * (_attn_flops(n_enc, n_enc, pe, d) + ffn(n_enc))
    per_var += cfg.dec_layers * (_attn_flops(n_dec, n_dec, pd_, d) + _attn_flops(n_dec, n_enc, pc, d) + ffn(n_dec))
    per_var += 2 * 3 * cfg.c * (cfg.I + cfg.L + cfg.O)  # embedding
    per_var += 2 * cfg.I * cfg.O  # trend
    per_var += 2 * cfg.c * (cfg.L + cfg.O)  # head
    return CostReport(params=n_params, attn_pairs=int(attn_pairs), flops_estimate=int(per_var * cfg.D))


# ---------------------------------------------------------------------------
# model object and checkpoints
# ---------------------------------------------------------------------------

class Dozerformer:
    """Config plus parameters, callable on (I, D) or (B, I, D) histories."""

    def __init__(self, cfg: DozerformerConfig, params: Params | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        missing = set(param_shapes(cfg)) - set(self.params)
        if missing:
            raise ConfigError(f"parameter set is missing {sorted(missing)}")

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        return forward(x, self.cfg, self.params, rng)

    def predict(self, x) -> np.ndarray:
        return forward(x, self.cfg, self.params).data

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_params(self) -> int:
        return count_params(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != np.shape(v):
                raise ConfigError(f"{k}: checkpoint shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


def save_checkpoint(path, model: Dozerformer, meta: Mapping | None = None) -> None:
    """Write config, metadata and named float64 arrays to one .npz container."""
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    arrays["__config__"] = np.array(json.dumps(model.cfg.to_dict(), sort_keys=True))
    arrays["__meta__"] = np.array(json.dumps(dict(meta or {}), sort_keys=True))
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[Dozerformer, dict]:
    with np.load(path, allow_pickle=False) as z:
        cfg = DozerformerConfig.from_dict(json.loads(str(z["__config__"])))
        meta = json.loads(str(z["__meta__"]))
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in state.items()}
    return Dozerformer(cfg, params), meta
