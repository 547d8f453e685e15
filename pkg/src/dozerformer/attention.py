"""Masked scaled dot-product attention and the multi-head wrapper."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .masks import AttnMask
from .tensor import Tensor, masked_softmax


@dataclass(frozen=True)
class HeadConfig:
    d_model: int
    heads: int

    def __post_init__(self):
        if self.heads < 1 or self.d_model < 1 or self.d_model % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_model={self.d_model}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: AttnMask | np.ndarray) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with disallowed pairs removed from the softmax.

    Leading axes of q, k, v are batch axes; ``mask`` is (n_q, n_k) and shared.
    """
    d_k = q.shape[-1]
    scores = (q @ k.T) * (1.0 / math.sqrt(d_k))
    return masked_softmax(scores, mask) @ v


def mha_param_shapes(d_model: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for tag in ("q", "k", "v", "o"):
        shapes[f"w_{tag}"] = (d_model, d_model)
        shapes[f"b_{tag}"] = (d_model,)
    return shapes


def multi_head_attention(x_q: Tensor, x_kv: Tensor, mask: AttnMask | np.ndarray, cfg: HeadConfig,
                         params: Mapping[str, Tensor]) -> Tensor:
    """Project, split into heads, attend with one shared mask, concatenate, project.

    ``x_q`` is (..., n_q, d_model) and ``x_kv`` is (..., n_k, d_model).
    ``params`` holds ``w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o``.
    """
    for name, shape in mha_param_shapes(cfg.d_model).items():
        if name not in params:
            raise ConfigError(f"missing attention parameter {name!r}")
        if params[name].shape != shape:
            raise ConfigError(f"attention parameter {name!r} has shape {params[name].shape}, expected {shape}")
    if x_q.shape[-1] != cfg.d_model or x_kv.shape[-1] != cfg.d_model:
        raise ConfigError(f"inputs {x_q.shape}, {x_kv.shape} do not match d_model={cfg.d_model}")

    def split(x: Tensor) -> Tensor:
        *lead, n, _ = x.shape
        x = x.reshape(*lead, n, cfg.heads, cfg.d_k)
        nd = x.ndim
        axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
        return x.transpose(axes)

    q = split(x_q @ params["w_q"] + params["b_q"])
    k = split(x_kv @ params["w_k"] + params["b_k"])
    v = split(x_kv @ params["w_v"] + params["b_v"])
    h = scaled_dot_attention(q, k, v, mask)
    nd = h.ndim
    h = h.transpose(list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1])
    *lead, n_q, _, _ = h.shape
    h = h.reshape(*lead, n_q, cfg.d_model)
    return h @ params["w_o"] + params["b_o"]
