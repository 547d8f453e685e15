"""Local / Stride / Vary attention masks over patch indices, plus pair accounting.

All masks are boolean (query x key) grids where ``True`` means the query-key
product is computed.  Window sizes, stride periods and the vary start size are
measured in patches.  Builders are cached; returned masks are read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class SparsityParams:
    w: int = 3
    interval: int = 2
    v: int = 1

    def __post_init__(self):
        check_window(self.w)
        check_interval(self.interval)
        check_vary(self.v)


@dataclass(frozen=True, eq=False)
class AttnMask:
    """Immutable boolean attention mask of shape (rows, cols)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def allowed(self, row: int) -> list[int]:
        return np.flatnonzero(self.bits[row]).tolist()

    def row_counts(self) -> np.ndarray:
        return self.bits.sum(axis=1)

    def empty_rows(self) -> list[int]:
        return np.flatnonzero(~self.bits.any(axis=1)).tolist()

    def __eq__(self, other):
        return isinstance(other, AttnMask) and self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))

    def __or__(self, other):
        return union_masks([self, other])

    @classmethod
    def full(cls, rows: int, cols: int) -> "AttnMask":
        return cls(np.ones((rows, cols), dtype=bool))

    @classmethod
    def eye(cls, n: int) -> "AttnMask":
        return cls(np.eye(n, dtype=bool))


@dataclass(frozen=True)
class CrossCoords:
    """Patch geometry shared by the decoder-to-encoder masks.

    ``label_patches`` may be 0 (no label region).  Decoder row ``i`` sits at
    absolute patch index ``n_enc - label_patches + i``.
    """

    n_enc: int
    n_dec: int
    label_patches: int

    def __post_init__(self):
        if self.n_enc < 1 or self.n_dec < 1:
            raise ParameterError(f"patch counts must be positive, got n_enc={self.n_enc}, n_dec={self.n_dec}")
        if not 0 <= self.label_patches <= self.n_dec:
            raise ParameterError(f"label_patches={self.label_patches} outside [0, n_dec={self.n_dec}]")

    @property
    def t_patch(self) -> int:
        return self.n_enc - 1

    @property
    def forecast_patches(self) -> int:
        return self.n_dec - self.label_patches

    @classmethod
    def from_lengths(cls, I: int, L: int, O: int, p: int) -> "CrossCoords":
        if L % p or O % p:
            raise ParameterError(f"patch size {p} must divide L={L} and O={O}")
        return cls(n_enc=math.ceil(I / p), n_dec=(L + O) // p, label_patches=L // p)


@dataclass(frozen=True)
class PairCountReport:
    counted: int
    full: int
    ratio: float
    closed_form: int | None = None


def check_window(w: int) -> None:
    if not isinstance(w, (int, np.integer)) or w < 1 or w % 2 == 0:
        raise ParameterError(f"window w must be an odd positive integer, got {w!r}")


def check_interval(interval: int) -> None:
    if not isinstance(interval, (int, np.integer)) or interval < 1:
        raise ParameterError(f"interval must be a positive integer, got {interval!r}")


def check_vary(v: int) -> None:
    if not isinstance(v, (int, np.integer)) or v < 1:
        raise ParameterError(f"vary start v must be a positive integer, got {v!r}")


def _check_n(n: int) -> None:
    if n < 1:
        raise ParameterError(f"patch count must be >= 1, got {n}")


@lru_cache(maxsize=None)
def local_self_mask(n: int, w: int) -> AttnMask:
    """Query i sees key j iff |i - j| <= w // 2."""
    _check_n(n)
    check_window(w)
    return AttnMask(_kernels.kernels.local_self(n, w // 2))


@lru_cache(maxsize=None)
def stride_self_mask(n: int, interval: int) -> AttnMask:
    """Query i sees key j iff (i - j) is a multiple of ``interval``."""
    _check_n(n)
    check_interval(interval)
    return AttnMask(_kernels.kernels.stride_self(n, interval))


@lru_cache(maxsize=None)
def local_cross_mask(coords: CrossCoords, w: int) -> AttnMask:
    """Every decoder row sees the last ``w // 2 + 1`` encoder patches."""
    check_window(w)
    return AttnMask(_kernels.kernels.local_cross(coords.n_dec, coords.n_enc, w // 2))


@lru_cache(maxsize=None)
def stride_cross_mask(coords: CrossCoords, interval: int, anchor: str = "phase") -> AttnMask:
    """Encoder patches in the same residue class (mod ``interval``) as the query.

    ``anchor="phase"`` uses each decoder row's absolute patch index;
    ``anchor="end"`` uses the last encoder patch for every row.
    """
    check_interval(interval)
    if anchor not in ("phase", "end"):
        raise ParameterError(f"anchor must be 'phase' or 'end', got {anchor!r}")
    offset = coords.n_enc - coords.label_patches
    return AttnMask(_kernels.kernels.stride_cross(coords.n_dec, coords.n_enc, offset, interval, anchor == "end"))


@lru_cache(maxsize=None)
def vary_cross_mask(coords: CrossCoords, v: int) -> AttnMask:
    """Growing history window: forecast horizon h sees the last min(v + h - 1, n_enc) patches.

    Label rows see nothing.
    """
    check_vary(v)
    return AttnMask(_kernels.kernels.vary_cross(coords.n_dec, coords.n_enc, coords.label_patches, v))


def union_masks(masks: Sequence[AttnMask]) -> AttnMask:
    if not masks:
        raise ParameterError("union_masks needs at least one mask")
    shape = masks[0].shape
    for k, m in enumerate(masks):
        if m.shape != shape:
            raise DimensionError(f"mask #{k} has shape {m.shape}, expected {shape}")
    bits = np.zeros(shape, dtype=bool)
    for m in masks:
        bits |= m.bits
    return AttnMask(bits)


def self_mask(n: int, sp: SparsityParams, components: Sequence[str] = ("local", "stride")) -> AttnMask:
    parts = []
    if "local" in components:
        parts.append(local_self_mask(n, sp.w))
    if "stride" in components:
        parts.append(stride_self_mask(n, sp.interval))
    if not parts:
        return AttnMask.full(n, n)
    return union_masks(parts)


def cross_mask(coords: CrossCoords, sp: SparsityParams,
               components: Sequence[str] = ("local", "stride", "vary"), anchor: str = "phase") -> AttnMask:
    parts = []
    if "local" in components:
        parts.append(local_cross_mask(coords, sp.w))
    if "stride" in components:
        parts.append(stride_cross_mask(coords, sp.interval, anchor))
    if "vary" in components:
        parts.append(vary_cross_mask(coords, sp.v))
    if not parts:
        return AttnMask.full(coords.n_dec, coords.n_enc)
    return union_masks(parts)


def count_pairs(mask: AttnMask, closed_form: int | None = None) -> PairCountReport:
    counted = int(mask.bits.sum())
    full = mask.rows * mask.cols
    return PairCountReport(counted=counted, full=full, ratio=counted / full, closed_form=closed_form)


def stride_key_count(n_enc: int, interval: int) -> int:
    """Per-query stride key count s = ceil(n_enc / interval)."""
    return -(-n_enc // interval)


def closed_form_self(n: int, w: int, interval: int) -> int:
    return (w + stride_key_count(n, interval)) * n


def closed_form_pairs(cfg) -> tuple[int, int]:
    """Complexity-table pair estimates (self, cross) for a model config.

    self  = (w + s) * N_enc
    cross = (w + s) * N_dec + ceil((O/p)^2 / 2) + (v - 1) * O/p
    with s = ceil(N_enc / interval).  Both bound the exact union counts.
    """
    sp = cfg.sparsity
    n_enc = math.ceil(cfg.I / cfg.p)
    n_dec = (cfg.L + cfg.O) // cfg.p
    n_out = cfg.O // cfg.p
    s = stride_key_count(n_enc, sp.interval)
    self_pairs = (sp.w + s) * n_enc
    cross_pairs = (sp.w + s) * n_dec + math.ceil(n_out * n_out / 2) + (sp.v - 1) * n_out
    return self_pairs, cross_pairs


def render_text(mask: AttnMask) -> str:
    lines = [f"{mask.rows} {mask.cols}"]
    lines += ["".join("#" if b else "." for b in row) for row in mask.bits]
    return "\n".join(lines) + "\n"


def render_grid(mask: AttnMask) -> list[str]:
    return render_text(mask).splitlines()[1:]


def render_pgm(mask: AttnMask) -> bytes:
    header = f"P5\n{mask.cols} {mask.rows}\n255\n".encode("ascii")
    return header + (mask.bits.astype(np.uint8) * 255).tobytes()


def render_mask(mask: AttnMask) -> tuple[str, bytes]:
    return render_text(mask), render_pgm(mask)


def parse_text(text: str) -> AttnMask:
    lines = text.strip("\n").splitlines()
    rows, cols = (int(t) for t in lines[0].split())
    grid = lines[1:]
    if len(grid) != rows or any(len(g) != cols for g in grid):
        raise DimensionError(f"mask text body does not match header {rows} {cols}")
    return AttnMask(np.array([[c == "#" for c in g] for g in grid], dtype=bool).reshape(rows, cols))


def parse_pgm(data: bytes) -> AttnMask:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = (int(t) for t in parts[1].split())
    body = np.frombuffer(parts[3], dtype=np.uint8)
    return AttnMask(body.reshape(rows, cols) > 0)
