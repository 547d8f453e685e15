"""CSV ingestion, synthetic series, chronological splits, scaling and windowing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError, ParameterError

log = logging.getLogger(__name__)

STD_EPS = 1e-8


@dataclass
class Dataset:
    name: str
    values: np.ndarray  # (T, D)
    columns: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None
    ratios: tuple[float, float, float] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataFormatError(f"dataset values must be (T, D), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            r, c = np.argwhere(~np.isfinite(self.values))[0]
            raise DataFormatError(f"non-finite value at row {r}, column {c}")
        if not self.columns:
            self.columns = [f"x{d}" for d in range(self.D)]

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSample:
    x: np.ndarray  # (I, D)
    y: np.ndarray  # (O, D)
    origin: int


def load_csv(path: str | Path, name: str | None = None) -> Dataset:
    """Read a date-first CSV with a header row.

    Rows are numbered from 1 for the first data line; columns from 1 for the
    first value column (the date column is column 0).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataFormatError(f"{path}: need a date column and at least one value column")
        width = len(header)
        stamps, rows = [], []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(f"{path}: row {r} has {len(row)} fields, header has {width}")
            vals = []
            for c, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"{path}: row {r}, column {c} ({header[c]!r}): cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}: row {r}, column {c} ({header[c]!r}): non-finite value {cell!r}")
                vals.append(v)
            stamps.append(row[0])
            rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), width - 1)
    return Dataset(name=name or path.stem, values=values, columns=header[1:], timestamps=stamps)


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` in the same layout load_csv reads; values use repr for exact round-trips."""
    stamps = ds.timestamps or [str(t) for t in range(ds.T)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *ds.columns])
        for stamp, row in zip(stamps, ds.values):
            writer.writerow([stamp, *(repr(float(v)) for v in row)])


def synth_series(T: int, D: int = 1, period: float = 24, trend_slope: float = 0.0, noise_std: float = 0.0,
                 seed: int = 0) -> Dataset:
    """sin(2*pi*t/period + 2*pi*d/D) + trend_slope*t + N(0, noise_std^2)."""
    if T < 1 or D < 1:
        raise ParameterError(f"need T >= 1 and D >= 1, got T={T}, D={D}")
    if period < 2:
        raise ParameterError(f"period must be >= 2, got {period}")
    rng = np.random.default_rng(seed)
    t = np.arange(T, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(D)[None, :] / D
    values = np.sin(2.0 * np.pi * t / period + phase) + trend_slope * t
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=(T, D))
    return Dataset(name=f"synth_p{period}_s{trend_slope}_n{noise_std}_seed{seed}", values=values,
                   timestamps=[str(i) for i in range(T)])


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    degenerate: list[int] = field(default_factory=list)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    scaler: Scaler
    bounds: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]


def split_sizes(T: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor allocation for train and val; the remainder goes to test."""
    n_train = int(math.floor(T * ratios[0] + 1e-9))
    n_val = int(math.floor(T * ratios[1] + 1e-9))
    return n_train, n_val, T - n_train - n_val


def split_and_standardize(ds: Dataset, ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> Splits:
    """Chronological split; every split is scaled with train-only mean and std."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train, n_val, n_test = split_sizes(ds.T, ratios)
    if n_train < 1:
        raise ParameterError(f"train split is empty for T={ds.T}, ratios={ratios}")
    train_raw = ds.values[:n_train]
    mean = train_raw.mean(axis=0)
    std = train_raw.std(axis=0)
    degenerate = [int(d) for d in np.flatnonzero(std < STD_EPS)]
    if degenerate:
        log.warning("zero-variance train variables %s; std clamped to %g", degenerate, STD_EPS)
    std = np.maximum(std, STD_EPS)
    scaler = Scaler(mean=mean, std=std, degenerate=degenerate)
    bounds = ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, ds.T))

    def part(tag, lo, hi):
        stamps = ds.timestamps[lo:hi] if ds.timestamps else None
        return replace(ds, name=f"{ds.name}:{tag}", values=scaler.transform(ds.values[lo:hi]),
                       timestamps=stamps, ratios=ratios)

    return Splits(train=part("train", *bounds[0]), val=part("val", *bounds[1]), test=part("test", *bounds[2]),
                  scaler=scaler, bounds=bounds)


def sample_windows(ds: Dataset | np.ndarray, I: int, O: int, stride: int = 1) -> list[WindowSample]:
    """Windows at origins 0, stride, 2*stride, ... fully inside ``ds``."""
    values = ds.values if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    T = values.shape[0]
    if T < I + O:
        log.warning("series of length %d is shorter than I+O=%d; no windows", T, I + O)
        return []
    return [WindowSample(x=values[o:o + I], y=values[o + I:o + I + O], origin=o)
            for o in range(0, T - I - O + 1, stride)]


def stack_windows(windows: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.x for w in windows]), np.stack([w.y for w in windows])
