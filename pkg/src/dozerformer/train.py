"""Adam with cosine annealing, the training loop, and forecast metrics."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset, WindowSample, sample_windows, split_and_standardize, stack_windows
from .errors import TrainingDivergedError
from .masks import count_pairs
from .model import Dozerformer, DozerformerConfig, model_cost_report, model_masks
from .tensor import Tensor

log = logging.getLogger(__name__)

BETAS = (0.9, 0.99)
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    betas: tuple[float, float] = BETAS
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], lr: float = 1e-3, betas=BETAS, eps=ADAM_EPS):
        return cls(m={k: np.zeros(t.shape) for k, t in params.items()},
                   v={k: np.zeros(t.shape) for k, t in params.items()}, step=0, lr=lr, betas=tuple(betas), eps=eps)


def adam_step(params: Mapping[str, Tensor], state: OptimizerState, lr: float | None = None) -> None:
    """One bias-corrected Adam update from each parameter's ``grad`` (missing grad counts as zero)."""
    for name, t in params.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            bad = int(np.count_nonzero(~np.isfinite(t.grad)))
            raise TrainingDivergedError(f"non-finite gradient in parameter {name!r} ({bad} entries)")
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros(t.shape)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        return lr_max
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mse: float
    mae: float
    mase: float
    qk_ratio_self: float = 1.0
    qk_ratio_cross: float = 1.0
    params: int = 0
    flops_estimate: int = 0
    wall_seconds: float = 0.0

    def as_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_seconds")
        return d

    def to_text(self, prefix: str = "", include_timing: bool = True) -> str:
        return "".join(f"{prefix}{k}={_fmt(v)}\n" for k, v in self.as_dict(include_timing).items())

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k in kinds:
                out[k] = int(v) if kinds[k] in ("int", int) else float(v)
        return cls(**out)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(path: str | Path, reports: Mapping[str, MetricsReport], include_timing: bool = False) -> None:
    """Flat ``split.key=value`` text, plus a JSON record alongside (same stem, .json)."""
    path = Path(path)
    path.write_text("".join(r.to_text(prefix=f"{split}.", include_timing=include_timing)
                            for split, r in reports.items()))
    record = {split: r.as_dict(include_timing) for split, r in reports.items()}
    path.with_suffix(".json").write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")


def read_metrics(path: str | Path) -> dict[str, MetricsReport]:
    grouped: dict[str, dict] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split("=", 1)
        split, name = key.rsplit(".", 1)
        grouped.setdefault(split, {})[name] = value
    return {split: MetricsReport.from_dict(d) for split, d in grouped.items()}


def naive_scale(train_series: np.ndarray) -> float:
    """Mean absolute one-step change of the training series, pooled over variables."""
    s = np.asarray(train_series, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(s, axis=0))))


def forecast_errors(pred: np.ndarray, target: np.ndarray, train_series: np.ndarray) -> tuple[float, float, float]:
    """(MSE, MAE, MASE); MASE is NaN when the naive scale is zero."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    mae = float(np.mean(np.abs(diff)))
    scale = naive_scale(train_series)
    mase = mae / scale if scale > 0 else math.nan
    return mse, mae, mase


def predict_windows(model: Dozerformer, windows: Sequence[WindowSample], chunk: int = 256) -> np.ndarray:
    out = []
    for lo in range(0, len(windows), chunk):
        x, _ = stack_windows(windows[lo:lo + chunk])
        out.append(model.predict(x))
    return np.concatenate(out, axis=0)


def evaluate(model: Dozerformer, windows: Sequence[WindowSample], train_series: np.ndarray) -> MetricsReport:
    if not windows:
        raise ValueError("evaluate needs at least one window")
    start = time.perf_counter()
    pred = predict_windows(model, windows)
    _, target = stack_windows(windows)
    mse, mae, mase = forecast_errors(pred, target, train_series)
    enc_m, dec_m, cross_m = model_masks(model.cfg)
    cost = model_cost_report(model.cfg)
    return MetricsReport(mse=mse, mae=mae, mase=mase,
                         qk_ratio_self=count_pairs(enc_m).ratio, qk_ratio_cross=count_pairs(cross_m).ratio,
                         params=cost.params, flops_estimate=cost.flops_estimate,
                         wall_seconds=time.perf_counter() - start)


def baseline_mse(windows: Sequence[WindowSample]) -> dict[str, float]:
    """Reference errors: per-variable target mean (target variance) and last observed value."""
    x, y = stack_windows(windows)
    centered = y - y.mean(axis=(0, 1), keepdims=True)
    last = x[:, -1:, :]
    return {"mean": float(np.mean(centered ** 2)), "last_value": float(np.mean((y - last) ** 2))}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float

    def line(self) -> str:
        return (f"epoch={self.epoch} step={self.step} train_mse={self.train_mse!r} "
                f"val_mse={self.val_mse!r} lr={self.lr!r} seconds={self.seconds:.3f}")


@dataclass
class TrainResult:
    model: Dozerformer
    reports: dict[str, MetricsReport]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(target)
    return (diff * diff).mean()


def train(cfg: DozerformerConfig, dataset: Dataset, epochs: int = 10, batch: int = 32, seed: int = 1,
          lr: float = 1e-3, lr_min: float = 0.0, ratios: Sequence[float] = (0.7, 0.1, 0.2),
          max_steps: int | None = None, window_stride: int = 1,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Minimise MSE over train windows; keep the parameters with the best validation MSE.

    Everything random (init, shuffling, dropout) draws from one generator
    seeded with ``seed``.  Returned reports cover the train, val and test
    splits for the selected parameters.
    """
    wall = time.perf_counter()
    rng = np.random.default_rng(seed)
    model = Dozerformer(cfg, seed=rng)
    splits = split_and_standardize(dataset, ratios)
    train_w = sample_windows(splits.train, cfg.I, cfg.O, window_stride)
    val_w = sample_windows(splits.val, cfg.I, cfg.O, window_stride)
    test_w = sample_windows(splits.test, cfg.I, cfg.O, window_stride)
    if not train_w:
        raise ValueError(f"train split ({splits.train.T} steps) too short for I+O={cfg.I + cfg.O}")

    x_train, y_train = stack_windows(train_w)
    n_batches = math.ceil(len(train_w) / batch)
    total = epochs * n_batches if max_steps is None else min(epochs * n_batches, max_steps)
    state = OptimizerState.for_params(model.params, lr=lr)

    def val_mse() -> float:
        if not val_w:
            return math.nan
        _, y = stack_windows(val_w)
        return float(np.mean((predict_windows(model, val_w) - y) ** 2))

    best = (val_mse(), model.state_dict(), 0)
    history: list[EpochRecord] = []
    step = 0
    for epoch in range(1, epochs + 1):
        if step >= total:
            break
        t0 = time.perf_counter()
        order = rng.permutation(len(train_w))
        losses = []
        for b in range(n_batches):
            if step >= total:
                break
            idx = order[b * batch:(b + 1) * batch]
            model.zero_grad()
            loss = mse_loss(model(x_train[idx], rng=rng if cfg.dropout > 0 else None), y_train[idx])
            if not np.isfinite(loss.item()):
                model.load_state_dict(best[1])
                raise TrainingDivergedError(f"loss became {loss.item()} at step {step}", last_finite_params=best[1])
            loss.backward()
            adam_step(model.params, state, cosine_lr(step, total, lr, lr_min))
            losses.append(loss.item())
            step += 1
        vm = val_mse()
        rec = EpochRecord(epoch=epoch, step=step, train_mse=float(np.mean(losses)) if losses else math.nan,
                          val_mse=vm, lr=cosine_lr(step, total, lr, lr_min), seconds=time.perf_counter() - t0)
        history.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)
        # without a validation split the latest parameters win
        if not val_w or vm < best[0]:
            best = (vm, model.state_dict(), epoch)

    model.load_state_dict(best[1])
    reports = {}
    for tag, wins in (("train", train_w), ("val", val_w), ("test", test_w)):
        if wins:
            reports[tag] = evaluate(model, wins, splits.train.values)
    elapsed = time.perf_counter() - wall
    for r in reports.values():
        r.wall_seconds = elapsed
    return TrainResult(model=model, reports=reports, history=history, best_epoch=best[2], steps=step)
