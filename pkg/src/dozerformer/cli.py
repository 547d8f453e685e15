"""Command-line entry point: synth, train, eval, mask-dump, complexity.

Settings resolve as defaults < ``--config`` file < flags.  Config files are
flat ``key=value`` lines with ``#`` comments; keys match the long flag names
(dashes or underscores).

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import masks as mk
from .data import load_csv, sample_windows, save_csv, split_and_standardize, synth_series
from .errors import ConfigError, DozerError, ParameterError
from .model import DozerformerConfig, load_checkpoint, model_cost_report, model_masks, save_checkpoint
from .train import evaluate, train, write_metrics

log = logging.getLogger("dozerformer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


DEFAULTS = {
    "I": 96, "L": 24, "O": 24, "p": 24, "c": 4, "heads": 4,
    "w": 3, "interval": 2, "v": 1, "enc_layers": 2, "dec_layers": 1,
    "kernels": "13,17", "d_ff": None, "dropout": 0.1, "stride_anchor": "phase",
    "trend_per_variable": False,
    "T": 2000, "D": 3, "period": 24.0, "slope": 0.0, "noise": 0.0, "synth_seed": 0,
    "ratios": "0.7,0.1,0.2",
    "epochs": 10, "batch": 32, "lr": 1e-3, "seed": 1, "max_steps": None,
}

MODEL_FLAGS = [
    ("I", int), ("L", int), ("O", int), ("p", int), ("c", int), ("heads", int),
    ("w", int), ("interval", int), ("v", int), ("enc-layers", int), ("dec-layers", int),
    ("kernels", str), ("d-ff", int), ("dropout", float), ("stride-anchor", str),
]
SYNTH_FLAGS = [("T", int), ("D", int), ("period", float), ("slope", float), ("noise", float), ("synth-seed", int)]
TRAIN_FLAGS = [("epochs", int), ("batch", int), ("lr", float), ("seed", int), ("max-steps", int)]


def _add(parser, flags, required=()):
    for name, typ in flags:
        parser.add_argument(f"--{name}", type=typ, default=argparse.SUPPRESS, required=name in required)


def _add_data(parser):
    parser.add_argument("--data", type=str, default=argparse.SUPPRESS, help="CSV with a date column first")
    parser.add_argument("--synth", action="store_true", default=argparse.SUPPRESS, help="use a synthetic series")
    parser.add_argument("--ratios", type=str, default=argparse.SUPPRESS)
    _add(parser, SYNTH_FLAGS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dozerformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic CSV")
    _add(p, SYNTH_FLAGS)
    p.add_argument("--seed", type=int, dest="synth_seed", default=argparse.SUPPRESS)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train, then write checkpoint, metrics and masks")
    _add(p, MODEL_FLAGS)
    p.add_argument("--trend-per-variable", action="store_true", default=argparse.SUPPRESS)
    _add_data(p)
    _add(p, TRAIN_FLAGS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None)

    p = sub.add_parser("mask-dump", help="write attention masks as text and PGM")
    _add(p, MODEL_FLAGS, required=("I", "p"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None)

    p = sub.add_parser("complexity", help="exact pair counts vs closed forms vs full attention")
    _add(p, MODEL_FLAGS, required=("I", "p"))
    p.add_argument("--config", default=None)
    return parser


def read_config_file(path: str | Path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS and key not in ("data", "synth", "out", "checkpoint"):
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    default = DEFAULTS.get(key)
    if key in ("trend_per_variable", "synth"):
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("d_ff", "max_steps"):
        return int(value)
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    given = set()
    if getattr(args, "config", None):
        try:
            file_settings = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        given |= set(file_settings)
        for k, v in file_settings.items():
            try:
                settings[k] = _coerce(k, v)
            except ValueError:
                raise UsageError(f"config {k}={v!r}: bad value") from None
    for k, v in vars(args).items():
        if k in ("config", "command", "verbose"):
            continue
        settings[k] = v
        given.add(k)
    settings["_given"] = given
    return settings


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def config_from(settings: dict, D: int) -> DozerformerConfig:
    kernels = tuple(int(t) for t in str(settings["kernels"]).split(",") if t.strip())
    return DozerformerConfig(
        I=settings["I"], L=settings["L"], O=settings["O"], D=D, p=settings["p"], c=settings["c"],
        heads=settings["heads"], enc_layers=settings["enc_layers"], dec_layers=settings["dec_layers"],
        sparsity=mk.SparsityParams(w=settings["w"], interval=settings["interval"], v=settings["v"]),
        kernels=kernels, d_ff=settings["d_ff"], dropout=settings["dropout"],
        stride_anchor=settings["stride_anchor"], trend_per_variable=bool(settings["trend_per_variable"]),
    )


def _data_spec(settings: dict) -> dict:
    if settings.get("data"):
        return {"kind": "csv", "path": str(Path(settings["data"]).resolve())}
    if settings.get("synth"):
        return {"kind": "synth", "T": settings["T"], "D": settings["D"], "period": settings["period"],
                "slope": settings["slope"], "noise": settings["noise"], "seed": settings["synth_seed"]}
    raise UsageError("one of --data PATH or --synth is required")


def _load_data(spec: dict):
    if spec["kind"] == "csv":
        return load_csv(spec["path"])
    return synth_series(spec["T"], spec["D"], spec["period"], spec["slope"], spec["noise"], spec["seed"])


def dump_masks(cfg: DozerformerConfig, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    sp, coords = cfg.sparsity, cfg.coords
    enc, dec, cross = model_masks(cfg)
    named = {
        "enc_self": enc, "dec_self": dec, "cross": cross,
        "enc_local": mk.local_self_mask(cfg.n_enc, sp.w), "enc_stride": mk.stride_self_mask(cfg.n_enc, sp.interval),
        "cross_local": mk.local_cross_mask(coords, sp.w),
        "cross_stride": mk.stride_cross_mask(coords, sp.interval, cfg.stride_anchor),
        "cross_vary": mk.vary_cross_mask(coords, sp.v),
    }
    written = []
    for name, m in named.items():
        text, pgm = mk.render_mask(m)
        (out_dir / f"{name}.txt").write_text(text)
        (out_dir / f"{name}.pgm").write_bytes(pgm)
        written += [out_dir / f"{name}.txt", out_dir / f"{name}.pgm"]
    return written


def complexity_lines(cfg: DozerformerConfig) -> list[str]:
    enc, dec, cross = model_masks(cfg)
    closed_self, closed_cross = mk.closed_form_pairs(cfg)
    lines = []
    for tag, m, closed in (("self", enc, closed_self), ("dec_self", dec, None), ("cross", cross, closed_cross)):
        r = mk.count_pairs(m, closed)
        lines += [f"{tag}_pairs={r.counted}", f"{tag}_full={r.full}", f"{tag}_ratio={r.ratio!r}"]
        if closed is not None:
            lines.append(f"{tag}_closed_form={closed}")
    cost = model_cost_report(cfg)
    full_cost = model_cost_report(cfg, masks=tuple(mk.AttnMask.full(*m.shape) for m in (enc, dec, cross)))
    lines += [f"attn_pairs={cost.attn_pairs}", f"attn_pairs_full={full_cost.attn_pairs}",
              f"params={cost.params}", f"flops_estimate={cost.flops_estimate}",
              f"flops_estimate_full={full_cost.flops_estimate}"]
    return lines


def cmd_synth(s: dict) -> int:
    ds = synth_series(s["T"], s["D"], s["period"], s["slope"], s["noise"], s["synth_seed"])
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out)
    print(f"wrote {out} (T={ds.T}, D={ds.D})")
    return 0


def cmd_train(s: dict) -> int:
    spec = _data_spec(s)
    ds = _load_data(spec)
    cfg = config_from(s, ds.D)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    ratios = _floats(s["ratios"])
    log_path = out / "train.log"

    def on_epoch(rec):
        with log_path.open("a") as fh:
            fh.write(rec.line() + "\n")

    result = train(cfg, ds, epochs=s["epochs"], batch=s["batch"], seed=s["seed"], lr=s["lr"], ratios=ratios,
                   max_steps=s["max_steps"], on_epoch=on_epoch)
    meta = {"data": spec, "ratios": list(ratios), "seed": s["seed"], "epochs": s["epochs"],
            "batch": s["batch"], "lr": s["lr"], "best_epoch": result.best_epoch, "steps": result.steps}
    save_checkpoint(out / "checkpoint.npz", result.model, meta)
    write_metrics(out / "metrics.txt", result.reports)
    dump_masks(cfg, out / "masks")
    wall = next(iter(result.reports.values())).wall_seconds if result.reports else 0.0
    with log_path.open("a") as fh:
        fh.write(f"done best_epoch={result.best_epoch} steps={result.steps} wall_seconds={wall:.3f}\n")
    for split, r in result.reports.items():
        print(f"{split}: mse={r.mse:.6f} mae={r.mae:.6f} mase={r.mase:.6f}")
    return 0


def cmd_eval(s: dict) -> int:
    try:
        model, meta = load_checkpoint(s["checkpoint"])
    except OSError as exc:
        raise RuntimeError(f"cannot read checkpoint: {exc}") from None
    spec = _data_spec(s) if (s.get("data") or s.get("synth")) else meta.get("data")
    if spec is None:
        raise UsageError("checkpoint has no data record; pass --data or --synth")
    if "ratios" in s["_given"]:
        ratios = _floats(s["ratios"])
    else:
        ratios = tuple(meta.get("ratios", _floats(DEFAULTS["ratios"])))
    ds = _load_data(spec)
    splits = split_and_standardize(ds, ratios)
    cfg = model.cfg
    reports = {}
    for tag, part in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        wins = sample_windows(part, cfg.I, cfg.O)
        if wins:
            reports[tag] = evaluate(model, wins, splits.train.values)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "eval_metrics.txt", reports)
    for split, r in reports.items():
        print(f"{split}: mse={r.mse:.6f} mae={r.mae:.6f} mase={r.mase:.6f}")
    return 0


def cmd_mask_dump(s: dict) -> int:
    cfg = config_from(s, D=1)
    written = dump_masks(cfg, Path(s["out"]))
    for path in written:
        if path.suffix == ".txt":
            print(path)
    return 0


def cmd_complexity(s: dict) -> int:
    cfg = config_from(s, D=1)
    print("\n".join(complexity_lines(cfg)))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "mask-dump": cmd_mask_dump, "complexity": cmd_complexity}


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (ConfigError, ParameterError) as exc:
        print(f"dozerformer: invalid settings: {exc}", file=sys.stderr)
        return 1
    except (DozerError, OSError, RuntimeError, ValueError) as exc:
        print(f"dozerformer: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
