"""Command-line entry point (``ctpnet``)."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import detect_period, load_csv, make_windows, valid_periods
from .errors import ConfigInvalid, CTPNetError, Diverged
from .experiments import (
    ablation_markdown,
    append_results,
    load_config,
    markdown_table,
    prepare,
    run_ablation,
    run_single,
    sweep_interval,
    sweep_markdown,
)
from .training import evaluate, load_checkpoint, save_checkpoint, save_record

log = logging.getLogger("ctpnet")


def _check_horizon(cfg: dict) -> None:
    L_in, L_out = int(cfg.get("L_in", 96)), int(cfg.get("L_out", 96))
    P = int(cfg.get("P", 24))
    if L_in % P or L_out % P:
        near_p = valid_periods(L_in, L_out, near=P)[:3]
        near_h = [h for h in sorted(range(P, 4 * L_out + P, P), key=lambda h: (abs(h - L_out), h))][:2]
        raise ConfigInvalid(
            f"P={P} must divide L_in={L_in} and L_out={L_out}; nearest valid P: "
            f"{', '.join(map(str, near_p))}"
            + (f"; nearest valid horizons for P={P}: {', '.join(map(str, near_h))}" if L_in % P == 0 else "")
        )


def cmd_detect_period(args) -> int:
    series = load_csv(args.csv, args.time_column)
    print(detect_period(series, args.min_lag, args.max_lag, args.threshold))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _check_horizon(cfg)
    prepared = prepare(cfg)
    try:
        model, record = run_single(cfg, prepared)
    except Diverged as exc:
        if exc.record is not None:
            save_record(f"{prepared.name}_diverged.json", exc.record)
        raise
    ckpt = args.checkpoint or cfg.get("checkpoint") or f"{prepared.name}_{record.horizon}_{record.variant}.ckpt"
    save_checkpoint(ckpt, model, prepared.stats, extra={
        "channel_names": prepared.channel_names,
        "dataset": prepared.name,
        "test": {"mse": record.test.mse, "mae": record.test.mae, "n": record.test.n},
    })
    save_record(str(ckpt) + ".json", record)
    append_results(args.log or cfg["results_log"], [record])
    print(markdown_table(
        ["dataset", "horizon", "variant", "P", "W", "epochs", "MSE", "MAE"],
        [[prepared.name, record.horizon, record.variant, record.interval, model.config.W,
          record.epochs, record.test.mse, record.test.mae]],
    ))
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    model, norm, _ = load_checkpoint(args.checkpoint)
    series = load_csv(cfg["dataset"], cfg.get("time_column", "auto"))
    prepared = prepare({**cfg, "L_in": model.config.L_in}, series)
    if norm is not None and not (np.array_equal(norm.mean, prepared.stats.mean) and np.array_equal(norm.std, prepared.stats.std)):
        log.warning("normalisation statistics differ from the checkpoint's; the dataset may have changed")
    test = prepared.test
    metrics = evaluate(model, make_windows(test, model.config.L_in, model.config.L_out))
    print(f"mse={metrics.mse!r} mae={metrics.mae!r} n={metrics.n}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    prepared = prepare(cfg)
    records, table = run_ablation(cfg, prepared)
    append_results(args.log or cfg["results_log"], records)
    print(ablation_markdown(table))
    return 0


def cmd_sweep_interval(args) -> int:
    cfg = load_config(args.config)
    prepared = prepare(cfg)
    records, grid, notes = sweep_interval(cfg, prepared)
    append_results(args.log or cfg["results_log"], records)
    for note in notes:
        print(f"note: {note}")
    print(sweep_markdown(grid))
    return 0


def cmd_predict(args) -> int:
    model, norm, extra = load_checkpoint(args.checkpoint)
    if norm is None:
        raise ConfigInvalid(f"{args.checkpoint}: checkpoint has no normalisation statistics")
    series = load_csv(args.csv, args.time_column)
    c = model.config
    if series.n_channels != c.n_channels:
        raise ConfigInvalid(f"{args.csv}: {series.n_channels} channels, model expects {c.n_channels}")
    if series.length < c.L_in:
        raise ConfigInvalid(f"{args.csv}: need at least {c.L_in} rows, found {series.length}")
    start = series.length - c.L_in
    x = norm.apply(series.values[:, start:])
    forecast = norm.invert(model.predict(x, start))
    names = extra.get("channel_names") or series.channel_names
    out = Path(args.out) if args.out else None
    fh = out.open("w", newline="") if out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in forecast.T:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctpnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect-period", help="print the dominant ACF period of a CSV")
    p.add_argument("csv")
    p.add_argument("--min-lag", type=int, default=2)
    p.add_argument("--max-lag", type=int, default=48)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--time-column", default="auto")
    p.set_defaults(func=cmd_detect_period)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("config")
    p.add_argument("--checkpoint")
    p.add_argument("--log", help="results CSV (default: config results_log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test metrics of a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train every ablation variant over the config horizons")
    p.add_argument("config")
    p.add_argument("--log")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-interval", help="train one model per downsampling interval and horizon")
    p.add_argument("config")
    p.add_argument("--log")
    p.set_defaults(func=cmd_sweep_interval)

    p = sub.add_parser("predict", help="forecast the steps after the end of a CSV")
    p.add_argument("checkpoint")
    p.add_argument("csv")
    p.add_argument("--out", help="forecast CSV path (default: stdout)")
    p.add_argument("--time-column", default="auto")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 2
    except (CTPNetError, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
