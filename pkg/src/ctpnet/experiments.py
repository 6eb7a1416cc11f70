"""Experiment harness: single runs, ablation grids, interval sweeps, results log."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import (
    NormStats,
    RawSeries,
    SplitSpec,
    apply_norm,
    default_split,
    detect_period,
    fit_norm,
    load_csv,
    make_windows,
    split_series,
)
from .errors import ConfigInvalid, NoSignificantPeriod, SeriesTooShort
from .model import CTPNet, CTPNetConfig
from .training import RunRecord, TrainConfig, train

log = logging.getLogger(__name__)

RESULTS_HEADER = ["dataset", "horizon", "variant", "interval", "seed", "mse", "mae", "epochs", "wall_s"]

# variant name -> dependencies removed
VARIANTS: dict[str, tuple[str, ...]] = {
    "full": (),
    "i1": ("i1",),
    "i2": ("i2",),
    "i3": ("i3",),
    "i1+i2": ("i1", "i2"),
    "i1+i3": ("i1", "i3"),
    "i2+i3": ("i2", "i3"),
}

DEFAULTS = {
    "time_column": "auto",
    "split": None,
    "W": "auto",
    "weekly_max_lag": 2 * 168,
    "fallback_W": 168,
    "horizons": [96, 192, 336, 720],
    "intervals": [2, 4, 8, 16, 24],
    "variants": list(VARIANTS),
    "seeds": [0],
    "variant": "full",
    "results_log": "results.csv",
    "checkpoint": None,
}

_MODEL_KEYS = {"L_in", "L_out", "P", "W", "D", "H_c", "H_b", "H_p", "blocks", "ablate_i1", "ablate_i2", "ablate_i3"}
_TRAIN_KEYS = {"lr", "betas", "eps", "batch_size", "max_epochs", "patience", "seed", "loss"}
KNOWN_KEYS = set(DEFAULTS) | _MODEL_KEYS | _TRAIN_KEYS | {"dataset", "name"}


def load_config(path) -> dict:
    """Read a flat JSON experiment config, filling defaults and rejecting unknown keys."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{path}: config must be a JSON object")
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigInvalid(f"{path}: unknown config keys {sorted(unknown)}")
    if "dataset" not in raw:
        raise ConfigInvalid(f"{path}: missing 'dataset'")
    cfg = {**DEFAULTS, **raw}
    base = Path(path).parent
    dataset = Path(cfg["dataset"])
    cfg["dataset"] = str(dataset if dataset.is_absolute() else base / dataset)
    cfg.setdefault("name", Path(cfg["dataset"]).stem)
    return cfg


@dataclass
class Prepared:
    """Dataset-normalised train/val/test segments of one dataset."""

    name: str
    stats: NormStats
    train: RawSeries
    val: RawSeries
    test: RawSeries
    channel_names: list[str]


def prepare(cfg: dict, series: RawSeries | None = None) -> Prepared:
    if series is None:
        series = load_csv(cfg["dataset"], cfg.get("time_column", "auto"))
    name = cfg.get("name") or Path(cfg["dataset"]).stem
    split = SplitSpec(*cfg["split"]) if cfg.get("split") else default_split(name)
    L_in = int(cfg.get("L_in", 96))
    train_seg, val_seg, test_seg = split_series(series, split, context=L_in)
    stats = fit_norm(train_seg)
    return Prepared(
        name,
        stats,
        apply_norm(train_seg, stats),
        apply_norm(val_seg, stats),
        apply_norm(test_seg, stats),
        list(series.channel_names),
    )


def default_query_period(series: RawSeries, P: int, max_lag: int = 2 * 168, fallback: int = 168) -> int:
    """Temporal-query period: strongest ACF peak above ``P``, else ``fallback``."""
    try:
        return detect_period(series, min_lag=P + 1, max_lag=max_lag)
    except (NoSignificantPeriod, SeriesTooShort, ValueError):
        return fallback


def build_configs(cfg: dict, prepared: Prepared, **overrides) -> tuple[CTPNetConfig, TrainConfig]:
    values = {**cfg, **overrides}
    model_values = {k: values[k] for k in _MODEL_KEYS if k in values}
    model_values["n_channels"] = prepared.train.n_channels
    if model_values.get("W", "auto") == "auto":
        model_values["W"] = default_query_period(
            prepared.train, int(model_values.get("P", 24)), cfg.get("weekly_max_lag", 336), cfg.get("fallback_W", 168)
        )
    variant = values.get("variant", "full")
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown variant {variant!r}; choose from {list(VARIANTS)}")
    for dep in VARIANTS[variant]:
        model_values[f"ablate_{dep}"] = True
    model_config = CTPNetConfig.from_dict(model_values).validate()
    train_config = TrainConfig.from_dict({k: values[k] for k in _TRAIN_KEYS if k in values}).validate()
    return model_config, train_config


def run_single(cfg: dict, prepared: Prepared, **overrides) -> tuple[CTPNet, RunRecord]:
    """Train one model; ``overrides`` may set ``L_out``, ``P``, ``variant`` or ``seed``."""
    model_config, train_config = build_configs(cfg, prepared, **overrides)
    windows = [
        make_windows(seg, model_config.L_in, model_config.L_out)
        for seg in (prepared.train, prepared.val, prepared.test)
    ]
    model = CTPNet(model_config, seed=train_config.seed)
    log.info("training %s L_out=%d P=%d W=%d variant=%s seed=%d",
             prepared.name, model_config.L_out, model_config.P, model_config.W,
             overrides.get("variant", cfg.get("variant", "full")), train_config.seed)
    record = train(model, windows[0], windows[1], train_config, test_windows=windows[2])
    record.dataset = prepared.name
    record.horizon = model_config.L_out
    record.variant = overrides.get("variant", cfg.get("variant", "full"))
    record.interval = model_config.P
    return model, record


def append_results(path, records: Iterable[RunRecord]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RESULTS_HEADER)
        for r in records:
            writer.writerow([
                r.dataset, r.horizon, r.variant, r.interval, r.seed,
                repr(r.test.mse) if r.test else "", repr(r.test.mae) if r.test else "",
                r.epochs, f"{r.wall_s:.3f}",
            ])


def run_ablation(cfg: dict, prepared: Prepared, horizons: Sequence[int] | None = None,
                 variants: Sequence[str] | None = None, seeds: Sequence[int] | None = None):
    """Train every (variant, horizon, seed) cell.

    Returns the records and a table ``{variant: (mse, mae)}`` where each seed's
    metrics are averaged over horizons and the median over seeds is reported.
    """
    horizons = list(horizons or cfg["horizons"])
    variants = list(variants or cfg["variants"])
    seeds = list(seeds or cfg["seeds"])
    records = []
    for variant in variants:
        for horizon in horizons:
            for seed in seeds:
                _, record = run_single(cfg, prepared, L_out=horizon, variant=variant, seed=seed)
                records.append(record)
    table = {}
    for variant in variants:
        per_seed_mse, per_seed_mae = [], []
        for seed in seeds:
            cell = [r for r in records if r.variant == variant and r.seed == seed]
            per_seed_mse.append(statistics.fmean(r.test.mse for r in cell))
            per_seed_mae.append(statistics.fmean(r.test.mae for r in cell))
        table[variant] = (statistics.median(per_seed_mse), statistics.median(per_seed_mae))
    return records, table


def sweep_interval(cfg: dict, prepared: Prepared, intervals: Sequence[int] | None = None,
                   horizons: Sequence[int] | None = None, seeds: Sequence[int] | None = None):
    """Train one model per (interval, horizon, seed).

    Intervals that do not divide both ``L_in`` and the horizon are skipped and
    listed in the returned notes. The grid maps ``(interval, horizon)`` to the
    median (mse, mae) over seeds.
    """
    intervals = list(intervals or cfg["intervals"])
    horizons = list(horizons or cfg["horizons"])
    seeds = list(seeds or cfg["seeds"])
    L_in = int(cfg.get("L_in", 96))
    records, grid, notes = [], {}, []
    for interval in intervals:
        for horizon in horizons:
            if L_in % interval or horizon % interval:
                notes.append(f"interval {interval} skipped for horizon {horizon}: does not divide L_in={L_in} and L_out={horizon}")
                continue
            cell = []
            for seed in seeds:
                _, record = run_single(cfg, prepared, L_out=horizon, P=interval, seed=seed)
                cell.append(record)
            records.extend(cell)
            grid[(interval, horizon)] = (
                statistics.median(r.test.mse for r in cell),
                statistics.median(r.test.mae for r in cell),
            )
    return records, grid, notes


def markdown_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    lines += ["| " + " | ".join(fmt(v) for v in row) + " |" for row in rows]
    return "\n".join(lines)


def ablation_markdown(table: dict) -> str:
    variants = list(table)
    headers = ["metric"] + ["Full" if v == "full" else "-" + v.upper().replace("+", ",") for v in variants]
    rows = [["MSE"] + [table[v][0] for v in variants], ["MAE"] + [table[v][1] for v in variants]]
    return markdown_table(headers, rows)


def sweep_markdown(grid: dict) -> str:
    intervals = sorted({k[0] for k in grid})
    horizons = sorted({k[1] for k in grid})
    headers = ["horizon"] + [f"P={p} {m}" for p in intervals for m in ("MSE", "MAE")]
    rows = []
    for h in horizons:
        row = [h]
        for p in intervals:
            row += list(grid[(p, h)]) if (p, h) in grid else ["-", "-"]
        rows.append(row)
    return markdown_table(headers, rows)
