"""Synthetic seasonal series for desk-scale experiments and tests."""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import RawSeries


def seasonal_series(
    length: int,
    n_channels: int = 1,
    periods: Sequence[int] = (24,),
    amplitudes: Sequence[float] | None = None,
    offsets: Sequence[float] | None = None,
    noise: float = 0.0,
    seed: int = 0,
) -> RawSeries:
    """Sum of sinusoids per channel plus a constant offset and Gaussian noise.

    Channel ``c`` gets phase shift ``c`` steps so channels are not identical.
    """
    rng = np.random.default_rng(seed)
    amplitudes = [1.0] * len(periods) if amplitudes is None else list(amplitudes)
    offsets = np.arange(n_channels, dtype=float) if offsets is None else np.asarray(offsets, dtype=float)
    steps = np.arange(length, dtype=float)
    values = np.empty((n_channels, length))
    for c in range(n_channels):
        signal = sum(a * np.sin(2 * np.pi * (steps + c) / p) for p, a in zip(periods, amplitudes))
        values[c] = signal + offsets[c]
    if noise > 0:
        values += rng.normal(0.0, noise, size=values.shape)
    return RawSeries(values, [f"ch{c}" for c in range(n_channels)], 0)


def write_csv(series: RawSeries, path, with_dates: bool = True, start: datetime = datetime(2016, 7, 1)) -> Path:
    """Write ``series`` in the benchmark layout: optional hourly ``date`` column, one column per channel."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((["date"] if with_dates else []) + list(series.channel_names))
        for i in range(series.length):
            row = [repr(float(v)) for v in series.values[:, i]]
            if with_dates:
                row.insert(0, (start + timedelta(hours=i)).strftime("%Y-%m-%d %H:%M:%S"))
            writer.writerow(row)
    return path
