"""Series ingestion and preparation.

CSV loading, chronological splits, dataset-level z-scoring, sliding windows,
period downsampling and its inverse, autocorrelation-based period detection,
and a small binary format for dumping arrays.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import (
    ConstantSeries,
    DegenerateChannel,
    IndivisibleLength,
    MissingValue,
    NoSignificantPeriod,
    ParseError,
    SeriesTooShort,
    ShapeMismatch,
    TooFewRows,
)
from .tensor import Tensor, reshape, transpose_last_two

TIME_COLUMN_NAMES = ("date", "time", "timestamp", "datetime")


@dataclass
class RawSeries:
    """Multivariate series, channels x time.

    ``start_index`` is the absolute time index of column 0; segments cut from a
    longer series keep their absolute position so temporal queries stay aligned.
    """

    values: np.ndarray
    channel_names: list[str]
    start_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"series values must be (channels, time), got {self.values.shape}")
        if self.values.shape[0] < 1:
            raise ShapeMismatch("series needs at least one channel")
        if self.values.shape[1] < 2:
            raise TooFewRows(f"series needs at least 2 time steps, got {self.values.shape[1]}")
        if not np.all(np.isfinite(self.values)):
            raise MissingValue("series contains NaN or Inf")
        if len(self.channel_names) != self.values.shape[0]:
            raise ShapeMismatch("channel_names length does not match channel count")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def segment(self, start: int, stop: int) -> "RawSeries":
        """Columns ``[start, stop)`` relative to this series."""
        return RawSeries(self.values[:, start:stop], list(self.channel_names), self.start_index + start)


@dataclass
class WindowSample:
    x_in: np.ndarray  # (N_c, L_in)
    x_target: np.ndarray  # (N_c, L_out)
    t: int  # absolute index of the first look-back step


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test sizes, either as fractions or row counts."""

    train: float
    val: float
    test: float

    def rows(self, total: int) -> tuple[int, int, int]:
        parts = (self.train, self.val, self.test)
        if all(float(p).is_integer() and p >= 1 for p in parts):
            n_train, n_val, n_test = (int(p) for p in parts)
            if n_train + n_val + n_test > total:
                raise SeriesTooShort(
                    f"split needs {n_train + n_val + n_test} rows, series has {total}"
                )
            return n_train, n_val, n_test
        if any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {parts}")
        n_train = int(total * self.train)
        n_test = int(total * self.test)
        return n_train, total - n_train - n_test, n_test


ETT_HOURLY_SPLIT = SplitSpec(12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)
ETT_MINUTE_SPLIT = SplitSpec(12 * 30 * 24 * 4, 4 * 30 * 24 * 4, 4 * 30 * 24 * 4)
DEFAULT_SPLIT = SplitSpec(0.7, 0.1, 0.2)


def default_split(dataset_name: str) -> SplitSpec:
    name = Path(dataset_name).stem.lower()
    if name.startswith("etth"):
        return ETT_HOURLY_SPLIT
    if name.startswith("ettm"):
        return ETT_MINUTE_SPLIT
    return DEFAULT_SPLIT


def split_series(
    series: RawSeries, split: SplitSpec, context: int = 0
) -> tuple[RawSeries, RawSeries, RawSeries]:
    """Cut train/val/test segments.

    Validation and test segments are extended ``context`` steps into the past
    so their first forecast starts right where the previous segment ends; only
    the look-back overlaps, never the targets.
    """
    n_train, n_val, n_test = split.rows(series.length)
    if context > n_train:
        raise SeriesTooShort(f"context {context} exceeds the training segment ({n_train} rows)")
    b1 = n_train
    b2 = n_train + n_val
    train = series.segment(0, b1)
    val = series.segment(b1 - context, b2)
    test = series.segment(b2 - context, b2 + n_test)
    return train, val, test


# loading -----------------------------------------------------------------------
def _check_time_order(stamps: list[str], path) -> None:
    try:
        parsed = [datetime.fromisoformat(s.strip()) for s in stamps]
    except ValueError:
        return  # unparseable stamps: nothing to check
    for i in range(1, len(parsed)):
        if parsed[i] < parsed[i - 1]:
            raise ParseError(f"{path}: time column decreases at data row {i + 1}")


def load_csv(path, time_column: str | None = None) -> RawSeries:
    """Read a header-first, comma-separated numeric CSV into a :class:`RawSeries`.

    ``time_column`` names a column to drop from the channels (``"auto"`` drops
    a leading ``date``/``time`` column when present). Rows stay in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TooFewRows(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    if time_column == "auto":
        time_column = header[0] if header and header[0].lower() in TIME_COLUMN_NAMES else None
    time_idx = None
    if time_column is not None:
        if time_column not in header:
            raise ParseError(f"{path}: time column {time_column!r} not in header")
        time_idx = header.index(time_column)
    value_idx = [i for i in range(len(header)) if i != time_idx]
    if not value_idx:
        raise ParseError(f"{path}: no value columns")
    if len(rows) < 2:
        raise TooFewRows(f"{path}: need at least 2 data rows, found {len(rows)}")

    values = np.empty((len(value_idx), len(rows)), dtype=np.float64)
    stamps = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        if time_idx is not None:
            stamps.append(row[time_idx])
        for c, i in enumerate(value_idx):
            cell = row[i].strip()
            if cell == "":
                raise MissingValue(f"{path}: empty cell at row {r + 2}, column {header[i]!r}")
            try:
                values[c, r] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {cell!r} at row {r + 2}, column {header[i]!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise MissingValue(f"{path}: NaN or Inf cell")
    if stamps:
        _check_time_order(stamps, path)
    return RawSeries(values, [header[i] for i in value_idx], 0)


# dataset normalisation -------------------------------------------------------------
@dataclass
class NormStats:
    """Per-channel mean and population std fitted on the training segment."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Z-score ``values`` whose channel axis is second to last."""
        return (values - self.mean[:, None]) / self.std[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]


def fit_norm(train_segment: RawSeries) -> NormStats:
    mean = train_segment.values.mean(axis=1)
    std = train_segment.values.std(axis=1)
    bad = [name for name, s in zip(train_segment.channel_names, std) if not s > 0]
    if bad:
        raise DegenerateChannel(f"constant training channel(s): {', '.join(bad)}")
    return NormStats(mean, std)


def apply_norm(series: RawSeries, stats: NormStats) -> RawSeries:
    return RawSeries(stats.apply(series.values), list(series.channel_names), series.start_index)


def invert_norm(series: RawSeries, stats: NormStats) -> RawSeries:
    return RawSeries(stats.invert(series.values), list(series.channel_names), series.start_index)


# windows ---------------------------------------------------------------------------
def window_count(length: int, L_in: int, L_out: int, stride: int = 1) -> int:
    return (length - L_in - L_out) // stride + 1


def make_windows(series: RawSeries, L_in: int, L_out: int, stride: int = 1) -> list[WindowSample]:
    """Every contiguous (look-back, target) pair, stepping by ``stride``.

    Windows are views into ``series.values``; nothing is copied.
    """
    if L_in < 1 or L_out < 1 or stride < 1:
        raise ValueError("L_in, L_out and stride must be >= 1")
    if series.length < L_in + L_out:
        raise SeriesTooShort(
            f"series of length {series.length} cannot hold L_in + L_out = {L_in + L_out}"
        )
    v = series.values
    windows = []
    for off in range(0, window_count(series.length, L_in, L_out, stride) * stride, stride):
        windows.append(
            WindowSample(v[:, off : off + L_in], v[:, off + L_in : off + L_in + L_out], series.start_index + off)
        )
    return windows


def stack_windows(windows: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch windows into ``(B, N_c, L_in)``, ``(B, N_c, L_out)`` and ``t`` arrays."""
    x = np.stack([w.x_in for w in windows])
    y = np.stack([w.x_target for w in windows])
    t = np.array([w.t for w in windows], dtype=np.int64)
    return x, y, t


# downsampling -------------------------------------------------------------------------
def downsample(x, P: int):
    """Split the last axis into ``P`` interleaved subsequences.

    Subsequence ``p`` holds elements ``p, p + P, p + 2P, ...``, so a
    ``(..., L)`` input becomes ``(..., P, L // P)``. Works on arrays and
    (differentiably) on tensors.
    """
    L = x.shape[-1]
    if P < 1 or L % P:
        raise IndivisibleLength(f"period {P} does not divide length {L}")
    lead = tuple(x.shape[:-1])
    n = L // P
    if isinstance(x, Tensor):
        return transpose_last_two(reshape(x, lead + (n, P)))
    return np.swapaxes(np.asarray(x).reshape(lead + (n, P)), -1, -2)


def de_downsample(xs, P: int | None = None):
    """Inverse of :func:`downsample`: ``(..., P, N) -> (..., P * N)``."""
    if P is not None and xs.shape[-2] != P:
        raise ShapeMismatch(f"expected {P} subsequences, got shape {xs.shape}")
    P, n = xs.shape[-2:]
    lead = tuple(xs.shape[:-2])
    if isinstance(xs, Tensor):
        return reshape(transpose_last_two(xs), lead + (P * n,))
    return np.swapaxes(np.asarray(xs), -1, -2).reshape(lead + (P * n,))


def valid_periods(L_in: int, L_out: int, near: int | None = None) -> list[int]:
    """Periods dividing both lengths, ordered by distance to ``near``."""
    periods = [p for p in range(1, min(L_in, L_out) + 1) if L_in % p == 0 and L_out % p == 0]
    if near is not None:
        periods.sort(key=lambda p: (abs(p - near), p))
    return periods


# autocorrelation ------------------------------------------------------------------------
def acf(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation ``r_0..r_max_lag`` around the population mean."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    L = x.size
    if L < 3:
        raise SeriesTooShort(f"acf needs at least 3 points, got {L}")
    if not 0 <= max_lag < L:
        raise ValueError(f"max_lag must be in [0, {L - 1}], got {max_lag}")
    c = x - x.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0 or denom <= 1e-24 * L * max(1.0, float(np.abs(x).max()) ** 2):
        raise ConstantSeries("acf of a constant series is undefined")
    return np.array([np.dot(c[: L - k], c[k:]) for k in range(max_lag + 1)]) / denom


def mean_acf(values: np.ndarray, max_lag: int) -> np.ndarray:
    """ACF averaged over non-constant channels of a ``(N_c, T)`` array."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    curves = []
    for row in values:
        try:
            curves.append(acf(row, max_lag))
        except ConstantSeries:
            continue
    if not curves:
        raise ConstantSeries("every channel is constant")
    return np.mean(curves, axis=0)


def detect_period(series, min_lag: int = 2, max_lag: int = 48, threshold: float = 0.1) -> int:
    """Lag in ``[min_lag, max_lag]`` with the highest channel-averaged ACF peak.

    Only strict local maxima of the averaged ACF qualify; equal peaks resolve
    to the smaller lag. Raises :class:`NoSignificantPeriod` when the best peak
    is below ``threshold``.
    """
    values = series.values if isinstance(series, RawSeries) else np.atleast_2d(series)
    T = values.shape[-1]
    if min_lag < 2:
        raise ValueError("min_lag must be >= 2")
    if max_lag < min_lag:
        raise ValueError(f"max_lag {max_lag} < min_lag {min_lag}")
    # one extra lag so max_lag itself can be tested as a local maximum
    top = min(max_lag + 1, T - 1)
    if top < min_lag + 1:
        raise SeriesTooShort(f"series of length {T} too short for lags up to {max_lag}")
    r = mean_acf(values, top)
    best_lag, best_val = None, -np.inf
    for k in range(min_lag, min(max_lag, top - 1) + 1):
        if r[k] > r[k - 1] and r[k] > r[k + 1] and r[k] > best_val:
            best_lag, best_val = k, r[k]
    if best_lag is None or best_val < threshold:
        found = "no local maximum" if best_lag is None else f"best peak r[{best_lag}]={best_val:.3f}"
        raise NoSignificantPeriod(
            f"no ACF peak >= {threshold} in lags [{min_lag}, {max_lag}] ({found})"
        )
    return int(best_lag)


# binary tensor dumps -------------------------------------------------------------------
def write_tensor(fh: BinaryIO, array) -> None:
    """Write ``rank:u32, extents:u32..., float64 LE payload``."""
    arr = np.asarray(array, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(4)
    if len(head) != 4:
        raise ParseError("truncated tensor header")
    (rank,) = struct.unpack("<I", head)
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise ParseError("truncated tensor shape")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ParseError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
