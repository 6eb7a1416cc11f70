"""Channel, trend and period-wise representation learning for multivariate forecasting."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    NormStats,
    RawSeries,
    SplitSpec,
    WindowSample,
    acf,
    de_downsample,
    detect_period,
    downsample,
    fit_norm,
    load_csv,
    make_windows,
)
from .model import CTPNet, CTPNetConfig  # noqa: E402
from .training import Metrics, RunRecord, TrainConfig, evaluate, train  # noqa: E402

__all__ = [
    "CTPNet",
    "CTPNetConfig",
    "Metrics",
    "NormStats",
    "RawSeries",
    "RunRecord",
    "SplitSpec",
    "TrainConfig",
    "WindowSample",
    "acf",
    "de_downsample",
    "detect_period",
    "downsample",
    "evaluate",
    "fit_norm",
    "load_csv",
    "make_windows",
    "train",
]
