"""Loss, metrics, Adam, the training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .data import NormStats, WindowSample, read_tensor, stack_windows, write_tensor
from .errors import ConfigInvalid, DataEmpty, Diverged, NonFiniteError, ParseError, ShapeMismatch
from .model import CTPNet, CTPNetConfig
from .tensor import Parameter, Tensor, as_tensor, backward, no_grad

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CTPNCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    loss: str = "l1"

    def validate(self) -> "TrainConfig":
        if self.lr < 0:
            raise ConfigInvalid(f"lr must be >= 0, got {self.lr}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigInvalid(f"betas must lie in [0, 1), got {self.betas}")
        if self.eps <= 0:
            raise ConfigInvalid("eps must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigInvalid("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ConfigInvalid("patience cannot exceed max_epochs")
        if self.loss != "l1":
            raise ConfigInvalid(f"only the l1 loss is supported, got {self.loss!r}")
        return self

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in values.items() if k in known}
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        return cls(**kwargs)


@dataclass
class Metrics:
    mse: float
    mae: float
    n: int


@dataclass
class RunRecord:
    model_config: dict
    train_config: dict
    seed: int
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    test: Metrics | None = None
    wall_s: float = 0.0
    status: str = "ok"
    dataset: str = ""
    horizon: int = 0
    variant: str = "full"
    interval: int = 0
    version: str = __version__

    @property
    def epochs(self) -> int:
        return len(self.train_losses)

    def to_dict(self) -> dict:
        return asdict(self)


# losses and metrics ---------------------------------------------------------------
def l1_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return (pred - target).abs().mean()


def _errors(pred, target) -> np.ndarray:
    pred = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return pred - target


def mse(pred, target) -> float:
    err = _errors(pred, target)
    return float(np.mean(err * err))


def mae(pred, target) -> float:
    return float(np.mean(np.abs(_errors(pred, target))))


# optimiser ----------------------------------------------------------------------
def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict,
              lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied to ``params`` in place.

    ``state`` carries ``step`` plus per-parameter first/second moments ``m``
    and ``v``; it is created on the first call.
    """
    b1, b2 = betas
    if not state:
        state.update(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["step"] += 1
    k = state["step"]
    bc1 = 1.0 - b1**k
    bc2 = 1.0 - b2**k
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# evaluation ---------------------------------------------------------------------
def _predict(model, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    if hasattr(model, "predict"):
        return np.asarray(model.predict(x, t), dtype=np.float64)
    with no_grad():
        out = model(x, t)
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def evaluate(model, windows: Sequence[WindowSample], batch_size: int = 256) -> Metrics:
    """MSE/MAE over every scalar of every window, in the space the windows live in."""
    if not windows:
        raise DataEmpty("no windows to evaluate")
    sq = ab = 0.0
    n = 0
    for start in range(0, len(windows), batch_size):
        x, y, t = stack_windows(windows[start : start + batch_size])
        err = _predict(model, x, t) - y
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        n += err.size
    return Metrics(sq / n, ab / n, n)


# training -----------------------------------------------------------------------
def train(
    model: CTPNet,
    train_windows: Sequence[WindowSample],
    val_windows: Sequence[WindowSample],
    config: TrainConfig | None = None,
    test_windows: Sequence[WindowSample] | None = None,
) -> RunRecord:
    """Mini-batch Adam on the L1 loss with early stopping on validation MAE.

    The best-validation weights are restored before returning. Shuffling and
    initialisation are driven by ``config.seed``, so equal seeds give equal
    records.
    """
    config = (config or TrainConfig()).validate()
    if not train_windows:
        raise DataEmpty("no training windows")
    if not val_windows:
        raise DataEmpty("no validation windows")

    record = RunRecord(model.config.to_dict(), asdict(config), config.seed)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.lr, config.betas, config.eps)
    best_val = np.inf
    best_state = model.state_dict()
    stale = 0
    started = time.perf_counter()
    n = len(train_windows)

    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [train_windows[i] for i in order[start : start + config.batch_size]]
            x, y, t = stack_windows(batch)
            try:
                loss = l1_loss(model(x, t), y)
                opt.zero_grad()
                backward(loss, params)
                opt.step()
            except NonFiniteError as exc:
                record.status = "diverged"
                record.wall_s = time.perf_counter() - started
                raise Diverged(f"non-finite values in epoch {epoch + 1}: {exc}", record) from exc
            if not all(np.all(np.isfinite(p.data)) for p in params):
                record.status = "diverged"
                record.wall_s = time.perf_counter() - started
                raise Diverged(f"non-finite parameters after a step in epoch {epoch + 1}", record)
            total += loss.item() * len(batch)
        val = evaluate(model, val_windows)
        record.train_losses.append(total / n)
        record.val_losses.append(val.mae)
        log.info("epoch %d train_l1=%.6f val_mae=%.6f val_mse=%.6f", epoch + 1, total / n, val.mae, val.mse)
        if val.mae < best_val:
            best_val = val.mae
            best_state = model.state_dict()
            record.best_epoch = epoch + 1
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.load_state_dict(best_state)
    if test_windows:
        record.test = evaluate(model, test_windows)
    record.wall_s = time.perf_counter() - started
    return record


# checkpoints --------------------------------------------------------------------
def save_checkpoint(path, model: CTPNet, norm: NormStats | None = None, extra: dict | None = None) -> None:
    """Write a checkpoint: magic, JSON header, then one binary tensor dump per entry.

    Entries are the model parameters in declaration order, followed by the
    dataset normalisation statistics when given.
    """
    tensors = list(model.state_dict().items())
    if norm is not None:
        tensors += [("norm.mean", norm.mean), ("norm.std", norm.std)]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            write_tensor(fh, arr)


def load_checkpoint(path) -> tuple[CTPNet, NormStats | None, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for entry in header["tensors"]:
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise ParseError(f"{path}: tensor {entry['name']} has shape {arr.shape}, header says {entry['shape']}")
            arrays[entry["name"]] = arr
    model = CTPNet(CTPNetConfig.from_dict(header["config"]), seed=0)
    norm = None
    if "norm.mean" in arrays:
        norm = NormStats(arrays.pop("norm.mean"), arrays.pop("norm.std"))
    model.load_state_dict(arrays)
    return model, norm, header.get("extra", {})


def save_record(path, record: RunRecord) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=2))
