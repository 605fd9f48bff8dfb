"""Mini-batch training loop with Adam and reduce-on-plateau scheduling.

Clips are lazily read from the on-disk dataset per batch, the loss is
pixel-level MSE on the predicted elevation-RGB frames, and validation always
runs the pure inference path (no teacher forcing, no dropout).  The best
validation checkpoint and the last checkpoint are kept, together with a CSV
epoch log.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from . import clips as clips_mod
from .clips import Clip, ClipDatasetIndex, ClipRecord, load_index, read_clip
from .forecast import RolloutConfig, rollout, warmup
from .model import NetworkConfig, SurgeForecastNet, build_model, save_checkpoint


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the training recipe."""

    batch_size: int = 3
    lr: float = 0.001
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    min_lr: float = 1e-5
    teacher_forcing_p: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in [0, 1)")
        if not 0.0 <= self.teacher_forcing_p <= 1.0:
            raise ValueError("teacher_forcing_p must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_file(path: str | Path) -> dict:
    """Read a plain-text ``key=value`` file mirroring TrainConfig fields."""
    known = {f.name: f.type for f in fields(TrainConfig)}
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{lineno}: expected 'key=value', got {line!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = int(value) if known[key] == "int" else float(value)
    return out


def make_train_config(file_path: str | Path | None = None, **overrides) -> TrainConfig:
    """TrainConfig from defaults, then a config file, then explicit overrides."""
    values = parse_config_file(file_path) if file_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(TrainConfig(), **values)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every entry of the predicted frames."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


# ---------------------------------------------------------------------------
# Optimizer and scheduler
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators and step counter, keyed like params."""

    m: dict[str, Tensor]
    v: dict[str, Tensor]
    step: int = 0

    @classmethod
    def for_model(cls, model: torch.nn.Module) -> "AdamState":
        return cls(
            m={n: torch.zeros_like(p) for n, p in model.named_parameters()},
            v={n: torch.zeros_like(p) for n, p in model.named_parameters()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    with torch.no_grad():
        for name in sorted(params):
            g = grads[name]
            if not torch.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            m_hat = m / bc1
            v_hat = v / bc2
            params[name].sub_(lr * m_hat / (v_hat.sqrt() + eps))


class PlateauScheduler:
    """Halt-the-decay learning-rate controller.

    When the best validation loss fails to improve by more than ``threshold``
    for ``patience`` consecutive epochs, the rate is multiplied by ``factor``
    (never below ``min_lr``) and the stagnation counter resets.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 3,
                 min_lr: float = 1e-5, threshold: float = 1e-6) -> None:
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = float("inf")
        self.stagnant = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the lr to use next."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr = max(self.min_lr, self.lr * self.factor)
                self.stagnant = 0
        return self.lr


def plateau_schedule(
    val_losses, lr: float, factor: float, patience: int, min_lr: float
) -> float:
    """Learning rate after replaying a validation-loss history from scratch."""
    losses = list(val_losses)
    if not losses:
        raise ValueError("need at least one recorded epoch")
    sched = PlateauScheduler(lr, factor=factor, patience=patience, min_lr=min_lr)
    for loss in losses:
        lr = sched.step(loss)
    return lr


# ---------------------------------------------------------------------------
# Lazy clip loading
# ---------------------------------------------------------------------------


class ClipDataset:
    """Lazy reader over a clip dataset directory.

    Clip files are read on demand per batch; the static bathymetry grid is
    cached per region after its first read.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.index: ClipDatasetIndex = load_index(self.root)
        self._bathy_cache: dict[str, np.ndarray] = {}

    @property
    def records(self) -> list[ClipRecord]:
        return self.index.records

    def load(self, record: ClipRecord) -> Clip:
        clip = read_clip(
            self.root / record.file,
            storm_id=record.storm_id,
            region_id=record.region_id,
        )
        bathy = self._bathy_cache.setdefault(record.region_id, clip.bathymetry)
        return Clip(
            storm_id=clip.storm_id,
            region_id=clip.region_id,
            context=clip.context,
            target=clip.target,
            future_wind=clip.future_wind,
            bathymetry=bathy,
        )

    def train_val_records(self, seed: int) -> tuple[list[ClipRecord], list[ClipRecord]]:
        """Training and validation clip lists after the seeded storm carve."""
        train_storms, val_storms = clips_mod.split_train_val(
            self.index.split.train_storms, seed
        )
        train_set = set(train_storms) - set(val_storms)
        if not train_set:  # degenerate single-storm dataset
            train_set = set(train_storms)
        return (
            [r for r in self.records if r.storm_id in train_set],
            self.index.records_for(val_storms),
        )

    def test_records(self) -> list[ClipRecord]:
        return self.index.records_for(self.index.split.test_storms)


def _stack_batch(clip_list: list[Clip]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    ctx = torch.from_numpy(np.stack([c.context for c in clip_list]))
    tgt = torch.from_numpy(np.stack([c.target for c in clip_list]))
    wind = torch.from_numpy(np.stack([c.future_wind for c in clip_list]))
    bathy = torch.from_numpy(np.stack([c.bathymetry for c in clip_list]))
    return ctx, tgt, wind, bathy


def evaluate_clips(model: SurgeForecastNet, clip_list: list[Clip],
                   batch_size: int = 8) -> float:
    """Mean pure-rollout MSE over clips: dropout off, no teacher forcing.

    Clips share one raster size, so batch means equal the mean of per-clip
    means.
    """
    if not clip_list:
        raise ValueError("no clips to evaluate")
    total = 0.0
    with torch.no_grad():
        for b0 in range(0, len(clip_list), batch_size):
            batch = clip_list[b0 : b0 + batch_size]
            ctx, tgt, wind, bathy = _stack_batch(batch)
            states, y0 = warmup(model, ctx)
            preds = rollout(model, states, y0, wind, bathy, RolloutConfig())
            total += float(mse_loss(preds, tgt)) * len(batch)
    return total / len(clip_list)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_seconds: float


@dataclass
class TrainResult:
    epoch_log: list[EpochRecord] = field(default_factory=list)
    best_path: Path | None = None
    last_path: Path | None = None
    best_val_loss: float = float("inf")


def write_epoch_log(records: list[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr", "wall_seconds"])
        for r in records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr),
                             repr(r.wall_seconds)])


def train_loop(
    dataset: ClipDataset,
    cfg: TrainConfig,
    out_dir: str | Path,
    *,
    model: SurgeForecastNet | None = None,
    checkpoint_extra: dict | None = None,
    log_fn=None,
) -> TrainResult:
    """Run the full optimization and persist checkpoints plus the epoch log.

    The model (default architecture unless one is passed in) trains with
    teacher forcing and dropout; validation loss per epoch drives the plateau
    scheduler and selects ``best.ckpt``.  Deterministic for a fixed config
    seed when torch runs single-threaded.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records, val_records = dataset.train_val_records(cfg.seed)
    if not train_records or not val_records:
        raise ValueError("training requires non-empty train and validation clip sets")

    if model is None:
        model = build_model(NetworkConfig(), seed=cfg.seed)
    params = dict(model.named_parameters())
    opt_state = AdamState.for_model(model)
    sched = PlateauScheduler(
        cfg.lr, factor=cfg.plateau_factor, patience=cfg.plateau_patience, min_lr=cfg.min_lr
    )
    lr = cfg.lr

    result = TrainResult()
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    save_checkpoint(last_path, model, extra=checkpoint_extra)
    if cfg.epochs == 0:
        save_checkpoint(best_path, model, extra=checkpoint_extra)
        result.best_path, result.last_path = best_path, last_path
        write_epoch_log(result.epoch_log, out_dir / "train_log.csv")
        return result

    val_clips = [dataset.load(r) for r in val_records]
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        order = np.random.default_rng(cfg.seed + epoch).permutation(len(train_records))
        epoch_loss = 0.0
        n_batches = 0
        model.train()
        for b0 in range(0, len(order), cfg.batch_size):
            batch_idx = order[b0 : b0 + cfg.batch_size]
            batch = [dataset.load(train_records[i]) for i in batch_idx]
            ctx, tgt, wind, bathy = _stack_batch(batch)
            tf_rng = np.random.default_rng((cfg.seed, epoch, n_batches, 0))
            dropout_rng = np.random.default_rng((cfg.seed, epoch, n_batches, 1))
            roll_cfg = RolloutConfig(
                teacher_forcing_p=cfg.teacher_forcing_p,
                rng_seed=int(tf_rng.integers(2**31)),
            )
            states, y0 = warmup(model, ctx, dropout_rng=dropout_rng)
            preds = rollout(
                model, states, y0, wind, bathy, roll_cfg,
                targets=tgt, dropout_rng=dropout_rng,
            )
            loss = mse_loss(preds, tgt)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            grads_list = torch.autograd.grad(loss, list(params.values()))
            grads = dict(zip(params.keys(), grads_list))
            adam_step(params, grads, opt_state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            epoch_loss += float(loss.detach())
            n_batches += 1
        model.eval()

        val_loss = evaluate_clips(model, val_clips)
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / max(n_batches, 1),
            val_loss=val_loss,
            lr=lr,
            wall_seconds=time.perf_counter() - tic,
        )
        result.epoch_log.append(record)
        if log_fn:
            log_fn(record)

        save_checkpoint(last_path, model, extra=checkpoint_extra)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            save_checkpoint(best_path, model, extra=checkpoint_extra)
        lr = sched.step(val_loss)

    if not best_path.exists():
        save_checkpoint(best_path, model, extra=checkpoint_extra)
    result.best_path, result.last_path = best_path, last_path
    write_epoch_log(result.epoch_log, out_dir / "train_log.csv")
    return result
