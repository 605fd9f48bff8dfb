"""
Training the forecaster and rolling out a 24-step prediction
============================================================

A deliberately tiny run: a few synthetic storms, a narrow two-layer network,
five epochs.  Shows the training loop (Adam, plateau scheduler, teacher
forcing), checkpointing, the autoregressive rollout, and forecast metrics
against the persistence baseline.  Takes a couple of minutes on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from surgecast.clips import build_dataset
from surgecast.forecast import forecast_clip
from surgecast.metrics import frame_metrics
from surgecast.model import NetworkConfig, build_model, load_checkpoint
from surgecast.synthetic import make_storm_set
from surgecast.train import ClipDataset, TrainConfig, train_loop

root = Path(tempfile.mkdtemp())
storms = make_storm_set(8, seed=11, n_frames=60, size=24)
build_dataset(storms, root / "data", seed=5)
dataset = ClipDataset(root / "data")

cfg = TrainConfig(batch_size=3, lr=1e-3, epochs=5, teacher_forcing_p=0.5, seed=5)
model = build_model(NetworkConfig(hidden_dims=(8, 8), dropout_p=0.1), seed=5)

result = train_loop(
    dataset, cfg, root / "run", model=model,
    log_fn=lambda r: print(
        f"epoch {r.epoch}: train {r.train_loss:.4f}  val {r.val_loss:.4f}  "
        f"lr {r.lr:g}  ({r.wall_seconds:.0f}s)"
    ),
)
print(f"\nbest validation MSE: {result.best_val_loss:.4f}")
print(f"checkpoints: {result.best_path.name}, {result.last_path.name}")

# Reload the best checkpoint and forecast a held-out clip.
model, meta = load_checkpoint(result.best_path)
test_record = dataset.test_records()[0]
clip = dataset.load(test_record)
preds = forecast_clip(model, clip.context, clip.future_wind, clip.bathymetry)

persistence = clip.context[5, 0:3]
print(f"\nforecast skill on held-out clip {test_record.clip_id} (R^2 per step):")
print(" step   model   persistence")
for t in (0, 5, 11, 17, 23):
    m = frame_metrics(preds[t], clip.target[t]).r2
    p = frame_metrics(persistence, clip.target[t]).r2
    print(f"  {t + 1:3d}   {m:6.3f}   {p:6.3f}")

err = np.abs(preds - clip.target).mean()
print(f"\nmean absolute error over all 24 frames: {err:.4f} (RGB units)")
