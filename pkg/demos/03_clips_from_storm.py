"""
From storm frame stacks to a training clip dataset
==================================================

A storm's 60 frames are cut down to the 41 frames around its surge peak, then
a stride-1 sliding window produces 30-frame clips: 6 context frames plus 24
forecast targets with aligned wind forcing.  Splits happen at the storm level
so no storm leaks across partitions.
"""

import tempfile
from pathlib import Path

import numpy as np

from surgecast.clips import build_dataset, event_window, find_peak_frame
from surgecast.synthetic import make_storm_set
from surgecast.train import ClipDataset

storms = make_storm_set(8, seed=42, n_frames=60, size=32)

storm = storms[0]
peak = find_peak_frame(storm.mean_zeta)
window = event_window(peak, len(storm.mean_zeta))
print(f"storm {storm.storm_id}: peak frame {peak}, window {window}, "
      f"{window[1] - window[0] + 1} frames -> {window[1] - window[0] + 1 - 29} clips")

out_dir = Path(tempfile.mkdtemp()) / "clips"
index = build_dataset(storms, out_dir, seed=3)
print(f"\ndataset: {len(index.records)} clips at {index.height}x{index.width}")
print(f"train storms: {index.split.train_storms}")
print(f"test storms:  {index.split.test_storms}")

# Lazy loading: clips are read from disk per batch; bathymetry is cached
# per region after the first read.
dataset = ClipDataset(out_dir)
clip = dataset.load(dataset.records[0])
print(f"\nfirst clip: context {clip.context.shape}, target {clip.target.shape}, "
      f"wind {clip.future_wind.shape}, bathymetry {clip.bathymetry.shape}")
assert clip.target.min() >= 0.0 and clip.target.max() <= 1.0

# The target frames are exactly the elevation-RGB channels of the source.
mean_target = np.mean(clip.target, axis=(1, 2, 3))
print(f"per-step mean target intensity: {mean_target[:5].round(3)} ...")
