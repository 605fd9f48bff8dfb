"""surgecast: storm-surge surrogate forecasting on rasterized coastal grids.

The pipeline turns unstructured coastal-model output into fixed-size
multi-channel image sequences (mesh ingest, barycentric rasterization, RGB
elevation encoding, peak-centered clip extraction) and trains a stacked
convolutional-recurrent network to forecast the elevation field 24 steps
ahead, conditioned on known wind forcing and static bathymetry.
"""

__version__ = "0.1.0"

from .clips import (
    Clip,
    SplitManifest,
    StormFrames,
    build_dataset,
    event_window,
    find_peak_frame,
    slide_windows,
    split_storms,
)
from .encode import Colormap, ValueRange, VariableRanges, assemble_frame, clamp_scale
from .forecast import RolloutConfig, forecast_clip, rollout, warmup
from .ingest import Mesh, NodalSeries, load_mesh, load_series, write_mesh, write_series
from .metrics import BoxSummary, FrameMetrics, box_summary, frame_metrics
from .model import (
    ConvLSTMCell,
    NetworkConfig,
    SurgeForecastNet,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .raster import GridField, RasterIndex, Roi, build_index, rasterize
from .train import AdamState, PlateauScheduler, TrainConfig, adam_step, train_loop

__all__ = [
    "__version__",
    "Clip",
    "SplitManifest",
    "StormFrames",
    "build_dataset",
    "event_window",
    "find_peak_frame",
    "slide_windows",
    "split_storms",
    "Colormap",
    "ValueRange",
    "VariableRanges",
    "assemble_frame",
    "clamp_scale",
    "RolloutConfig",
    "forecast_clip",
    "rollout",
    "warmup",
    "Mesh",
    "NodalSeries",
    "load_mesh",
    "load_series",
    "write_mesh",
    "write_series",
    "BoxSummary",
    "FrameMetrics",
    "box_summary",
    "frame_metrics",
    "ConvLSTMCell",
    "NetworkConfig",
    "SurgeForecastNet",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "GridField",
    "RasterIndex",
    "Roi",
    "build_index",
    "rasterize",
    "AdamState",
    "PlateauScheduler",
    "TrainConfig",
    "adam_step",
    "train_loop",
]
