"""Peak-centered clip extraction and leakage-free storm-level splits.

A storm's frame sequence is cut down to a window around its surge peak, then
a stride-1 sliding window produces fixed-length clips of 6 context frames and
24 forecast targets with aligned wind forcing.  Splits are drawn at the storm
level so no storm contributes clips to both partitions, and the clip dataset
is persisted as one SCLP binary per clip plus a JSON index.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encode import validate_channel_frame

SCLP_MAGIC = b"SCLP"
SCLP_VERSION = 1

CONTEXT_LEN = 6
HORIZON = 24
CLIP_LEN = CONTEXT_LEN + HORIZON

HALF_WINDOW = 20  # event window spans [N - 20, N + 20] around the peak frame


class ClipFormatError(ValueError):
    """Raised when an SCLP file or dataset index is malformed."""


@dataclass(frozen=True)
class StormFrames:
    """Time-ordered 6-channel frames for one storm in one region.

    ``mean_zeta`` is the per-frame mean of the physical elevation field over
    sampled wet nodes, used only to locate the surge peak.
    """

    storm_id: str
    region_id: str
    frames: np.ndarray  # (T, 6, H, W) float32
    mean_zeta: np.ndarray  # (T,)

    def __post_init__(self) -> None:
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        mean_zeta = np.ascontiguousarray(self.mean_zeta, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "mean_zeta", mean_zeta)
        if frames.ndim != 4 or frames.shape[0] == 0 or frames.shape[1] != 6:
            raise ValueError(f"frames must be (T>=1, 6, H, W), got {frames.shape}")
        if mean_zeta.shape != (frames.shape[0],):
            raise ValueError("mean_zeta length must equal the number of frames")


@dataclass(frozen=True)
class Clip:
    """One training sample: context, RGB targets, future wind, bathymetry."""

    storm_id: str
    region_id: str
    context: np.ndarray  # (6, 6, H, W) float32
    target: np.ndarray  # (24, 3, H, W) float32
    future_wind: np.ndarray  # (24, 2, H, W) float32
    bathymetry: np.ndarray  # (1, H, W) float32

    def __post_init__(self) -> None:
        if self.context.shape[:2] != (CONTEXT_LEN, 6):
            raise ValueError(f"context must be ({CONTEXT_LEN}, 6, H, W), got {self.context.shape}")
        hw = self.context.shape[2:]
        if self.target.shape != (HORIZON, 3) + hw:
            raise ValueError(f"target must be ({HORIZON}, 3, {hw[0]}, {hw[1]})")
        if self.future_wind.shape != (HORIZON, 2) + hw:
            raise ValueError(f"future_wind must be ({HORIZON}, 2, {hw[0]}, {hw[1]})")
        if self.bathymetry.shape != (1,) + hw:
            raise ValueError(f"bathymetry must be (1, {hw[0]}, {hw[1]})")
        if self.target.min() < 0.0 or self.target.max() > 1.0:
            raise ValueError("target values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return int(self.context.shape[2])

    @property
    def width(self) -> int:
        return int(self.context.shape[3])


@dataclass(frozen=True)
class SplitManifest:
    """Disjoint storm-level train/test partition, reproducible from its seed."""

    seed: int
    train_storms: tuple[str, ...]
    test_storms: tuple[str, ...]

    def __post_init__(self) -> None:
        train, test = set(self.train_storms), set(self.test_storms)
        if train & test:
            raise ValueError(f"storms in both partitions: {sorted(train & test)}")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_storms": list(self.train_storms),
            "test_storms": list(self.test_storms),
        }


def find_peak_frame(mean_zeta) -> int:
    """Index of the maximum mean elevation; ties go to the earliest frame."""
    arr = np.asarray(mean_zeta, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot find the peak of an empty series")
    return int(np.argmax(arr))


def event_window(peak: int, n_frames: int) -> tuple[int, int]:
    """Inclusive frame range [peak - 20, peak + 20], truncated to bounds."""
    if not 0 <= peak < n_frames:
        raise ValueError(f"peak {peak} outside [0, {n_frames})")
    return max(0, peak - HALF_WINDOW), min(n_frames - 1, peak + HALF_WINDOW)


def slide_windows(
    frames: np.ndarray,
    *,
    storm_id: str,
    region_id: str,
) -> list[Clip]:
    """Cut a window of frames into stride-1 clips of 30 frames each.

    The first 6 frames of each clip are the full-channel context; the last 24
    contribute the elevation-RGB targets and the aligned wind channels.
    Windows shorter than 30 frames produce no clips.
    """
    frames = np.asarray(frames, dtype=np.float32)
    n = frames.shape[0]
    if n < CLIP_LEN:
        return []
    bathymetry = frames[0, 5:6].copy()  # static channel, identical across frames
    clips = []
    for start in range(n - CLIP_LEN + 1):
        block = frames[start : start + CLIP_LEN]
        clips.append(
            Clip(
                storm_id=storm_id,
                region_id=region_id,
                context=block[:CONTEXT_LEN].copy(),
                target=block[CONTEXT_LEN:, 0:3].copy(),
                future_wind=block[CONTEXT_LEN:, 3:5].copy(),
                bathymetry=bathymetry,
            )
        )
    return clips


def storm_clips(storm: StormFrames) -> tuple[list[Clip], tuple[int, int]]:
    """Clips for one storm: peak detection, event windowing, then sliding."""
    for t in range(storm.frames.shape[0]):
        validate_channel_frame(storm.frames[t])
    peak = find_peak_frame(storm.mean_zeta)
    start, end = event_window(peak, storm.frames.shape[0])
    clips = slide_windows(
        storm.frames[start : end + 1],
        storm_id=storm.storm_id,
        region_id=storm.region_id,
    )
    return clips, (start, end)


def split_storms(storm_ids, seed: int, test_fraction: float = 0.10) -> SplitManifest:
    """Randomly assign storms to train/test at the storm level.

    Test size is round(n * test_fraction) with a floor of one storm; the
    shuffle is a deterministic function of the seed.
    """
    ids = sorted(set(str(s) for s in storm_ids))
    if len(ids) < 2:
        raise ValueError(f"need at least 2 storms to split, got {len(ids)}")
    n_test = max(1, int(np.floor(len(ids) * test_fraction + 0.5)))
    order = np.random.default_rng(seed).permutation(len(ids))
    test = tuple(ids[i] for i in sorted(order[:n_test]))
    train = tuple(ids[i] for i in sorted(order[n_test:]))
    return SplitManifest(seed=seed, train_storms=train, test_storms=test)


def split_train_val(
    train_storms, seed: int, val_fraction: float = 0.10
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Carve validation storms out of the training partition, seeded.

    With a single training storm the same storm serves both roles (degenerate
    but keeps tiny synthetic runs usable).
    """
    ids = sorted(set(str(s) for s in train_storms))
    if not ids:
        raise ValueError("no training storms to split")
    if len(ids) == 1:
        return tuple(ids), tuple(ids)
    n_val = max(1, int(np.floor(len(ids) * val_fraction + 0.5)))
    order = np.random.default_rng(seed).permutation(len(ids))
    val = tuple(ids[i] for i in sorted(order[:n_val]))
    train = tuple(ids[i] for i in sorted(order[n_val:]))
    return train, val


# ---------------------------------------------------------------------------
# On-disk clip dataset
# ---------------------------------------------------------------------------


def write_clip(clip: Clip, path: str | Path) -> None:
    """Write one clip as an SCLP binary (little-endian, f32 payload)."""
    with open(path, "wb") as fh:
        fh.write(SCLP_MAGIC)
        fh.write(struct.pack("<III", SCLP_VERSION, clip.height, clip.width))
        for block in (clip.context, clip.target, clip.future_wind, clip.bathymetry):
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def read_clip(path: str | Path, *, storm_id: str = "", region_id: str = "") -> Clip:
    """Read an SCLP binary back into a :class:`Clip`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SCLP_MAGIC:
            raise ClipFormatError(f"{path}: bad magic {magic!r}, expected {SCLP_MAGIC!r}")
        version, h, w = struct.unpack("<III", fh.read(12))
        if version != SCLP_VERSION:
            raise ClipFormatError(f"{path}: unsupported version {version}")
        shapes = (
            (CONTEXT_LEN, 6, h, w),
            (HORIZON, 3, h, w),
            (HORIZON, 2, h, w),
            (1, h, w),
        )
        blocks = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            arr = np.frombuffer(raw, dtype="<f4")
            if arr.shape[0] != count:
                raise ClipFormatError(f"{path}: truncated block, expected {count} floats")
            blocks.append(arr.reshape(shape).copy())
    return Clip(
        storm_id=storm_id,
        region_id=region_id,
        context=blocks[0],
        target=blocks[1],
        future_wind=blocks[2],
        bathymetry=blocks[3],
    )


@dataclass(frozen=True)
class ClipRecord:
    """Index entry locating one clip inside the dataset directory."""

    clip_id: str
    storm_id: str
    region_id: str
    file: str
    frame_start: int
    frame_end: int


@dataclass
class ClipDatasetIndex:
    """In-memory view of a dataset directory's ``index.json``.

    ``ranges`` and ``colormap`` record the encoding used when the dataset was
    built so downstream checkpoints can embed them.
    """

    height: int
    width: int
    split: SplitManifest
    records: list[ClipRecord] = field(default_factory=list)
    ranges: dict | None = None
    colormap: list | None = None

    def records_for(self, storms) -> list[ClipRecord]:
        wanted = set(storms)
        return [r for r in self.records if r.storm_id in wanted]


def build_dataset(
    storms: list[StormFrames],
    out_dir: str | Path,
    *,
    seed: int,
    test_fraction: float = 0.10,
    ranges: dict | None = None,
    colormap: list | None = None,
) -> ClipDatasetIndex:
    """Slice storms into clips, split them, and persist everything.

    Produces ``<out_dir>/index.json`` plus one ``.sclp`` file per clip.
    Deterministic for a fixed seed and input order-insensitive (storms are
    processed in sorted id order).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = split_storms([s.storm_id for s in storms], seed, test_fraction)

    hw = None
    records: list[ClipRecord] = []
    for storm in sorted(storms, key=lambda s: s.storm_id):
        clips, (start, _end) = storm_clips(storm)
        for k, clip in enumerate(clips):
            if hw is None:
                hw = (clip.height, clip.width)
            elif hw != (clip.height, clip.width):
                raise ValueError("all storms in a dataset must share one raster size")
            clip_id = f"{storm.storm_id}_{start + k:03d}"
            fname = f"{clip_id}.sclp"
            write_clip(clip, out_dir / fname)
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    storm_id=storm.storm_id,
                    region_id=storm.region_id,
                    file=fname,
                    frame_start=start + k,
                    frame_end=start + k + CLIP_LEN - 1,
                )
            )
    if hw is None:
        raise ValueError("no storm produced any clip (all windows shorter than 30 frames)")

    index = ClipDatasetIndex(
        height=hw[0], width=hw[1], split=split, records=records,
        ranges=ranges, colormap=colormap,
    )
    write_index(index, out_dir / "index.json")
    return index


def write_index(index: ClipDatasetIndex, path: str | Path) -> None:
    doc = {
        "height": index.height,
        "width": index.width,
        "split": index.split.as_dict(),
        "ranges": index.ranges,
        "colormap": index.colormap,
        "clips": [
            {
                "clip_id": r.clip_id,
                "storm_id": r.storm_id,
                "region_id": r.region_id,
                "file": r.file,
                "frame_start": r.frame_start,
                "frame_end": r.frame_end,
            }
            for r in index.records
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_index(path: str | Path) -> ClipDatasetIndex:
    path = Path(path)
    if path.is_dir():
        path = path / "index.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ClipFormatError(f"cannot read dataset index {path}: {exc}") from exc
    split = SplitManifest(
        seed=int(doc["split"]["seed"]),
        train_storms=tuple(doc["split"]["train_storms"]),
        test_storms=tuple(doc["split"]["test_storms"]),
    )
    records = [
        ClipRecord(
            clip_id=c["clip_id"],
            storm_id=c["storm_id"],
            region_id=c["region_id"],
            file=c["file"],
            frame_start=int(c["frame_start"]),
            frame_end=int(c["frame_end"]),
        )
        for c in doc["clips"]
    ]
    return ClipDatasetIndex(
        height=int(doc["height"]),
        width=int(doc["width"]),
        split=split,
        records=records,
        ranges=doc.get("ranges"),
        colormap=doc.get("colormap"),
    )
