"""Normalization of physical fields and the invertible RGB elevation encoding.

Physical values are clamp-scaled to [0, 1] per variable range, and the
elevation channel is pushed through a piecewise-linear RGB colormap.  The
colormap is validated to be injective at construction so that the nearest
point on its polyline defines a usable decode, including for off-curve colors
produced by a model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import GridField

CHANNELS = ("zeta_r", "zeta_g", "zeta_b", "windx", "windy", "depth")

# Control points (t, r, g, b) of the default elevation colormap: a jet-like
# ramp from deep blue through green to dark red, fixed for reproducibility.
DEFAULT_COLORMAP_TABLE = (
    (0.00, 0.0, 0.00, 0.5),
    (0.25, 0.0, 0.75, 1.0),
    (0.50, 0.5, 1.00, 0.5),
    (0.75, 1.0, 0.75, 0.0),
    (1.00, 0.5, 0.00, 0.0),
)


@dataclass(frozen=True)
class ValueRange:
    """Physical range mapped linearly onto [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"range needs lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class VariableRanges:
    """Per-variable normalization ranges (meters for zeta/depth, m/s for wind)."""

    zeta: ValueRange = field(default_factory=lambda: ValueRange(0.0, 2.5))
    windx: ValueRange = field(default_factory=lambda: ValueRange(-40.0, 20.0))
    windy: ValueRange = field(default_factory=lambda: ValueRange(-30.0, 30.0))
    depth: ValueRange = field(default_factory=lambda: ValueRange(-20.0, 50.0))

    def as_dict(self) -> dict[str, list[float]]:
        return {
            name: [getattr(self, name).lo, getattr(self, name).hi]
            for name in ("zeta", "windx", "windy", "depth")
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariableRanges":
        return cls(**{k: ValueRange(float(v[0]), float(v[1])) for k, v in d.items()})


def clamp_scale(value, rng: ValueRange):
    """Map physical values into [0, 1]: (v - lo) / (hi - lo), clamped.

    Accepts scalars or arrays; rejects non-finite input.
    """
    arr = np.asarray(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("clamp_scale requires finite input")
    u = np.clip((arr - rng.lo) / (rng.hi - rng.lo), 0.0, 1.0)
    return float(u) if np.isscalar(value) or arr.ndim == 0 else u


def _segment_min_distance(p0, p1, q0, q1) -> float:
    """Minimum Euclidean distance between two non-degenerate 3-D segments."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e = float(d1 @ d1), float(d2 @ d2)
    b, c, f = float(d1 @ d2), float(d1 @ r), float(d2 @ r)
    denom = a * e - b * b
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-18 else 0.0
    u = (b * s + f) / e
    if u < 0.0:
        u, s = 0.0, float(np.clip(-c / a, 0.0, 1.0))
    elif u > 1.0:
        u, s = 1.0, float(np.clip((b - c) / a, 0.0, 1.0))
    return float(np.linalg.norm((p0 + s * d1) - (q0 + u * d2)))


class ColormapError(ValueError):
    """Raised when a colormap table violates its invariants."""


class Colormap:
    """Piecewise-linear, injective polyline through RGB space.

    ``points`` is an (n, 4) array of rows (t, r, g, b) with t strictly
    increasing from 0 to 1 and every channel in [0, 1].
    """

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4 or pts.shape[0] < 2:
            raise ColormapError("colormap needs an (n>=2, 4) table of (t, r, g, b) rows")
        t = pts[:, 0]
        if t[0] != 0.0 or t[-1] != 1.0 or not np.all(np.diff(t) > 0):
            raise ColormapError("t values must increase strictly from 0 to 1")
        rgb = pts[:, 1:]
        if rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ColormapError("colors must lie in [0, 1]")
        self._validate_injective(t, rgb)
        self.points = pts
        self.points.setflags(write=False)

    @staticmethod
    def _validate_injective(t: np.ndarray, rgb: np.ndarray) -> None:
        seg = np.diff(rgb, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        if np.any(lengths < 1e-12):
            raise ColormapError("colormap has a zero-length segment (repeated color)")
        n = seg.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1:
                    # Adjacent segments share a point; folding straight back
                    # would retrace colors.
                    cos = float(seg[i] @ seg[j]) / (lengths[i] * lengths[j])
                    if cos <= -1.0 + 1e-12:
                        raise ColormapError(
                            f"colormap doubles back on itself at control point {j}"
                        )
                    continue
                d = _segment_min_distance(rgb[i], rgb[i + 1], rgb[j], rgb[j + 1])
                if d < 1e-9:
                    raise ColormapError(
                        f"colormap is not injective: segments {i} and {j} touch"
                    )

    @classmethod
    def default(cls) -> "Colormap":
        return cls(DEFAULT_COLORMAP_TABLE)

    @classmethod
    def from_table_file(cls, path: str | Path) -> "Colormap":
        """Load control points from a text table with ``t r g b`` per line."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 4:
                raise ColormapError(f"{path}:{lineno}: expected 't r g b', got {line!r}")
            rows.append([float(p) for p in parts])
        return cls(rows)

    def encode(self, u):
        """Map unit scalars to RGB by linear interpolation between controls."""
        arr = np.asarray(u, dtype=np.float64)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("encode input must lie in [0, 1]")
        t = self.points[:, 0]
        out = np.stack(
            [np.interp(arr, t, self.points[:, 1 + c]) for c in range(3)], axis=-1
        )
        return out

    def decode(self, rgb):
        """Map colors back to t via the closest point on the polyline.

        Arbitrary colors are accepted (model outputs are rarely exactly on the
        curve); ties break toward the smaller t.
        """
        arr = np.asarray(rgb, dtype=np.float64)
        flat = arr.reshape(-1, 3)
        t = self.points[:, 0]
        p = self.points[:, 1:]
        seg = np.diff(p, axis=0)  # (n-1, 3)
        seglen2 = np.einsum("ij,ij->i", seg, seg)
        # Project every query onto every segment, clamped to its extent.
        d0 = flat[:, None, :] - p[None, :-1, :]  # (q, n-1, 3)
        s = np.clip(np.einsum("qij,ij->qi", d0, seg) / seglen2, 0.0, 1.0)
        closest = p[None, :-1, :] + s[..., None] * seg[None, :, :]
        dist2 = np.einsum("qij,qij->qi", flat[:, None, :] - closest, flat[:, None, :] - closest)
        best = np.argmin(dist2, axis=1)  # first (= smallest t) on exact ties
        q = np.arange(flat.shape[0])
        out = t[best] + s[q, best] * (t[best + 1] - t[best])
        return out.reshape(arr.shape[:-1]) if arr.ndim > 1 else float(out[0])


def assemble_frame(
    zeta: GridField,
    windx: GridField,
    windy: GridField,
    depth: GridField,
    ranges: VariableRanges,
    cmap: Colormap,
) -> np.ndarray:
    """Build one 6-channel model input frame, every entry in [0, 1].

    Channel order is fixed: zeta as RGB through the colormap, then wind x,
    wind y, and bathymetry as grayscale clamp-scaled channels.
    """
    shape = zeta.values.shape
    for name, g in (("windx", windx), ("windy", windy), ("depth", depth)):
        if g.values.shape != shape:
            raise ValueError(f"{name} grid is {g.values.shape}, zeta grid is {shape}")
    u = clamp_scale(zeta.values, ranges.zeta)
    rgb = cmap.encode(u)  # (H, W, 3)
    frame = np.empty((6,) + shape, dtype=np.float32)
    frame[0] = rgb[:, :, 0]
    frame[1] = rgb[:, :, 1]
    frame[2] = rgb[:, :, 2]
    frame[3] = clamp_scale(windx.values, ranges.windx)
    frame[4] = clamp_scale(windy.values, ranges.windy)
    frame[5] = clamp_scale(depth.values, ranges.depth)
    return frame


def validate_channel_frame(frame: np.ndarray) -> None:
    """Assert the 6-channel frame contract: shape (6, H, W), entries in [0, 1]."""
    if frame.ndim != 3 or frame.shape[0] != 6:
        raise ValueError(f"expected (6, H, W) frame, got {frame.shape}")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frame entries must lie in [0, 1]")


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    """Quantize unit-range colors to 8-bit: round(v * 255), clamped."""
    return np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
