"""Desk-scale synthetic storms for tests and demos.

Each storm is a Gaussian surge bump translating across the domain under a
storm-consistent uniform wind, amplitude-modulated in time so there is a
well-defined peak frame, over a fixed linear-ramp bathymetry.  Storms can be
produced directly as encoded frame stacks, or as a toy triangulated mesh plus
nodal series files to exercise the full ingest/raster path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clips import StormFrames
from .encode import Colormap, VariableRanges, assemble_frame
from .ingest import DEFAULT_FILL_VALUE, Mesh, write_mesh, write_sfld
from .raster import GridField


@dataclass(frozen=True)
class StormParams:
    """Kinematics of one synthetic storm."""

    start_x: float  # bump center at frame 0, grid units in [0, 1]
    start_y: float
    vel_x: float  # grid units per frame
    vel_y: float
    amplitude: float  # peak surge in meters
    sigma: float  # bump width, grid units
    peak_frame: int
    duration: float  # temporal Gaussian width, frames
    # Positive still-water offset (m) keeps encoded colors off the colormap
    # endpoints, which a logistic decoder can only approach asymptotically.
    base: float = 0.0


def sample_storm_params(rng: np.random.Generator, n_frames: int = 60) -> StormParams:
    """Track kinematics: fast enough that a frozen last frame decays within a
    few forecast steps, centered so the bump stays mostly in-domain over the
    peak window."""
    angle = rng.uniform(0.0, 2.0 * np.pi)
    speed = rng.uniform(0.018, 0.028)
    vel_x = speed * np.cos(angle)
    vel_y = speed * np.sin(angle)
    peak_frame = int(rng.integers(25, 36))
    center_jitter = rng.uniform(-0.08, 0.08, size=2)
    return StormParams(
        start_x=0.5 + center_jitter[0] - vel_x * peak_frame,
        start_y=0.5 + center_jitter[1] - vel_y * peak_frame,
        vel_x=vel_x,
        vel_y=vel_y,
        amplitude=rng.uniform(1.2, 2.2),
        sigma=rng.uniform(0.10, 0.14),
        peak_frame=peak_frame,
        duration=rng.uniform(10.0, 15.0),
    )


def ramp_bathymetry(size: int, lo: float = -5.0, hi: float = 30.0) -> np.ndarray:
    """Fixed north-to-south depth ramp in meters (rows are north-first)."""
    col = np.linspace(lo, hi, size)
    return np.broadcast_to(col[:, None], (size, size)).copy()


def storm_fields(
    params: StormParams, n_frames: int, size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical zeta/windx/windy stacks of shape (n_frames, size, size).

    The wind is uniform per frame and proportional to the bump velocity, so
    motion is recoverable from the forcing channels alone.
    """
    ys, xs = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    zeta = np.empty((n_frames, size, size), dtype=np.float64)
    windx = np.empty_like(zeta)
    windy = np.empty_like(zeta)
    # Wind speed scaled so typical storms span a good chunk of each range.
    wind_gain = 600.0
    for t in range(n_frames):
        cx = params.start_x + params.vel_x * t
        cy = params.start_y + params.vel_y * t
        envelope = np.exp(-0.5 * ((t - params.peak_frame) / params.duration) ** 2)
        bump = np.exp(-(((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * params.sigma**2)))
        zeta[t] = params.base + params.amplitude * envelope * bump
        windx[t] = wind_gain * params.vel_x * envelope
        windy[t] = wind_gain * params.vel_y * envelope
    return zeta, windx, windy


def make_storm_frames(
    storm_id: str,
    rng: np.random.Generator,
    *,
    region_id: str = "synthetic",
    n_frames: int = 60,
    size: int = 32,
    ranges: VariableRanges | None = None,
    cmap: Colormap | None = None,
    params: StormParams | None = None,
) -> StormFrames:
    """One encoded synthetic storm ready for clip extraction."""
    ranges = ranges or VariableRanges()
    cmap = cmap or Colormap.default()
    params = params or sample_storm_params(rng, n_frames)
    zeta, windx, windy = storm_fields(params, n_frames, size)
    depth = ramp_bathymetry(size)
    mask = np.ones((size, size), dtype=bool)
    frames = np.stack(
        [
            assemble_frame(
                GridField(values=zeta[t], mask=mask),
                GridField(values=windx[t], mask=mask),
                GridField(values=windy[t], mask=mask),
                GridField(values=depth, mask=mask),
                ranges,
                cmap,
            )
            for t in range(n_frames)
        ]
    )
    mean_zeta = zeta.reshape(n_frames, -1).mean(axis=1)
    return StormFrames(
        storm_id=storm_id, region_id=region_id, frames=frames, mean_zeta=mean_zeta
    )


def make_storm_set(
    n_storms: int,
    seed: int,
    *,
    n_frames: int = 60,
    size: int = 32,
) -> list[StormFrames]:
    rng = np.random.default_rng(seed)
    return [
        make_storm_frames(f"storm{k:03d}", rng, n_frames=n_frames, size=size)
        for k in range(n_storms)
    ]


# ---------------------------------------------------------------------------
# Node-space variants for exercising the ingest/raster path
# ---------------------------------------------------------------------------


def structured_mesh(n: int = 12, *, lon0: float = 0.0, lat0: float = 0.0,
                    span: float = 1.0) -> Mesh:
    """(n+1)^2-node triangulated square with the standard ramp bathymetry."""
    coords = np.linspace(0.0, span, n + 1)
    lon = np.tile(lon0 + coords, n + 1)
    lat = np.repeat(lat0 + coords, n + 1)
    tris = []
    for row in range(n):
        for col in range(n):
            a = row * (n + 1) + col
            b = a + 1
            c = a + (n + 1)
            d = c + 1
            tris.append((a, b, d))
            tris.append((a, d, c))
    # Ramp along latitude, matching ramp_bathymetry (shallow north row).
    depth = -5.0 + (lat0 + span - lat) / span * 35.0
    return Mesh(lon=lon, lat=lat, depth=depth,
                triangles=np.array(tris, dtype=np.int64), title="synthetic square")


def write_storm_inputs(
    out_dir: str | Path,
    params: StormParams,
    *,
    mesh: Mesh,
    n_frames: int = 60,
    dt_seconds: float = 7200.0,
    dry_margin: float | None = None,
) -> None:
    """Write mesh + nodal SFLD series for one storm into a directory.

    Node values are the storm fields evaluated at the node coordinates
    (mesh spans the unit square).  With ``dry_margin`` set, nodes whose zeta
    falls below it are stamped with the fill sentinel to exercise dry
    handling.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x = (mesh.lon - mesh.lon.min()) / (mesh.lon.max() - mesh.lon.min())
    y_north = mesh.lat.max() - mesh.lat  # storm fields use north-first rows
    y = y_north / (mesh.lat.max() - mesh.lat.min())
    times = np.arange(n_frames, dtype=np.float64) * dt_seconds

    zeta = np.empty((n_frames, mesh.node_count), dtype=np.float64)
    windx = np.empty_like(zeta)
    windy = np.empty_like(zeta)
    wind_gain = 600.0
    for t in range(n_frames):
        cx = params.start_x + params.vel_x * t
        cy = params.start_y + params.vel_y * t
        envelope = np.exp(-0.5 * ((t - params.peak_frame) / params.duration) ** 2)
        bump = np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * params.sigma**2)))
        zeta[t] = params.base + params.amplitude * envelope * bump
        windx[t] = wind_gain * params.vel_x * envelope
        windy[t] = wind_gain * params.vel_y * envelope
    if dry_margin is not None:
        zeta[zeta < dry_margin] = DEFAULT_FILL_VALUE

    write_mesh(mesh, out_dir / "mesh.grd")
    write_sfld(out_dir / "zeta.sfld", "zeta", times, zeta)
    write_sfld(out_dir / "windx.sfld", "windx", times, windx)
    write_sfld(out_dir / "windy.sfld", "windy", times, windy)
