"""Readers and writers for mesh and nodal time-series files.

Two on-disk formats are supported:

* an ASCII grid file describing the unstructured triangular mesh
  (title line, counts line, node lines, element lines; ids 1-based), and
* SFLD, a little-endian binary container for per-node scalar time series
  (magic ``SFLD``, f64 times, f32 values, time-major).

Loaded structures are validated once and then treated as read-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SFLD_MAGIC = b"SFLD"
SFLD_VERSION = 1
DEFAULT_FILL_VALUE = -99999.0

SERIES_VARIABLES = ("zeta", "windx", "windy")


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed or fails validation."""


class SeriesFormatError(ValueError):
    """Raised when an SFLD file cannot be parsed or fails validation."""


@dataclass(frozen=True)
class Mesh:
    """Unstructured triangular mesh: node coordinates, depths, connectivity.

    Triangle indices are 0-based internally (file format is 1-based).
    Depth is in meters, positive below datum.
    """

    lon: np.ndarray
    lat: np.ndarray
    depth: np.ndarray
    triangles: np.ndarray
    title: str = ""

    @property
    def node_count(self) -> int:
        return int(self.lon.shape[0])

    @property
    def element_count(self) -> int:
        return int(self.triangles.shape[0])

    def __post_init__(self) -> None:
        lon = np.ascontiguousarray(self.lon, dtype=np.float64)
        lat = np.ascontiguousarray(self.lat, dtype=np.float64)
        depth = np.ascontiguousarray(self.depth, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "lon", lon)
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "triangles", tris)
        _validate_mesh(self)
        for arr in (lon, lat, depth, tris):
            arr.setflags(write=False)


def _signed_areas(mesh: Mesh) -> np.ndarray:
    t = mesh.triangles
    x0, y0 = mesh.lon[t[:, 0]], mesh.lat[t[:, 0]]
    x1, y1 = mesh.lon[t[:, 1]], mesh.lat[t[:, 1]]
    x2, y2 = mesh.lon[t[:, 2]], mesh.lat[t[:, 2]]
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def _validate_mesh(mesh: Mesh) -> None:
    n = mesh.node_count
    if n < 3:
        raise MeshFormatError(f"mesh needs at least 3 nodes, got {n}")
    if mesh.element_count < 1:
        raise MeshFormatError("mesh needs at least 1 element")
    if mesh.lat.shape != (n,) or mesh.depth.shape != (n,):
        raise MeshFormatError("node array lengths disagree")
    if mesh.triangles.ndim != 2 or mesh.triangles.shape[1] != 3:
        raise MeshFormatError("triangles must have shape (m, 3)")
    bad = (mesh.triangles < 0) | (mesh.triangles >= n)
    if bad.any():
        ids = np.nonzero(bad.any(axis=1))[0] + 1
        raise MeshFormatError(
            f"triangle node index out of range [0, {n}) in element(s) "
            f"{', '.join(str(i) for i in ids[:20])}"
        )
    extent = max(
        float(mesh.lon.max() - mesh.lon.min()),
        float(mesh.lat.max() - mesh.lat.min()),
        1.0,
    )
    areas = _signed_areas(mesh)
    degenerate = np.abs(areas) <= 1e-12 * extent * extent
    if degenerate.any():
        ids = np.nonzero(degenerate)[0] + 1
        raise MeshFormatError(
            "degenerate (zero-area) element(s): "
            + ", ".join(str(i) for i in ids[:20])
        )


def load_mesh(path: str | Path) -> Mesh:
    """Parse an ASCII grid file into a validated :class:`Mesh`.

    Layout: line 1 free-text title; line 2 ``<element_count> <node_count>``;
    then one line per node ``<id> <lon> <lat> <depth>``; then one line per
    element ``<id> 3 <n1> <n2> <n3>``. Ids are 1-based and consecutive.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise MeshFormatError(f"{path}: file too short (no counts line)")
    title = lines[0].rstrip()

    def fail(lineno: int, msg: str) -> MeshFormatError:
        return MeshFormatError(f"{path}:{lineno}: {msg}")

    counts = lines[1].split()
    if len(counts) < 2:
        raise fail(2, "expected '<element_count> <node_count>'")
    try:
        element_count, node_count = int(counts[0]), int(counts[1])
    except ValueError:
        raise fail(2, f"bad counts line: {lines[1]!r}") from None

    expected = 2 + node_count + element_count
    if len(lines) < expected:
        raise MeshFormatError(
            f"{path}: expected {expected} lines "
            f"({node_count} nodes + {element_count} elements), got {len(lines)}"
        )

    lon = np.empty(node_count, dtype=np.float64)
    lat = np.empty(node_count, dtype=np.float64)
    depth = np.empty(node_count, dtype=np.float64)
    for k in range(node_count):
        lineno = 3 + k
        parts = lines[2 + k].split()
        if len(parts) < 4:
            raise fail(lineno, "node line needs '<id> <lon> <lat> <depth>'")
        try:
            nid = int(parts[0])
            lon[k], lat[k], depth[k] = (float(p) for p in parts[1:4])
        except ValueError:
            raise fail(lineno, f"bad node line: {lines[2 + k]!r}") from None
        if nid != k + 1:
            raise fail(lineno, f"node ids must be consecutive; expected {k + 1}, got {nid}")

    triangles = np.empty((element_count, 3), dtype=np.int64)
    for k in range(element_count):
        lineno = 3 + node_count + k
        parts = lines[2 + node_count + k].split()
        if len(parts) < 5:
            raise fail(lineno, "element line needs '<id> 3 <n1> <n2> <n3>'")
        try:
            eid = int(parts[0])
            nvert = int(parts[1])
            verts = [int(p) for p in parts[2:5]]
        except ValueError:
            raise fail(lineno, f"bad element line: {lines[2 + node_count + k]!r}") from None
        if eid != k + 1:
            raise fail(lineno, f"element ids must be consecutive; expected {k + 1}, got {eid}")
        if nvert != 3:
            raise fail(lineno, f"only 3-node triangles supported, got {nvert}")
        for v in verts:
            if v < 1 or v > node_count:
                raise fail(lineno, f"node index {v} out of range [1, {node_count}] in element {eid}")
        triangles[k] = [v - 1 for v in verts]

    return Mesh(lon=lon, lat=lat, depth=depth, triangles=triangles, title=title)


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    """Serialize a mesh back to the ASCII grid layout (1-based ids).

    Floats are written with shortest round-trip precision so a load of the
    output reproduces every numeric field bit-exactly.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.title or 'mesh'}\n")
        fh.write(f"{mesh.element_count} {mesh.node_count}\n")
        for k in range(mesh.node_count):
            fh.write(
                f"{k + 1} {float(mesh.lon[k])!r} {float(mesh.lat[k])!r} "
                f"{float(mesh.depth[k])!r}\n"
            )
        for k in range(mesh.element_count):
            a, b, c = (int(v) + 1 for v in mesh.triangles[k])
            fh.write(f"{k + 1} 3 {a} {b} {c}\n")


@dataclass(frozen=True)
class NodalSeries:
    """Per-node scalar field over time for one variable.

    ``values`` is time-major with shape (n_times, n_nodes); entries equal to
    ``fill_value`` mark dry/missing nodes and are preserved verbatim.
    """

    variable: str
    times: np.ndarray
    values: np.ndarray
    fill_value: float = DEFAULT_FILL_VALUE

    @property
    def n_times(self) -> int:
        return int(self.times.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.values.shape[1])

    def __post_init__(self) -> None:
        times = np.ascontiguousarray(self.times, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.variable not in SERIES_VARIABLES:
            raise SeriesFormatError(
                f"unknown series variable {self.variable!r}; expected one of {SERIES_VARIABLES}"
            )
        if values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise SeriesFormatError(
                f"values shape {values.shape} does not match {times.shape[0]} times"
            )
        if times.shape[0] >= 2 and not np.all(np.diff(times) > 0):
            raise SeriesFormatError("times must be strictly increasing")
        wet = values != np.float32(self.fill_value)
        if not np.isfinite(values[wet]).all():
            raise SeriesFormatError("non-fill values must be finite")
        times.setflags(write=False)
        values.setflags(write=False)

    def wet_mask(self) -> np.ndarray:
        """Boolean (n_times, n_nodes) mask, True where the node is wet."""
        return self.values != np.float32(self.fill_value)


def write_sfld(
    path: str | Path,
    variable: str,
    times: np.ndarray,
    values: np.ndarray,
    fill_value: float = DEFAULT_FILL_VALUE,
) -> None:
    """Write one scalar field series to an SFLD binary file.

    Layout (little-endian): magic ``SFLD``, version u32, name length u16 +
    UTF-8 name, n_times u64, n_nodes u64, fill_value f64, times f64[],
    values f32[] time-major.
    """
    times = np.ascontiguousarray(times, dtype="<f8")
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2 or values.shape[0] != times.shape[0]:
        raise SeriesFormatError(
            f"values shape {values.shape} does not match {times.shape[0]} times"
        )
    name = variable.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SFLD_MAGIC)
        fh.write(struct.pack("<I", SFLD_VERSION))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<QQd", times.shape[0], values.shape[1], float(fill_value)))
        fh.write(times.tobytes())
        fh.write(values.tobytes())


def read_sfld(path: str | Path) -> tuple[str, np.ndarray, np.ndarray, float]:
    """Read an SFLD file; returns (variable, times, values, fill_value)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SFLD_MAGIC:
            raise SeriesFormatError(f"{path}: bad magic {magic!r}, expected {SFLD_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SFLD_VERSION:
            raise SeriesFormatError(f"{path}: unsupported version {version}")
        (name_len,) = struct.unpack("<H", fh.read(2))
        variable = fh.read(name_len).decode("utf-8")
        n_times, n_nodes, fill_value = struct.unpack("<QQd", fh.read(24))
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8")
        if times.shape[0] != n_times:
            raise SeriesFormatError(f"{path}: truncated times block")
        raw = fh.read(4 * n_times * n_nodes)
        values = np.frombuffer(raw, dtype="<f4")
        if values.shape[0] != n_times * n_nodes:
            raise SeriesFormatError(f"{path}: truncated values block")
    return variable, times.copy(), values.reshape(n_times, n_nodes).copy(), fill_value


def load_series(path: str | Path, mesh: Mesh) -> NodalSeries:
    """Read an SFLD file and validate it against a mesh's node count."""
    variable, times, values, fill_value = read_sfld(path)
    if values.shape[1] != mesh.node_count:
        raise SeriesFormatError(
            f"{path}: series has {values.shape[1]} nodes, mesh has {mesh.node_count}"
        )
    return NodalSeries(variable=variable, times=times, values=values, fill_value=fill_value)


def write_series(series: NodalSeries, path: str | Path) -> None:
    """Write a :class:`NodalSeries` to an SFLD file (round-trips exactly)."""
    write_sfld(path, series.variable, series.times, series.values, series.fill_value)
