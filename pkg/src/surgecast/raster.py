"""Projection of per-node fields onto uniform pixel grids.

Each pixel center inside a region of interest is assigned the triangle that
covers it (lowest element id on ties) together with barycentric weights, so
node fields rasterize by convex interpolation over triangle vertices.  Index
construction bins triangles by bounding box, giving expected
O(pixels + triangles) cost; :func:`build_index_exhaustive` keeps the naive
all-triangles scan available as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Mesh, NodalSeries

MISS = -1

# A pixel counts as covered when every barycentric weight clears this floor;
# slightly negative values admit points sitting exactly on edges/vertices.
WEIGHT_FLOOR = -1e-12


@dataclass(frozen=True)
class Roi:
    """Geographic bounding box and output raster size."""

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError("ROI bounds must satisfy lon_min < lon_max and lat_min < lat_max")
        if self.width < 2 or self.height < 2:
            raise ValueError("ROI raster must be at least 2x2 pixels")

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(lon, lat) arrays of shape (height, width) at pixel centers.

        Row 0 is the northern edge; pixel (i, j) is sampled at its center.
        """
        j = np.arange(self.width, dtype=np.float64)
        i = np.arange(self.height, dtype=np.float64)
        lon = self.lon_min + (j + 0.5) * (self.lon_max - self.lon_min) / self.width
        lat = self.lat_max - (i + 0.5) * (self.lat_max - self.lat_min) / self.height
        return np.broadcast_to(lon, (self.height, self.width)).copy(), np.broadcast_to(
            lat[:, None], (self.height, self.width)
        ).copy()


@dataclass(frozen=True)
class RasterIndex:
    """Per-pixel covering triangle (``MISS`` if none) and barycentric weights."""

    width: int
    height: int
    node_count: int
    triangle: np.ndarray  # (H, W) int64, MISS where uncovered
    weights: np.ndarray  # (H, W, 3) float64
    corners: np.ndarray  # (H, W, 3) int64 node ids of the covering triangle

    def covered(self) -> np.ndarray:
        return self.triangle != MISS


@dataclass(frozen=True)
class GridField:
    """One rasterized frame: values plus a covered-and-wet mask."""

    values: np.ndarray  # (H, W) float64
    mask: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


def _barycentric(px, py, x0, y0, x1, y1, x2, y2):
    """Barycentric weights of point(s) (px, py) w.r.t. triangle vertices.

    Weights are signed-area ratios; they sum to 1 up to rounding for any
    non-degenerate triangle, inside or outside.
    """
    denom = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / denom
    w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / denom
    w2 = ((x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)) / denom
    return w0, w1, w2


def build_index_exhaustive(mesh: Mesh, roi: Roi) -> RasterIndex:
    """Classify every pixel by scanning all triangles (test oracle).

    Quadratic in pixels x triangles; behaviour is identical to
    :func:`build_index` by construction of the shared coverage predicate.
    """
    lon, lat = roi.pixel_centers()
    tris = mesh.triangles
    x = mesh.lon[tris]  # (m, 3)
    y = mesh.lat[tris]

    tri_out = np.full((roi.height, roi.width), MISS, dtype=np.int64)
    w_out = np.zeros((roi.height, roi.width, 3), dtype=np.float64)
    for i in range(roi.height):
        for j in range(roi.width):
            px, py = lon[i, j], lat[i, j]
            w0, w1, w2 = _barycentric(
                px, py, x[:, 0], y[:, 0], x[:, 1], y[:, 1], x[:, 2], y[:, 2]
            )
            inside = (w0 >= WEIGHT_FLOOR) & (w1 >= WEIGHT_FLOOR) & (w2 >= WEIGHT_FLOOR)
            hits = np.nonzero(inside)[0]
            if hits.size:
                t = int(hits[0])
                tri_out[i, j] = t
                w_out[i, j] = (w0[t], w1[t], w2[t])
    corners = np.where(tri_out[:, :, None] != MISS, tris[tri_out], 0)
    return RasterIndex(
        width=roi.width,
        height=roi.height,
        node_count=mesh.node_count,
        triangle=tri_out,
        weights=w_out,
        corners=corners,
    )


def build_index(mesh: Mesh, roi: Roi) -> RasterIndex:
    """Classify every pixel center against the mesh via bbox binning.

    Triangles are binned by bounding box on a uniform grid over the ROI, so
    each pixel only tests the candidates in its bin, lowest element id first.
    A pixel covered by no triangle is ``MISS``; an ROI disjoint from the mesh
    yields an all-``MISS`` index rather than an error.
    """
    lon, lat = roi.pixel_centers()
    tris = mesh.triangles
    tx = mesh.lon[tris]
    ty = mesh.lat[tris]

    # ~1 triangle per bin on average keeps candidate lists short without
    # blowing up insertion cost for large elements.
    nbins = max(1, int(np.sqrt(mesh.element_count)))
    nbx = min(nbins, roi.width)
    nby = min(nbins, roi.height)
    lon_span = roi.lon_max - roi.lon_min
    lat_span = roi.lat_max - roi.lat_min

    def bin_x(vals: np.ndarray) -> np.ndarray:
        return np.clip(((vals - roi.lon_min) / lon_span * nbx).astype(np.int64), 0, nbx - 1)

    def bin_y(vals: np.ndarray) -> np.ndarray:
        return np.clip(((vals - roi.lat_min) / lat_span * nby).astype(np.int64), 0, nby - 1)

    xmin, xmax = tx.min(axis=1), tx.max(axis=1)
    ymin, ymax = ty.min(axis=1), ty.max(axis=1)
    overlaps = (xmax >= roi.lon_min) & (xmin <= roi.lon_max) & (ymax >= roi.lat_min) & (
        ymin <= roi.lat_max
    )

    bins: list[list[list[int]]] = [[[] for _ in range(nbx)] for _ in range(nby)]
    bx0, bx1 = bin_x(xmin), bin_x(xmax)
    by0, by1 = bin_y(ymin), bin_y(ymax)
    for t in np.nonzero(overlaps)[0]:
        for by in range(by0[t], by1[t] + 1):
            row = bins[by]
            for bx in range(bx0[t], bx1[t] + 1):
                row[bx].append(int(t))

    pix_bx = bin_x(lon[0])  # lon constant per column
    pix_by = bin_y(lat[:, 0])  # lat constant per row

    tri_out = np.full((roi.height, roi.width), MISS, dtype=np.int64)
    w_out = np.zeros((roi.height, roi.width, 3), dtype=np.float64)
    for i in range(roi.height):
        for j in range(roi.width):
            cands = bins[pix_by[i]][pix_bx[j]]
            if not cands:
                continue
            px, py = lon[i, j], lat[i, j]
            for t in cands:  # appended in increasing id order: first hit = lowest id
                w0, w1, w2 = _barycentric(
                    px, py, tx[t, 0], ty[t, 0], tx[t, 1], ty[t, 1], tx[t, 2], ty[t, 2]
                )
                if w0 >= WEIGHT_FLOOR and w1 >= WEIGHT_FLOOR and w2 >= WEIGHT_FLOOR:
                    tri_out[i, j] = t
                    w_out[i, j] = (w0, w1, w2)
                    break
    corners = np.where(tri_out[:, :, None] != MISS, tris[tri_out], 0)
    return RasterIndex(
        width=roi.width,
        height=roi.height,
        node_count=mesh.node_count,
        triangle=tri_out,
        weights=w_out,
        corners=corners,
    )


def rasterize(
    index: RasterIndex,
    node_values: np.ndarray,
    fill_value: float | None = None,
    background: float = 0.0,
) -> GridField:
    """Interpolate a per-node field onto the indexed pixel grid.

    Covered pixels get the barycentric combination of their triangle's node
    values.  A pixel is masked out (set to ``background``) when it is MISS or
    when any incident node carries ``fill_value`` (dry), which keeps wet/dry
    fronts from being interpolated across.
    """
    node_values = np.asarray(node_values)
    if node_values.shape != (index.node_count,):
        raise ValueError(
            f"node_values has shape {node_values.shape}, expected ({index.node_count},)"
        )
    vals = node_values.astype(np.float64)[index.corners]  # (H, W, 3)
    covered = index.covered()
    if fill_value is None:
        wet = np.ones_like(covered)
    else:
        wet = ~np.any(node_values[index.corners] == fill_value, axis=2)
    mask = covered & wet
    # Anchored form of w0*v0 + w1*v1 + w2*v2 (with w0 = 1 - w1 - w2): exact
    # for constant fields regardless of weight rounding.
    interp = (
        vals[:, :, 0]
        + index.weights[:, :, 1] * (vals[:, :, 1] - vals[:, :, 0])
        + index.weights[:, :, 2] * (vals[:, :, 2] - vals[:, :, 0])
    )
    out = np.where(mask, interp, background)
    return GridField(values=out, mask=mask)


def mean_over_roi(mesh: Mesh, series: NodalSeries, roi: Roi) -> np.ndarray:
    """Per-frame mean of a nodal series over wet nodes inside the ROI box.

    Operates on nodal (pre-raster) data so the statistic does not depend on
    raster resolution.  Frames with no wet in-ROI node report 0.0.
    """
    in_roi = (
        (mesh.lon >= roi.lon_min)
        & (mesh.lon <= roi.lon_max)
        & (mesh.lat >= roi.lat_min)
        & (mesh.lat <= roi.lat_max)
    )
    sub = series.values[:, in_roi].astype(np.float64)
    wet = series.wet_mask()[:, in_roi]
    counts = wet.sum(axis=1)
    sums = np.where(wet, sub, 0.0).sum(axis=1)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
