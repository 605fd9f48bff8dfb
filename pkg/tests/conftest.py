from __future__ import annotations

import numpy as np
import pytest
import torch

from surgecast.ingest import Mesh
from surgecast.raster import Roi


@pytest.fixture(autouse=True)
def _single_thread_torch():
    torch.set_num_threads(1)


@pytest.fixture
def tri_mesh() -> Mesh:
    """One triangle covering well past the unit square."""
    return Mesh(
        lon=np.array([-2.0, 4.0, 0.5]),
        lat=np.array([-2.0, -2.0, 4.0]),
        depth=np.array([5.0, 5.0, 5.0]),
        triangles=np.array([[0, 1, 2]]),
    )


@pytest.fixture
def square_mesh() -> Mesh:
    """Unit square split along the main diagonal into two triangles."""
    return Mesh(
        lon=np.array([0.0, 1.0, 1.0, 0.0]),
        lat=np.array([0.0, 0.0, 1.0, 1.0]),
        depth=np.array([1.0, 2.0, 3.0, 4.0]),
        triangles=np.array([[0, 1, 2], [0, 2, 3]]),
    )


@pytest.fixture
def unit_roi() -> Roi:
    return Roi(lon_min=0.0, lon_max=1.0, lat_min=0.0, lat_max=1.0, width=8, height=8)


def write_mesh_text(path, title, element_count, node_count, nodes, elements):
    """Write a mesh file from raw line tuples (for malformed-input tests)."""
    lines = [title, f"{element_count} {node_count}"]
    for row in nodes:
        lines.append(" ".join(str(v) for v in row))
    for row in elements:
        lines.append(" ".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path
