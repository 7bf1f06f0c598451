"""
Legacy ASCII VTK export of meshes and nodal fields through meshio.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional

import meshio
import numpy as np

from src.fem.fields import FEField
from src.mesh.adaptive_mesh import AdaptiveMesh
from src.utils.helpers import ensure_dir

logger = logging.getLogger(__name__)


@dataclass
class VTKContent:
    """Vertices (n x 2), triangles (t x 3) and point data read back from a file."""
    vertices: np.ndarray
    triangles: np.ndarray
    point_data: Dict[str, np.ndarray]


def to_meshio(mesh: AdaptiveMesh, fields: Optional[Dict[str, FEField]] = None) -> meshio.Mesh:
    """Single triangle block with the fields as point data; z is set to 0."""
    points = np.column_stack([mesh.vertices, np.zeros(mesh.num_vertices)])
    out = meshio.Mesh(points=points, cells=[("triangle", np.asarray(mesh.triangles, dtype=int))])
    for name, f in (fields or {}).items():
        f.require_mesh(mesh)
        out.point_data[name] = np.asarray(f.coeffs, dtype=float)
    return out


def write_vtk(path: str, mesh: AdaptiveMesh,
              fields: Optional[Dict[str, FEField]] = None) -> str:
    """Write an ASCII legacy VTK unstructured grid, e.g. phi/mu/p/q snapshots of one step."""
    ensure_dir(os.path.dirname(path) or ".")
    meshio.write(path, to_meshio(mesh, fields), file_format="vtk", binary=False)
    logger.debug(f"wrote {path}: {mesh.num_vertices} vertices, fields {sorted(fields or {})}")
    return path


def read_vtk(path: str) -> VTKContent:
    m = meshio.read(path, file_format="vtk")
    triangles = m.cells_dict.get("triangle")
    if triangles is None:
        raise ValueError(f"{path}: no triangle cells")
    data = {name: np.asarray(values, dtype=float).reshape(-1)
            for name, values in m.point_data.items()}
    return VTKContent(np.asarray(m.points[:, :2], dtype=float),
                      np.asarray(triangles, dtype=np.int64), data)


def read_vtk_points(path: str) -> np.ndarray:
    """Vertex coordinates (x, y) of a file written by write_vtk."""
    return read_vtk(path).vertices
