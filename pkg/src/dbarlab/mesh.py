"""Triangulation of a polyline domain (lattice interior plus resampled boundary)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .hyperbolic import DomainSpec, points_inside


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray          # (N, 2) columns t, s
    triangles: np.ndarray      # (T, 3) counter-clockwise
    boundary: np.ndarray       # (N,) bool
    h: float                   # longest edge

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def edges(self) -> np.ndarray:
        e = np.vstack([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def _resample_closed(vertices: np.ndarray, spacing: float) -> np.ndarray:
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(8, int(math.ceil(arc[-1] / spacing)))
    u = arc[-1] * np.arange(n) / n
    return np.column_stack([np.interp(u, arc, closed[:, 0]), np.interp(u, arc, closed[:, 1])])


def build_mesh(domain: DomainSpec, h: float, relax: int = 6) -> Mesh:
    """Quasi-uniform Delaunay mesh with longest edge at most h."""
    t0, t1, s0, s1 = domain.bbox
    size = min(t1 - t0, s1 - s0)
    if not 0 < h < size / 4:
        raise MeshError(f"h={h} is not small compared with the domain size {size:.3g}")
    spacing = 0.66 * h
    bnd = _resample_closed(domain.boundary, spacing)
    dy = spacing * math.sqrt(3) / 2
    rows = np.arange(s0 + dy / 2, s1, dy)
    pts = []
    for k, y in enumerate(rows):
        off = 0.5 * spacing * (k % 2)
        xs = np.arange(t0 + off, t1, spacing)
        pts.append(np.column_stack([xs, np.full_like(xs, y)]))
    lattice = np.vstack(pts)
    inside = points_inside(domain.boundary, lattice[:, 0], lattice[:, 1])
    lattice = lattice[inside]
    # keep lattice points away from the boundary nodes
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(bnd).query(lattice)
    lattice = lattice[dist > 0.55 * spacing]
    nodes = np.vstack([bnd, lattice])
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[: len(bnd)] = True

    tri = _triangulate(nodes, domain)
    # a few sweeps of Laplacian smoothing on interior nodes improve element shape
    for _ in range(relax):
        nbr_sum = np.zeros_like(nodes)
        count = np.zeros(len(nodes))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            np.add.at(nbr_sum, tri[:, a], nodes[tri[:, b]])
            np.add.at(nbr_sum, tri[:, b], nodes[tri[:, a]])
            np.add.at(count, tri[:, a], 1)
            np.add.at(count, tri[:, b], 1)
        new = nbr_sum / np.maximum(count, 1)[:, None]
        nodes = np.where(boundary[:, None], nodes, new)
        tri = _triangulate(nodes, domain)

    p = nodes[tri]
    edges = np.concatenate([np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))])
    hmax = float(edges.max())
    if hmax > h * (1 + 1e-9):
        raise MeshError(f"mesh generation produced edges of length {hmax:.4g} > h={h}")
    if nodes[:, 1].min() <= 0:
        raise MeshError("mesh nodes left the upper half-plane")
    return Mesh(nodes, tri, boundary, hmax)


def _triangulate(nodes, domain):
    tri = Delaunay(nodes, qhull_options="Qbb Qc Qz Q12").simplices
    cen = nodes[tri].mean(axis=1)
    keep = points_inside(domain.boundary, cen[:, 0], cen[:, 1])
    tri = tri[keep]
    p = nodes[tri]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    area = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    tri = np.where((area < 0)[:, None], tri[:, [0, 2, 1]], tri)
    # drop slivers produced along the boundary chords
    area = np.abs(area)
    tri = tri[area > 1e-12 * area.max()]
    return np.ascontiguousarray(tri)
