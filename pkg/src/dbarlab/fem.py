"""Lagrange elements of degree 1 and 2 on triangles, and triangle quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Rule on the reference triangle {x, y >= 0, x + y <= 1}.

    `points` are reference coordinates; `weights` sum to the reference area 1/2
    and are with respect to Euclidean dt ds after the affine map.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @classmethod
    def gauss(cls, order: int = 4) -> "QuadratureRule":
        """Collapsed Gauss-Legendre product rule exact for total degree `order`."""
        n = max(1, math.ceil((order + 2) / 2))
        x, w = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        # Duffy map (u, v) -> (u, v (1 - u)); Jacobian 1 - u
        U, V = np.meshgrid(x, x, indexing="ij")
        WU, WV = np.meshgrid(w, w, indexing="ij")
        pts = np.column_stack([U.ravel(), (V * (1 - U)).ravel()])
        wts = (WU * WV * (1 - U)).ravel()
        return cls(pts, wts, order)

    def self_test(self) -> float:
        """Largest error over monomials x^a y^b with a + b <= order."""
        err = 0.0
        for a in range(self.order + 1):
            for b in range(self.order + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                approx = float(self.weights @ (self.points[:, 0] ** a * self.points[:, 1] ** b))
                err = max(err, abs(approx - exact))
        return err


def _p1(x, y):
    return np.stack([1 - x - y, x, y], axis=-1)


def _p1_grad(x, y):
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, np.shape(x) + (3, 2)).copy()


def _p2(x, y):
    l0, l1, l2 = 1 - x - y, x, y
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


def _p2_grad(x, y):
    l0, l1, l2 = 1 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    L = [l0, l1, l2]
    out = []
    for i in range(3):
        c = (4 * L[i] - 1)[..., None]
        out.append(c * dl[i])
    for i, j in ((0, 1), (1, 2), (2, 0)):
        out.append(4 * (L[i][..., None] * dl[j] + L[j][..., None] * dl[i]))
    return np.stack(out, axis=-2)


REFERENCE_NODES = {
    1: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    2: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
}
BASIS = {1: (_p1, _p1_grad), 2: (_p2, _p2_grad)}


class FESpace:
    """Continuous Lagrange space on a mesh; element-local views for broken fields."""

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        tri = mesh.triangles
        if degree == 1:
            self.elem_dofs = tri.copy()
            self.dof_coords = mesh.nodes.copy()
            self.boundary = mesh.boundary.copy()
        else:
            local_edges = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)
            flat = np.sort(local_edges.reshape(-1, 2), axis=1)
            edges, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
            inv = inv.reshape(-1)
            n = mesh.n_nodes
            self.elem_dofs = np.hstack([tri, n + inv.reshape(-1, 3)])
            mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
            self.dof_coords = np.vstack([mesh.nodes, mids])
            self.boundary = np.concatenate([mesh.boundary, counts == 1])
        self.n_dofs = len(self.dof_coords)
        self.n_local = self.elem_dofs.shape[1]
        p = mesh.nodes[tri]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (T, 2 phys, 2 ref)
        self.det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.jinv = np.linalg.inv(J)  # (T, 2 ref, 2 phys)
        self.origin = p[:, 0]
        self._jac = J

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def to_physical(self, ref: np.ndarray) -> np.ndarray:
        """Reference points (K, 2) -> physical (T, K, 2)."""
        return self.origin[:, None, :] + np.einsum("tpr,kr->tkp", self._jac, ref)

    def basis(self, ref: np.ndarray) -> np.ndarray:
        return BASIS[self.degree][0](ref[:, 0], ref[:, 1])

    def grad(self, ref: np.ndarray) -> np.ndarray:
        """Physical gradients (T, K, n_local, 2) at reference points, columns (d/dt, d/ds)."""
        g = BASIS[self.degree][1](ref[:, 0], ref[:, 1])  # (K, nloc, 2 ref)
        return np.einsum("klr,trp->tklp", g, self.jinv)

    @cached_property
    def node_coords(self) -> np.ndarray:
        """Physical coordinates of the local Lagrange nodes, (T, n_local, 2)."""
        return self.dof_coords[self.elem_dofs]

    @cached_property
    def node_grad(self) -> np.ndarray:
        return self.grad(REFERENCE_NODES[self.degree])

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolant of fn(t, s) -> complex values."""
        return np.asarray(fn(self.dof_coords[:, 0], self.dof_coords[:, 1]), dtype=complex)
