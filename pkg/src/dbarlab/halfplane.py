"""The operators W, Wbar and their shifts, weighted L^2, the forms Q_alpha and
Qbar_beta, sigma-Sobolev and rho-weighted norms, and identity residuals.

Coordinates: W = 2is d/dw = is d/dt + s d/ds and Wbar = -is d/dt + s d/ds.
Both preserve polynomial degree in (t, s), so applying them elementwise to a
Lagrange field is exact; results come back as broken (element-local) fields.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FESpace, QuadratureRule
from .spectrum import SigmaLabel


@dataclass(frozen=True)
class FirstOrder:
    """L u = c0 u + s (ct du/dt + cs du/ds)."""

    c0: complex = 0.0
    ct: complex = 0.0
    cs: complex = 0.0

    def __add__(self, other):
        if isinstance(other, FirstOrder):
            return FirstOrder(self.c0 + other.c0, self.ct + other.ct, self.cs + other.cs)
        return FirstOrder(self.c0 + other, self.ct, self.cs)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1) * other if isinstance(other, FirstOrder) else self + (-other)

    def __mul__(self, k):
        return FirstOrder(k * self.c0, k * self.ct, k * self.cs)

    __rmul__ = __mul__

    def evaluate(self, s, u, ut, us):
        return self.c0 * u + s * (self.ct * ut + self.cs * us)


W = FirstOrder(0.0, 1j, 1.0)
WBAR = FirstOrder(0.0, -1j, 1.0)
IDENTITY = FirstOrder(1.0, 0.0, 0.0)


def w_sigma(label: SigmaLabel) -> FirstOrder:
    return W + (label.lam - label.nu) / 2.0


def wbar_sigma(label: SigmaLabel) -> FirstOrder:
    return WBAR - (label.lam + label.nu) / 2.0


def w_alpha(alpha: float) -> FirstOrder:
    return W + alpha


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Complex Lagrange field; `values` is (n_dofs,) or element-local (T, n_local) when broken."""

    space: FESpace
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape not in ((self.space.n_dofs,), (self.space.mesh.n_triangles, self.space.n_local)):
            raise ValueError(f"values of shape {v.shape} do not fit the space")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def broken(self) -> bool:
        return self.values.ndim == 2

    @property
    def mesh(self):
        return self.space.mesh

    @property
    def degree(self) -> int:
        return self.space.degree

    def local(self) -> np.ndarray:
        return self.values if self.broken else self.values[self.space.elem_dofs]

    @classmethod
    def interpolate(cls, space: FESpace, fn: Callable) -> "CoefficientField":
        return cls(space, space.interpolate(fn))

    @classmethod
    def zeros(cls, space: FESpace) -> "CoefficientField":
        return cls(space, np.zeros(space.n_dofs, dtype=complex))

    def _combine(self, other, fn):
        if not isinstance(other, CoefficientField):
            return CoefficientField(self.space, fn(self.values, other))
        if self.broken == other.broken:
            return CoefficientField(self.space, fn(self.values, other.values))
        return CoefficientField(self.space, fn(self.local(), other.local()))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, k):
        return CoefficientField(self.space, self.values * k)

    __rmul__ = __mul__

    def __neg__(self):
        return CoefficientField(self.space, -self.values)

    def trace_max(self) -> float:
        """Largest |value| at boundary dofs (continuous fields only)."""
        if self.broken:
            raise ValueError("trace of a broken field is not defined")
        b = self.values[self.space.boundary]
        return float(np.abs(b).max()) if b.size else 0.0

    def is_zero_trace(self, tol: float = 0.0) -> bool:
        return self.trace_max() <= tol


def apply(op: FirstOrder, u: CoefficientField) -> CoefficientField:
    """Elementwise exact application; returns a broken field of the same degree."""
    loc = u.local()
    # (T, K, 2, L) @ (T, 1, L, 1), real and imaginary parts kept apart to avoid complex upcasts
    G = u.space.node_grad.transpose(0, 1, 3, 2)
    g = (G @ loc.real[:, None, :, None])[..., 0] + 1j * (G @ loc.imag[:, None, :, None])[..., 0]
    s = u.space.node_coords[..., 1]
    return CoefficientField(u.space, op.evaluate(s, loc, g[..., 0], g[..., 1]))


def apply_W(u: CoefficientField) -> CoefficientField:
    return apply(W, u)


def apply_Wbar(u: CoefficientField) -> CoefficientField:
    return apply(WBAR, u)


def apply_W_sigma(label: SigmaLabel, u: CoefficientField) -> CoefficientField:
    return apply(w_sigma(label), u)


def apply_Wbar_sigma(label: SigmaLabel, u: CoefficientField) -> CoefficientField:
    return apply(wbar_sigma(label), u)


# ---------------------------------------------------------------------------
# weighted L^2


class WeightedL2:
    """L^2(D) with measure s^(nu - 2) dt ds, evaluated by triangle quadrature.

    nu = 0 is the hyperbolic area measure used by all reduced problems.
    """

    def __init__(self, space: FESpace, nu: float = 0.0, order: int = 4):
        self.space = space
        self.nu = float(nu)
        self.quad = QuadratureRule.gauss(order)
        ref = self.quad.points
        self.points = space.to_physical(ref)              # (T, K, 2)
        self.s = self.points[..., 1]
        self.weights = space.det[:, None] * self.quad.weights[None, :] * self.s ** (self.nu - 2.0)
        self.basis = space.basis(ref)                      # (K, nloc)
        self.grads = space.grad(ref)                       # (T, K, nloc, 2)

    @classmethod
    def for_space(cls, space: FESpace, nu: float = 0.0, order: int = 4) -> "WeightedL2":
        cache = space.__dict__.setdefault("_l2_cache", {})
        key = (float(nu), order)
        if key not in cache:
            cache[key] = cls(space, nu, order)
        return cache[key]

    # evaluation at quadrature points
    def values(self, u) -> np.ndarray:
        if isinstance(u, CoefficientField):
            return u.local() @ self.basis.T
        if callable(u):
            return np.asarray(u(self.points[..., 0], self.points[..., 1]), dtype=complex)
        return np.asarray(u)

    def gradients(self, u: CoefficientField) -> tuple[np.ndarray, np.ndarray]:
        g = np.einsum("tl,tklp->tkp", u.local(), self.grads)
        return g[..., 0], g[..., 1]

    def op_values(self, op: FirstOrder, u: CoefficientField) -> np.ndarray:
        ut, us = self.gradients(u)
        return op.evaluate(self.s, self.values(u), ut, us)

    def inner(self, u, v) -> complex:
        """<u, v> = integral of u conj(v); linear in the first slot."""
        return complex(np.sum(self.weights * self.values(u) * np.conj(self.values(v))))

    def norm(self, u) -> float:
        return float(np.sqrt(max(np.sum(self.weights * np.abs(self.values(u)) ** 2), 0.0)))

    def integrate(self, f) -> complex:
        return complex(np.sum(self.weights * self.values(f)))

    # assembly
    def matrix(self, left: FirstOrder = IDENTITY, right: FirstOrder | None = None,
               weight: np.ndarray | None = None) -> sp.csr_matrix:
        """A[i, j] = <left phi_j, right phi_i> (right defaults to left)."""
        right = left if right is None else right
        phi = self.basis[None, :, :]
        s = self.s[..., None]
        gt, gs = self.grads[..., 0], self.grads[..., 1]
        L = left.c0 * phi + s * (left.ct * gt + left.cs * gs)
        R = right.c0 * phi + s * (right.ct * gt + right.cs * gs)
        w = self.weights if weight is None else self.weights * weight
        loc = np.einsum("tk,tkj,tki->tij", w, L, np.conj(R))
        return self._scatter(loc)

    def _scatter(self, loc: np.ndarray) -> sp.csr_matrix:
        dofs = self.space.elem_dofs
        n = self.space.n_dofs
        rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
        cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(n, n))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return self.matrix(IDENTITY)

    @cached_property
    def _mass_lu(self):
        return spla.splu(self.mass.real.tocsc())

    def load(self, f) -> np.ndarray:
        """b_i = <f, phi_i>."""
        vals = self.values(f)
        loc = (self.weights * vals) @ self.basis
        b = np.zeros(self.space.n_dofs, dtype=complex)
        np.add.at(b, self.space.elem_dofs, loc)
        return b

    def load_op(self, f, op: FirstOrder) -> np.ndarray:
        """b_i = <f, op phi_i>."""
        vals = self.values(f)
        phi = self.basis[None, :, :]
        R = op.c0 * phi + self.s[..., None] * (op.ct * self.grads[..., 0] + op.cs * self.grads[..., 1])
        loc = np.einsum("tk,tk,tkl->tl", self.weights, vals, np.conj(R))
        b = np.zeros(self.space.n_dofs, dtype=complex)
        np.add.at(b, self.space.elem_dofs, loc)
        return b

    def project(self, f) -> CoefficientField:
        """L^2 projection onto the continuous space."""
        return CoefficientField(self.space, self.solve_mass(self.load(f)))

    def solve_mass(self, b: np.ndarray) -> np.ndarray:
        lu = self._mass_lu
        return lu.solve(b.real.copy()) + 1j * lu.solve(b.imag.copy())


def hyperbolic_l2(space: FESpace, order: int = 4) -> WeightedL2:
    return WeightedL2.for_space(space, 0.0, order)


def _l2(u: CoefficientField, l2: WeightedL2 | None) -> WeightedL2:
    return l2 if l2 is not None else hyperbolic_l2(u.space)


# ---------------------------------------------------------------------------
# forms and residuals


def form_Q(alpha: float, v: CoefficientField, u: CoefficientField, l2: WeightedL2 | None = None) -> complex:
    """Q_alpha(v, u) = <(alpha + W) v, (alpha + W) u>."""
    l2 = _l2(u, l2)
    op = W + alpha
    return l2.inner(l2.op_values(op, v), l2.op_values(op, u))


def form_Qbar(beta: float, v: CoefficientField, u: CoefficientField, l2: WeightedL2 | None = None) -> complex:
    """Qbar_beta(v, u) = <(beta + Wbar) v, (beta + Wbar) u>."""
    l2 = _l2(u, l2)
    op = WBAR + beta
    return l2.inner(l2.op_values(op, v), l2.op_values(op, u))


def fundamental_identity_residual(alpha: float, c: float, v: CoefficientField, u: CoefficientField,
                                  l2: WeightedL2 | None = None) -> float:
    """|Q_a - (1-c) Q_(a-c) - c Qbar_(c-1-a) - (2ca + c(1-c)) <v,u>| / (|Q_a| + 1)."""
    l2 = _l2(u, l2)
    lhs = form_Q(alpha, v, u, l2)
    rhs = ((1 - c) * form_Q(alpha - c, v, u, l2) + c * form_Qbar(c - 1 - alpha, v, u, l2)
           + (2 * c * alpha + c * (1 - c)) * l2.inner(v, u))
    return float(abs(lhs - rhs) / (abs(lhs) + 1.0))


def adjoint_residual(u: CoefficientField, v: CoefficientField, l2: WeightedL2 | None = None) -> float:
    """|<Wu, v> - <u, (1 - nu - Wbar) v>| / (|u| |v|) under s^(nu-2) dt ds."""
    l2 = _l2(u, l2)
    nu_, nv = l2.norm(u), l2.norm(v)
    if nu_ == 0 or nv == 0:
        return 0.0
    lhs = l2.inner(l2.op_values(W, u), v)
    rhs = l2.inner(u, l2.op_values(IDENTITY * (1 - l2.nu) - WBAR, v))
    return float(abs(lhs - rhs) / (nu_ * nv))


def commutator_residual(u: CoefficientField, l2: WeightedL2 | None = None) -> float:
    """|[W, Wbar] u - (Wbar - W) u| relative to |u|_{W^1}, computed elementwise."""
    l2 = _l2(u, l2)
    wu, wbu = apply_W(u), apply_Wbar(u)
    lhs = apply_W(wbu) - apply_Wbar(wu)
    rhs = wbu - wu
    scale = np.sqrt(l2.norm(u) ** 2 + l2.norm(wu) ** 2 + l2.norm(wbu) ** 2)
    return l2.norm(lhs - rhs) / scale if scale > 0 else 0.0


def discrete_adjoint_residual(label: SigmaLabel, space: FESpace, order: int = 8) -> float:
    """max |<Wbar_sigma phi_j, phi_i> - <phi_j, -W_alpha phi_i>| over interior hat functions,
    relative to the largest entry, under the hyperbolic measure (where the rule holds for every
    nu). The integrands carry 1/s, so the quadrature order is raised above the default to push
    its error below the comparison."""
    l2 = WeightedL2.for_space(space, 0.0, order)
    a = l2.matrix(wbar_sigma(label), IDENTITY)
    b = l2.matrix(IDENTITY, -1.0 * w_alpha(label.alpha))
    idx = space.interior
    a = a[idx][:, idx]
    diff = abs(a - b[idx][:, idx]).max()
    return float(diff / abs(a).max())


def shift_constant(delta: float) -> tuple[float, float]:
    """(C(delta), c) with c^2 balancing the two terms of min{1 - 1/c^2, 1 + delta^2 (1 - c^2)}."""
    if delta == 0:
        return 1.0, 1.0
    d2 = delta * delta
    # 1 - 1/x = 1 + d2 (1 - x)  <=>  d2 x^2 - d2 x - 1 = 0
    x = (d2 + np.sqrt(d2 * d2 + 4 * d2)) / (2 * d2)
    m = min(1 - 1 / x, 1 + d2 * (1 - x))
    return float(1.0 / m), float(np.sqrt(x))


# ---------------------------------------------------------------------------
# norms


MAX_NORM_ORDER = 2


def _derivatives(label: SigmaLabel, u: CoefficientField, l2: WeightedL2, recover: bool):
    """(G u, W_sigma u, Wbar_sigma u); continuous projections when more derivatives follow."""
    out = [label.g * u, apply(w_sigma(label), u), apply(wbar_sigma(label), u)]
    if recover:
        out = [f if not f.broken else l2.project(f) for f in out]
    return out


def _sigma_norm2(k: int, label, u, l2) -> float:
    if k == 0:
        return l2.norm(u) ** 2
    return sum(_sigma_norm2(k - 1, label, f, l2) for f in _derivatives(label, u, l2, k > 1))


def sigma_norm(k: int, label: SigmaLabel, u: CoefficientField, l2: WeightedL2 | None = None) -> float:
    """W^k_sigma(D) norm: |u|^2_{k+1} = |Gu|^2_k + |W_sigma u|^2_k + |Wbar_sigma u|^2_k.

    Beyond first order the intermediate derivatives are L^2-projected back to
    the continuous space before being differentiated again.
    """
    if k < 0 or k > MAX_NORM_ORDER:
        raise ValueError(f"sigma_norm supports 0 <= k <= {MAX_NORM_ORDER} on these discrete spaces")
    l2 = _l2(u, l2)
    if k >= 1 and u.broken:
        u = l2.project(u)
    return float(np.sqrt(_sigma_norm2(k, label, u, l2)))


def _rho_norm2(k, j, label, u, rho_fn, l2, weight_power: int) -> float:
    """Squared R^k W^j norm of rho^weight_power * u (rho applied at quadrature points)."""
    if k == 0:
        if weight_power == 0:
            return _sigma_norm2(j, label, u, l2)
        # push the pending weight into the field before differentiating
        if j > 0:
            u = _times_rho(u, rho_fn, weight_power, l2)
            return _sigma_norm2(j, label, u, l2)
        rv = rho_fn(l2.points[..., 0], l2.points[..., 1]) ** weight_power
        return l2.norm(rv * l2.values(u)) ** 2
    more = k > 1 or j > 0 or weight_power > 0
    if weight_power > 0:
        u = _times_rho(u, rho_fn, weight_power, l2)
    gu, wu, wbu = _derivatives(label, u, l2, recover=more)
    return (_rho_norm2(k - 1, j, label, gu, rho_fn, l2, 1)
            + _rho_norm2(k - 1, j, label, wu, rho_fn, l2, 1)
            + _rho_norm2(k - 1, j, label, wbu, rho_fn, l2, 0))


def _times_rho(u, rho_fn, power, l2):
    vals = rho_fn(l2.points[..., 0], l2.points[..., 1]) ** power * l2.values(u)
    return l2.project(vals)


def rho_weighted_norm(k: int, j: int, label: SigmaLabel, rho, u: CoefficientField,
                      l2: WeightedL2 | None = None) -> float:
    """R^k W^j_sigma norm: |u|^2_{R^(k+1)W^j} = |rho G u|^2 + |rho W_sigma u|^2 + |Wbar_sigma u|^2.

    `rho` is a DefiningFunction or any callable rho(t, s).
    """
    if k < 0 or j < 0 or k + j > MAX_NORM_ORDER:
        raise ValueError(f"rho_weighted_norm supports k + j <= {MAX_NORM_ORDER}")
    l2 = _l2(u, l2)
    rho_fn = rho.evaluate if hasattr(rho, "evaluate") else rho
    if u.broken:
        u = l2.project(u)
    # defining functions are costly to evaluate; keep one copy per rule
    cache = l2.__dict__.setdefault("_rho_cache", {})
    hit = cache.get(id(rho))
    if hit is None or hit[0] is not rho:
        hit = (rho, np.asarray(rho_fn(l2.points[..., 0], l2.points[..., 1]), dtype=float))
        cache[id(rho)] = hit
    rho_q = hit[1]

    return float(np.sqrt(_rho_norm2(k, j, label, u, lambda t, s: rho_q, l2, 0)))
