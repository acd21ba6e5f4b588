"""Galerkin solution of the reduced transverse and tangential problems.

Two discretizations are offered.

* "galerkin": the direct forms B(v, u) = Gamma <v, u> + Q_alpha(v, u) on zero-trace
  fields (transverse) and Gamma <v, u> + <Wbar_sigma v, Wbar_sigma u> on the full
  space (tangential).
* "compatible": Wbar_sigma is replaced by Wh = P0 Wbar_sigma, the L^2 projection of
  Wbar_sigma onto zero-trace fields, and the adjoint by the exact matrix adjoint
  Wh*.  The tangential block is Gamma + Wh* Wh and the transverse block
  Gamma + Wh Wh*.  These are the blocks the form assembler composes, so the
  discrete complex identities hold to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FESpace
from .halfplane import (IDENTITY, W, CoefficientField, FirstOrder, WeightedL2, hyperbolic_l2,
                        sigma_norm, rho_weighted_norm, wbar_sigma, w_sigma)
from .hyperbolic import DomainSpec
from .mesh import Mesh
from .spectrum import SigmaLabel

CG_RTOL = 1e-10
CG_MAXITER = 10_000
DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    """Linear solve failed; `condition` holds an estimate when one was computable."""

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message if condition is None else f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


def function_space(mesh: Mesh, degree: int = 1) -> FESpace:
    """Cached Lagrange space on a mesh."""
    cache = mesh.__dict__.setdefault("_spaces", {})
    if degree not in cache:
        cache[degree] = FESpace(mesh, degree)
    return cache[degree]


def _space(where, degree: int = 1) -> FESpace:
    if isinstance(where, FESpace):
        return where
    if isinstance(where, Mesh):
        return function_space(where, degree)
    raise TypeError("expected a Mesh or an FESpace")


# ---------------------------------------------------------------------------
# analytic fields


@dataclass(frozen=True)
class AnalyticField:
    """Smooth field given by closed forms for the value and its first and second derivatives.

    Used for manufactured solutions: P-operators are applied exactly, not by
    differentiating interpolants.
    """

    value: Callable
    dt: Callable
    ds: Callable
    laplacian: Callable | None = None

    def __call__(self, t, s):
        return self.value(t, s)

    def first_order(self, op: FirstOrder) -> Callable:
        return lambda t, s: op.evaluate(s, self.value(t, s), self.dt(t, s), self.ds(t, s))

    def transverse(self, label: SigmaLabel) -> Callable:
        """P_perp u = -s^2 Lap u + 2i alpha s u_t + (Gamma + alpha (alpha + 1)) u."""
        a = label.alpha
        c = label.gamma + a * (a + 1)
        return lambda t, s: (-s * s * self.laplacian(t, s) + 2j * a * s * self.dt(t, s) + c * self.value(t, s))

    def tangential(self, label: SigmaLabel) -> Callable:
        """P_top u = -s^2 Lap u + 2i (alpha + 1) s u_t + (Gamma + alpha (alpha + 1)) u."""
        a = label.alpha
        c = label.gamma + a * (a + 1)
        return lambda t, s: (-s * s * self.laplacian(t, s) + 2j * (a + 1) * s * self.dt(t, s)
                             + c * self.value(t, s))


def bump_field(center: complex, radius: float, wave: complex = 0.0, power: int = 4) -> AnalyticField:
    """(1 - |w - c|^2 / R^2)_+^power * exp(i (Re(wave) t + Im(wave) s)); C^(power-1), compact support."""
    ct, cs, R2 = center.real, center.imag, radius * radius
    kt, ks = wave.real, wave.imag
    m = power

    def parts(t, s):
        dt_, ds_ = t - ct, s - cs
        rho = (dt_ * dt_ + ds_ * ds_) / R2
        inside = rho < 1
        one = np.where(inside, 1 - rho, 0.0)
        B = one ** m
        dB = -m * one ** (m - 1)                       # d/drho
        d2B = m * (m - 1) * one ** (m - 2) if m >= 2 else 0.0 * one
        E = np.exp(1j * (kt * t + ks * s))
        return dt_, ds_, rho, B, dB, d2B, E

    def value(t, s):
        _, _, _, B, _, _, E = parts(t, s)
        return B * E

    def dt(t, s):
        x, _, _, B, dB, _, E = parts(t, s)
        return (dB * 2 * x / R2 + 1j * kt * B) * E

    def ds(t, s):
        _, y, _, B, dB, _, E = parts(t, s)
        return (dB * 2 * y / R2 + 1j * ks * B) * E

    def lap(t, s):
        x, y, rho, B, dB, d2B, E = parts(t, s)
        lapB = d2B * 4 * rho / R2 + dB * 4 / R2
        kgrad = dB * 2 * (kt * x + ks * y) / R2
        return (lapB + 2j * kgrad - (kt * kt + ks * ks) * B) * E

    return AnalyticField(value, dt, ds, lap)


def holomorphic_field(exponent: float, h: Callable, dh: Callable, d2h: Callable | None = None) -> AnalyticField:
    """u = s^a h(w) with h holomorphic; closed-form derivatives."""
    a = exponent

    def value(t, s):
        return s ** a * h(t + 1j * s)

    def dt(t, s):
        return s ** a * dh(t + 1j * s)

    def ds(t, s):
        w = t + 1j * s
        return a * s ** (a - 1) * h(w) + 1j * s ** a * dh(w)

    lap = None
    if d2h is not None:
        def lap(t, s):
            w = t + 1j * s
            return a * (a - 1) * s ** (a - 2) * h(w) + 2j * a * s ** (a - 1) * dh(w)

    return AnalyticField(value, dt, ds, lap)


def monomial_field(label: SigmaLabel, k: int, center: complex = 0.0, scale: complex = 1.0) -> AnalyticField:
    """scale * s^((lambda + nu)/2) (w - center)^k, annihilated by Wbar_sigma."""
    h = lambda w: scale * (w - center) ** k
    dh = (lambda w: scale * k * (w - center) ** (k - 1)) if k > 0 else (lambda w: 0 * w)
    d2h = (lambda w: scale * k * (k - 1) * (w - center) ** (k - 2)) if k > 1 else (lambda w: 0 * w)
    return holomorphic_field(label.kernel_exponent, h, dh, d2h)


def analytic_op_values(l2: WeightedL2, op: FirstOrder, u: AnalyticField) -> np.ndarray:
    return u.first_order(op)(l2.points[..., 0], l2.points[..., 1])


# ---------------------------------------------------------------------------
# assembled operators


def _coupling(l2: WeightedL2, label: SigmaLabel) -> sp.csr_matrix:
    """B0[i, j] = <Wbar_sigma phi_j, phi_i> for interior i (all j)."""
    cache = l2.__dict__.setdefault("_coupling", {})
    key = round(label.kernel_exponent, 14)
    if key not in cache:
        B = l2.matrix(wbar_sigma(label), IDENTITY)
        cache[key] = B[l2.space.interior].tocsr()
    return cache[key]


@dataclass(eq=False)
class AssembledOperator:
    """Hermitian operator on the free dofs, in "matrix times coefficients gives loads" form.

    `free` lists the constrained index set: interior dofs for the transverse
    problem, every dof for the tangential one.
    """

    which: str
    label: SigmaLabel
    l2: WeightedL2
    discretization: str
    free: np.ndarray
    stiffness: sp.csr_matrix | None = None      # galerkin: full form on the free dofs
    coupling: sp.csr_matrix | None = None       # compatible: B0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def space(self) -> FESpace:
        return self.l2.space

    @property
    def n_free(self) -> int:
        return len(self.free)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        M = self.l2.mass
        return M[self.free][:, self.free].tocsr()

    @cached_property
    def _aux_mass(self) -> sp.csr_matrix:
        """Mass of the space Wh maps into (compatible) or out of."""
        M = self.l2.mass
        if self.which == "tangential":
            idx = self.space.interior
        else:
            idx = np.arange(self.space.n_dofs)
        return M[idx][:, idx].tocsr()

    @cached_property
    def _aux_lu(self):
        return spla.splu(self._aux_mass.real.tocsc())

    def _aux_solve(self, b):
        lu = self._aux_lu
        if b.ndim == 1:
            return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
        return np.column_stack([self._aux_solve(b[:, k]) for k in range(b.shape[1])])

    @cached_property
    def _C(self) -> sp.csr_matrix:
        """C with A = Gamma M + C^H Ma^-1 C."""
        return self.coupling if self.which == "tangential" else self.coupling.conj().T.tocsr()

    def apply(self, x: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """(A + shift M) x on free coefficients."""
        c = self.label.gamma + shift
        if self.discretization == "galerkin":
            return self.stiffness @ x + shift * (self.mass @ x)
        C = self._C
        return c * (self.mass @ x) + C.conj().T @ self._aux_solve(C @ x)

    def matrix(self, shift: float = 0.0) -> np.ndarray:
        """Dense matrix (intended for coarse meshes and tests)."""
        if self.discretization == "galerkin":
            return (self.stiffness + shift * self.mass).toarray()
        C = self._C.toarray()
        return (self.label.gamma + shift) * self.mass.toarray() + C.conj().T @ self._aux_solve(C)

    def quadratic(self, x: np.ndarray) -> float:
        return float(np.real(np.vdot(x, self.apply(x))))

    # solves -----------------------------------------------------------------
    def solve(self, b: np.ndarray, shift: float = 0.0, constraint: np.ndarray | None = None,
              x0: np.ndarray | None = None, method: str = "auto") -> np.ndarray:
        """Solve (A + shift M) x = b; with `constraint` Y, impose Y^H x = 0 by multipliers."""
        n = self.n_free
        if b.shape != (n,):
            raise ValueError(f"load vector of shape {b.shape}, expected {(n,)}")
        if method == "auto":
            method = "direct" if n < DIRECT_LIMIT or self.discretization == "compatible" else "cg"
        if method == "cg" and self.discretization == "galerkin":
            x = self._cg(b, shift, constraint, x0)
        else:
            x = self._direct(b, shift, constraint)
        self._check(x, b, shift, constraint)
        return x

    def _direct(self, b, shift, constraint):
        c = self.label.gamma + shift
        n = self.n_free
        if self.discretization == "galerkin":
            blocks = [[(self.stiffness + shift * self.mass).tocsc()]]
            rhs = [b]
        else:
            C = self._C
            blocks = [[c * self.mass, C.conj().T], [C, -self._aux_mass]]
            rhs = [b, np.zeros(C.shape[0], dtype=complex)]
        if constraint is not None and constraint.shape[1]:
            Y = sp.csr_matrix(constraint)
            for row in blocks:
                row.append(None)
            blocks[0][-1] = Y
            blocks.append([Y.conj().T] + [None] * (len(blocks[0]) - 1))
            rhs.append(np.zeros(Y.shape[1], dtype=complex))
        # unconstrained factorizations are reused across right-hand sides
        key = ("lu", shift) if constraint is None or not constraint.shape[1] else None
        try:
            lu = self._cache.get(key) if key else None
            if lu is None:
                lu = spla.splu(sp.bmat(blocks, format="csc").astype(complex))
                if key:
                    self._cache[key] = lu
            sol = lu.solve(np.concatenate(rhs).astype(complex))
        except RuntimeError as exc:  # exactly singular factorization
            raise SolverError(f"direct factorization failed: {exc}", self._condition(shift)) from exc
        if not np.all(np.isfinite(sol)):
            raise SolverError("direct solve produced non-finite values", self._condition(shift))
        return sol[:n]

    def _cg(self, b, shift, constraint, x0):
        A = self.stiffness + shift * self.mass
        n = self.n_free
        if constraint is None or not constraint.shape[1]:
            op = A
            proj = None
        else:
            # deflated CG: iterate on P^H A P with P the projector along the constraint
            Y = constraint
            Z = la.solve(Y.conj().T @ Y, Y.conj().T).conj().T      # Y (Y^H Y)^-1

            def proj(x):
                return x - Z @ (Y.conj().T @ x)

            op = spla.LinearOperator((n, n), matvec=lambda x: proj(A @ proj(x)), dtype=complex)
            b = proj(b)
        x, info = spla.cg(op, b, x0=x0, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER)
        if info != 0:
            raise SolverError(f"conjugate gradients stagnated after {CG_MAXITER} iterations",
                              self._condition(shift))
        return proj(x) if proj is not None else x

    def _check(self, x, b, shift, constraint):
        r = self.apply(x, shift) - b
        if constraint is not None and constraint.shape[1]:
            # the multiplier absorbs the constrained directions
            Y = constraint
            coef = la.lstsq(Y, r)[0]
            r = r - Y @ coef
        scale = max(np.linalg.norm(b), 1e-300)
        res = float(np.linalg.norm(r) / scale) if np.linalg.norm(b) > 0 else float(np.linalg.norm(r))
        self._cache["residual"] = res
        if not np.isfinite(res) or res > 1e-6:
            raise SolverError(f"Galerkin residual {res:.3g} after solve", self._condition(shift))

    @property
    def last_residual(self) -> float:
        return self._cache.get("residual", float("nan"))

    def _condition(self, shift) -> float | None:
        if self.n_free > 3000:
            return None
        try:
            return float(np.linalg.cond(self.matrix(shift)))
        except np.linalg.LinAlgError:
            return None

    # exact discrete kernel (compatible, Gamma = 0, tangential) ----------------
    # kernel handling for the compatible tangential operator at Gamma = 0 -----
    # With S = [[M, -B0^H], [B0, 0]]:
    #   S [g; z] = [0; B0 f]     gives g = M^-1 B0^H z, the part of f orthogonal to null(B0);
    #   S [x; y] = [0; M00 z]    gives x in the same range with Wh* Wh x = g.
    @cached_property
    def _range_lu(self):
        if self.which != "tangential" or self.discretization != "compatible":
            raise ValueError("defined for the compatible tangential operator only")
        B = self.coupling
        S = sp.bmat([[self.mass, -B.conj().T], [B, None]], format="csc").astype(complex)
        return spla.splu(S)

    def _range_solve(self, top_rhs_zero_bottom: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_free
        rhs = np.concatenate([np.zeros(n, dtype=complex), top_rhs_zero_bottom.astype(complex)])
        sol = self._range_lu.solve(rhs)
        return sol[:n], sol[n:]

    def kernel_split(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients f = g + k with k in null(B0) and g M-orthogonal to it."""
        g, _ = self._range_solve(self.coupling @ f)
        return g, f - g

    def solve_kernel_orthogonal(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """x orthogonal to null(B0) with Wh* Wh x = (f minus its kernel part); returns (x, kernel part)."""
        g, z = self._range_solve(self.coupling @ f)
        x, _ = self._range_solve(self._aux_mass @ z)
        r = self.apply(x, 0.0) - self.mass @ g
        scale = max(float(np.linalg.norm(self.mass @ g)), 1e-300)
        res = float(np.linalg.norm(r)) / scale if np.any(g) else float(np.linalg.norm(r))
        self._cache["residual"] = res
        if not np.isfinite(res) or res > 1e-6:
            raise SolverError(f"Galerkin residual {res:.3g} after the kernel-orthogonal solve")
        return x, f - g

    def discrete_kernel(self) -> np.ndarray:
        """M-orthonormal columns spanning null(B0), computed from a dense SVD (coarse meshes)."""
        if self.which != "tangential" or self.discretization != "compatible":
            raise ValueError("the exact discrete kernel is defined for the compatible tangential operator")
        if "kernel" not in self._cache:
            B = self.coupling.toarray()
            _, sv, Vh = la.svd(B, full_matrices=True)
            tol = max(B.shape) * np.finfo(float).eps * sv[0]
            rank = int(np.sum(sv > tol))
            Z = Vh[rank:].conj().T
            # orthonormalize in the weighted inner product
            G = Z.conj().T @ (self.mass @ Z)
            L = la.cholesky(0.5 * (G + G.conj().T), lower=True)
            self._cache["kernel"] = la.solve_triangular(L, Z.conj().T, lower=True).conj().T
            self._cache["kernel_gap"] = float(sv[rank - 1] / sv[0])
        return self._cache["kernel"]


def assemble_transverse(label: SigmaLabel, mesh, degree: int = 1, discretization: str = "galerkin",
                        order: int = 4) -> AssembledOperator:
    """Gamma <v, u> + Q_alpha(v, u) on zero-trace fields (galerkin) or Gamma + Wh Wh* (compatible)."""
    space = _space(mesh, degree)
    l2 = hyperbolic_l2(space, order)
    free = space.interior
    if discretization == "galerkin":
        A = label.gamma * l2.mass + l2.matrix(W + label.alpha)
        A = A[free][:, free].tocsr()
        return AssembledOperator("transverse", label, l2, discretization, free, stiffness=A)
    if discretization == "compatible":
        return AssembledOperator("transverse", label, l2, discretization, free, coupling=_coupling(l2, label))
    raise ValueError(f"unknown discretization {discretization!r}")


def assemble_tangential(label: SigmaLabel, mesh, degree: int = 1, discretization: str = "galerkin",
                        order: int = 4) -> AssembledOperator:
    """Gamma <v, u> + <Wbar_sigma v, Wbar_sigma u> on the full space (natural boundary condition)."""
    space = _space(mesh, degree)
    l2 = hyperbolic_l2(space, order)
    free = np.arange(space.n_dofs)
    if discretization == "galerkin":
        A = (label.gamma * l2.mass + l2.matrix(wbar_sigma(label))).tocsr()
        return AssembledOperator("tangential", label, l2, discretization, free, stiffness=A)
    if discretization == "compatible":
        return AssembledOperator("tangential", label, l2, discretization, free, coupling=_coupling(l2, label))
    raise ValueError(f"unknown discretization {discretization!r}")


def hermitian_residual(op: AssembledOperator) -> float:
    A = op.matrix()
    return float(np.abs(A - A.conj().T).max() / max(np.abs(A).max(), 1e-300))


# ---------------------------------------------------------------------------
# solves


def _load(l2: WeightedL2, f) -> np.ndarray:
    if isinstance(f, CoefficientField) and f.space is not l2.space:
        raise ValueError("right-hand side lives on a different space")
    return l2.load(f)


def _field(space: FESpace, free: np.ndarray, x: np.ndarray) -> CoefficientField:
    v = np.zeros(space.n_dofs, dtype=complex)
    v[free] = x
    return CoefficientField(space, v)


@dataclass(frozen=True)
class TransverseSolution:
    u: CoefficientField
    residual: float
    ratio: float          # |u|_{W^1_sigma} / |f|


def solve_transverse(label: SigmaLabel, f, mesh=None, degree: int = 1, operator: AssembledOperator | None = None,
                     x0: np.ndarray | None = None, method: str = "auto", shift: float = 0.0) -> TransverseSolution:
    """Zero-trace u with <(Gamma + shift) u + P_perp u, v> = <f, v> for zero-trace v."""
    op = operator if operator is not None else assemble_transverse(label, mesh, degree)
    l2 = op.l2
    b = _load(l2, f)[op.free]
    if not np.any(b):
        u = CoefficientField.zeros(op.space)
        return TransverseSolution(u, 0.0, 0.0)
    x = op.solve(b, shift=shift, x0=None if x0 is None else x0[op.free], method=method)
    u = _field(op.space, op.free, x)
    fn = l2.norm(f)
    return TransverseSolution(u, op.last_residual, sigma_norm(1, label, u, l2) / fn if fn > 0 else math.inf)


@dataclass(frozen=True)
class KernelBasis:
    """Weighted-L^2 orthonormal fields spanning s^a (w - w_c)^j, j <= degree_cap."""

    label: SigmaLabel
    degree_cap: int
    center: complex
    members: tuple[CoefficientField, ...]

    def __len__(self) -> int:
        return len(self.members)

    def coefficients(self) -> np.ndarray:
        if not self.members:
            return np.zeros((0, 0), dtype=complex)
        return np.column_stack([m.values for m in self.members])

    def gram(self, l2: WeightedL2 | None = None) -> np.ndarray:
        if not self.members:
            return np.zeros((0, 0), dtype=complex)
        l2 = l2 or hyperbolic_l2(self.members[0].space)
        K = self.coefficients()
        return K.conj().T @ (l2.mass @ K)


def _mgs(vectors: Sequence[np.ndarray], M) -> list[np.ndarray]:
    """Modified Gram-Schmidt in the M inner product, two passes."""
    out = []
    for v in vectors:
        v = v.astype(complex).copy()
        for _ in range(2):
            for q in out:
                v = v - q * np.vdot(q, M @ v)
        nrm = math.sqrt(max(float(np.real(np.vdot(v, M @ v))), 0.0))
        if nrm < 1e-13:
            raise SolverError("kernel monomials became numerically dependent")
        out.append(v / nrm)
    return out


def kernel_basis(label: SigmaLabel, domain: DomainSpec, mesh, degree_cap: int, degree: int = 1) -> KernelBasis:
    """Orthonormalized s^((lambda+nu)/2) (w - w_c)^j, 0 <= j <= degree_cap, w_c the centroid.

    Empty when Gamma > 0: the tangential operator is then injective.
    """
    if degree_cap < 0:
        raise ValueError("degree_cap must be non-negative")
    space = _space(mesh, degree)
    wc = domain.centroid
    if not label.is_harmonic:
        return KernelBasis(label, degree_cap, wc, ())
    l2 = hyperbolic_l2(space)
    raw = [space.interpolate(monomial_field(label, j, wc).value) for j in range(degree_cap + 1)]
    vecs = _mgs(raw, l2.mass)
    return KernelBasis(label, degree_cap, wc, tuple(CoefficientField(space, v) for v in vecs))


@dataclass(frozen=True)
class TangentialSolution:
    u: CoefficientField
    kernel_part: CoefficientField
    residual: float


def solve_tangential(label: SigmaLabel, f, mesh=None, degree_cap: int | None = 4, domain: DomainSpec | None = None,
                     degree: int = 1, operator: AssembledOperator | None = None, shift: float = 0.0,
                     method: str = "auto") -> TangentialSolution:
    """Solve (P_top + shift) u = f on the complement of the discrete kernel.

    At Gamma + shift = 0 the right-hand side is first projected off the kernel:
    the monomial KernelBasis (galerkin, degree_cap given) or the exact discrete
    kernel of the compatible operator (degree_cap None).  The returned u is
    orthogonal to that kernel.
    """
    op = operator if operator is not None else assemble_tangential(label, mesh, degree)
    l2, space = op.l2, op.space
    b = _load(l2, f)
    zero = CoefficientField.zeros(space)
    deflate = abs(label.gamma + shift) < 1e-12
    Y = None
    kpart = zero
    if deflate and degree_cap is None:
        if op.discretization != "compatible":
            raise ValueError("the exact discrete kernel needs the compatible discretization")
        fh = l2.solve_mass(b)
        x, k = op.solve_kernel_orthogonal(fh)
        return TangentialSolution(CoefficientField(space, x), CoefficientField(space, k), op.last_residual)
    if deflate:
        if domain is None:
            raise ValueError("the monomial kernel basis needs the domain (for its centroid)")
        K = kernel_basis(label, domain, space, degree_cap).coefficients()
        MK = l2.mass @ K
        G = K.conj().T @ MK
        c = la.solve(G, K.conj().T @ b, assume_a="her")
        kpart = CoefficientField(space, K @ c)
        b = b - MK @ c
        Y = MK
    if not np.any(np.abs(b) > 1e-14 * max(np.abs(_load(l2, f)).max(), 1e-300)):
        return TangentialSolution(zero, kpart, 0.0)
    x = op.solve(b, shift=shift, constraint=Y, method=method)
    return TangentialSolution(CoefficientField(space, x), kpart, op.last_residual)


def eigen_relation_residual(label: SigmaLabel, field_: AnalyticField, l2: WeightedL2, shift: float = 1.0) -> float:
    """|(shift + P_top) f - (shift + Gamma) f| / |f| in the weak form, f analytic.

    The tangential form applied to f is (shift + Gamma) <f, v> + <Wbar_sigma f, Wbar_sigma v>;
    the residual load <Wbar_sigma f, Wbar_sigma v> is measured in the dual norm.
    """
    wf = analytic_op_values(l2, wbar_sigma(label), field_)
    r = l2.load_op(wf, wbar_sigma(label))
    # dual norm of the residual functional: sqrt(r^H M^-1 r)
    y = l2.solve_mass(r)
    dual = math.sqrt(max(float(np.real(np.vdot(r, y))), 0.0))
    return dual / l2.norm(field_.value)


# ---------------------------------------------------------------------------
# estimate constants


def random_bump(space: FESpace, rng: np.random.Generator, domain: DomainSpec, count: int = 3,
                zero_trace: bool = True) -> CoefficientField:
    """Sum of a few compactly supported bumps with random centres, radii, phases and waves.

    The draws do not depend on the mesh, so the same generator state gives the same
    continuous field on every refinement level.
    """
    t0, t1, s0, s1 = domain.bbox
    total = np.zeros(space.n_dofs, dtype=complex)
    for _ in range(count):
        while True:
            c = complex(rng.uniform(t0, t1), rng.uniform(s0, s1))
            if domain.contains(np.array([c.real]), np.array([c.imag]))[0]:
                break
        # radius from the Euclidean distance to the boundary
        dist = float(np.min(np.abs(domain.boundary[:, 0] + 1j * domain.boundary[:, 1] - c)))
        r = rng.uniform(0.4, 0.9) * dist if zero_trace else rng.uniform(0.3, 0.8) * (s1 - s0)
        if r < 1e-3:
            continue
        wave = complex(*rng.normal(scale=3.0, size=2))
        amp = complex(*rng.normal(size=2))
        total += amp * space.interpolate(bump_field(c, r, wave).value)
    u = CoefficientField(space, total)
    if zero_trace:
        v = u.values.copy()
        v[space.boundary] = 0
        u = CoefficientField(space, v)
    return u


def random_smooth(space: FESpace, rng: np.random.Generator, domain: DomainSpec, terms: int = 4) -> CoefficientField:
    """Smooth field without boundary conditions: random low-order trigonometric polynomial."""
    t0, t1, s0, s1 = domain.bbox
    L = max(t1 - t0, s1 - s0)
    coefs = rng.normal(size=(terms, 2)) + 1j * rng.normal(size=(terms, 2))
    waves = rng.normal(scale=2.0 * math.pi / L, size=(terms, 2))

    def fn(t, s):
        out = 0
        for (a, b), (kt, ks) in zip(coefs, waves):
            out = out + a * np.exp(1j * (kt * t + ks * s)) + b * np.cos(kt * s - ks * t)
        return out

    return CoefficientField.interpolate(space, fn)


@dataclass(frozen=True)
class ConstantsRow:
    label: SigmaLabel
    ratio: float


@dataclass(frozen=True)
class ConstantsTable:
    problem: str
    rows: tuple[ConstantsRow, ...]

    @property
    def max_ratio(self) -> float:
        return max((r.ratio for r in self.rows), default=0.0)

    def to_csv_rows(self):
        return [(i, r.label.gamma, r.label.lam, r.ratio) for i, r in enumerate(self.rows)]


def _sorted_labels(labels):
    return sorted(labels, key=lambda l: (l.gamma, abs(l.lam), l.lam, l.q, l.key))


def measure_estimate_constants(problem: str, labels: Sequence[SigmaLabel], mesh, domain: DomainSpec,
                               samples: int = 3, seed: int = 0, degree: int = 1,
                               delta: float = 1.0) -> ConstantsTable:
    """Per label, the largest ratio left-norm / right-norm over `samples` random test fields.

    basic:             |u|^2_{W^1_sigma} / (Q_alpha(u, u) + Gamma |u|^2), zero-trace bumps
    shift:             (|u|^2 + Q_alpha(u, u)) / (|u|^2 + Q_(alpha+delta)(u, u)), same bumps
    transverse-iso:    |u|_{W^1_sigma} / |P_perp u|, u solving the transverse problem
    exact:             |G^2 u| / |P_top u|, u the kernel-orthogonal tangential solution
    weighted:          |u|_{R^2 W^0} / |P_top u|, same solves
    """
    space = _space(mesh, degree)
    l2 = hyperbolic_l2(space)
    rows = []
    for label in _sorted_labels(labels):
        rng = np.random.default_rng([seed, label.q, int(round(1e6 * label.gamma)) % 2**32,
                                     int(round(1e6 * label.lam)) % 2**32])
        best = 0.0
        for _ in range(samples):
            best = max(best, _one_ratio(problem, label, space, l2, domain, rng, delta))
        rows.append(ConstantsRow(label, best))
    return ConstantsTable(problem, tuple(rows))


def _one_ratio(problem, label, space, l2, domain, rng, delta=1.0) -> float:
    if problem == "basic":
        u = random_bump(space, rng, domain)
        ql = l2.norm(l2.op_values(W + label.alpha, u)) ** 2 + label.gamma * l2.norm(u) ** 2
        return sigma_norm(1, label, u, l2) ** 2 / ql
    if problem == "shift":
        u = random_bump(space, rng, domain)
        n2 = l2.norm(u) ** 2
        qa = l2.norm(l2.op_values(W + label.alpha, u)) ** 2
        qd = l2.norm(l2.op_values(W + (label.alpha + delta), u)) ** 2
        return (n2 + qa) / (n2 + qd)
    if problem == "transverse-iso":
        f = random_smooth(space, rng, domain)
        op = _cached_operator(space, label, "transverse", "galerkin")
        sol = solve_transverse(label, f, operator=op)
        pu = _applied_norm(op, sol.u)
        return sigma_norm(1, label, sol.u, l2) / pu
    if problem in ("exact", "weighted"):
        f = random_smooth(space, rng, domain)
        disc = "compatible" if label.is_harmonic else "galerkin"
        op = _cached_operator(space, label, "tangential", disc)
        sol = solve_tangential(label, f, operator=op, degree_cap=None)
        pu = _applied_norm(op, sol.u)
        if problem == "exact":
            return (1.0 + label.gamma) * l2.norm(sol.u) / pu
        return rho_weighted_norm(2, 0, label, domain.rho, sol.u, l2) / pu
    raise ValueError(f"unknown estimate {problem!r}")


def _cached_operator(space, label, which, disc) -> AssembledOperator:
    cache = space.__dict__.setdefault("_operators", {})
    key = (which, disc, round(label.gamma, 12), round(label.lam, 12), round(label.nu, 12))
    if key not in cache:
        fn = assemble_transverse if which == "transverse" else assemble_tangential
        cache[key] = fn(label, space, discretization=disc)
    return cache[key]


def _applied_norm(op: AssembledOperator, u: CoefficientField) -> float:
    """L^2 norm of the discrete image: the Riesz representer of A x in the free space."""
    x = u.values[op.free]
    r = op.apply(x)
    M = op.mass
    y = op._cache.get("mass_lu")
    if y is None:
        y = op._cache["mass_lu"] = spla.splu(M.real.tocsc())
    z = y.solve(np.ascontiguousarray(r.real)) + 1j * y.solve(np.ascontiguousarray(r.imag))
    return math.sqrt(max(float(np.real(np.vdot(z, M @ z))), 0.0))
