"""(0,q)-forms on the half-space model as finitely supported families of reduced fields.

A form of degree q has a tangential slot for each label of degree q and a
transverse slot for each label of degree q - 1.  Within a lambda block the
cochain maps of the spectral complex mix slots; across blocks nothing couples.
The derivative along the transverse direction acts slot by slot as
Wh = P0 Wbar_sigma (see solver), and its adjoint as the matrix adjoint Wh*.
Because Wh depends on lambda alone it commutes with the block maps, which makes
the discrete complex exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse.linalg as spla

from .fem import FESpace
from .halfplane import CoefficientField, WeightedL2, hyperbolic_l2
from .hyperbolic import DomainSpec
from .solver import (AssembledOperator, SolverError, _coupling, _space, assemble_tangential,
                     assemble_transverse, kernel_basis)
from .spectrum import SigmaLabel, SpectralComplex


class FormError(ValueError):
    """Mismatched or ill-formed forms."""


class DomainViolation(FormError):
    """A transverse slot does not have zero trace."""


class UnsupportedDegree(FormError):
    pass


class RejectedInput(FormError):
    """Preconditions of the d-bar solve fail; `diagnostics` holds the measured residuals."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# transfer blocks


@dataclass(frozen=True, eq=False)
class TransferBlocks:
    """Per lambda block, the cochain maps D_q written in the Hodge eigenbases."""

    spectrum: SpectralComplex

    @classmethod
    def from_complex(cls, cx: SpectralComplex) -> "TransferBlocks":
        return cls(cx)

    def matrix(self, block: int, q: int) -> np.ndarray:
        """Level q -> level q+1 map of one block (empty when a level is missing)."""
        b = self.spectrum.blocks[block]
        if q < 0 or q + 1 >= len(b.dims):
            rows = b.dims[q + 1] if 0 <= q + 1 < len(b.dims) else 0
            cols = b.dims[q] if 0 <= q < len(b.dims) else 0
            return np.zeros((rows, cols), dtype=complex)
        return b.transfer(q)

    def labels(self, q: int) -> list[SigmaLabel]:
        if q < 0:
            return []
        return self.spectrum.labels(q)

    def composition_residual(self) -> float:
        r = 0.0
        for bi, b in enumerate(self.spectrum.blocks):
            for q in range(len(b.dims) - 2):
                P = self.matrix(bi, q + 1) @ self.matrix(bi, q)
                if P.size:
                    r = max(r, float(np.abs(P).max()))
        return r


# ---------------------------------------------------------------------------
# forms


@dataclass(frozen=True, eq=False)
class FourierForm:
    """Tangential slots `top` (labels of degree q), transverse slots `bot` (degree q - 1)."""

    q: int
    top: Mapping[SigmaLabel, CoefficientField]
    bot: Mapping[SigmaLabel, CoefficientField]
    spectrum: SpectralComplex
    space: FESpace

    def __post_init__(self):
        known = set(self.spectrum.labels())
        for slot, deg in ((self.top, self.q), (self.bot, self.q - 1)):
            for lab, f in slot.items():
                if lab.q != deg:
                    raise FormError(f"label of degree {lab.q} in a slot of degree {deg}")
                if lab not in known:
                    raise FormError(f"label {lab} is not part of the spectrum")
                if f.space is not self.space:
                    raise FormError("slot field on a different space")
                if f.broken:
                    raise FormError("slot fields must be continuous")
        object.__setattr__(self, "top", dict(sorted(self.top.items(), key=lambda kv: kv[0].key)))
        object.__setattr__(self, "bot", dict(sorted(self.bot.items(), key=lambda kv: kv[0].key)))

    @classmethod
    def zero(cls, q: int, spectrum: SpectralComplex, space: FESpace) -> "FourierForm":
        return cls(q, {}, {}, spectrum, space)

    def slots(self):
        yield from (("top", lab, f) for lab, f in self.top.items())
        yield from (("bot", lab, f) for lab, f in self.bot.items())

    def _check_compatible(self, other: "FourierForm"):
        if other.q != self.q or other.spectrum is not self.spectrum or other.space is not self.space:
            raise FormError("forms differ in degree, spectrum or mesh")

    def _combine(self, other, sign):
        self._check_compatible(other)
        out = []
        for a, b in ((self.top, other.top), (self.bot, other.bot)):
            d = dict(a)
            for lab, f in b.items():
                d[lab] = d[lab] + sign * f if lab in d else sign * f
            out.append(d)
        return FourierForm(self.q, out[0], out[1], self.spectrum, self.space)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, k):
        return FourierForm(self.q, {l: k * f for l, f in self.top.items()},
                           {l: k * f for l, f in self.bot.items()}, self.spectrum, self.space)

    __rmul__ = __mul__

    def max_bot_trace(self) -> float:
        return max((f.trace_max() for f in self.bot.values()), default=0.0)


def inner_product(phi: FourierForm, psi: FourierForm, l2: WeightedL2 | None = None) -> complex:
    """Sum of slotwise weighted L^2 inner products over shared slots."""
    phi._check_compatible(psi)
    M = (l2 or hyperbolic_l2(phi.space)).mass
    total = 0j
    for a, b in ((phi.top, psi.top), (phi.bot, psi.bot)):
        for lab, f in a.items():
            g = b.get(lab)
            if g is not None:
                total += np.vdot(g.values, M @ f.values)
    return complex(total)


def form_norm(phi: FourierForm) -> float:
    return math.sqrt(max(inner_product(phi, phi).real, 0.0))


def slot_norms(phi: FourierForm) -> dict:
    l2 = hyperbolic_l2(phi.space)
    return {(kind, lab.key): l2.norm(f) for kind, lab, f in phi.slots()}


# ---------------------------------------------------------------------------
# slot operators Wh, Wh*


class _SlotOperators:
    """Wh = M00^-1 B0 (full -> interior) and Wh* = M^-1 B0^H (interior -> full)."""

    def __init__(self, l2: WeightedL2):
        self.l2 = l2
        sp_ = l2.space
        self.interior = sp_.interior
        M = l2.mass
        self.M00_lu = spla.splu(M[self.interior][:, self.interior].real.tocsc())
        self.n = sp_.n_dofs

    @classmethod
    def of(cls, l2: WeightedL2) -> "_SlotOperators":
        if "_slot_ops" not in l2.__dict__:
            l2.__dict__["_slot_ops"] = cls(l2)
        return l2.__dict__["_slot_ops"]

    @staticmethod
    def _solve(lu, b):
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))

    def wh(self, label: SigmaLabel, x: np.ndarray) -> np.ndarray:
        B = _coupling(self.l2, label)
        out = np.zeros(self.n, dtype=complex)
        out[self.interior] = self._solve(self.M00_lu, B @ x)
        return out

    def wh_star(self, label: SigmaLabel, y: np.ndarray) -> np.ndarray:
        B = _coupling(self.l2, label)
        return self.l2.solve_mass(B.conj().T @ y[self.interior])


def _lookup(spectrum: SpectralComplex, q: int) -> dict:
    """(block, index) -> label at degree q."""
    return {(lab.key[0], lab.key[2]): lab for lab in spectrum.labels(q)} if q >= 0 else {}


def _mix(blocks: TransferBlocks, src: Mapping[SigmaLabel, CoefficientField], q: int, adjoint: bool,
         space: FESpace) -> dict:
    """Apply D_q (level q -> q+1) or, with `adjoint`, D_{q}^H (level q+1 -> q) to a slot family."""
    target = _lookup(blocks.spectrum, q if adjoint else q + 1)
    acc: dict[SigmaLabel, np.ndarray] = {}
    for lab, f in src.items():
        bi, level, k = lab.key
        T = blocks.matrix(bi, q)
        col = T[k].conj() if adjoint else T[:, k]
        for j, c in enumerate(col):
            if c == 0:
                continue
            tl = target[(bi, j)]
            acc[tl] = acc.get(tl, 0) + c * f.values
    return {lab: CoefficientField(space, v) for lab, v in acc.items()}


def _add_into(d: dict, lab: SigmaLabel, f: CoefficientField):
    d[lab] = d[lab] + f if lab in d else f


def apply_dbar(phi: FourierForm, blocks: TransferBlocks) -> FourierForm:
    """(dbar phi)^top = D_q phi^top; (dbar phi)^bot = Wh phi^top - D_(q-1) phi^bot."""
    if blocks.spectrum is not phi.spectrum:
        raise FormError("transfer blocks belong to a different spectrum")
    space = phi.space
    ops = _SlotOperators.of(hyperbolic_l2(space))
    top = _mix(blocks, phi.top, phi.q, False, space)
    bot: dict = {}
    for lab, f in phi.top.items():
        _add_into(bot, lab, CoefficientField(space, ops.wh(lab, f.values)))
    for lab, f in _mix(blocks, phi.bot, phi.q - 1, False, space).items():
        _add_into(bot, lab, -f)
    return FourierForm(phi.q + 1, top, bot, phi.spectrum, space)


def apply_dbar_star(phi: FourierForm, blocks: TransferBlocks) -> FourierForm:
    """(dbar* phi)^top = D^H phi^top + Wh* phi^bot; (dbar* phi)^bot = -D^H phi^bot."""
    if blocks.spectrum is not phi.spectrum:
        raise FormError("transfer blocks belong to a different spectrum")
    if phi.q < 1:
        raise FormError("dbar* lowers the degree; q must be at least 1")
    space = phi.space
    ops = _SlotOperators.of(hyperbolic_l2(space))
    top = _mix(blocks, phi.top, phi.q - 1, True, space)
    for lab, f in phi.bot.items():
        _add_into(top, lab, CoefficientField(space, ops.wh_star(lab, f.values)))
    bot = {lab: -f for lab, f in _mix(blocks, phi.bot, phi.q - 2, True, space).items()}
    return FourierForm(phi.q - 1, top, bot, phi.spectrum, space)


def apply_box(phi: FourierForm, blocks: TransferBlocks, trace_tol: float = 1e-12) -> FourierForm:
    """Diagonal action: (Gamma + Wh* Wh) on tangential slots, (Gamma + Wh Wh*) on transverse slots."""
    if blocks.spectrum is not phi.spectrum:
        raise FormError("transfer blocks belong to a different spectrum")
    scale = max((np.abs(f.values).max() for f in phi.bot.values()), default=0.0)
    if phi.max_bot_trace() > trace_tol * max(scale, 1.0):
        raise DomainViolation(f"transverse slot with boundary trace {phi.max_bot_trace():.3g}; "
                              "the transverse operator acts on zero-trace fields only")
    space = phi.space
    ops = _SlotOperators.of(hyperbolic_l2(space))
    top = {lab: CoefficientField(space, lab.gamma * f.values + ops.wh_star(lab, ops.wh(lab, f.values)))
           for lab, f in phi.top.items()}
    bot = {lab: CoefficientField(space, lab.gamma * f.values + ops.wh(lab, ops.wh_star(lab, f.values)))
           for lab, f in phi.bot.items()}
    return FourierForm(phi.q, top, bot, phi.spectrum, space)


def apply_box_composed(phi: FourierForm, blocks: TransferBlocks) -> FourierForm:
    """dbar dbar* + dbar* dbar, for comparison with the diagonal form."""
    out = apply_dbar_star(apply_dbar(phi, blocks), blocks)
    if phi.q >= 1:
        out = out + apply_dbar(apply_dbar_star(phi, blocks), blocks)
    return out


# ---------------------------------------------------------------------------
# kernel and solves


def box_kernel_basis(q: int, spectrum: SpectralComplex, mesh, degree_cap: int, domain: DomainSpec,
                     degree: int = 1) -> list[FourierForm]:
    """Monomial kernel members of each harmonic tangential label of degree q, one form per member."""
    if not 1 <= q <= spectrum.n - 2:
        raise UnsupportedDegree(f"q={q} outside [1, n-2] = [1, {spectrum.n - 2}]")
    space = _space(mesh, degree)
    out = []
    for lab in spectrum.labels(q):
        if not lab.is_harmonic:
            continue
        for member in kernel_basis(lab, domain, space, degree_cap).members:
            out.append(FourierForm(q, {lab: member}, {}, spectrum, space))
    return out


def _operator(space: FESpace, label: SigmaLabel, which: str) -> AssembledOperator:
    cache = space.__dict__.setdefault("_compatible_ops", {})
    key = (which, round(label.gamma, 12), round(label.kernel_exponent, 14))
    if key not in cache:
        fn = assemble_tangential if which == "tangential" else assemble_transverse
        cache[key] = fn(label, space, discretization="compatible")
    return cache[key]


def kernel_projection(phi: FourierForm) -> FourierForm:
    """Orthogonal projection of a form onto the discrete box kernel.

    The kernel sits in the tangential slots of harmonic labels, where it is null(Wh).
    """
    top = {}
    for lab, f in phi.top.items():
        if lab.is_harmonic:
            _, k = _operator(phi.space, lab, "tangential").kernel_split(f.values)
            top[lab] = CoefficientField(phi.space, k)
    return FourierForm(phi.q, top, {}, phi.spectrum, phi.space)


@dataclass(frozen=True)
class BoxSolution:
    form: FourierForm
    kernel_part: FourierForm
    constants: dict = field(default_factory=dict)     # (slot, label key) -> |u| / |f|
    residual: float = 0.0


def solve_box(f: FourierForm, blocks: TransferBlocks, mode: str = "plus_one") -> BoxSolution:
    """(1 + box)^-1 f, or in kernel_orthogonal mode the kernel-orthogonal solution of box u = f - P f."""
    if mode not in ("plus_one", "kernel_orthogonal"):
        raise FormError(f"unknown mode {mode!r}")
    n = f.spectrum.n
    if mode == "kernel_orthogonal" and not 1 <= f.q <= n - 2:
        raise UnsupportedDegree(f"kernel_orthogonal needs 1 <= q <= n-2; got q={f.q}, n={n}")
    space = f.space
    l2 = hyperbolic_l2(space)
    M = l2.mass
    shift = 1.0 if mode == "plus_one" else 0.0
    top, bot, ktop, consts = {}, {}, {}, {}
    res = 0.0
    for lab, g in f.top.items():
        op = _operator(space, lab, "tangential")
        b = M @ g.values
        if not np.any(b):
            x = np.zeros_like(b)
        elif shift == 0.0 and lab.is_harmonic:
            x, k = op.solve_kernel_orthogonal(g.values)
            ktop[lab] = CoefficientField(space, k)
            res = max(res, op.last_residual)
        else:
            x = op.solve(b, shift=shift)
            res = max(res, op.last_residual)
        top[lab] = CoefficientField(space, x)
        consts[("top", lab.key)] = _ratio(l2, x, g.values)
    for lab, g in f.bot.items():
        if g.trace_max() > 1e-12 * max(np.abs(g.values).max(), 1.0):
            raise DomainViolation("transverse data must have zero trace")
        op = _operator(space, lab, "transverse")
        b = (M @ g.values)[op.free]
        x = op.solve(b, shift=shift) if np.any(b) else np.zeros_like(b)
        res = max(res, op.last_residual if np.any(b) else 0.0)
        v = np.zeros(space.n_dofs, dtype=complex)
        v[op.free] = x
        bot[lab] = CoefficientField(space, v)
        consts[("bot", lab.key)] = _ratio(l2, v, g.values)
    out = FourierForm(f.q, top, bot, f.spectrum, space)
    kp = FourierForm(f.q, ktop, {}, f.spectrum, space)
    return BoxSolution(out, kp, consts, res)


def _ratio(l2: WeightedL2, x, g) -> float:
    M = l2.mass
    ng = math.sqrt(max(np.real(np.vdot(g, M @ g)), 0.0))
    nx = math.sqrt(max(np.real(np.vdot(x, M @ x)), 0.0))
    return nx / ng if ng > 0 else 0.0


@dataclass(frozen=True)
class DbarSolution:
    phi: FourierForm
    residual: float            # |dbar phi - varsigma| / |varsigma|
    ratio: float               # |phi| / |varsigma|
    box: BoxSolution | None


def solve_dbar(varsigma: FourierForm, blocks: TransferBlocks, tol: float = 1e-8,
               solver_tol: float = 1e-7) -> DbarSolution:
    """phi = dbar* u with u the kernel-orthogonal solution of box u = varsigma.

    Rejects data that is not closed or has a component in the box kernel.
    """
    n = varsigma.spectrum.n
    if not 1 <= varsigma.q <= n - 2:
        raise UnsupportedDegree(f"q={varsigma.q} outside [1, n-2]")
    size = form_norm(varsigma)
    if size == 0.0:
        zero = FourierForm.zero(varsigma.q - 1, varsigma.spectrum, varsigma.space)
        return DbarSolution(zero, 0.0, 0.0, None)
    closed = form_norm(apply_dbar(varsigma, blocks)) / size
    kernel = form_norm(kernel_projection(varsigma)) / size
    if closed > tol or kernel > tol:
        raise RejectedInput(f"data rejected: |dbar data|/|data| = {closed:.3g}, "
                            f"kernel component {kernel:.3g} (tolerance {tol:g})",
                            {"closedness": closed, "kernel_component": kernel})
    box = solve_box(varsigma, blocks, "kernel_orthogonal")
    phi = apply_dbar_star(box.form, blocks)
    residual = form_norm(apply_dbar(phi, blocks) - varsigma) / size
    if residual > solver_tol:
        raise SolverError(f"d-bar solve residual {residual:.3g} exceeds {solver_tol:g}")
    return DbarSolution(phi, residual, form_norm(phi) / size, box)


def random_form(q: int, spectrum: SpectralComplex, space: FESpace, rng: np.random.Generator,
                fields=None) -> FourierForm:
    """Every slot of degree q filled; `fields(rng)` supplies coefficient vectors (default: iid normal)."""
    def draw():
        if fields is not None:
            return np.asarray(fields(rng), dtype=complex)
        return rng.normal(size=space.n_dofs) + 1j * rng.normal(size=space.n_dofs)

    top = {lab: CoefficientField(space, draw()) for lab in spectrum.labels(q)}
    bot = {}
    if q >= 1:
        for lab in spectrum.labels(q - 1):
            v = draw()
            v[space.boundary] = 0
            bot[lab] = CoefficientField(space, v)
    return FourierForm(q, top, bot, spectrum, space)
