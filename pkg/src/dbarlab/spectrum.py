"""Spectral data of a compact normal CR manifold N.

Each eigen-index carries the Kohn Laplacian eigenvalue Gamma and the eigenvalue
lambda of -i times the characteristic derivative.  Synthetic manifolds are
modelled as one finite cochain complex per lambda value; the Hodge Laplacian of
that complex supplies the Gamma values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ZERO_TOL = 1e-9
MIN_SEPARATION = 1e-6


@dataclass(frozen=True)
class SigmaLabel:
    """One eigen-index: degree q, Gamma, lambda, optional Gamma-bar (q = 0), weight nu.

    `key` identifies the label inside its complex: (lambda block, level, index).
    """

    q: int
    gamma: float
    lam: float
    nu: float = 0.0
    gamma_bar: float | None = None
    key: tuple = ()

    @property
    def g(self) -> float:
        if self.q == 0:
            gb = self.gamma_bar if self.gamma_bar is not None else 0.0
            return math.sqrt(1.0 + self.gamma + gb)
        return math.sqrt(1.0 + self.gamma)

    @property
    def alpha(self) -> float:
        return (self.nu + self.lam) / 2.0 - 1.0

    @property
    def kernel_exponent(self) -> float:
        """a with Wbar_sigma s^a = 0, i.e. (lambda + nu) / 2."""
        return (self.lam + self.nu) / 2.0

    @property
    def is_harmonic(self) -> bool:
        return abs(self.gamma) < ZERO_TOL

    def with_nu(self, nu: float) -> "SigmaLabel":
        return SigmaLabel(self.q, self.gamma, self.lam, nu, self.gamma_bar, self.key)


@dataclass(frozen=True)
class SpectrumMeta:
    n: int
    gamma0: float = 1.0
    c_growth: float = 1.0
    min_separation: float = MIN_SEPARATION

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.gamma0 <= 0 or self.c_growth <= 0:
            raise ValueError("gamma0 and c_growth must be positive")


@dataclass
class ValidationReport:
    violations: list[tuple[str, SigmaLabel | None, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def constraints(self) -> set[str]:
        return {v[0] for v in self.violations}

    def add(self, constraint: str, label, message: str):
        self.violations.append((constraint, label, message))


def validate_spectrum(labels, meta: SpectrumMeta, tol: float = 1e-9) -> ValidationReport:
    """Check positivity, the lower bound (c), gap (d), discreteness (f), growth (h), G bookkeeping."""
    rep = ValidationReport()
    n = meta.n
    for lab in labels:
        if not 0 <= lab.q <= n - 2:
            rep.add("degree", lab, f"q={lab.q} outside [0, {n - 2}]")
        if lab.gamma < -tol:
            rep.add("positivity", lab, f"gamma={lab.gamma} < 0")
        bound = -(n - lab.q - 1) * lab.lam
        if lab.gamma < bound - tol:
            rep.add("c", lab, f"gamma={lab.gamma} < -(n-q-1)*lambda = {bound}")
        if tol < lab.gamma < meta.gamma0 - tol:
            rep.add("d", lab, f"gamma={lab.gamma} inside the gap (0, {meta.gamma0})")
        if lab.q >= 1 and abs(lab.lam) > meta.c_growth * (1 + lab.gamma) + tol:
            rep.add("h", lab, f"|lambda|={abs(lab.lam)} > C(1+gamma)")
        if lab.q == 0:
            if lab.gamma_bar is None:
                rep.add("G", lab, "q=0 label without gamma_bar")
            elif abs(lab.gamma_bar - (lab.gamma + (n - 1) * lab.lam)) > tol * (1 + abs(lab.gamma_bar)):
                rep.add("G", lab, "gamma_bar violates gamma_bar = gamma + (n-1) lambda")
        elif lab.gamma_bar is not None:
            rep.add("G", lab, "gamma_bar given for q > 0")
    # discreteness: distinct (gamma, lambda) pairs must be separated
    pts = {}
    for lab in labels:
        pts.setdefault((lab.q, round(lab.gamma, 12), round(lab.lam, 12)), lab)
    by_q: dict[int, list] = {}
    for (q, g, l), lab in pts.items():
        by_q.setdefault(q, []).append((g, l, lab))
    for q, items in by_q.items():
        arr = np.array([(g, l) for g, l, _ in items])
        if len(arr) < 2:
            continue
        d = np.hypot(arr[:, None, 0] - arr[None, :, 0], arr[:, None, 1] - arr[None, :, 1])
        np.fill_diagonal(d, np.inf)
        i, j = np.nonzero(d < meta.min_separation)
        for a, b in zip(i, j):
            if a < b:
                rep.add("f", items[a][2], f"pairs closer than {meta.min_separation}")
    return rep


@dataclass(frozen=True)
class LambdaBlock:
    """Cochain complex V^0 -> ... -> V^qmax for one lambda value.

    `differentials[q]` maps V^q to V^{q+1}; `eigvals[q]`, `eigvecs[q]` diagonalise
    the Hodge Laplacian D*D + DD* at level q (orthonormal columns).
    """

    lam: float
    dims: tuple[int, ...]
    differentials: tuple[np.ndarray, ...]
    eigvals: tuple[np.ndarray, ...]
    eigvecs: tuple[np.ndarray, ...]

    def hodge(self, q: int) -> np.ndarray:
        d = self.dims[q]
        L = np.zeros((d, d), dtype=complex)
        if q < len(self.differentials):
            D = self.differentials[q]
            L += D.conj().T @ D
        if q >= 1:
            D = self.differentials[q - 1]
            L += D @ D.conj().T
        return L

    def transfer(self, q: int) -> np.ndarray:
        """D_q in the eigenbases: maps level-q labels to level-(q+1) labels."""
        if q < 0 or q >= len(self.differentials):
            return np.zeros((self.dims[q + 1] if 0 <= q + 1 < len(self.dims) else 0,
                             self.dims[q] if 0 <= q < len(self.dims) else 0), dtype=complex)
        return self.eigvecs[q + 1].conj().T @ self.differentials[q] @ self.eigvecs[q]


def _diagonalise(block_dims, differentials, lam):
    vals, vecs = [], []
    tmp = LambdaBlock(lam, tuple(block_dims), tuple(differentials), (), ())
    for q in range(len(block_dims)):
        L = tmp.hodge(q)
        L = 0.5 * (L + L.conj().T)
        w, V = np.linalg.eigh(L)
        w = np.where(np.abs(w) < 1e-12, 0.0, w)
        vals.append(w)
        vecs.append(V)
    return LambdaBlock(lam, tuple(block_dims), tuple(differentials), tuple(vals), tuple(vecs))


@dataclass(frozen=True)
class SpectralComplex:
    n: int
    blocks: tuple[LambdaBlock, ...]
    nu: float = 0.0

    @classmethod
    def from_differentials(cls, n: int, blocks: dict, nu: float = 0.0) -> "SpectralComplex":
        """`blocks` maps lambda -> (dims, [D_0, D_1, ...])."""
        out = []
        for lam in sorted(blocks):
            dims, ds = blocks[lam]
            dims = tuple(int(d) for d in dims)
            if len(dims) > n - 1:
                raise ValueError(f"levels must stay within 0..n-2 = {n - 2}")
            ds = [np.asarray(D, dtype=complex) for D in ds]
            for q, D in enumerate(ds):
                if D.shape != (dims[q + 1], dims[q]):
                    raise ValueError(f"D_{q} has shape {D.shape}, expected {(dims[q + 1], dims[q])}")
            ds += [np.zeros((dims[q + 1], dims[q]), dtype=complex) for q in range(len(ds), len(dims) - 1)]
            out.append(_diagonalise(dims, ds, float(lam)))
        return cls(n, tuple(out), nu)

    @property
    def qmax(self) -> int:
        return max(len(b.dims) for b in self.blocks) - 1

    def block(self, lam: float) -> LambdaBlock:
        for b in self.blocks:
            if b.lam == lam:
                return b
        raise KeyError(lam)

    def labels(self, q: int | None = None) -> list[SigmaLabel]:
        out = []
        for bi, b in enumerate(self.blocks):
            for level, vals in enumerate(b.eigvals):
                if q is not None and level != q:
                    continue
                for k, g in enumerate(vals):
                    g = float(g)
                    gb = g + (self.n - 1) * b.lam if level == 0 else None
                    out.append(SigmaLabel(level, g, b.lam, self.nu, gb, (bi, level, k)))
        return out

    def complex_residual(self) -> float:
        r = 0.0
        for b in self.blocks:
            for q in range(len(b.differentials) - 1):
                P = b.differentials[q + 1] @ b.differentials[q]
                if P.size:
                    r = max(r, float(np.abs(P).max()))
        return r


def kohn_rossi_dim(cx: SpectralComplex, q: int) -> int:
    if not 0 <= q <= cx.qmax:
        raise ValueError(f"q must lie in [0, {cx.qmax}]")
    return sum(int(np.sum(np.abs(b.eigvals[q]) < ZERO_TOL)) for b in cx.blocks if q < len(b.eigvals))


def _random_complex(dims, rng):
    """Random differentials with D_{q+1} D_q = 0: each map kills the range of the previous one."""
    ds = []
    prev = None
    for q in range(len(dims) - 1):
        m, k = dims[q + 1], dims[q]
        if prev is not None and prev.size:
            Q, R = np.linalg.qr(prev)
            rank = int(np.sum(np.abs(np.diag(R)) > 1e-10)) if R.size else 0
            Q = Q[:, :rank]
            proj = np.eye(k) - Q @ Q.conj().T
        else:
            proj = np.eye(k)
        avail = int(round(np.real(np.trace(proj))))
        r = int(rng.integers(0, min(m, avail) + 1)) if min(m, avail) > 0 else 0
        A = rng.normal(size=(m, r)) @ rng.normal(size=(r, k))
        D = A @ proj
        ds.append(D.astype(complex))
        prev = D
    return ds


def _scale_to_constraints(dims, ds, lam, n):
    """Rescale the differentials so nonzero Hodge eigenvalues clear the gap and bound (c)."""
    blk = _diagonalise(dims, ds, lam)
    nonzero = [v[v > ZERO_TOL] for v in blk.eigvals]
    lowest = min((v.min() for v in nonzero if v.size), default=None)
    if lowest is None:
        return ds
    need = max(1.0, (n - 1) * max(0.0, -lam))
    f = math.sqrt(need / lowest)
    return [D * f for D in ds]


def synth_complex(n: int, dims, lambda_values, seed: int, nu: float = 0.0,
                  max_tries: int = 200) -> SpectralComplex:
    """Deterministic synthetic complex; one random block per lambda value.

    Blocks whose harmonic part violates the lower bound (c) are resampled.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    dims = [int(d) for d in dims]
    if not dims or len(dims) > n - 1:
        raise ValueError("dims must list between 1 and n-1 levels")
    rng = np.random.default_rng(seed)
    blocks = {}
    for lam in lambda_values:
        lam = float(lam)
        for _ in range(max_tries):
            ds = _scale_to_constraints(dims, _random_complex(dims, rng), lam, n)
            blk = _diagonalise(dims, ds, lam)
            labs = [SigmaLabel(q, float(g), lam, nu, float(g) + (n - 1) * lam if q == 0 else None)
                    for q, vals in enumerate(blk.eigvals) for g in vals]
            rep = validate_spectrum(labs, SpectrumMeta(n, 1.0, 1e12))
            if rep.passed:
                blocks[lam] = (dims, ds)
                break
        else:
            raise RuntimeError(f"no admissible block for lambda={lam} after {max_tries} draws")
    return SpectralComplex.from_differentials(n, blocks, nu)


def growth_constant(labels) -> float:
    """Smallest C with |lambda| <= C (1 + Gamma) over q >= 1 labels (at least 1)."""
    vals = [abs(l.lam) / (1 + l.gamma) for l in labels if l.q >= 1]
    return max([1.0] + vals)


def meta_for(cx: SpectralComplex, gamma0: float = 1.0) -> SpectrumMeta:
    return SpectrumMeta(cx.n, gamma0, growth_constant(cx.labels()))


def sphere_stub_spectrum(n: int, lambda_cap: int, nu: float = 0.0):
    """Illustrative stand-in for the sphere: integer weights, exact at 1 <= q <= n-2.

    Each lambda block is a chain of one-dimensional links V^q -> V^{q+1} with
    eigenvalue 1 + (n-1)|lambda| + q; level 0 carries one extra harmonic class
    when lambda >= 0.  These are not the true sphere eigenvalues.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    levels = n - 1
    blocks = {}
    for lam in range(-lambda_cap, lambda_cap + 1):
        extra = 1 if lam >= 0 else 0
        dims = [1 + extra] + [2] * (levels - 2) + [1]
        ds = []
        for q in range(levels - 1):
            D = np.zeros((dims[q + 1], dims[q]), dtype=complex)
            gam = 1.0 + (n - 1) * abs(lam) + q
            # link the "outgoing" vector of level q to the "incoming" vector of level q+1
            src = dims[q] - 1
            D[0, src] = math.sqrt(gam)
            ds.append(D)
        blocks[lam] = (dims, ds)
    cx = SpectralComplex.from_differentials(n, blocks, nu)
    labels = cx.labels()
    meta = SpectrumMeta(n, 1.0, growth_constant(labels))
    return labels, meta, cx
