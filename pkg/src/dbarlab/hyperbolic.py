"""Geometry of the upper half-plane: points, Mobius maps, domains and their
defining functions, distance cutoffs and ball covers.

Coordinates are w = t + i s with s > 0 and the metric is (dt^2 + ds^2) / s^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import interpolate

MIN_SEGMENTS = 64


@dataclass(frozen=True)
class HalfPlanePoint:
    t: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and math.isfinite(self.s)):
            raise ValueError("point coordinates must be finite")
        if self.s <= 0:
            raise ValueError(f"point must lie in the upper half-plane, got s={self.s}")

    @property
    def w(self) -> complex:
        return complex(self.t, self.s)

    @classmethod
    def from_complex(cls, w: complex) -> "HalfPlanePoint":
        return cls(float(w.real), float(w.imag))


def distance_array(t1, s1, t2, s2) -> np.ndarray:
    """Vectorised hyperbolic distance; the asinh form stays accurate near zero."""
    chord = np.hypot(np.asarray(t1) - t2, np.asarray(s1) - s2)
    return 2.0 * np.arcsinh(chord / (2.0 * np.sqrt(np.asarray(s1) * s2)))


def hyperbolic_distance(p: HalfPlanePoint, q: HalfPlanePoint) -> float:
    return float(distance_array(p.t, p.s, q.t, q.s))


@dataclass(frozen=True)
class MobiusMap:
    """w -> (a w + b) / (c w + d) with real coefficients and ad - bc = 1."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if abs(det - 1.0) > 1e-12:
            raise ValueError(f"Mobius determinant must be 1, got {det!r}")

    def apply(self, w):
        w = np.asarray(w, dtype=complex)
        return (self.a * w + self.b) / (self.c * w + self.d)

    def __call__(self, p: HalfPlanePoint) -> HalfPlanePoint:
        return HalfPlanePoint.from_complex(complex(self.apply(p.w)))

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self after other."""
        m = np.array([[self.a, self.b], [self.c, self.d]]) @ np.array(
            [[other.a, other.b], [other.c, other.d]]
        )
        return MobiusMap.normalized(*m.ravel())

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.d, -self.b, -self.c, self.a)

    @classmethod
    def normalized(cls, a, b, c, d) -> "MobiusMap":
        det = a * d - b * c
        if det <= 0:
            raise ValueError("orientation-reversing or degenerate matrix")
        r = math.sqrt(det)
        return cls(a / r, b / r, c / r, d / r)

    @classmethod
    def sending_i_to(cls, p: HalfPlanePoint) -> "MobiusMap":
        r = math.sqrt(p.s)
        return cls(r, p.t / r, 0.0, 1.0 / r)

    @classmethod
    def rotation_about_i(cls, theta: float) -> "MobiusMap":
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return cls(c, s, -s, c)

    @classmethod
    def random(cls, rng: np.random.Generator, scale: float = 1.0) -> "MobiusMap":
        a, b, c = rng.normal(scale=scale, size=3)
        a = a if abs(a) > 0.2 else 0.2 + abs(a)
        return cls(float(a), float(b), float(c), float((1.0 + b * c) / a))


def mobius_pushforward_factor(m: MobiusMap, p: HalfPlanePoint) -> complex:
    """Unit complex number a with m_* W = a W at m(p).

    W = 2is d/dw; the derivative 1/(cw+d)^2 and the height ratio |cw+d|^2
    combine into conj(cw+d)/(cw+d).
    """
    z = m.c * p.w + m.d
    return complex(np.conj(z) / z)


# ---------------------------------------------------------------------------
# polylines


def _segment_distance(pt, ps, at, as_, bt, bs):
    """Hyperbolic distance from points (P,) to straight segments (S,) -> (P, S).

    Along a segment x(u) = a + u e the quantity |p - x|^2 / s_x is a ratio of a
    quadratic and a linear function of u, so its stationary points solve a
    quadratic; the candidates are those roots plus the endpoints.
    """
    pt = pt[:, None]
    ps = ps[:, None]
    et, es = bt - at, bs - as_
    dt, ds = pt - at, ps - as_
    A = dt * dt + ds * ds
    B = dt * et + ds * es
    C = et * et + es * es
    qa = C * es
    qb = 2.0 * C * as_
    qc = -(2.0 * B * as_ + es * A)

    def ratio(u):
        xt, xs = at + u * et, as_ + u * es
        return ((pt - xt) ** 2 + (ps - xs) ** 2) / xs

    best = np.minimum(ratio(np.zeros_like(A)), ratio(np.ones_like(A)))
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.abs(qa) < 1e-14 * np.maximum(np.abs(qb), 1e-300)
        disc = qb * qb - 4 * qa * qc
        sq = np.sqrt(np.maximum(disc, 0.0))
        roots = [
            np.where(lin, -qc / qb, (-qb + sq) / (2 * qa)),
            np.where(lin, np.nan, (-qb - sq) / (2 * qa)),
        ]
    for u in roots:
        ok = np.isfinite(u) & (u > 0) & (u < 1) & (disc >= 0)
        uu = np.where(ok, u, 0.0)
        best = np.where(ok, np.minimum(best, ratio(uu)), best)
    # cosh d = 1 + |p-x|^2 / (2 s_p s_x)
    return 2.0 * np.arcsinh(np.sqrt(np.maximum(best, 0.0) / (4.0 * ps)))


def polyline_distance(vertices: np.ndarray, t, s, chunk: int = 2048) -> np.ndarray:
    """Hyperbolic distance from points to a closed polyline."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    shape = np.broadcast_shapes(t.shape, s.shape)
    t = np.broadcast_to(t, shape).ravel()
    s = np.broadcast_to(s, shape).ravel()
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    out = np.empty(t.size)
    for i in range(0, t.size, chunk):
        d = _segment_distance(t[i:i + chunk], s[i:i + chunk], a[:, 0], a[:, 1], b[:, 0], b[:, 1])
        out[i:i + chunk] = d.min(axis=1)
    return out.reshape(shape)


def points_inside(vertices: np.ndarray, t, s) -> np.ndarray:
    """Even-odd ray casting against a closed polyline."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    shape = np.broadcast_shapes(t.shape, s.shape)
    t = np.broadcast_to(t, shape).ravel()
    s = np.broadcast_to(s, shape).ravel()
    inside = np.zeros(t.size, dtype=bool)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    for (at, as_), (bt, bs) in zip(a, b):
        crosses = (as_ > s) != (bs > s)
        if not crosses.any():
            continue
        tx = at + (s - as_) * (bt - at) / (bs - as_ + (bs == as_))
        inside ^= crosses & (t < tx)
    return inside.reshape(shape)


def _self_intersects(v: np.ndarray) -> bool:
    a = v
    b = np.roll(v, -1, axis=0)
    n = len(v)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (
            r[..., 0] - p[..., 0]
        )

    A, B = a[:, None, :], b[:, None, :]
    C, D = a[None, :, :], b[None, :, :]
    o1, o2 = orient(A, B, C), orient(A, B, D)
    o3, o4 = orient(C, D, A), orient(C, D, B)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    adjacent = (np.abs(i - j) <= 1) | (np.abs(i - j) == n - 1)
    return bool((hit & ~adjacent).any())


def geodesic_curvature(vertices: np.ndarray) -> np.ndarray:
    """Hyperbolic geodesic curvature at polyline vertices (counter-clockwise).

    Under the conformal factor 1/s the Euclidean curvature k and the inward
    unit normal N combine as s*k + N_s.
    """
    prev = np.roll(vertices, 1, axis=0)
    nxt = np.roll(vertices, -1, axis=0)
    a = vertices - prev
    b = nxt - vertices
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    la, lb, lab = (np.linalg.norm(x, axis=1) for x in (a, b, a + b))
    kappa = 2.0 * cross / (la * lb * lab)
    tangent = (a / la[:, None] + b / lb[:, None])
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    normal_s = tangent[:, 0]
    return vertices[:, 1] * kappa + normal_s


# ---------------------------------------------------------------------------
# domains


def _quintic_step(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


@dataclass(frozen=True, eq=False)
class DefiningFunction:
    """rho = distance to the boundary near it, 1 deep inside, quintic blend between.

    Positive inside D, zero on the boundary, negative outside.
    """

    vertices: np.ndarray
    delta: float
    b1: float = float("nan")
    Bm: tuple = ()

    def distance(self, t, s) -> np.ndarray:
        d = polyline_distance(self.vertices, t, s)
        return np.where(points_inside(self.vertices, t, s), d, -d)

    def evaluate(self, t, s) -> np.ndarray:
        d = self.distance(t, s)
        blend = _quintic_step((d - 3.0 * self.delta) / self.delta)
        return np.where(d <= 3.0 * self.delta, d, d + (1.0 - d) * blend)

    def __call__(self, p):
        if isinstance(p, HalfPlanePoint):
            return float(self.evaluate(p.t, p.s).item())
        t, s = p
        return self.evaluate(t, s)


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Precompact domain bounded by a closed counter-clockwise polyline."""

    boundary: np.ndarray
    nu: float = 0.0
    delta: float | None = None

    def __post_init__(self):
        v = np.asarray(self.boundary, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("boundary must be an (N, 2) array of (t, s) vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        if len(v) < MIN_SEGMENTS:
            raise ValueError(f"boundary needs at least {MIN_SEGMENTS} segments, got {len(v)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("boundary vertices must be finite")
        if v[:, 1].min() <= 0:
            raise ValueError("boundary must stay strictly above s = 0")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area < 0:
            v = v[::-1].copy()
        if _self_intersects(v):
            raise ValueError("boundary polyline is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "boundary", v)
        if self.delta is None:
            object.__setattr__(self, "delta", self.default_delta)
        elif self.delta <= 0:
            raise ValueError("delta must be positive")
        elif 3.0 * self.delta >= self.collar_limit:
            raise ValueError(
                f"delta={self.delta:.4g} exceeds the smooth collar; use delta < {self.collar_limit / 3:.4g}"
            )

    @classmethod
    def disc(cls, center: complex, radius: float, nu: float = 0.0, segments: int = 256,
             delta: float | None = None) -> "DomainSpec":
        theta = 2 * np.pi * (np.arange(segments) + 0.5) / segments
        v = np.column_stack([center.real + radius * np.cos(theta), center.imag + radius * np.sin(theta)])
        return cls(v, nu=nu, delta=delta)

    @classmethod
    def from_vertices(cls, vertices: Sequence[Sequence[float]], nu: float = 0.0,
                      delta: float | None = None, segments: int | None = None) -> "DomainSpec":
        """Periodic spline through the given vertices, resampled to `segments` points."""
        v = np.asarray(vertices, dtype=float)
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        n = segments or max(4 * len(v), 4 * MIN_SEGMENTS)
        closed = np.vstack([v, v[:1]])
        tck, _ = interpolate.splprep([closed[:, 0], closed[:, 1]], s=0, per=True, k=3)
        u = (np.arange(n) + 0.5) / n
        t, s = interpolate.splev(u, tck)
        return cls(np.column_stack([t, s]), nu=nu, delta=delta)

    @cached_property
    def curvature_radius(self) -> float:
        kappa = np.abs(geodesic_curvature(self.boundary))
        return float(1.0 / kappa.max()) if kappa.max() > 0 else math.inf

    @cached_property
    def inradius(self) -> float:
        t, s = self.sample_interior(4000)
        return float(polyline_distance(self.boundary, t, s).max())

    @property
    def collar_limit(self) -> float:
        return min(self.curvature_radius, self.inradius)

    @property
    def default_delta(self) -> float:
        return 0.25 * self.collar_limit

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        v = self.boundary
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()

    @property
    def centroid(self) -> complex:
        v = self.boundary
        x, y = v[:, 0], v[:, 1]
        x1, y1 = np.roll(x, -1), np.roll(y, -1)
        cr = x * y1 - x1 * y
        a = cr.sum() / 2
        return complex((x + x1) @ cr / (6 * a), (y + y1) @ cr / (6 * a))

    def contains(self, t, s) -> np.ndarray:
        return points_inside(self.boundary, t, s)

    def sample_interior(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic grid sample of interior points, roughly `count` of them."""
        t0, t1, s0, s1 = self.bbox
        area = abs(0.5 * np.sum(self.boundary[:, 0] * np.roll(self.boundary[:, 1], -1)
                                - np.roll(self.boundary[:, 0], -1) * self.boundary[:, 1]))
        step = math.sqrt(area / count)
        tt, ss = np.meshgrid(np.arange(t0 + step / 2, t1, step), np.arange(s0 + step / 2, s1, step))
        keep = self.contains(tt, ss)
        return tt[keep], ss[keep]

    @cached_property
    def rho(self) -> DefiningFunction:
        return build_defining_function(self)


def _rho_derivative_bounds(rho: DefiningFunction, t, s, h=1e-5):
    """Finite-difference samples of |W rho| and second derivatives."""
    def grad(tt, ss):
        ft = (rho.evaluate(tt + h, ss) - rho.evaluate(tt - h, ss)) / (2 * h)
        fs = (rho.evaluate(tt, ss + h) - rho.evaluate(tt, ss - h)) / (2 * h)
        return ft, fs

    ft, fs = grad(t, s)
    w1 = np.abs(s * (fs + 1j * ft))
    H = 1e-4
    ft_p, fs_p = grad(t + H, s)
    ft_m, fs_m = grad(t - H, s)
    ft_q, fs_q = grad(t, s + H)
    ft_n, fs_n = grad(t, s - H)
    ftt = (ft_p - ft_m) / (2 * H)
    fss = (fs_q - fs_n) / (2 * H)
    fts = (ft_q - ft_n) / (2 * H)
    second = s * s * np.sqrt(ftt ** 2 + fss ** 2 + 2 * fts ** 2) + w1
    return w1, second


def build_defining_function(domain: DomainSpec) -> DefiningFunction:
    """Construct rho for the domain and record the bounds b1 and B^m.

    b1 is the sampled minimum of |W rho| = |Wbar rho| on the collar; B^m holds
    sampled sup bounds for first and second horizontal derivatives.
    """
    delta = float(domain.delta)
    base = DefiningFunction(domain.boundary, delta)
    t, s = domain.sample_interior(3000)
    d = base.distance(t, s)
    collar = (d > 0.05 * delta) & (d < 2.9 * delta)
    w1, second = _rho_derivative_bounds(base, t, s)
    b1 = float(w1[collar].min()) if collar.any() else float("nan")
    if collar.any() and b1 <= 0:
        raise ValueError("defining function has vanishing gradient on the collar")
    return DefiningFunction(domain.boundary, delta, b1=b1, Bm=(float(w1.max()), float(second.max())))


# ---------------------------------------------------------------------------
# cutoffs and covers


def _smooth_step(y):
    """C-infinity step: 0 for y <= 0, 1 for y >= 1."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f0 = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        f1 = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return f0 / (f0 + f1)


def _smooth_step_derivative(y):
    y = np.asarray(y, dtype=float)
    inside = (y > 0) & (y < 1)
    yy = np.where(inside, y, 0.5)
    f0 = np.exp(-1.0 / yy)
    f1 = np.exp(-1.0 / (1.0 - yy))
    df0 = f0 / yy ** 2
    df1 = -f1 / (1.0 - yy) ** 2
    val = (df0 * (f0 + f1) - f0 * (df0 + df1)) / (f0 + f1) ** 2
    return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class DistanceCutoff:
    """psi(d(., center)^2) with psi = 1 on [0, r_in^2] and 0 beyond r_out^2."""

    center: HalfPlanePoint
    r_inner: float
    r_outer: float

    def profile(self, x):
        a, b = self.r_inner ** 2, self.r_outer ** 2
        return _smooth_step((b - np.abs(x)) / (b - a))

    def profile_derivative(self, x):
        a, b = self.r_inner ** 2, self.r_outer ** 2
        return -np.sign(x) * _smooth_step_derivative((b - np.abs(x)) / (b - a)) / (b - a)

    def __call__(self, t, s):
        d = distance_array(t, s, self.center.t, self.center.s)
        return self.profile(d * d)

    def _grad_d2(self, t, s):
        tc, sc = self.center.t, self.center.s
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        r2 = (t - tc) ** 2 + (s - sc) ** 2
        x = 1.0 + r2 / (2 * s * sc)
        d = distance_array(t, s, tc, sc)
        xt = (t - tc) / (s * sc)
        xs = (s - sc) / (s * sc) - r2 / (2 * s * s * sc)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(d > 1e-300, 2.0 * d / np.sqrt(np.maximum(x * x - 1.0, 1e-300)), 2.0)
        return fac * xt, fac * xs, d

    def W(self, t, s):
        gt, gs, d = self._grad_d2(t, s)
        return self.profile_derivative(d * d) * s * (gs + 1j * gt)

    def Wbar(self, t, s):
        gt, gs, d = self._grad_d2(t, s)
        return self.profile_derivative(d * d) * s * (gs - 1j * gt)


def cutoff_pair(center: HalfPlanePoint, r_inner: float, r_outer: float):
    """(xi, zeta): xi = 1 on B(r_inner), supported in B(r_outer); zeta = 1 on supp xi."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    xi = DistanceCutoff(center, r_inner, r_outer)
    zeta = DistanceCutoff(center, r_outer, 2 * r_outer - r_inner)
    return xi, zeta


def geodesic_polar_grid(center: HalfPlanePoint, radii, n_angles: int):
    """Points at the given hyperbolic radii around `center`, transported from i."""
    radii = np.asarray(radii, dtype=float)
    theta = 2 * np.pi * np.arange(n_angles) / n_angles
    R, TH = np.meshgrid(radii, theta, indexing="ij")
    # the point at distance r above i is i e^r; rotate about i, then move i to center
    w = 1j * np.exp(R)
    z = np.empty_like(w)
    for k, th in enumerate(theta):
        z[:, k] = MobiusMap.rotation_about_i(th).apply(w[:, k])
    z = MobiusMap.sending_i_to(center).apply(z)
    return z.real, z.imag


def hyperbolic_disc_area(r: float) -> float:
    return 4.0 * math.pi * math.sinh(r / 2.0) ** 2


def cover_multiplicity_bound(eps: float, delta: float) -> float:
    return hyperbolic_disc_area(2 * delta + eps) / hyperbolic_disc_area(eps / 2)


def ball_cover(domain: DomainSpec, eps: float, delta: float, candidates=None) -> list[HalfPlanePoint]:
    """Greedy maximal family of centres whose eps/2-balls are pairwise disjoint.

    Candidates default to a fine interior grid plus the boundary vertices; by
    maximality every candidate lies within eps of a chosen centre.
    """
    if not 0 < eps < delta:
        raise ValueError("need 0 < eps < delta")
    if candidates is None:
        t0, t1, s0, s1 = domain.bbox
        step = eps * s0 / 6.0
        tt, ss = np.meshgrid(np.arange(t0, t1 + step, step), np.arange(s0, s1 + step, step))
        keep = domain.contains(tt, ss)
        ct = np.concatenate([tt[keep], domain.boundary[:, 0]])
        cs = np.concatenate([ss[keep], domain.boundary[:, 1]])
    else:
        ct, cs = (np.asarray(x, dtype=float) for x in candidates)
    order = np.lexsort((ct, cs))
    ct, cs = ct[order], cs[order]
    chosen_t: list[float] = []
    chosen_s: list[float] = []
    nearest = np.full(ct.size, np.inf)
    for k in range(ct.size):
        if nearest[k] < eps:
            continue
        chosen_t.append(ct[k])
        chosen_s.append(cs[k])
        nearest = np.minimum(nearest, distance_array(ct, cs, ct[k], cs[k]))
    return [HalfPlanePoint(a, b) for a, b in zip(chosen_t, chosen_s)]


def cover_multiplicity(centers: Sequence[HalfPlanePoint], delta: float) -> int:
    """Largest number of delta-balls meeting a single delta-ball (itself included)."""
    t = np.array([c.t for c in centers])
    s = np.array([c.s for c in centers])
    d = distance_array(t[:, None], s[:, None], t[None, :], s[None, :])
    return int((d < 2 * delta).sum(axis=1).max())
