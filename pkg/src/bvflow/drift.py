"""Bounded drifts of bounded variation built from a smooth base plus
coefficient-times-indicator pieces over a region catalogue (balls, boxes,
1-d rays).

The generalized gradient of such a drift is a matrix of signed measures:
an absolutely continuous part (the a.e. Jacobian) plus surface parts on the
region boundaries.  This module extracts those measures analytically,
evaluates the mollified drift a_n = g_n * a and the mollified gradient
grad a_n = (grad a) * g_n by quadrature against the measures (never by
numerically differentiating a_n), and provides tabulated fast paths for
Monte Carlo use.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import quadrature as qd
from .kernels import (Atom, BoxBoundary, Density, SignedMeasureSpec,
                      SphereSurface, kato_classify)
from .quadrature import BumpMollifier


# ---------------------------------------------------------------------------
# Regions


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - self.center, axis=-1) < self.radius

    def ray_segments(self, X, dirs, rmax):
        """Intersection [t0, t1] of rays X + s*dirs, s in [0, rmax], with the ball."""
        X = np.asarray(X, dtype=float)
        q = X[:, None, :] - self.center[None, None, :]
        b = np.einsum("mad,ad->ma", np.broadcast_to(q, (X.shape[0],) + dirs.shape), dirs)
        c = np.sum(q * q, axis=-1) - self.radius ** 2
        disc = b * b - c
        hit = disc > 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = np.clip(-b - sq, 0.0, rmax)
        t1 = np.clip(-b + sq, 0.0, rmax)
        t1 = np.where(hit, t1, 0.0)
        t0 = np.where(hit, t0, 0.0)
        return t0, t1

    def bounding_radius(self, origin):
        return float(np.linalg.norm(self.center - origin) + self.radius)


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if np.any(self.hi <= self.lo):
            raise ValueError("box corners must satisfy lo < hi")

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.all((X > self.lo) & (X < self.hi), axis=-1)

    def ray_segments(self, X, dirs, rmax):
        X = np.asarray(X, dtype=float)
        M, d = X.shape
        A = dirs.shape[0]
        t_lo = np.zeros((M, A))
        t_hi = np.full((M, A), rmax)
        for j in range(d):
            dj = dirs[:, j][None, :]
            xj = X[:, j][:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                s_lo = (self.lo[j] - xj) / dj
                s_hi = (self.hi[j] - xj) / dj
            near = np.where(dj > 0, s_lo, s_hi)
            far = np.where(dj > 0, s_hi, s_lo)
            parallel = np.abs(dj) < 1e-14
            inside_j = (xj > self.lo[j]) & (xj < self.hi[j])
            near = np.where(parallel, np.where(inside_j, 0.0, rmax + 1.0), near)
            far = np.where(parallel, np.where(inside_j, rmax, -1.0), far)
            t_lo = np.maximum(t_lo, near)
            t_hi = np.minimum(t_hi, far)
        t_lo = np.clip(t_lo, 0.0, rmax)
        t_hi = np.clip(t_hi, 0.0, rmax)
        empty = t_hi <= t_lo
        t_lo = np.where(empty, 0.0, t_lo)
        t_hi = np.where(empty, 0.0, t_hi)
        return t_lo, t_hi

    def bounding_radius(self, origin):
        corners = np.array(np.meshgrid(*zip(self.lo, self.hi), indexing="ij"))
        corners = corners.reshape(len(self.lo), -1).T
        return float(np.max(np.linalg.norm(corners - origin, axis=1)))


@dataclass(frozen=True, eq=False)
class Ray:
    """Half-line region in d = 1: {x : side*(x - offset) > 0}."""
    offset: float
    side: int = 1

    def __post_init__(self):
        if self.side not in (-1, 1):
            raise ValueError("ray side must be +1 or -1")

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return self.side * (X[..., 0] - self.offset) > 0

    def ray_segments(self, X, dirs, rmax):
        X = np.asarray(X, dtype=float)
        M = X.shape[0]
        A = dirs.shape[0]
        xj = X[:, 0][:, None]
        dj = dirs[:, 0][None, :]
        dj = np.broadcast_to(dj, (M, A))
        s_cross = (self.offset - xj) / np.where(np.abs(dj) < 1e-300, 1e-300, dj)
        inside0 = self.side * (xj - self.offset) > 0
        going_in = self.side * dj > 0
        t_lo = np.where(inside0, 0.0, np.where(going_in, np.clip(s_cross, 0, rmax), 0.0))
        t_hi = np.where(inside0, np.where(going_in, rmax, np.clip(s_cross, 0, rmax)),
                        np.where(going_in, rmax, 0.0))
        t_hi = np.maximum(t_hi, t_lo)
        return t_lo, t_hi

    def bounding_radius(self, origin):
        return abs(self.offset - float(np.atleast_1d(origin)[0])) + 1.0


Region = Union[Ball, Box, Ray]


# ---------------------------------------------------------------------------
# Drift specification


@dataclass(frozen=True, eq=False)
class SmoothBase:
    """Lipschitz base field with reported norms and optional analytic Jacobian."""
    fn: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]]
    sup_norm: float
    lipschitz: float
    jac_bound: np.ndarray        # entrywise upper bounds |d a^i / d x_j|
    jac_support_radius: float    # gradient negligible outside this ball
    label: str = "base"
    is_zero: bool = False
    jac_breaks: Tuple[Tuple[int, float], ...] = ()  # Jacobian jump hyperplanes


@dataclass(frozen=True, eq=False)
class Piece:
    """One coefficient-times-indicator summand h(x) 1_{x in region}."""
    h: Callable[[np.ndarray], np.ndarray]
    region: Region
    sup_norm: float
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jac_bound: Optional[np.ndarray] = None
    const: Optional[np.ndarray] = None  # set when h is constant

    def h_eval(self, X):
        X = np.asarray(X, dtype=float)
        if self.const is not None:
            return np.broadcast_to(self.const, X.shape).copy()
        return np.asarray(self.h(X))

    def jac_eval(self, X):
        X = np.asarray(X, dtype=float)
        d = X.shape[-1]
        if self.const is not None:
            return np.zeros(X.shape[:-1] + (d, d))
        if self.jac is not None:
            return np.asarray(self.jac(X))
        return _fd_jacobian(self.h, X)


def _fd_jacobian(fn, X, step: float = 1e-6):
    """Central-difference Jacobian, the a.e. gradient fallback."""
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    out = np.empty(X.shape[:-1] + (d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        out[..., :, j] = (np.asarray(fn(X + e)) - np.asarray(fn(X - e))) / (2 * step)
    return out


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Bounded BV drift a(x) = base(x) + sum_k h_k(x) 1_{x in D_k}."""
    dimension: int
    base: SmoothBase
    pieces: Tuple[Piece, ...]
    sup_norm: float
    label: str

    def eval(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        out = np.zeros_like(X2) if self.base.is_zero else np.asarray(self.base.fn(X2))
        out = np.array(out, dtype=float, copy=True)
        for p in self.pieces:
            mask = p.region.contains(X2)
            if np.any(mask):
                out[mask] += p.h_eval(X2[mask])
        return out[0] if single else out

    __call__ = eval

    def jacobian(self, X):
        """Pointwise a.e. Jacobian (density part only; boundaries are null sets)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        d = self.dimension
        out = np.zeros((X2.shape[0], d, d))
        if not self.base.is_zero:
            if self.base.jac is not None:
                out += np.asarray(self.base.jac(X2))
            elif self.base.lipschitz > 0:
                out += _fd_jacobian(self.base.fn, X2)
        for p in self.pieces:
            mask = p.region.contains(X2)
            if np.any(mask) and p.const is None:
                out[mask] += p.jac_eval(X2[mask])
        return out[0] if single else out

    @property
    def is_smooth(self) -> bool:
        return len(self.pieces) == 0

    @property
    def is_zero(self) -> bool:
        return self.base.is_zero and not self.pieces


def drift_eval(spec: DriftSpec, x):
    """Drift value a(x); bounded by the spec's reported sup-norm."""
    return spec.eval(x)


# ---------------------------------------------------------------------------
# Gradient measures


def _interior_density_funcs(spec: DriftSpec, i: int, j: int):
    def density(pts, _s=spec, _i=i, _j=j):
        return _s.jacobian(np.atleast_2d(np.asarray(pts, dtype=float)))[:, _i, _j]
    return density


def _surface_component(piece: Piece, i: int, j: int, sign: float, d: int):
    """Boundary measure of d(h^i 1_D)/dx_j with Jordan sign selection.

    The distributional surface density is -h^i(y) n_j(y) with n the outward
    unit normal (so a 1-d upward jump contributes a positive atom).  The
    ``sign`` argument picks the positive (+1) or negative (-1) part.
    """
    reg = piece.region
    if isinstance(reg, Ray):
        c = np.array([reg.offset])
        hval = float(piece.h_eval(c[None, :])[0, i])
        n_out = -float(reg.side)
        mass = max(sign * (-hval) * n_out, 0.0)
        return Atom(c, mass) if mass > 0 else None

    def dens(pts, normals, _p=piece, _i=i, _j=j, _s=sign):
        hv = _p.h_eval(np.asarray(pts, dtype=float))[..., _i]
        return np.maximum(_s * (-hv) * np.asarray(normals)[..., _j], 0.0)

    if isinstance(reg, Ball):
        return SphereSurface(reg.center, reg.radius, density=dens)
    if isinstance(reg, Box):
        return BoxBoundary(reg.lo, reg.hi, density=dens)
    raise ValueError(f"region {type(reg)!r} has no surface-measure support")


@dataclass(frozen=True, eq=False)
class GradientMeasureMatrix:
    """Matrix of signed measures mu^{ij} = d a^i / d x_j."""
    entries: Tuple[Tuple[SignedMeasureSpec, ...], ...]
    dimension: int

    def entry(self, i: int, j: int) -> SignedMeasureSpec:
        return self.entries[i][j]

    def abs_entry(self, i: int, j: int) -> SignedMeasureSpec:
        return self.entries[i][j].abs_measure()

    def kato_reports(self):
        d = self.dimension
        return {(i, j): kato_classify(self.abs_entry(i, j))
                for i in range(d) for j in range(d)
                if not self.entries[i][j].is_zero}


def gradient_measures(spec: DriftSpec) -> GradientMeasureMatrix:
    """Extract mu^{ij} = d a^i/d x_j as density part + surface parts.

    Density parts carry the a.e. Jacobian of the smooth base and the C^1
    coefficients inside their regions (sign-split pointwise); surface parts
    carry -h^i n_j on each region boundary, split by sign at the nodes.
    """
    d = spec.dimension
    origin = np.zeros(d)
    radius = 1.0
    has_interior = (not spec.base.is_zero and spec.base.lipschitz > 0)
    if has_interior:
        radius = max(radius, spec.base.jac_support_radius)
    for p in spec.pieces:
        radius = max(radius, p.region.bounding_radius(origin))
        if p.const is None:
            has_interior = True

    rows = []
    for i in range(d):
        row = []
        for j in range(d):
            pos, neg = [], []
            if has_interior:
                base_fn = _interior_density_funcs(spec, i, j)
                bnd = float(spec.base.jac_bound[i, j]) if not spec.base.is_zero else 0.0
                for p in spec.pieces:
                    if p.const is None and p.jac_bound is not None:
                        bnd += float(p.jac_bound[i, j])
                pos_fn = lambda pts, _f=base_fn: np.maximum(_f(pts), 0.0)
                neg_fn = lambda pts, _f=base_fn: np.maximum(-_f(pts), 0.0)
                pos.append(Density(origin, pos_fn, bnd, radius))
                neg.append(Density(origin, neg_fn, bnd, radius))
            for p in spec.pieces:
                cp = _surface_component(p, i, j, +1.0, d)
                cn = _surface_component(p, i, j, -1.0, d)
                if cp is not None:
                    pos.append(cp)
                if cn is not None:
                    neg.append(cn)
            row.append(SignedMeasureSpec(tuple(pos), tuple(neg), d))
        rows.append(tuple(row))
    return GradientMeasureMatrix(tuple(rows), d)


# ---------------------------------------------------------------------------
# Mollified drift a_n = g_n * a


def _normalized_directions(d: int, resolution: int):
    dirs, w = qd.unit_directions(d, resolution)
    return dirs, w / w.sum()


def _bump_cdf(bump: BumpMollifier, u, n_gauss: int = 24):
    """Smooth cumulative int_{-rad}^{u} g_n for d = 1 (per-query Gauss).

    Evaluated by fresh quadrature rather than table lookup so that finite
    differences in x see the true derivative, not interpolation kinks.
    """
    u = np.asarray(u, dtype=float)
    rad = bump.radius
    uc = np.clip(u, -rad, rad)
    t, w = qd.gauss_nodes(0.0, 1.0, n_gauss)
    z = -rad + (uc[..., None] + rad) * t
    return np.sum(w * bump.profile(np.abs(z)) * (uc[..., None] + rad), axis=-1)


def _gauss_radial_mass(bump: BumpMollifier, a, b, d: int, n_gauss: int = 24):
    """sigma_{d-1} * int_a^b gamma(s) s^{d-1} ds, vectorised over (a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = qd.gauss_nodes(0.0, 1.0, n_gauss)
    width = np.maximum(b - a, 0.0)
    s = a[..., None] + width[..., None] * t
    vals = bump.profile(s) * s ** (d - 1)
    return qd.sphere_area(d) * np.sum(w * vals * width[..., None], axis=-1)


def _ball_indicator_conv(bump: BumpMollifier, center, radius: float, X):
    """(g_n * 1_Ball)(x), smooth in x, via the spherical-cap fraction.

    For the radial mollifier, (g * 1_B)(x) = int_0^rad gamma(s) s^{d-1}
    sigma_{d-1} frac(s) ds where frac(s) is the fraction of the sphere of
    radius s around x lying inside the ball: closed form in the cosine
    threshold A(s) = (rho^2 + s^2 - R^2) / (2 s rho).
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    rad = bump.radius
    rho = np.maximum(np.linalg.norm(X - np.asarray(center)[None, :], axis=-1), 1e-14)
    b1 = np.abs(rho - radius)
    b2 = rho + radius
    inside = rho < radius
    # full panels [0, b1] count 1 when x is inside the ball, else 0
    v = np.where(inside, _gauss_radial_mass(bump, np.zeros_like(b1),
                                            np.minimum(b1, rad), d), 0.0)
    # transition panel [b1, min(b2, rad)]; for d = 2 the arccos cap fraction
    # has sqrt endpoints, so grade the normalized nodes toward both ends
    lo = np.minimum(b1, rad)
    hi = np.minimum(b2, rad)
    if d == 2:
        t, w = qd.double_graded_nodes(0.0, 1.0, n_panels=4, n=10)
    else:
        t, w = qd.gauss_nodes(0.0, 1.0, 24)
    width = np.maximum(hi - lo, 0.0)
    s = lo[..., None] + width[..., None] * t
    s = np.maximum(s, 1e-14)
    A = (rho[..., None] ** 2 + s ** 2 - radius ** 2) / (2.0 * s * rho[..., None])
    A = np.clip(A, -1.0, 1.0)
    if d == 1:
        raise ValueError("d=1 balls are intervals; use the box route")
    if d == 2:
        frac = np.arccos(A) / np.pi
    else:
        frac = 0.5 * (1.0 - A)
    vals = bump.profile(s) * s ** (d - 1) * frac
    v = v + qd.sphere_area(d) * np.sum(w * vals * width[..., None], axis=-1)
    return v


def _box_indicator_conv(bump: BumpMollifier, lo, hi, X, n_gauss: int = 28):
    """(g_n * 1_Box)(x) by tensor Gauss over the clipped offset rectangle.

    The bump vanishes with all derivatives at its support boundary, so
    clipping the integration rectangle to the support box keeps the value
    smooth in x.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    rad = bump.radius
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if d == 1:
        return _bump_cdf(bump, X[:, 0] - lo[0]) - _bump_cdf(bump, X[:, 0] - hi[0])
    t, w = qd.gauss_nodes(0.0, 1.0, n_gauss)
    axes_nodes, axes_w = [], []
    for j in range(d):
        a = np.clip(X[:, j] - hi[j], -rad, rad)
        b = np.clip(X[:, j] - lo[j], -rad, rad)
        width = np.maximum(b - a, 0.0)
        axes_nodes.append(a[:, None] + width[:, None] * t)
        axes_w.append(width[:, None] * w)
    if d == 2:
        z1 = axes_nodes[0][:, :, None]
        z2 = axes_nodes[1][:, None, :]
        vals = bump.profile(np.sqrt(z1 ** 2 + z2 ** 2))
        return np.einsum("mab,ma,mb->m", vals, axes_w[0], axes_w[1])
    z1 = axes_nodes[0][:, :, None, None]
    z2 = axes_nodes[1][:, None, :, None]
    z3 = axes_nodes[2][:, None, None, :]
    vals = bump.profile(np.sqrt(z1 ** 2 + z2 ** 2 + z3 ** 2))
    return np.einsum("mabc,ma,mb,mc->m", vals, axes_w[0], axes_w[1], axes_w[2])


class MollifiedDriftField:
    """Evaluates a_n(x) = (g_n * a)(x) by quadrature against the drift.

    The smooth base is convolved on a normalized node set over the mollifier
    ball (a convex combination, so sup-norm bounds are preserved exactly);
    indicator pieces integrate the radial bump mass along each direction's
    intersection with the region, split at the region boundary so every
    radial integrand is smooth.
    """

    def __init__(self, spec: DriftSpec, n: int, resolution: int = 12,
                 n_radial: int = 10):
        self.spec = spec
        self.n = int(n)
        self.bump = BumpMollifier(spec.dimension, n)
        self.label = f"{spec.label}|mollified(n={n})"
        d = spec.dimension
        self._dirs, self._dir_w = _normalized_directions(d, resolution)
        if not spec.base.is_zero:
            self._offsets, self._ball_w = self.bump.ball_nodes(
                n_radial=n_radial, resolution=resolution)
        self._gauss = qd.gauss_nodes(0.0, 1.0, n_radial)

    def eval(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        M, d = X2.shape
        out = np.zeros((M, d))
        base = self.spec.base
        if not base.is_zero:
            pts = X2[:, None, :] - self._offsets[None, :, :]
            vals = np.asarray(base.fn(pts.reshape(-1, d))).reshape(M, -1, d)
            out += np.einsum("mkd,k->md", vals, self._ball_w)
        for p in self.spec.pieces:
            out += self._piece_term(p, X2)
        return out[0] if single else out

    __call__ = eval

    def _piece_term(self, piece: Piece, X):
        M, d = X.shape
        rad = self.bump.radius
        if piece.const is not None:
            reg = piece.region
            if isinstance(reg, Ball):
                if d == 1:
                    V = _box_indicator_conv(self.bump,
                                            reg.center - reg.radius,
                                            reg.center + reg.radius, X)
                else:
                    V = _ball_indicator_conv(self.bump, reg.center, reg.radius, X)
            elif isinstance(reg, Box):
                V = _box_indicator_conv(self.bump, reg.lo, reg.hi, X)
            elif isinstance(reg, Ray):
                V = _bump_cdf(self.bump, reg.side * (X[:, 0] - reg.offset))
            else:
                raise TypeError(f"unsupported region {type(reg)!r}")
            return V[:, None] * piece.const[None, :]
        # general coefficient: Gauss nodes on each ray segment
        t0, t1 = piece.region.ray_segments(X, self._dirs, rad)
        u, wu = self._gauss
        r = t0[..., None] + (t1 - t0)[..., None] * u  # (M, A, G)
        w_seg = (t1 - t0)[..., None] * wu
        gamma = self.bump.profile(r) * r ** (d - 1) * qd.sphere_area(d)
        pts = X[:, None, None, :] + r[..., None] * self._dirs[None, :, None, :]
        hv = piece.h_eval(pts.reshape(-1, d)).reshape(M, self._dirs.shape[0], -1, d)
        return np.einsum("mag,magd,a->md", w_seg * gamma, hv, self._dir_w)


def mollified_drift(spec: DriftSpec, n: int, x):
    """Mollified drift value a_n(x) = (g_n * a)(x)."""
    return MollifiedDriftField(spec, n).eval(x)


# ---------------------------------------------------------------------------
# Mollified gradient  grad a_n = (grad a) * g_n


class MollifiedGradientField:
    """Evaluates the Jordan pair (mu^{ij,+-} * g_n)(x) of the mollified gradient.

    The density parts convolve the sign-split a.e. Jacobian over the
    mollifier ball with ray splitting at region boundaries; the surface
    parts integrate the bump against the sign-split boundary densities
    (closed-form azimuthal positive-part integrals on spheres).
    This is a direct convolution of the gradient measures; agreement with
    finite differences of the mollified drift is a test property, not an
    implementation device.
    """

    def __init__(self, spec: DriftSpec, n: int, resolution: int = 12,
                 n_radial: int = 10, n_psi: int = 24):
        self.spec = spec
        self.n = int(n)
        self.bump = BumpMollifier(spec.dimension, n)
        self.label = f"{spec.label}|grad-mollified(n={n})"
        d = spec.dimension
        self._dirs, self._dir_w_raw = qd.unit_directions(d, resolution)
        self._gauss = qd.gauss_nodes(0.0, 1.0, n_radial)
        self._gauss_face = qd.gauss_nodes(0.0, 1.0, 32)
        self._psi = qd.gauss_nodes(0.0, 1.0, n_psi)
        self._has_interior = (not spec.base.is_zero and spec.base.lipschitz > 0) \
            or any(p.const is None for p in spec.pieces)

    # -- interior (density) contribution ------------------------------------

    def _interior_split(self, X):
        M, d = X.shape
        rad = self.bump.radius
        u, wu = self._gauss
        A = self._dirs.shape[0]
        breaks = []
        for p in self.spec.pieces:
            t0, t1 = p.region.ray_segments(X, self._dirs, rad)
            breaks.extend([t0, t1])
        for axis, value in self.spec.base.jac_breaks:
            dj = self._dirs[:, axis][None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_cross = (value - X[:, axis][:, None]) / dj
            t_cross = np.where(np.isfinite(t_cross), t_cross, 0.0)
            breaks.append(np.clip(t_cross, 0.0, rad))
        edges = [np.zeros((M, A)), np.full((M, A), rad)] + breaks
        edges = np.sort(np.stack(edges, axis=-1), axis=-1)  # (M, A, S+1)
        plus = np.zeros((M, d, d))
        minus = np.zeros((M, d, d))
        for s in range(edges.shape[-1] - 1):
            a_e = edges[..., s]
            b_e = edges[..., s + 1]
            width = b_e - a_e
            if not np.any(width > 0):
                continue
            r = a_e[..., None] + width[..., None] * u          # (M, A, G)
            w_seg = width[..., None] * wu
            gamma = self.bump.profile(r) * r ** (d - 1)
            wq = w_seg * gamma * self._dir_w_raw[None, :, None]
            pts = X[:, None, None, :] + r[..., None] * self._dirs[None, :, None, :]
            J = self.spec.jacobian(pts.reshape(-1, d)).reshape(M, A, -1, d, d)
            plus += np.einsum("mag,magij->mij", wq, np.maximum(J, 0.0))
            minus += np.einsum("mag,magij->mij", wq, np.maximum(-J, 0.0))
        return plus, minus

    # -- surface contributions ----------------------------------------------

    def _surface_split_ray(self, piece: Piece, X):
        d = 1
        reg = piece.region
        c = np.array([reg.offset])
        hval = float(piece.h_eval(c[None, :])[0, 0])
        jump = hval * float(reg.side)  # -h * n_out
        g = self.bump.profile(np.abs(X[:, 0] - reg.offset))
        plus = np.maximum(jump, 0.0) * g
        minus = np.maximum(-jump, 0.0) * g
        return plus[:, None, None], minus[:, None, None]

    def _surface_split_ball_const(self, piece: Piece, X):
        """Closed-form azimuthal treatment for constant coefficients on balls."""
        M, d = X.shape
        reg = piece.region
        R, rad = reg.radius, self.bump.radius
        cvec = piece.const
        q = X - reg.center[None, :]
        rho = np.linalg.norm(q, axis=1)
        plus = np.zeros((M, d, d))
        minus = np.zeros((M, d, d))
        lo2 = (rho - R) ** 2
        s2max = (rad ** 2 - lo2) / np.maximum(4.0 * rho * R, 1e-300)
        active = s2max > 0
        if not np.any(active):
            return plus, minus
        idx = np.where(active)[0]
        rho_a = rho[idx]
        central = rho_a < 1e-12
        u_hat = np.where(central[:, None], 0.0, q[idx])
        u_hat[central, 0] = 1.0
        u_hat = u_hat / np.linalg.norm(u_hat, axis=1, keepdims=True)
        psi_cut = 2.0 * np.arcsin(np.sqrt(np.clip(s2max[idx], 0.0, 1.0)))
        un, wn = self._psi
        psi = psi_cut[:, None] * un[None, :]
        wpsi = psi_cut[:, None] * wn[None, :]
        dist = np.sqrt((rho_a[:, None] - R) ** 2
                       + 4.0 * rho_a[:, None] * R * np.sin(0.5 * psi) ** 2)
        gamma = self.bump.profile(dist)
        if d == 2:
            frame_v = np.stack([-u_hat[:, 1], u_hat[:, 0]], axis=1)
            for j in range(d):
                ue = u_hat[:, j][:, None]
                ve = frame_v[:, j][:, None]
                ring_p = np.zeros_like(psi)
                ring_m = np.zeros_like(psi)
                for s in (1.0, -1.0):
                    nj = np.cos(psi) * ue + s * np.sin(psi) * ve
                    ring_p += np.maximum(nj, 0.0)
                    ring_m += np.maximum(-nj, 0.0)
                Ip = R * np.sum(wpsi * gamma * ring_p, axis=1)
                Im = R * np.sum(wpsi * gamma * ring_m, axis=1)
                for i in range(d):
                    w = -cvec[i]  # surface density is -h^i n_j
                    if w >= 0:
                        plus[idx, i, j] += w * Ip
                        minus[idx, i, j] += w * Im
                    else:
                        plus[idx, i, j] += (-w) * Im
                        minus[idx, i, j] += (-w) * Ip
            return plus, minus
        # d == 3
        ring_meas = R ** 2 * np.sin(psi)
        for j in range(d):
            ue = u_hat[:, j][:, None]
            amp = np.sin(psi) * np.sqrt(np.maximum(1.0 - ue ** 2, 0.0))
            a_term = np.cos(psi) * ue
            az_p = qd.azimuth_positive_part(a_term, amp)
            az_m = qd.azimuth_positive_part(-a_term, amp)
            Ip = np.sum(wpsi * gamma * ring_meas * az_p, axis=1)
            Im = np.sum(wpsi * gamma * ring_meas * az_m, axis=1)
            for i in range(d):
                w = -cvec[i]
                if w >= 0:
                    plus[idx, i, j] += w * Ip
                    minus[idx, i, j] += w * Im
                else:
                    plus[idx, i, j] += (-w) * Im
                    minus[idx, i, j] += (-w) * Ip
        return plus, minus

    def _surface_split_box_const(self, piece: Piece, X):
        M, d = X.shape
        reg = piece.region
        rad = self.bump.radius
        cvec = piece.const
        plus = np.zeros((M, d, d))
        minus = np.zeros((M, d, d))
        un, wn = self._gauss_face
        for axis in range(d):
            others = [j for j in range(d) if j != axis]
            for side, val, nsign in ((0, reg.lo[axis], -1.0), (1, reg.hi[axis], 1.0)):
                h_perp = np.abs(X[:, axis] - val)
                act = h_perp < rad
                if not np.any(act):
                    continue
                idx = np.where(act)[0]
                span = np.sqrt(rad ** 2 - h_perp[idx] ** 2)
                if d == 1:
                    face_int = self.bump.profile(h_perp[idx])
                elif d == 2:
                    jo = others[0]
                    lo_u = np.maximum(X[idx, jo] - span, reg.lo[jo])
                    hi_u = np.minimum(X[idx, jo] + span, reg.hi[jo])
                    width = np.maximum(hi_u - lo_u, 0.0)
                    uu = lo_u[:, None] + width[:, None] * un[None, :]
                    ww = width[:, None] * wn[None, :]
                    dist = np.sqrt(h_perp[idx][:, None] ** 2
                                   + (uu - X[idx, jo][:, None]) ** 2)
                    face_int = np.sum(ww * self.bump.profile(dist), axis=1)
                else:
                    j1, j2 = others
                    lo1 = np.maximum(X[idx, j1] - span, reg.lo[j1])
                    hi1 = np.minimum(X[idx, j1] + span, reg.hi[j1])
                    lo2 = np.maximum(X[idx, j2] - span, reg.lo[j2])
                    hi2 = np.minimum(X[idx, j2] + span, reg.hi[j2])
                    w1 = np.maximum(hi1 - lo1, 0.0)
                    w2 = np.maximum(hi2 - lo2, 0.0)
                    u1 = lo1[:, None] + w1[:, None] * un[None, :]
                    u2 = lo2[:, None] + w2[:, None] * un[None, :]
                    du1 = (u1 - X[idx, j1][:, None])[:, :, None]
                    du2 = (u2 - X[idx, j2][:, None])[:, None, :]
                    dist = np.sqrt(h_perp[idx][:, None, None] ** 2
                                   + du1 ** 2 + du2 ** 2)
                    wgrid = (w1[:, None] * wn[None, :])[:, :, None] \
                        * (w2[:, None] * wn[None, :])[:, None, :]
                    face_int = np.sum(wgrid * self.bump.profile(dist), axis=(1, 2))
                for i in range(d):
                    w = -cvec[i] * nsign  # constant per face
                    if w >= 0:
                        plus[idx, i, axis] += w * face_int
                    else:
                        minus[idx, i, axis] += (-w) * face_int
        return plus, minus

    def _surface_split_generic(self, piece: Piece, X):
        """Azimuth-sampled fallback for non-constant coefficients."""
        M, d = X.shape
        rad = self.bump.radius
        plus = np.zeros((M, d, d))
        minus = np.zeros((M, d, d))
        reg = piece.region
        if isinstance(reg, Ball):
            def run(x, sign, i, j):
                dens = lambda pts, normals: np.maximum(
                    sign * (-piece.h_eval(pts)[..., i]) * normals[..., j], 0.0)
                return qd.sphere_ring_integral(reg.center, reg.radius, x,
                                               self.bump.profile, density=dens,
                                               r_cut=rad)
        elif isinstance(reg, Box):
            comp = BoxBoundary(reg.lo, reg.hi)

            def run(x, sign, i, j):
                total = 0.0
                for axis in range(d):
                    for side, val, nsign in ((0, reg.lo[axis], -1.0),
                                             (1, reg.hi[axis], 1.0)):
                        dens = lambda pts, _i=i, _n=nsign: np.maximum(
                            sign * (-piece.h_eval(pts)[..., _i]) * _n, 0.0) \
                            if j == axis else np.zeros(pts.shape[0])
                        if j != axis:
                            continue
                        total += qd.face_polar_integral(
                            reg.lo, reg.hi, axis, val, x, self.bump.profile,
                            r_cut=rad, density=lambda p: dens(p))
                return total
        else:
            raise ValueError("generic surface split supports balls and boxes")
        for m in range(M):
            for i in range(d):
                for j in range(d):
                    plus[m, i, j] += run(X[m], +1.0, i, j)
                    minus[m, i, j] += run(X[m], -1.0, i, j)
        return plus, minus

    # -------------------------------------------------------------------

    def eval_split(self, X):
        """Jordan pair of the mollified gradient at X: (plus, minus), each (M, d, d)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        M, d = X2.shape
        plus = np.zeros((M, d, d))
        minus = np.zeros((M, d, d))
        if self._has_interior:
            p_i, m_i = self._interior_split(X2)
            plus += p_i
            minus += m_i
        for p in self.spec.pieces:
            if isinstance(p.region, Ray):
                pp, mm = self._surface_split_ray(p, X2)
            elif p.const is not None and isinstance(p.region, Ball):
                pp, mm = self._surface_split_ball_const(p, X2)
            elif p.const is not None and isinstance(p.region, Box):
                pp, mm = self._surface_split_box_const(p, X2)
            else:
                pp, mm = self._surface_split_generic(p, X2)
            plus += pp
            minus += mm
        if single:
            return plus[0], minus[0]
        return plus, minus

    def eval(self, X):
        plus, minus = self.eval_split(X)
        return plus - minus

    __call__ = eval


def mollified_gradient(spec: DriftSpec, n: int, x):
    """Mollified gradient matrix (grad a * g_n)(x)."""
    return MollifiedGradientField(spec, n).eval(x)


# ---------------------------------------------------------------------------
# Direct (unmollified) gradient split for smooth drifts


class DirectGradientField:
    """Pointwise sign-split Jacobian of a drift with no surface parts."""

    def __init__(self, spec: DriftSpec):
        if any(True for _ in spec.pieces):
            for p in spec.pieces:
                if p.const is not None or isinstance(p.region, (Ray, Ball, Box)):
                    raise ValueError(
                        "direct gradient route requires a drift without "
                        "indicator pieces; use the mollified route")
        self.spec = spec
        self.label = f"{spec.label}|grad-direct"

    def eval_split(self, X):
        J = self.spec.jacobian(X)
        return np.maximum(J, 0.0), np.maximum(-J, 0.0)

    def eval(self, X):
        return self.spec.jacobian(X)

    __call__ = eval


# ---------------------------------------------------------------------------
# Tabulated wrappers for Monte Carlo hot loops


class TabulatedField:
    """Linear-interpolation table over a box window around a base field.

    Queries outside the window fall back to the wrapped field (exactness
    over speed for stragglers).  Linear interpolation of a bounded field
    stays within its bounds, so sup-norm guarantees survive tabulation.
    """

    def __init__(self, eval_fn, lo, hi, spacing, out_shape, label="tabulated"):
        self.eval_fn = eval_fn
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.label = label
        d = self.lo.size
        axes = [np.linspace(self.lo[k], self.hi[k],
                            max(int(np.ceil((self.hi[k] - self.lo[k]) / spacing)) + 1, 2))
                for k in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.empty((pts.shape[0],) + tuple(out_shape))
        chunk = max(1, int(2e5 // max(np.prod(out_shape), 1)))
        for s in range(0, pts.shape[0], chunk):
            vals[s:s + chunk] = np.asarray(eval_fn(pts[s:s + chunk]))
        grid_shape = tuple(len(ax) for ax in axes)
        self._interp = RegularGridInterpolator(
            axes, vals.reshape(grid_shape + tuple(out_shape)),
            method="linear", bounds_error=False, fill_value=None)
        self._out_shape = tuple(out_shape)

    def eval(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        inside = np.all((X2 >= self.lo) & (X2 <= self.hi), axis=1)
        out = np.empty((X2.shape[0],) + self._out_shape)
        if np.any(inside):
            out[inside] = self._interp(X2[inside])
        if np.any(~inside):
            out[~inside] = np.asarray(self.eval_fn(X2[~inside]))
        return out[0] if single else out

    __call__ = eval


class TabulatedSplitField:
    """Tabulated version of a field exposing eval_split (plus/minus pair)."""

    def __init__(self, field, lo, hi, spacing):
        d = np.atleast_1d(lo).size
        stack = lambda X: np.stack(field.eval_split(X), axis=1)
        self._tab = TabulatedField(stack, lo, hi, spacing,
                                   out_shape=(2, d, d),
                                   label=getattr(field, "label", "split") + "|tab")
        self.label = self._tab.label

    def eval_split(self, X):
        both = self._tab.eval(X)
        if both.ndim == 3:
            return both[0], both[1]
        return both[:, 0], both[:, 1]

    def eval(self, X):
        p, m = self.eval_split(X)
        return p - m

    __call__ = eval


def drift_window(spec: DriftSpec, x0, T: float, margin: float = 1.0):
    """Box window containing the flow from x0 over [0, T] with high probability."""
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    pad = spec.sup_norm * T + 6.0 * np.sqrt(T) + margin
    return X0.min(axis=0) - pad, X0.max(axis=0) + pad


# ---------------------------------------------------------------------------
# Drift catalogue


def _rotation2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def make_drift(name: str, dimension: int, **params) -> DriftSpec:
    """Build a catalogued drift.

    Catalogue ids: zero, constant, tanh, linear_clipped (d=1), sign (d=1),
    indicator_ball, indicator_box.
    """
    d = int(dimension)
    zero_base = SmoothBase(fn=lambda X: np.zeros_like(np.asarray(X, dtype=float)),
                           jac=None, sup_norm=0.0, lipschitz=0.0,
                           jac_bound=np.zeros((d, d)), jac_support_radius=0.0,
                           label="zero", is_zero=True)

    if name == "zero":
        return DriftSpec(d, zero_base, (), 0.0, "zero")

    if name == "constant":
        c = np.atleast_1d(np.asarray(params.get("value", np.ones(d)), dtype=float))
        base = SmoothBase(fn=lambda X, _c=c: np.broadcast_to(_c, np.asarray(X).shape).copy(),
                          jac=lambda X, _d=d: np.zeros((np.asarray(X).shape[0], _d, _d)),
                          sup_norm=float(np.linalg.norm(c)), lipschitz=0.0,
                          jac_bound=np.zeros((d, d)), jac_support_radius=0.0,
                          label="constant")
        return DriftSpec(d, base, (), base.sup_norm, f"constant({c.tolist()})")

    if name == "tanh":
        amp = np.atleast_1d(np.asarray(params.get("amplitude", np.ones(d)), dtype=float))
        if amp.size == 1:
            amp = np.full(d, float(amp[0]))
        scale = float(params.get("scale", 1.0))
        center = np.atleast_1d(np.asarray(params.get("center", np.zeros(d)), dtype=float))
        mix = params.get("mix", None)
        if mix is None and d == 2 and params.get("rotate", None) is not None:
            mix = _rotation2(float(params["rotate"]))
        Mx = np.eye(d) if mix is None else np.asarray(mix, dtype=float)

        def fn(X, _M=Mx, _a=amp, _s=scale, _c=center):
            u = (np.asarray(X, dtype=float) - _c) @ _M.T
            return (_a * np.tanh(_s * u)) @ _M

        def jac(X, _M=Mx, _a=amp, _s=scale, _c=center):
            u = (np.asarray(X, dtype=float) - _c) @ _M.T
            sech2 = 1.0 / np.cosh(_s * u) ** 2
            diag = _a * _s * sech2  # (M, d)
            return np.einsum("ki,mk,kj->mij", _M, diag, _M)

        jac_bound = np.einsum("ki,k,kj->ij", np.abs(Mx), amp * scale, np.abs(Mx))
        sup = float(np.linalg.norm(np.abs(Mx).T @ amp))
        supp = 20.0 / scale * float(np.linalg.cond(Mx)) + float(np.linalg.norm(center))
        base = SmoothBase(fn=fn, jac=jac, sup_norm=sup,
                          lipschitz=float(np.max(jac_bound)) * d,
                          jac_bound=jac_bound, jac_support_radius=supp,
                          label="tanh")
        return DriftSpec(d, base, (), sup, f"tanh(amp={amp.tolist()},scale={scale})")

    if name == "linear_clipped":
        if d != 1:
            raise NotImplementedError("linear_clipped is catalogued for d=1")
        rate = float(params.get("rate", 1.0))
        clip = float(params.get("clip", 8.0))

        def fn(X, _r=rate, _L=clip):
            return -_r * np.clip(np.asarray(X, dtype=float), -_L, _L)

        def jac(X, _r=rate, _L=clip):
            X = np.asarray(X, dtype=float)
            inside = (np.abs(X[:, 0]) < _L).astype(float)
            return (-_r * inside)[:, None, None]

        base = SmoothBase(fn=fn, jac=jac, sup_norm=rate * clip, lipschitz=rate,
                          jac_bound=np.full((1, 1), rate), jac_support_radius=clip,
                          label="linear_clipped",
                          jac_breaks=((0, -clip), (0, clip)))
        return DriftSpec(d, base, (), rate * clip,
                         f"linear_clipped(rate={rate},clip={clip})")

    if name == "sign":
        if d != 1:
            raise ValueError("sign drift is one-dimensional")
        beta = float(params.get("beta", 0.5))
        minus = np.array([-beta])
        base = SmoothBase(fn=lambda X, _c=minus: np.broadcast_to(_c, np.asarray(X).shape).copy(),
                          jac=lambda X: np.zeros((np.asarray(X).shape[0], 1, 1)),
                          sup_norm=beta, lipschitz=0.0,
                          jac_bound=np.zeros((1, 1)), jac_support_radius=0.0,
                          label="const")
        piece = Piece(h=None, region=Ray(0.0, +1), sup_norm=2 * abs(beta),
                      const=np.array([2 * beta]))
        return DriftSpec(d, base, (piece,), abs(beta), f"sign(beta={beta})")

    if name == "indicator_ball":
        c = np.atleast_1d(np.asarray(params.get("coef", np.ones(d)), dtype=float))
        center = np.atleast_1d(np.asarray(params.get("center", np.zeros(d)), dtype=float))
        radius = float(params.get("radius", 1.0))
        piece = Piece(h=None, region=Ball(center, radius),
                      sup_norm=float(np.linalg.norm(c)), const=c)
        return DriftSpec(d, zero_base, (piece,), piece.sup_norm,
                         f"indicator_ball(coef={c.tolist()},R={radius})")

    if name == "indicator_box":
        c = np.atleast_1d(np.asarray(params.get("coef", np.ones(d)), dtype=float))
        lo = np.atleast_1d(np.asarray(params.get("lo", -np.ones(d)), dtype=float))
        hi = np.atleast_1d(np.asarray(params.get("hi", np.ones(d)), dtype=float))
        piece = Piece(h=None, region=Box(lo, hi),
                      sup_norm=float(np.linalg.norm(c)), const=c)
        return DriftSpec(d, zero_base, (piece,), piece.sup_norm,
                         f"indicator_box(coef={c.tolist()})")

    raise KeyError(f"unknown drift catalogue id: {name!r}")


DRIFT_CATALOGUE = ("zero", "constant", "tanh", "linear_clipped", "sign",
                   "indicator_ball", "indicator_box")
