"""Time-integrated heat kernel, measures, characteristics, Kato classification.

The kernel k_t(x, y) = int_0^t (2 pi s)^{-d/2} exp(-|y-x|^2 / 2s) ds is
evaluated through two independent routes: a closed radial form in terms of
the upper incomplete gamma function, and direct adaptive quadrature of the
defining s-integral.  Measures are finite component lists (atoms, bounded
densities, sphere surface measures, box boundary measures) carried as a
Jordan pair of nonnegative parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special as sp
from scipy.integrate import quad

from . import quadrature as qd
from .quadrature import BumpMollifier


class KernelSingularityError(ValueError):
    """Kernel evaluated on the diagonal x = y for d >= 2."""


class InfiniteCharacteristicError(ValueError):
    """Characteristic is infinite (e.g. an atom sitting at the query point)."""


class NotKatoError(ValueError):
    """A construction requiring a Kato-class measure was given one that is not."""


# ---------------------------------------------------------------------------
# Kernel


def wiener_kernel_radial(t: float, r, d: int):
    """Radial kernel value at distance r (vectorised over r).

    For d >= 2 the value at r = 0 is +inf.  t may be np.inf for d >= 3,
    where the kernel converges to r^{2-d} Gamma(d/2-1) / (2 pi^{d/2}).
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got t={t}")
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if t == 0:
        out = np.zeros_like(r)
        return float(out[0]) if scalar else out

    if d == 1:
        if np.isinf(t):
            out = np.full_like(r, np.inf)
        else:
            z = r / np.sqrt(2.0 * t)
            out = np.sqrt(2.0 * t / np.pi) * np.exp(-(z ** 2)) - r * sp.erfc(z)
            out = np.maximum(out, 0.0)
    elif d == 2:
        out = np.full_like(r, np.inf)
        pos = r > 0
        if np.isinf(t):
            pass  # logarithmically divergent for every r
        else:
            out[pos] = sp.exp1(r[pos] ** 2 / (2.0 * t)) / (2.0 * np.pi)
    else:
        a = d / 2.0 - 1.0
        coeff = sp.gamma(a) / (2.0 * np.pi ** (d / 2.0))
        out = np.full_like(r, np.inf)
        pos = r > 0
        if np.isinf(t):
            out[pos] = coeff * r[pos] ** (2 - d)
        else:
            x = r[pos] ** 2 / (2.0 * t)
            out[pos] = coeff * r[pos] ** (2 - d) * sp.gammaincc(a, x)
    return float(out[0]) if scalar else out


def wiener_kernel(t: float, x, y, d: Optional[int] = None) -> float:
    """Time-integrated Gaussian heat kernel between points x and y.

    Raises KernelSingularityError for x = y when d >= 2 (the kernel has a
    non-integrable diagonal singularity there); x = y is fine for d = 1.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if d is None:
        d = x.size
    if t < 0:
        raise ValueError(f"time must be nonnegative, got t={t}")
    r = float(np.linalg.norm(y - x))
    if r == 0.0 and d >= 2:
        raise KernelSingularityError(
            f"kernel is singular on the diagonal for d={d}")
    return float(wiener_kernel_radial(t, r, d))


def wiener_kernel_quad(t: float, r: float, d: int, epsrel: float = 1e-12) -> float:
    """Direct adaptive quadrature of the defining s-integral (oracle route).

    Splits the interval at the integrand's peak s* = r^2/d to help the
    adaptive routine through the boundary layer near s = 0.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got t={t}")
    if t == 0:
        return 0.0
    if r == 0.0:
        if d >= 2:
            raise KernelSingularityError("diagonal evaluation for d >= 2")
        return float(np.sqrt(2.0 * t / np.pi))

    def integrand(s):
        return (2.0 * np.pi * s) ** (-d / 2.0) * np.exp(-r * r / (2.0 * s))

    s_star = r * r / d
    pts = [s_star] if 0.0 < s_star < t else None
    val, _ = quad(integrand, 0.0, t, points=pts, epsabs=0.0, epsrel=epsrel,
                  limit=200)
    return float(val)


@dataclass(frozen=True, eq=False)
class KernelValue:
    """One kernel evaluation with its arguments, for reports and traces."""
    t: float
    x: np.ndarray
    y: np.ndarray
    value: float


def kernel_value(t: float, x, y, d: Optional[int] = None) -> KernelValue:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return KernelValue(t=float(t), x=x, y=y, value=wiener_kernel(t, x, y, d))


# ---------------------------------------------------------------------------
# Measure components


@dataclass(frozen=True, eq=False)
class Atom:
    """Point mass at ``location`` with nonnegative ``mass``."""
    location: np.ndarray
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "location",
                           np.atleast_1d(np.asarray(self.location, dtype=float)))
        if not np.isfinite(self.mass) or self.mass < 0:
            raise ValueError(f"atom mass must be nonnegative and finite, got {self.mass}")


@dataclass(frozen=True, eq=False)
class Density:
    """Absolutely continuous component: nonnegative density on a support ball.

    ``func`` maps points of shape (..., d) to nonnegative values; ``bound``
    is its sup-norm on the support; the support is the ball of
    ``support_radius`` around ``center``.  ``radial_profile`` optionally marks
    the density as radial about ``center`` (profile q(rho) on
    ``radial_range``), which unlocks exact ring-based quadrature.
    """
    center: np.ndarray
    func: Callable[[np.ndarray], np.ndarray]
    bound: float
    support_radius: float
    radial_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radial_range: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.bound < 0 or not np.isfinite(self.bound):
            raise ValueError("density bound must be nonnegative and finite")
        if self.support_radius <= 0 or not np.isfinite(self.support_radius):
            raise ValueError("support radius must be positive and finite")


@dataclass(frozen=True, eq=False)
class SphereSurface:
    """Surface measure on a sphere weighted by a bounded nonnegative density.

    ``density`` is a constant or a callable density(points, normals)->values.
    """
    center: np.ndarray
    radius: float
    density: Union[float, Callable] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True, eq=False)
class BoxBoundary:
    """Surface measure on the boundary of a box, weighted per point."""
    corner_lo: np.ndarray
    corner_hi: np.ndarray
    density: Union[float, Callable] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "corner_lo",
                           np.atleast_1d(np.asarray(self.corner_lo, dtype=float)))
        object.__setattr__(self, "corner_hi",
                           np.atleast_1d(np.asarray(self.corner_hi, dtype=float)))
        if np.any(self.corner_hi <= self.corner_lo):
            raise ValueError("box corners must satisfy lo < hi componentwise")


MeasureComponent = Union[Atom, Density, SphereSurface, BoxBoundary]


def _dens_eval(density, points, normals=None):
    if np.isscalar(density):
        return np.full(points.shape[0], float(density))
    return np.asarray(density(points, normals)) if normals is not None \
        else np.asarray(density(points))


@dataclass(frozen=True, eq=False)
class SignedMeasureSpec:
    """Signed measure as a Jordan pair of nonnegative component lists.

    The pair need not be orthogonal; both parts must have finite mass on
    bounded balls (guaranteed by the component catalogue).
    """
    positive_part: Tuple[MeasureComponent, ...]
    negative_part: Tuple[MeasureComponent, ...]
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "positive_part", tuple(self.positive_part))
        object.__setattr__(self, "negative_part", tuple(self.negative_part))
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    @classmethod
    def delta(cls, location, mass: float = 1.0) -> "SignedMeasureSpec":
        loc = np.atleast_1d(np.asarray(location, dtype=float))
        return cls((Atom(loc, mass),), (), loc.size)

    @classmethod
    def from_parts(cls, positive=(), negative=(), dimension=None):
        comps = list(positive) + list(negative)
        if dimension is None:
            if not comps:
                raise ValueError("cannot infer dimension from an empty measure")
            c = comps[0]
            dimension = (c.location if isinstance(c, Atom)
                         else c.center if isinstance(c, (Density, SphereSurface))
                         else c.corner_lo).size
        return cls(tuple(positive), tuple(negative), int(dimension))

    def part(self, sign: str) -> Tuple[MeasureComponent, ...]:
        if sign == "positive":
            return self.positive_part
        if sign == "negative":
            return self.negative_part
        raise ValueError("sign must be 'positive' or 'negative'")

    def positive_only(self) -> "SignedMeasureSpec":
        return SignedMeasureSpec(self.positive_part, (), self.dimension)

    def negative_only(self) -> "SignedMeasureSpec":
        return SignedMeasureSpec(self.negative_part, (), self.dimension)

    def abs_measure(self) -> "SignedMeasureSpec":
        """|mu| = mu+ + mu- as a single nonnegative measure."""
        return SignedMeasureSpec(self.positive_part + self.negative_part, (),
                                 self.dimension)

    @property
    def is_zero(self) -> bool:
        return not self.positive_part and not self.negative_part


def component_mass(comp: MeasureComponent, d: int, resolution: int = 24) -> float:
    """Total mass of one nonnegative component (quadrature where needed)."""
    if isinstance(comp, Atom):
        return float(comp.mass)
    if isinstance(comp, Density):
        if comp.radial_profile is not None:
            rlo, rhi = comp.radial_range
            rho, w = qd.panel_nodes(rlo, rhi, n=32)
            ring = qd.sphere_area(d) * rho ** (d - 1)
            return float(np.sum(w * comp.radial_profile(rho) * ring))
        dirs, wd = qd.unit_directions(d, resolution=resolution)
        r, wr = qd.panel_nodes(0.0, comp.support_radius, n=32)
        pts = comp.center[None, None, :] + r[:, None, None] * dirs[None, :, :]
        vals = np.asarray(comp.func(pts.reshape(-1, d))).reshape(r.size, dirs.shape[0])
        return float(np.sum(wr[:, None] * wd[None, :] * vals
                            * (r ** (d - 1))[:, None]))
    if isinstance(comp, SphereSurface):
        pts, wts, nrm = qd.sphere_surface_nodes(comp.center, comp.radius,
                                                resolution=resolution)
        return float(np.sum(wts * _dens_eval(comp.density, pts, nrm)))
    if isinstance(comp, BoxBoundary):
        pts, wts, nrm, _ = qd.box_boundary_nodes(comp.corner_lo, comp.corner_hi,
                                                 resolution=resolution)
        return float(np.sum(wts * _dens_eval(comp.density, pts, nrm)))
    raise TypeError(f"unknown component type {type(comp)!r}")


def measure_mass(measure: SignedMeasureSpec, sign: str = "positive") -> float:
    return sum(component_mass(c, measure.dimension) for c in measure.part(sign))


def validate_component(comp: MeasureComponent, d: int, seed: int = 0,
                       n_samples: int = 512, rtol: float = 1e-6) -> None:
    """Sampling check of the component invariants (nonnegativity, bound)."""
    rng = np.random.default_rng(seed)
    if isinstance(comp, Atom):
        return
    if isinstance(comp, Density):
        pts = comp.center[None, :] + comp.support_radius * (
            rng.uniform(-1.0, 1.0, size=(n_samples, d)))
        vals = np.asarray(comp.func(pts))
        if np.any(vals < -1e-12):
            raise ValueError("density takes negative values")
        if np.any(vals > comp.bound * (1.0 + rtol) + 1e-12):
            raise ValueError("density exceeds its reported sup-norm bound")
        return
    if isinstance(comp, SphereSurface):
        pts, _, nrm = qd.sphere_surface_nodes(comp.center, comp.radius, 24)
    else:
        pts, _, nrm, _ = qd.box_boundary_nodes(comp.corner_lo, comp.corner_hi, 12)
    vals = _dens_eval(comp.density, pts, nrm)
    if np.any(vals < -1e-12):
        raise ValueError("surface density takes negative values")


# ---------------------------------------------------------------------------
# Characteristics  f_t(x) = int k_t(x, y) nu(dy)


def _characteristic_density(comp: Density, t: float, x: np.ndarray, d: int,
                            resolution: int) -> float:
    kfun = lambda r: wiener_kernel_radial(t, r, d)
    if comp.radial_profile is not None:
        rlo, rhi = comp.radial_range
        rho, w = qd.panel_nodes(rlo, rhi, n=24)
        vals = np.array([qd.sphere_ring_integral(comp.center, float(rr), x, kfun)
                         for rr in rho])
        return float(np.sum(w * comp.radial_profile(rho) * vals))
    dist_c = float(np.linalg.norm(x - comp.center))
    r_max = dist_c + comp.support_radius
    scale = np.sqrt(2.0 * t) if t > 0 else r_max
    breaks = [abs(dist_c - comp.support_radius), dist_c,
              0.5 * scale, scale, 2.0 * scale, 4.0 * scale]
    dirs, wd = qd.unit_directions(d, resolution=resolution)
    # graded panels near r = 0 absorb the kernel singularity (d >= 2)
    r0, w0 = qd.graded_panel_nodes(0.0, min(r_max, 1e-2), n_panels=4, n=10)
    r1, w1 = qd.panel_nodes(min(r_max, 1e-2), r_max, breaks=breaks, n=24)
    r = np.concatenate([r0, r1])
    wr = np.concatenate([w0, w1])
    pts = x[None, None, :] + r[:, None, None] * dirs[None, :, :]
    vals = np.asarray(comp.func(pts.reshape(-1, d))).reshape(r.size, dirs.shape[0])
    ang = vals @ wd
    return float(np.sum(wr * kfun(np.maximum(r, 1e-300)) * r ** (d - 1) * ang))


def _characteristic_box(comp: BoxBoundary, t: float, x: np.ndarray, d: int,
                        resolution: int) -> float:
    kfun = lambda r: wiener_kernel_radial(t, r, d)
    lo, hi = comp.corner_lo, comp.corner_hi
    if d == 1:
        total = 0.0
        for v, nsign in ((lo[0], -1.0), (hi[0], 1.0)):
            dens = comp.density if np.isscalar(comp.density) else float(
                np.asarray(comp.density(np.array([[v]]), np.array([[nsign]])))[0])
            total += dens * float(wiener_kernel_radial(t, abs(x[0] - v), 1))
        return total
    total = 0.0
    near = 0.05 * float(np.min(hi - lo))
    for axis in range(d):
        for side, val in ((0, lo[axis]), (1, hi[axis])):
            others = [j for j in range(d) if j != axis]
            inside = all(lo[j] - near <= x[j] <= hi[j] + near for j in others)
            dens_pts = None
            if not np.isscalar(comp.density):
                nrm = np.zeros(d)
                nrm[axis] = -1.0 if side == 0 else 1.0
                dens_pts = lambda pts, _n=nrm: np.asarray(
                    comp.density(pts, np.repeat(_n[None, :], pts.shape[0], 0)))
            if abs(x[axis] - val) < near and inside:
                total += qd.face_polar_integral(
                    lo, hi, axis, val, x, kfun, r_cut=np.inf,
                    density=dens_pts, n_dir=4 * resolution, n_rad=24)
            else:
                grids = [qd.gauss_nodes(lo[j], hi[j], 2 * resolution)
                         for j in others]
                mesh = np.meshgrid(*[g[0] for g in grids], indexing="ij")
                wmesh = np.meshgrid(*[g[1] for g in grids], indexing="ij")
                wflat = np.ones(mesh[0].size)
                for wm in wmesh:
                    wflat = wflat * wm.ravel()
                pts = np.empty((mesh[0].size, d))
                for k, j in enumerate(others):
                    pts[:, j] = mesh[k].ravel()
                pts[:, axis] = val
                r = np.linalg.norm(pts - x[None, :], axis=1)
                dens = wflat if dens_pts is None and np.isscalar(comp.density) \
                    else None
                if np.isscalar(comp.density):
                    total += float(comp.density) * float(
                        np.sum(wflat * kfun(np.maximum(r, 1e-300))))
                else:
                    total += float(np.sum(wflat * dens_pts(pts)
                                          * kfun(np.maximum(r, 1e-300))))
    return total


def characteristic(measure: SignedMeasureSpec, t: float, x,
                   resolution: int = 12) -> float:
    """Characteristic f_t(x) of a nonnegative measure part.

    The measure must have an empty negative part (pass ``positive_only()``
    or ``negative_only()`` of a signed spec).  Atoms evaluate the kernel
    directly; densities and surface measures are integrated by quadrature
    with the kernel singularity handled radially.
    """
    if measure.negative_part:
        raise ValueError("characteristic expects a single nonnegative part; "
                         "pass measure.positive_only() / .negative_only()")
    if t < 0:
        raise ValueError("time must be nonnegative")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = measure.dimension
    total = 0.0
    kfun = lambda r: wiener_kernel_radial(t, r, d)
    for comp in measure.positive_part:
        if isinstance(comp, Atom):
            r = float(np.linalg.norm(x - comp.location))
            if r == 0.0 and d >= 2:
                raise InfiniteCharacteristicError(
                    "atom at the evaluation point has infinite characteristic "
                    f"for d={d} (non-Kato configuration)")
            total += comp.mass * float(wiener_kernel_radial(t, r, d))
        elif isinstance(comp, Density):
            total += _characteristic_density(comp, t, x, d, resolution)
        elif isinstance(comp, SphereSurface):
            total += qd.sphere_ring_integral(comp.center, comp.radius, x, kfun,
                                             density=comp.density)
        elif isinstance(comp, BoxBoundary):
            total += _characteristic_box(comp, t, x, d, resolution)
        else:
            raise TypeError(f"unknown component type {type(comp)!r}")
    return total


def characteristic_signed(measure: SignedMeasureSpec, t: float, x,
                          resolution: int = 12) -> Tuple[float, float]:
    """Characteristics (f_t^+, f_t^-) of the two Jordan parts."""
    return (characteristic(measure.positive_only(), t, x, resolution),
            characteristic(measure.negative_only(), t, x, resolution))


def characteristic_batch(measure: SignedMeasureSpec, t: float, X,
                         resolution: int = 12) -> np.ndarray:
    """Vectorised characteristic over points X of shape (N, d).

    Atom components are fully vectorised; other components fall back to a
    per-point loop (used at verification scale only).
    """
    if measure.negative_part:
        raise ValueError("characteristic expects a single nonnegative part")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d = measure.dimension
    out = np.zeros(X.shape[0])
    for comp in measure.positive_part:
        if isinstance(comp, Atom):
            r = np.linalg.norm(X - comp.location[None, :], axis=1)
            if d >= 2 and np.any(r == 0.0):
                raise InfiniteCharacteristicError(
                    "atom at an evaluation point (d >= 2)")
            out += comp.mass * wiener_kernel_radial(t, r, d)
        else:
            sub = SignedMeasureSpec((comp,), (), d)
            out += np.array([characteristic(sub, t, X[i], resolution)
                             for i in range(X.shape[0])])
    return out


# ---------------------------------------------------------------------------
# Kato classification


def _ball_restricted_integral(comp: MeasureComponent, x: np.ndarray,
                              eps: float, g_fn, d: int) -> float:
    """Integral of g(|x-y|) over the ball |x-y| <= eps against one component."""
    if isinstance(comp, Atom):
        r = float(np.linalg.norm(x - comp.location))
        if r > eps:
            return 0.0
        if r == 0.0:
            g0 = float(g_fn(np.array([0.0]))[0])
            return comp.mass * g0
        return comp.mass * float(g_fn(np.array([r]))[0])
    if isinstance(comp, Density):
        dist_c = float(np.linalg.norm(x - comp.center))
        if dist_c - comp.support_radius > eps:
            return 0.0
        r, w = qd.graded_panel_nodes(0.0, eps, n_panels=4, n=12)
        dirs, wd = qd.unit_directions(d, resolution=8)
        pts = x[None, None, :] + r[:, None, None] * dirs[None, :, :]
        vals = np.asarray(comp.func(pts.reshape(-1, d))).reshape(r.size, -1)
        ang = vals @ wd
        return float(np.sum(w * g_fn(np.maximum(r, 1e-300)) * r ** (d - 1) * ang))
    if isinstance(comp, SphereSurface):
        return qd.sphere_ring_integral(comp.center, comp.radius, x, g_fn,
                                       density=comp.density, r_cut=eps)
    if isinstance(comp, BoxBoundary):
        lo, hi = comp.corner_lo, comp.corner_hi
        total = 0.0
        for axis in range(d):
            for side, val in ((0, lo[axis]), (1, hi[axis])):
                others = [j for j in range(d) if j != axis]
                q_in = all(lo[j] - eps <= x[j] <= hi[j] + eps for j in others)
                if not q_in or abs(x[axis] - val) > eps:
                    continue
                dens_pts = None
                if not np.isscalar(comp.density):
                    nrm = np.zeros(d)
                    nrm[axis] = -1.0 if side == 0 else 1.0
                    dens_pts = lambda pts, _n=nrm: np.asarray(
                        comp.density(pts, np.repeat(_n[None, :], pts.shape[0], 0)))
                val_f = qd.face_polar_integral(lo, hi, axis, val, x, g_fn,
                                               r_cut=eps, density=dens_pts)
                if np.isscalar(comp.density):
                    val_f *= float(comp.density)
                total += val_f
        return total
    raise TypeError(f"unknown component type {type(comp)!r}")


def _window_mass_1d(comp: MeasureComponent, x: float, half_width: float = 1.0) -> float:
    lo, hi = x - half_width, x + half_width
    if isinstance(comp, Atom):
        return comp.mass if lo <= comp.location[0] <= hi else 0.0
    if isinstance(comp, Density):
        a = max(lo, comp.center[0] - comp.support_radius)
        b = min(hi, comp.center[0] + comp.support_radius)
        if b <= a:
            return 0.0
        r, w = qd.panel_nodes(a, b, n=32)
        return float(np.sum(w * np.asarray(comp.func(r[:, None]))))
    if isinstance(comp, SphereSurface):
        total = 0.0
        for s in (1.0, -1.0):
            y = comp.center[0] + s * comp.radius
            if lo <= y <= hi:
                dens = comp.density if np.isscalar(comp.density) else float(
                    np.asarray(comp.density(np.array([[y]]), np.array([[s]])))[0])
                total += dens
        return total
    if isinstance(comp, BoxBoundary):
        total = 0.0
        for y, s in ((comp.corner_lo[0], -1.0), (comp.corner_hi[0], 1.0)):
            if lo <= y <= hi:
                dens = comp.density if np.isscalar(comp.density) else float(
                    np.asarray(comp.density(np.array([[y]]), np.array([[s]])))[0])
                total += dens
        return total
    raise TypeError(f"unknown component type {type(comp)!r}")


def _candidate_grid(components: Sequence[MeasureComponent], d: int) -> np.ndarray:
    """Finite candidate set where the sup over x is attained for the catalogue.

    Atom locations, a lattice over density supports, sphere surface nodes
    plus the center, and box boundary nodes plus corners.
    """
    pts = []
    for comp in components:
        if isinstance(comp, Atom):
            pts.append(comp.location[None, :])
        elif isinstance(comp, Density):
            offs = np.array([-1.0, -0.5, 0.0, 0.5, 1.0]) * comp.support_radius
            grids = np.meshgrid(*([offs] * d), indexing="ij")
            lat = np.stack([g.ravel() for g in grids], axis=1)
            pts.append(comp.center[None, :] + lat)
        elif isinstance(comp, SphereSurface):
            nodes, _, _ = qd.sphere_surface_nodes(comp.center, comp.radius,
                                                  resolution=4)
            pts.append(nodes)
            pts.append(comp.center[None, :])
        elif isinstance(comp, BoxBoundary):
            nodes, _, _, _ = qd.box_boundary_nodes(comp.corner_lo,
                                                   comp.corner_hi, resolution=3)
            pts.append(nodes)
            corners = np.stack([comp.corner_lo, comp.corner_hi])
            pts.append(corners)
    if not pts:
        return np.zeros((1, d))
    return np.concatenate(pts, axis=0)


# ratio-1/3 grid: the halving rule tolerates the log modulus of d=2 surface
# measures only when successive radii shrink by at least a third
DEFAULT_EPSILON_GRID = (0.25, 0.25 / 3, 0.25 / 9, 0.25 / 27, 0.25 / 81,
                        0.25 / 243)
DEFAULT_T_GRID = (1e-1, 1e-2, 1e-3, 1e-4)


@dataclass
class KatoReport:
    """Classification of a measure against Kato's condition."""
    is_kato: bool
    dimension: int
    rule: str
    per_epsilon_values: list
    candidate_grid: np.ndarray
    modulus: dict
    decayed: bool
    finite: bool
    notes: str = ""

    def to_json_dict(self) -> dict:
        return {
            "is_kato": bool(self.is_kato),
            "per_epsilon_values": [
                {"epsilon": float(e), "sup_value": (None if not np.isfinite(v)
                                                    else float(v))}
                for e, v in self.per_epsilon_values],
            "candidate_grid": np.asarray(self.candidate_grid).tolist(),
            "dimension": self.dimension,
            "rule": self.rule,
            "modulus": {repr(float(t)): (None if not np.isfinite(v) else float(v))
                        for t, v in self.modulus.items()},
            "notes": self.notes,
        }


def kato_classify(measure: SignedMeasureSpec, epsilon_grid=None,
                  t_grid=DEFAULT_T_GRID) -> KatoReport:
    """Classify |mu| against Kato's condition via the dimension-split criterion.

    d=1: sup_x nu([x-1, x+1]) finite.  d=2: the log-kernel ball integral must
    vanish as eps -> 0.  d>=3: the |x-y|^{2-d} ball integral must vanish.
    The sup over x runs on a finite candidate grid (atom locations, density
    lattices, surface nodes), where the sup is attained for every supported
    component type; the limit is declared reached when the value at least
    halves between successive epsilon grid points down to eps ~ 1e-3.
    """
    d = measure.dimension
    comps = measure.positive_part + measure.negative_part
    grid = _candidate_grid(comps, d)
    notes = ("sup over finite candidate grid (atoms, density lattices, "
             "surface nodes); decay rule: successive ratio <= 0.5")
    if epsilon_grid is None:
        epsilon_grid = DEFAULT_EPSILON_GRID

    if not comps:
        return KatoReport(True, d, "empty", [], grid, {t: 0.0 for t in t_grid},
                          True, True, "zero measure is trivially Kato")

    modulus = {}
    for t in t_grid:
        vals = []
        for xi in grid:
            try:
                vals.append(characteristic(
                    SignedMeasureSpec(comps, (), d), t, xi, resolution=6))
            except InfiniteCharacteristicError:
                vals.append(np.inf)
        modulus[float(t)] = float(np.max(vals)) if vals else 0.0

    if d == 1:
        sups = [max(sum(_window_mass_1d(c, float(xi[0])) for c in comps)
                    for xi in grid)]
        finite = np.isfinite(sups[0])
        report = KatoReport(bool(finite), d, "window-mass (d=1)",
                            [(1.0, sups[0])], grid, modulus, True, bool(finite),
                            notes + "; every finite-mass BV measure on R is Kato")
        return report

    if d == 2:
        g_fn = lambda r: np.where(
            r == 0.0, np.inf,
            np.where(r < 1.0, np.log(1.0 / np.maximum(r, 1e-300)), 0.0))
        rule = "log-kernel ball integral (d=2)"
    else:
        g_fn = lambda r: np.where(r == 0.0, np.inf,
                                  np.maximum(r, 1e-300) ** (2 - d))
        rule = f"|x-y|^(2-d) ball integral (d={d})"

    per_eps = []
    finite = True
    for eps in epsilon_grid:
        vals = []
        for xi in grid:
            v = sum(_ball_restricted_integral(c, xi, float(eps), g_fn, d)
                    for c in comps)
            vals.append(v)
        sup_v = float(np.max(vals))
        if not np.isfinite(sup_v):
            finite = False
        per_eps.append((float(eps), sup_v))

    decayed = True
    tiny = 1e-14
    for (_, v0), (_, v1) in zip(per_eps[:-1], per_eps[1:]):
        if not (np.isfinite(v0) and np.isfinite(v1)):
            decayed = False
            break
        if v0 <= tiny and v1 <= tiny:
            continue
        if v1 > 0.5 * v0:
            decayed = False
            break
    is_kato = bool(finite and decayed)
    return KatoReport(is_kato, d, rule, per_eps, grid, modulus, decayed,
                      finite, notes)


def ball_growth_probe(measure: SignedMeasureSpec, x_list, rho_grid) -> dict:
    """Estimate the ball-growth exponent: nu(B(x, rho)) ~ rho^alpha.

    Fits the slope of log mass against log rho over the probe grid and
    reports gamma_hat = alpha - (d - 2), the margin over the critical
    exponent d - 2.  Fractal carriers are not constructed; this probes the
    catalogue components only.
    """
    d = measure.dimension
    comps = measure.positive_part + measure.negative_part
    one = lambda r: np.ones_like(np.asarray(r, dtype=float))
    rows = []
    for x in np.atleast_2d(np.asarray(x_list, dtype=float)):
        masses = [sum(_ball_restricted_integral(c, x, float(rho), one, d)
                      for c in comps) for rho in rho_grid]
        rows.append(masses)
    masses = np.asarray(rows).max(axis=0)
    pos = masses > 0
    if np.count_nonzero(pos) < 2:
        return {"alpha_hat": float("nan"), "gamma_hat": float("nan"),
                "masses": masses.tolist(), "rho_grid": list(map(float, rho_grid))}
    slope = np.polyfit(np.log(np.asarray(rho_grid)[pos]), np.log(masses[pos]), 1)[0]
    return {"alpha_hat": float(slope), "gamma_hat": float(slope - (d - 2)),
            "masses": masses.tolist(), "rho_grid": list(map(float, rho_grid))}


# ---------------------------------------------------------------------------
# Mollification


def mollify_component(comp: MeasureComponent, n: int, d: int) -> Density:
    """Convolve one nonnegative component with the bump mollifier g_n."""
    bump = BumpMollifier(d, n)
    rad = bump.radius
    if isinstance(comp, Atom):
        loc = comp.location
        mass = comp.mass
        prof = lambda rho, _m=mass, _b=bump: _m * _b.profile(rho)
        func = lambda pts, _l=loc, _p=prof: _p(
            np.linalg.norm(np.asarray(pts, dtype=float) - _l, axis=-1))
        return Density(center=loc, func=func, bound=mass * bump.sup,
                       support_radius=rad, radial_profile=prof,
                       radial_range=(0.0, rad))
    if isinstance(comp, Density):
        offs, wts = bump.ball_nodes()
        base = comp

        def func(pts, _o=offs, _w=wts, _f=base.func):
            pts = np.asarray(pts, dtype=float)
            shifted = pts[..., None, :] - _o
            vals = np.asarray(_f(shifted.reshape(-1, d))).reshape(
                shifted.shape[:-1])
            return vals @ _w

        return Density(center=base.center, func=func, bound=base.bound,
                       support_radius=base.support_radius + rad)
    if isinstance(comp, SphereSurface):
        center, R = comp.center, comp.radius
        if np.isscalar(comp.density):
            dens = float(comp.density)
            rho_tab = np.linspace(max(0.0, R - rad) - 0.05 * rad,
                                  R + rad + 0.05 * rad, 201)
            vals = np.array([
                qd.sphere_ring_integral(
                    center, R, center + np.eye(d)[0] * max(r, 1e-12),
                    bump.profile, density=dens, r_cut=rad)
                for r in np.maximum(rho_tab, 0.0)])
            prof = lambda rho, _t=rho_tab, _v=vals: np.interp(
                np.asarray(rho, dtype=float), _t, _v, left=0.0, right=0.0)
            func = lambda pts, _c=center, _p=prof: _p(
                np.linalg.norm(np.asarray(pts, dtype=float) - _c, axis=-1))
            bound = float(vals.max())
            return Density(center=center, func=func, bound=bound,
                           support_radius=R + rad, radial_profile=prof,
                           radial_range=(max(0.0, R - rad), R + rad))

        def func(pts, _c=center, _R=R, _dens=comp.density, _b=bump):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            return np.array([qd.sphere_ring_integral(_c, _R, p, _b.profile,
                                                     density=_dens, r_cut=_b.radius)
                             for p in pts])

        pts_s, _, nrm_s = qd.sphere_surface_nodes(center, R, 16)
        dmax = float(np.max(_dens_eval(comp.density, pts_s, nrm_s)))
        ring_max = qd.sphere_ring_integral(center, R, center + np.eye(d)[0] * R,
                                           bump.profile, density=1.0, r_cut=rad)
        return Density(center=center, func=func, bound=dmax * ring_max * 1.1,
                       support_radius=R + rad)
    if isinstance(comp, BoxBoundary):
        lo, hi = comp.corner_lo, comp.corner_hi

        def func(pts, _lo=lo, _hi=hi, _dens=comp.density, _b=bump):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            out = np.zeros(pts.shape[0])
            for i, p in enumerate(pts):
                if d == 1:
                    for v, s in ((_lo[0], -1.0), (_hi[0], 1.0)):
                        dv = _dens if np.isscalar(_dens) else float(np.asarray(
                            _dens(np.array([[v]]), np.array([[s]])))[0])
                        out[i] += dv * _b.profile(np.array([abs(p[0] - v)]))[0]
                    continue
                for axis in range(d):
                    for side, v in ((0, _lo[axis]), (1, _hi[axis])):
                        dens_pts = None
                        if not np.isscalar(_dens):
                            nrm = np.zeros(d)
                            nrm[axis] = -1.0 if side == 0 else 1.0
                            dens_pts = lambda q, _n=nrm: np.asarray(
                                _dens(q, np.repeat(_n[None, :], q.shape[0], 0)))
                        val = qd.face_polar_integral(_lo, _hi, axis, v, p,
                                                     _b.profile, r_cut=_b.radius,
                                                     density=dens_pts)
                        if np.isscalar(_dens):
                            val *= float(_dens)
                        out[i] += val
            return out

        half = 0.5 * (hi - lo)
        center = 0.5 * (lo + hi)
        dmax = comp.density if np.isscalar(comp.density) else 1.0
        bound_est = float(dmax) * bump.sup * qd.sphere_area(max(d - 1, 1)) \
            * rad ** max(d - 1, 1) + float(dmax) * (2.0 if d == 1 else 0.0)
        return Density(center=center, func=func,
                       bound=max(bound_est, float(dmax) * bump.sup),
                       support_radius=float(np.linalg.norm(half)) + rad)
    raise TypeError(f"unknown component type {type(comp)!r}")


def mollify_measure(measure: SignedMeasureSpec, n: int) -> SignedMeasureSpec:
    """Componentwise convolution with g_n; returns density-only parts.

    Total mass of each part is preserved to quadrature tolerance (the
    discrete mollifier is normalised to unit mass).
    """
    if n < 1:
        raise ValueError("smoothing index n must be >= 1")
    d = measure.dimension
    pos = tuple(mollify_component(c, n, d) for c in measure.positive_part)
    neg = tuple(mollify_component(c, n, d) for c in measure.negative_part)
    return SignedMeasureSpec(pos, neg, d)
