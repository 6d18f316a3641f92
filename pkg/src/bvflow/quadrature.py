"""Low-level quadrature utilities shared across the package.

Gauss-Legendre panels, unit-sphere direction grids (d <= 3), surface node
sets for spheres and box boundaries, ring integrals for radial kernels
against sphere surface measures, and the compactly supported bump mollifier.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn


@lru_cache(maxsize=128)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


def gauss_nodes(a: float, b: float, n: int = 16):
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def panel_nodes(a: float, b: float, breaks=(), n: int = 16):
    """Composite Gauss nodes on [a, b], split at interior break points."""
    pts = [float(a)]
    for c in sorted(float(c) for c in breaks):
        if pts[-1] + 1e-15 < c < b - 1e-15:
            pts.append(c)
    pts.append(float(b))
    xs, ws = [], []
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi <= lo:
            continue
        x, w = gauss_nodes(lo, hi, n)
        xs.append(x)
        ws.append(w)
    if not xs:
        return np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(ws)


def graded_panel_nodes(a: float, b: float, n_panels: int = 5, n: int = 12,
                       ratio: float = 0.15):
    """Gauss panels geometrically graded toward the left endpoint.

    Suited to integrands with an (integrable) singularity or boundary layer
    at a.  Panel widths grow by 1/ratio away from a.
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    edges = [b]
    for _ in range(n_panels - 1):
        edges.append(a + (edges[-1] - a) * ratio)
    edges.append(a)
    edges = edges[::-1]
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_nodes(lo, hi, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def double_graded_nodes(a: float, b: float, n_panels: int = 4, n: int = 10,
                        ratio: float = 0.15):
    """Gauss panels graded toward both endpoints (sqrt-type kinks at a and b)."""
    if b <= a:
        return np.empty(0), np.empty(0)
    mid = 0.5 * (a + b)
    x1, w1 = graded_panel_nodes(a, mid, n_panels, n, ratio)
    x2, w2 = graded_panel_nodes(0.0, b - mid, n_panels, n, ratio)
    return np.concatenate([x1, b - x2]), np.concatenate([w1, w2])


def sphere_area(d: int, radius: float = 1.0) -> float:
    """Surface area of the sphere of given radius in R^d (d >= 1)."""
    return 2.0 * np.pi ** (d / 2.0) / gamma_fn(d / 2.0) * radius ** (d - 1)


def unit_directions(d: int, resolution: int = 16):
    """Direction grid integrating over the unit sphere S^{d-1}.

    Returns (dirs, weights) with weights summing to the sphere area.
    Supported for d in {1, 2, 3}; the measure catalogue does not go higher.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        m = max(8, 4 * resolution)
        th = (np.arange(m) + 0.5) * (2.0 * np.pi / m)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        return dirs, np.full(m, 2.0 * np.pi / m)
    if d == 3:
        n_u = max(4, resolution)
        n_phi = max(8, 2 * resolution)
        u, wu = _leggauss(n_u)
        phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
        su = np.sqrt(1.0 - u ** 2)
        dirs = np.empty((n_u * n_phi, 3))
        wts = np.empty(n_u * n_phi)
        k = 0
        for i in range(n_u):
            dirs[k:k + n_phi, 0] = su[i] * np.cos(phi)
            dirs[k:k + n_phi, 1] = su[i] * np.sin(phi)
            dirs[k:k + n_phi, 2] = u[i]
            wts[k:k + n_phi] = wu[i] * (2.0 * np.pi / n_phi)
            k += n_phi
        return dirs, wts
    raise NotImplementedError(f"direction grids are implemented for d <= 3, got d={d}")


def orthonormal_frame(axis: np.ndarray) -> np.ndarray:
    """Complete a unit vector to an orthonormal basis, axis as first row."""
    axis = np.asarray(axis, dtype=float)
    d = axis.size
    if d == 1:
        return axis.reshape(1, 1)
    e = np.zeros(d)
    e[int(np.argmin(np.abs(axis)))] = 1.0
    v = e - axis * (axis @ e)
    v = v / np.linalg.norm(v)
    if d == 2:
        return np.stack([axis, v])
    w = np.cross(axis, v)
    return np.stack([axis, v, w])


def sphere_surface_nodes(center, radius: float, resolution: int = 16):
    """Quadrature nodes on the sphere S(center, radius).

    Returns (points, weights, normals); weights sum to the surface area.
    """
    center = np.asarray(center, dtype=float)
    d = center.size
    dirs, w = unit_directions(d, resolution)
    pts = center[None, :] + radius * dirs
    return pts, w * radius ** (d - 1), dirs


def box_boundary_nodes(lo, hi, resolution: int = 16):
    """Quadrature nodes on the boundary of the box [lo, hi].

    Returns (points, weights, normals, face_ids) where face_ids encode
    (axis, side).  Weights sum to the boundary measure.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    if d == 1:
        pts = np.array([[lo[0]], [hi[0]]])
        wts = np.array([1.0, 1.0])
        normals = np.array([[-1.0], [1.0]])
        return pts, wts, normals, [(0, 0), (0, 1)]
    pts_list, wts_list, nrm_list, ids = [], [], [], []
    for axis in range(d):
        others = [j for j in range(d) if j != axis]
        grids = [gauss_nodes(lo[j], hi[j], resolution) for j in others]
        mesh = np.meshgrid(*[g[0] for g in grids], indexing="ij")
        wmesh = np.meshgrid(*[g[1] for g in grids], indexing="ij")
        wflat = np.ones(mesh[0].size)
        for wm in wmesh:
            wflat = wflat * wm.ravel()
        for side, val, sgn in ((0, lo[axis], -1.0), (1, hi[axis], 1.0)):
            p = np.empty((mesh[0].size, d))
            for k, j in enumerate(others):
                p[:, j] = mesh[k].ravel()
            p[:, axis] = val
            n = np.zeros((p.shape[0], d))
            n[:, axis] = sgn
            pts_list.append(p)
            wts_list.append(wflat.copy())
            nrm_list.append(n)
            ids.extend([(axis, side)] * p.shape[0])
    return (np.concatenate(pts_list), np.concatenate(wts_list),
            np.concatenate(nrm_list), ids)


def azimuth_positive_part(a, amp):
    """Closed form of the circle integral of max(a + amp*cos(chi), 0).

    Vectorised over a, amp (amp >= 0).  Equals 2*pi*a when a >= amp, zero
    when a <= -amp, and 2*(a*chi* + amp*sin(chi*)) with cos(chi*) = -a/amp
    in between.
    """
    a = np.asarray(a, dtype=float)
    amp = np.asarray(amp, dtype=float)
    out = np.where(a >= amp, 2.0 * np.pi * a, 0.0)
    mid = (a < amp) & (a > -amp)
    if np.any(mid):
        am, bm = np.broadcast_arrays(a, amp)
        chi = np.arccos(np.clip(-am[mid] / np.maximum(bm[mid], 1e-300), -1.0, 1.0))
        out = np.asarray(out, dtype=float)
        out[mid] = 2.0 * (am[mid] * chi + bm[mid] * np.sin(chi))
    return out


def sphere_ring_integral(center, radius: float, x, radial_fn, density=None,
                         r_cut: float = np.inf, n_psi: int = 24,
                         n_azimuth: int = 16) -> float:
    """Integral of radial_fn(|x - y|) * density(y, n(y)) over S(center, radius).

    Parametrised by the polar angle psi about the axis from center to x, so
    the radial singularity of radial_fn (when x lies on the sphere) cancels
    against the ring measure and the integrand stays bounded for d >= 2.
    Restricting to |x - y| <= r_cut shrinks the psi range.

    density may be None (taken as 1), a float, or a callable
    density(points, normals) -> values.
    """
    center = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    d = center.size
    const_dens = None
    if density is None:
        const_dens = 1.0
    elif np.isscalar(density):
        const_dens = float(density)

    if d == 1:
        total = 0.0
        for s in (1.0, -1.0):
            y = center + s * radius
            r = abs(x[0] - y[0])
            if r <= r_cut:
                dens = const_dens if const_dens is not None else float(
                    np.asarray(density(y[None, :], np.array([[s]])))[0])
                total += radial_fn(np.array([r]))[0] * dens
        return total

    rho = float(np.linalg.norm(x - center))
    if rho < 1e-13 * max(1.0, radius):
        # x at the center: constant distance, plain surface quadrature
        if radius > r_cut:
            return 0.0
        pts, wts, nrm = sphere_surface_nodes(center, radius, resolution=16)
        dens = const_dens if const_dens is not None else np.asarray(density(pts, nrm))
        return float(np.sum(wts * dens) * radial_fn(np.array([radius]))[0]) \
            if const_dens is None else float(np.sum(wts) * const_dens
                                             * radial_fn(np.array([radius]))[0])

    # distance^2(psi) = rho^2 + R^2 - 2 rho R cos(psi), increasing on [0, pi]
    psi_max = np.pi
    if np.isfinite(r_cut):
        c = (rho ** 2 + radius ** 2 - r_cut ** 2) / (2.0 * rho * radius)
        if c >= 1.0:
            return 0.0
        if c > -1.0:
            psi_max = np.arccos(c)

    frame = orthonormal_frame((x - center) / rho)
    u_hat = frame[0]
    psi, wpsi = graded_panel_nodes(0.0, psi_max, n_panels=5, n=max(8, n_psi // 2))
    # stable distance: (rho - R)^2 + 4 rho R sin^2(psi/2) avoids cancellation
    dist = np.sqrt((rho - radius) ** 2
                   + 4.0 * rho * radius * np.sin(0.5 * psi) ** 2)
    dist = np.maximum(dist, 1e-300)
    kvals = radial_fn(dist)

    if d == 2:
        v_hat = frame[1]
        ring = np.zeros_like(psi)
        for s in (1.0, -1.0):
            ydirs = np.cos(psi)[:, None] * u_hat[None, :] \
                + s * np.sin(psi)[:, None] * v_hat[None, :]
            pts = center[None, :] + radius * ydirs
            if const_dens is not None:
                ring += const_dens
            else:
                ring += np.asarray(density(pts, ydirs))
        integrand = radius * kvals * ring
        return float(np.sum(wpsi * integrand))

    # d == 3
    v_hat, w_hat = frame[1], frame[2]
    if const_dens is not None:
        ring = 2.0 * np.pi * const_dens
        integrand = radius ** 2 * np.sin(psi) * kvals * ring
        return float(np.sum(wpsi * integrand))
    chi = (np.arange(n_azimuth) + 0.5) * (2.0 * np.pi / n_azimuth)
    ydirs = (np.cos(psi)[:, None, None] * u_hat[None, None, :]
             + np.sin(psi)[:, None, None]
             * (np.cos(chi)[None, :, None] * v_hat[None, None, :]
                + np.sin(chi)[None, :, None] * w_hat[None, None, :]))
    pts = center[None, None, :] + radius * ydirs
    dens = np.asarray(density(pts.reshape(-1, 3), ydirs.reshape(-1, 3)))
    dens = dens.reshape(psi.size, n_azimuth)
    ring = dens.mean(axis=1) * 2.0 * np.pi
    integrand = radius ** 2 * np.sin(psi) * kvals * ring
    return float(np.sum(wpsi * integrand))


def face_polar_integral(lo, hi, axis: int, side_value: float, x, g_fn,
                        r_cut: float, density=None, n_dir: int = 16,
                        n_rad: int = 24) -> float:
    """Integral of g(|x - y|) * density(y) over one box face, near-field form.

    The face lies in the hyperplane {y_axis = side_value} clipped to the box
    cross-section.  Uses in-plane polar coordinates around the projection of
    x, which keeps the integrand bounded when x sits on the face and g has an
    r^{2-d} or log singularity.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.asarray(x, dtype=float)
    d = lo.size
    others = [j for j in range(d) if j != axis]
    h_perp = abs(x[axis] - side_value)
    if h_perp >= r_cut:
        return 0.0
    rho_cap = np.sqrt(max(r_cut ** 2 - h_perp ** 2, 0.0))
    q = x.copy()
    q[axis] = side_value

    if d == 2:
        j = others[0]
        total = 0.0
        for s in (1.0, -1.0):
            if s > 0:
                rho_max = min(rho_cap, hi[j] - q[j])
            else:
                rho_max = min(rho_cap, q[j] - lo[j])
            if rho_max <= 0:
                continue
            rho, w = graded_panel_nodes(0.0, rho_max, n_panels=4, n=12)
            r = np.sqrt(h_perp ** 2 + rho ** 2)
            pts = np.repeat(q[None, :], rho.size, axis=0)
            pts[:, j] = q[j] + s * rho
            dens = 1.0 if density is None else np.asarray(density(pts))
            total += float(np.sum(w * g_fn(np.maximum(r, 1e-300)) * dens))
        return total

    if d == 3:
        j1, j2 = others
        th = (np.arange(n_dir) + 0.5) * (2.0 * np.pi / n_dir)
        wth = 2.0 * np.pi / n_dir
        total = 0.0
        for c1, c2 in zip(np.cos(th), np.sin(th)):
            rho_max = rho_cap
            for coord, cdir in ((j1, c1), (j2, c2)):
                if cdir > 1e-14:
                    rho_max = min(rho_max, (hi[coord] - q[coord]) / cdir)
                elif cdir < -1e-14:
                    rho_max = min(rho_max, (lo[coord] - q[coord]) / cdir)
            if rho_max <= 0:
                continue
            rho, w = graded_panel_nodes(0.0, rho_max, n_panels=4, n=n_rad // 2)
            r = np.sqrt(h_perp ** 2 + rho ** 2)
            pts = np.repeat(q[None, :], rho.size, axis=0)
            pts[:, j1] = q[j1] + rho * c1
            pts[:, j2] = q[j2] + rho * c2
            dens = 1.0 if density is None else np.asarray(density(pts))
            total += wth * float(np.sum(w * rho * g_fn(np.maximum(r, 1e-300)) * dens))
        return total
    raise NotImplementedError("face_polar_integral supports d in {2, 3}")


# ---------------------------------------------------------------------------
# Bump mollifier


@lru_cache(maxsize=8)
def _bump_tables(d: int):
    """Normalisation and cumulative tables for the unit bump profile in R^d."""
    u = np.linspace(0.0, 1.0, 20001)
    prof = np.zeros_like(u)
    inside = u < 1.0
    prof[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    radial = prof * u ** (d - 1)
    cum = np.concatenate([[0.0], np.cumsum((radial[1:] + radial[:-1]) * 0.5
                                           * np.diff(u))])
    total = cum[-1] * sphere_area(d)
    cum_mass = cum * sphere_area(d) / total  # normalised: reaches 1 at u = 1
    c_norm = 1.0 / total                     # profile normaliser
    if d == 1:
        # one-sided cdf over [0, 1]; full cdf uses symmetry
        half = np.concatenate([[0.0], np.cumsum((prof[1:] + prof[:-1]) * 0.5
                                                * np.diff(u))])
        half = half / (2.0 * half[-1])
        return u, c_norm, cum_mass, half
    return u, c_norm, cum_mass, None


class BumpMollifier:
    """Radial C-infinity bump of unit mass supported on the ball |x| < 1/n.

    Profile: c * exp(-1 / (1 - |n x|^2)), normalised by quadrature so that
    the total mass is exactly one in the package's own arithmetic.
    """

    def __init__(self, dimension: int, n: int):
        if n < 1:
            raise ValueError("smoothing index n must be >= 1")
        self.dimension = int(dimension)
        self.n = int(n)
        self.radius = 1.0 / n
        u, c_norm, cum_mass, half = _bump_tables(self.dimension)
        self._u = u
        self._cum = cum_mass
        self._half = half
        self.c_norm = c_norm * n ** self.dimension
        self.sup = self.c_norm * np.exp(-1.0)

    def profile(self, r):
        """Radial profile value at |x| = r (vectorised)."""
        r = np.asarray(r, dtype=float)
        u = self.n * r
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        out[inside] = self.c_norm * np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return out

    def value(self, z):
        """Mollifier value at points z, shape (..., d)."""
        z = np.asarray(z, dtype=float)
        return self.profile(np.linalg.norm(z, axis=-1))

    def radial_mass(self, r):
        """Mass of the ball of radius r: integral of the mollifier over |x|<r."""
        u = np.clip(self.n * np.asarray(r, dtype=float), 0.0, 1.0)
        return np.interp(u, self._u, self._cum)

    def cdf_1d(self, z):
        """d=1 cumulative distribution of the bump (vectorised)."""
        if self.dimension != 1:
            raise ValueError("cdf_1d is defined for d = 1")
        z = np.asarray(z, dtype=float)
        u = np.clip(self.n * z, -1.0, 1.0)
        pos = np.interp(np.abs(u), self._u, self._half)
        return np.where(u >= 0.0, 0.5 + pos, 0.5 - pos)

    def ball_nodes(self, n_radial: int = 10, resolution: int = 12):
        """Convolution quadrature nodes over the support ball.

        Returns (offsets, weights) with weights summing exactly to one, so
        discrete convolutions are convex combinations and preserve sup-norm
        bounds of the convolved function.
        """
        dirs, wd = unit_directions(self.dimension, resolution)
        r, wr = gauss_nodes(0.0, self.radius, n_radial)
        radial_w = wr * self.profile(r) * r ** (self.dimension - 1)
        offsets = (r[:, None, None] * dirs[None, :, :]).reshape(-1, self.dimension)
        weights = (radial_w[:, None] * wd[None, :]).ravel()
        weights = weights / weights.sum()
        return offsets, weights
