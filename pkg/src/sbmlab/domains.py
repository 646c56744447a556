"""Domain geometry and kernels of the operator (1/2)Lap - l.

Two concrete domains are supported: an open interval (a, b) with a uniform
interior grid and tridiagonal solves, and a disk with a polar grid and a
sparse solve.  The kernels exposed here are harmonic measure, the Poisson
operator K_D^l, the Green operator G_D^l, the harmonic-measure density
k_x^l(y, z), and Euler-Maruyama sampling of Brownian paths stopped at the
boundary (with Brownian-bridge crossing correction).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy import sparse
from scipy.sparse.linalg import splu

DEFAULT_GRID_1D = 2048
DEFAULT_GRID_DISK = (48, 64)  # (radial, angular)


class PreconditionError(ValueError):
    """Input violates an operation precondition (e.g. point not interior)."""


class DataError(ValueError):
    """Non-finite or negative data where nonnegative finite data is required."""


@dataclass(frozen=True)
class Interval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"degenerate interval [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.a) & (x < self.b)

    def dist_to_boundary(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = np.minimum(x - self.a, self.b - x)
        return np.maximum(d, 0.0)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0] - self.center[0], x[..., 1] - self.center[1])
        return r < self.radius

    def dist_to_boundary(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0] - self.center[0], x[..., 1] - self.center[1])
        return np.maximum(self.radius - r, 0.0)


Domain = Interval | Disk

# Coefficient of the inverse-square blow-up profile: u ~ C / dist^2 solves
# (1/2)u'' = 2u^2 with C determined by 3C = 2C^2.
BLOWUP_COEFF = 1.5


def snap_interior(domain: Interval, x: float, h: float) -> float:
    """Snap a point within one cell of the boundary inward, with a warning."""
    if not domain.contains(x):
        raise PreconditionError(f"point {x} not strictly inside {domain}")
    lo, hi = domain.a + h, domain.b - h
    if x < lo or x > hi:
        warnings.warn(f"point {x} within one cell of the boundary; snapped inward")
        return min(max(x, lo), hi)
    return x


@dataclass
class AtomicMeasure:
    """Finite atomic measure: atom positions (1d or 2d points) and masses."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if len(self.masses) != len(np.atleast_1d(self.positions if self.positions.ndim == 1
                                                 else self.positions[:, 0])):
            raise DataError("positions/masses length mismatch")
        if np.any(self.masses < 0):
            raise DataError("atom masses must be nonnegative")

    @classmethod
    def point(cls, x, mass: float = 1.0) -> "AtomicMeasure":
        if np.ndim(x) == 0:
            return cls(np.array([float(x)]), np.array([float(mass)]))
        return cls(np.array([x], dtype=float), np.array([float(mass)]))

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def pair(self, g) -> float:
        """<mu, g> for a callable or field g."""
        return float(np.sum(self.masses * np.asarray(g(self.positions), dtype=float)))


@dataclass
class BoundaryFunction:
    """Boundary data: a value pair for an interval, an angular grid for a disk.

    Angular values are taken at theta_j = 2*pi*j/m and interpreted as a
    piecewise-constant density/trace on the boundary circle.
    """

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if isinstance(self.domain, Interval):
            if self.values.shape == (1,):
                self.values = np.repeat(self.values, 2)
            if self.values.shape != (2,):
                raise DataError("interval boundary data must be a pair (f(a), f(b))")
        if not np.all(np.isfinite(self.values)):
            raise DataError("boundary data must be finite")

    @classmethod
    def constant(cls, domain: Domain, c: float, n_theta: int = DEFAULT_GRID_DISK[1]):
        if isinstance(domain, Interval):
            return cls(domain, np.array([c, c], dtype=float))
        return cls(domain, np.full(n_theta, float(c)))

    def __add__(self, other: "BoundaryFunction") -> "BoundaryFunction":
        return BoundaryFunction(self.domain, self.values + other.values)

    def scaled(self, c: float) -> "BoundaryFunction":
        return BoundaryFunction(self.domain, c * self.values)


class ScalarField:
    """Grid-backed function on a domain with piecewise-linear interpolation.

    For the interval the data lives on interior nodes plus the two boundary
    values.  A field flagged ``blowup`` follows the inverse-square boundary
    profile: evaluation returns max(grid interpolant, C/dist^2 from either
    endpoint), which is a pointwise lower bound of the maximal solution and
    exact to leading order near the boundary.
    """

    def __init__(self, domain, nodes, values, bc=(0.0, 0.0), blowup=False):
        self.domain = domain
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.bc = (float(bc[0]), float(bc[1]))
        self.blowup = bool(blowup)
        if self.nodes.size < 3:
            raise DataError("scalar field needs at least 3 nodes")
        if not self.blowup and not np.all(np.isfinite(self.values)):
            raise DataError("non-finite field values on a non-blowup field")

    @classmethod
    def constant(cls, domain: Interval, c: float, n: int = DEFAULT_GRID_1D):
        g = Grid1D(domain, n)
        return cls(domain, g.nodes, np.full(n, float(c)), bc=(c, c))

    @classmethod
    def from_callable(cls, domain: Interval, fn: Callable, n: int = DEFAULT_GRID_1D):
        g = Grid1D(domain, n)
        vals = np.asarray(fn(g.nodes), dtype=float)
        return cls(domain, g.nodes, vals, bc=(float(fn(domain.a)), float(fn(domain.b))))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a, b = self.domain.a, self.domain.b
        xs = np.concatenate(([a], self.nodes, [b]))
        vs = np.concatenate(([self.bc[0]], self.values, [self.bc[1]]))
        out = np.interp(x, xs, vs)
        if self.blowup:
            d_a = np.maximum(x - a, 1e-300)
            d_b = np.maximum(b - x, 1e-300)
            prof = np.maximum(BLOWUP_COEFF / d_a**2, BLOWUP_COEFF / d_b**2)
            out = np.maximum(out, prof)
        return out

    def dump_csv(self, path) -> None:
        arr = np.column_stack([self.nodes, self.values])
        np.savetxt(path, arr, delimiter=",", header="node,value", comments="",
                   fmt="%.17g")


@dataclass(frozen=True)
class Grid1D:
    """Uniform interior grid on an interval: nodes a+h, ..., b-h."""

    domain: Interval
    n: int = DEFAULT_GRID_1D

    @property
    def h(self) -> float:
        return self.domain.length / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.domain.a + self.h * np.arange(1, self.n + 1)

    def nearest(self, x) -> np.ndarray:
        idx = np.rint((np.asarray(x, dtype=float) - self.domain.a) / self.h) - 1
        return np.clip(idx.astype(np.int64), 0, self.n - 1)


def _killing_values(domain: Interval, l, grid: Grid1D) -> np.ndarray:
    if l is None:
        return np.zeros(grid.n)
    if np.isscalar(l):
        vals = np.full(grid.n, float(l))
    elif isinstance(l, ScalarField):
        vals = l(grid.nodes)
    else:
        vals = np.asarray(l, dtype=float)
        if vals.shape != (grid.n,):
            raise DataError("killing array does not match the grid")
    if np.any(vals < -1e-15):
        raise DataError("killing rate l must be nonnegative")
    return np.maximum(vals, 0.0)


class IntervalOperator:
    """Factorized Dirichlet operator (l - 1/2 Lap_h) on a uniform grid.

    One Cholesky factorization is shared by all Poisson/Green solves against
    the same killing field; the matrix is symmetric positive definite for
    l >= 0.
    """

    def __init__(self, domain: Interval, l=None, n: int = DEFAULT_GRID_1D):
        self.domain = domain
        self.grid = Grid1D(domain, n)
        self.l = _killing_values(domain, l, self.grid)
        h = self.grid.h
        self._off = -0.5 / h**2
        diag = 1.0 / h**2 + self.l
        ab = np.zeros((2, n))
        ab[0, 1:] = self._off
        ab[1, :] = diag
        self._cho = cholesky_banded(ab)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self._cho, False), rhs)

    def poisson(self, fa: float, fb: float) -> np.ndarray:
        """Interior values of K_D^l applied to boundary data (fa, fb)."""
        rhs = np.zeros(self.grid.n)
        rhs[0] = -self._off * fa
        rhs[-1] = -self._off * fb
        return self.solve(rhs)

    def green(self, f: np.ndarray) -> np.ndarray:
        """Interior values of G_D^l f for f sampled on the grid nodes."""
        return self.solve(np.asarray(f, dtype=float))

    def poisson_field(self, bf: BoundaryFunction) -> ScalarField:
        vals = self.poisson(bf.values[0], bf.values[1])
        return ScalarField(self.domain, self.nodes, vals, bc=(bf.values[0], bf.values[1]))

    def green_field(self, f) -> ScalarField:
        fv = f(self.nodes) if callable(f) else np.asarray(f, dtype=float)
        return ScalarField(self.domain, self.nodes, self.green(fv), bc=(0.0, 0.0))

    def exit_weight(self, side: int) -> np.ndarray:
        """m_y^l({endpoint}) as a grid function: kill-weighted exit probability."""
        return self.poisson(1.0, 0.0) if side == 0 else self.poisson(0.0, 1.0)

    def apply(self, v: np.ndarray, fa: float = 0.0, fb: float = 0.0) -> np.ndarray:
        """(l - 1/2 Lap_h) v with the given Dirichlet values spliced in."""
        ext = np.concatenate(([fa], v, [fb]))
        lap = (ext[2:] - 2.0 * ext[1:-1] + ext[:-2]) / self.grid.h**2
        return self.l * v - 0.5 * lap


# ---------------------------------------------------------------------------
# disk: polar grid and sparse solve
# ---------------------------------------------------------------------------


class DiskOperator:
    """Operator (l - 1/2 Lap) on a polar grid over a disk.

    Radial nodes sit at half indices r_i = (i + 1/2) hr, which closes the
    stencil at the origin without a coordinate-singularity row.  The theta
    direction is periodic.
    """

    def __init__(self, domain: Disk, l=None, shape: tuple[int, int] = DEFAULT_GRID_DISK):
        self.domain = domain
        self.nr, self.nt = shape
        R = domain.radius
        self.hr = R / self.nr
        self.ht = 2 * math.pi / self.nt
        self.r = (np.arange(self.nr) + 0.5) * self.hr
        self.theta = np.arange(self.nt) * self.ht

        if l is None:
            lv = np.zeros((self.nr, self.nt))
        elif np.isscalar(l):
            lv = np.full((self.nr, self.nt), float(l))
        else:
            lv = np.asarray(l, dtype=float)
        if np.any(lv < 0):
            raise DataError("killing rate l must be nonnegative")
        self.l = lv

        n = self.nr * self.nt
        rows, cols, data = [], [], []

        def idx(i, j):
            return i * self.nt + (j % self.nt)

        # -(1/2)[u_rr + u_r/r + u_tt/r^2] + l u, flux form in r; the boundary
        # face sits half a cell from the last ring, hence the doubled weight.
        for i in range(self.nr):
            ri = self.r[i]
            r_minus = ri - 0.5 * self.hr
            r_plus = ri + 0.5 * self.hr
            c_minus = 0.5 * r_minus / (ri * self.hr**2)  # zero at the origin face
            c_plus = 0.5 * r_plus / (ri * self.hr**2)
            if i == self.nr - 1:
                c_plus = R / (ri * self.hr**2)
            c_theta = 0.5 / (ri * self.ht) ** 2
            for j in range(self.nt):
                here = idx(i, j)
                diag = c_minus + c_plus + 2 * c_theta + self.l[i, j]
                rows.append(here); cols.append(here); data.append(diag)
                if i > 0:
                    rows.append(here); cols.append(idx(i - 1, j)); data.append(-c_minus)
                if i < self.nr - 1:
                    rows.append(here); cols.append(idx(i + 1, j)); data.append(-c_plus)
                rows.append(here); cols.append(idx(i, j - 1)); data.append(-c_theta)
                rows.append(here); cols.append(idx(i, j + 1)); data.append(-c_theta)
        self._bdry_coeff = R / (self.r[-1] * self.hr**2) * np.ones(self.nt)
        A = sparse.csc_matrix((data, (rows, cols)), shape=(n, n))
        self._lu = splu(A)

    def points(self) -> np.ndarray:
        rr, tt = np.meshgrid(self.r, self.theta, indexing="ij")
        cx, cy = self.domain.center
        return np.stack([cx + rr * np.cos(tt), cy + rr * np.sin(tt)], axis=-1)

    def solve(self, rhs_grid: np.ndarray) -> np.ndarray:
        return self._lu.solve(rhs_grid.reshape(-1)).reshape(self.nr, self.nt)

    def poisson(self, boundary_values: np.ndarray) -> np.ndarray:
        """K_D^l of piecewise-constant boundary data on the angular grid."""
        rhs = np.zeros((self.nr, self.nt))
        rhs[-1, :] = self._bdry_coeff * np.asarray(boundary_values, dtype=float)
        return self.solve(rhs)

    def green(self, f_grid: np.ndarray) -> np.ndarray:
        return self.solve(np.asarray(f_grid, dtype=float))

    def interp(self, grid_vals: np.ndarray, x, boundary_values=None) -> np.ndarray:
        """Bilinear interpolation in (r, theta); linear to the boundary data."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cx, cy = self.domain.center
        dx, dy = x[:, 0] - cx, x[:, 1] - cy
        r = np.hypot(dx, dy)
        th = np.mod(np.arctan2(dy, dx), 2 * math.pi)
        bvals = np.zeros(self.nt) if boundary_values is None else boundary_values
        r_ext = np.concatenate((self.r, [self.domain.radius]))
        v_ext = np.vstack([grid_vals, bvals])
        # clamp below the first ring: value of the first ring (regular center)
        ir = np.clip(np.searchsorted(r_ext, r) - 1, 0, len(r_ext) - 2)
        wr = np.clip((r - r_ext[ir]) / (r_ext[ir + 1] - r_ext[ir]), 0.0, 1.0)
        it = np.floor(th / self.ht).astype(int) % self.nt
        wt = (th - it * self.ht) / self.ht
        it1 = (it + 1) % self.nt
        v00 = v_ext[ir, it]
        v01 = v_ext[ir, it1]
        v10 = v_ext[ir + 1, it]
        v11 = v_ext[ir + 1, it1]
        out = (1 - wr) * ((1 - wt) * v00 + wt * v01) + wr * ((1 - wt) * v10 + wt * v11)
        return out if out.size > 1 else float(out[0])


# ---------------------------------------------------------------------------
# public kernel operations
# ---------------------------------------------------------------------------


def harmonic_measure(domain: Domain, x, n: int = DEFAULT_GRID_DISK[1]) -> BoundaryFunction:
    """Harmonic measure of Brownian motion from an interior point.

    Interval: atom weights (P(exit at a), P(exit at b)).  Disk: the Poisson
    kernel density sampled on the angular grid (integrates to 1 against
    R dtheta).
    """
    if isinstance(domain, Interval):
        if not domain.contains(x):
            raise PreconditionError(f"{x} is not interior to {domain}")
        t = (float(x) - domain.a) / domain.length
        return BoundaryFunction(domain, np.array([1.0 - t, t]))
    x = np.asarray(x, dtype=float)
    if not domain.contains(x):
        raise PreconditionError(f"{x} is not interior to {domain}")
    cx, cy = domain.center
    R = domain.radius
    rho = np.hypot(x[0] - cx, x[1] - cy) / R
    phi = math.atan2(x[1] - cy, x[0] - cx)
    theta = np.arange(n) * (2 * math.pi / n)
    dens = (1 - rho**2) / (2 * math.pi * R * (1 - 2 * rho * np.cos(theta - phi) + rho**2))
    return BoundaryFunction(domain, dens)


def poisson_op(domain: Domain, l, f: BoundaryFunction, x, n: int | None = None) -> float:
    """K_D^l f(x): kill-weighted harmonic extension of boundary data f."""
    if isinstance(domain, Interval):
        op = IntervalOperator(domain, l, n or DEFAULT_GRID_1D)
        x = snap_interior(domain, float(x), op.grid.h)
        return float(op.poisson_field(f)(x))
    op = DiskOperator(domain, None if l is None else l, (n, len(f.values)) if n else DEFAULT_GRID_DISK)
    if not domain.contains(np.asarray(x)):
        raise PreconditionError(f"{x} is not interior to {domain}")
    vals = op.poisson(f.values)
    return float(op.interp(vals, x, boundary_values=f.values))


def green_op(domain: Domain, l, f, x, n: int | None = None) -> float:
    """G_D^l f(x): expected kill-weighted path integral of f before exit."""
    if isinstance(domain, Interval):
        op = IntervalOperator(domain, l, n or DEFAULT_GRID_1D)
        x = snap_interior(domain, float(x), op.grid.h)
        return float(op.green_field(f)(x))
    op = DiskOperator(domain, None if l is None else l, DEFAULT_GRID_DISK)
    if not domain.contains(np.asarray(x)):
        raise PreconditionError(f"{x} is not interior to {domain}")
    fv = f(op.points()) if callable(f) else np.asarray(f, dtype=float)
    fv = np.asarray(fv, dtype=float)
    if fv.ndim == 0:
        fv = np.full((op.nr, op.nt), float(fv))
    vals = op.green(fv)
    return float(op.interp(vals, x))


def harmonic_density_k(domain: Domain, l, x, y, z, n: int | None = None) -> float:
    """k_x^l(y, z) = dm_y^l / dm_x^l at a boundary point (interval) or cell (disk)."""
    if isinstance(domain, Interval):
        op = IntervalOperator(domain, l, n or DEFAULT_GRID_1D)
        for p in (x, y):
            if not domain.contains(p):
                raise PreconditionError(f"{p} is not interior to {domain}")
        side = 0 if abs(float(z) - domain.a) <= abs(float(z) - domain.b) else 1
        w = op.exit_weight(side)
        fld = ScalarField(domain, op.nodes, w, bc=(1.0 if side == 0 else 0.0,
                                                   0.0 if side == 0 else 1.0))
        return float(fld(y) / fld(x))
    op = DiskOperator(domain, None if l is None else l, DEFAULT_GRID_DISK)
    for p in (x, y):
        if not domain.contains(np.asarray(p)):
            raise PreconditionError(f"{p} is not interior to {domain}")
    bvals = np.zeros(op.nt)
    j = int(round(float(z) / op.ht)) % op.nt  # z given as an angle
    bvals[j] = 1.0 / (op.ht * domain.radius)  # density of the one-hot cell
    vals = op.poisson(bvals)
    return float(op.interp(vals, y) / op.interp(vals, x))


# ---------------------------------------------------------------------------
# Brownian path sampling
# ---------------------------------------------------------------------------


@dataclass
class PathRecord:
    """A Brownian path run to the boundary, with its exit point.

    ``positions``/``times`` hold the pre-exit skeleton including the start
    point and the interpolated exit state.  ``truncated`` flags a path that
    hit the step budget before exiting.
    """

    domain: Domain
    times: np.ndarray
    positions: np.ndarray
    exit_point: float | np.ndarray | None
    truncated: bool = False

    def integral(self, g) -> float:
        """Trapezoidal integral of g along the path up to the exit time."""
        vals = g(self.positions)
        return float(np.trapezoid(vals, self.times))


def sample_exit_path(domain: Domain, x, dt: float, rng: np.random.Generator,
                     max_steps: int = 10_000_000) -> PathRecord:
    """One Euler-Maruyama Brownian path stopped at the boundary.

    Crossings are detected either by a sign change over a step or by a
    Brownian-bridge excursion within the step; the exit time is placed by
    linear interpolation.  Seed-identical calls reproduce the same path.
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if isinstance(domain, Interval):
        return _sample_exit_path_1d(domain, float(x), dt, rng, max_steps)
    return _sample_exit_path_disk(domain, np.asarray(x, dtype=float), dt, rng, max_steps)


def _bridge_hit_prob(d0: np.ndarray, d1: np.ndarray, dt: float) -> np.ndarray:
    """P(bridge crosses a flat boundary | endpoint distances d0, d1 >= 0)."""
    return np.exp(-2.0 * np.maximum(d0, 0.0) * np.maximum(d1, 0.0) / dt)


def _sample_exit_path_1d(domain, x, dt, rng, max_steps):
    if not domain.contains(x):
        raise PreconditionError(f"{x} is not interior to {domain}")
    sq = math.sqrt(dt)
    pos = [x]
    times = [0.0]
    y = x
    for step in range(max_steps):
        y2 = y + sq * rng.standard_normal()
        t = times[-1]
        if y2 <= domain.a or y2 >= domain.b:
            bdry = domain.a if y2 <= domain.a else domain.b
            frac = (bdry - y) / (y2 - y)
            times.append(t + frac * dt)
            pos.append(bdry)
            return PathRecord(domain, np.array(times), np.array(pos), bdry)
        # within-step excursion to the nearer endpoint
        for bdry in (domain.a, domain.b):
            p = _bridge_hit_prob(abs(y - bdry), abs(y2 - bdry), dt)
            if rng.random() < p:
                times.append(t + 0.5 * dt)
                pos.append(bdry)
                return PathRecord(domain, np.array(times), np.array(pos), bdry)
        times.append(t + dt)
        pos.append(y2)
        y = y2
    return PathRecord(domain, np.array(times), np.array(pos), None, truncated=True)


def _sample_exit_path_disk(domain, x, dt, rng, max_steps):
    if not domain.contains(x):
        raise PreconditionError(f"{x} is not interior to {domain}")
    sq = math.sqrt(dt)
    c = np.asarray(domain.center)
    R = domain.radius
    pos = [x.copy()]
    times = [0.0]
    y = x.copy()
    for step in range(max_steps):
        y2 = y + sq * rng.standard_normal(2)
        t = times[-1]
        r2 = np.hypot(*(y2 - c))
        if r2 >= R:
            z = c + (y2 - c) * (R / r2)
            times.append(t + dt)
            pos.append(z)
            return PathRecord(domain, np.array(times), np.array(pos), z)
        d0 = R - np.hypot(*(y - c))
        if rng.random() < _bridge_hit_prob(d0, R - r2, dt):
            mid = 0.5 * (y + y2)
            rm = np.hypot(*(mid - c))
            z = c + (mid - c) * (R / max(rm, 1e-12))
            times.append(t + 0.5 * dt)
            pos.append(z)
            return PathRecord(domain, np.array(times), np.array(pos), z)
        times.append(t + dt)
        pos.append(y2)
        y = y2
    return PathRecord(domain, np.array(times), np.array(pos, dtype=float), None, truncated=True)


def exit_path_statistics(domain: Interval, x: float, dt: float, n_paths: int,
                         fields: Sequence, rng: np.random.Generator,
                         max_steps: int = 10_000_000):
    """Vectorized path MC on an interval: exit sides and path integrals.

    Returns (exit_side array with 0/1, integrals array of shape
    (n_fields, n_paths)).  Keeps only running accumulators, so large path
    counts fit in memory.
    """
    if not isinstance(domain, Interval):
        raise PreconditionError("batch path statistics implemented on intervals")
    sq = math.sqrt(dt)
    y = np.full(n_paths, float(x))
    alive = np.arange(n_paths)
    side = np.full(n_paths, -1, dtype=np.int8)
    integ = np.zeros((len(fields), n_paths))
    fvals = np.array([f(y) for f in fields]) if fields else np.zeros((0, n_paths))
    for step in range(max_steps):
        if alive.size == 0:
            break
        y2 = y + sq * rng.standard_normal(alive.size)
        crossed_a = y2 <= domain.a
        crossed_b = y2 >= domain.b
        inside = ~(crossed_a | crossed_b)
        u = rng.random(alive.size)
        pa = _bridge_hit_prob(y - domain.a, y2 - domain.a, dt)
        pb = _bridge_hit_prob(domain.b - y, domain.b - y2, dt)
        bridge_a = inside & (u < pa)
        bridge_b = inside & ~bridge_a & (u < pa + pb)
        exit_a = crossed_a | bridge_a
        exit_b = crossed_b | bridge_b
        # integral increment: trapezoid on the full step, half-step to an exit
        if fields:
            f2 = np.array([f(np.clip(y2, domain.a, domain.b)) for f in fields])
            w = np.where(exit_a | exit_b, 0.5 * dt, dt)
            integ[:, alive] += 0.5 * (fvals + f2) * w
            fvals = f2
        done = exit_a | exit_b
        side[alive[exit_a]] = 0
        side[alive[exit_b]] = 1
        keep = ~done
        alive = alive[keep]
        y = y2[keep]
        if fields:
            fvals = fvals[:, keep]
    return side, integ
