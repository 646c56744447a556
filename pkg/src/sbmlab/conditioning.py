"""Conditioning densities for exit-measure statistics (h-transform families).

Four families are implemented on the interval (total-mass tables also on the
disk through its radial symmetry):

* ``h_beta_zero`` - conditioning a Poisson sample with intensity beta*X_D on
  being empty: the ratio exp(-<mu, u_beta>) / exp(-u_beta(x)).
* ``RhoTable`` - conditioning the Poisson sample on consisting of given
  boundary points z_1..z_k: partition sums of kernel fields rho_C built from
  the harmonic-measure density of the 4*u_beta-killed motion.
* ``PointConditioner`` - conditioning a single point sampled from X_D/M:
  a beta-integral of killed harmonic kernels against exp(-<mu, u_beta>).
* ``HvModel`` - conditioning on the total exit mass (or the endpoint-mass
  pair): histogram reference law, cluster density table gamma, binary
  fragmentation kernel, and the truncated series for the density H^v.
  Series terms reduce to lattice convolutions because the n-fold
  fragmentation kernel is the n-fold convolution of the reference law
  reweighted by gamma-pairings; bins are centered on the lattice v = i*Delta
  so fragment-label sums are exact in index arithmetic.

The exponent in all Laplace-functional roles is u_beta = V_D(beta); the
quadruple 4*u_beta enters only as the killing rate of the spatial motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sbmlab.domains import (
    AtomicMeasure,
    DataError,
    Disk,
    Domain,
    Interval,
    IntervalOperator,
    PreconditionError,
    ScalarField,
    DEFAULT_GRID_1D,
)
from sbmlab.loglaplace import BlowupSolution, solve_VD, solve_blowup
from sbmlab.moments import partitions_of
from sbmlab.particles import (
    SimConfig,
    simulate_exit_batch,
    simulate_exit_disk_batch,
    sample_cluster_batch,
)

DEFAULT_BINS = 64
DEFAULT_BINS_2D = 48
BIN_FLOOR = 20


class IntegrationError(RuntimeError):
    """Quadrature tail estimate exceeded its tolerance."""


class ExcludedBinError(ValueError):
    """Requested value falls in a bin below the occupancy floor."""


# ---------------------------------------------------------------------------
# Poisson-sample conditioning: empty sample and k sampled points
# ---------------------------------------------------------------------------


def h_beta_zero(mu: AtomicMeasure, x: float, u_beta: ScalarField) -> float:
    """Density ratio for conditioning on an empty Poisson sample."""
    return float(math.exp(-mu.pair(u_beta) + u_beta(np.array([x]))[0]))


class RhoTable:
    """Kernel fields rho_C for subsets of sampled boundary points z_1..z_k.

    Singletons are harmonic-measure density fields of the killed motion,
    k_x^{l_beta}(., z_i); larger subsets follow the half-sum Green
    recursion.  Entries are indexed by bitmask over {1..k}.
    """

    MAX_POINTS = 4

    def __init__(self, domain: Interval, x: float, beta: float, zs,
                 n: int = DEFAULT_GRID_1D):
        if len(zs) > self.MAX_POINTS:
            raise DataError(f"at most {self.MAX_POINTS} sampled points supported")
        self.domain = domain
        self.x = float(x)
        self.beta = float(beta)
        self.zs = [float(z) for z in zs]
        self.u_beta = solve_VD(domain, beta, n=n).u
        self.op = IntervalOperator(domain, 4.0 * self.u_beta.values, n)
        self.fields: dict[int, ScalarField] = {}
        for i, z in enumerate(self.zs):
            side = 0 if abs(z - domain.a) <= abs(z - domain.b) else 1
            w = self.op.exit_weight(side)
            bc = (1.0, 0.0) if side == 0 else (0.0, 1.0)
            fld = ScalarField(domain, self.op.nodes, w, bc=bc)
            ref = float(fld(self.x))
            self.fields[1 << i] = ScalarField(domain, self.op.nodes, w / ref,
                                              bc=(bc[0] / ref, bc[1] / ref))
        full = (1 << len(self.zs)) - 1
        for size in range(2, len(self.zs) + 1):
            for m in range(1, full + 1):
                if bin(m).count("1") != size:
                    continue
                src = np.zeros(n)
                sub = (m - 1) & m
                while sub:
                    src += 4.0 * self.fields[sub].values * self.fields[m ^ sub].values
                    sub = (sub - 1) & m
                self.fields[m] = ScalarField(domain, self.op.nodes,
                                             0.5 * self.op.green(src), bc=(0.0, 0.0))

    def rho_mu(self, mu: AtomicMeasure) -> float:
        """exp(-<mu, u_beta>) times the partition sum over <mu, rho_C>."""
        k = len(self.zs)
        pair = {m: mu.pair(self.fields[m]) for m in self.fields}
        total = 0.0
        for part in partitions_of(tuple(range(k))):
            prod = 1.0
            for block in part:
                m = 0
                for i in block:
                    m |= 1 << i
                prod *= pair[m]
            total += prod
        return float(math.exp(-mu.pair(self.u_beta)) * total)

    def value(self, mu: AtomicMeasure) -> float:
        """H^{beta,k,z}(mu) = rho_mu / rho_x."""
        return self.rho_mu(mu) / self.rho_mu(AtomicMeasure.point(self.x))

    def value_on_pairs(self, ya: float, yb: float, mass_a, mass_b) -> np.ndarray:
        """Vectorized H over two-atom measures (exit measures of a subdomain)."""
        k = len(self.zs)
        va = {m: float(self.fields[m](ya)) for m in self.fields}
        vb = {m: float(self.fields[m](yb)) for m in self.fields}
        ua, ub = float(self.u_beta(ya)), float(self.u_beta(yb))
        mass_a = np.asarray(mass_a, dtype=float)
        mass_b = np.asarray(mass_b, dtype=float)
        total = np.zeros_like(mass_a)
        for part in partitions_of(tuple(range(k))):
            prod = np.ones_like(mass_a)
            for block in part:
                m = 0
                for i in block:
                    m |= 1 << i
                prod = prod * (mass_a * va[m] + mass_b * vb[m])
            total += prod
        num = np.exp(-(mass_a * ua + mass_b * ub)) * total
        return num / self.rho_mu(AtomicMeasure.point(self.x))


# ---------------------------------------------------------------------------
# single sampled point
# ---------------------------------------------------------------------------


class PointConditioner:
    """Density of the law of one point sampled from X_D/M, against the base x.

    The numerator integrand at level beta couples the killed kernel
    m_y^{l_beta}(z) (relative to the flat harmonic measure at x) with the
    damping exp(-<mu, u_beta>); the beta-integral runs over a log grid with
    an explicit beta=0 segment and a power-law tail bound.
    """

    def __init__(self, domain: Interval, x: float, n_nodes: int = 32,
                 beta_min: float = 1e-3, beta_max: float = 1e3,
                 n: int = DEFAULT_GRID_1D, tail_tol: float = 5e-3):
        self.domain = domain
        self.x = float(x)
        self.tail_tol = tail_tol
        self.betas = np.concatenate(
            ([0.0], np.geomspace(beta_min, beta_max, n_nodes)))
        self.n = n
        base = IntervalOperator(domain, None, n)
        t = (self.x - domain.a) / domain.length
        self.m_x0 = {domain.a: 1.0 - t, domain.b: t}
        self.q_fields: dict[float, list[ScalarField]] = {domain.a: [], domain.b: []}
        self.u_fields: list[ScalarField] = []
        for b in self.betas:
            if b == 0.0:
                ub = ScalarField(domain, base.nodes, np.zeros(n), bc=(0.0, 0.0))
                op = base
            else:
                ub = solve_VD(domain, b, n=n).u
                op = IntervalOperator(domain, 4.0 * ub.values, n)
            self.u_fields.append(ub)
            for side, z in ((0, domain.a), (1, domain.b)):
                w = op.exit_weight(side)
                bc = (1.0, 0.0) if side == 0 else (0.0, 1.0)
                fld = ScalarField(domain, op.nodes, w / self.m_x0[z],
                                  bc=(bc[0] / self.m_x0[z], bc[1] / self.m_x0[z]))
                self.q_fields[z].append(fld)

    def _integrand_on_atoms(self, positions, masses, z) -> np.ndarray:
        vals = np.empty(len(self.betas))
        for i in range(len(self.betas)):
            q = self.q_fields[z][i](positions)
            u = self.u_fields[i](positions)
            vals[i] = np.sum(masses * q) * math.exp(-float(np.sum(masses * u)))
        return vals

    def _integral(self, integrand: np.ndarray) -> float:
        total = float(np.trapezoid(integrand, self.betas))
        i1, i0 = integrand[-1], integrand[-2]
        if i1 > 0 and i0 > i1:
            p = math.log(i0 / i1) / math.log(self.betas[-1] / self.betas[-2])
            tail = i1 * self.betas[-1] / (p - 1.0) if p > 1.0 else math.inf
        else:
            tail = math.inf if i1 > 0 else 0.0
        if tail > self.tail_tol * max(total, 1e-300):
            raise IntegrationError(
                f"beta-quadrature tail {tail:.3e} above tolerance for total {total:.3e}")
        return total

    def numerator(self, mu: AtomicMeasure, z: float) -> float:
        pos = np.atleast_1d(mu.positions)
        mas = np.atleast_1d(mu.masses)
        return self._integral(self._integrand_on_atoms(pos, mas, z))

    def value(self, mu: AtomicMeasure, z: float) -> float:
        return self.numerator(mu, z) / self.numerator(AtomicMeasure.point(self.x), z)

    def value_on_pairs(self, ya, yb, mass_a, mass_b, z) -> np.ndarray:
        """Vectorized over two-atom measures at fixed positions (ya, yb)."""
        mass_a = np.asarray(mass_a, dtype=float)
        mass_b = np.asarray(mass_b, dtype=float)
        acc = np.zeros((len(self.betas), mass_a.size))
        for i in range(len(self.betas)):
            qa = float(self.q_fields[z][i](ya))
            qb = float(self.q_fields[z][i](yb))
            ua = float(self.u_fields[i](ya))
            ub = float(self.u_fields[i](yb))
            acc[i] = (mass_a * qa + mass_b * qb) * np.exp(-(mass_a * ua + mass_b * ub))
        num = np.trapezoid(acc, self.betas, axis=0)
        return num / self.numerator(AtomicMeasure.point(self.x), z)


# ---------------------------------------------------------------------------
# total-mass (and endpoint-pair) reference tables
# ---------------------------------------------------------------------------


@dataclass
class MassLaw:
    """Histogram reference law of the total exit mass on {X_D != 0}.

    Bins are centered on the lattice v = i*Delta (bin 0 covers (0, Delta/2)),
    so sums of bin centers land on bin centers.
    """

    domain: Domain
    x: float
    delta: float
    counts: np.ndarray
    n_replicas: int
    eps: float
    u_x: float

    @property
    def centers(self) -> np.ndarray:
        return self.delta * np.arange(len(self.counts))

    @property
    def widths(self) -> np.ndarray:
        w = np.full(len(self.counts), self.delta)
        w[0] = self.delta / 2
        return w

    @property
    def bin_mass(self) -> np.ndarray:
        return self.counts / self.n_replicas

    @property
    def density(self) -> np.ndarray:
        return self.bin_mass / self.widths

    @property
    def survival_fraction(self) -> float:
        return float(self.counts.sum()) / self.n_replicas

    @property
    def r0_reference(self) -> float:
        return 1.0 - math.exp(-self.u_x)

    def bin_of(self, v) -> np.ndarray:
        return np.rint(np.asarray(v, dtype=float) / self.delta).astype(np.int64)

    def populated(self, floor: int = BIN_FLOOR) -> np.ndarray:
        return self.counts >= floor


def bin_positive_masses(values: np.ndarray, delta: float, nbins: int) -> np.ndarray:
    """Counts over centered bins, dropping zeros and the overflow tail."""
    v = values[values > 0]
    idx = np.rint(v / delta).astype(np.int64)
    idx = idx[idx < nbins]
    return np.bincount(idx, minlength=nbins)


def estimate_mass_law(domain: Domain, x, config: SimConfig, n_replicas: int,
                      seed: int, bins: int = DEFAULT_BINS,
                      v_max: float | None = None,
                      blowup: BlowupSolution | None = None,
                      batch=None) -> MassLaw:
    """Reference law R_x from direct simulation at delta_x.

    ``batch`` reuses an existing simulation; v_max defaults to the 0.9995
    sample quantile so the grid covers the observed support.
    """
    if n_replicas < 10**5 and batch is None:
        raise PreconditionError("mass-law estimation requires >= 1e5 replicas")
    if isinstance(domain, Interval):
        if batch is None:
            batch = simulate_exit_batch(domain, AtomicMeasure.point(x), config,
                                        n_replicas, seed)
        totals = batch.total
    else:
        if batch is None:
            batch = simulate_exit_disk_batch(domain, AtomicMeasure.point(x, 1.0),
                                             config, n_replicas, seed)
        totals = batch.totals
    n_replicas = len(totals)
    pos = totals[totals > 0]
    if v_max is None:
        v_max = float(np.quantile(pos, 0.9995))
    delta = v_max / (bins - 1)
    counts = bin_positive_masses(totals, delta, bins)
    u = blowup if blowup is not None else solve_blowup(domain)
    if isinstance(domain, Interval):
        u_x = float(u.u(x))
    else:
        u_x = float(u.u(np.atleast_2d(x)))
    law = MassLaw(domain, float(np.atleast_1d(np.asarray(x, dtype=float)).ravel()[0]),
                  delta, counts, n_replicas, config.eps, u_x)
    empty = (law.counts == 0) & (law.centers < np.max(pos))
    if np.any(empty):
        import warnings
        warnings.warn(f"{int(empty.sum())} empty bins inside the observed support")
    return law


@dataclass
class GammaTable:
    """Density table gamma_{x,v}(y) = d N_{y,M} / d R_x on the bin lattice."""

    y_nodes: np.ndarray
    law: MassLaw
    gamma: np.ndarray            # (n_y, n_bins)
    excluded: np.ndarray         # bins below the reference floor
    attempts: np.ndarray
    epsilon: float

    def at(self, y, v_index: int) -> np.ndarray:
        if self.excluded[v_index]:
            raise ExcludedBinError(f"bin {v_index} excluded (reference floor)")
        return np.interp(np.asarray(y, dtype=float), self.y_nodes,
                         self.gamma[:, v_index])

    def row(self, y) -> np.ndarray:
        """gamma(y, .) over all bins (excluded bins as 0)."""
        out = np.array([np.interp(y, self.y_nodes, self.gamma[:, k])
                        for k in range(self.gamma.shape[1])])
        out[self.excluded] = 0.0
        return out


def estimate_gamma(domain: Interval, x: float, law: MassLaw, config: SimConfig,
                   seed: int, y_nodes=None, survivors_per_node: int = 20000,
                   epsilon: float | None = None, floor: int = BIN_FLOOR) -> GammaTable:
    """Cluster mass-law densities over a y-grid, divided by the reference law.

    Each y-node gets its own rejection-sampled batch of single-ancestor
    clusters; the excursion normalization 1/eps per attempt makes the
    histogram an estimate of N_y(M in bin).
    """
    if y_nodes is None:
        y_nodes = domain.a + (domain.b - domain.a) * np.arange(1, 32) / 32.0
    y_nodes = np.asarray(y_nodes, dtype=float)
    eps = epsilon if epsilon is not None else config.eps
    nb = len(law.counts)
    gamma = np.zeros((len(y_nodes), nb))
    attempts = np.zeros(len(y_nodes), dtype=np.int64)
    ref_mass = law.bin_mass
    excluded = ~law.populated(floor)
    for i, y in enumerate(y_nodes):
        nested, att, _w = sample_cluster_batch(domain, float(y), config,
                                               seed + 31 * i,
                                               n_survivors=survivors_per_node,
                                               epsilon=eps)
        attempts[i] = att
        counts = bin_positive_masses(nested.stages[-1].total, law.delta, nb)
        n_y_mass = counts / (att * eps)       # N_y(M in bin)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(ref_mass > 0, n_y_mass / ref_mass, 0.0)
        gamma[i] = g
    gamma[:, excluded] = 0.0
    return GammaTable(y_nodes, law, gamma, excluded, attempts, eps)


@dataclass
class FragKernel:
    """Binary fragmentation kernel on the bin lattice.

    k(v_i; v_j) = r_j * r_{i-j} / r_i in bin-mass form: the probability that
    a sum landing in bin i splits with first piece in bin j is
    mass_j * mass_{i-j} / (convolved mass at i).
    """

    law: MassLaw
    floor: int = BIN_FLOOR

    def split_weights(self, i: int) -> np.ndarray:
        """Unnormalized weights over first-fragment bins j = 0..i."""
        m = self.law.bin_mass
        if i >= len(m):
            raise ExcludedBinError(f"bin {i} outside the lattice")
        return m[:i + 1] * m[:i + 1][::-1]

    def density_matrix(self) -> np.ndarray:
        """k(v, v') as a density in v' (rows: v)."""
        r = self.law.density
        m = self.law.bin_mass
        nb = len(m)
        out = np.zeros((nb, nb))
        for i in range(nb):
            if m[i] <= 0 or self.law.counts[i] < self.floor:
                continue
            out[i, :i + 1] = r[:i + 1] * r[:i + 1][::-1] / r[i]
        return out


@dataclass
class MassModel:
    """Everything the total-mass conditioning needs, bundled."""

    domain: Domain
    x: float
    law: MassLaw
    gamma: GammaTable
    frag: FragKernel
    blowup: BlowupSolution

    def u(self, y):
        if isinstance(self.domain, Interval):
            return self.blowup.u(y)
        return self.blowup.u(np.atleast_2d(y))


def gamma_capital(model: MassModel, v_index: int) -> np.ndarray:
    """Gamma_{x,v}(y) = 2 int gamma_{v'} gamma_{v-v'} K(v; dv') over y-nodes.

    In bin masses K(bin i; bin j) = m_j m_{i-j} / m_i, so the kernel's total
    mass is the 2-fold-convolution density ratio, not 1.
    """
    i = v_index
    m = model.law.bin_mass
    if m[i] <= 0:
        raise ExcludedBinError(f"reference bin {i} empty")
    w = model.frag.split_weights(i) / m[i]
    g = model.gamma.gamma[:, :i + 1]
    grev = g[:, ::-1]
    vals = 2.0 * np.sum(g * grev * w[None, :], axis=1)
    return vals


def green_4u_on_nodes(model: MassModel, values_on_nodes: np.ndarray,
                      n: int = DEFAULT_GRID_1D) -> np.ndarray:
    """G^{4u} applied to a function tabulated on the gamma y-grid."""
    dom = model.domain
    op = IntervalOperator(dom, 4.0 * np.minimum(model.blowup.u(Grid1D_nodes(dom, n)),
                                                1e12), n)
    f_fine = np.interp(op.nodes, model.gamma.y_nodes, values_on_nodes,
                       left=0.0, right=0.0)
    g = op.green(f_fine)
    return np.interp(model.gamma.y_nodes, op.nodes, g)


def Grid1D_nodes(domain: Interval, n: int) -> np.ndarray:
    from sbmlab.domains import Grid1D
    return Grid1D(domain, n).nodes


# ---------------------------------------------------------------------------
# H^v series
# ---------------------------------------------------------------------------


@dataclass
class HvResult:
    value: float
    terms: np.ndarray
    tail_estimate: float
    truncated: bool


class HvModel:
    """Truncated series for the total-mass conditioning density H^v.

    The n-th term at bin v is the n-fold lattice convolution of the measure
    a(dv) = <mu, gamma_v> R_x(dv), divided by n! and by the reference bin
    mass; the v = 0 branch is exp(-<mu,u> + u(x)).
    """

    def __init__(self, model: MassModel, n_max: int = 6):
        self.model = model
        self.n_max = n_max

    def atom_vector(self, y: float) -> np.ndarray:
        """a-vector of a unit atom at y: gamma(y, .) times reference bin mass."""
        return self.model.gamma.row(y) * self.model.law.bin_mass

    def series_terms(self, mu: AtomicMeasure, v_index: int,
                     n_max: int | None = None) -> np.ndarray:
        n_max = n_max or self.n_max
        a = np.zeros(len(self.model.law.counts))
        for y, m in zip(np.atleast_1d(mu.positions), np.atleast_1d(mu.masses)):
            a += m * self.atom_vector(float(y))
        terms = np.empty(n_max + 1)
        conv = a.copy()
        fact = 1.0
        k = v_index
        for n in range(1, n_max + 2):
            fact *= n
            terms[n - 1] = conv[k] / fact if k < len(conv) else 0.0
            if n <= n_max:
                conv = np.convolve(conv, a)[:len(a)]
        return terms

    def value(self, mu: AtomicMeasure, v_index: int | None, *,
              n_max: int | None = None) -> HvResult:
        """H^v(mu); v_index None encodes conditioning on a zero exit measure."""
        u = self.model.blowup.u
        damp = math.exp(-mu.pair(u) + float(u(np.array([self.model.x]))[0]))
        if v_index is None:
            return HvResult(damp, np.array([]), 0.0, False)
        if self.model.gamma.excluded[v_index]:
            raise ExcludedBinError(f"bin {v_index} excluded")
        terms = self.series_terms(mu, v_index, n_max)
        bin_mass = self.model.law.bin_mass[v_index]
        body = terms[:-1].sum() / bin_mass
        last, extra = terms[-2] / bin_mass, terms[-1] / bin_mass
        if last > 0 and extra < last:
            rho = extra / last if last > 0 else 0.0
            tail = extra / (1.0 - rho) if rho < 1 else math.inf
        else:
            tail = extra
        exp_u_x = math.exp(-mu.pair(u))
        value = exp_u_x * body
        tail_abs = exp_u_x * tail
        truncated = tail_abs > 1e-3 * max(value, 1e-300)
        return HvResult(value, exp_u_x * terms[:-1] / bin_mass, tail_abs, truncated)

    def value_on_pairs(self, ya: float, yb: float, mass_a, mass_b,
                       v_index: int, n_max: int | None = None) -> np.ndarray:
        """Vectorized H^v over two-atom measures via a bivariate term basis.

        a(mu) = m_a A + m_b B with fixed vectors A, B, so the n-th term is a
        polynomial sum_{j+l=n} C(n,j) m_a^j m_b^l (A^{*j} * B^{*l})[v]; the
        basis coefficients are precomputed once per (ya, yb, v).
        """
        n_max = n_max or self.n_max
        A = self.atom_vector(ya)
        B = self.atom_vector(yb)
        k = v_index
        if self.model.gamma.excluded[k]:
            raise ExcludedBinError(f"bin {k} excluded")
        nb = len(A)
        conv_a = [np.zeros(nb), A.copy()]   # conv_a[j] = A^{*j}
        conv_b = [np.zeros(nb), B.copy()]
        conv_a[0][0] = 1.0
        conv_b[0][0] = 1.0
        for j in range(2, n_max + 1):
            conv_a.append(np.convolve(conv_a[-1], A)[:nb])
            conv_b.append(np.convolve(conv_b[-1], B)[:nb])
        coeff = np.zeros((n_max + 1, n_max + 1))
        for n in range(1, n_max + 1):
            for j in range(n + 1):
                cab = np.convolve(conv_a[j], conv_b[n - j])[:nb][k]
                coeff[n, j] = cab * math.comb(n, j) / math.factorial(n)
        mass_a = np.asarray(mass_a, dtype=float)
        mass_b = np.asarray(mass_b, dtype=float)
        u = self.model.blowup.u
        u_a = float(u(np.array([ya]))[0])
        u_b = float(u(np.array([yb]))[0])
        total = np.zeros_like(mass_a)
        for n in range(1, n_max + 1):
            poly = np.zeros_like(mass_a)
            for j in range(n + 1):
                poly += coeff[n, j] * mass_a**j * mass_b**(n - j)
            total += poly
        bin_mass = self.model.law.bin_mass[k]
        return np.exp(-(mass_a * u_a + mass_b * u_b)) * total / bin_mass


def save_mass_model(model: MassModel, outdir) -> None:
    """Persist tables as CSV with JSON metadata (seeds live in the metadata)."""
    import json
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    law = model.law
    rows = np.column_stack([np.arange(len(law.counts)), law.centers, law.widths,
                            law.counts, law.density])
    np.savetxt(outdir / "mass_law.csv", rows, delimiter=",", comments="",
               header="bin,center,width,count,density", fmt="%.17g")
    g = np.column_stack([model.gamma.y_nodes, model.gamma.gamma])
    hdr = "y," + ",".join(f"bin{k}" for k in range(model.gamma.gamma.shape[1]))
    np.savetxt(outdir / "gamma.csv", g, delimiter=",", comments="", header=hdr,
               fmt="%.17g")
    meta = {
        "domain": {"type": "interval", "a": model.domain.a, "b": model.domain.b},
        "x": model.x,
        "delta": law.delta,
        "n_replicas": law.n_replicas,
        "eps": law.eps,
        "u_x": law.u_x,
        "gamma_epsilon": model.gamma.epsilon,
        "excluded": model.gamma.excluded.astype(int).tolist(),
        "attempts": model.gamma.attempts.tolist(),
    }
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_mass_model(indir) -> MassModel:
    import json
    from pathlib import Path

    indir = Path(indir)
    meta = json.loads((indir / "meta.json").read_text())
    domain = Interval(meta["domain"]["a"], meta["domain"]["b"])
    rows = np.loadtxt(indir / "mass_law.csv", delimiter=",", skiprows=1)
    law = MassLaw(domain, meta["x"], meta["delta"],
                  rows[:, 3].astype(np.int64), meta["n_replicas"], meta["eps"],
                  meta["u_x"])
    g = np.loadtxt(indir / "gamma.csv", delimiter=",", skiprows=1)
    gamma = GammaTable(g[:, 0], law, g[:, 1:],
                       np.asarray(meta["excluded"], dtype=bool),
                       np.asarray(meta["attempts"], dtype=np.int64),
                       meta["gamma_epsilon"])
    return MassModel(domain, meta["x"], law, gamma, FragKernel(law),
                     solve_blowup(domain))


def build_mass_model(domain: Interval, x: float, config: SimConfig, seed: int,
                     n_replicas: int = 100000, bins: int = DEFAULT_BINS,
                     survivors_per_node: int = 20000, y_nodes=None,
                     blowup: BlowupSolution | None = None,
                     batch=None) -> MassModel:
    """Estimate the full total-mass conditioning model (law, gamma, kernel)."""
    bl = blowup if blowup is not None else solve_blowup(domain)
    law = estimate_mass_law(domain, x, config, n_replicas, seed, bins=bins,
                            blowup=bl, batch=batch)
    gam = estimate_gamma(domain, x, law, config, seed + 1, y_nodes=y_nodes,
                         survivors_per_node=survivors_per_node)
    return MassModel(domain, x, law, gam, FragKernel(law), bl)
