"""Branching-particle approximation of super-Brownian exit measures.

Particles of mass 1/N perform Brownian motion, branch critically (0 or 2
offspring) at rate 4N, optionally die at a position-dependent killing rate,
and freeze on the boundary.  Two interchangeable engines are provided:

* ``exact``: an event-driven simulation of the lattice random walk whose
  generator discretizes (1/2)Lap.  Exit sides and event locations are drawn
  from the walk's exact absorption and occupation laws (factorized through
  the increasing/decreasing solutions of the associated three-term
  recurrence), so there is no time-step bias at all; the only approximation
  is the O(h^2) lattice itself.
* ``euler``: literal time stepping with per-step branch/kill coin flips and
  Brownian-bridge boundary-crossing correction.  Slower and O(dt)-biased,
  kept as an independent cross-check of the event-driven engine and as the
  route for the disk.

Both engines are deterministic given (config, seed); replicas are split
into fixed-size chunks seeded by spawn keys, so results do not depend on
thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from sbmlab.domains import (
    AtomicMeasure,
    DataError,
    Disk,
    Domain,
    Grid1D,
    Interval,
    PreconditionError,
    ScalarField,
    DEFAULT_GRID_1D,
)
from sbmlab.loglaplace import TruncationError

CHUNK_REPLICAS = 4096


@dataclass
class SimConfig:
    """Particle-system parameters; the mass quantum is 1/N."""

    N: int = 100
    branch_rate: float | None = None
    dt: float = 1e-4
    max_steps: int = 4_000_000_000
    killing: ScalarField | None = None
    method: str = "exact"
    n_grid: int = DEFAULT_GRID_1D

    def __post_init__(self):
        if self.N < 100:
            raise DataError("N must be at least 100 particles per unit mass")
        if self.branch_rate is None:
            self.branch_rate = 4.0 * self.N
        if self.method == "euler" and self.branch_rate * self.dt > 0.1:
            raise DataError("branch_rate * dt must not exceed 0.1")
        if self.method not in ("exact", "euler"):
            raise DataError(f"unknown engine {self.method!r}")

    @property
    def eps(self) -> float:
        return 1.0 / self.N


@dataclass
class ExitMeasure:
    """Atomic measure on the boundary; an empty atom list encodes X_D = 0."""

    domain: Domain
    positions: np.ndarray
    masses: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def is_zero(self) -> bool:
        return len(self.masses) == 0 or self.total_mass == 0.0

    def mass_at(self, z, tol: float = 1e-12) -> float:
        pos = np.atleast_1d(self.positions)
        if pos.size == 0:
            return 0.0
        sel = np.abs(pos - z) <= tol
        return float(np.sum(self.masses[sel]))


@dataclass
class ExitBatch:
    """Interval exit measures for a batch of replicas: endpoint mass counts."""

    domain: Interval
    eps: float
    counts0: np.ndarray
    counts1: np.ndarray

    @property
    def mass0(self) -> np.ndarray:
        return self.eps * self.counts0

    @property
    def mass1(self) -> np.ndarray:
        return self.eps * self.counts1

    @property
    def total(self) -> np.ndarray:
        return self.eps * (self.counts0 + self.counts1)

    @property
    def extinct(self) -> np.ndarray:
        return (self.counts0 + self.counts1) == 0

    def __len__(self):
        return len(self.counts0)

    def measure(self, i: int) -> ExitMeasure:
        pos, mas = [], []
        if self.counts0[i]:
            pos.append(self.domain.a)
            mas.append(self.eps * self.counts0[i])
        if self.counts1[i]:
            pos.append(self.domain.b)
            mas.append(self.eps * self.counts1[i])
        return ExitMeasure(self.domain, np.array(pos), np.array(mas))


@dataclass
class NestedExitBatch:
    chain: list[Interval]
    stages: list[ExitBatch]


@dataclass
class ClusterBatch:
    """Surviving single-ancestor clusters, conditioned on a nonzero exit.

    ``weight`` estimates the excursion-measure normalization
    N_x(X_D != 0) ~= P(X_D != 0 from eps*delta_x) / eps.
    """

    batch: ExitBatch
    epsilon: float
    attempts: int
    weight: float


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _kernel_seed(seed: int, *key: int) -> int:
    """64-bit stream seed derived by counter-based splitting."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# exact event-driven engine
# ---------------------------------------------------------------------------


class WalkEngine:
    """Event-driven branching walk on the interior lattice of an interval.

    Walk rates 1/(2h^2) per neighbor; total event rate c = branch + kill per
    node.  For a particle at node i the four outcomes (exit left/right,
    event at node j on the left/right of i) have closed-form probabilities
    in terms of the increasing solution phi (phi_0 = 0) and decreasing
    solution psi (psi_{n+1} = 0) of the homogeneous recurrence, and event
    locations are sampled through shared cumulative tables, one
    searchsorted per event.
    """

    def __init__(self, domain: Interval, n: int, branch_rate: float,
                 killing: ScalarField | None = None):
        self.domain = domain
        self.grid = Grid1D(domain, n)
        self.branch_rate = float(branch_rate)
        nodes = self.grid.nodes
        kill = np.zeros(n) if killing is None else np.maximum(killing(nodes), 0.0)
        self.kill = kill
        c = self.branch_rate + kill
        self.c = c
        h = self.grid.h

        # phi/psi recurrences: u_{i+1} = (2 + 2 h^2 c_i) u_i - u_{i-1}
        coef = 2.0 + 2.0 * h * h * c
        phi = np.empty(n + 2)
        phi[0], phi[1] = 0.0, 1.0
        for i in range(1, n + 1):
            phi[i + 1] = coef[i - 1] * phi[i] - phi[i - 1]
        psi = np.empty(n + 2)
        psi[n + 1], psi[n] = 0.0, 1.0
        for i in range(n, 0, -1):
            psi[i - 1] = coef[i - 1] * psi[i] - psi[i + 1]
        if not (np.isfinite(phi[n + 1]) and np.isfinite(psi[0])) or phi[n + 1] > 1e290:
            raise DataError("event-rate field too large for the lattice recurrence")
        self.phi, self.psi = phi, psi

        inv_beta = 2.0 * h * h  # 1/|off-diagonal|
        w = psi[0]              # discrete Wronskian, = phi_{n+1} up to roundoff
        pint = phi[1:n + 1]
        qint = psi[1:n + 1]
        self.p_exit0 = qint / psi[0]
        self.p_exit1 = pint / phi[n + 1]
        self.cum_left = np.concatenate(([0.0], np.cumsum(pint * c)))   # index by node
        rev = np.cumsum((qint * c)[::-1])[::-1]
        self.cum_right_tail = np.concatenate((rev, [0.0]))
        self.p_event_left = qint * self.cum_left[:-1] * (inv_beta / w)
        self.p_event_right = pint * self.cum_right_tail[:n] * (inv_beta / w)
        total = self.p_exit0 + self.p_exit1 + self.p_event_left + self.p_event_right
        if np.max(np.abs(total - 1.0)) > 1e-8:
            raise DataError("walk outcome probabilities failed to normalize")
        self._norm = total
        self.p_branch_at = self.branch_rate / c
        cat = np.empty((n, 3))
        cat[:, 0] = self.p_exit0 / total
        cat[:, 1] = (self.p_exit0 + self.p_exit1) / total
        cat[:, 2] = (self.p_exit0 + self.p_exit1 + self.p_event_left) / total
        self.cat = np.ascontiguousarray(cat)

    def node_of(self, x) -> np.ndarray:
        return self.grid.nearest(x)

    def sample_events(self, idx: np.ndarray, rng: np.random.Generator):
        """One outcome per particle: (-1 exit left, -2 exit right, j >= 0 event node)."""
        u = rng.random(idx.size) * self._norm[idx]
        p0 = self.p_exit0[idx]
        p1 = p0 + self.p_exit1[idx]
        pl = p1 + self.p_event_left[idx]
        out = np.empty(idx.size, dtype=np.int64)
        exit0 = u < p0
        exit1 = ~exit0 & (u < p1)
        left = ~exit0 & ~exit1 & (u < pl)
        right = ~(exit0 | exit1 | left)
        out[exit0] = -1
        out[exit1] = -2
        if np.any(left):
            t = rng.random(left.sum()) * self.cum_left[idx[left]]
            out[left] = np.searchsorted(self.cum_left, t, side="left") - 1
            np.clip(out[left], 0, idx[left] - 1, out=out[left])
        if np.any(right):
            i = idx[right]
            t = rng.random(right.sum()) * self.cum_right_tail[i]
            # smallest j >= i with tail(j+1) <= tail(i) - t
            target = self.cum_right_tail[i] - t
            j = len(self.cum_right_tail) - 1 - np.searchsorted(
                self.cum_right_tail[::-1], target, side="left")
            out[right] = np.clip(j, i, self.grid.n - 1)
        return out


from numba import njit


@njit(cache=True, nogil=True)
def _walk_kernel(start_idx, start_rep, counts0, counts1, cat, cum_left,
                 tail_right, p_branch_at, seed, budget):
    """Depth-first branching walk; one lineage at a time, siblings stacked.

    ``cat`` holds per-node cumulative category thresholds
    (exit0, exit0+exit1, exit0+exit1+event_left) scaled to a unit total.
    The generator is an inline xorshift128+ seeded through splitmix64.
    Returns the event count, or -(count) if the budget was exceeded.
    """
    # splitmix64 expansion of the seed into two state words
    z = (np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    s0 = z ^ (z >> np.uint64(31))
    z = (np.uint64(seed) + np.uint64(0x3C6EF372FE94F82A))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    s1 = z ^ (z >> np.uint64(31))
    scale = 1.1102230246251565e-16  # 2^-53

    n = p_branch_at.shape[0]
    stack = np.empty(1 << 20, dtype=np.int64)
    events = 0
    for k in range(start_idx.shape[0]):
        rep = start_rep[k]
        stack[0] = start_idx[k]
        sp = 1
        while sp > 0:
            sp -= 1
            i = stack[sp]
            while True:
                events += 1
                if events > budget:
                    return -events
                t1 = s1 ^ (s1 << np.uint64(23))
                t1 ^= t1 >> np.uint64(17)
                t1 ^= s0 ^ (s0 >> np.uint64(26))
                u = float((s0 + t1) >> np.uint64(11)) * scale
                s0, s1 = s1, t1
                if u < cat[i, 1]:
                    if u < cat[i, 0]:
                        counts0[rep] += 1
                    else:
                        counts1[rep] += 1
                    break
                if u < cat[i, 2]:
                    # event among nodes j < i, mass ~ phi_j c_j
                    t1 = s1 ^ (s1 << np.uint64(23))
                    t1 ^= t1 >> np.uint64(17)
                    t1 ^= s0 ^ (s0 >> np.uint64(26))
                    t = float((s0 + t1) >> np.uint64(11)) * scale * cum_left[i]
                    s0, s1 = s1, t1
                    lo = 0
                    hi = i - 1
                    while lo < hi:
                        mid = (lo + hi) >> 1
                        if cum_left[mid + 1] >= t:
                            hi = mid
                        else:
                            lo = mid + 1
                    j = lo
                else:
                    # event among nodes j >= i, mass ~ psi_j c_j
                    t1 = s1 ^ (s1 << np.uint64(23))
                    t1 ^= t1 >> np.uint64(17)
                    t1 ^= s0 ^ (s0 >> np.uint64(26))
                    target = tail_right[i] * (1.0 - float((s0 + t1) >> np.uint64(11)) * scale)
                    s0, s1 = s1, t1
                    lo = i
                    hi = n - 1
                    while lo < hi:
                        mid = (lo + hi) >> 1
                        if tail_right[mid + 1] <= target:
                            hi = mid
                        else:
                            lo = mid + 1
                    j = lo
                t1 = s1 ^ (s1 << np.uint64(23))
                t1 ^= t1 >> np.uint64(17)
                t1 ^= s0 ^ (s0 >> np.uint64(26))
                v = float((s0 + t1) >> np.uint64(11)) * scale
                s0, s1 = s1, t1
                if v < p_branch_at[j]:
                    t1 = s1 ^ (s1 << np.uint64(23))
                    t1 ^= t1 >> np.uint64(17)
                    t1 ^= s0 ^ (s0 >> np.uint64(26))
                    w = float((s0 + t1) >> np.uint64(11)) * scale
                    s0, s1 = s1, t1
                    if w < 0.5:
                        if sp >= stack.shape[0]:
                            return -events
                        stack[sp] = j
                        sp += 1
                        i = j
                        continue
                    break
                break
    return events


def _run_walk(engine: WalkEngine, idx0, rep0, n_rep, kernel_seed, branch_rate,
              event_budget) -> tuple[np.ndarray, np.ndarray, int]:
    """Run particles to absorption; returns per-replica endpoint counts."""
    counts0 = np.zeros(n_rep, dtype=np.int64)
    counts1 = np.zeros(n_rep, dtype=np.int64)
    idx = np.ascontiguousarray(idx0, dtype=np.int64)
    rep = np.ascontiguousarray(rep0, dtype=np.int64)
    events = _walk_kernel(idx, rep, counts0, counts1, engine.cat,
                          engine.cum_left, engine.cum_right_tail,
                          engine.p_branch_at, np.uint64(kernel_seed), event_budget)
    if events < 0:
        raise TruncationError(f"event budget exceeded after {-events} events")
    return counts0, counts1, events


def _atoms_to_particles(domain, grid, mu: AtomicMeasure, eps: float):
    """Round atom masses to the mass lattice and snap positions to nodes."""
    if not np.all(domain.contains(mu.positions)):
        raise PreconditionError("initial atoms must be interior")
    counts = np.rint(mu.masses / eps).astype(np.int64)
    if np.any(np.abs(counts * eps - mu.masses) > 1e-12):
        warnings.warn("initial masses rounded to the 1/N lattice")
    nodes = grid.nearest(mu.positions)
    return np.repeat(nodes, counts)


def simulate_exit_batch(domain: Interval, mu: AtomicMeasure, config: SimConfig,
                        n_replicas: int, seed: int, threads: int = 1) -> ExitBatch:
    """Independent exit-measure replicas from the same initial measure.

    Chunks carry fixed spawn-key seeds, so the result is identical for any
    thread count; the kernel releases the GIL.
    """
    if config.method == "euler":
        return _euler_exit_batch(domain, mu, config, n_replicas, seed)
    engine = WalkEngine(domain, config.n_grid, config.branch_rate, config.killing)
    per = _atoms_to_particles(domain, engine.grid, mu, config.eps)
    counts0 = np.zeros(n_replicas, dtype=np.int64)
    counts1 = np.zeros(n_replicas, dtype=np.int64)

    def one(chunk_lo):
        chunk, lo = chunk_lo
        m = min(CHUNK_REPLICAS, n_replicas - lo)
        idx = np.tile(per, m)
        rep = np.repeat(np.arange(m), per.size)
        c0, c1, _ = _run_walk(engine, idx, rep, m, _kernel_seed(seed, chunk),
                              config.branch_rate, config.max_steps)
        counts0[lo:lo + m] = c0
        counts1[lo:lo + m] = c1

    jobs = list(enumerate(range(0, n_replicas, CHUNK_REPLICAS)))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(one, jobs))
    else:
        for job in jobs:
            one(job)
    return ExitBatch(domain, config.eps, counts0, counts1)


def simulate_exit(domain: Interval, mu: AtomicMeasure, config: SimConfig,
                  seed: int) -> ExitMeasure:
    """One exit-measure realization; exterior atoms pass through unchanged."""
    inside = domain.contains(mu.positions)
    interior = AtomicMeasure(mu.positions[inside], mu.masses[inside])
    out_pos, out_mas = [], []
    if interior.total_mass > 0:
        b = simulate_exit_batch(domain, interior, config, 1, seed)
        m = b.measure(0)
        out_pos += list(np.atleast_1d(m.positions))
        out_mas += list(np.atleast_1d(m.masses))
    out_pos += list(np.atleast_1d(mu.positions[~inside]))
    out_mas += list(np.atleast_1d(mu.masses[~inside]))
    return ExitMeasure(domain, np.array(out_pos), np.array(out_mas))


def simulate_nested_batch(chain: list[Interval], mu: AtomicMeasure,
                          config: SimConfig, n_replicas: int, seed: int) -> NestedExitBatch:
    """Nested exits: freeze at each boundary, then release into the next domain.

    The chain is ordered innermost first and must be nested; all endpoints
    are snapped onto the lattice of the outermost domain so frozen particles
    restart exactly on grid nodes.
    """
    for d1, d2 in zip(chain, chain[1:]):
        if not (d2.a <= d1.a and d1.b <= d2.b):
            raise PreconditionError("domain chain must be nested, innermost first")
    outer = chain[-1]
    lattice = Grid1D(outer, config.n_grid)
    h = lattice.h

    def snap(v):
        return outer.a + h * round((v - outer.a) / h)

    stages = []
    engines = []
    for d in chain:
        a, b = snap(d.a), snap(d.b)
        if (a, b) != (d.a, d.b):
            warnings.warn(f"chain endpoints snapped to the lattice: ({a}, {b})")
        dd = Interval(a, b)
        n_sub = round((b - a) / h) - 1
        stages.append(dd)
        engines.append(WalkEngine(dd, n_sub, config.branch_rate, config.killing))

    out = []
    counts = [(np.zeros(n_replicas, dtype=np.int64), np.zeros(n_replicas, dtype=np.int64))
              for _ in chain]
    for chunk, lo in enumerate(range(0, n_replicas, CHUNK_REPLICAS)):
        m = min(CHUNK_REPLICAS, n_replicas - lo)
        per = _atoms_to_particles(stages[0], engines[0].grid, mu, config.eps)
        idx = np.tile(per, m)
        rep = np.repeat(np.arange(m), per.size)
        for si, (dd, eng) in enumerate(zip(stages, engines)):
            c0, c1, _ = _run_walk(eng, idx, rep, m, _kernel_seed(seed, chunk, si),
                                  config.branch_rate, config.max_steps)
            counts[si][0][lo:lo + m] += c0
            counts[si][1][lo:lo + m] += c1
            if si + 1 < len(stages):
                nxt = engines[si + 1]
                i_a = nxt.grid.nearest(dd.a)
                i_b = nxt.grid.nearest(dd.b)
                idx = np.concatenate([np.repeat(i_a, c0.sum()), np.repeat(i_b, c1.sum())])
                rep = np.concatenate([np.repeat(np.arange(m), c0),
                                      np.repeat(np.arange(m), c1)])
    for si, dd in enumerate(stages):
        out.append(ExitBatch(dd, config.eps, counts[si][0], counts[si][1]))
    return NestedExitBatch(stages, out)


def simulate_nested(chain, mu, config: SimConfig, seed: int):
    nb = simulate_nested_batch(chain, mu, config, 1, seed)
    return [b.measure(0) for b in nb.stages]


# ---------------------------------------------------------------------------
# single-ancestor clusters and Poisson composition
# ---------------------------------------------------------------------------


def sample_cluster_batch(domain: Interval, x: float, config: SimConfig, seed: int,
                         n_survivors: int | None = None,
                         n_attempts: int | None = None,
                         epsilon: float | None = None,
                         chain: list[Interval] | None = None,
                         attempt_budget: int = 50_000_000):
    """Clusters from eps*delta_x conditioned on a nonzero exit, by rejection.

    One initial particle of mass eps = 1/N.  Returns a ClusterBatch (or a
    NestedExitBatch restricted to survivors when a chain is given, paired
    with attempts/weight).  The rejection budget guards against a dead
    start region: survival probability is roughly eps * u(x).
    """
    eps = epsilon if epsilon is not None else config.eps
    n_eff = round(1.0 / eps)
    if abs(n_eff * eps - 1.0) > 1e-9:
        raise DataError("epsilon must be 1/N for an integer N")
    if eps > 1e-2 + 1e-15:
        raise PreconditionError("cluster sampling requires the small-mass regime eps <= 1e-2")
    cfg = replace(config, N=n_eff, branch_rate=None, killing=config.killing,
                  method=config.method, n_grid=config.n_grid)
    mu = AtomicMeasure.point(x, eps)
    want = n_survivors
    chain = chain or [domain]
    got0 = [np.empty(0, dtype=np.int64) for _ in chain]
    got1 = [np.empty(0, dtype=np.int64) for _ in chain]
    attempts = 0
    surv = 0
    block = n_attempts or 20000
    chunk = 0
    while True:
        nb = simulate_nested_batch(chain, mu, cfg, block, seed + 7919 * chunk)
        chunk += 1
        attempts += block
        alive = ~nb.stages[-1].extinct
        for si in range(len(chain)):
            got0[si] = np.concatenate([got0[si], nb.stages[si].counts0[alive]])
            got1[si] = np.concatenate([got1[si], nb.stages[si].counts1[alive]])
        surv += int(alive.sum())
        if n_attempts is not None:
            break
        if want is not None and surv >= want:
            break
        if attempts > attempt_budget:
            raise TruncationError(f"cluster rejection budget exhausted ({attempts} attempts)")
    weight = surv / (attempts * eps)
    stages = [ExitBatch(d, eps, got0[si], got1[si]) for si, d in enumerate(nb.chain)]
    return NestedExitBatch(nb.chain, stages), attempts, weight


@dataclass
class ClusterSample:
    exit: ExitMeasure
    weight: float
    epsilon: float


def sample_cluster(domain: Interval, x: float, epsilon: float, config: SimConfig,
                   seed: int) -> ClusterSample:
    nb, attempts, weight = sample_cluster_batch(domain, x, config, seed,
                                                n_survivors=1, epsilon=epsilon)
    return ClusterSample(nb.stages[-1].measure(0), weight, epsilon)


def poisson_compose_batch(domain: Interval, mu: AtomicMeasure, config: SimConfig,
                          n_replicas: int, seed: int,
                          intensity_field=None) -> ExitBatch:
    """Exit measures as Poisson superpositions of single-ancestor clusters.

    Cluster counts are Poisson with mean <mu, w> where w is the
    particle-consistent excursion normalization (survival probability of an
    eps-cluster divided by eps); by default w is measured per atom from the
    cluster sampler itself, keeping the composition and the direct
    simulation on exactly the same footing.  ``intensity_field`` overrides
    w (e.g. with the blow-up solution).
    """
    rng = rng_for(seed, 0xC0)
    xs = np.atleast_1d(mu.positions)
    ms = np.atleast_1d(mu.masses)
    if len(xs) == 0 or mu.total_mass == 0:
        z = np.zeros(n_replicas, dtype=np.int64)
        return ExitBatch(domain, config.eps, z, z.copy())
    weights = np.empty(len(xs))
    pools = []
    for i, x in enumerate(xs):
        need = int(np.ceil(3.0 * n_replicas * ms[i] + 200))
        nb, attempts, w = sample_cluster_batch(domain, float(x), config,
                                               seed + 101 * (i + 1),
                                               n_survivors=need)
        weights[i] = w if intensity_field is None else float(intensity_field(x))
        pools.append((nb.stages[-1].counts0, nb.stages[-1].counts1, w))
    lam = ms * weights
    counts0 = np.zeros(n_replicas, dtype=np.int64)
    counts1 = np.zeros(n_replicas, dtype=np.int64)
    for i, (p0, p1, w_meas) in enumerate(pools):
        n_i = rng.poisson(lam[i], size=n_replicas)
        total_needed = int(n_i.sum())
        pick = rng.integers(0, len(p0), size=total_needed)
        rep = np.repeat(np.arange(n_replicas), n_i)
        np.add.at(counts0, rep, p0[pick])
        np.add.at(counts1, rep, p1[pick])
    return ExitBatch(domain, config.eps, counts0, counts1)


def poisson_compose(domain: Interval, mu: AtomicMeasure, config: SimConfig,
                    seed: int, intensity_field=None) -> ExitMeasure:
    b = poisson_compose_batch(domain, mu, config, 1, seed, intensity_field)
    return b.measure(0)


# ---------------------------------------------------------------------------
# euler engine (interval and disk)
# ---------------------------------------------------------------------------


def _euler_exit_batch(domain: Interval, mu: AtomicMeasure, config: SimConfig,
                      n_replicas: int, seed: int) -> ExitBatch:
    eps = config.eps
    lam = config.branch_rate
    dt = config.dt
    sq = math.sqrt(dt)
    kill = config.killing
    counts0 = np.zeros(n_replicas, dtype=np.int64)
    counts1 = np.zeros(n_replicas, dtype=np.int64)
    for chunk, lo in enumerate(range(0, n_replicas, 512)):
        m = min(512, n_replicas - lo)
        rng = rng_for(seed, 0xE, chunk)
        if not np.all(domain.contains(mu.positions)):
            raise PreconditionError("initial atoms must be interior")
        nrep = np.rint(mu.masses / eps).astype(np.int64)
        pos = np.tile(np.repeat(mu.positions, nrep), m)
        rep = np.repeat(np.arange(m), nrep.sum())
        steps = 0
        while pos.size:
            steps += pos.size
            if steps > config.max_steps:
                raise TruncationError(f"step budget exceeded with {pos.size} alive")
            nxt = pos + sq * rng.standard_normal(pos.size)
            u = rng.random(pos.size)
            pa = np.exp(-2.0 * np.maximum(pos - domain.a, 0)
                        * np.maximum(nxt - domain.a, 0) / dt)
            pb = np.exp(-2.0 * np.maximum(domain.b - pos, 0)
                        * np.maximum(domain.b - nxt, 0) / dt)
            exit0 = (nxt <= domain.a) | (u < pa)
            exit1 = ~exit0 & ((nxt >= domain.b) | (u < pa + pb))
            np.add.at(counts0, rep[exit0] + lo, 1)
            np.add.at(counts1, rep[exit1] + lo, 1)
            alive = ~(exit0 | exit1)
            pos, rep = nxt[alive], rep[alive]
            if pos.size == 0:
                break
            u2 = rng.random(pos.size)
            p_branch = lam * dt
            p_kill = kill(pos) * dt if kill is not None else 0.0
            branched = u2 < p_branch
            killed = ~branched & (u2 < p_branch + p_kill)
            dbl = branched & (rng.random(pos.size) < 0.5)
            gone = (branched & ~dbl) | killed
            keep = ~branched & ~killed
            pos = np.concatenate([pos[keep], np.repeat(pos[dbl], 2)])
            rep = np.concatenate([rep[keep], np.repeat(rep[dbl], 2)])
    return ExitBatch(domain, eps, counts0, counts1)


@dataclass
class DiskExitBatch:
    domain: Disk
    eps: float
    totals: np.ndarray          # exit mass per replica
    angle_hist: np.ndarray      # pooled exit-angle histogram
    angle_edges: np.ndarray


def simulate_exit_disk_batch(domain: Disk, mu: AtomicMeasure, config: SimConfig,
                             n_replicas: int, seed: int,
                             n_angle_bins: int = 64) -> DiskExitBatch:
    """Euler branching simulation on a disk; exits recorded as angles."""
    eps = config.eps
    lam = config.branch_rate
    dt = config.dt
    sq = math.sqrt(dt)
    c = np.asarray(domain.center)
    R = domain.radius
    kill = config.killing
    counts = np.zeros(n_replicas, dtype=np.int64)
    edges = np.linspace(-math.pi, math.pi, n_angle_bins + 1)
    hist = np.zeros(n_angle_bins, dtype=np.int64)
    pos0 = np.atleast_2d(mu.positions)
    if not np.all(domain.contains(pos0)):
        raise PreconditionError("initial atoms must be interior")
    nrep = np.rint(np.atleast_1d(mu.masses) / eps).astype(np.int64)
    for chunk, lo in enumerate(range(0, n_replicas, 256)):
        m = min(256, n_replicas - lo)
        rng = rng_for(seed, 0xD, chunk)
        pos = np.tile(np.repeat(pos0, nrep, axis=0), (m, 1))
        rep = np.repeat(np.arange(m), nrep.sum())
        steps = 0
        while pos.size:
            steps += len(pos)
            if steps > config.max_steps:
                raise TruncationError(f"step budget exceeded with {len(pos)} alive")
            nxt = pos + sq * rng.standard_normal(pos.shape)
            d0 = R - np.hypot(*(pos - c).T)
            d1 = R - np.hypot(*(nxt - c).T)
            u = rng.random(len(pos))
            exited = (d1 <= 0) | (u < np.exp(-2.0 * np.maximum(d0, 0)
                                             * np.maximum(d1, 0) / dt))
            if np.any(exited):
                pts = nxt[exited]
                ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
                hist += np.histogram(ang, bins=edges)[0]
                np.add.at(counts, rep[exited] + lo, 1)
            alive = ~exited
            pos, rep = nxt[alive], rep[alive]
            if len(pos) == 0:
                break
            u2 = rng.random(len(pos))
            p_branch = lam * dt
            p_kill = kill(pos) * dt if kill is not None else 0.0
            branched = u2 < p_branch
            killed = ~branched & (u2 < p_branch + p_kill)
            dbl = branched & (rng.random(len(pos)) < 0.5)
            keep = ~branched & ~killed
            pos = np.concatenate([pos[keep], np.repeat(pos[dbl], 2, axis=0)])
            rep = np.concatenate([rep[keep], np.repeat(rep[dbl], 2)])
    return DiskExitBatch(domain, eps, eps * counts, hist, edges)
