"""Generative construction of the conditioned process via a backbone.

A backbone particle labeled by a mass bin v follows the gamma_{x,v}-transform
of Brownian motion killed at rate 4u; since gamma is a potential the particle
dies in the interior, at rate Gamma_{x,v}/gamma_{x,v}, and its label splits
into two bins (j, v-j) with probability proportional to
gamma_j(w) gamma_{v-j}(w) K(v; j).  Mass immigrates along every backbone path
at rate 4N as particles of mass 1/N whose motion is killed at rate 4u, and a
cluster attached at time t counts toward the exit measure of an observation
domain only if the backbone path had not left that domain by time t.

The motion is realized exactly as a continuous-time chain on the coarse grid
carrying the tables: jump rates h(j+-1)/(2 hw^2 h(j)) for the h-transform by
the tabulated h, plus the tabulated interior death rate.  Holding times are
exponential, so immigration counts per segment are Poisson draws.

The same machinery runs the point-conditioned backbone: labels are subsets
of the conditioning points, singleton labels are harmonic transforms
absorbed at their point, composite labels die at rate (sum of split
products)/rho_C and split into complementary subsets; dressing killing is
4 u_beta there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sbmlab.domains import (
    AtomicMeasure,
    DataError,
    Interval,
    IntervalOperator,
    PreconditionError,
    ScalarField,
    DEFAULT_GRID_1D,
)
from sbmlab.conditioning import (
    ExcludedBinError,
    HvModel,
    MassModel,
    gamma_capital,
)
from sbmlab.loglaplace import solve_VD
from sbmlab.particles import (
    SimConfig,
    WalkEngine,
    _atoms_to_particles,
    _kernel_seed,
    _run_walk,
    rng_for,
)


@dataclass
class ObservationSet:
    """Nested observation domains (innermost first), all inside the base domain."""

    domains: list[Interval]

    def __post_init__(self):
        for d1, d2 in zip(self.domains, self.domains[1:]):
            if not (d2.a <= d1.a and d1.b <= d2.b):
                raise PreconditionError("observation domains must be nested, innermost first")

    def flags_for(self, position: float) -> int:
        """Bitmask of domains the position lies outside of."""
        m = 0
        for d, dom in enumerate(self.domains):
            if not (dom.a < position < dom.b):
                m |= 1 << d
        return m


DEFAULT_OBSERVATIONS = [Interval(0.2, 0.8), Interval(0.1, 0.9)]


# ---------------------------------------------------------------------------
# h-transform walk tables
# ---------------------------------------------------------------------------


class LabelWalk:
    """Continuous-time h-transform chain on a uniform coarse grid.

    ``h`` has shape (n_labels, n_nodes + 2) including boundary columns;
    ``death`` has shape (n_labels, n_nodes).  Rates at label l, node j:
    right h[l, j+2]/(2 hw^2 h[l, j+1]), left analogous, death death[l, j].
    Boundary columns = 0 make the walk interior (potential case); a positive
    boundary column gives absorption there (harmonic case).
    """

    def __init__(self, nodes: np.ndarray, h: np.ndarray, death: np.ndarray):
        self.nodes = nodes
        hw = nodes[1] - nodes[0]
        self.hw = hw
        hmid = h[:, 1:-1]
        if np.any(hmid <= 0):
            raise DataError("h-transform table must be positive on interior nodes")
        self.rate_right = h[:, 2:] / (2 * hw * hw * hmid)
        self.rate_left = h[:, :-2] / (2 * hw * hw * hmid)
        self.rate_death = np.maximum(death, 0.0)
        self.rate_total = self.rate_right + self.rate_left + self.rate_death
        self.n_nodes = len(nodes)


def mass_label_walk(model: MassModel) -> LabelWalk:
    """Walk tables for all populated mass bins of a conditioning model."""
    ny = len(model.gamma.y_nodes)
    nb = len(model.law.counts)
    h = np.zeros((nb, ny + 2))
    death = np.zeros((nb, ny))
    populated = ~model.gamma.excluded
    fallback = int(np.argmax(populated))  # smallest populated bin
    for i in range(nb):
        src = i if populated[i] else fallback
        row = model.gamma.gamma[:, src]
        if np.any(row <= 0):
            row = np.maximum(row, max(row[row > 0].min() if np.any(row > 0) else 1e-12, 1e-12) * 1e-3)
        h[i, 1:-1] = row
        try:
            cap = gamma_capital(model, src)
        except ExcludedBinError:
            cap = np.zeros(ny)
        death[i] = cap / h[i, 1:-1]
    return LabelWalk(model.gamma.y_nodes, h, death)


@dataclass
class FragSampler:
    """Split-label sampler: weights gamma_j(w) gamma_{i-j}(w) m_j m_{i-j}."""

    model: MassModel

    def split(self, v_index: np.ndarray, node_index: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
        """First-fragment bin for each (label, death node); second is v - j."""
        g = self.model.gamma.gamma
        m = self.model.law.bin_mass
        out = np.empty(v_index.size, dtype=np.int64)
        for k in range(v_index.size):
            i = int(v_index[k])
            ni = int(node_index[k])
            w = g[ni, :i + 1] * g[ni, :i + 1][::-1] * m[:i + 1] * m[:i + 1][::-1]
            tot = w.sum()
            if tot <= 0:
                raise ExcludedBinError(f"no populated split for bin {i} at node {ni}")
            out[k] = np.searchsorted(np.cumsum(w), rng.random() * tot, side="right")
        return out


# ---------------------------------------------------------------------------
# backbone trees
# ---------------------------------------------------------------------------


@dataclass
class BackboneNode:
    label: int
    birth_node: int
    birth_time: float
    death_node: int = -1
    death_time: float = math.nan
    children: tuple[int, int] | None = None
    terminal: bool = False
    segments: list = field(default_factory=list)  # (node, hold, flags)


@dataclass
class BackboneTree:
    nodes: list[BackboneNode]
    walk_nodes: np.ndarray

    def total_length(self) -> float:
        return sum(seg[1] for n in self.nodes for seg in n.segments)


@dataclass
class ImmigrationLog:
    """Pooled immigration records: replica, walk-node index, flags, count."""

    rep: np.ndarray
    node: np.ndarray
    flags: np.ndarray
    count: np.ndarray


def _simulate_trees(walk: LabelWalk, frag: FragSampler | None, labels0, nodes0,
                    reps0, obs: ObservationSet, rate_immigration: float,
                    rng: np.random.Generator, mass_floor_index: int = 2,
                    record_tree: bool = False, jump_budget: int = 500_000_000):
    """Run backbone particles to extinction of the whole cohort.

    Returns (ImmigrationLog, trees or None, absorption list).  Absorptions
    (harmonic labels reaching a boundary) are recorded as
    (rep, label, side).
    """
    node_flags = np.array([obs.flags_for(x) for x in walk.nodes], dtype=np.int64)
    lab = np.asarray(labels0, dtype=np.int64)
    pos = np.asarray(nodes0, dtype=np.int64)
    rep = np.asarray(reps0, dtype=np.int64)
    time_now = np.zeros(lab.size)
    flags = node_flags[pos].copy()
    terminal = lab < mass_floor_index if frag is not None else np.zeros(lab.size, bool)
    imm_rep, imm_node, imm_flags, imm_count = [], [], [], []
    absorbed = []
    death_rep, death_lab, death_node, death_time = [], [], [], []
    trees = [] if record_tree else None
    tree_ids = None
    if record_tree:
        trees = [BackboneNode(int(l), int(p), 0.0) for l, p in zip(lab, pos)]
        tree_ids = np.arange(lab.size)
    jumps = 0
    while lab.size:
        jumps += lab.size
        if jumps > jump_budget:
            raise DataError("backbone jump budget exceeded")
        rt = walk.rate_total[lab, pos]
        hold = rng.exponential(1.0 / rt)
        n_imm = rng.poisson(rate_immigration * hold)
        has = n_imm > 0
        if np.any(has):
            imm_rep.append(rep[has])
            imm_node.append(pos[has])
            imm_flags.append(flags[has])
            imm_count.append(n_imm[has])
        if record_tree:
            for k in range(lab.size):
                trees[tree_ids[k]].segments.append((int(pos[k]), float(hold[k]),
                                                    int(flags[k])))
        time_now = time_now + hold
        u = rng.random(lab.size) * rt
        goes_right = u < walk.rate_right[lab, pos]
        goes_left = ~goes_right & (u < walk.rate_right[lab, pos] + walk.rate_left[lab, pos])
        dies = ~(goes_right | goes_left)

        # deaths: fragment or terminate
        die_idx = np.nonzero(dies)[0]
        if die_idx.size:
            death_rep.append(rep[die_idx].copy())
            death_lab.append(lab[die_idx].copy())
            death_node.append(pos[die_idx].copy())
            death_time.append(time_now[die_idx].copy())
        new_lab, new_pos, new_rep, new_time, new_flags, new_term = [], [], [], [], [], []
        new_tree_ids = []
        for k in die_idx:
            if record_tree:
                nd = trees[tree_ids[k]]
                nd.death_node = int(pos[k])
                nd.death_time = float(time_now[k])
            if frag is None or terminal[k]:
                continue
            j = int(frag.split(lab[k:k + 1], pos[k:k + 1], rng)[0])
            pieces = (j, int(lab[k]) - j)
            kids = []
            for piece in pieces:
                new_lab.append(piece)
                new_pos.append(pos[k])
                new_rep.append(rep[k])
                new_time.append(time_now[k])
                new_flags.append(flags[k])
                new_term.append(piece < mass_floor_index)
                if record_tree:
                    trees.append(BackboneNode(piece, int(pos[k]), float(time_now[k])))
                    kids.append(len(trees) - 1)
                    new_tree_ids.append(len(trees) - 1)
            if record_tree:
                trees[tree_ids[k]].children = tuple(kids)

        # moves
        move = ~dies
        step = np.where(goes_right, 1, -1)[move]
        pos_m = pos[move] + step
        # absorption outside the interior grid (harmonic labels only)
        inside = (pos_m >= 0) & (pos_m <= walk.n_nodes - 1)
        if np.any(~inside):
            out_idx = np.nonzero(move)[0][~inside]
            for k in out_idx:
                side = 1 if goes_right[k] else 0
                absorbed.append((int(rep[k]), int(lab[k]), side))
                if record_tree:
                    nd = trees[tree_ids[k]]
                    nd.death_node = -1 if side == 0 else walk.n_nodes
                    nd.death_time = float(time_now[k])
        keep = np.nonzero(move)[0][inside]
        lab2 = np.concatenate([lab[keep], np.array(new_lab, dtype=np.int64)])
        pos2 = np.concatenate([pos_m[inside], np.array(new_pos, dtype=np.int64)])
        rep2 = np.concatenate([rep[keep], np.array(new_rep, dtype=np.int64)])
        t2 = np.concatenate([time_now[keep], np.array(new_time)])
        fl2 = np.concatenate([flags[keep] | node_flags[pos_m[inside]],
                              np.array(new_flags, dtype=np.int64)])
        term2 = np.concatenate([terminal[keep], np.array(new_term, dtype=bool)])
        if record_tree:
            tree_ids = np.concatenate([tree_ids[keep],
                                       np.array(new_tree_ids, dtype=np.int64)])
        lab, pos, rep, time_now, flags, terminal = lab2, pos2, rep2, t2, fl2, term2
    log = ImmigrationLog(
        np.concatenate(imm_rep) if imm_rep else np.empty(0, np.int64),
        np.concatenate(imm_node) if imm_node else np.empty(0, np.int64),
        np.concatenate(imm_flags) if imm_flags else np.empty(0, np.int64),
        np.concatenate(imm_count) if imm_count else np.empty(0, np.int64))
    deaths = {
        "rep": np.concatenate(death_rep) if death_rep else np.empty(0, np.int64),
        "label": np.concatenate(death_lab) if death_lab else np.empty(0, np.int64),
        "node": np.concatenate(death_node) if death_node else np.empty(0, np.int64),
        "time": np.concatenate(death_time) if death_time else np.empty(0, float),
    }
    return log, trees, absorbed, deaths


# ---------------------------------------------------------------------------
# dressing
# ---------------------------------------------------------------------------


def dress_immigration(log: ImmigrationLog, walk_nodes, n_replicas: int,
                      obs: ObservationSet, killing: ScalarField,
                      config: SimConfig, seed: int,
                      include_outer: Interval | None = None):
    """Evolve immigrant clusters and accumulate exit masses per domain.

    Clusters in the same flag group share the sub-chain of domains their
    attachment counts toward; each group runs one nested engine pass.
    Returns an array (n_domains, n_replicas) of masses, where the optional
    outer domain is appended after the observation domains.
    """
    domains = list(obs.domains) + ([include_outer] if include_outer else [])
    nd = len(domains)
    out = np.zeros((nd, n_replicas))
    if log.rep.size == 0:
        return out
    eps = config.eps
    groups = np.unique(log.flags)
    for gi, g in enumerate(groups):
        sel = log.flags == g
        counted = [d for d in range(len(obs.domains)) if not (g >> d) & 1]
        chain = [obs.domains[d] for d in counted]
        target_rows = list(counted)
        if include_outer is not None:
            chain = chain + [include_outer]
            target_rows = target_rows + [nd - 1]
        if not chain:
            continue
        reps = np.repeat(log.rep[sel], log.count[sel])
        starts = np.repeat(walk_nodes[log.node[sel]], log.count[sel])
        outer = chain[-1]
        from sbmlab.domains import Grid1D
        lattice = Grid1D(outer, config.n_grid)
        stages = []
        engines = []
        h = lattice.h
        for d in chain:
            a = outer.a + h * round((d.a - outer.a) / h)
            b = outer.a + h * round((d.b - outer.a) / h)
            dd = Interval(a, b)
            n_sub = round((b - a) / h) - 1
            stages.append(dd)
            engines.append(WalkEngine(dd, n_sub, config.branch_rate, killing))
        idx = engines[0].grid.nearest(starts)
        rep_cur = reps
        for si, (dd, eng) in enumerate(zip(stages, engines)):
            c0, c1, _ = _run_walk(eng, idx, rep_cur, n_replicas,
                                  _kernel_seed(seed, gi, si), config.branch_rate,
                                  config.max_steps)
            out[target_rows[si]] += eps * (c0 + c1)
            if si + 1 < len(stages):
                nxt = engines[si + 1]
                i_a, i_b = nxt.grid.nearest(dd.a), nxt.grid.nearest(dd.b)
                idx = np.concatenate([np.repeat(i_a, c0.sum()), np.repeat(i_b, c1.sum())])
                rep_cur = np.concatenate([np.repeat(np.arange(n_replicas), c0),
                                          np.repeat(np.arange(n_replicas), c1)])
    return out


# ---------------------------------------------------------------------------
# public operations: mass-conditioned backbone
# ---------------------------------------------------------------------------


def gamma_transform_path(model: MassModel, y: float, v_index: int, seed: int,
                         obs: ObservationSet | None = None):
    """One gamma-transformed path: (death position, recorded tree node)."""
    obs = obs or ObservationSet(DEFAULT_OBSERVATIONS)
    walk = mass_label_walk(model)
    rng = rng_for(seed, 0xB0)
    node0 = int(np.argmin(np.abs(walk.nodes - y)))
    log, trees, _, _ = _simulate_trees(walk, None, [v_index], [node0], [0], obs,
                                       0.0, rng, record_tree=True)
    nd = trees[0]
    if nd.death_node < 0 or nd.death_node >= walk.n_nodes:
        raise DataError("potential-transformed particle left the domain")
    return float(walk.nodes[nd.death_node]), nd


def fragment(model: MassModel, v_index: int, w: float,
             rng: np.random.Generator) -> tuple[int, int]:
    """Split a label at position w; returns bin indices (j, v - j)."""
    walk_nodes = model.gamma.y_nodes
    ni = int(np.argmin(np.abs(walk_nodes - w)))
    fs = FragSampler(model)
    j = int(fs.split(np.array([v_index]), np.array([ni]), rng)[0])
    return j, v_index - j


@dataclass
class ConditionedRun:
    observations: list[Interval]
    masses: np.ndarray           # (n_domains, n_replicas)
    trees: list | None = None


def run_conditioned(model: MassModel, y: float, v_index: int, config: SimConfig,
                    n_replicas: int, seed: int,
                    obs: ObservationSet | None = None,
                    record_tree: bool = False) -> ConditionedRun:
    """Backbone realization of the process conditioned on mass bin v.

    Pipeline: gamma-transform walk from y with label v, fragmentation at
    interior deaths down to the mass floor, immigration at rate 4N along
    every path, immigrant clusters evolved with killing 4u through the
    observation domains permitted by the attachment-time rule.
    """
    obs = obs or ObservationSet(DEFAULT_OBSERVATIONS)
    if model.gamma.excluded[v_index]:
        raise ExcludedBinError(f"bin {v_index} excluded")
    walk = mass_label_walk(model)
    frag = FragSampler(model)
    rng = rng_for(seed, 0xBB)
    node0 = int(np.argmin(np.abs(walk.nodes - y)))
    labels = np.full(n_replicas, v_index, dtype=np.int64)
    nodes = np.full(n_replicas, node0, dtype=np.int64)
    reps = np.arange(n_replicas, dtype=np.int64)
    log, trees, _, _ = _simulate_trees(walk, frag, labels, nodes, reps, obs,
                                       4.0 * config.N, rng, record_tree=record_tree)
    killing = _four_u_field(model)
    masses = dress_immigration(log, walk.nodes, n_replicas, obs, killing,
                               config, seed + 1)
    return ConditionedRun(list(obs.domains), masses, trees)


def _four_u_field(model: MassModel) -> ScalarField:
    u = model.blowup.u
    return ScalarField(u.domain, u.nodes, 4.0 * u.values,
                       bc=(4.0 * u.bc[0], 4.0 * u.bc[1]), blowup=True)


def dress_backbone(tree_nodes: list[BackboneNode], model: MassModel,
                   config: SimConfig, seed: int,
                   obs: ObservationSet | None = None) -> np.ndarray:
    """Immigration dressing of one recorded tree; masses per observation domain.

    Replays the recorded (node, holding time, flags) segments, draws Poisson
    immigrant counts at rate 4N per unit holding time, and evolves the
    clusters with killing 4u under the attachment-time membership rule.
    """
    obs = obs or ObservationSet(DEFAULT_OBSERVATIONS)
    rng = rng_for(seed, 0xD5)
    rep, node, flags, count = [], [], [], []
    for nd in tree_nodes:
        for (j, hold, fl) in nd.segments:
            c = rng.poisson(4.0 * config.N * hold)
            if c > 0:
                rep.append(0)
                node.append(j)
                flags.append(fl)
                count.append(c)
    log = ImmigrationLog(np.array(rep, dtype=np.int64), np.array(node, dtype=np.int64),
                         np.array(flags, dtype=np.int64), np.array(count, dtype=np.int64))
    return dress_immigration(log, model.gamma.y_nodes, 1, obs,
                             _four_u_field(model), config, seed + 1)[:, 0]


def forest_init(model: MassModel, hv: HvModel, mu: AtomicMeasure, v_index: int,
                rng: np.random.Generator, n_max: int | None = None):
    """Sample the initial cluster [(y_i, v_i)] of the conditioned forest.

    Cluster size n is proportional to the n-th series term of H^v(mu);
    labels are drawn sequentially through partial convolutions of the
    atom-weighted reference law (so the label sum is exactly v), and each
    start point is an atom of mu weighted by gamma.
    """
    n_max = n_max or hv.n_max
    terms = hv.series_terms(mu, v_index, n_max)[:-1]
    if not np.all(np.isfinite(terms)) or terms.sum() <= 0:
        raise ExcludedBinError("series terms empty at this bin; H^v not estimable")
    probs = terms / terms.sum()
    n = int(rng.choice(len(probs), p=probs)) + 1
    positions = np.atleast_1d(mu.positions)
    weights_atoms = np.atleast_1d(mu.masses)
    a_rows = np.stack([hv.atom_vector(float(y)) for y in positions])
    a = (weights_atoms[:, None] * a_rows).sum(axis=0)
    nb = len(a)
    convs = [np.zeros(nb), a]
    convs[0][0] = 1.0
    for j in range(2, n + 1):
        convs.append(np.convolve(convs[-1], a)[:nb])
    out = []
    k = v_index
    for step in range(n, 0, -1):
        if step == 1:
            j = k
        else:
            w = a[:k + 1] * convs[step - 1][:k + 1][::-1]
            tot = w.sum()
            if tot <= 0:
                raise ExcludedBinError("no admissible label split at this bin")
            j = int(np.searchsorted(np.cumsum(w), rng.random() * tot, side="right"))
        wa = weights_atoms * a_rows[:, j]
        ai = int(np.searchsorted(np.cumsum(wa), rng.random() * wa.sum(), side="right"))
        out.append((float(positions[ai]), int(j)))
        k -= j
    return out


def run_forest(model: MassModel, hv: HvModel, mu: AtomicMeasure, v_index: int,
               config: SimConfig, n_replicas: int, seed: int,
               obs: ObservationSet | None = None) -> ConditionedRun:
    """Full conditioned process from an atomic mu: forest plus killed component.

    Each replica draws an initial cluster, runs one backbone per cluster
    point, and adds an independent copy of the population from mu whose
    motion is killed at rate 4u.
    """
    obs = obs or ObservationSet(DEFAULT_OBSERVATIONS)
    walk = mass_label_walk(model)
    frag = FragSampler(model)
    rng = rng_for(seed, 0xF0)
    labels, nodes, reps = [], [], []
    for r in range(n_replicas):
        for (y, j) in forest_init(model, hv, mu, v_index, rng):
            if model.gamma.excluded[j] and j >= 2:
                raise ExcludedBinError(f"forest label {j} excluded")
            labels.append(j)
            nodes.append(int(np.argmin(np.abs(walk.nodes - y))))
            reps.append(r)
    log, _, _, _ = _simulate_trees(walk, frag, labels, nodes, reps, obs,
                                   4.0 * config.N, rng)
    killing = _four_u_field(model)
    masses = dress_immigration(log, walk.nodes, n_replicas, obs, killing,
                               config, seed + 1)
    # killed-motion component straight from mu
    from sbmlab.particles import simulate_nested_batch
    from dataclasses import replace as dc_replace
    cfg_killed = dc_replace(config, killing=killing, branch_rate=None)
    cfg_killed.branch_rate = config.branch_rate
    nb = simulate_nested_batch(list(obs.domains), mu, cfg_killed, n_replicas,
                               seed + 2)
    for d in range(len(obs.domains)):
        masses[d] += nb.stages[d].total
    return ConditionedRun(list(obs.domains), masses, None)


# ---------------------------------------------------------------------------
# point-conditioned backbone
# ---------------------------------------------------------------------------


def point_backbone(domain: Interval, x: float, zs, beta: float,
                   config: SimConfig, n_replicas: int, seed: int,
                   obs: ObservationSet | None = None, n_walk: int = 255,
                   y0: float | None = None):
    """Backbone conditioned on a Poisson sample at boundary points z_1..z_k.

    Labels are subsets of {1..k}; the walk grid carries the rho_C fields
    solved directly on it, so the h-transform rates are exactly consistent
    with the killed operator on that grid.  Returns (ConditionedRun including
    the outer domain as the last row, absorption records).
    """
    if len(zs) > 3:
        raise DataError("point backbone supports at most 3 points")
    obs = obs or ObservationSet(DEFAULT_OBSERVATIONS)
    y0 = x if y0 is None else y0
    u_beta = solve_VD(domain, beta, n=n_walk).u
    op = IntervalOperator(domain, 4.0 * u_beta.values, n_walk)
    nodes = op.nodes
    k = len(zs)
    full = (1 << k) - 1
    fields = {}
    for i, z in enumerate(zs):
        side = 0 if abs(z - domain.a) <= abs(z - domain.b) else 1
        w = op.exit_weight(side)
        bc = (1.0, 0.0) if side == 0 else (0.0, 1.0)
        fields[1 << i] = np.concatenate(([bc[0]], w, [bc[1]]))
    for size in range(2, k + 1):
        for m in range(1, full + 1):
            if bin(m).count("1") != size:
                continue
            src = np.zeros(n_walk)
            sub = (m - 1) & m
            while sub:
                src += 4.0 * fields[sub][1:-1] * fields[m ^ sub][1:-1]
                sub = (sub - 1) & m
            fields[m] = np.concatenate(([0.0], 0.5 * op.green(src), [0.0]))
    h = np.zeros((full + 1, n_walk + 2))
    death = np.zeros((full + 1, n_walk))
    for m in range(1, full + 1):
        h[m] = fields[m]
        if bin(m).count("1") > 1:
            src = np.zeros(n_walk)
            sub = (m - 1) & m
            while sub:
                src += 4.0 * fields[sub][1:-1] * fields[m ^ sub][1:-1]
                sub = (sub - 1) & m
            death[m] = 0.5 * src / fields[m][1:-1]
    h[0, :] = 1.0  # unused placeholder label 0
    walk = _PointWalk(nodes, h, death, fields, op, beta)
    rng = rng_for(seed, 0xAB)
    node0 = int(np.argmin(np.abs(nodes - y0)))
    labels = np.full(n_replicas, full, dtype=np.int64)
    starts = np.full(n_replicas, node0, dtype=np.int64)
    reps = np.arange(n_replicas, dtype=np.int64)
    log, _, absorbed, _ = _simulate_trees(walk, walk.splitter(), labels, starts,
                                          reps, obs, 4.0 * config.N, rng,
                                          mass_floor_index=0)
    killing = ScalarField(domain, nodes, 4.0 * u_beta.values,
                          bc=(4.0 * beta, 4.0 * beta))
    masses = dress_immigration(log, nodes, n_replicas, obs, killing, config,
                               seed + 1, include_outer=domain)
    return ConditionedRun(list(obs.domains) + [domain], masses, None), absorbed


class _PointWalk(LabelWalk):
    """LabelWalk over subset labels, with subset splitting at deaths."""

    def __init__(self, nodes, h, death, fields, op, beta):
        super().__init__(nodes, h, death)
        self.fields = fields
        self.op = op
        self.beta = beta

    def splitter(self):
        fields = self.fields
        rate_death = self.rate_death

        class _Split:
            def split(self, labels, node_index, rng):
                out = np.empty(labels.size, dtype=np.int64)
                for t in range(labels.size):
                    m = int(labels[t])
                    ni = int(node_index[t])
                    subs = []
                    ws = []
                    sub = (m - 1) & m
                    while sub:
                        subs.append(sub)
                        ws.append(fields[sub][ni + 1] * fields[m ^ sub][ni + 1])
                        sub = (sub - 1) & m
                    ws = np.asarray(ws)
                    c = np.cumsum(ws)
                    out[t] = subs[int(np.searchsorted(c, rng.random() * c[-1],
                                                      side="right"))]
                return out

        return _Split()
