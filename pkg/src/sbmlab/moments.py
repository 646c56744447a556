"""Exit-measure moment recursions over set partitions.

Moments of the exit measure against test functions f_1..f_n, damped by
exp(-<X_D, phi>), reduce to a recursion over subsets C: the singleton value
is the kill-weighted harmonic extension K_D^l f_i with l = 4 V_D(phi), and a
general subset is assembled from proper sub-splits through the Green
operator.  Full moments under an atomic initial measure follow by summing
products over all set partitions of C.

Nested-domain chains extend the same recursion level by level: boundary
values of a level come from the next level out, the killing field is four
times the nested log-Laplace solution, and the interior values are filled
in with the level's own Poisson and Green operators.

An independent oracle differentiates the joint Laplace functional by mixed
central differences with Richardson extrapolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from sbmlab.domains import (
    AtomicMeasure,
    BoundaryFunction,
    DataError,
    Interval,
    IntervalOperator,
    PreconditionError,
    ScalarField,
    DEFAULT_GRID_1D,
)
from sbmlab.loglaplace import solve_VD

MAX_PARTITION_N = 8
MAX_SUBSET = 6


class LimitError(ValueError):
    """Requested size exceeds the supported combinatorial range."""


class NumericalPrecisionError(RuntimeError):
    """Finite-difference oracle lost too many digits to cancellation."""


def enumerate_partitions(n: int) -> list[tuple[tuple[int, ...], ...]]:
    """All set partitions of {0..n-1} via restricted-growth strings.

    Deterministic lexicographic order of the growth strings; Bell(n) items.
    """
    if not 1 <= n <= MAX_PARTITION_N:
        raise LimitError(f"partition enumeration supports 1..{MAX_PARTITION_N}, got {n}")
    out = []

    def grow(code, k):
        i = len(code)
        if i == n:
            blocks = [[] for _ in range(k)]
            for j, c in enumerate(code):
                blocks[c].append(j)
            out.append(tuple(tuple(b) for b in blocks))
            return
        for c in range(k + 1):
            grow(code + [c], max(k, c + 1))

    grow([], 0)
    return out


def partitions_of(items: tuple[int, ...]) -> list[tuple[tuple[int, ...], ...]]:
    items = tuple(items)
    return [tuple(tuple(items[j] for j in block) for block in p)
            for p in enumerate_partitions(len(items))]


@dataclass
class MomentSpec:
    """A moment query: damping data per domain, test functions, index subset.

    ``domains`` is a nested chain, innermost first, sharing center with the
    outermost domain D on which the f_i live.  ``phis`` has one entry per
    domain.  ``C`` selects which f_i appear in the product.
    """

    domains: list[Interval]
    phis: list[BoundaryFunction]
    fs: list[BoundaryFunction]
    C: tuple[int, ...]
    n_grid: int = DEFAULT_GRID_1D

    def __post_init__(self):
        if len(self.domains) != len(self.phis):
            raise DataError("one phi per domain is required")
        if len(self.C) > MAX_SUBSET:
            raise LimitError(f"|C| <= {MAX_SUBSET} supported")
        for d1, d2 in itertools.pairwise(self.domains):
            if not (d2.a <= d1.a and d1.b <= d2.b):
                raise PreconditionError("domain chain must be nested, innermost first")
        self.C = tuple(sorted(self.C))

    @classmethod
    def single(cls, domain: Interval, phi, fs, C, n_grid: int = DEFAULT_GRID_1D):
        if isinstance(phi, (int, float)):
            phi = BoundaryFunction.constant(domain, float(phi))
        fs = [BoundaryFunction.constant(domain, float(f)) if isinstance(f, (int, float))
              else f for f in fs]
        return cls([domain], [phi], fs, tuple(C), n_grid)


@dataclass
class _Level:
    """Solved state of one chain level: operators, killing, moment fields."""

    op: IntervalOperator
    u: ScalarField
    fields: dict[int, ScalarField] = field(default_factory=dict)


def _subset_masks(c_mask: int):
    """Proper nonempty submasks of c_mask."""
    sub = (c_mask - 1) & c_mask
    while sub:
        yield sub
        sub = (sub - 1) & c_mask


def _solve_levels(spec: MomentSpec) -> list[_Level]:
    """Solve the chain outermost-in: killing fields, then moment fields."""
    k = len(spec.domains)
    levels: list[_Level | None] = [None] * k
    c_all = 0
    for i in spec.C:
        c_all |= 1 << i

    for j in range(k - 1, -1, -1):
        dom = spec.domains[j]
        if j == k - 1:
            bdata = spec.phis[j]
        else:
            outer_u = levels[j + 1].u
            bdata = BoundaryFunction(dom, spec.phis[j].values
                                     + np.array([outer_u(dom.a), outer_u(dom.b)]))
        sol = solve_VD(dom, bdata, n=spec.n_grid)
        op = IntervalOperator(dom, 4.0 * sol.u.values, spec.n_grid)
        lvl = _Level(op, sol.u)
        # singleton fields, then subsets by increasing popcount
        for i in spec.C:
            m = 1 << i
            if j == k - 1:
                fb = spec.fs[i]
            else:
                outer = levels[j + 1].fields[m]
                fb = BoundaryFunction(dom, np.array([outer(dom.a), outer(dom.b)]))
            lvl.fields[m] = op.poisson_field(fb)
        for size in range(2, len(spec.C) + 1):
            for combo in itertools.combinations(spec.C, size):
                m = 0
                for i in combo:
                    m |= 1 << i
                src = np.zeros(spec.n_grid)
                for a in _subset_masks(m):
                    src += 4.0 * lvl.fields[a].values * lvl.fields[m ^ a].values
                vals = 0.5 * op.green(src)
                bc = (0.0, 0.0)
                if j < k - 1:
                    outer = levels[j + 1].fields[m]
                    bc = (float(outer(dom.a)), float(outer(dom.b)))
                    vals = vals + op.poisson(bc[0], bc[1])
                lvl.fields[m] = ScalarField(dom, op.nodes, vals, bc=bc)
        levels[j] = lvl
    return levels


def moment_n_C(spec: MomentSpec, x: float) -> float:
    """n_C at an interior point of the innermost chain domain."""
    if not spec.domains[0].contains(x):
        raise PreconditionError(f"{x} not interior to the innermost domain")
    levels = _solve_levels(spec)
    mask = 0
    for i in spec.C:
        mask |= 1 << i
    if mask == 0:
        raise DataError("C must be nonempty for n_C")
    return float(levels[0].fields[mask](x))


def moment_p_C(spec: MomentSpec, mu: AtomicMeasure) -> float:
    """Full moment under an atomic initial measure inside the chain."""
    dom = spec.domains[0]
    if not np.all(dom.contains(mu.positions)):
        raise PreconditionError("mu must be compactly supported in the innermost domain")
    levels = _solve_levels(spec)
    damp = np.exp(-mu.pair(levels[0].u))
    if not spec.C:
        return float(damp)
    total = 0.0
    pairings = {}
    for i in spec.C:
        pairings[1 << i] = mu.pair(levels[0].fields[1 << i])
    for size in range(2, len(spec.C) + 1):
        for combo in itertools.combinations(spec.C, size):
            m = 0
            for i in combo:
                m |= 1 << i
            pairings[m] = mu.pair(levels[0].fields[m])
    for part in partitions_of(spec.C):
        prod = 1.0
        for block in part:
            m = 0
            for i in block:
                m |= 1 << i
            prod *= pairings[m]
        total += prod
    return float(damp * total)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    value: float
    error_estimate: float
    h: float


def _laplace_value(spec: MomentSpec, mu: AtomicMeasure, lam: dict[int, float]) -> float:
    """P_mu exp(-sum <X_Dj, phi_j> - sum lam_i <X_D, f_i>) via nested solves."""
    k = len(spec.domains)
    u_outer = None
    for j in range(k - 1, -1, -1):
        dom = spec.domains[j]
        vals = spec.phis[j].values.copy()
        if j == k - 1:
            for i, li in lam.items():
                vals = vals + li * spec.fs[i].values
        if u_outer is not None:
            vals = vals + np.array([u_outer(dom.a), u_outer(dom.b)])
        u_outer = solve_VD(dom, BoundaryFunction(dom, vals), n=spec.n_grid,
                           allow_signed=True).u
    return float(np.exp(-mu.pair(u_outer)))


def _mixed_central(spec, mu, C, h) -> float:
    """(-1)^|C| times the mixed central difference of the Laplace value at 0."""
    total = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=len(C)):
        lam = {i: s * h for i, s in zip(C, signs)}
        total += np.prod(signs) * _laplace_value(spec, mu, lam)
    return float((-1.0) ** len(C) * total / (2.0 * h) ** len(C))


def laplace_derivative_oracle(spec: MomentSpec, mu: AtomicMeasure,
                              h: float | None = None) -> OracleResult:
    """Independent p_C oracle: differentiate the Laplace functional at 0.

    Mixed central differences at steps h and h/2 are combined by Richardson
    extrapolation; their disagreement is the reported error estimate.  The
    default step widens with |C| because an order-|C| difference divides
    float noise by h^|C|.
    """
    if len(spec.C) > 3:
        raise LimitError("oracle supports |C| <= 3")
    if not spec.C:
        return OracleResult(_laplace_value(spec, mu, {}), 0.0, 0.0)
    if h is None:
        h = {1: 1e-3, 2: 1e-3, 3: 5e-3}[len(spec.C)]
    d_h = _mixed_central(spec, mu, spec.C, h)
    d_h2 = _mixed_central(spec, mu, spec.C, h / 2)
    value = (4.0 * d_h2 - d_h) / 3.0
    est = abs(d_h2 - d_h) / 3.0
    if est > 0.5 * abs(value) + 1e-8:
        raise NumericalPrecisionError(
            f"Richardson disagreement {est:.3e} against value {value:.3e}; "
            "step too small or functional too rough")
    return OracleResult(value, est, h)
