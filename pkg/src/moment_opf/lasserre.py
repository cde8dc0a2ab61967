"""Moment relaxations of the OPF problem and interpretation of their solutions.

The order-``gamma`` relaxation replaces every monomial ``x^a`` with a lifted
scalar ``y_a`` (``|a| <= 2*gamma``), requires the moment matrix and the
localizing matrix of every bound to be PSD, and pins ``y_0 = 1``. For order 1
the quartic cost is handled through auxiliary epigraph variables ``omega_i``
and one second-order cone per generator, embedded as a 3x3 arrow matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from . import poly as P
from .netmodel import AdmittanceMatrix, Network, build_admittance, to_per_unit
from .poly import Monomial, Polynomial, VariableLayout
from .sdpcore import ConicProblem, ConicSolution, LMIBlock, SolverSettings, solve

_XP = np.longdouble

DEFAULT_RANK_TOL = 1e-4


class RelaxationError(ValueError):
    pass


class MonomialBasis:
    """Monomials of degree <= ``order`` in graded lex order; position 0 is the constant."""

    def __init__(self, nvars: int, order: int):
        if order < 0:
            raise RelaxationError("basis order must be non-negative")
        self.nvars = nvars
        self.order = order
        self.monomials: list[Monomial] = P.monomials_upto(nvars, order)
        self.index = {a: k for k, a in enumerate(self.monomials)}

    def __len__(self):
        return len(self.monomials)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([np.prod(x ** np.asarray(a)) for a in self.monomials])


class LiftedVariableMap(MonomialBasis):
    """Index of every lifted variable ``y_a`` with ``|a| <= 2 * order``."""

    def __init__(self, nvars: int, order: int):
        super().__init__(nvars, 2 * order)
        self.relaxation_order = order

    @property
    def size(self) -> int:
        return len(self.monomials)

    def position(self, alpha) -> int:
        try:
            return self.index[tuple(alpha)]
        except KeyError:
            raise RelaxationError(f"monomial {tuple(alpha)} exceeds degree {self.order}") from None


def _add(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i + j for i, j in zip(a, b))


def apply_lift(h: Polynomial, ymap: LiftedVariableMap, size: int | None = None) -> np.ndarray:
    """Coefficient vector of the linear function L_y{h}."""
    if h.degree > ymap.order:
        raise RelaxationError(f"degree {h.degree} exceeds 2*gamma = {ymap.order}")
    out = np.zeros(size or ymap.size, dtype=_XP)
    for alpha, c in h.terms.items():
        out[ymap.index[alpha]] += c
    return out


def lift_point(x, ymap: LiftedVariableMap) -> np.ndarray:
    """Moments of the point mass at ``x``: ``y_a = x^a``."""
    return ymap.evaluate(x)


def localizing_matrix(h: Polynomial, basis: MonomialBasis, ymap: LiftedVariableMap, size: int | None = None) -> np.ndarray:
    """Coefficients ``(nvar, s, s)`` of L_y{h * b b^T} for the basis vector ``b``."""
    if h.degree + 2 * basis.order > ymap.order:
        raise RelaxationError(
            "relaxation order must be greater than or equal to half the highest degree "
            f"(constraint degree {h.degree} with localizing basis order {basis.order} "
            f"needs moments of degree {h.degree + 2 * basis.order} > {ymap.order})"
        )
    s = len(basis)
    out = np.zeros((size or ymap.size, s, s), dtype=_XP)
    mons = basis.monomials
    idx = ymap.index
    for i in range(s):
        for j in range(i, s):
            bij = _add(mons[i], mons[j])
            for alpha, c in h.terms.items():
                k = idx[_add(alpha, bij)]
                out[k, i, j] += c
                if i != j:
                    out[k, j, i] += c
    return out


def moment_matrix(basis: MonomialBasis, ymap: LiftedVariableMap, size: int | None = None) -> np.ndarray:
    """Coefficients of M{y} = L_y{b b^T}; entry (i, j) is ``y_{a_i + a_j}``."""
    return localizing_matrix(Polynomial.constant(basis.nvars, 1.0), basis, ymap, size)


def localizing_order(h: Polynomial, order: int) -> int:
    eta = math.ceil(h.degree / 2)
    if order - eta < 0:
        raise RelaxationError(
            f"relaxation order {order} must be greater than or equal to half the highest degree ({eta})"
        )
    return order - eta


@dataclass(frozen=True)
class Constraint:
    label: str
    kind: str  # "psd", "equality", "soc"
    bus: int | None = None


@dataclass(frozen=True)
class MomentProblem:
    """An assembled order-``gamma`` moment relaxation (per-unit network)."""

    order: int
    net: Network
    admittance: AdmittanceMatrix
    layout: VariableLayout
    basis: MonomialBasis
    ymap: LiftedVariableMap
    objective: np.ndarray
    blocks: tuple[LMIBlock, ...]
    block_info: tuple[Constraint, ...]
    a_eq: np.ndarray
    b_eq: np.ndarray
    eq_labels: tuple[str, ...]
    cost_scale: float
    aux_buses: tuple[int, ...] = ()  # generator bus for each omega variable
    penalty: float = 0.0
    p_lift: dict = field(default_factory=dict)  # bus id -> L_y{f_P} coefficient row
    q_lift: dict = field(default_factory=dict)

    @property
    def nvar(self) -> int:
        return self.objective.shape[0]

    @property
    def n_aux(self) -> int:
        return len(self.aux_buses)

    @property
    def penalized(self) -> bool:
        return self.penalty != 0.0

    def to_conic(self) -> ConicProblem:
        return ConicProblem(self.objective, list(self.blocks), self.a_eq, self.b_eq)

    def with_equality(self, row, rhs: float, label: str) -> MomentProblem:
        return replace(
            self,
            a_eq=np.vstack([self.a_eq, np.asarray(row)[None]]),
            b_eq=np.append(self.b_eq, rhs),
            eq_labels=self.eq_labels + (label,),
        )

    def census(self) -> list[tuple[str, str, int]]:
        """(label, kind, side length) for every conic block."""
        return [(info.label, info.kind, blk.size) for info, blk in zip(self.block_info, self.blocks)]

    def moment_block(self) -> LMIBlock:
        return self.blocks[0]


def _pad(row: np.ndarray, nvar: int) -> np.ndarray:
    if row.shape[0] == nvar:
        return row
    out = np.zeros(nvar, dtype=row.dtype)
    out[: row.shape[0]] = row
    return out


def soc_cost_block(c2: float, c1: float, c0: float, p_row: np.ndarray, y0: int, aux: int, nvar: int) -> LMIBlock:
    """Epigraph ``omega >= c2 p^2 + c1 p + c0`` as a 3x3 arrow PSD block.

    ``p_row`` is the lifted expression for the generator output, ``y0`` the
    index of the constant moment and ``aux`` the index of ``omega``. With
    ``t = 1 - c1 p - c0 + omega``, ``u = 1 + c1 p + c0 - omega`` and
    ``w = 2 sqrt(c2) p``, ``[[t, u, w], [u, t, 0], [w, 0, t]] >= 0`` is exactly
    ``t >= ||(u, w)||``. With ``c2 == 0`` a scalar block is returned.
    """
    if c2 < 0:
        raise RelaxationError("quadratic cost coefficient must be non-negative")
    p_row = _pad(p_row, nvar)
    one = np.zeros(nvar, dtype=_XP)
    one[y0] = 1.0
    om = np.zeros(nvar, dtype=_XP)
    om[aux] = 1.0
    if c2 == 0:
        return LMIBlock(np.zeros((1, 1)), (om - c1 * p_row - c0 * one)[:, None, None], "cost")
    t = one - c1 * p_row - c0 * one + om
    u = one + c1 * p_row + c0 * one - om
    w = 2 * np.sqrt(_XP(c2)) * p_row
    coeffs = np.zeros((nvar, 3, 3), dtype=_XP)
    coeffs[:, 0, 0] = coeffs[:, 1, 1] = coeffs[:, 2, 2] = t
    coeffs[:, 0, 1] = coeffs[:, 1, 0] = u
    coeffs[:, 0, 2] = coeffs[:, 2, 0] = w
    return LMIBlock(np.zeros((3, 3)), coeffs, "cost")


def bus_current(net: Network, Y: AdmittanceMatrix, bus: int, layout: VariableLayout) -> tuple[Polynomial, Polynomial]:
    """Real and imaginary parts of the current injected at ``bus``, linear in the voltages."""
    i = net.bus_index(bus)
    re = Polynomial(layout.nvars)
    im = Polynomial(layout.nvars)
    for k in range(net.n_bus):
        g, b = Y.g[i, k], Y.b[i, k]
        re = re + layout.vd(k) * g - layout.vq(k) * b
        im = im + layout.vd(k) * b + layout.vq(k) * g
    return re, im


def build_relaxation(
    net: Network,
    order: int,
    admittance: AdmittanceMatrix | None = None,
    *,
    cost_scale: float | None = None,
) -> MomentProblem:
    """Assemble the order-``order`` moment relaxation of the OPF problem on ``net``."""
    if order not in (1, 2, 3):
        raise RelaxationError("relaxation order must be 1, 2 or 3")
    net = to_per_unit(net)
    Y = admittance if admittance is not None else build_admittance(net)
    layout = VariableLayout.for_network(net)
    m = layout.nvars
    basis = MonomialBasis(m, order)
    ymap = LiftedVariableMap(m, order)
    gens = net.generators
    n_aux = len(gens) if order == 1 else 0
    nvar = ymap.size + n_aux
    y0 = 0

    if cost_scale is None:
        cost_scale = max(1.0, abs(sum(g.c0 for g in gens)))

    blocks: list[LMIBlock] = [LMIBlock(np.zeros((len(basis),) * 2), moment_matrix(basis, ymap, nvar), "moment")]
    info: list[Constraint] = [Constraint("moment", "psd")]
    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    eq_labels: list[str] = []

    row = np.zeros(nvar, dtype=_XP)
    row[y0] = 1.0
    eq_rows.append(row)
    eq_rhs.append(1.0)
    eq_labels.append("y0")

    def lower(h: Polynomial, label: str, bus: int):
        sub = MonomialBasis(m, localizing_order(h, order))
        blocks.append(LMIBlock(np.zeros((len(sub),) * 2), localizing_matrix(h, sub, ymap, nvar), label))
        info.append(Constraint(label, "psd", bus))

    def equal(h: Polynomial, label: str):
        # L_y{h x^a} = 0 for every |a| <= 2*(gamma - eta); covers every localizing entry.
        k = localizing_order(h, order)
        for mono in P.monomials_upto(m, 2 * k):
            shifted = h * Polynomial(m, {mono: 1.0})
            eq_rows.append(apply_lift(shifted, ymap, nvar))
            eq_rhs.append(0.0)
            eq_labels.append(label)

    def bounded(h: Polynomial, lo, hi, name: str, bus: int):
        if lo is not None and hi is not None and lo == hi:
            equal(h - lo, f"{name}[{bus}]")
            return
        if lo is not None:
            lower(h - lo, f"{name}_min[{bus}]", bus)
        if hi is not None:
            lower(hi - h, f"{name}_max[{bus}]", bus)

    p_lift, q_lift = {}, {}
    for bus in net.buses:
        fp = P.active_injection(net, Y, bus.id, layout)
        fq = P.reactive_injection(net, Y, bus.id, layout)
        fv = P.voltage_magnitude_sq(net, bus.id, layout)
        p_lift[bus.id] = apply_lift(fp, ymap, nvar)
        q_lift[bus.id] = apply_lift(fq, ymap, nvar)
        gen = net.generator_at(bus.id)
        if gen is None:
            bounded(fp, 0.0, 0.0, "P", bus.id)
            bounded(fq, 0.0, 0.0, "Q", bus.id)
        else:
            bounded(fp, gen.p_min, gen.p_max, "P", bus.id)
            bounded(fq, gen.q_min, gen.q_max, "Q", bus.id)
        vlo = bus.v_min**2 if bus.v_min > 0 else None
        bounded(fv, vlo, bus.v_max**2, "V", bus.id)
        if order >= 2 and gen is None and vlo is not None and bus.p_load == 0 and bus.q_load == 0:
            for k, ell in enumerate(bus_current(net, Y, bus.id, layout)):
                for mono in P.monomials_upto(m, 2 * order - 1):
                    eq_rows.append(apply_lift(ell * Polynomial(m, {mono: 1.0}), ymap, nvar))
                    eq_rhs.append(0.0)
                    eq_labels.append(f"I{'ri'[k]}[{bus.id}]")

    objective = np.zeros(nvar, dtype=_XP)
    if order == 1:
        for k, g in enumerate(gens):
            blk = soc_cost_block(
                g.c2 / cost_scale, g.c1 / cost_scale, g.c0 / cost_scale, p_lift[g.bus], y0, ymap.size + k, nvar
            )
            blk.label = f"cost[{g.bus}]"
            blocks.append(blk)
            info.append(Constraint(blk.label, "soc" if blk.size == 3 else "psd", g.bus))
            objective[ymap.size + k] = 1.0
    else:
        objective += apply_lift(P.total_cost(net, Y, layout), ymap, nvar) / cost_scale

    return MomentProblem(
        order=order,
        net=net,
        admittance=Y,
        layout=layout,
        basis=basis,
        ymap=ymap,
        objective=objective,
        blocks=tuple(blocks),
        block_info=tuple(info),
        a_eq=np.array(eq_rows, dtype=_XP),
        b_eq=np.array(eq_rhs, dtype=_XP),
        eq_labels=tuple(eq_labels),
        cost_scale=cost_scale,
        aux_buses=tuple(g.bus for g in gens) if order == 1 else (),
        p_lift=p_lift,
        q_lift=q_lift,
    )


def pin_injection(problem: MomentProblem, bus: int, p_mw: float) -> MomentProblem:
    """Append ``L_y{f_P} = p`` for the generator at ``bus`` (``p`` in MW)."""
    net = problem.net
    if net.generator_at(bus) is None:
        raise RelaxationError(f"bus {bus} has no generator")
    return problem.with_equality(problem.p_lift[bus], p_mw / net.s_base, f"pin_P[{bus}]")


def add_reactive_penalty(problem: MomentProblem, epsilon: float, per_unit: bool = False) -> MomentProblem:
    """Add ``epsilon * sum_G L_y{f_Q}`` to an order-1 objective.

    ``epsilon`` is in $/(MVAr-hr), or in $/hr per unit of reactive power when
    ``per_unit`` is set. The result is no longer a relaxation of the OPF problem.
    """
    if epsilon < 0:
        raise RelaxationError("penalty coefficient must be non-negative")
    if problem.order != 1:
        raise RelaxationError("reactive penalty applies to the first-order relaxation")
    if epsilon == 0:
        return problem
    extra = np.zeros(problem.nvar, dtype=_XP)
    for g in problem.net.generators:
        extra += problem.q_lift[g.bus]
    # q_lift rows are per unit; convert them to MVAr unless the coefficient already is per unit.
    extra *= epsilon * (1.0 if per_unit else problem.net.s_base) / problem.cost_scale
    return replace(problem, objective=problem.objective + extra, penalty=problem.penalty + epsilon)


# -- solution interpretation ------------------------------------------------------


def check_rank(moment: np.ndarray, tol_ratio: float = DEFAULT_RANK_TOL) -> tuple[float, bool, np.ndarray]:
    """Return ``(lambda_2 / lambda_1, ratio <= tol_ratio, eigenvalues descending)``."""
    moment = np.asarray(moment, dtype=float)
    lam = np.linalg.eigvalsh(0.5 * (moment + moment.T))[::-1]
    if lam.size == 0 or lam[0] <= 0:
        return math.inf, False, lam
    ratio = max(lam[1], 0.0) / lam[0] if lam.size > 1 else 0.0
    return float(ratio), ratio <= tol_ratio, lam


def parity_rank(moment: np.ndarray, basis: MonomialBasis, tol_ratio: float = DEFAULT_RANK_TOL) -> tuple[float, bool]:
    """Rank test modulo the global sign flip ``x -> -x``.

    Every OPF polynomial is even, so flipping the sign of all odd moments maps
    feasible points to feasible points of equal cost and an interior-point
    solver returns the symmetric average of the two mirror solutions. Its
    moment matrix is block diagonal by monomial parity with rank 2 even when
    the relaxation is exact. Both parity blocks having rank one is equivalent
    to the sign-fixed lift of the extracted point being a rank-one solution.
    """
    parity = np.array([sum(a) % 2 for a in basis.monomials])
    worst = 0.0
    for p in (0, 1):
        mask = parity == p
        if np.count_nonzero(mask) < 2:
            continue
        ratio, _, _ = check_rank(moment[np.ix_(mask, mask)], tol_ratio)
        worst = max(worst, ratio)
    return worst, worst <= tol_ratio


def first_order_block(y: np.ndarray, ymap: LiftedVariableMap) -> np.ndarray:
    """Numeric ``L_y{x x^T}``, the degree-2 diagonal block of the moment matrix."""
    m = ymap.nvars
    out = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            a = [0] * m
            a[i] += 1
            a[j] += 1
            out[i, j] = y[ymap.index[tuple(a)]]
    return out


def extract_point(y: np.ndarray, ymap: LiftedVariableMap, sign_index: int = 0) -> np.ndarray:
    """Scaled leading eigenvector of ``L_y{x x^T}``, signed so ``x[sign_index] >= 0``."""
    lam, vec = np.linalg.eigh(first_order_block(np.asarray(y, dtype=float), ymap))
    x = math.sqrt(max(lam[-1], 0.0)) * vec[:, -1]
    if x[sign_index] < 0:
        x = -x
    return x


@dataclass
class RelaxationResult:
    status: str
    order: int
    objective: float  # $/hr, includes any penalty term
    y: np.ndarray | None
    eigenvalues: np.ndarray | None
    rank_ratio: float
    rank_one: bool
    voltages: np.ndarray | None
    p_gen: np.ndarray | None  # MW at the extracted point
    q_gen: np.ndarray | None
    lifted_p_gen: np.ndarray | None  # MW from L_y{f_P}
    lifted_q_gen: np.ndarray | None
    omega: np.ndarray | None  # $/hr, order 1 only
    penalized: bool
    solution: ConicSolution
    problem: MomentProblem = field(repr=False)

    @property
    def lower_bound(self) -> float | None:
        """Objective as a bound on the OPF optimum; None for penalized problems."""
        return None if self.penalized else self.objective

    @property
    def relaxed_cost(self) -> float:
        """Sum of omega for order 1, L_y{sum f_C} otherwise ($/hr)."""
        if self.omega is not None:
            return float(self.omega.sum())
        return self.objective

    def moment_matrix(self) -> np.ndarray:
        return self.problem.moment_block().evaluate(self.y)


def extract_voltages(result: RelaxationResult) -> np.ndarray:
    """Complex bus voltages from a rank-one solution; refuses otherwise."""
    if not result.rank_one or result.y is None:
        raise RelaxationError("rank condition not satisfied; no voltage extraction")
    pb = result.problem
    x = extract_point(result.y, pb.ymap, pb.layout.vd_index(pb.layout.ref_index))
    return pb.layout.to_complex(x)


def injections_at(problem: MomentProblem, voltages) -> tuple[np.ndarray, np.ndarray]:
    """Generator (P, Q) in MW/MVAr from the power-flow polynomials at ``voltages``."""
    net, Y, layout = problem.net, problem.admittance, problem.layout
    x = layout.from_complex(voltages)
    p = [P.active_injection(net, Y, g.bus, layout).evaluate(x) for g in net.generators]
    q = [P.reactive_injection(net, Y, g.bus, layout).evaluate(x) for g in net.generators]
    return np.array(p) * net.s_base, np.array(q) * net.s_base


def interpret(problem: MomentProblem, sol: ConicSolution, tol_ratio: float = DEFAULT_RANK_TOL) -> RelaxationResult:
    net = problem.net
    res = RelaxationResult(
        status=sol.status,
        order=problem.order,
        objective=math.nan,
        y=None,
        eigenvalues=None,
        rank_ratio=math.nan,
        rank_one=False,
        voltages=None,
        p_gen=None,
        q_gen=None,
        lifted_p_gen=None,
        lifted_q_gen=None,
        omega=None,
        penalized=problem.penalized,
        solution=sol,
        problem=problem,
    )
    if sol.y is None or sol.status in ("infeasible",):
        return res
    y = sol.y
    res.y = y
    res.objective = float(problem.objective @ y) * problem.cost_scale
    res.lifted_p_gen = np.array([float(problem.p_lift[g.bus] @ y) for g in net.generators]) * net.s_base
    res.lifted_q_gen = np.array([float(problem.q_lift[g.bus] @ y) for g in net.generators]) * net.s_base
    if problem.n_aux:
        res.omega = y[problem.ymap.size :] * problem.cost_scale
    moment = problem.moment_block().evaluate(y)
    _, _, lam = check_rank(moment, tol_ratio)
    ratio, ok = parity_rank(moment, problem.basis, tol_ratio)
    res.rank_ratio, res.rank_one, res.eigenvalues = ratio, ok and sol.status == "optimal", lam
    if res.rank_one:
        res.voltages = extract_voltages(res)
        res.p_gen, res.q_gen = injections_at(problem, res.voltages)
    return res


def solve_relaxation(
    problem: MomentProblem,
    settings: SolverSettings | None = None,
    tol_ratio: float = DEFAULT_RANK_TOL,
) -> RelaxationResult:
    return interpret(problem, solve(problem.to_conic(), settings), tol_ratio)


def true_cost(net: Network, voltages) -> float:
    """OPF objective ($/hr) at the given complex voltages."""
    pu = to_per_unit(net)
    Y = build_admittance(pu)
    layout = VariableLayout.for_network(pu, eliminate_reference=False)
    x = layout.from_complex(voltages)
    return P.total_cost(pu, Y, layout).evaluate(x)


def basis_size(nvars: int, order: int) -> int:
    return comb(nvars + order, order)
