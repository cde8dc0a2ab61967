import io

import numpy as np
import pytest

from moment_opf.lasserre import build_relaxation, pin_injection
from moment_opf.sdpcore import (
    FAILURE,
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ConicProblem,
    LMIBlock,
    SolverSettings,
    certify_feasibility,
    read_sdpa,
    reduce_equalities,
    solve,
    write_sdpa,
)

# -- analytic examples --------------------------------------------------------


def two_by_two_ones():
    """min x s.t. [[x, 1], [1, x]] >= 0; optimum x = 1."""
    return ConicProblem([1.0], [LMIBlock([[0, 1], [1, 0]], [[[1, 0], [0, 1]]])])


def contradictory_bound():
    """[y - 5] >= 0 together with y = 4."""
    return ConicProblem([0.0], [LMIBlock([[-5.0]], [[[1.0]]])], [[1.0]], [4.0])


def determinant_bound():
    """min y2 s.t. [[y1, 1], [1, y2]] >= 0, y1 = 2; optimum y2 = 1/2."""
    return ConicProblem(
        [0.0, 1.0],
        [LMIBlock([[0, 1], [1, 0]], [[[1, 0], [0, 0]], [[0, 0], [0, 1]]])],
        [[1.0, 0.0]],
        [2.0],
    )


def test_two_by_two_ones():
    sol = solve(two_by_two_ones())
    assert sol.status == OPTIMAL
    assert abs(sol.y[0] - 1.0) <= 1e-7
    assert abs(sol.objective - 1.0) <= 1e-7


def test_contradictory_bound_is_infeasible():
    assert solve(contradictory_bound()).status == INFEASIBLE


def test_determinant_bound():
    sol = solve(determinant_bound())
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.y, [2.0, 0.5], atol=1e-7)


@pytest.mark.parametrize("make", [two_by_two_ones, determinant_bound])
def test_optimal_solution_honours_its_tolerances(make):
    settings = SolverSettings()
    sol = solve(make(), settings)
    assert sol.ok
    assert sol.gap <= settings.gap_tol
    assert min(sol.block_min_eig) >= -settings.feas_tol
    assert sol.equality_residual <= settings.feas_tol
    # Weak duality.
    assert sol.dual_objective <= sol.objective + settings.gap_tol * (1 + abs(sol.objective))


def test_unbounded_detection():
    p = ConicProblem([-1.0], [LMIBlock([[0.0]], [[[1.0]]])])
    assert solve(p).status == UNBOUNDED


def test_iteration_limit_reports_failure_with_iterate():
    # Six iterations get through phase 1 but not to full accuracy in phase 2.
    sol = solve(determinant_bound(), SolverSettings(max_iter=6, restarts=0))
    assert sol.status == FAILURE
    assert sol.y is not None and abs(sol.y[1] - 0.5) < 1e-3
    early = solve(determinant_bound(), SolverSettings(max_iter=2, restarts=0))
    assert early.status == FAILURE


def test_shapes_and_symmetry_are_validated():
    with pytest.raises(ValueError):
        LMIBlock(np.zeros((2, 2)), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        ConicProblem([1.0], [LMIBlock([[0, 1], [0, 0]], [[[1, 0], [0, 1]]])])
    with pytest.raises(ValueError):
        ConicProblem([1.0, 2.0], [LMIBlock([[0.0]], [[[1.0]]])])


# -- equality reduction -----------------------------------------------------


def test_reduce_single_equality():
    p = ConicProblem([1.0, 1.0], [LMIBlock([[0.0]], [[[0.0]], [[1.0]]])], [[1.0, 0.0]], [1.0])
    red, rec = reduce_equalities(p)
    assert red.nvar == 1 and red.a_eq.shape == (0, 1)
    for z in (-3.0, 0.0, 2.5):
        y = rec([z])
        assert abs(y[0] - 1.0) <= 1e-10


def test_reduce_contradictory_pair():
    p = ConicProblem([1.0, 0.0], [], [[1.0, 0.0], [1.0, 0.0]], [1.0, 2.0])
    assert reduce_equalities(p) == (None, None)


def test_reduce_case3_order2(net3):
    p = build_relaxation(net3, 2).to_conic()
    red, rec = reduce_equalities(p)
    rank = np.linalg.matrix_rank(p.a_eq.astype(float))
    assert red.nvar == 126 - rank == 15
    rng = np.random.default_rng(3)
    a, b = p.a_eq.astype(float), p.b_eq.astype(float)
    for _ in range(5):
        y = rec(rng.normal(size=red.nvar))
        assert np.max(np.abs(a @ y - b)) <= 1e-10


# -- feasibility certificates -----------------------------------------------


def _random_psd(rng, s):
    g = rng.normal(size=(s, s))
    return g @ g.T + 0.1 * np.eye(s)


def _random_sym(rng, s):
    g = rng.normal(size=(s, s))
    return g + g.T


def strictly_feasible_problem(rng):
    """One variable, blocks positive definite at a random interior point."""
    y0 = rng.uniform(-5, 5)
    blocks = []
    for _ in range(rng.integers(1, 4)):
        s = int(rng.integers(1, 4))
        B = _random_sym(rng, s)
        blocks.append(LMIBlock(_random_psd(rng, s) - y0 * B, B[None]))
    eq = ([[1.0]], [y0]) if rng.random() < 0.3 else (None, None)
    return ConicProblem([rng.normal()], blocks, *eq)


def infeasible_problem(rng):
    """One variable; three flavours of certain infeasibility."""
    kind = rng.integers(3)
    lo = rng.uniform(-5, 5)
    if kind == 0:
        # y >= lo + gap and y <= lo.
        gap = rng.uniform(0.1, 3)
        blocks = [LMIBlock([[-(lo + gap)]], [[[1.0]]]), LMIBlock([[lo]], [[[-1.0]]])]
        return ConicProblem([0.0], blocks)
    if kind == 1:
        # [[y, 1], [1, -y]] has determinant -y^2 - 1 < 0 for every y.
        a = rng.uniform(0.5, 2)
        return ConicProblem([0.0], [LMIBlock([[0, a], [a, 0]], [[[1, 0], [0, -1]]])])
    # A positive definite block pinned outside its feasible interval.
    B = _random_psd(rng, 2)
    blocks = [LMIBlock(-lo * B, B[None])]  # feasible iff y >= lo
    return ConicProblem([0.0], blocks, [[1.0]], [lo - rng.uniform(0.1, 3)])


def test_certify_feasibility_classifies_random_problems():
    rng = np.random.default_rng(20)
    wrong = []
    for k in range(20):
        ok, margin = certify_feasibility(strictly_feasible_problem(rng))
        if not ok or margin <= 0:
            wrong.append(("feasible", k, margin))
        ok, margin = certify_feasibility(infeasible_problem(rng))
        if ok or margin >= 0:
            wrong.append(("infeasible", k, margin))
    assert wrong == []


@pytest.mark.parametrize("point, expect", [((650.0, 35.0), True), ((1200.0, 50.0), False)])
def test_certify_pinned_case3(net3, point, expect):
    pb = pin_injection(pin_injection(build_relaxation(net3, 2), 1, point[0]), 2, point[1])
    ok, margin = certify_feasibility(pb.to_conic())
    assert ok is expect
    assert (margin > 0) is expect


# -- invariances ----------------------------------------------------------------


@pytest.mark.parametrize("scale", [1e-3, 0.25, 7.0, 1e4])
def test_objective_scaling(scale):
    settings = SolverSettings()
    base = solve(determinant_bound(), settings)
    p = determinant_bound()
    scaled = solve(ConicProblem(p.c * scale, p.blocks, p.a_eq, p.b_eq), settings)
    assert scaled.ok
    # The gap is relative to 1 + |objective|, so that is the yardstick for both checks.
    allowed = 10 * settings.gap_tol * (1 + abs(scale * base.objective))
    assert abs(scaled.objective - scale * base.objective) <= allowed
    assert abs(scale * float(p.c @ (scaled.y - base.y))) <= allowed
    if scale >= 1:
        np.testing.assert_allclose(scaled.y, base.y, atol=10 * settings.gap_tol)


def test_reproducible(net3):
    p = build_relaxation(net3, 2).to_conic()
    a, b = solve(p), solve(p)
    assert a.iterations == b.iterations
    assert np.array_equal(a.y, b.y)
    assert a.objective == b.objective


def test_sdpa_round_trip(net3):
    p = build_relaxation(net3, 1).to_conic()
    buf = io.StringIO()
    write_sdpa(p, buf, comment="three-bus order 1")
    text = buf.getvalue()
    assert text.startswith('"')
    q = read_sdpa(io.StringIO(text))
    a, b = solve(p), solve(q)
    assert b.ok
    assert b.objective == pytest.approx(a.objective, abs=1e-7)


def test_sdpa_format_of_small_problem():
    buf = io.StringIO()
    write_sdpa(two_by_two_ones(), buf)
    lines = [ln for ln in buf.getvalue().splitlines() if not ln.startswith(('"', "*"))]
    assert lines[0].split()[0] == "1"  # one variable
    q = read_sdpa(io.StringIO(buf.getvalue()))
    assert solve(q).objective == pytest.approx(1.0, abs=1e-7)
