import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moment_opf.netmodel import build_admittance, to_per_unit
from moment_opf.poly import (
    Polynomial,
    VariableLayout,
    active_injection,
    grlex_key,
    monomials_upto,
    quadratic_cost,
    reactive_injection,
    total_cost,
    voltage_magnitude_sq,
)

from conftest import random_two_bus
from oracles import injections


def test_arithmetic_and_zero_pruning():
    x = Polynomial.variable(2, 0)
    y = Polynomial.variable(2, 1)
    p = (x + y) ** 2 - x * x - y * y
    assert p == Polynomial(2, {(1, 1): 2.0})
    assert (p - p).is_zero()
    assert (3 - x).evaluate([1.0, 0.0]) == 2.0
    assert (x * 2 + 1).coefficient((0, 0)) == 1.0
    assert ((x + 1) ** 3).degree == 3


def test_rejects_mismatched_variable_counts():
    with pytest.raises(ValueError):
        Polynomial.variable(2, 0) + Polynomial.variable(3, 0)
    with pytest.raises(ValueError):
        Polynomial(2, {(1,): 1.0})


def test_graded_lex_order():
    mons = monomials_upto(2, 2)
    assert mons == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert sorted(mons[::-1], key=grlex_key) == mons
    assert len(monomials_upto(5, 4)) == 126


def test_layout_drops_reference_imaginary_part():
    lay = VariableLayout(3, ref_index=0)
    assert lay.nvars == 5
    assert lay.names() == ["Vd1", "Vd2", "Vd3", "Vq2", "Vq3"]
    assert lay.vq(0).is_zero()
    v = np.array([1.0, 1.2 - 0.3j, 0.9 + 0.1j])
    np.testing.assert_allclose(lay.to_complex(lay.from_complex(v)), v)
    full = VariableLayout(3, eliminate_reference=False)
    assert full.nvars == 6 and full.names()[3] == "Vq1"


def _random_voltages(rng, n):
    v = rng.uniform(0.8, 1.3, n) * np.exp(1j * rng.uniform(-0.6, 0.6, n))
    v[0] = abs(v[0])  # reference angle
    return v


@pytest.mark.parametrize("per_unit", [False, True])
def test_power_balance_matches_phasor_oracle(net3, per_unit):
    net = to_per_unit(net3) if per_unit else net3
    Y = build_admittance(net)
    lay = VariableLayout.for_network(net)
    rng = np.random.default_rng(11)
    for _ in range(25):
        v = _random_voltages(rng, 3)
        s = injections(Y.y.astype(complex), v) * net.power_scale
        x = lay.from_complex(v)
        for k, bus in enumerate(net.buses):
            p = active_injection(net, Y, bus.id, lay).evaluate(x)
            q = reactive_injection(net, Y, bus.id, lay).evaluate(x)
            assert p == pytest.approx(s[k].real + bus.p_load, rel=1e-9, abs=1e-9 * net.power_scale)
            assert q == pytest.approx(s[k].imag + bus.q_load, rel=1e-9, abs=1e-9 * net.power_scale)
            assert voltage_magnitude_sq(net, bus.id, lay).evaluate(x) == pytest.approx(abs(v[k]) ** 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_cost_polynomial_equals_cost_of_injections(seed):
    net = random_two_bus(seed % 50)
    pu = to_per_unit(net)
    Y = build_admittance(pu)
    lay = VariableLayout.for_network(pu)
    v = _random_voltages(np.random.default_rng(seed), 2)
    s = injections(Y.y.astype(complex), v) * net.s_base
    p_gen = [s[k].real + b.p_load for k, b in enumerate(net.buses)]
    expect = quadratic_cost(net, p_gen)
    assert total_cost(pu, Y, lay).evaluate(lay.from_complex(v)) == pytest.approx(expect, rel=1e-9)
