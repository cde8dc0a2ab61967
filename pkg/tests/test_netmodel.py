import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moment_opf.netmodel import (
    Branch,
    Bus,
    Generator,
    Network,
    NetworkError,
    build_admittance,
    case3,
    load_network,
    network_from_dict,
    network_to_dict,
    to_per_unit,
)
from moment_opf.poly import quadratic_cost

from oracles import CASE3_BRANCHES, ybus


def _case3_dict():
    return network_to_dict(case3())


def test_bundled_case_contents(net3):
    assert [b.id for b in net3.buses] == [1, 2, 3]
    assert net3.s_base == 100.0 and net3.ref_bus == 1
    assert (net3.buses[1].p_load, net3.buses[1].v_min, net3.buses[1].v_max) == (30.0, 1.3, 1.3)
    g1, g2 = net3.generators
    assert (g1.p_min, g1.p_max, g2.p_min, g2.p_max) == (300, 1200, 0, 50)
    # Both cost curves are completed squares centred on (650, 35) MW.
    assert quadratic_cost(net3, [650, 35]) == 0.0
    assert quadratic_cost(net3, [651, 35]) == pytest.approx(1.0)
    assert quadratic_cost(net3, [650, 36]) == pytest.approx(500.0)


def test_admittance_matches_oracle(net3):
    Y = build_admittance(net3)
    np.testing.assert_allclose(Y.y.astype(complex), ybus(3, CASE3_BRANCHES), rtol=1e-14, atol=1e-12)
    # Series-only network: rows sum to zero.
    np.testing.assert_allclose(Y.y.sum(axis=1).astype(complex), 0, atol=1e-12)


def test_round_trip_through_dict(net3, tmp_path):
    path = tmp_path / "net.json"
    path.write_text(json.dumps(network_to_dict(net3)))
    assert load_network(path) == net3


def test_defaults_applied():
    net = network_from_dict(
        {
            "buses": [{"id": 7}, {"id": 9, "p_load": 10}],
            "generators": [{"bus": 7, "p_min": 0, "p_max": 100}],
            "branches": [{"from": 7, "to": 9, "r": 0.01, "x": 0.1}],
        }
    )
    assert net.ref_bus == 7 and net.s_base == 100.0
    assert (net.buses[0].v_min, net.buses[0].v_max) == (0.8, 1.4)
    assert net.generators[0].q_min is None


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d["buses"].append(dict(d["buses"][0])), "buses[3].id"),
        (lambda d: d["generators"][1].update(p_min=60), "generators[1].p_max"),
        (lambda d: d["generators"][0].update(bus=9), "generators[0].bus"),
        (lambda d: d["branches"][2].update(to=2), "branches[2].to"),
        (lambda d: d["branches"][0].update(r=0, x=0), "branches[0].r"),
        (lambda d: d["buses"][2].update(v_min=1.5), "buses[2].v_max"),
        (lambda d: d["generators"][0].update(c2=-1), "generators[0].c2"),
        (lambda d: d["generators"][0].update(p_max="big"), "generators[0].p_max"),
        (lambda d: d["branches"][1].update(length=3), "branches[1].length"),
        (lambda d: d.update(ref_bus=5), "ref_bus"),
        (lambda d: d.update(s_base=0), "s_base"),
        (lambda d: d["generators"][1].pop("p_max"), "generators[1].p_max"),
    ],
)
def test_schema_errors_name_the_field(mutate, where):
    data = _case3_dict()
    mutate(data)
    with pytest.raises(NetworkError) as err:
        network_from_dict(data)
    assert err.value.path == where


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(NetworkError, match="invalid JSON"):
        load_network(p)


def test_per_unit_conversion_is_idempotent(net3):
    pu = to_per_unit(net3)
    assert pu.per_unit and to_per_unit(pu) is pu
    assert pu.generators[0].p_max == 12.0
    assert pu.buses[1].p_load == 0.3


def _net(c2, c1, c0, s_base):
    return Network(
        buses=(Bus(1), Bus(2)),
        generators=(Generator(1, 0, 500, c2, c1, c0), Generator(2, 0, 500, c2 / 2, -c1, c0 * 3)),
        branches=(Branch(1, 2, 0.01, 0.1),),
        s_base=s_base,
    )


@settings(max_examples=200, deadline=None)
@given(
    c2=st.floats(0, 1e3),
    c1=st.floats(-1e4, 1e4),
    c0=st.floats(-1e6, 1e6),
    s_base=st.floats(1, 1e3),
    p=st.lists(st.floats(-500, 500), min_size=2, max_size=2),
)
def test_cost_is_invariant_under_per_unit_conversion(c2, c1, c0, s_base, p):
    net = _net(c2, c1, c0, s_base)
    mw = quadratic_cost(net, p)
    pu = quadratic_cost(to_per_unit(net), [v / s_base for v in p])
    # Compare against the magnitude of the individual terms, not the (possibly cancelling) sum.
    scale = sum(abs(g.c2) * v * v + abs(g.c1 * v) + abs(g.c0) for g, v in zip(net.generators, p)) or 1.0
    assert abs(mw - pu) <= 1e-12 * scale
