"""Power network instances and nodal admittance matrices.

Powers are stored in MW / MVAr and cost coefficients in $/MWh^2, $/MWh, $/hr
until :func:`to_per_unit` converts them. Impedances and voltages are always
per unit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network data.

    ``path`` names the offending field, e.g. ``generators[1].p_max``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0
    q_load: float = 0.0
    v_min: float = 0.8
    v_max: float = 1.4


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0
    q_min: float | None = None
    q_max: float | None = None


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    s_base: float = 100.0
    ref_bus: int = 1
    per_unit: bool = False
    _index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "_index", {b.id: k for k, b in enumerate(self.buses)})
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        """0-based position of ``bus_id`` in ``buses``."""
        try:
            return self._index[bus_id]
        except KeyError:
            raise NetworkError("", f"unknown bus id {bus_id}") from None

    @property
    def ref_index(self) -> int:
        return self.bus_index(self.ref_bus)

    def generator_at(self, bus_id: int) -> Generator | None:
        for g in self.generators:
            if g.bus == bus_id:
                return g
        return None

    @property
    def power_scale(self) -> float:
        """Factor turning a per-unit network power into this network's units."""
        return 1.0 if self.per_unit else self.s_base


@dataclass(frozen=True)
class AdmittanceMatrix:
    g: np.ndarray
    b: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.g + 1j * self.b


def _validate(net: Network) -> None:
    if not net.buses:
        raise NetworkError("buses", "network has no buses")
    if not net.s_base > 0:
        raise NetworkError("s_base", "must be positive")
    seen = set()
    for k, bus in enumerate(net.buses):
        p = f"buses[{k}]"
        if bus.id in seen:
            raise NetworkError(f"{p}.id", f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if bus.v_min < 0:
            raise NetworkError(f"{p}.v_min", "must be non-negative")
        if bus.v_min > bus.v_max:
            raise NetworkError(f"{p}.v_max", "v_min exceeds v_max")
    if net.ref_bus not in seen:
        raise NetworkError("ref_bus", f"unknown bus id {net.ref_bus}")
    gen_buses = set()
    for k, gen in enumerate(net.generators):
        p = f"generators[{k}]"
        if gen.bus not in seen:
            raise NetworkError(f"{p}.bus", f"unknown bus id {gen.bus}")
        if gen.bus in gen_buses:
            raise NetworkError(f"{p}.bus", "at most one generator per bus is supported")
        gen_buses.add(gen.bus)
        if gen.p_min > gen.p_max:
            raise NetworkError(f"{p}.p_max", "p_min exceeds p_max")
        if gen.q_min is not None and gen.q_max is not None and gen.q_min > gen.q_max:
            raise NetworkError(f"{p}.q_max", "q_min exceeds q_max")
        if gen.c2 < 0:
            raise NetworkError(f"{p}.c2", "quadratic cost must be convex (c2 >= 0)")
    for k, br in enumerate(net.branches):
        p = f"branches[{k}]"
        for name, bid in (("from", br.from_bus), ("to", br.to_bus)):
            if bid not in seen:
                raise NetworkError(f"{p}.{name}", f"unknown bus id {bid}")
        if br.from_bus == br.to_bus:
            raise NetworkError(f"{p}.to", "branch must join two distinct buses")
        if br.r * br.r + br.x * br.x <= 0:
            raise NetworkError(f"{p}.r", "zero-impedance branch")


def build_admittance(net: Network) -> AdmittanceMatrix:
    """Nodal admittance matrix for series-impedance branches (no shunts or taps).

    Entries are computed in extended precision so that the many polynomial
    coefficients derived from them stay mutually consistent.
    """
    n = net.n_bus
    Y = np.zeros((n, n), dtype=np.clongdouble)
    for br in net.branches:
        z = np.clongdouble(complex(br.r, br.x))
        if z == 0:
            raise NetworkError("branches", "zero-impedance branch")
        y = 1 / z
        i, k = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        Y[i, i] += y
        Y[k, k] += y
        Y[i, k] -= y
        Y[k, i] -= y
    return AdmittanceMatrix(Y.real.copy(), Y.imag.copy())


def to_per_unit(net: Network) -> Network:
    """Express powers in per unit on ``net.s_base``; no-op if already converted.

    Cost coefficients are rescaled so the cost of any operating point, in $/hr,
    is unchanged.
    """
    if net.per_unit:
        return net
    s = net.s_base

    def opt(v):
        return None if v is None else v / s

    buses = [replace(b, p_load=b.p_load / s, q_load=b.q_load / s) for b in net.buses]
    gens = [
        replace(
            g,
            p_min=g.p_min / s,
            p_max=g.p_max / s,
            q_min=opt(g.q_min),
            q_max=opt(g.q_max),
            c2=g.c2 * s * s,
            c1=g.c1 * s,
        )
        for g in net.generators
    ]
    return replace(net, buses=tuple(buses), generators=tuple(gens), per_unit=True)


# -- JSON I/O ---------------------------------------------------------------

_BUS_KEYS = {"id", "p_load", "q_load", "v_min", "v_max"}
_GEN_KEYS = {"bus", "p_min", "p_max", "q_min", "q_max", "c2", "c1", "c0"}
_BRANCH_KEYS = {"from", "to", "r", "x"}


def _number(obj: dict, key: str, path: str, default: Any = ..., integer: bool = False):
    where = f"{path}.{key}" if path else key
    if key not in obj:
        if default is ...:
            raise NetworkError(where, "missing required field")
        return default
    v = obj[key]
    if v is None and default is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise NetworkError(where, f"expected a number, got {type(v).__name__}")
    if integer:
        if int(v) != v:
            raise NetworkError(where, "expected an integer")
        return int(v)
    if not np.isfinite(v):
        raise NetworkError(where, "must be finite")
    return float(v)


def _records(data: dict, key: str, allowed: set[str]) -> list[dict]:
    items = data.get(key, [])
    if not isinstance(items, list):
        raise NetworkError(key, "expected a list")
    for k, item in enumerate(items):
        if not isinstance(item, dict):
            raise NetworkError(f"{key}[{k}]", "expected an object")
        extra = set(item) - allowed
        if extra:
            raise NetworkError(f"{key}[{k}].{sorted(extra)[0]}", "unknown field")
    return items


def network_from_dict(data: dict) -> Network:
    """Build a :class:`Network` from the JSON schema (MW, MVAr, per-unit impedances)."""
    if not isinstance(data, dict):
        raise NetworkError("", "top-level value must be an object")
    buses = []
    for k, d in enumerate(_records(data, "buses", _BUS_KEYS)):
        p = f"buses[{k}]"
        buses.append(
            Bus(
                id=_number(d, "id", p, integer=True),
                p_load=_number(d, "p_load", p, 0.0),
                q_load=_number(d, "q_load", p, 0.0),
                v_min=_number(d, "v_min", p, 0.8),
                v_max=_number(d, "v_max", p, 1.4),
            )
        )
    if not buses:
        raise NetworkError("buses", "network has no buses")
    gens = []
    for k, d in enumerate(_records(data, "generators", _GEN_KEYS)):
        p = f"generators[{k}]"
        gens.append(
            Generator(
                bus=_number(d, "bus", p, integer=True),
                p_min=_number(d, "p_min", p),
                p_max=_number(d, "p_max", p),
                q_min=_number(d, "q_min", p, None),
                q_max=_number(d, "q_max", p, None),
                c2=_number(d, "c2", p, 0.0),
                c1=_number(d, "c1", p, 0.0),
                c0=_number(d, "c0", p, 0.0),
            )
        )
    branches = []
    for k, d in enumerate(_records(data, "branches", _BRANCH_KEYS)):
        p = f"branches[{k}]"
        branches.append(
            Branch(
                from_bus=_number(d, "from", p, integer=True),
                to_bus=_number(d, "to", p, integer=True),
                r=_number(d, "r", p),
                x=_number(d, "x", p),
            )
        )
    return Network(
        buses=tuple(buses),
        generators=tuple(gens),
        branches=tuple(branches),
        s_base=_number(data, "s_base", "", 100.0),
        ref_bus=_number(data, "ref_bus", "", buses[0].id, integer=True),
    )


def network_to_dict(net: Network) -> dict:
    if net.per_unit:
        raise ValueError("serialise the MW-unit network, not its per-unit form")
    gens = []
    for g in net.generators:
        d = {"bus": g.bus, "p_min": g.p_min, "p_max": g.p_max, "c2": g.c2, "c1": g.c1, "c0": g.c0}
        if g.q_min is not None:
            d["q_min"] = g.q_min
        if g.q_max is not None:
            d["q_max"] = g.q_max
        gens.append(d)
    return {
        "s_base": net.s_base,
        "ref_bus": net.ref_bus,
        "buses": [
            {"id": b.id, "p_load": b.p_load, "q_load": b.q_load, "v_min": b.v_min, "v_max": b.v_max}
            for b in net.buses
        ],
        "generators": gens,
        "branches": [{"from": b.from_bus, "to": b.to_bus, "r": b.r, "x": b.x} for b in net.branches],
    }


def load_network(path: str | Path) -> Network:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError("", f"invalid JSON: {exc}") from None
    return network_from_dict(data)


def case3_path() -> Path:
    """Location of the bundled three-bus case."""
    return Path(str(resources.files("moment_opf") / "data" / "case3.json"))


def case3() -> Network:
    """Three-bus system with a fixed-magnitude generator bus and a zero-injection bus."""
    return load_network(case3_path())
