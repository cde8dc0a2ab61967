"""Sparse real polynomials in the rectangular voltage components.

A :class:`Polynomial` maps exponent tuples to coefficients and keeps no zero
terms. :class:`VariableLayout` fixes the variable order
``Vd_1..Vd_n, Vq_1..Vq_n`` and, by default, drops ``Vq`` of the reference bus
(its value is pinned to zero), so the OPF polynomials live in ``2n - 1``
variables.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from itertools import combinations_with_replacement
from numbers import Real

import numpy as np

from .netmodel import AdmittanceMatrix, Network, NetworkError

Monomial = tuple[int, ...]

# Coefficients are kept in extended precision; see build_admittance.
_COEF = np.longdouble


class Polynomial:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        self.nvars = int(nvars)
        clean = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.nvars:
                raise ValueError(f"exponent {alpha} does not have {self.nvars} entries")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            if c != 0:
                clean[alpha] = clean.get(alpha, 0) + _COEF(c)
        self.terms = {a: c for a, c in clean.items() if c != 0}

    @classmethod
    def constant(cls, nvars: int, value: float) -> Polynomial:
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> Polynomial:
        alpha = [0] * nvars
        alpha[index] = 1
        return cls(nvars, {tuple(alpha): 1.0})

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, Real):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for a, c in other.terms.items():
            out[a] = out.get(a, 0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Real):
            return self.scale(other)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                ab = tuple(i + j for i, j in zip(a, b))
                out[ab] = out.get(ab, 0) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def scale(self, s: float) -> Polynomial:
        return Polynomial(self.nvars, {a: c * s for a, c in self.terms.items()})

    def evaluate(self, point) -> float:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.nvars,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.nvars},)")
        total = _COEF(0)
        for a, c in self.terms.items():
            total += c * _COEF(np.prod(x ** np.asarray(a)))
        return float(total)

    __call__ = evaluate

    def coefficient(self, alpha: Iterable[int]) -> float:
        return float(self.terms.get(tuple(alpha), 0.0))

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return f"Polynomial({self.nvars}, 0)"
        parts = []
        for a in sorted(self.terms, key=grlex_key):
            mono = "*".join(f"x{i}^{e}" if e > 1 else f"x{i}" for i, e in enumerate(a) if e)
            parts.append(f"{float(self.terms[a]):+g}" + (f"*{mono}" if mono else ""))
        return f"Polynomial({self.nvars}, {' '.join(parts)})"


def grlex_key(alpha: Monomial):
    """Sort key for graded lexicographic order (x0 > x1 > ... within a degree)."""
    return (sum(alpha), tuple(-a for a in alpha))


def monomials_upto(nvars: int, degree: int) -> list[Monomial]:
    """All exponent tuples of total degree <= ``degree`` in graded lex order."""
    out = []
    for d in range(degree + 1):
        layer = []
        for combo in combinations_with_replacement(range(nvars), d):
            alpha = [0] * nvars
            for i in combo:
                alpha[i] += 1
            layer.append(tuple(alpha))
        layer.sort(key=grlex_key)
        out.extend(layer)
    return out


class VariableLayout:
    """Map bus voltage components onto polynomial variable positions.

    With ``eliminate_reference`` the reference bus's ``Vq`` is not a variable
    and reads as the zero polynomial.
    """

    def __init__(self, n_bus: int, ref_index: int = 0, eliminate_reference: bool = True):
        if not 0 <= ref_index < n_bus:
            raise ValueError("reference index out of range")
        self.n_bus = n_bus
        self.ref_index = ref_index
        self.eliminate_reference = eliminate_reference
        self.nvars = 2 * n_bus - (1 if eliminate_reference else 0)
        self._vq = {}
        pos = n_bus
        for i in range(n_bus):
            if eliminate_reference and i == ref_index:
                continue
            self._vq[i] = pos
            pos += 1

    @classmethod
    def for_network(cls, net: Network, eliminate_reference: bool = True) -> VariableLayout:
        return cls(net.n_bus, net.ref_index, eliminate_reference)

    def vd_index(self, i: int) -> int:
        return i

    def vq_index(self, i: int) -> int | None:
        return self._vq.get(i)

    def vd(self, i: int) -> Polynomial:
        return Polynomial.variable(self.nvars, i)

    def vq(self, i: int) -> Polynomial:
        k = self._vq.get(i)
        if k is None:
            return Polynomial(self.nvars)
        return Polynomial.variable(self.nvars, k)

    def names(self) -> list[str]:
        out = [f"Vd{i + 1}" for i in range(self.n_bus)]
        out += [f"Vq{i + 1}" for i in range(self.n_bus) if i in self._vq]
        return out

    def from_complex(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        x = np.empty(self.nvars)
        x[: self.n_bus] = v.real
        for i, k in self._vq.items():
            x[k] = v[i].imag
        return x

    def to_complex(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = x[: self.n_bus].astype(complex)
        for i, k in self._vq.items():
            v[i] += 1j * x[k]
        return v


def _layout(net: Network, layout: VariableLayout | None) -> VariableLayout:
    if layout is None:
        return VariableLayout.for_network(net)
    if layout.n_bus != net.n_bus:
        raise ValueError("layout does not match network size")
    return layout


def _flows(net, Y, i, layout):
    vd = [layout.vd(k) for k in range(net.n_bus)]
    vq = [layout.vq(k) for k in range(net.n_bus)]
    re = Polynomial(layout.nvars)  # sum_k G_ik Vd_k - B_ik Vq_k
    im = Polynomial(layout.nvars)  # sum_k B_ik Vd_k + G_ik Vq_k
    for k in range(net.n_bus):
        g, b = Y.g[i, k], Y.b[i, k]
        if g == 0 and b == 0:
            continue
        re = re + vd[k] * g - vq[k] * b
        im = im + vd[k] * b + vq[k] * g
    return vd[i], vq[i], re, im


def active_injection(
    net: Network, Y: AdmittanceMatrix, bus: int, layout: VariableLayout | None = None
) -> Polynomial:
    """Active generation needed at ``bus``: its load plus the network injection."""
    layout = _layout(net, layout)
    i = net.bus_index(bus)
    vdi, vqi, re, im = _flows(net, Y, i, layout)
    return (vdi * re + vqi * im) * net.power_scale + net.buses[i].p_load


def reactive_injection(
    net: Network, Y: AdmittanceMatrix, bus: int, layout: VariableLayout | None = None
) -> Polynomial:
    """Reactive generation needed at ``bus``: its load plus the network injection."""
    layout = _layout(net, layout)
    i = net.bus_index(bus)
    vdi, vqi, re, im = _flows(net, Y, i, layout)
    return (vqi * re - vdi * im) * net.power_scale + net.buses[i].q_load


def voltage_magnitude_sq(net: Network, bus: int, layout: VariableLayout | None = None) -> Polynomial:
    layout = _layout(net, layout)
    i = net.bus_index(bus)
    return layout.vd(i) ** 2 + layout.vq(i) ** 2


def generation_cost(
    net: Network, Y: AdmittanceMatrix, bus: int, layout: VariableLayout | None = None
) -> Polynomial:
    """Quartic cost c2*P^2 + c1*P + c0 of the generator at ``bus``."""
    gen = net.generator_at(bus)
    if gen is None:
        raise NetworkError("generators", f"no generator at bus {bus}")
    p = active_injection(net, Y, bus, layout)
    return p * p * gen.c2 + p * gen.c1 + gen.c0


def total_cost(net: Network, Y: AdmittanceMatrix, layout: VariableLayout | None = None) -> Polynomial:
    layout = _layout(net, layout)
    out = Polynomial(layout.nvars)
    for g in net.generators:
        out = out + generation_cost(net, Y, g.bus, layout)
    return out


def quadratic_cost(net: Network, p_gen) -> float:
    """Total generation cost for generator outputs ``p_gen`` (network units)."""
    return float(sum(g.c2 * p * p + g.c1 * p + g.c0 for g, p in zip(net.generators, p_gen, strict=True)))
