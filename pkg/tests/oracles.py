"""Reference computations that share no code with the package.

Everything here works directly with complex phasors and the textbook
``S = V * conj(Y V)`` power balance, so agreement with the polynomial
machinery is a genuine cross-check.
"""

from __future__ import annotations

import numpy as np


def ybus(n, branches):
    """``branches`` holds (from, to, r, x) with 1-based bus numbers."""
    Y = np.zeros((n, n), dtype=complex)
    for f, t, r, x in branches:
        y = 1.0 / complex(r, x)
        i, k = f - 1, t - 1
        Y[i, i] += y
        Y[k, k] += y
        Y[i, k] -= y
        Y[k, i] -= y
    return Y


def injections(Y, V):
    """Complex power injected into the network at every bus (per unit)."""
    return V * np.conj(Y @ V)


# The bundled three-bus case in plain numbers.
CASE3_BRANCHES = [(1, 2, 0.15, 0.1), (1, 3, 0.1, 0.05), (2, 3, 0.001, 0.05)]
CASE3_LOAD2_MW = 30.0
CASE3_V2 = 1.3
CASE3_V3 = (0.8, 1.4)
CASE3_P1 = (300.0, 1200.0)
CASE3_P2 = (0.0, 50.0)


def case3_cost(p1, p2):
    return (p1 - 650.0) ** 2 + 500.0 * (p2 - 35.0) ** 2


def case3_curve(samples: int = 400_001):
    """The one-parameter family of power-flow solutions of the three-bus case.

    Bus 1 is the 1.0 pu reference, bus 2 is held at 1.3 pu with angle ``theta``,
    and bus 3 carries no injection, which fixes its voltage linearly. Returns
    ``theta, V (3 x samples), P1, P2 (MW), feasible mask``.
    """
    Y = ybus(3, CASE3_BRANCHES)
    theta = np.linspace(-np.pi, np.pi, samples)
    V1 = np.ones_like(theta, dtype=complex)
    V2 = CASE3_V2 * np.exp(1j * theta)
    V3 = -(Y[2, 0] * V1 + Y[2, 1] * V2) / Y[2, 2]
    V = np.stack([V1, V2, V3])
    S = V * np.conj(Y @ V)
    P1 = 100.0 * S[0].real
    P2 = 100.0 * S[1].real + CASE3_LOAD2_MW
    ok = (
        (P1 >= CASE3_P1[0])
        & (P1 <= CASE3_P1[1])
        & (P2 >= CASE3_P2[0])
        & (P2 <= CASE3_P2[1])
        & (np.abs(V3) >= CASE3_V3[0])
        & (np.abs(V3) <= CASE3_V3[1])
    )
    return theta, V, P1, P2, ok


def case3_optimum():
    """Brute-force global optimum on the solution curve: (P1, P2, cost, V)."""
    theta, V, P1, P2, ok = case3_curve()
    cost = np.where(ok, case3_cost(P1, P2), np.inf)
    i = int(np.argmin(cost))
    # Refine on a fine local grid around the coarse minimiser.
    lo, hi = theta[max(i - 2, 0)], theta[min(i + 2, theta.size - 1)]
    Y = ybus(3, CASE3_BRANCHES)
    t = np.linspace(lo, hi, 200_001)
    V2 = CASE3_V2 * np.exp(1j * t)
    V3 = -(Y[2, 0] + Y[2, 1] * V2) / Y[2, 2]
    Vf = np.stack([np.ones_like(V2), V2, V3])
    S = Vf * np.conj(Y @ Vf)
    p1, p2 = 100.0 * S[0].real, 100.0 * S[1].real + CASE3_LOAD2_MW
    c = case3_cost(p1, p2)
    j = int(np.argmin(c))
    return p1[j], p2[j], c[j], Vf[:, j]


def lift(x, monomials):
    """``y_a = prod(x ** a)`` for every exponent tuple."""
    x = np.asarray(x, dtype=float)
    return np.array([np.prod(x ** np.array(a)) for a in monomials])
