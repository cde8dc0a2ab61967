"""Dense primal-dual interior-point solver for LMI-form conic programs.

The problem handled here is::

    minimize    c @ y
    subject to  F0_k + sum_i y_i F_ik  >= 0   (PSD, one per block k)
                A_eq @ y == b_eq

Equalities are eliminated by a null-space parametrisation ``y = y_p + N z``.
Moment relaxations with equality constraints rarely have a strict interior,
so the reduced problem is then restricted to the minimal face containing the
feasible set: directions that are identically singular are projected out, and
whenever phase 1 (shift every block by ``s * I`` and minimise ``s``) ends at
``s* ~ 0`` its dual matrix is used as a facial-reduction certificate. Phase 2
runs Mehrotra predictor-corrector steps with the HKM search direction from the
phase-1 point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILURE = "numerical-failure"
_TRACE = False

# Face data are carried in extended precision. Subspaces and preconditioners are
# chosen in float64 and then applied exactly, so ill-conditioned faces can be
# re-scaled without the rounding noise swamping thin feasible sets.
_XP = np.longdouble


def _f64(a) -> np.ndarray:
    return np.asarray(a, dtype=float)


def _data(a) -> np.ndarray:
    """Problem data as float64, or extended precision when supplied that way."""
    a = np.asarray(a)
    return a if a.dtype == _XP else a.astype(float)


@dataclass
class LMIBlock:
    """Affine symmetric matrix function ``constant + sum_i y_i coeffs[i]``."""

    constant: np.ndarray
    coeffs: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.constant = _data(self.constant)
        self.coeffs = _data(self.coeffs)
        s = self.constant.shape[0]
        if self.constant.shape != (s, s) or self.coeffs.shape[1:] != (s, s):
            raise ValueError(f"block {self.label!r}: inconsistent matrix shapes")

    @property
    def size(self) -> int:
        return self.constant.shape[0]

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=self.coeffs.dtype)
        return _f64(self.constant + np.tensordot(y, self.coeffs, axes=1))


@dataclass
class ConicProblem:
    c: np.ndarray
    blocks: list[LMIBlock]
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = _data(self.c)
        n = self.c.shape[0]
        if self.a_eq is None:
            self.a_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        a = _data(self.a_eq)
        self.b_eq = _data(self.b_eq).reshape(-1)
        self.a_eq = a.reshape(self.b_eq.shape[0], n)
        for blk in self.blocks:
            if blk.coeffs.shape[0] != n:
                raise ValueError(f"block {blk.label!r} has {blk.coeffs.shape[0]} coefficient matrices, expected {n}")
            if not np.allclose(blk.coeffs, blk.coeffs.transpose(0, 2, 1)) or not np.allclose(
                blk.constant, blk.constant.T
            ):
                raise ValueError(f"block {blk.label!r} is not symmetric")

    @property
    def nvar(self) -> int:
        return self.c.shape[0]


@dataclass
class SolverSettings:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 100
    step_fraction: float = 0.98
    phase1_tol: float = 1e-7
    phase1_box: float = 1e4
    equality_tol: float = 1e-9
    kernel_tol: float = 1e-9
    facial_rounds: int = 8
    # Phase-1 margin below which the problem is re-conditioned before phase 2.
    comfortable_margin: float = 1e-3
    restarts: int = 4


@dataclass
class ConicSolution:
    status: str
    y: np.ndarray | None = None
    objective: float = math.nan
    dual_objective: float = math.nan
    gap: float = math.nan
    block_min_eig: list[float] = field(default_factory=list)
    equality_residual: float = math.nan
    iterations: int = 0
    phase1_margin: float = math.nan
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


# -- equality elimination ----------------------------------------------------


@dataclass
class AffineRecovery:
    """``y = particular + basis @ z``, held in extended precision."""

    particular: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.particular = np.asarray(self.particular, dtype=_XP)
        self.basis = np.asarray(self.basis, dtype=_XP)

    def exact(self, z) -> np.ndarray:
        return self.particular + self.basis @ np.asarray(z, dtype=_XP)

    def __call__(self, z) -> np.ndarray:
        return self.exact(z).astype(float)


def _parametrize(a: np.ndarray, b: np.ndarray, n: int, tol: float, consistency: float | None = None):
    """Particular solution and null-space basis of ``a @ y = b``; None if inconsistent.

    The rank and the basis are found in float64; both are then refined in
    extended precision so ``a @ (yp + N z) = b`` holds far beyond float64 accuracy.
    """
    a, b = np.asarray(a, dtype=_XP), np.asarray(b, dtype=_XP)
    if a.shape[0] == 0:
        return np.zeros(n, dtype=_XP), np.eye(n, dtype=_XP)
    scale = np.sqrt(np.sum(a * a, axis=1))
    keep = scale > 0
    if not np.all(keep):
        if np.any(np.abs(_f64(b[~keep])) > (consistency or tol)):
            return None
        a, b, scale = a[keep], b[keep], scale[keep]
        if a.shape[0] == 0:
            return np.zeros(n, dtype=_XP), np.eye(n, dtype=_XP)
    a_s, b_s = a / scale[:, None], b / scale
    u, sv, vt = np.linalg.svd(_f64(a_s), full_matrices=True)
    rank = int(np.sum(sv > tol * sv[0]))
    pinv = vt[:rank].T @ (u[:, :rank].T / sv[:rank, None])
    yp = np.zeros(n, dtype=_XP)
    N = vt[rank:].T.astype(_XP)
    for _ in range(3):
        yp = yp + (pinv @ _f64(b_s - a_s @ yp)).astype(_XP)
        N = N - (pinv @ _f64(a_s @ N)).astype(_XP)
    limit = (consistency or 10 * tol) * (1.0 + float(np.linalg.norm(_f64(b_s))))
    if np.linalg.norm(_f64(a_s @ yp - b_s)) > limit:
        return None
    return yp, N


def reduce_equalities(p: ConicProblem, tol: float = 1e-9) -> tuple[ConicProblem | None, AffineRecovery | None]:
    """Eliminate ``A_eq y = b_eq``.

    Returns an equality-free problem over ``z`` and the map ``z -> y``, or
    ``(None, None)`` when the equalities are inconsistent. The reduced
    objective drops the constant ``c @ particular``.
    """
    out = _parametrize(p.a_eq, p.b_eq, p.nvar, tol)
    if out is None:
        return None, None
    rec = AffineRecovery(*out)
    blocks = [
        LMIBlock(blk.evaluate(_f64(rec.particular)), np.tensordot(_f64(rec.basis).T, blk.coeffs, axes=1), blk.label)
        for blk in p.blocks
    ]
    return ConicProblem(_f64(rec.basis).T @ p.c, blocks), rec


# -- faces ----------------------------------------------------------------------
#
# A face stores the problem in reduced coordinates z (y = rec(z)):
#   minimise c @ z + offset   s.t.   F0_k + sum_i z_i F_k[i] >= 0,   h + G.T @ z >= 0
# Internally the solver works in the SDP dual standard form
#   maximise b @ w   s.t.   Z_k = C_k - sum_i w_i A_k[i] >= 0,   zl = cl - Al.T @ w >= 0
# whose primal is  minimise <C, X>  s.t.  A(X) = b,  X >= 0.


@dataclass
class _Std:
    b: np.ndarray
    C: list[np.ndarray]
    A: list[np.ndarray]
    cl: np.ndarray
    Al: np.ndarray

    @property
    def m(self):
        return self.b.shape[0]

    def slack(self, w):
        Z = [C - np.tensordot(w, A, axes=1) for C, A in zip(self.C, self.A)]
        return Z, self.cl - self.Al.T @ w

    def aop(self, Xs, xl):
        out = self.Al @ xl
        for A, X in zip(self.A, Xs):
            out = out + A.reshape(self.m, -1) @ X.reshape(-1)
        return out

    def adj(self, w):
        return [np.tensordot(w, A, axes=1) for A in self.A], self.Al.T @ w


def _sandwich(U, F):
    """``U.T @ F[k] @ U`` for a stack (or single matrix) ``F``."""
    return np.matmul(np.matmul(U.T, F), U)


@dataclass
class _Face:
    rec: AffineRecovery
    c: np.ndarray
    offset: np.longdouble
    F0: list[np.ndarray]
    F: list[np.ndarray]
    h: np.ndarray
    G: np.ndarray
    unbounded: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=_XP)
        self.offset = _XP(self.offset)
        self.F0 = [np.asarray(F0, dtype=_XP) for F0 in self.F0]
        self.F = [np.asarray(F, dtype=_XP) for F in self.F]
        self.h = np.asarray(self.h, dtype=_XP)
        self.G = np.asarray(self.G, dtype=_XP).reshape(self.c.shape[0], self.h.shape[0])

    @property
    def nz(self) -> int:
        return self.c.shape[0]

    def moved(self, zp, N) -> _Face:
        """Substitute ``z = zp + N @ v``."""
        zp, N = np.asarray(zp, dtype=_XP), np.asarray(N, dtype=_XP)
        return _Face(
            AffineRecovery(self.rec.exact(zp), self.rec.basis @ N),
            N.T @ self.c,
            self.offset + self.c @ zp,
            [F0 + np.tensordot(zp, F, axes=1) for F0, F in zip(self.F0, self.F)],
            [np.tensordot(N.T, F, axes=1) for F in self.F],
            self.h + self.G.T @ zp,
            N.T @ self.G,
            self.unbounded,
        )

    def recentered(self, z0: np.ndarray) -> _Face:
        """Same face with the origin moved to ``z0``."""
        return self.moved(z0, np.eye(self.nz))

    def std(self) -> _Std:
        return _Std(
            -_f64(self.c), [_f64(F0) for F0 in self.F0], [-_f64(F) for F in self.F], _f64(self.h), -_f64(self.G)
        )

    def with_equalities(self, E: np.ndarray, f: np.ndarray, tol: float, consistency: float | None = None):
        """Restrict to ``E @ z = f``; returns a new face or None if inconsistent."""
        out = _parametrize(E, f, self.nz, tol, consistency)
        if out is None:
            return None
        return self.moved(*out)


def _common_kernel_restrict(const, coeffs, tol):
    """Project out directions in the common kernel of ``const`` and all ``coeffs``."""
    s = const.shape[0]
    stack = _f64(np.concatenate([const[None], coeffs], axis=0).transpose(1, 0, 2).reshape(s, -1))
    u, sv, _ = np.linalg.svd(stack, full_matrices=True)
    if sv.size == 0 or sv[0] == 0:
        return None
    keep = int(np.sum(sv > tol * sv[0]))
    if keep == s:
        return const, coeffs
    U = u[:, :keep].astype(_XP)
    return _sandwich(U, const), _sandwich(U, coeffs)


def _normalize(face: _Face, settings: SolverSettings):
    """Drop trivial structure: common kernels, constant blocks, 1x1 blocks, free directions."""
    tol = settings.kernel_tol
    nz = face.nz
    F0s, Fs = [], []
    h, G = list(face.h), [face.G[:, j] for j in range(face.G.shape[1])]
    for F0, F in zip(face.F0, face.F):
        out = _common_kernel_restrict(F0, F, tol)
        if out is None:
            continue
        F0, F = out
        if F0.shape[0] == 1:
            h.append(F0[0, 0])
            G.append(F[:, 0, 0])
        else:
            F0s.append(F0)
            Fs.append(F)
    keep_psd = []
    for F0, F in zip(F0s, Fs):
        if not np.any(np.abs(_f64(F)) > tol * max(1.0, float(np.abs(F0).max()))):
            if np.linalg.eigvalsh(_f64(F0))[0] < -settings.feas_tol:
                return INFEASIBLE
            continue
        keep_psd.append((F0, F))
    keep_h, keep_g = [], []
    for hv, g in zip(h, G):
        if not np.any(np.abs(_f64(g)) > tol * max(1.0, abs(float(hv)))):
            if hv < -settings.feas_tol:
                return INFEASIBLE
            continue
        keep_h.append(hv)
        keep_g.append(g)
    Fs = [F for _, F in keep_psd]
    Gm = np.array(keep_g, dtype=_XP).T if keep_g else np.zeros((nz, 0), dtype=_XP)

    # Directions touching no constraint are free: drop them, unbounded if they carry cost.
    phi = _f64(np.concatenate([F.reshape(nz, -1) for F in Fs] + [Gm], axis=1))
    if nz and phi.size and np.abs(phi).max() > 0:
        u, sv, _ = np.linalg.svd(phi, full_matrices=True)
        active = int(np.sum(sv > tol * sv[0]))
        T, free = u[:, :active], u[:, active:]
    else:
        T, free = np.zeros((nz, 0)), np.eye(nz)
    c = _f64(face.c)
    unbounded = face.unbounded or (free.size > 0 and np.linalg.norm(free.T @ c) > 1e-12 * max(1.0, np.linalg.norm(c)))
    T = T.astype(_XP)
    return _Face(
        AffineRecovery(face.rec.particular, face.rec.basis @ T),
        T.T @ face.c,
        face.offset,
        [F0 for F0, _ in keep_psd],
        [np.tensordot(T.T, F, axes=1) for F in Fs],
        np.array(keep_h, dtype=_XP),
        T.T @ Gm,
        unbounded,
    )


# -- interior-point iterations -------------------------------------------------


def _chol(X):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None


def _max_step_psd(L, dX):
    if L is None:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(Li @ dX @ Li.T)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-x[neg] / dx[neg]))


def _inner(Xs, xl, Zs, zl):
    return sum(float(np.vdot(X, Z)) for X, Z in zip(Xs, Zs)) + float(xl @ zl)


@dataclass
class _IPMResult:
    w: np.ndarray
    X: list
    xl: np.ndarray
    Z: list
    zl: np.ndarray
    pobj: float
    dobj: float
    pinf: float
    dinf: float
    relgap: float
    iterations: int
    converged: bool = False
    diverged: bool = False
    message: str = ""


def _ipm(
    std: _Std, w0: np.ndarray, settings: SolverSettings, stop=None, offset: float = 0.0, start=None, max_iter=None
) -> _IPMResult:
    """Infeasible-start HKM predictor-corrector iterations from ``w0``.

    ``offset`` shifts the reported objectives so the relative gap is measured
    against the true objective rather than the arbitrary origin of ``w``.
    ``start`` optionally supplies initial multipliers ``(Xs, xl)``. Iterations
    stop early once the residuals have clearly degraded from their best value.
    """
    max_iter = settings.max_iter if max_iter is None else max_iter
    m = std.m
    nblk = [C.shape[0] for C in std.C]
    N = sum(nblk) + std.cl.shape[0]
    w = w0.astype(float).copy()
    Zs, zl = std.slack(w)

    # Shift the starting slack into the interior; the shift shows up as a dual residual.
    lam = [np.linalg.eigvalsh(Z)[0] for Z in Zs] + list(zl)
    lo = min(lam) if lam else 1.0
    floor = 1e-3 * max([1.0] + [float(np.abs(C).max()) for C in std.C])
    if lo < floor:
        Zs = [Z + (floor - lo) * np.eye(Z.shape[0]) for Z in Zs]
        zl = zl + (floor - lo)

    normb = np.linalg.norm(std.b)
    normC = math.sqrt(sum(np.linalg.norm(C) ** 2 for C in std.C) + float(std.cl @ std.cl))
    anorm = np.zeros(m)
    for A in std.A:
        anorm += np.sum(A.reshape(m, -1) ** 2, axis=1)
    anorm += np.sum(std.Al**2, axis=1)
    anorm = np.sqrt(anorm)
    rho = max(10.0, math.sqrt(N), float(np.max(math.sqrt(N) * (1 + np.abs(std.b)) / (1 + anorm))) if m else 10.0)
    Xs = [rho * np.eye(k) for k in nblk]
    xl = rho * np.ones(std.cl.shape[0])
    if start is not None:
        Xs, xl = [np.array(X) for X in start[0]], np.array(start[1])

    best = None
    message = ""
    it = 0
    for it in range(settings.max_iter + 1):
        rp = std.b - std.aop(Xs, xl)
        AZ, Azl = std.adj(w)
        Rd = [C - Z - a for C, Z, a in zip(std.C, Zs, AZ)]
        rdl = std.cl - zl - Azl
        pobj = sum(float(np.vdot(C, X)) for C, X in zip(std.C, Xs)) + float(std.cl @ xl)
        dobj = float(std.b @ w)
        pinf = np.linalg.norm(rp) / (1 + normb)
        dinf = math.sqrt(sum(np.linalg.norm(R) ** 2 for R in Rd) + float(rdl @ rdl)) / (1 + normC)
        relgap = abs(pobj - dobj) / (1 + abs(offset - pobj) + abs(offset - dobj))
        mu = _inner(Xs, xl, Zs, zl) / max(N, 1)

        def result(**kw):
            return _IPMResult(w, Xs, xl, Zs, zl, pobj, dobj, pinf, dinf, relgap, it, **kw)

        if _TRACE:
            print(f"  it {it:3d} pobj {pobj:+.9e} dobj {dobj:+.9e} pinf {pinf:.1e} dinf {dinf:.1e} gap {relgap:.1e} mu {mu:.1e}")
        score = max(pinf, dinf, relgap)
        if best is None or score < best[0]:
            best = (score, result())
        if relgap <= settings.gap_tol and pinf <= settings.feas_tol and dinf <= settings.feas_tol:
            return result(converged=True)
        if stop is not None and stop(w, pobj, dobj, pinf, dinf):
            return result(message="stopped")
        if dinf <= settings.feas_tol and abs(dobj) > 1e12 * (1 + normb):
            return result(diverged=True, message="objective diverges")
        if it == max_iter:
            message = "iteration limit"
            break
        if best[0] < 1e-3 and score > 100 * best[0] and it - best[1].iterations >= 3:
            message = "stalled"
            break

        # Schur complement M_ij = <A_i, X A_j Z^-1>.
        Zinv, Lz = [], []
        for Z in Zs:
            L = _chol(Z)
            if L is None:
                message = "slack lost definiteness"
                break
            Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            Zinv.append(Li.T @ Li)
            Lz.append(L)
        if message:
            break
        # M_ij = <Lz^-1 A_i Lx, Lz^-1 A_j Lx> with X = Lx Lx^T, Z = Lz Lz^T: a Gram matrix.
        Lx = [_chol(X) for X in Xs]
        if any(L is None for L in Lx):
            message = "multiplier lost definiteness"
            break
        M = np.zeros((m, m))
        for A, L, Lzk in zip(std.A, Lx, Lz):
            B = sla.solve_triangular(Lzk, np.matmul(A, L).transpose(1, 0, 2).reshape(Lzk.shape[0], -1), lower=True)
            B = B.reshape(Lzk.shape[0], m, -1).transpose(1, 0, 2).reshape(m, -1)
            M += B @ B.T
        if std.cl.size:
            M += (std.Al * (xl / zl)) @ std.Al.T
        M = 0.5 * (M + M.T)
        cho = None
        for reg in (0.0, 1e-14, 1e-12, 1e-10):
            try:
                shift = reg * max(1.0, float(np.abs(np.diag(M)).max()))
                cho = sla.cho_factor(M + shift * np.eye(m), lower=True, check_finite=False)
                break
            except (np.linalg.LinAlgError, sla.LinAlgError):
                continue
        if cho is None:
            message = "Schur complement is singular"
            break

        XRZ = [X @ R @ Zi for X, R, Zi in zip(Xs, Rd, Zinv)]
        xrz = xl * rdl / zl

        def direction(sigma_mu, corr, corrl):
            target = [sigma_mu * Zi - X - Cr for Zi, X, Cr in zip(Zinv, Xs, corr)]
            targetl = sigma_mu / zl - xl - corrl
            rhs = rp + std.aop(XRZ, xrz) - std.aop(target, targetl)
            dw = sla.cho_solve(cho, rhs, check_finite=False)
            dw += sla.cho_solve(cho, rhs - M @ dw, check_finite=False)
            dA, dAl = std.adj(dw)
            dZ = [R - a for R, a in zip(Rd, dA)]
            dzl = rdl - dAl
            dX = []
            for T, X, dZk, Zi in zip(target, Xs, dZ, Zinv):
                D = T - X @ dZk @ Zi
                dX.append(0.5 * (D + D.T))
            dxl = targetl - xl * dzl / zl
            return dw, dX, dxl, dZ, dzl

        def steps(dX, dxl, dZ, dzl):
            ap = min([_max_step_psd(L, d) for L, d in zip(Lx, dX)] + [_max_step_lp(xl, dxl), math.inf])
            ad = min([_max_step_psd(L, d) for L, d in zip(Lz, dZ)] + [_max_step_lp(zl, dzl), math.inf])
            return ap, ad

        zero = [np.zeros_like(X) for X in Xs]
        dw, dX, dxl, dZ, dzl = direction(0.0, zero, np.zeros_like(xl))
        ap, ad = steps(dX, dxl, dZ, dzl)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (
            _inner(
                [X + ap * d for X, d in zip(Xs, dX)],
                xl + ap * dxl,
                [Z + ad * d for Z, d in zip(Zs, dZ)],
                zl + ad * dzl,
            )
            / max(N, 1)
        )
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        corr = [dXk @ dZk @ Zi for dXk, dZk, Zi in zip(dX, dZ, Zinv)]
        corrl = dxl * dzl / zl
        dw, dX, dxl, dZ, dzl = direction(sigma * mu, corr, corrl)
        ap, ad = steps(dX, dxl, dZ, dzl)
        tau = settings.step_fraction
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)

        # Backtrack if rounding leaves an iterate without a Cholesky factor.
        for _ in range(30):
            Xn = [X + ap * d for X, d in zip(Xs, dX)]
            if all(_chol(X) is not None for X in Xn) and np.all(xl + ap * dxl > 0):
                break
            ap *= 0.8
        for _ in range(30):
            Zn = [Z + ad * d for Z, d in zip(Zs, dZ)]
            if all(_chol(Z) is not None for Z in Zn) and np.all(zl + ad * dzl > 0):
                break
            ad *= 0.8
        if ap < 1e-12 and ad < 1e-12:
            message = "step length underflow"
            break
        Xs, xl = Xn, xl + ap * dxl
        w, Zs, zl = w + ad * dw, Zn, zl + ad * dzl

    out = best[1]
    out.message = message
    return out


# -- phase 1 and facial reduction -------------------------------------------------


def _phase1_std(std: _Std, box: float) -> _Std:
    """Variables (w, s): every block shifted by s*I, s >= -1, |w_i| <= box."""
    m = std.m
    A = [np.concatenate([Ak, -np.eye(Ak.shape[1])[None]], axis=0) for Ak in std.A]
    nl = std.cl.shape[0]
    cols = [np.concatenate([std.Al, -np.ones((1, nl))], axis=0)]
    cl = list(std.cl)
    e = np.zeros((m + 1, 1))
    e[m, 0] = -1.0
    cols.append(e)
    cl.append(1.0)
    if m:
        eye = np.eye(m + 1)[:, :m]
        cols += [eye, -eye]
        cl += [box] * (2 * m)
    b = np.zeros(m + 1)
    b[m] = -1.0
    return _Std(b, list(std.C), A, np.array(cl), np.concatenate(cols, axis=1))


@dataclass
class _Phase1:
    s: float
    w: np.ndarray
    X: list
    xl: np.ndarray
    Z: list
    zl: np.ndarray
    # False when the iteration limit cut phase 1 short of any conclusion.
    decided: bool = True


def _phase1(face: _Face, settings: SolverSettings) -> _Phase1:
    """Smallest uniform shift ``s*`` that makes every block of ``face`` PSD."""
    std = face.std()
    if not std.C and std.cl.size == 0:
        return _Phase1(-math.inf, np.zeros(std.m), [], np.zeros(0), [], np.zeros(0))
    lam = [np.linalg.eigvalsh(C)[0] for C in std.C] + list(std.cl)
    s0 = max(0.0, -min(lam)) + 1.0
    p1 = _phase1_std(std, settings.phase1_box)
    w0 = np.concatenate([np.zeros(std.m), [s0]])
    tol = settings.phase1_tol
    p1_settings = SolverSettings(gap_tol=1e-10, feas_tol=1e-10, max_iter=settings.max_iter)

    def stop(w, pobj, dobj, pinf, dinf):
        # -pobj bounds s* from below once the primal residual is small.
        return pinf < 1e-10 and -pobj > 10 * tol

    res = _ipm(p1, w0, p1_settings, stop=stop)
    nl = std.cl.shape[0]
    decided = res.converged or res.message == "stopped" or res.iterations < settings.max_iter
    return _Phase1(float(res.w[-1]), res.w[:-1], res.X, res.xl[:nl], res.Z, res.zl[:nl], decided)


def _facial_step(face: _Face, ph: _Phase1, settings: SolverSettings):
    """Use the phase-1 dual matrix as an exposing vector; None when it exposes nothing."""
    nz = face.nz
    rows, rhs = [], []
    F0s, Fs = [], []
    for F0, F, X, Z in zip(face.F0, face.F, ph.X, ph.Z):
        lam, Q = np.linalg.eigh(X)
        zq = np.einsum("ij,ik,kj->j", Q, Z, Q)
        exposed = (lam > 1e-8 * max(1.0, lam[-1])) & (lam > 100 * np.abs(zq))
        if not np.any(exposed):
            F0s.append(F0)
            Fs.append(F)
            continue
        V, U = Q[:, exposed].astype(_XP), Q[:, ~exposed].astype(_XP)
        # Feasible slacks satisfy F(z) V = 0.
        rows.append(np.einsum("ar,kab->rbk", V, F).reshape(-1, nz))
        rhs.append(-(V.T @ F0).reshape(-1))
        if U.shape[1]:
            F0s.append(_sandwich(U, F0))
            Fs.append(_sandwich(U, F))
    keep = np.ones(face.h.shape[0], dtype=bool)
    for j in range(face.h.shape[0]):
        if ph.xl[j] > 1e-8 and ph.xl[j] > 100 * abs(ph.zl[j]):
            rows.append(face.G[:, j][None])
            rhs.append(np.array([-face.h[j]]))
            keep[j] = False
    if not rows:
        return None
    E, f = np.concatenate(rows, axis=0), np.concatenate(rhs)
    trimmed = _Face(face.rec, face.c, face.offset, F0s, Fs, face.h[keep], face.G[:, keep], face.unbounded)
    # The exposing vector is only accurate to roughly sqrt(mu); use matching tolerances.
    nxt = trimmed.with_equalities(E, f, tol=1e-7, consistency=1e-5)
    if nxt is None:
        return INFEASIBLE
    return _normalize(nxt, settings)


@dataclass
class Presolved:
    """A problem restricted to the minimal face found by phase 1, ready for phase 2.

    ``margin`` is ``-s*`` from the final phase-1 round; ``status`` is
    ``infeasible`` or ``unbounded`` when presolve already decided the outcome.
    """

    problem: ConicProblem
    settings: SolverSettings
    face: _Face | None
    margin: float
    start: np.ndarray | None
    status: str | None = None
    rounds: int = 0

    @property
    def feasible(self) -> bool:
        return self.status not in (INFEASIBLE, FAILURE)

    def with_equalities(self, a_eq, b_eq) -> Presolved:
        """Add equalities (in the original variables) and redo phase 1 on the current face."""
        a_eq = np.atleast_2d(_data(a_eq))
        b_eq = np.atleast_1d(_data(b_eq))
        p = self.problem
        problem = ConicProblem(p.c, p.blocks, np.vstack([p.a_eq, a_eq]), np.concatenate([p.b_eq, b_eq]))
        if self.face is None:
            return presolve(problem, self.settings)
        rec = self.face.rec
        a_x = a_eq.astype(_XP)
        face = self.face.with_equalities(a_x @ rec.basis, b_eq - a_x @ rec.particular, self.settings.equality_tol)
        face = INFEASIBLE if face is None else _normalize(face, self.settings)
        return _reduce_faces(problem, face, self.settings)

    def solve(self) -> ConicSolution:
        p = self.problem
        if self.status == INFEASIBLE:
            return _finish(p, INFEASIBLE, None, phase1_margin=self.margin, message="phase 1 found no feasible point")
        face = self.face
        if self.status == FAILURE:
            return _finish(p, FAILURE, None, phase1_margin=self.margin, message="phase 1 hit the iteration limit")
        if self.status == UNBOUNDED:
            return _finish(p, UNBOUNDED, face.rec(np.zeros(face.nz)), message="free direction with cost")
        if face.nz == 0:
            y = face.rec(np.zeros(0))
            return _finish(p, OPTIMAL, y, dual_objective=float(p.c @ y), gap=0.0, phase1_margin=self.margin)
        out = _whiten(face, self.start)
        face = out[0] if out is not None else face.recentered(self.start)
        res = _ipm(face.std(), np.zeros(face.nz), self.settings, offset=float(face.offset))
        used = res.iterations
        # Re-condition around the best iterate and continue. This also polishes
        # converged points: residuals measured in coordinates whitened far from
        # the optimum can hide a sizeable error when the feasible set is thin.
        for _ in range(self.settings.restarts):
            if res.diverged or used >= self.settings.max_iter:
                break
            out = _whiten(face, res.w)
            if out is None:
                break
            nface, cond = out
            nres = _ipm(
                nface.std(),
                np.zeros(nface.nz),
                self.settings,
                offset=float(nface.offset),
                start=None if res.converged else cond.multipliers(res.X, res.xl),
                max_iter=self.settings.max_iter - used,
            )
            used += nres.iterations
            if _TRACE:
                print("restart", float(face.offset - _XP(res.dobj)), float(nface.offset - _XP(nres.dobj)), nres.message)
            if res.converged and not nres.converged:
                break
            moved = abs(float((face.offset - _XP(res.dobj)) - (nface.offset - _XP(nres.dobj))))
            face, res = nface, nres
            if res.converged and moved <= self.settings.gap_tol * (1.0 + abs(float(face.offset))):
                break
        y = face.rec(res.w)
        # The reduced objective is -b @ w; the dual bound is -<C, X>.
        dual = float(face.offset - _XP(res.pobj))
        primal = float(face.offset - _XP(res.dobj))
        message = res.message
        if res.converged:
            status = OPTIMAL
        elif res.diverged:
            status = UNBOUNDED
        else:
            status = FAILURE
        return _finish(
            p,
            status,
            y,
            dual_objective=dual,
            gap=primal - dual,
            iterations=used,
            phase1_margin=self.margin,
            message=message,
        )


@dataclass
class _Conditioning:
    """Maps multipliers of a face onto its whitened counterpart."""

    factors: list[np.ndarray]
    scale: np.ndarray

    def multipliers(self, Xs, xl):
        return [L.T @ X @ L for L, X in zip(self.factors, Xs)], xl / self.scale


def _whitening_factor(F0: np.ndarray):
    """Inverse Cholesky factor ``Li`` with ``Li @ F0 @ Li.T ~ I``, refined once in extended precision."""
    Li = np.eye(F0.shape[0], dtype=_XP)
    for _ in range(2):
        W = _f64(Li @ F0 @ Li.T)
        lam = np.linalg.eigvalsh(W)
        shift = max(0.0, -lam[0]) + 1e-14 * max(1.0, abs(lam[-1]))
        L = _chol(W + shift * np.eye(W.shape[0]))
        if L is None:
            return None
        Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True).astype(_XP) @ Li
    return Li


def _whiten(face: _Face, z0: np.ndarray, tol: float = 1e-14) -> tuple[_Face, _Conditioning] | None:
    """Exact change of coordinates that makes ``face`` well conditioned around ``z0``.

    Blocks are congruence-scaled so they equal (nearly) the identity at ``z0``
    and the variables are re-parametrised so the coefficient operator has
    orthonormal rows. The feasible set is unchanged.
    """
    f = face.recentered(z0)
    F0s, Fs, Ls = [], [], []
    for F0, F in zip(f.F0, f.F):
        Li = _whitening_factor(F0)
        if Li is None:
            return None
        F0s.append(Li @ F0 @ Li.T)
        Fs.append(np.matmul(np.matmul(Li, F), Li.T))
        Ls.append(np.linalg.inv(_f64(Li)))
    hf = _f64(f.h)
    scale = 1.0 / (np.maximum(hf, 0.0) + 1e-14 * max(1.0, float(np.abs(hf).max(initial=0.0))))
    h, G = f.h * scale.astype(_XP), f.G * scale.astype(_XP)
    K = np.concatenate([F.reshape(f.nz, -1) for F in Fs] + [G], axis=1)
    S = np.eye(f.nz, dtype=_XP)
    for _ in range(2):
        u, sv, _ = np.linalg.svd(_f64(S.T @ K), full_matrices=False)
        if sv.size == 0 or sv[0] == 0:
            return None
        keep = sv > tol * sv[0]
        S = S @ (u[:, keep] / sv[keep]).astype(_XP)
    out = _Face(
        AffineRecovery(f.rec.particular, f.rec.basis @ S),
        S.T @ f.c,
        f.offset,
        F0s,
        [np.tensordot(S.T, F, axes=1) for F in Fs],
        h,
        S.T @ G,
        f.unbounded,
    )
    return out, _Conditioning(Ls, scale)


def _reduce_faces(problem: ConicProblem, face, settings: SolverSettings) -> Presolved:
    if isinstance(face, str):
        return Presolved(problem, settings, None, -math.inf, None, face)
    tol = settings.phase1_tol
    ph = _phase1(face, settings)
    margin = -ph.s
    rounds = 0
    if ph.s > tol and not ph.decided:
        return Presolved(problem, settings, face, margin, None, FAILURE, rounds)
    while rounds < settings.facial_rounds:
        if ph.s > tol:
            return Presolved(problem, settings, face, margin, None, INFEASIBLE, rounds)
        if -ph.s >= settings.comfortable_margin or (not face.F0 and face.h.size == 0):
            break
        rounds += 1
        out = _whiten(face, ph.w)
        if out is None:
            break
        wf = out[0]
        wph = _phase1(wf, settings)
        if wph.s > tol:
            return Presolved(problem, settings, wf, margin, None, INFEASIBLE, rounds)
        if wph.s < -tol:
            face, ph = wf, wph
            continue
        # Still no interior in well-conditioned coordinates: a genuine face.
        nxt = _facial_step(wf, wph, settings)
        if nxt is None:
            face, ph = wf, wph
            break
        if isinstance(nxt, str):
            return Presolved(problem, settings, wf, margin, None, nxt, rounds)
        face = nxt
        ph = _phase1(face, settings)
    if ph.s > tol:
        return Presolved(problem, settings, face, margin, None, INFEASIBLE, rounds)
    status = UNBOUNDED if face.unbounded else None
    return Presolved(problem, settings, face, margin, ph.w, status, rounds)


def presolve(p: ConicProblem, settings: SolverSettings | None = None) -> Presolved:
    """Eliminate equalities, restrict to the minimal face and run phase 1."""
    settings = settings or SolverSettings()
    out = _parametrize(p.a_eq, p.b_eq, p.nvar, settings.equality_tol)
    if out is None:
        return Presolved(p, settings, None, -math.inf, None, INFEASIBLE)
    rec = AffineRecovery(*out)
    yp, N = rec.particular, rec.basis
    blocks = [(b.constant.astype(_XP), b.coeffs.astype(_XP)) for b in p.blocks]
    face = _Face(
        rec,
        N.T @ p.c.astype(_XP),
        p.c.astype(_XP) @ yp,
        [C + np.tensordot(yp, A, axes=1) for C, A in blocks],
        [np.tensordot(N.T, A, axes=1) for _, A in blocks],
        np.zeros(0),
        np.zeros((N.shape[1], 0)),
    )
    return _reduce_faces(p, _normalize(face, settings), settings)


def certify_feasibility(p: ConicProblem, settings: SolverSettings | None = None) -> tuple[bool, float]:
    """Phase-1 feasibility test: ``margin = -s*`` with ``s*`` the minimal uniform PSD shift."""
    pre = presolve(p, settings)
    return pre.feasible, pre.margin


def _finish(p: ConicProblem, status: str, y, **kw) -> ConicSolution:
    sol = ConicSolution(status=status, y=y, **kw)
    if y is not None:
        sol.objective = float(p.c @ y)
        sol.block_min_eig = [float(np.linalg.eigvalsh(b.evaluate(y))[0]) for b in p.blocks]
        sol.equality_residual = float(np.linalg.norm(_f64(p.a_eq @ y - p.b_eq))) if p.a_eq.size else 0.0
    return sol


def solve(p: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Minimise ``p.c @ y`` over the LMI-feasible set of ``p``."""
    return presolve(p, settings).solve()


# -- SDPA sparse format ----------------------------------------------------------


def write_sdpa(p: ConicProblem, fh, comment: str = "") -> None:
    """Write ``p`` in SDPA sparse format.

    SDPA reads ``min c @ x  s.t.  sum_i x_i F_i - F_0 >= 0``; equalities are
    emitted as pairs of rows in a trailing diagonal block.
    """
    blocks = list(p.blocks)
    struct = [b.size for b in blocks]
    k = p.a_eq.shape[0]
    if k:
        struct.append(-2 * k)
    if comment:
        for line in comment.splitlines():
            fh.write(f'"{line}\n')
    fh.write(f"{p.nvar}\n{len(struct)}\n")
    fh.write(" ".join(str(s) for s in struct) + "\n")
    fh.write(" ".join(repr(float(v)) for v in p.c) + "\n")

    def entries(mat_no, blk_no, M):
        iu, ju = np.triu_indices(M.shape[0])
        for i, j in zip(iu, ju):
            v = M[i, j]
            if v != 0:
                fh.write(f"{mat_no} {blk_no} {i + 1} {j + 1} {float(v)!r}\n")

    for bk, blk in enumerate(blocks, start=1):
        entries(0, bk, -blk.constant)
        for i in range(p.nvar):
            entries(i + 1, bk, blk.coeffs[i])
    if k:
        bk = len(blocks) + 1
        for r in range(k):
            # a @ x - b >= 0 and -a @ x + b >= 0
            for sign, pos in ((1.0, 2 * r + 1), (-1.0, 2 * r + 2)):
                if p.b_eq[r] != 0:
                    fh.write(f"0 {bk} {pos} {pos} {float(sign * p.b_eq[r])!r}\n")
                for i in np.nonzero(p.a_eq[r])[0]:
                    fh.write(f"{i + 1} {bk} {pos} {pos} {float(sign * p.a_eq[r, i])!r}\n")


def read_sdpa(fh) -> ConicProblem:
    """Read an SDPA sparse file into a :class:`ConicProblem`.

    Diagonal blocks become 1x1 blocks, except that a diagonal block made of
    mirrored pairs (as written for equalities) becomes equality rows again.
    """
    lines = [ln.split('"')[0].split("*")[0].strip() for ln in fh if not ln.startswith(('"', "*"))]
    tokens = iter(ln for ln in lines if ln)
    m = int(next(tokens).split()[0])
    nb = int(next(tokens).split()[0])
    struct = [int(float(t)) for t in next(tokens).replace(",", " ").replace("{", " ").replace("}", " ").split()][:nb]
    c = np.array([float(t) for t in next(tokens).replace(",", " ").replace("{", " ").replace("}", " ").split()][:m])
    mats = [[np.zeros((abs(s), abs(s))) for s in struct] for _ in range(m + 1)]
    for ln in tokens:
        a, blk, i, j, v = ln.split()[:5]
        M = mats[int(a)][int(blk) - 1]
        i, j, v = int(i) - 1, int(j) - 1, float(v)
        M[i, j] = v
        M[j, i] = v
    blocks, eq_rows, eq_rhs = [], [], []
    for k, s in enumerate(struct):
        if s > 0:
            blocks.append(LMIBlock(-mats[0][k], np.stack([mats[i + 1][k] for i in range(m)]), f"block{k + 1}"))
            continue
        diag = np.array([np.diag(mats[i][k]) for i in range(m + 1)])  # (m + 1, |s|)
        if s % 2 == 0 and np.array_equal(diag[:, 0::2], -diag[:, 1::2]):
            # Pairs a @ x - b >= 0, -a @ x + b >= 0 are the equality encoding used by write_sdpa.
            eq_rows.append(diag[1:, 0::2].T)
            eq_rhs.append(diag[0, 0::2])
            continue
        for d in range(-s):
            blocks.append(LMIBlock([[-diag[0, d]]], diag[1:, d].reshape(m, 1, 1), f"block{k + 1}.{d + 1}"))
    if eq_rows:
        return ConicProblem(c, blocks, np.vstack(eq_rows), np.concatenate(eq_rhs))
    return ConicProblem(c, blocks)
