"""Crank-Nicolson time stepping for ``i M psi' = K(a(t), b(t)) psi``.

Each step solves

    (M + i dt/2 K_mid) psi_{k+1} = (M - i dt/2 K_mid) psi_k,

with ``K_mid`` the family evaluated at the step midpoint.  The scheme is
exactly unitary in the ``M`` inner product whenever ``K_mid`` is Hermitian.

The time grid is anchored at ``t = 0``: it is the union of the multiples of
``dt`` and the control breakpoints inside ``[s, t]``.  Propagators built on
sub-intervals therefore compose exactly when the split point lies on the
grid, and discontinuities of the control are never stepped over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .circuit import InductionDrive, as_drive
from .scales import ScaleSpace, generalized_eig

MAX_PROPAGATOR_DOFS = 4000
_BANDED_LIMIT = 64


class PropagatorError(RuntimeError):
    pass


def time_grid(drive: InductionDrive, s: float, t: float, dt: float) -> np.ndarray:
    """Grid points in ``[s, t]``: multiples of ``dt`` plus control breakpoints."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t < s:
        raise ValueError("need s <= t")
    if t == s:
        return np.array([s])
    k0 = math.ceil(s / dt - 1e-9)
    k1 = math.floor(t / dt + 1e-9)
    pts = [np.array([s, t]), dt * np.arange(k0, k1 + 1)]
    bp = drive.breakpoints()
    pts.append(bp[(bp > s) & (bp < t)])
    g = np.unique(np.concatenate(pts))
    g = g[(g >= s) & (g <= t)]
    # drop points that merge with a neighbour (rounding of k * dt near a breakpoint)
    tol = 1e-9 * dt
    keep = np.concatenate([[True], np.diff(g) > tol])
    g = g[keep]
    g[-1] = t
    return g


def _segment_is_static(drive: InductionDrive, t0: float, t1: float) -> bool:
    """True when ``(a, b)`` is constant on ``(t0, t1)``."""
    f = drive.field
    if f.kind == "smooth-sampled":
        return False
    tm = 0.5 * (t0 + t1)
    if f.kind == "piecewise-linear" and f.derivative(tm) != 0.0:
        return False
    if drive.rate is None:
        return True
    r = drive.rate
    return r.kind == "piecewise-constant" or (r.kind == "piecewise-linear" and r.derivative(tm) == 0.0)


class _Stepper:
    """Factorises ``M + i dt/2 K`` and applies one Crank-Nicolson step.

    A reverse Cuthill-McKee ordering is computed once from the joint sparsity
    pattern; narrow bands go through LAPACK's banded solver, anything wider
    falls back to sparse LU.
    """

    def __init__(self, F):
        self.F = F
        pattern = abs(F.M) + abs(F.K0) + abs(F.K1) + abs(F.K2) + abs(F.W)
        pattern = sp.csr_matrix(pattern)
        perm = reverse_cuthill_mckee(pattern, symmetric_mode=True)
        self.perm = perm
        self.inv = np.empty_like(perm)
        self.inv[perm] = np.arange(len(perm))
        P = pattern[perm][:, perm].tocoo()
        bw = int(np.max(np.abs(P.row - P.col))) if P.nnz else 0
        self.bw = bw
        self.banded = bw <= _BANDED_LIMIT
        mats = [F.M, F.K0, F.K1, F.K2, F.W]
        if self.banded:
            self.bands = [self._band(m) for m in mats]

    def _band(self, m) -> np.ndarray:
        n = m.shape[0]
        c = sp.coo_matrix(m)
        r = self.inv[c.row]
        col = self.inv[c.col]
        ab = np.zeros((2 * self.bw + 1, n), dtype=complex)
        np.add.at(ab, (self.bw + r - col, col), c.data)
        return ab

    def factor(self, a: float, b: float, dt: float):
        F = self.F
        h = 0.5j * dt
        K = F.K(a, b)
        rhs_op = (F.M - h * K).tocsr()
        if self.banded:
            Bm, B0, B1, B2, Bw = self.bands
            ab = Bm + h * (B0 + a * B1 + (a * a) * B2 + b * Bw)
            return ("band", ab, rhs_op)
        lhs = (F.M + h * K).tocsc()
        return ("lu", splu(lhs), rhs_op)

    def apply(self, fac, psi: np.ndarray) -> np.ndarray:
        kind, solver, rhs_op = fac
        rhs = rhs_op @ psi
        if kind == "band":
            out = sla.solve_banded((self.bw, self.bw), solver, rhs[self.perm],
                                   overwrite_b=True, check_finite=False)
            return out[self.inv]
        return solver.solve(rhs)


@dataclass
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray | None
    final: np.ndarray
    norms: np.ndarray
    propagator: np.ndarray | None = None
    steps: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def norm_drift(self) -> float:
        """Largest relative deviation of the mass norm from its initial value."""
        n0 = self.norms[0] if np.ndim(self.norms[0]) == 0 else self.norms[0]
        return float(np.max(np.abs(self.norms - n0) / np.maximum(np.abs(n0), 1e-300)))


def _mass_norm(M, psi):
    if psi.ndim == 1:
        return math.sqrt(max(np.vdot(psi, M @ psi).real, 0.0))
    return np.sqrt(np.maximum(np.einsum("ij,ij->j", psi.conj(), M @ psi).real, 0.0))


def default_dt(lam_max: float) -> float:
    return min(1e-3, 0.1 / lam_max) if lam_max > 0 else 1e-3


def evolve(F, control, psi0, s: float, t: float, dt: float, store: bool = True,
           observe=None, stepper: _Stepper | None = None) -> EvolutionResult:
    """Crank-Nicolson evolution from ``s`` to ``t``.

    ``control`` is a ControlFunction (then ``b = a'``) or an InductionDrive.
    ``psi0`` may be a vector or a matrix of column states.  With ``store``
    the state is kept at every grid point.  ``observe(t, psi)``, if given, is
    called at every grid point.
    """
    drive = as_drive(control)
    if dt <= 0:
        raise ValueError("dt must be positive")
    psi = np.array(psi0, dtype=complex)
    if psi.shape[0] != F.n:
        raise ValueError(f"state has {psi.shape[0]} rows, family has {F.n} unknowns")
    grid = time_grid(drive, s, t, dt)
    st = stepper or _Stepper(F)
    states = [psi.copy()] if store else None
    norms = [_mass_norm(F.M, psi)]
    if observe is not None:
        observe(grid[0], psi)
    fac = None
    fac_key = None
    for k in range(len(grid) - 1):
        t0, t1 = grid[k], grid[k + 1]
        h = t1 - t0
        a, b = drive(0.5 * (t0 + t1))
        key = (a, b, h)
        if fac is None or key != fac_key or not _segment_is_static(drive, t0, t1):
            fac = st.factor(a, b, h)
            fac_key = key
        psi = st.apply(fac, psi)
        if not np.all(np.isfinite(psi)):
            raise PropagatorError(f"non-finite state at t = {t1}")
        norms.append(_mass_norm(F.M, psi))
        if store:
            states.append(psi.copy())
        if observe is not None:
            observe(t1, psi)
    return EvolutionResult(grid, np.array(states) if store else None, psi, np.array(norms),
                           steps=len(grid) - 1)


def propagator_matrix(F, control, s: float, t: float, dt: float, stepper=None) -> np.ndarray:
    """Dense ``U(t, s)`` obtained by evolving the identity columns."""
    if F.n > MAX_PROPAGATOR_DOFS:
        raise MemoryError(f"{F.n} unknowns exceed the dense propagator cap of {MAX_PROPAGATOR_DOFS}")
    eye = np.eye(F.n, dtype=complex)
    if t == s:
        return eye
    return evolve(F, control, eye, s, t, dt, store=False, stepper=stepper).final


@dataclass
class SimonReport:
    times: np.ndarray
    C: np.ndarray
    integral: np.ndarray
    plus_lhs: np.ndarray
    plus_rhs: np.ndarray
    minus_lhs: np.ndarray
    minus_rhs: np.ndarray
    m: float

    @property
    def plus_margin(self) -> float:
        """Smallest ``rhs - lhs`` after the start (both sides coincide at ``s``)."""
        return float(np.min((self.plus_rhs - self.plus_lhs)[1:])) if len(self.times) > 1 else 0.0

    @property
    def minus_margin(self) -> float:
        return float(np.min((self.minus_rhs - self.minus_lhs)[1:])) if len(self.times) > 1 else 0.0

    @property
    def holds(self) -> bool:
        tol = 1e-10
        return (self.plus_margin >= -tol * float(np.max(self.plus_rhs))
                and self.minus_margin >= -tol * float(np.max(self.minus_rhs)))


def simon_bound_check(F, control, psi0, s: float, t: float, dt: float = 1e-3,
                      samples: int = 41, m: float | None = None) -> SimonReport:
    """Evaluate both sides of the exponential norm-growth bounds along a trajectory.

    ``C(tau) = ||A^{-1/2} (dA/dt) A^{-1/2}||`` with ``A(tau) = K(tau) + (m+1) M``
    and ``dA/dt = a' K1 + 2 a a' K2 + b' W``.  The ``+`` norm bound uses the
    exponent ``3/2 int C``, the ``-`` norm bound ``1/2 int C``.
    """
    drive = as_drive(control)
    f = drive.field
    if f.kind == "piecewise-constant" and f.pieces > 1:
        raise ValueError("control must be differentiable on [s, t]")
    if f.kind == "piecewise-linear" and drive.rate is None and f.pieces > 1:
        jumps = np.diff(f.slopes)
        if np.any(jumps != 0):
            raise ValueError("control must be differentiable on [s, t]")
    sample_t = np.linspace(s, t, samples)
    if m is None:
        ab = [drive(x) for x in sample_t]
        lo = math.inf
        for a, b in ab:
            lo = min(lo, generalized_eig(F.K(a, b), F.M, subset=(0, 0))[0][0])
        m = max(0.0, -lo) + 1e-6
    states = {}
    cur = np.array(psi0, dtype=complex)
    st = _Stepper(F)
    states[0] = cur
    for k in range(samples - 1):
        cur = evolve(F, drive, cur, sample_t[k], sample_t[k + 1], dt, store=False, stepper=st).final
        states[k + 1] = cur
    C = np.empty(samples)
    plus = np.empty(samples)
    minus = np.empty(samples)
    for k, x in enumerate(sample_t):
        a, b = drive(x)
        da, db = drive.rates(x)
        S = ScaleSpace.build(F.K(a, b), F.M, m)
        C[k] = S.opnorm(F.dK(a, da, db))
        plus[k] = S.norm(states[k], +1)
        minus[k] = S.norm(states[k], -1)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (C[1:] + C[:-1]) * np.diff(sample_t))])
    return SimonReport(sample_t, C, integral, plus, plus[0] * np.exp(1.5 * integral),
                       minus, minus[0] * np.exp(0.5 * integral), m)
