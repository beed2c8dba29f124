"""Stability of propagators under perturbations of the control coefficients.

The family is ``K(a, b) = K0 + a K1 + a^2 K2 + b W``.  Two drives are compared
through

* ``LHS = ||M (U_n - U_0)||_{+,-}`` for the propagators over ``[s, t]``;
* ``RHS = sqrt( sum_i ||K_i||_{+,-} * ||f_{n,i} - f_{0,i}||_{L1(s,t)} )`` with
  coefficient functions ``f = (a, a^2, b)``.

The ratio ``LHS / RHS`` is the constant needed for the square-root bound to
hold; it is fitted over the family and reported next to the a-priori value
``2 c^4 exp(c^2 M |t - s| / 4)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import ControlFunction, InductionDrive, as_drive
from .propagator import _Stepper, propagator_matrix
from .scales import ScaleSpace, equivalence_constant, opnorm_plus_minus


def hamiltonian_distance(F, drive_j, drive_k, t: float, S: ScaleSpace) -> float:
    """``||K(a_j(t), b_j(t)) - K(a_k(t), b_k(t))||_{+,-}``."""
    aj, bj = as_drive(drive_j)(t)
    ak, bk = as_drive(drive_k)(t)
    D = (aj - ak) * F.K1 + (aj * aj - ak * ak) * F.K2 + (bj - bk) * F.W
    return opnorm_plus_minus(S, D)


def sawtooth_partition(v: ControlFunction, n: int) -> np.ndarray:
    """Coarsest common refinement of the uniform ``T/n`` grid and the breakpoints of ``v``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    T = v.T
    grid = np.unique(np.concatenate([np.linspace(0.0, T, n + 1), v.breakpoints]))
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * T])
    grid = grid[keep]
    grid[-1] = T
    return grid


def lift_to_sawtooth(v: ControlFunction, u0: float, n: int) -> InductionDrive:
    """Piecewise-linear lift with derivative ``v`` that restarts from ``u0`` on every piece.

    The returned drive has field ``u_n`` and rate ``v`` (equal to ``u_n'``
    almost everywhere).
    """
    if v.kind != "piecewise-constant":
        raise ValueError("the lift expects a piecewise-constant rate")
    grid = sawtooth_partition(v, n)
    mids = 0.5 * (grid[1:] + grid[:-1])
    slopes = np.asarray(v.value(mids), dtype=float)
    bound = max(float(np.max(np.abs(slopes))), 1e-300)
    u = ControlFunction("piecewise-linear", grid, np.full(len(mids), float(u0)), slopes, bound=bound)
    return InductionDrive(u, v)


def auxiliary_drive(v: ControlFunction, u0: float) -> InductionDrive:
    """Constant field ``u0`` with independent rate ``v``."""
    return InductionDrive(ControlFunction("piecewise-constant", [0.0, v.T], [float(u0)]), v)


def _merged_breaks(drives, s, t):
    pts = [np.array([s, t])]
    for d in drives:
        bp = as_drive(d).breakpoints()
        pts.append(bp[(bp > s) & (bp < t)])
    return np.unique(np.concatenate(pts))


def _simpson(fun, a, b, panels=2):
    x = np.linspace(a, b, 2 * panels + 1)
    y = fun(x)
    h = (b - a) / (2 * panels)
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def coefficient_l1(drive_j, drive_k, s: float, t: float) -> np.ndarray:
    """``||f_{j,i} - f_{k,i}||_{L1(s,t)}`` for ``f = (a, a^2, b)``.

    On every piece of the merged breakpoint grid each difference is replaced
    by its quadratic interpolant through three interior points, the piece is
    split at the interpolant's real roots and composite Simpson is applied to
    the absolute value.  For piecewise-linear fields and piecewise-constant
    rates the differences are quadratic on each piece, so the result is exact
    up to rounding.  Interior sampling keeps evaluation away from the jumps.
    """
    dj, dk = as_drive(drive_j), as_drive(drive_k)
    breaks = _merged_breaks([dj, dk], s, t)
    out = np.zeros(3)
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        xs = lo + (hi - lo) * np.array([0.25, 0.5, 0.75])
        vals = []
        for x in xs:
            aj, bj = dj(x)
            ak, bk = dk(x)
            vals.append((aj - ak, aj * aj - ak * ak, bj - bk))
        vals = np.array(vals)
        for i in range(3):
            p = np.polynomial.Polynomial.fit(xs, vals[:, i], 2, domain=[lo, hi])
            cuts = [lo, hi] + [r.real for r in p.roots() if abs(r.imag) < 1e-12 and lo < r.real < hi]
            cuts = np.sort(cuts)
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                out[i] += _simpson(lambda x: np.abs(p(x)), c0, c1)
    return out


@dataclass
class StabilityReport:
    n: int
    lhs: float
    strong: float
    rhs: float
    l1: np.ndarray
    ratio: float
    fitted_L: float = math.nan
    proof_L: float = math.nan
    c: float = math.nan
    M_bound: float = math.nan


@dataclass
class StabilityStudy:
    reports: list
    fitted_L: float
    proof_L: float
    c: float
    M_bound: float
    block_norms: np.ndarray
    slope: float = math.nan
    extras: dict = field(default_factory=dict)


def loglog_slope(ns, values) -> float:
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def _sample_times(drive: InductionDrive, s, t, per_piece=3):
    breaks = _merged_breaks([drive], s, t)
    pts = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        pts.append(np.linspace(lo, hi, per_piece + 2)[1:-1])
    return np.concatenate(pts)


def stability_experiment(F, base, family: dict, s: float, t: float, dt: float, S: ScaleSpace,
                         probes=None, sample_per_piece: int = 3) -> StabilityStudy:
    """Compare each member of ``family`` (``{n: drive}``) against ``base``.

    ``S`` fixes the reference scale; ``probes`` (columns) are the states used
    for the strong-distance diagnostic.
    """
    base = as_drive(base)
    stepper = _Stepper(F)
    U0 = propagator_matrix(F, base, s, t, dt, stepper=stepper)
    blocks = np.array([opnorm_plus_minus(S, X) for X in (F.K1, F.K2, F.W)])
    A_ref = S.A
    shift = (S.m + 1.0) * S.M
    reports = []
    members_A = []
    M_bound = 0.0
    for n, drive in sorted(family.items()):
        drive = as_drive(drive)
        Un = propagator_matrix(F, drive, s, t, dt, stepper=stepper)
        D = Un - U0
        lhs = opnorm_plus_minus(S, S.M @ D)
        strong = 0.0
        if probes is not None:
            diff = D @ probes
            strong = float(np.max(np.sqrt(np.einsum("ij,ij->j", diff.conj(), S.M @ diff).real)))
        l1 = coefficient_l1(drive, base, s, t)
        rhs = math.sqrt(float(np.dot(blocks, l1)))
        reports.append(StabilityReport(n, lhs, strong, rhs, l1, lhs / rhs if rhs > 0 else math.nan))
        if rhs == 0 and lhs > 1e-9:
            raise ArithmeticError(f"member {n}: propagators differ while the coefficients agree")
        for x in _sample_times(drive, s, t, sample_per_piece)[:: max(1, n // 8)]:
            a, b = drive(x)
            da, db = drive.rates(x)
            members_A.append(F.K(a, b).toarray() + shift)
            M_bound = max(M_bound, opnorm_plus_minus(S, F.dK(a, da, db)))
    c = equivalence_constant(A_ref, members_A) if members_A else 1.0
    ratios = [r.ratio for r in reports if np.isfinite(r.ratio)]
    L = max(ratios) if ratios else math.nan
    proof_L = 2.0 * c**4 * math.exp(c * c * M_bound * abs(t - s) / 4.0)
    for r in reports:
        r.fitted_L, r.proof_L, r.c, r.M_bound = L, proof_L, c, M_bound
    ns = [r.n for r in reports if r.lhs > 0]
    slope = loglog_slope(ns, [r.lhs for r in reports if r.lhs > 0]) if len(ns) >= 2 else math.nan
    return StabilityStudy(reports, L, proof_L, c, M_bound, blocks, slope)
