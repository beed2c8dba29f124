"""Generalized eigenproblems and the scale of norms attached to a shifted form.

For a reference matrix ``K`` and mass ``M`` the shifted operator
``A = K + (m + 1) M`` is diagonalised as ``A V = M V diag(a)`` with
``V^* M V = I``.  In those coordinates

    ||x||_{+}  = || a^{+1/2} V^* M x ||,
    ||x||_{-}  = || a^{-1/2} V^* M x ||,

and the norm of a form matrix ``X`` viewed as a map from the ``+`` space to
the ``-`` space is ``sigma_max(a^{-1/2} V^* X V a^{-1/2})``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


def _dense(m) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def generalized_eig(K, M, subset: tuple[int, int] | None = None):
    """Ascending eigenvalues and ``M``-orthonormal eigenvectors of ``K x = lam M x``.

    ``subset=(lo, hi)`` restricts to eigenvalue indices ``lo..hi`` inclusive.
    """
    Kd, Md = _dense(K), _dense(M)
    Kd = 0.5 * (Kd + Kd.conj().T)
    Md = 0.5 * (Md + Md.conj().T)
    try:
        return sla.eigh(Kd, Md, subset_by_index=subset, driver="gvd" if subset is None else "gvx")
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"mass matrix is not positive definite ({exc})") from None


DENSE_LIMIT = 1200


def lowest_eigs(K, M, k: int, lower: float | None = None):
    """The ``k`` lowest generalized eigenpairs.

    Small problems are solved densely.  Larger sparse ones use shift-invert
    Lanczos about ``lower - 1``, which requires ``lower`` to be a guaranteed
    lower bound of the spectrum (see ``fem.spectral_lower_bound``); without
    it the dense path is used regardless of size.
    """
    n = K.shape[0]
    k = min(k, n)
    if n <= DENSE_LIMIT or lower is None or k >= n - 1 or not sp.issparse(K):
        return generalized_eig(K, M, subset=(0, k - 1))
    sigma = float(lower) - 1.0
    # fixed start vector: ARPACK otherwise draws a random one and results vary in the last bits
    v0 = np.random.default_rng(0).standard_normal(n)
    lam, V = eigsh(sp.csc_matrix(K), k=k, M=sp.csc_matrix(M), sigma=sigma, which="LM", v0=v0)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    # re-normalise in the mass inner product
    Md = M @ V
    V = V / np.sqrt(np.einsum("ij,ij->j", V.conj(), Md).real)
    return lam, V


def semibound(F, u_values: Iterable[float] = (0.0,), v_values: Iterable[float] = (0.0,),
              margin: float = 1e-6) -> float:
    """Uniform lower-bound shift over a sampled control box.

    Returns ``max(0, -min lambda) + margin`` where the minimum runs over the
    lowest generalized eigenvalue of ``(K(u, v), M)`` on the grid.
    """
    lo = math.inf
    for u, v in itertools.product(list(u_values), list(v_values)):
        lam = generalized_eig(F.K(u, v), F.M, subset=(0, 0))[0][0]
        lo = min(lo, float(lam))
    if lo < -1e6:
        raise ArithmeticError(f"form appears unbounded below (lowest eigenvalue {lo:.3e})")
    return max(0.0, -lo) + margin


@dataclass
class ScaleSpace:
    """Spectral factorisation of ``A = K_ref + (m + 1) M``."""

    M: np.ndarray
    K_ref: np.ndarray
    m: float
    a: np.ndarray
    V: np.ndarray

    @classmethod
    def build(cls, K_ref, M, m: float) -> "ScaleSpace":
        Md = _dense(M)
        Kd = _dense(K_ref)
        A = Kd + (m + 1.0) * Md
        a, V = generalized_eig(A, Md)
        if a[0] < 1.0 - 1e-10 * max(1.0, abs(a[-1])):
            raise ValueError(f"shift too small: lowest scale eigenvalue {a[0]:.3e} < 1")
        return cls(Md, Kd, float(m), a, V)

    @property
    def A(self) -> np.ndarray:
        return self.K_ref + (self.m + 1.0) * self.M

    def coords(self, x) -> np.ndarray:
        """Mass-orthonormal spectral coordinates ``V^* M x``."""
        return self.V.conj().T @ (self.M @ x)

    def norm(self, x, sign: int) -> float:
        return norm_pm(self, x, sign)

    def whiten(self, X) -> np.ndarray:
        """``a^{-1/2} V^* X V a^{-1/2}`` for a form matrix ``X``."""
        s = 1.0 / np.sqrt(self.a)
        Y = self.V.conj().T @ (_dense(X) @ self.V)
        return s[:, None] * Y * s[None, :]

    def opnorm(self, X) -> float:
        return opnorm_plus_minus(self, X)


def norm_pm(S: ScaleSpace, x, sign: int) -> float:
    """``||x||_+`` for ``sign = +1``, ``||x||_-`` for ``sign = -1``, mass norm for 0."""
    if sign not in (-1, 0, 1):
        raise ValueError("sign must be -1, 0 or +1")
    c = S.coords(np.asarray(x))
    w = S.a ** (0.5 * sign)
    if c.ndim == 1:
        return float(np.linalg.norm(w * c))
    return np.linalg.norm(w[:, None] * c, axis=0)


def opnorm_plus_minus(S: ScaleSpace, X) -> float:
    """Norm of the form ``X`` as a map from the ``+`` space into the ``-`` space."""
    Y = S.whiten(X)
    if not np.any(Y):
        return 0.0
    return float(np.linalg.norm(Y, 2))


def opnorm_minus_plus(S: ScaleSpace, B) -> float:
    """Norm of an operator matrix ``B`` (acting on coordinates) from ``-`` into ``+``.

    For ``B = A_j^{-1} - A_k^{-1}`` this equals
    ``sigma_max(a^{1/2} V^* M B M V a^{1/2})``.
    """
    s = np.sqrt(S.a)
    Y = S.V.conj().T @ (S.M @ _dense(B) @ S.M) @ S.V
    return float(np.linalg.norm(s[:, None] * Y * s[None, :], 2))


def equivalence_constant(A_ref, family: Sequence) -> float:
    """Smallest ``c`` with ``c^-1 ||.||_{A_n} <= ||.||_{A_ref} <= c ||.||_{A_n}`` for every member."""
    Ar = _dense(A_ref)
    Ar = 0.5 * (Ar + Ar.conj().T)
    c = 1.0
    for An in family:
        An = _dense(An)
        mu = sla.eigh(0.5 * (An + An.conj().T), Ar, eigvals_only=True)
        if mu[0] <= 0:
            raise ArithmeticError("family member is not positive definite")
        c = max(c, math.sqrt(max(mu[-1], 1.0 / mu[0])))
    return c


@dataclass
class NonresonanceReport:
    eigenvalues: np.ndarray
    gaps: np.ndarray
    couplings: np.ndarray
    min_coupling: float
    rational_hits: list
    status: str
    notes: list

    def rows(self):
        """(index, eigenvalue, coupling to next mode, flag) rows for CSV output."""
        hits = {i for i, *_ in self.rational_hits} | {j for _, j, *_ in self.rational_hits}
        out = []
        for k, lam in enumerate(self.eigenvalues):
            b = self.couplings[k] if k < len(self.couplings) else float("nan")
            flag = "rational-gap" if k in hits else ""
            if k < len(self.couplings) and abs(b) <= 1e-8:
                flag = (flag + ";zero-coupling").lstrip(";")
            out.append((k + 1, float(lam), float(abs(b)) if b == b else b, flag))
        return out


def _near_fraction(x: float, qmax: int, tol: float):
    f = Fraction(x).limit_denominator(qmax)
    return f if abs(float(f) - x) <= tol else None


def nonresonance_report(eigs, couplings, tol: float = 1e-6, qmax: int = 8) -> NonresonanceReport:
    """Heuristic check of gap non-degeneracy and neighbour couplings.

    Flags any pair of consecutive gaps whose ratio lies within ``tol`` of a
    fraction with denominator at most ``qmax``, and any neighbour coupling
    below 1e-8.  Passing this check never certifies rational independence.
    """
    lam = np.asarray(eigs, dtype=float)
    if len(lam) < 2:
        raise ValueError("need at least two eigenvalues")
    b = np.asarray(couplings)
    gaps = np.diff(lam)
    hits = []
    for i in range(len(gaps)):
        for j in range(i + 1, len(gaps)):
            if gaps[j] == 0:
                continue
            f = _near_fraction(gaps[i] / gaps[j], qmax, tol)
            if f is not None:
                hits.append((i, j, f.numerator, f.denominator))
    notes = []
    minb = float(np.min(np.abs(b))) if len(b) else 0.0
    if len(b) == 0 or minb <= 1e-8:
        notes.append("zero coupling")
    if hits:
        notes.append(f"{len(hits)} gap ratios near small fractions")
    status = "FLAG" if notes else "PASS"
    return NonresonanceReport(lam, gaps, b, minb, hits, status, notes)


def neighbour_couplings(W, V) -> np.ndarray:
    """``<Phi_{k+1}, W Phi_k>`` for mass-orthonormal eigenvectors ``V``."""
    Wd = _dense(W)
    return np.array([np.vdot(V[:, k + 1], Wd @ V[:, k]) for k in range(V.shape[1] - 1)])
