"""Reference values computed independently of the package under test.

Each oracle uses only numpy / scipy primitives and closed-form relations, so
agreement with the package is evidence rather than a tautology.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import eigh, expm
from scipy.optimize import brentq


def dirichlet_interval_eigs(length: float, count: int) -> np.ndarray:
    """``(k pi / L)^2`` for k = 1..count."""
    k = np.arange(1, count + 1)
    return (k * math.pi / length) ** 2


def _roots(f, lo, hi, count, samples=200000):
    x = np.linspace(lo, hi, samples)
    y = f(x)
    out = []
    for i in np.nonzero(np.sign(y[:-1]) * np.sign(y[1:]) < 0)[0]:
        r = brentq(f, x[i], x[i + 1], xtol=1e-15, rtol=1e-15)
        # discard sign changes across poles
        if abs(f(r)) < 1e-8:
            out.append(r)
        if len(out) == count:
            break
    return np.array(out)


def star_symmetric_eigs(delta: float, count: int, degree: int = 2) -> np.ndarray:
    """Symmetric eigenvalues of a star of unit Dirichlet edges with a delta-type centre.

    On every edge ``phi = sin(k x)`` (x = 0 at the outer end).  The vertex law
    ``sum outward slope = -d tan(delta/2) phi(v)`` becomes
    ``d k cos k + d tan(delta/2) sin k = 0``, written without poles.
    """
    t = math.tan(delta / 2.0)

    def f(k):
        return degree * k * np.cos(k) + degree * t * np.sin(k)

    return _roots(f, 1e-9, (count + 2) * math.pi, count) ** 2


def star_negative_eig(delta: float, degree: int = 2) -> float:
    """Negative eigenvalue ``-kappa^2`` of the star, from ``kappa cosh kappa + tan(delta/2) sinh kappa = 0``."""
    t = math.tan(delta / 2.0)

    def f(kap):
        return kap * math.cosh(kap) + t * math.sinh(kap)

    kap = brentq(f, 1e-9, 50.0)
    return -kap * kap


def cubic_with_end_data(v0, v1, d0, d1, L):
    """Coefficients of the cubic with given end values and slopes (4x4 solve)."""
    A = np.array([[1, 0, 0, 0], [1, L, L**2, L**3], [0, 1, 0, 0], [0, 1, 2 * L, 3 * L**2]], dtype=float)
    return np.linalg.solve(A, np.array([v0, v1, d0, d1], dtype=float))


def half_angle_cayley(delta: float) -> float:
    """``i (e^{i d} - 1) / (e^{i d} + 1)`` evaluated in complex arithmetic."""
    z = np.exp(1j * delta)
    return complex(1j * (z - 1) / (z + 1)).real


def dense_propagator(K, M, t: float) -> np.ndarray:
    """``exp(-i t M^{-1} K)`` by a dense matrix exponential."""
    K = np.asarray(K.toarray() if hasattr(K, "toarray") else K)
    M = np.asarray(M.toarray() if hasattr(M, "toarray") else M)
    return expm(-1j * t * np.linalg.solve(M, K))


def dense_generalized_eigs(K, M) -> np.ndarray:
    K = np.asarray(K.toarray() if hasattr(K, "toarray") else K)
    M = np.asarray(M.toarray() if hasattr(M, "toarray") else M)
    return eigh(K, M, eigvals_only=True)


def p1_dirichlet_matrices(length: float, elements: int):
    """Hand-written P1 stiffness and mass on a Dirichlet interval (interior nodes only)."""
    h = length / elements
    n = elements - 1
    K = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / h
    M = (np.diag(np.full(n, 4.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)) * h / 6.0
    return K, M
