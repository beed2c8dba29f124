"""Vertex unitaries, projectors and the partial Cayley transform.

Every object here is a small dense matrix acting on ``C^d`` with ``d`` the
number of edge endpoints meeting at a vertex.  Point boundaries in one
dimension carry the counting measure, so no quadrature is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class InadmissibleUnitary(ValueError):
    """Raised when a unitary has spectrum accumulating near -1 without touching it."""


def vertex_projector(chi_v, d: int | None = None) -> np.ndarray:
    """Rank-one projector with entries ``exp(i(chi_e - chi_f)) / d``."""
    chi_v = np.atleast_1d(np.asarray(chi_v, dtype=float))
    if d is None:
        d = len(chi_v)
    if d < 1 or len(chi_v) != d:
        raise ValueError(f"expected {d} phases, got {len(chi_v)}")
    w = np.exp(1j * chi_v) / math.sqrt(d)
    return np.outer(w, w.conj())


def vertex_unitary(chi_v, delta_v: float) -> np.ndarray:
    """``(exp(i delta) + 1) P - I`` for the projector of ``chi_v``."""
    if not -math.pi < delta_v < math.pi:
        raise ValueError(f"delta must lie in (-pi, pi), got {delta_v}")
    P = vertex_projector(chi_v)
    return (np.exp(1j * delta_v) + 1.0) * P - np.eye(P.shape[0])


def partial_cayley(U: np.ndarray, gap_tol: float = 1e-8) -> np.ndarray:
    """Hermitian matrix acting as ``i(lam - 1)/(lam + 1)`` off ``ker(U + I)`` and as 0 on it.

    The unitary is diagonalised through a complex Schur form (triangular
    factor is diagonal for normal matrices).  Eigenvalues within
    ``1e-2 * gap_tol`` of -1 are treated as exact -1 eigenvalues; anything
    closer than ``gap_tol`` beyond that is reported as inadmissible.
    """
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError("square matrix expected")
    T, Z = sla.schur(U, output="complex")
    lam = np.diag(T)
    dist = np.abs(lam + 1.0)
    snap = dist <= 1e-2 * gap_tol
    bad = (~snap) & (dist < gap_tol)
    if np.any(bad):
        raise InadmissibleUnitary(
            f"eigenvalue at distance {dist[bad].min():.3e} from -1 (gap_tol={gap_tol:g})")
    coeff = np.zeros(len(lam))
    ok = ~snap
    # i(e^{ia}-1)/(e^{ia}+1) = -tan(a/2); evaluate via the angle for accuracy.
    coeff[ok] = -np.tan(np.angle(lam[ok]) / 2.0)
    C = (Z * coeff) @ Z.conj().T
    return 0.5 * (C + C.conj().T)


def gauge_conjugate(U: np.ndarray, theta_boundary) -> np.ndarray:
    """``D U D^*`` with ``D = diag(exp(i theta))``."""
    U = np.asarray(U, dtype=complex)
    th = np.atleast_1d(np.asarray(theta_boundary, dtype=float))
    if th.shape != (U.shape[0],):
        raise ValueError(f"expected {U.shape[0]} boundary phases, got {th.shape}")
    D = np.exp(1j * th)
    return D[:, None] * U * D.conj()[None, :]


def kernel_basis(U: np.ndarray, gap_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of ``ker(U + I)`` (columns)."""
    T, Z = sla.schur(np.asarray(U, dtype=complex), output="complex")
    mask = np.abs(np.diag(T) + 1.0) <= gap_tol
    return Z[:, mask]


@dataclass(frozen=True)
class VertexBlock:
    vertex: str
    d: int
    unitary: np.ndarray
    projector: np.ndarray
    cayley: np.ndarray

    @classmethod
    def build(cls, vertex: str, chi_v, delta_v: float) -> "VertexBlock":
        P = vertex_projector(chi_v)
        U = vertex_unitary(chi_v, delta_v)
        # Closed form; partial_cayley(U) reproduces it to rounding.
        C = -math.tan(delta_v / 2.0) * P
        return cls(vertex, P.shape[0], U, P, C)


def vertex_blocks(graph, params) -> dict[str, VertexBlock]:
    out = {}
    for v in graph.vertices:
        incs = graph.incidences[v]
        out[v] = VertexBlock.build(v, [params.chi[i] for i in incs], params.delta[v])
    return out
