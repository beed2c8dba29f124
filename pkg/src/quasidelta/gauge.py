"""Gauge maps between the boundary-phase picture and the induction picture.

Boundary picture at control value ``u``: plain kinetic form, vertex phases
``chi_base + u * chi_bar``.  Induction picture: magnetic potential
``u * Theta0'`` with the static phases ``chi_base``.  The two are related by
multiplication with ``exp(-i u Theta0)``.

The boundary picture is discretised with gauge-fitted hat functions

    b_a(x) = exp(i u (Theta0(x) - c_a)) N_a(x),

where ``c_a = Theta0(x_a)`` at an interior node and ``c_a = 0`` for a vertex
unknown.  Coefficients are then nodal values, vertex traces carry the phase
``exp(i u chi_bar_e)``, and the coordinate map to the induction picture is
the diagonal matrix ``diag(exp(-i u c_a))``.  Because both pictures are
integrated with the same Gauss points the discrete identity
``K_boundary = J^* K_induction J`` holds to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import boundary as bd
from .circuit import EdgePotential, QuantumGraph, as_drive
from .fem import FormFamily, _Collector, _edge_quadrature, _hermitize
from .scales import generalized_eig


class GaugeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GaugeMap:
    """Diagonal coordinate map from boundary-picture to induction-picture unknowns."""

    u: float
    offsets: np.ndarray  # c_a per unknown
    factor: np.ndarray   # exp(-i u c_a)

    @property
    def matrix(self) -> sp.dia_matrix:
        return sp.diags(self.factor)

    def forward(self, x):
        return _apply_diag(self.factor, x)

    def backward(self, y):
        return _apply_diag(self.factor.conj(), y)


def _apply_diag(d, x):
    x = np.asarray(x)
    return d * x if x.ndim == 1 else d[:, None] * x


def node_offsets(F: FormFamily) -> np.ndarray:
    """``Theta0`` at every interior node; zero at vertex unknowns."""
    c = np.zeros(F.n)
    if F.theta0 is None:
        return c
    for e in F.graph.edges:
        idx = F.dofs.index[e.id]
        x = F.mesh.nodes[e.id]
        inner = idx[1:-1]
        c[inner] = F.theta0.theta(e.id, x[1:-1])
    return c


def _check_traces(graph: QuantumGraph, theta0: EdgePotential, chi_bar, tol: float = 1e-10) -> None:
    if chi_bar is None:
        return
    for v in graph.vertices:
        for inc in graph.incidences[v]:
            L = graph.edge(inc.edge).length
            val = float(theta0.theta(inc.edge, inc.end * L))
            want = float(chi_bar.get(inc, 0.0))
            if abs(val - want) > tol:
                raise GaugeMismatch(
                    f"potential trace {val:.12g} on {inc.edge}.{inc.end} differs from phase {want:.12g}")


def build_gauge(F: FormFamily, u: float, chi_bar=None) -> GaugeMap:
    """Gauge map at control value ``u`` for the induction family ``F``.

    ``chi_bar``, when given, is checked against the traces of ``Theta0``.
    """
    if F.theta0 is not None:
        _check_traces(F.graph, F.theta0, chi_bar)
    c = node_offsets(F)
    return GaugeMap(float(u), c, np.exp(-1j * u * c))


def map_state(J: GaugeMap, psi, direction: str = "forward"):
    """Boundary to induction (``forward``) or induction to boundary (``backward``)."""
    if direction == "forward":
        return J.forward(psi)
    if direction == "backward":
        return J.backward(psi)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


@dataclass
class BoundaryForms:
    """Boundary-picture matrices at one control value (gauge-fitted basis)."""

    u: float
    M: sp.csr_matrix
    K: sp.csr_matrix
    G: sp.csr_matrix  # <b_a, (Theta0 - c_b) b_b>, drives the moving-basis term
    vertex_phases: dict


def boundary_vertex_phases(F: FormFamily, u: float) -> dict:
    return {inc: F.params.chi[inc] + u * float(F.theta0.theta(inc.edge, inc.end * F.graph.edge(inc.edge).length))
            for v in F.graph.vertices for inc in F.graph.incidences[v]}


def assemble_boundary(F: FormFamily, u: float, quad_points: int = 2) -> BoundaryForms:
    """Assemble the boundary-picture form directly from gauge-fitted basis functions.

    The vertex contribution is ``-t^* C t`` with ``C`` the partial Cayley
    transform of the vertex unitary after gauge conjugation by the boundary
    traces of ``u * Theta0`` and ``t`` the trace phases.
    """
    graph, mesh = F.graph, F.mesh
    theta0 = F.theta0
    dofs = F.dofs
    c = node_offsets(F)
    n = dofs.n
    cM, cK, cG = _Collector(n), _Collector(n), _Collector(n)
    for e in graph.edges:
        x = mesh.nodes[e.id]
        xq, wq, N, dN = _edge_quadrature(x, quad_points)
        idx, ph = dofs.index[e.id], dofs.phase[e.id]
        n_el = xq.shape[0]
        th, A = theta0.sample(e.id, xq)
        nodes = np.arange(n_el)[:, None] + np.array([0, 1])[None, :]
        live = idx[nodes]
        ca = np.where(live >= 0, c[np.maximum(live, 0)], 0.0)  # (n_el, 2)
        phase = np.exp(1j * u * (th[:, None, :] - ca[:, :, None]))  # (n_el, 2, nq)
        b = phase * N
        db = phase * (dN[:, :, None] + 1j * u * A[:, None, :] * N)
        cM.add_edge(idx, ph, np.einsum("kq,kaq,kbq->kab", wq, b.conj(), b))
        cK.add_edge(idx, ph, np.einsum("kq,kaq,kbq->kab", wq, db.conj(), db))
        # G is not Hermitian: the weight (Theta0 - c_b) depends on the column index.
        shifted = (th[:, None, :] - ca[:, :, None]) * b
        cG.add_edge(idx, ph, np.einsum("kq,kaq,kbq->kab", wq, b.conj(), shifted))
    phases = boundary_vertex_phases(F, u)
    blocks = {}
    for v in graph.vertices:
        incs = graph.incidences[v]
        base_u = bd.vertex_unitary([F.params.chi[i] for i in incs], F.params.delta[v])
        shift = [phases[i] - F.params.chi[i] for i in incs]
        U = bd.gauge_conjugate(base_u, shift)
        C = bd.partial_cayley(U)
        t = np.exp(1j * np.array([phases[i] for i in incs]))
        blocks[v] = U
        i0 = dofs.vertex_dof[v]
        cK.add(i0, i0, -np.vdot(t, C @ t))
    G = cG.matrix()
    return BoundaryForms(u, _hermitize(cM.matrix()), _hermitize(cK.matrix()), G.tocsr(), phases)


@dataclass
class GaugeCheck:
    u: float
    residual: float
    mass_residual: float
    spectral_difference: float
    eig_boundary: np.ndarray
    eig_induction: np.ndarray


def verify_form_equivalence(F: FormFamily, u: float, n_eigs: int | None = 8,
                            chi_bar=None) -> GaugeCheck:
    """Compare the boundary-picture form with the conjugated induction form.

    ``residual`` is ``max |K_ind(u, 0) - J K_b J^*|`` entrywise; the spectral
    difference is the largest relative mismatch of the lowest ``n_eigs``
    generalized eigenvalues (all of them when ``n_eigs`` is None).
    """
    J = build_gauge(F, u, chi_bar)
    Bf = assemble_boundary(F, u)
    D = J.matrix
    Kind = F.K(u, 0.0)
    conj_K = (D @ Bf.K @ D.getH()).tocsr()
    conj_M = (D @ Bf.M @ D.getH()).tocsr()
    res = abs(Kind - conj_K).max() if F.n else 0.0
    mres = abs(F.M - conj_M).max()
    sub = None if n_eigs is None else (0, min(n_eigs, F.n) - 1)
    lb = generalized_eig(Bf.K, Bf.M, subset=sub)[0]
    li = generalized_eig(Kind, F.M, subset=sub)[0]
    spec = float(np.max(np.abs(lb - li) / np.maximum(np.abs(li), 1.0)))
    return GaugeCheck(u, float(res), float(mres), spec, lb, li)


def evolve_boundary_picture(F: FormFamily, control, x0, T: float, dt: float) -> np.ndarray:
    """Implicit-midpoint evolution of the boundary picture with a moving basis.

    Solves ``i M_b x' = (K_b + u' G) x`` with all matrices re-assembled at the
    midpoint of every step.  Used only to cross-check the induction dynamics.
    """
    drive = as_drive(control)
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / steps
    x = np.array(x0, dtype=complex)
    for k in range(steps):
        tm = (k + 0.5) * h
        u, du = drive(tm)
        Bf = assemble_boundary(F, u)
        L = Bf.K + du * Bf.G
        lhs = (1j * Bf.M - 0.5 * h * L).tocsc()
        rhs = (1j * Bf.M + 0.5 * h * L) @ x
        x = spla.spsolve(lhs, rhs)
    return x
