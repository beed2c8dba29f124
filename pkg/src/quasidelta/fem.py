"""Linear finite elements for the magnetic quadratic form on a quantum graph.

Each edge carries a uniform P1 mesh.  An interior vertex owns one complex
degree of freedom ``w``; the trace of edge ``e`` at that vertex is
``exp(i chi_e) * w``, which builds the phased continuity constraint into the
coordinates.  External endpoints are Dirichlet and carry no unknown.

For a control value ``u`` the form

    ||Phi' + i u A Phi||^2 + sum_v |E_v| tan(delta_v / 2) |w_v|^2 + v <Phi, Theta Phi>

is represented as ``K0 + u K1 + u^2 K2 + v W`` in these coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .circuit import EdgePotential, QuantumGraph, QuasiDeltaParams

DEFAULT_ELEMENTS = 200


@dataclass(frozen=True)
class Mesh:
    """Uniform node positions per edge: ``nodes[e][0] = 0`` and ``nodes[e][-1] = L_e``."""

    nodes: Mapping[str, np.ndarray]

    def h(self, edge_id: str) -> np.ndarray:
        return np.diff(self.nodes[edge_id])

    def elements(self, edge_id: str) -> int:
        return len(self.nodes[edge_id]) - 1

    @property
    def hmax(self) -> float:
        return max(float(np.max(np.diff(x))) for x in self.nodes.values())


def uniform_mesh(graph: QuantumGraph, elements: int | Mapping[str, int] = DEFAULT_ELEMENTS) -> Mesh:
    nodes = {}
    for e in graph.edges:
        n = elements[e.id] if isinstance(elements, Mapping) else int(elements)
        if n < 1:
            raise ValueError(f"edge {e.id}: need at least one element")
        nodes[e.id] = np.linspace(0.0, e.length, n + 1)
    return Mesh(nodes)


@dataclass(frozen=True)
class DofMap:
    """Node-to-unknown map.

    ``index[e][k]`` is the global unknown behind node ``k`` of edge ``e``
    (-1 for a Dirichlet endpoint) and ``phase[e][k]`` the factor relating them:
    nodal value = phase * unknown.
    """

    n: int
    index: Mapping[str, np.ndarray]
    phase: Mapping[str, np.ndarray]
    vertex_dof: Mapping[str, int]

    def nodal_values(self, edge_id: str, x: np.ndarray) -> np.ndarray:
        idx = self.index[edge_id]
        vals = np.zeros(len(idx), dtype=complex)
        live = idx >= 0
        vals[live] = self.phase[edge_id][live] * np.asarray(x)[idx[live]]
        return vals


def build_dof_map(graph: QuantumGraph, params: QuasiDeltaParams, mesh: Mesh) -> DofMap:
    """Interior nodes edge by edge, followed by one unknown per interior vertex."""
    index: dict[str, np.ndarray] = {}
    phase: dict[str, np.ndarray] = {}
    count = 0
    for e in graph.edges:
        nn = len(mesh.nodes[e.id])
        idx = np.full(nn, -1, dtype=int)
        idx[1:-1] = np.arange(count, count + nn - 2)
        count += nn - 2
        index[e.id] = idx
        phase[e.id] = np.ones(nn, dtype=complex)
    vdof = {}
    for v in graph.vertices:
        vdof[v] = count
        for inc in graph.incidences[v]:
            k = 0 if inc.end == 0 else len(mesh.nodes[inc.edge]) - 1
            index[inc.edge][k] = count
            phase[inc.edge][k] = np.exp(1j * params.chi[inc])
        count += 1
    return DofMap(count, index, phase, vdof)


@dataclass
class FormFamily:
    """Mass matrix and the four structure matrices of the control-linear form."""

    M: sp.csr_matrix
    K0: sp.csr_matrix
    K1: sp.csr_matrix
    K2: sp.csr_matrix
    W: sp.csr_matrix
    dofs: DofMap
    graph: QuantumGraph | None = None
    params: QuasiDeltaParams | None = None
    theta0: EdgePotential | None = None
    mesh: Mesh | None = None
    _kin: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def K(self, u: float, v: float = 0.0) -> sp.csr_matrix:
        return (self.K0 + u * self.K1 + (u * u) * self.K2 + v * self.W).tocsr()

    def dK(self, u: float, du: float, dv: float) -> sp.csr_matrix:
        """Time derivative of ``K(u(t), v(t))`` given ``u``, ``u'`` and ``v'``."""
        return (du * self.K1 + (2.0 * u * du) * self.K2 + dv * self.W).tocsr()

    @property
    def kinetic(self) -> sp.csr_matrix:
        """Plain Dirichlet-energy matrix (no vertex or magnetic terms)."""
        return self._kin


def _edge_quadrature(x: np.ndarray, nq: int):
    """Gauss points, weights and P1 shape data on every element of one edge.

    Returns ``xq`` and ``wq`` of shape (n_el, nq), shape values ``N`` of shape
    (n_el, 2, nq) and derivatives ``dN`` of shape (n_el, 2).
    """
    g, gw = leggauss(nq)
    s = 0.5 * (g + 1.0)
    h = np.diff(x)
    xq = x[:-1, None] + h[:, None] * s[None, :]
    wq = 0.5 * h[:, None] * gw[None, :]
    N = np.stack([np.broadcast_to(1.0 - s, xq.shape), np.broadcast_to(s, xq.shape)], axis=1)
    dN = np.stack([-1.0 / h, 1.0 / h], axis=1)
    return xq, wq, N, dN


def _scatter(rows, cols, vals, n):
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


class _Collector:
    """Accumulates element blocks ``conj(p_a) p_b * local_ab`` into global triplets."""

    def __init__(self, n: int):
        self.n = n
        self.r: list[np.ndarray] = []
        self.c: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def add_edge(self, idx: np.ndarray, ph: np.ndarray, local: np.ndarray) -> None:
        # local has shape (n_el, 2, 2), entry [k, a, b] couples node k+a with node k+b.
        n_el = local.shape[0]
        nodes = np.arange(n_el)[:, None] + np.array([0, 1])[None, :]
        gi = idx[nodes]
        gp = ph[nodes]
        vals = np.conj(gp)[:, :, None] * gp[:, None, :] * local
        rows = np.broadcast_to(gi[:, :, None], vals.shape)
        cols = np.broadcast_to(gi[:, None, :], vals.shape)
        keep = (rows >= 0) & (cols >= 0)
        self.r.append(rows[keep])
        self.c.append(cols[keep])
        self.v.append(vals[keep])

    def add(self, i: int, j: int, val: complex) -> None:
        self.r.append(np.array([i]))
        self.c.append(np.array([j]))
        self.v.append(np.array([val], dtype=complex))

    def matrix(self) -> sp.csr_matrix:
        if not self.r:
            return sp.csr_matrix((self.n, self.n), dtype=complex)
        m = _scatter(np.concatenate(self.r), np.concatenate(self.c),
                     np.concatenate(self.v).astype(complex), self.n)
        m.sum_duplicates()
        return m


def _hermitize(m: sp.csr_matrix) -> sp.csr_matrix:
    return (0.5 * (m + m.getH())).tocsr()


def assemble(graph: QuantumGraph, params: QuasiDeltaParams, theta0: EdgePotential | None,
             mesh: Mesh, quad_points: int = 2) -> FormFamily:
    """Assemble ``M, K0, K1, K2, W`` in the constrained coordinates.

    ``K1`` is built from ``i A (N_a' N_b - N_a N_b')``, the cross term of
    ``|Phi' + i u A Phi|^2``; it is purely imaginary and antisymmetric, hence
    Hermitian entry by entry.  All integrals use ``quad_points``-point Gauss
    rules (two points integrate the mass and stiffness parts exactly).
    """
    missing = [e.id for e in graph.edges if e.id not in mesh.nodes]
    if missing or len(mesh.nodes) != len(graph.edges):
        raise ValueError(f"mesh does not match the graph (edges without nodes: {missing})")
    dofs = build_dof_map(graph, params, mesh)
    n = dofs.n
    cM, cK0, cK1, cK2, cW, cKin = (_Collector(n) for _ in range(6))
    for e in graph.edges:
        x = mesh.nodes[e.id]
        if abs(x[-1] - e.length) > 1e-12 * e.length:
            raise ValueError(f"mesh of edge {e.id} does not end at its length")
        xq, wq, N, dN = _edge_quadrature(x, quad_points)
        idx, ph = dofs.index[e.id], dofs.phase[e.id]
        mass = np.einsum("kq,kaq,kbq->kab", wq, N, N)
        stiff = np.einsum("k,ka,kb->kab", wq.sum(axis=1), dN, dN)
        cM.add_edge(idx, ph, mass)
        cK0.add_edge(idx, ph, stiff)
        cKin.add_edge(idx, ph, stiff)
        if theta0 is not None:
            th, A = theta0.sample(e.id, xq)
            cross = np.einsum("kq,kq,ka,kbq->kab", wq, A, dN, N)
            cK1.add_edge(idx, ph, 1j * (cross - np.transpose(cross, (0, 2, 1))))
            cK2.add_edge(idx, ph, np.einsum("kq,kq,kaq,kbq->kab", wq, A * A, N, N))
            cW.add_edge(idx, ph, np.einsum("kq,kq,kaq,kbq->kab", wq, th, N, N))
    for v in graph.vertices:
        i = dofs.vertex_dof[v]
        cK0.add(i, i, graph.degree(v) * math.tan(params.delta[v] / 2.0))
    mats = [_hermitize(c.matrix()) for c in (cM, cK0, cK1, cK2, cW, cKin)]
    return FormFamily(*mats[:5], dofs=dofs, graph=graph, params=params, theta0=theta0,
                      mesh=mesh, _kin=mats[5])


def spectral_lower_bound(F: FormFamily, v: float = 0.0) -> float:
    """A guaranteed lower bound for the spectrum of ``(K(u, v), M)``, any ``u``.

    The magnetic and kinetic parts are nonnegative.  Attractive vertex terms
    are controlled edge by edge with the trace inequality
    ``|f(end)|^2 <= eps ||f'||^2 + (2/L + 1/eps) ||f||^2`` (each edge has at
    most two vertex ends), taking ``eps = 1/(2 tau)``; the potential term is
    bounded by ``|v| max |Theta|``.
    """
    tau = max([max(0.0, -math.tan(F.params.delta[x] / 2.0)) for x in F.graph.vertices] + [0.0])
    lmin = min(e.length for e in F.graph.edges)
    bound = 0.0
    if tau > 0:
        bound -= 2.0 * tau * (2.0 / lmin + 2.0 * tau)
    if v != 0.0 and F.theta0 is not None:
        tmax = 0.0
        for e in F.graph.edges:
            x = np.linspace(0.0, e.length, 257)
            tmax = max(tmax, float(np.max(np.abs(F.theta0.theta(e.id, x)))))
        bound -= abs(v) * tmax * 1.01
    return bound


def form_value(F: FormFamily, u: float, v: float, x, y) -> complex:
    """``x^* K(u, v) y``, antilinear in ``x``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != (F.n,) or y.shape != (F.n,):
        raise ValueError(f"vectors of length {F.n} expected")
    return complex(np.vdot(x, F.K(u, v) @ y))


def nodal_field(F: FormFamily, x) -> dict[str, np.ndarray]:
    """Nodal values of a coordinate vector on every edge."""
    return {e.id: F.dofs.nodal_values(e.id, x) for e in F.graph.edges}


def vertex_flux_residual(F: FormFamily, x, eigenvalue: float | None = None) -> dict[str, float]:
    """Residual of the vertex flux law for a discrete eigenfunction.

    The outward derivative on edge ``e`` at a vertex is recovered from the end
    element.  With ``eigenvalue`` given, the element's own contribution
    ``lambda * h * phi / 2`` is included, which is the natural correction of
    the P1 scheme; without it the plain one-sided slope is used.  Returned
    values are normalised by the maximum nodal modulus.
    """
    vals = nodal_field(F, x)
    scale = max(float(np.max(np.abs(v))) for v in vals.values())
    out = {}
    for vtx in F.graph.vertices:
        w = x[F.dofs.vertex_dof[vtx]]
        total = 0.0 + 0.0j
        for inc in F.graph.incidences[vtx]:
            nodes = F.mesh.nodes[inc.edge]
            f = vals[inc.edge]
            if inc.end == 1:
                h = nodes[-1] - nodes[-2]
                dn = (f[-1] - f[-2]) / h
                end_val = f[-1]
            else:
                h = nodes[1] - nodes[0]
                dn = (f[0] - f[1]) / h
                end_val = f[0]
            if eigenvalue is not None:
                dn = dn - eigenvalue * h * end_val / 2.0
            total += np.exp(-1j * F.params.chi[inc]) * dn
        d = F.graph.degree(vtx)
        target = -d * math.tan(F.params.delta[vtx] / 2.0) * w
        out[vtx] = float(abs(total - target) / scale)
    return out


def write_triplets(m, path: str | Path) -> None:
    """Sparse text dump, one ``row col re im`` line per stored entry (0-based)."""
    c = sp.coo_matrix(m)
    order = np.lexsort((c.col, c.row))
    with open(path, "w") as fh:
        fh.write(f"# {c.shape[0]} {c.shape[1]}\n")
        for k in order:
            z = complex(c.data[k])
            fh.write(f"{c.row[k]} {c.col[k]} {z.real:.17g} {z.imag:.17g}\n")


def read_triplets(path: str | Path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        shape = (int(header[1]), int(header[2]))
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape, dtype=complex)
    return sp.coo_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=shape).tocsr()
