"""Metric-graph geometry, quasi-delta vertex data, controls and edge potentials.

Graphs are one-dimensional: every edge is an interval ``[0, L_e]`` whose two
endpoints are either attached to an interior vertex or left external, where a
Dirichlet condition is imposed.  Loops attach both endpoints to one vertex and
therefore contribute two incidences to its degree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

TWO_PI = 2.0 * math.pi


class SpecError(ValueError):
    """Malformed graph or experiment description.

    ``field`` holds a dotted path to the offending entry.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class Incidence(NamedTuple):
    """One endpoint of one edge touching a vertex (``end`` is 0 or 1)."""

    vertex: str
    edge: str
    end: int


@dataclass(frozen=True)
class Edge:
    id: str
    length: float
    ends: tuple[str | None, str | None]


@dataclass(frozen=True)
class QuantumGraph:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    incidences: Mapping[str, tuple[Incidence, ...]] = field(repr=False)

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    def degree(self, vertex: str) -> int:
        return len(self.incidences[vertex])

    @property
    def external_endpoints(self) -> tuple[tuple[str, int], ...]:
        return tuple((e.id, k) for e in self.edges for k in (0, 1) if e.ends[k] is None)

    def owner(self, edge_id: str, end: int) -> str | None:
        return self.edge(edge_id).ends[end]


def build_graph(spec: Mapping) -> QuantumGraph:
    """Validate a graph description and populate the incidence tables.

    ``spec`` follows the JSON layout documented in the README: a list of
    vertex ids and a list of edges ``{"id", "length", "ends": [a0, a1]}``
    where ``null`` marks an external (Dirichlet) endpoint.
    """
    if "edges" not in spec:
        raise SpecError("edges", "missing")
    raw_vertices = spec.get("vertices", [])
    vertices: list[str] = []
    for k, v in enumerate(raw_vertices):
        v = str(v)
        if v in vertices:
            raise SpecError(f"vertices[{k}]", f"duplicate vertex id {v!r}")
        vertices.append(v)

    edges: list[Edge] = []
    seen: set[str] = set()
    for k, raw in enumerate(spec["edges"]):
        path = f"edges[{k}]"
        try:
            eid = str(raw["id"])
            length = float(raw["length"])
            ends = list(raw["ends"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(path, f"expected id, length and ends ({exc})") from None
        if eid in seen:
            raise SpecError(f"{path}.id", f"duplicate edge id {eid!r}")
        seen.add(eid)
        if not (math.isfinite(length) and length > 0):
            raise SpecError(f"{path}.length", f"must be positive and finite, got {length}")
        if len(ends) != 2:
            raise SpecError(f"{path}.ends", "must list exactly two attachments")
        clean: list[str | None] = []
        for j, a in enumerate(ends):
            if a is None:
                clean.append(None)
                continue
            a = str(a)
            if a not in vertices:
                raise SpecError(f"{path}.ends[{j}]", f"unknown vertex {a!r}")
            clean.append(a)
        edges.append(Edge(eid, length, (clean[0], clean[1])))

    table: dict[str, list[Incidence]] = {v: [] for v in vertices}
    for e in edges:
        for end, a in enumerate(e.ends):
            if a is not None:
                table[a].append(Incidence(a, e.id, end))
    for v, inc in table.items():
        if not inc:
            raise SpecError(f"vertices[{vertices.index(v)}]", f"vertex {v!r} has no incident edge")
    return QuantumGraph(tuple(vertices), tuple(edges), {v: tuple(i) for v, i in table.items()})


def _incidence_key(graph: QuantumGraph, vertex: str, key: str, path: str) -> Incidence:
    # "e1" names the unique endpoint of e1 at the vertex; "e1.0" / "e1.1" pick one end of a loop.
    if "." in key:
        eid, _, end_s = key.rpartition(".")
        if end_s not in ("0", "1"):
            raise SpecError(path, f"bad endpoint suffix in {key!r}")
        inc = Incidence(vertex, eid, int(end_s))
        if inc not in graph.incidences[vertex]:
            raise SpecError(path, f"{key!r} is not an endpoint at vertex {vertex!r}")
        return inc
    matches = [i for i in graph.incidences[vertex] if i.edge == key]
    if not matches:
        raise SpecError(path, f"edge {key!r} does not touch vertex {vertex!r}")
    if len(matches) > 1:
        raise SpecError(path, f"edge {key!r} is a loop at {vertex!r}; use {key}.0 / {key}.1")
    return matches[0]


def parse_incidence_map(graph: QuantumGraph, raw: Mapping, path: str = "chi") -> dict[Incidence, float]:
    """Read ``{vertex: {edge or edge.end: angle}}`` into an incidence-keyed map."""
    out: dict[Incidence, float] = {}
    for v, entries in raw.items():
        if v not in graph.incidences:
            raise SpecError(f"{path}.{v}", "unknown vertex")
        if not isinstance(entries, Mapping):
            raise SpecError(f"{path}.{v}", "expected an object of per-edge angles")
        for key, val in entries.items():
            inc = _incidence_key(graph, v, str(key), f"{path}.{v}.{key}")
            out[inc] = float(val)
    return out


@dataclass(frozen=True)
class QuasiDeltaParams:
    """Vertex strengths ``delta[v]`` in (-pi, pi) and phases ``chi[incidence]`` in [0, 2pi)."""

    delta: Mapping[str, float]
    chi: Mapping[Incidence, float]

    def chi_at(self, vertex: str, incidences: Sequence[Incidence]) -> np.ndarray:
        return np.array([self.chi[i] for i in incidences])


def make_params(graph: QuantumGraph, delta: Mapping[str, float],
                chi: Mapping[Incidence, float] | None = None) -> QuasiDeltaParams:
    """Validate vertex parameters; missing phases default to zero, angles are reduced mod 2pi."""
    chi = dict(chi or {})
    d: dict[str, float] = {}
    for v in graph.vertices:
        if v not in delta:
            raise SpecError(f"delta.{v}", "missing")
        dv = float(delta[v])
        if not -math.pi < dv < math.pi:
            raise SpecError(f"delta.{v}", f"must lie in the open interval (-pi, pi), got {dv}")
        d[v] = dv
    for v in delta:
        if v not in graph.incidences:
            raise SpecError(f"delta.{v}", "unknown vertex")
    valid = {i for incs in graph.incidences.values() for i in incs}
    for inc in chi:
        if inc not in valid:
            raise SpecError(f"chi.{inc.vertex}.{inc.edge}", "not an interior incidence")
    phases = {i: float(chi.get(i, 0.0)) % TWO_PI for i in sorted(valid)}
    return QuasiDeltaParams(d, phases)


def scaled_chi(chi_bar: Mapping[Incidence, float], c: float) -> dict[Incidence, float]:
    return {k: c * v for k, v in chi_bar.items()}


# -- controls ---------------------------------------------------------------

CONTROL_KINDS = ("piecewise-constant", "piecewise-linear", "smooth-sampled")


class ControlFunction:
    """A real control on ``[0, T]``.

    piecewise-constant
        ``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``.
    piecewise-linear
        ``values[j] + slopes[j] * (t - breakpoints[j])`` on each piece; pieces
        need not join continuously (the sawtooth lift resets at every piece).
    smooth-sampled
        ``values`` sampled at ``breakpoints``; evaluated by a not-a-knot cubic
        spline, so errors are O(h^4) in value and O(h^3) in slope for sample
        spacing ``h``.

    Derivatives at breakpoints are right limits; ``t == T`` uses the last piece.
    """

    def __init__(self, kind: str, breakpoints, values, slopes=None, bound: float | None = None):
        if kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {kind!r}")
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        if bp.ndim != 1 or len(bp) < 2 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing with at least two entries")
        if bp[0] != 0.0:
            raise ValueError("controls start at t = 0")
        self.kind = kind
        self.breakpoints = bp
        if kind == "smooth-sampled":
            if len(vals) != len(bp):
                raise ValueError("smooth-sampled controls need one sample per breakpoint")
            self.values = vals
            self.slopes = None
            self._spline = CubicSpline(bp, vals)
        else:
            if len(vals) != len(bp) - 1:
                raise ValueError("piecewise controls need one value per piece")
            self.values = vals
            if kind == "piecewise-linear":
                sl = np.zeros_like(vals) if slopes is None else np.asarray(slopes, dtype=float)
                if sl.shape != vals.shape:
                    raise ValueError("one slope per piece")
                self.slopes = sl
            else:
                self.slopes = np.zeros_like(vals)
            self._spline = None
        if bound is None:
            bound = float(np.max(np.abs(self._all_slopes()))) if len(bp) else 0.0
        self.bound = bound
        if kind == "piecewise-linear" and np.any(np.abs(self.slopes) > bound * (1 + 1e-12) + 1e-300):
            raise ValueError("piecewise-linear slope exceeds the derivative bound")

    def _all_slopes(self) -> np.ndarray:
        if self._spline is not None:
            grid = np.linspace(0.0, self.T, 8 * len(self.breakpoints))
            return self._spline(grid, 1)
        return self.slopes

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def pieces(self) -> int:
        return len(self.breakpoints) - 1

    def piece_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.pieces - 1)

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tol = 1e-12 * max(1.0, self.T)
        if np.any(t < -tol) or np.any(t > self.T + tol):
            raise ValueError(f"time outside [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def value(self, t):
        t = self._check(t)
        if self._spline is not None:
            return self._spline(t)
        j = self.piece_index(t)
        return self.values[j] + self.slopes[j] * (t - self.breakpoints[j])

    def derivative(self, t):
        t = self._check(t)
        if self._spline is not None:
            return self._spline(t, 1)
        return self.slopes[self.piece_index(t)]

    def second_derivative(self, t):
        t = self._check(t)
        if self._spline is not None:
            return self._spline(t, 2)
        return np.zeros_like(t)

    @property
    def start(self) -> float:
        return float(self.value(0.0))

    @property
    def end(self) -> float:
        return float(self.value(self.T))

    def __repr__(self) -> str:
        return f"ControlFunction({self.kind!r}, T={self.T:g}, pieces={self.pieces})"


def eval_control(u: ControlFunction, t: float) -> tuple[float, float]:
    """Return ``(u(t), u'(t))``; the derivative is the right limit at breakpoints."""
    return float(u.value(t)), float(u.derivative(t))


def constant_control(value: float, T: float) -> ControlFunction:
    return ControlFunction("piecewise-constant", [0.0, T], [value])


def ramp_control(u0: float, slope: float, T: float) -> ControlFunction:
    return ControlFunction("piecewise-linear", [0.0, T], [u0], [slope])


@dataclass(frozen=True)
class InductionDrive:
    """Control pair ``(a(t), b(t))`` of an induction system.

    ``rate`` defaults to the derivative of ``field``.  A separate rate is how
    the auxiliary system ``a = u0``, ``b = v(t)`` is expressed.
    """

    field: ControlFunction
    rate: ControlFunction | None = None

    @property
    def T(self) -> float:
        return self.field.T

    def __call__(self, t: float) -> tuple[float, float]:
        a = float(self.field.value(t))
        b = float(self.rate.value(t)) if self.rate is not None else float(self.field.derivative(t))
        return a, b

    def rates(self, t: float) -> tuple[float, float]:
        """Time derivatives ``(a', b')`` (right limits)."""
        da = float(self.field.derivative(t))
        if self.rate is not None:
            db = float(self.rate.derivative(t))
        else:
            db = float(self.field.second_derivative(t))
        return da, db

    def breakpoints(self) -> np.ndarray:
        pts = [self.field.breakpoints]
        if self.rate is not None:
            pts.append(self.rate.breakpoints)
        if self.field.kind == "smooth-sampled" and (self.rate is None or self.rate.kind == "smooth-sampled"):
            return np.array([0.0, self.T])
        return np.unique(np.concatenate(pts))


def as_drive(control) -> InductionDrive:
    return control if isinstance(control, InductionDrive) else InductionDrive(control)


# -- edge potentials --------------------------------------------------------

def hermite_profile(theta0: float, theta1: float, length: float) -> Polynomial:
    """Cubic with end values ``theta0``, ``theta1`` and zero end slopes on ``[0, length]``."""
    s = Polynomial([0.0, 1.0 / length])
    return theta0 + (theta1 - theta0) * (3 * s**2 - 2 * s**3)


@dataclass(frozen=True)
class EdgePotential:
    """Per-edge profile ``Theta_e`` (polynomial in the local coordinate); ``A_e = Theta_e'``."""

    profiles: Mapping[str, Polynomial]

    def theta(self, edge_id: str, x):
        return self.profiles[edge_id](x)

    def field(self, edge_id: str, x):
        return self.profiles[edge_id].deriv()(x)

    def sample(self, edge_id: str, x) -> tuple[np.ndarray, np.ndarray]:
        return self.theta(edge_id, x), self.field(edge_id, x)

    def scaled(self, c: float) -> "EdgePotential":
        return EdgePotential({k: c * p for k, p in self.profiles.items()})

    def endpoint_values(self, graph: QuantumGraph) -> dict[tuple[str, int], float]:
        return {(e.id, k): float(self.theta(e.id, k * e.length)) for e in graph.edges for k in (0, 1)}

    def is_zero(self) -> bool:
        return all(np.allclose(p.coef, 0.0) for p in self.profiles.values())


def theta_from_chi(graph: QuantumGraph, chi_bar: Mapping[Incidence, float]) -> EdgePotential:
    """Smooth edge potential whose traces reproduce ``chi_bar`` with vanishing end slopes.

    External endpoints get the value 0.  Phases are used as given (no mod 2pi
    reduction) so that scaling ``chi_bar`` scales the profile linearly.
    """
    profiles = {}
    for e in graph.edges:
        vals = []
        for end, a in enumerate(e.ends):
            if a is None:
                vals.append(0.0)
                continue
            inc = Incidence(a, e.id, end)
            if inc not in chi_bar:
                raise SpecError(f"chi.{a}.{e.id}", "missing incidence entry")
            vals.append(float(chi_bar[inc]))
        profiles[e.id] = hermite_profile(vals[0], vals[1], e.length)
    return EdgePotential(profiles)


def potential_from_coefficients(graph: QuantumGraph, raw: Mapping[str, Sequence[float]]) -> EdgePotential:
    """User-supplied profile: power-series coefficients in the local edge coordinate."""
    profiles = {}
    for e in graph.edges:
        coef = raw.get(e.id, [0.0])
        profiles[e.id] = Polynomial(np.asarray(coef, dtype=float))
    return EdgePotential(profiles)


def load_json(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
