"""Manifest parsing and deterministic CSV / JSON writers."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .circuit import (ControlFunction, EdgePotential, QuantumGraph, QuasiDeltaParams, SpecError,
                      build_graph, make_params, parse_incidence_map, potential_from_coefficients,
                      theta_from_chi)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(int(x))
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(float(x))
    if hasattr(x, "dtype"):
        return _fmt(x.item())
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], stamp: bool = True) -> None:
    """CSV with an optional ``# generated ...`` comment line, then the header row.

    Numbers are written in shortest round-trip form, so identical inputs give
    byte-identical bodies.
    """
    with open(path, "w", newline="") as fh:
        if stamp:
            now = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            fh.write(f"# generated {now}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv_body(path: str | Path) -> str:
    """File content without leading comment lines."""
    with open(path) as fh:
        return "".join(line for line in fh if not line.startswith("#"))


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "dtype"):
        return _jsonable(x.tolist() if getattr(x, "ndim", 0) else x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_json(path: str | Path, obj: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- manifest schema -------------------------------------------------------

def require(obj: Mapping, key: str, path: str, kind=None):
    if not isinstance(obj, Mapping):
        raise SpecError(path, "expected an object")
    if key not in obj:
        raise SpecError(f"{path}.{key}" if path else key, "missing")
    val = obj[key]
    if kind is not None and not isinstance(val, kind):
        raise SpecError(f"{path}.{key}" if path else key, f"expected {getattr(kind, '__name__', kind)}")
    return val


def optional_number(obj: Mapping, key: str, path: str, default: float, lo=None, hi=None,
                    integer: bool = False):
    if key not in obj:
        return default
    val = obj[key]
    full = f"{path}.{key}" if path else key
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SpecError(full, "expected a number")
    if integer and int(val) != val:
        raise SpecError(full, "expected an integer")
    if lo is not None and val < lo:
        raise SpecError(full, f"must be >= {lo}")
    if hi is not None and val > hi:
        raise SpecError(full, f"must be <= {hi}")
    return int(val) if integer else float(val)


def load_graph_block(raw: Mapping, path: str = "graph") -> tuple[QuantumGraph, QuasiDeltaParams]:
    if not isinstance(raw, Mapping):
        raise SpecError(path, "expected an object")
    try:
        graph = build_graph(raw)
    except SpecError as exc:
        raise SpecError(f"{path}.{exc.field}", exc.message) from None
    delta = raw.get("delta")
    if graph.vertices and delta is None:
        raise SpecError(f"{path}.delta", "missing")
    delta = delta or {}
    if not isinstance(delta, Mapping):
        raise SpecError(f"{path}.delta", "expected an object")
    chi = parse_incidence_map(graph, raw.get("chi", {}) or {}, f"{path}.chi")
    try:
        params = make_params(graph, {k: _num(v, f"{path}.delta.{k}") for k, v in delta.items()}, chi)
    except SpecError as exc:
        raise SpecError(f"{path}.{exc.field}", exc.message) from None
    return graph, params


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(path, "expected a number")
    return float(v)


def load_potential(graph: QuantumGraph, raw: Mapping | None, path: str = "potential") -> EdgePotential | None:
    """``{"chi_bar": {vertex: {edge: phase}}}`` or ``{"coefficients": {edge: [c0, c1, ...]}}``."""
    if raw is None:
        return None
    if not isinstance(raw, Mapping):
        raise SpecError(path, "expected an object")
    if "chi_bar" in raw:
        chi_bar = parse_incidence_map(graph, raw["chi_bar"], f"{path}.chi_bar")
        full = {i: chi_bar.get(i, 0.0) for v in graph.vertices for i in graph.incidences[v]}
        return theta_from_chi(graph, full)
    if "coefficients" in raw:
        coef = raw["coefficients"]
        if not isinstance(coef, Mapping):
            raise SpecError(f"{path}.coefficients", "expected an object")
        for k, c in coef.items():
            if k not in {e.id for e in graph.edges}:
                raise SpecError(f"{path}.coefficients.{k}", "unknown edge")
            if not isinstance(c, list) or not all(isinstance(x, (int, float)) for x in c):
                raise SpecError(f"{path}.coefficients.{k}", "expected a list of numbers")
        return potential_from_coefficients(graph, coef)
    raise SpecError(path, "expected 'chi_bar' or 'coefficients'")


def chi_bar_map(graph: QuantumGraph, raw: Mapping | None, path: str = "potential"):
    if raw is None or "chi_bar" not in raw:
        return None
    m = parse_incidence_map(graph, raw["chi_bar"], f"{path}.chi_bar")
    return {i: m.get(i, 0.0) for v in graph.vertices for i in graph.incidences[v]}


def load_control(raw: Mapping, path: str) -> ControlFunction:
    """``{"kind", "breakpoints", "values", "slopes"?}``."""
    kind = require(raw, "kind", path, str)
    bp = require(raw, "breakpoints", path, list)
    vals = require(raw, "values", path, list)
    slopes = raw.get("slopes")
    try:
        return ControlFunction(kind, bp, vals, slopes)
    except (ValueError, TypeError) as exc:
        raise SpecError(path, str(exc)) from None


def resolve_graph_source(manifest: Mapping, base: Path) -> Mapping:
    raw = require(manifest, "graph", "")
    if isinstance(raw, str):
        p = (base / raw) if not Path(raw).is_absolute() else Path(raw)
        if not p.exists():
            raise SpecError("graph", f"file not found: {raw}")
        with open(p) as fh:
            try:
                return json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError("graph", f"invalid JSON in {raw}: {exc}") from None
    return raw
