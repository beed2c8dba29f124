"""Command-line runner: one JSON manifest describes one experiment.

Usage::

    quasidelta <command> --manifest exp.json --out results/ [--threads 1]

Exit codes: 0 success, 2 manifest/schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

COMMANDS = ("spectrum", "evolve", "gauge-check", "stability", "control", "boundary-control")
EXIT_SCHEMA = 2
EXIT_NUMERIC = 3
MAX_DOFS = 4000


def _set_threads(k: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


class _Ctx:
    """Parsed manifest pieces shared by the command handlers."""

    def __init__(self, manifest: dict, base: Path, out: Path):
        from . import io
        from .circuit import SpecError
        from .fem import assemble, uniform_mesh

        self.manifest = manifest
        self.out = out
        graph_raw = io.resolve_graph_source(manifest, base)
        self.graph, self.params = io.load_graph_block(graph_raw)
        pot_raw = manifest.get("potential")
        self.theta0 = io.load_potential(self.graph, pot_raw)
        self.chi_bar = io.chi_bar_map(self.graph, pot_raw)
        num = manifest.get("numerics", {})
        if not isinstance(num, dict):
            raise SpecError("numerics", "expected an object")
        self.elements = io.optional_number(num, "elements", "numerics", 100, lo=1, integer=True)
        self.dt = io.optional_number(num, "dt", "numerics", 1e-3, lo=1e-9)
        self.quad = io.optional_number(num, "quad_points", "numerics", 2, lo=1, hi=10, integer=True)
        self.seed = io.optional_number(manifest, "seed", "", 0, lo=0, integer=True)
        self.p = manifest.get("params", {})
        if not isinstance(self.p, dict):
            raise SpecError("params", "expected an object")
        mesh = uniform_mesh(self.graph, self.elements)
        n_dofs = sum(len(x) - 2 for x in mesh.nodes.values()) + len(self.graph.vertices)
        if n_dofs > MAX_DOFS:
            raise SpecError("numerics.elements", f"{n_dofs} unknowns exceed the cap of {MAX_DOFS}")
        self.F = assemble(self.graph, self.params, self.theta0, mesh, self.quad)

    def num(self, key, default, **kw):
        from . import io
        return io.optional_number(self.p, key, "params", default, **kw)


def _need_potential(ctx: _Ctx, what: str):
    from .circuit import SpecError
    if ctx.theta0 is None:
        raise SpecError("potential", f"required for {what}")


def cmd_spectrum(ctx: _Ctx) -> dict:
    from . import io
    from .fem import spectral_lower_bound
    from .scales import lowest_eigs, neighbour_couplings, nonresonance_report

    F = ctx.F
    count = ctx.num("count", 10, lo=2, integer=True)
    u = ctx.num("u", 0.0)
    v = ctx.num("v", 0.0)
    lam, V = lowest_eigs(F.K(u, v), F.M, count, spectral_lower_bound(F, v))
    rep = nonresonance_report(lam, neighbour_couplings(F.W, V))
    io.write_csv(ctx.out / "spectrum.csv", ["index", "eigenvalue", "coupling", "flags"], rep.rows())
    return {"dofs": F.n, "eigenvalues": lam[: min(len(lam), 10)], "nonresonance": rep.status,
            "notes": rep.notes}


def cmd_evolve(ctx: _Ctx) -> dict:
    import numpy as np

    from . import io
    from .propagator import evolve
    from .scales import lowest_eigs

    F = ctx.F
    ctl = io.load_control(io.require(ctx.p, "control", "params", dict), "params.control")
    T = ctx.num("T", ctl.T, lo=0.0, hi=ctl.T)
    init = ctx.num("initial", 0, lo=0, integer=True)
    modes = ctx.num("observe_modes", 3, lo=1, integer=True)
    every = ctx.num("output_every", 10, lo=1, integer=True)
    a0 = ctl.value(0.0)
    lam, V = lowest_eigs(F.K(float(a0), 0.0), F.M, max(modes, init + 1))
    rows = []
    counter = [0]
    MV = (F.M @ V[:, :modes]).conj()

    def observe(t, psi):
        if counter[0] % every == 0:
            ov = MV.T @ psi
            nrm = math.sqrt(abs(np.vdot(psi, F.M @ psi)))
            rows.append([float(t), nrm] + [x for z in ov for x in (float(z.real), float(z.imag))])
        counter[0] += 1

    res = evolve(F, ctl, V[:, init], 0.0, T, ctx.dt, store=False, observe=observe)
    if (counter[0] - 1) % every != 0:
        ov = MV.T @ res.final
        rows.append([float(res.times[-1]), float(res.norms[-1])]
                    + [x for z in ov for x in (float(z.real), float(z.imag))])
    header = ["t", "norm_M"] + [f"{p}_mode{k}" for k in range(modes) for p in ("re", "im")]
    io.write_csv(ctx.out / "trajectory.csv", header, rows)
    return {"steps": res.steps, "norm_drift": res.norm_drift, "T": T}


def cmd_gauge_check(ctx: _Ctx) -> dict:
    from . import io
    from .gauge import verify_form_equivalence

    _need_potential(ctx, "gauge-check")
    us = ctx.p.get("u", [1.0])
    if not isinstance(us, list) or not all(isinstance(x, (int, float)) for x in us):
        from .circuit import SpecError
        raise SpecError("params.u", "expected a list of numbers")
    count = ctx.num("count", 8, lo=1, integer=True)
    rows = []
    checks = []
    for u in us:
        chk = verify_form_equivalence(ctx.F, float(u), count, ctx.chi_bar if float(u) == 1.0 else None)
        checks.append({"u": float(u), "residual": chk.residual, "mass_residual": chk.mass_residual,
                       "spectral_difference": chk.spectral_difference})
        for k, (li, lb) in enumerate(zip(chk.eig_induction, chk.eig_boundary)):
            rel = abs(lb - li) / max(abs(li), 1.0)
            rows.append([float(u), k + 1, float(li), float(lb), rel, chk.residual])
    io.write_csv(ctx.out / "spectrum.csv",
                 ["u", "index", "eigenvalue_induction", "eigenvalue_boundary", "relative_difference",
                  "residual"], rows)
    return {"checks": checks, "max_residual": max(c["residual"] for c in checks)}


def cmd_stability(ctx: _Ctx) -> dict:
    import numpy as np

    from . import io
    from .scales import ScaleSpace, lowest_eigs, semibound
    from .stability import auxiliary_drive, lift_to_sawtooth, stability_experiment

    _need_potential(ctx, "stability")
    F = ctx.F
    v = io.load_control(io.require(ctx.p, "rate", "params", dict), "params.rate")
    if v.kind != "piecewise-constant":
        from .circuit import SpecError
        raise SpecError("params.rate.kind", "the stability study lifts a piecewise-constant rate")
    u0 = ctx.num("u0", 0.0)
    ns = ctx.p.get("ns", [4, 8, 16, 32])
    if not isinstance(ns, list) or not all(isinstance(n, int) and n >= 1 for n in ns):
        from .circuit import SpecError
        raise SpecError("params.ns", "expected a list of positive integers")
    n_probes = ctx.num("probes", 3, lo=1, integer=True)
    vmax = float(np.max(np.abs(v.values)))
    m = semibound(F, [u0 - vmax * v.T, u0, u0 + vmax * v.T], [-vmax, 0.0, vmax])
    S = ScaleSpace.build(F.K(u0, 0.0), F.M, m)
    _, probes = lowest_eigs(F.K(u0, 0.0), F.M, n_probes)
    fam = {n: lift_to_sawtooth(v, u0, n) for n in ns}
    study = stability_experiment(F, auxiliary_drive(v, u0), fam, 0.0, v.T, ctx.dt, S, probes)
    rows = [[r.n, r.lhs, r.strong, r.rhs, r.fitted_L, r.proof_L] for r in study.reports]
    io.write_csv(ctx.out / "stability.csv", ["n", "lhs_plus_minus", "lhs_strong", "rhs", "fitted_L",
                                             "proof_L"], rows)
    return {"fitted_L": study.fitted_L, "proof_L": study.proof_L, "c": study.c,
            "M_bound": study.M_bound, "slope": study.slope, "semibound": m, "seed": ctx.seed}


def _schedule_rows(stage: str, ctl, samples: int = 2001):
    import numpy as np
    if ctl is None or ctl.drive is None or ctl.T == 0:
        return []
    t = np.linspace(0.0, ctl.T, samples)
    drive = ctl.drive
    rows = []
    for x in t:
        a, b = drive(float(x))
        rows.append([stage, float(x), a, b])
    return rows


def _task(ctx: _Ctx):
    from .control import TransferTask
    return TransferTask(ctx.F, ctx.num("u0", 0.0), ctx.num("u1", ctx.num("u0", 0.0)),
                        ctx.num("source", 0, lo=0, integer=True), ctx.num("target", 1, lo=0, integer=True),
                        ctx.num("r", 1.0, lo=1e-12), ctx.num("eps", 0.01, lo=1e-12, hi=0.999999),
                        ctx.num("n_gal", 8, lo=2, integer=True), ctx.dt)


def cmd_control(ctx: _Ctx) -> dict:
    from . import io
    from .control import design_pwc_auxiliary, design_smooth, sawtooth_stage

    _need_potential(ctx, "control")
    task = _task(ctx)
    stages = ctx.p.get("stages", ["pwc", "sawtooth", "smooth"])
    allowed = {"pwc", "sawtooth", "smooth"}
    if not isinstance(stages, list) or not set(stages) <= allowed:
        from .circuit import SpecError
        raise SpecError("params.stages", f"expected a subset of {sorted(allowed)}")
    ns = ctx.p.get("ns", [16, 32, 64, 128, 256])
    report = {}
    rows = []
    pwc = None
    if "pwc" in stages or "sawtooth" in stages:
        pwc = design_pwc_auxiliary(task)
        report["pwc"] = {"T": pwc.T, "infidelity": pwc.infidelity,
                         **{k: v for k, v in pwc.info.items() if k in ("omega", "coupling", "amplitude")}}
        rows += _schedule_rows("pwc", pwc)
    if "sawtooth" in stages:
        saw = sawtooth_stage(task, pwc, ns)
        report["sawtooth"] = {"T": saw.T, "infidelity": saw.infidelity, "n": saw.info["n"],
                              "history": saw.info["history"]}
        rows += _schedule_rows("sawtooth", saw)
    if "smooth" in stages:
        sm = design_smooth(task)
        report["smooth"] = {"T": sm.T, "infidelity": sm.infidelity, "max_rate": sm.info["max_rate"],
                            "periods": sm.info["periods"], "amplitude": sm.info["amplitude"]}
        rows += _schedule_rows("smooth", sm)
    io.write_csv(ctx.out / "control.csv", ["stage", "t", "u", "du"], rows)
    return report


def cmd_boundary_control(ctx: _Ctx) -> dict:
    from . import io
    from .control import run_boundary_pipeline

    _need_potential(ctx, "boundary-control")
    task = _task(ctx)
    window = ctx.num("check_window", 0.0, lo=0.0)
    res = run_boundary_pipeline(task, check_window=window or None)
    io.write_csv(ctx.out / "control.csv", ["stage", "t", "u", "du"], _schedule_rows("smooth", res.control))
    return {"T": res.control.T, "infidelity": res.infidelity,
            "induction_infidelity": 1.0 - res.induction_fidelity ** 2, "distance": res.distance,
            "minus_distance": res.minus_distance,
            "gauge_check": res.gauge_check}


HANDLERS = {"spectrum": cmd_spectrum, "evolve": cmd_evolve, "gauge-check": cmd_gauge_check,
            "stability": cmd_stability, "control": cmd_control, "boundary-control": cmd_boundary_control}


def run(command: str, manifest_path: str | Path, out: str | Path) -> int:
    """Execute one manifest; returns the process exit status."""
    from . import io
    from .circuit import SpecError

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        except FileNotFoundError:
            raise SpecError("manifest", f"file not found: {manifest_path}") from None
        except json.JSONDecodeError as exc:
            raise SpecError("manifest", f"invalid JSON: {exc}") from None
        if not isinstance(manifest, dict):
            raise SpecError("manifest", "expected a JSON object")
        if "command" in manifest and manifest["command"] != command:
            raise SpecError("command", f"manifest is for {manifest['command']!r}, not {command!r}")
        ctx = _Ctx(manifest, Path(manifest_path).resolve().parent, out)
        result = HANDLERS[command](ctx)
    except SpecError as exc:
        record = {"command": command, "status": "error", "code": EXIT_SCHEMA, "field": exc.field,
                  "message": exc.message}
        io.write_json(out / "report.json", record)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_SCHEMA
    except (ArithmeticError, RuntimeError, ValueError, MemoryError, __import__("numpy").linalg.LinAlgError) as exc:
        record = {"command": command, "status": "error", "code": EXIT_NUMERIC,
                  "error": type(exc).__name__, "message": str(exc)}
        io.write_json(out / "report.json", record)
        print(json.dumps(record), file=sys.stderr)
        return EXIT_NUMERIC
    io.write_json(out / "report.json", {"command": command, "status": "ok", "result": result})
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="quasidelta", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--manifest", required=True, help="experiment manifest (JSON)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    args = ap.parse_args(argv)
    if args.threads < 1:
        ap.error("--threads must be positive")
    _set_threads(args.threads)
    return run(args.command, args.manifest, args.out)


if __name__ == "__main__":
    sys.exit(main())
