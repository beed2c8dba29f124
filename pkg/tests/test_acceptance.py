"""Acceptance suite: one PASS/FAIL line per criterion (1-9).

Lines are printed when each test runs and repeated in the terminal summary.
"""

import math
import time

import numpy as np

from oracles import dirichlet_interval_eigs, star_symmetric_eigs
from quasidelta.boundary import partial_cayley, vertex_projector, vertex_unitary
from quasidelta.circuit import ControlFunction, Incidence, ramp_control
from quasidelta.control import TransferTask, design_pwc_auxiliary, run_boundary_pipeline, sawtooth_stage
from quasidelta.fem import spectral_lower_bound, vertex_flux_residual
from quasidelta.gauge import verify_form_equivalence
from quasidelta.propagator import evolve, propagator_matrix, simon_bound_check
from quasidelta.scales import ScaleSpace, generalized_eig, lowest_eigs, semibound
from quasidelta.stability import auxiliary_drive, lift_to_sawtooth, stability_experiment

from conftest import interval_family, record_acceptance, star_family


def _report(number, title, checks, details):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    status = "PASS" if ok else "FAIL"
    line = f"criterion {number}: {status} {title} | {details}"
    if failed:
        line += f" | failed: {', '.join(failed)}"
    record_acceptance(line)
    assert ok, line


def test_criterion_1_spectral_correctness():
    t0 = time.perf_counter()
    ref = dirichlet_interval_eigs(math.pi, 5)
    errs = {}
    for N in (1000, 2000):
        F = interval_family(elements=N)
        lam, _ = lowest_eigs(F.K0, F.M, 5, spectral_lower_bound(F))
        errs[N] = np.abs(lam - ref) / ref
    elapsed = time.perf_counter() - t0
    ratios = errs[1000] / errs[2000]
    checks = {"rel_err<=1e-5": bool(np.max(errs[2000]) <= 1e-5),
              "halving_ratio_4+-0.5": bool(np.all(np.abs(ratios - 4.0) <= 0.5)),
              "runtime<=10s": elapsed <= 10.0}
    _report(1, "Dirichlet spectrum", checks,
            f"max rel err {np.max(errs[2000]):.2e}, ratios {np.round(ratios, 3).tolist()}, {elapsed:.1f}s")


def test_criterion_2_quasi_delta_vertex_law():
    N = 400
    h = 1.0 / N
    F = star_family(elements=N, delta=0.4, chi_bar=None)
    lam, V = lowest_eigs(F.K0, F.M, 6, spectral_lower_bound(F))
    i = F.dofs.vertex_dof["v"]
    sym = [k for k in range(len(lam)) if abs(V[i, k]) > 1e-6]
    ref = star_symmetric_eigs(0.4, 3)
    rel = np.abs(lam[sym[:3]] - ref) / ref
    ground = vertex_flux_residual(F, V[:, 0])["v"]
    corrected = max(vertex_flux_residual(F, V[:, k], lam[k])["v"] for k in sym[:3])
    checks = {"secular_rel<=1e-4": bool(np.max(rel) <= 1e-4),
              "ground_flux<=10h": ground <= 10 * h,
              "symmetric_flux<=10h": corrected <= 10 * h}
    _report(2, "quasi-delta vertex law", checks,
            f"max rel err {np.max(rel):.2e}, ground flux {ground / h:.2f}h, "
            f"corrected flux {corrected / h:.2f}h")


def test_criterion_3_cayley_identity():
    rng = np.random.default_rng(20261019)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        chi = rng.uniform(0, 2 * math.pi, d)
        delta = rng.uniform(-0.95 * math.pi, 0.95 * math.pi)
        C = partial_cayley(vertex_unitary(chi, delta))
        worst = max(worst, float(np.max(np.abs(C + math.tan(delta / 2) * vertex_projector(chi)))))
    block = partial_cayley(vertex_unitary([0.0, 0.0], math.pi / 2))
    block_err = float(np.max(np.abs(block + vertex_projector([0.0, 0.0]))))
    # scaled error over the full open interval, for information
    full = 0.0
    for _ in range(1000):
        chi = rng.uniform(0, 2 * math.pi, 3)
        delta = rng.uniform(-math.pi, math.pi)
        C = partial_cayley(vertex_unitary(chi, delta))
        err = float(np.max(np.abs(C + math.tan(delta / 2) * vertex_projector(chi))))
        full = max(full, err / max(1.0, math.tan(delta / 2) ** 2))
    checks = {"random_draws<=1e-12": worst <= 1e-12, "block_pi/2<=1e-12": block_err <= 1e-12}
    _report(3, "partial Cayley identity", checks,
            f"worst {worst:.1e} over 1000 draws with |delta|<0.95pi, block {block_err:.1e}, "
            f"full-range error/tan^2 {full:.1e}")


def test_criterion_4_gauge_equivalence():
    F = star_family(elements=100, chi_bar=(0.0, math.pi / 2))
    chi_bar = {Incidence("v", "e1", 1): 0.0, Incidence("v", "e2", 1): math.pi / 2}
    chk = verify_form_equivalence(F, 1.0, None, chi_bar=chi_bar)
    checks = {"residual<=1e-10": chk.residual <= 1e-10, "spectra<=1e-10": chk.spectral_difference <= 1e-10}
    _report(4, "gauge equivalence", checks,
            f"residual {chk.residual:.1e}, spectral {chk.spectral_difference:.1e} over {F.n} eigenvalues")


def test_criterion_5_propagator_axioms():
    F = star_family(elements=50)
    ctl = ControlFunction("piecewise-linear", [0.0, 0.5, 1.0], [0.0, 0.5], [1.0, -0.5])
    lam, V = generalized_eig(F.K0, F.M, subset=(0, 2))
    psi0 = V @ np.array([1.0, 1.0j, 0.5]) / 1.5
    drift = evolve(F, ctl, psi0, 0.0, 1.0, 1e-3, store=False).norm_drift
    dt = 0.01
    U_tr = propagator_matrix(F, ctl, 0.0, 1.0, dt)
    U_sr = propagator_matrix(F, ctl, 0.0, 0.43, dt)
    U_ts = propagator_matrix(F, ctl, 0.43, 1.0, dt)
    comp = float(np.max(np.abs(U_ts @ U_sr - U_tr)))
    lam0, V0 = generalized_eig(F.K(0.5, 0.0), F.M, subset=(0, 0))
    const = ControlFunction("piecewise-constant", [0.0, 1.0], [0.5])
    errs = []
    for h in (0.02, 0.01, 0.005):
        psi = evolve(F, const, V0[:, 0], 0.0, 1.0, h, store=False).final
        errs.append(float(np.max(np.abs(psi - np.exp(-1j * lam0[0]) * V0[:, 0]))))
    order = float(np.min(np.log2(np.array(errs[:-1]) / np.array(errs[1:]))))
    checks = {"norm<=1e-10": drift <= 1e-10, "composition<=1e-8": comp <= 1e-8, "phase_order>=1.8": order >= 1.8}
    _report(5, "propagator axioms", checks,
            f"norm drift {drift:.1e}, composition {comp:.1e}, phase order {order:.2f}")


def test_criterion_6_simon_bounds():
    F = star_family(elements=50)
    lam, V = generalized_eig(F.K0, F.M, subset=(0, 1))
    psi0 = (V[:, 0] + V[:, 1]) / math.sqrt(2)
    rep = simon_bound_check(F, ramp_control(0.0, 1.0, 1.0), psi0, 0.0, 1.0, dt=1e-3, samples=41)
    checks = {"plus_margin>=0": rep.plus_margin >= 0, "minus_margin>=0": rep.minus_margin >= 0}
    _report(6, "propagator norm bounds", checks,
            f"plus margin {rep.plus_margin:.3e}, minus margin {rep.minus_margin:.3e}, int C {rep.integral[-1]:.3f}")


def test_criterion_7_stability():
    t0 = time.perf_counter()
    F = star_family(elements=200)
    v = ControlFunction("piecewise-constant", [0.0, 0.3, 0.7, 1.0], [0.9, 0.1, 0.6])
    m = semibound(F, np.linspace(-1, 1, 3), [0.0, 1.0])
    S = ScaleSpace.build(F.K0, F.M, m)
    _, probes = lowest_eigs(F.K0, F.M, 3)
    ns = (4, 8, 16, 32, 64, 128)
    fam = {n: lift_to_sawtooth(v, 0.0, n) for n in ns}
    st = stability_experiment(F, auxiliary_drive(v, 0.0), fam, 0.0, 1.0, 1.0 / 1024, S, probes)
    elapsed = time.perf_counter() - t0
    strong = [r.strong for r in st.reports]
    checks = {"lhs<=L*rhs": all(r.lhs <= st.fitted_L * r.rhs * (1 + 1e-12) for r in st.reports),
              "slope_in[-1.4,-0.6]": -1.4 <= st.slope <= -0.6,
              "strong_monotone": all(b <= 1.1 * a for a, b in zip(strong, strong[1:])),
              "runtime<=600s": elapsed <= 600}
    _report(7, "propagator stability", checks,
            f"{F.n} dofs, fitted L {st.fitted_L:.4f} (a-priori {st.proof_L:.2f}), slope {st.slope:.3f}, "
            f"strong {[f'{s:.2e}' for s in strong]}, {elapsed:.0f}s")


def test_criterion_8_controllability():
    t0 = time.perf_counter()
    F = star_family(elements=100)
    task = TransferTask(F, 0.0, 0.0, 0, 1, r=1.0, eps=0.01, dt=1e-3)
    pwc = design_pwc_auxiliary(task)
    saw = sawtooth_stage(task, pwc, (16, 32, 64, 128, 256))
    btask = TransferTask(F, 0.0, 0.25, 0, 1, r=1.0, eps=0.01, dt=1e-3)
    pipe = run_boundary_pipeline(btask, check_window=0.1)
    sm = pipe.control
    f = sm.field
    t = np.linspace(0.0, f.T, 20001)
    max_rate = float(np.max(np.abs(f.derivative(t))))
    extra = pipe.infidelity - sm.infidelity
    elapsed = time.perf_counter() - t0
    checks = {"pwc<=0.01": pwc.infidelity <= 0.01,
              "sawtooth<=0.01": saw.infidelity <= 0.01 and saw.info["n"] <= 256,
              "smooth<=0.01": sm.infidelity <= 0.01,
              "u(0)=u0": abs(f.value(0.0) - 0.0) <= 1e-12,
              "u(T)=u1": abs(f.value(f.T) - 0.25) <= 1e-9,
              "|u'|<=r": max_rate <= 1.0,
              "boundary_extra<=1e-3": extra <= 1e-3,
              "runtime<=1800s": elapsed <= 1800}
    _report(8, "controllability", checks,
            f"pwc {pwc.infidelity:.1e} (T={pwc.T:.3f}), sawtooth {saw.infidelity:.1e} (n={saw.info['n']}), "
            f"smooth {sm.infidelity:.1e} (T={sm.T:.3f}, max|u'|={max_rate:.3f}), "
            f"boundary {pipe.infidelity:.1e} (extra {extra:.1e}, picture check {pipe.gauge_check:.1e}), "
            f"{elapsed:.0f}s")


def test_criterion_9_cli_determinism(tmp_path):
    from quasidelta import cli
    from quasidelta.io import read_csv_body
    from conftest import ROOT
    runs = [("spectrum", "dirichlet_spectrum.json", "spectrum.csv"),
            ("spectrum", "star_spectrum.json", "spectrum.csv"),
            ("gauge-check", "star_gauge.json", "spectrum.csv"),
            ("evolve", "star_evolve.json", "trajectory.csv"),
            ("stability", "star_stability.json", "stability.csv"),
            ("control", "star_control.json", "control.csv")]
    checks = {}
    for command, manifest, out_csv in runs:
        bodies = []
        for k in range(2):
            out = tmp_path / f"{manifest}-{k}"
            code = cli.main([command, "--manifest", str(ROOT / "manifests" / manifest), "--out", str(out)])
            bodies.append((code, read_csv_body(out / out_csv), (out / "report.json").read_text()))
        checks[manifest] = bodies[0] == bodies[1] and bodies[0][0] == 0
    _report(9, "CLI determinism", checks, f"{len(runs)} manifests run twice, CSV bodies and reports compared")
