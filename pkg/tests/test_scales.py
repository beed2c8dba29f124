import math

import numpy as np
import pytest

from oracles import dirichlet_interval_eigs, star_negative_eig
from quasidelta.scales import (NotPositiveDefinite, ScaleSpace, equivalence_constant, generalized_eig,
                               lowest_eigs, neighbour_couplings, nonresonance_report, norm_pm,
                               opnorm_minus_plus, opnorm_plus_minus, semibound)

from conftest import interval_family, star_family


def test_identity_pencil():
    M = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(generalized_eig(M, M)[0], 1.0)


def test_mass_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        generalized_eig(np.eye(2), np.diag([1.0, -1.0]))


def test_dirichlet_spectrum_sparse_path():
    F = interval_family(elements=2000)
    lam, V = lowest_eigs(F.K0, F.M, 5, lower=0.0)
    assert np.allclose(lam, dirichlet_interval_eigs(math.pi, 5), rtol=1e-5)
    G = V.conj().T @ (F.M @ V)
    assert np.allclose(G, np.eye(5), atol=1e-10)


def test_semibound_examples():
    F = star_family(elements=40, delta=0.0, chi_bar=(0.0, 0.0))
    assert semibound(F) == pytest.approx(1e-6)
    Fa = star_family(elements=400, delta=-2.0, chi_bar=None)
    m = semibound(Fa)
    assert m > 0
    assert -m + 1e-6 == pytest.approx(star_negative_eig(-2.0), rel=1e-4)


def _scale(F, m=1e-6):
    return ScaleSpace.build(F.K0, F.M, m)


def test_norm_examples():
    F = star_family(elements=20)
    S = _scale(F)
    x = S.V[:, 0]
    assert S.a[0] == pytest.approx(1.0 + generalized_eig(F.K0, F.M, subset=(0, 0))[0][0] + 1e-6)
    # synthetic eigenvector with a = 9: scale a mass-normalised vector by hand
    S9 = ScaleSpace(S.M, S.K_ref, S.m, np.full_like(S.a, 9.0), S.V)
    assert norm_pm(S9, x, 1) == pytest.approx(3.0 * norm_pm(S9, x, 0))
    assert norm_pm(S9, x, -1) == pytest.approx(norm_pm(S9, x, 0) / 3.0)
    S1 = ScaleSpace(S.M, S.K_ref, S.m, np.ones_like(S.a), S.V)
    assert norm_pm(S1, x, 1) == pytest.approx(norm_pm(S1, x, -1))
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.standard_normal(F.n) + 1j * rng.standard_normal(F.n)
        assert norm_pm(S, y, -1) <= norm_pm(S, y, 0) * (1 + 1e-12) <= norm_pm(S, y, 1) * (1 + 1e-12)
    assert norm_pm(S, y, 0) == pytest.approx(math.sqrt(np.vdot(y, F.M @ y).real))


def test_opnorm_examples():
    F = star_family(elements=20)
    S = _scale(F, 0.5)
    assert opnorm_plus_minus(S, S.A) == pytest.approx(1.0)
    assert opnorm_plus_minus(S, np.zeros((F.n, F.n))) == 0.0
    assert opnorm_plus_minus(S, F.M) == pytest.approx(1.0 / S.a[0])
    # the sup definition: |x^* X y| <= ||X|| ||x||_+ ||y||_+
    rng = np.random.default_rng(1)
    nW = opnorm_plus_minus(S, F.W)
    for _ in range(20):
        x = rng.standard_normal(F.n) + 1j * rng.standard_normal(F.n)
        y = rng.standard_normal(F.n) + 1j * rng.standard_normal(F.n)
        assert abs(np.vdot(x, F.W @ y)) <= nW * norm_pm(S, x, 1) * norm_pm(S, y, 1) * (1 + 1e-10)


def test_opnorm_minus_plus_of_inverse():
    F = star_family(elements=15)
    S = _scale(F, 0.2)
    assert opnorm_minus_plus(S, np.linalg.inv(S.A)) == pytest.approx(1.0)


def test_equivalence_constant_examples():
    F = star_family(elements=20)
    A = _scale(F).A
    assert equivalence_constant(A, [A]) == pytest.approx(1.0)
    assert equivalence_constant(A, [A, 4 * A]) == pytest.approx(2.0)


def _induction_c(elements):
    F = star_family(elements=elements)
    m = semibound(F, np.linspace(0, 1, 5))
    A_ref = F.K(0.0, 0.0).toarray() + (m + 1) * F.M.toarray()
    fam = [F.K(u, 0.0).toarray() + (m + 1) * F.M.toarray() for u in np.linspace(0, 1, 5)]
    return equivalence_constant(A_ref, fam)


def test_equivalence_constant_mesh_stable():
    c1, c2 = _induction_c(40), _induction_c(80)
    assert math.isfinite(c1) and c1 >= 1
    assert abs(c1 - c2) <= 0.05 * c2


def test_nonresonance_examples():
    lam = dirichlet_interval_eigs(math.pi, 4)
    rep = nonresonance_report(lam, [1.0, 1.0, 1.0])
    assert rep.status == "FLAG" and (0, 1, 3, 5) in rep.rational_hits
    rep = nonresonance_report([1.0, 2.3, 7.1], [0.0, 0.0])
    assert rep.status == "FLAG" and "zero coupling" in rep.notes
    F = star_family(elements=100, delta=0.4, chi_bar=(0.0, math.pi))
    lam, V = lowest_eigs(F.K0, F.M, 6)
    rep = nonresonance_report(lam, neighbour_couplings(F.W, V))
    assert rep.status == "PASS"
    with pytest.raises(ValueError):
        nonresonance_report([1.0], [])
