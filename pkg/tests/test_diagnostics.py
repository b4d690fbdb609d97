import numpy as np
import pytest

from afred.diagnostics import (CONDITIONS, SamplePlan, _bounded, _decays, adiabatic_regularity_audit,
                               cokernel_ratio, dt_bound_audit, eps_samples, estimate_moduli, verify_family)
from afred.fredholm import kernel_cokernel
from afred.models import make_cubic, make_identity_family, make_linear_family, make_toy_shrink

SMALL = SamplePlan(n_eps=4, n_gamma=4, n_dirs=64, bins=12, levels=6)


def test_path_helpers():
    assert _bounded([1.0, 2.0, 2.0, 2.0, 2.1])
    assert not _bounded([1.0, 1.0, 1.0, 2.0, 4.0, 8.0])
    assert not _bounded([1.0, np.inf])
    assert _decays([1.0, 0.5, 0.25, 0.125, 0.0])
    assert _decays(np.zeros(5))
    assert not _decays([1.0, 1.0, 1.0, 1.0])
    assert not _decays([1.0, 0.5, 0.01, 0.5, 0.0])


def test_eps_samples_include_corners_and_path():
    toy = make_toy_shrink()
    pts = eps_samples(toy, SamplePlan(n_eps=3, levels=2, extra_eps=((0.04, 0.0),)))
    for p in ([0, 0], [1, 0.01], [0.5, 0.005], [0.25, 0.0025], [0.04, 0.0]):
        assert any(np.allclose(p, q) for q in pts)
    assert len(pts) == len({tuple(p) for p in pts})


def test_verify_identity_family():
    rep = verify_family(make_identity_family(2), SMALL)
    assert rep.passed and tuple(rep.entries) == CONDITIONS
    det = rep["fredholm"].details
    assert (det["dim_K"], det["dim_C"]) == (0, 0)
    assert rep["eps0_fredholm_estimate"].value == pytest.approx(1.0)
    assert rep.to_dict()["failed"] == []


def test_verify_toy_and_broken():
    rep = verify_family(make_toy_shrink(), SMALL)
    assert rep.passed, rep.failed()
    # exact envelope: |(2x + y, x)| over |gamma| = r peaks at eps = 1 with slope sqrt(3 + sqrt(8)) = 1 + sqrt(2)
    slope = rep["quadratic_ish"].value
    assert 0.95 * (1 + np.sqrt(2)) <= slope <= (1 + np.sqrt(2)) * (1 + 1e-12)
    broken = verify_family(make_toy_shrink(broken=True), SMALL)
    assert broken.failed() == ["cokernel_bound"]


def test_cokernel_ratio_closed_form():
    broken = make_toy_shrink(broken=True)
    kc = kernel_cokernel(broken)
    # the fast cokernel direction carries weight 1/eps
    assert cokernel_ratio(broken, kc, np.array([0.04, 0.0])) == pytest.approx(5.0)
    assert cokernel_ratio(broken, kc, np.array([0.0, 0.0])) == pytest.approx(1.0)
    toy = make_toy_shrink()
    assert cokernel_ratio(toy, kernel_cokernel(toy), np.array([0.04, 0.0])) == pytest.approx(1.0)


def test_estimate_moduli_linear():
    A = np.diag([1.0, 2.0])
    est = estimate_moduli(make_linear_family(A), SMALL)
    assert est.provenance == "estimated"
    assert est.C1F == pytest.approx(SMALL.safety * 2.0)
    assert np.all(est.modulus_c.values == 0.0)
    assert est.C0 == pytest.approx(SMALL.safety * 1.0)


def test_estimate_moduli_passes_declared_through():
    toy = make_toy_shrink()
    est = estimate_moduli(toy, SMALL)
    decl = toy.declared_constants
    assert est.provenance == "declared"
    assert (est.C0, est.C1, est.C_cok, est.C1F) == (decl.C0, decl.C1, decl.C_cok, decl.C1F)
    assert est.exceedances == []


def test_adiabatic_regularity_toy_and_linear():
    rep = adiabatic_regularity_audit(make_toy_shrink(), 1, SamplePlan(n_eps=4, n_gamma=4, n_dirs=64, bins=12))
    assert rep.passed and rep.details["decays"]
    # the fast weight 1/sqrt(eps) times an O(eps) difference: each halving divides by sqrt(2)
    col = np.array(rep.details["pointwise"][0]["sup_difference"])
    np.testing.assert_allclose(col[1:] / col[:-1], 2 ** -0.5, rtol=1e-2)
    lin = adiabatic_regularity_audit(make_identity_family(2), 2, SMALL)
    assert lin.passed
    assert lin.details["bounds"] == {"C1_F": pytest.approx(1.0), "C2_F": 0.0}
    assert max(lin.details["moduli"]["c1_F"]["values"]) == 0.0
    with pytest.raises(ValueError):
        adiabatic_regularity_audit(make_toy_shrink(), 3, SMALL)
    with pytest.raises(ValueError):
        adiabatic_regularity_audit(make_toy_shrink(), 1, SMALL, mode="other")


def test_dt_bound_examples():
    lin = dt_bound_audit(make_linear_family(np.diag([1.0, 3.0])), 1, SMALL, n_samples=16)
    # block-diagonal D T F meets the bound with equality whenever the fibre entry is short
    assert lin.passed and lin.value == pytest.approx(1.0, rel=1e-6)
    zero = dt_bound_audit(make_linear_family(np.zeros((2, 2))), 2, SMALL, n_samples=4)
    assert zero.passed and zero.value == 0.0
    cubic = dt_bound_audit(make_cubic(), 2, SMALL, n_samples=16)
    assert cubic.passed and 0 < cubic.value < 10
