import numpy as np
import pytest

from mirrorfreq import checks


def test_algebraic_checks_pass():
    for check in (checks.check_roundtrip, checks.check_determinant, checks.check_eigenvalues,
                  checks.check_mfd_structure, checks.check_appendix_d):
        r = check(500)
        assert r.passed, r.line()


def test_phasor_suite_passes():
    for r in checks.phasor_suite():
        assert r.passed, r.line()


def test_perturbed_transform_breaks_determinant():
    a = checks.perturbed_az()
    assert not np.allclose(a @ a.conj().T, np.eye(2))
    assert not checks.check_determinant(200, a_z=a).passed
    # L_pn stays similar to L_dq for any invertible A, so eigenvalues survive
    assert checks.check_eigenvalues(200, a_z=a).passed


def test_oracle_bias_is_caught():
    clean = checks.check_oracle(grid=(5, 60, 400))
    biased = checks.check_oracle(grid=(5, 60, 400), bias=1.01)
    assert clean.passed and clean.value < 1e-5
    assert not biased.passed and biased.value == pytest.approx(0.01, rel=1e-3)


def test_brute_force_diagonal_pair():
    s, l = np.diag([0.1 + 0.2j, 0.3]), np.diag([1.0 + 0.5j, 0.8 - 0.2j])
    for inj in ("shunt", "series"):
        assert checks.brute_force_original(s, l, inj, "p") == pytest.approx((1.0 + 0.5j, 0.1 + 0.2j))
        assert checks.brute_force_original(s, l, inj, "n") == pytest.approx((0.8 - 0.2j, 0.3))


def test_unknown_fault_rejected():
    with pytest.raises(ValueError, match="unknown fault"):
        checks.run_suite("zap", n=10)


def test_result_line_format():
    r = checks.CheckResult("x", False, 0.5, 0.1, "why")
    assert r.line() == "[FAIL] x: 5.000e-01 (tol 1.0e-01) why"
    assert r.to_dict()["passed"] is False
