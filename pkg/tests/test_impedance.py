import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mirrorfreq import impedance as imp
from mirrorfreq.checks import brute_force_original
from mirrorfreq.impedance import ImpedanceDq, ImpedancePn, Injection, Side

F1 = 50.0

elem = st.builds(complex, st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
mat = arrays(np.complex128, (2, 2), elements=elem)


def test_a_z_is_unitary():
    assert np.allclose(imp.A_Z @ imp.A_Z.conj().T, np.eye(2), atol=1e-15)
    assert abs(abs(np.linalg.det(imp.A_Z)) - 1) < 1e-15


def test_matrix_shape_and_finiteness():
    with pytest.raises(ValueError):
        ImpedanceDq(1.0, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ImpedancePn(1.0, F1, [[np.nan, 0], [0, 1]])


def test_pn_accessors():
    z = ImpedancePn(20.0, F1, [[1, 2], [3, 4]])
    assert (z.f_p, z.f_n) == (70.0, -30.0)
    assert (z.pp, z.pn, z.np_, z.nn) == (1, 2, 3, 4)


@given(mat)
def test_round_trip(m):
    assert np.max(np.abs(imp.to_dq(imp.to_pn(m)) - m)) <= 1e-14 * max(1.0, np.max(np.abs(m)))


@given(mat)
def test_determinant_preserved(m):
    zdq = ImpedanceDq(5.0, m)
    d_dq, d_pn = imp.determinant_pair(zdq, imp.zdq_to_zpn(zdq, F1))
    assert abs(d_dq - d_pn) <= 1e-13 * max(1.0, np.max(np.abs(m)) ** 2)


@given(elem, elem)
def test_skew_symmetric_is_diagonal_in_pn(zx, zy):
    zdq = np.array([[zx, zy], [-zy, zx]])
    zpn = imp.to_pn(zdq)
    assert abs(zpn[0, 1]) + abs(zpn[1, 0]) <= 1e-14 * (1 + abs(zx) + abs(zy))
    zpp, znn = imp.mfd_pn_diagonal(imp.MfdStructure(zx, zy))
    assert abs(zpn[0, 0] - zpp) <= 1e-14 * (1 + abs(zx) + abs(zy))
    assert abs(zpn[1, 1] - znn) <= 1e-14 * (1 + abs(zx) + abs(zy))


def test_rl_branch_closed_form():
    zdq = imp.rl_branch_dq(0.02, 0.25, 30.0, F1)
    assert np.allclose(zdq, [[0.02 + 0.15j, -0.25], [0.25, 0.02 + 0.15j]])
    assert np.allclose(imp.to_pn(zdq), imp.rl_branch_pn(0.02, 0.25, 30.0, F1), atol=1e-15)
    ok, s = imp.mfd_classify(ImpedanceDq(30.0, zdq))
    assert ok and s.residual < 1e-15


def test_mfd_classify_generic_and_tolerance():
    z = ImpedancePn(10.0, F1, [[1, 0.04], [0.0, 2]])
    assert imp.mfd_classify(z, 0.05)[0]
    assert not imp.mfd_classify(z, 0.01)[0]
    assert imp.off_diagonal_ratio(z) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        imp.mfd_classify(z, 0.0)
    with pytest.raises(TypeError):
        imp.mfd_classify(np.eye(2))


def test_single_measurement_mfd():
    zx, zy = 0.3 + 0.1j, -0.7 + 0.2j
    id_, iq = 0.5 + 0.1j, -0.2 + 0.3j
    vd = zx * id_ + zy * iq
    vq = -zy * id_ + zx * iq
    s = imp.mfd_single_measurement_zdq(vd, vq, id_, iq)
    assert abs(s.zx - zx) < 1e-14 and abs(s.zy - zy) < 1e-14


def test_single_measurement_degenerate():
    # I_q = j I_d makes I_d^2 + I_q^2 vanish
    with pytest.raises(imp.DegenerateExcitationError):
        imp.mfd_single_measurement_zdq(1.0, 1.0, 1.0, 1j)


@given(mat)
def test_eig2_matches_numpy(m):
    l1, l2 = imp.eig2(m)
    ref = np.linalg.eigvals(m)
    scale = max(1.0, np.max(np.abs(ref)))
    d = min(max(abs(l1 - ref[0]), abs(l2 - ref[1])), max(abs(l1 - ref[1]), abs(l2 - ref[0])))
    # defective matrices lose half the digits
    assert d <= 1e-6 * scale


def test_safe_inv_singular():
    with pytest.raises(imp.SingularMatrixError):
        imp.safe_inv([[1, 2], [2, 4]])
    assert np.allclose(imp.safe_inv([[2, 0], [0, 4]]), [[0.5, 0], [0, 0.25]])


def test_admittance_transform_directions():
    y = np.array([[1, 2j], [3, 4]])
    assert np.allclose(imp.admittance_transform(imp.admittance_transform(y), "pn->dq"), y)
    with pytest.raises(ValueError):
        imp.admittance_transform(y, "ab->cd")


# -- original sequence impedances --------------------------------------------


def test_original_diagonal_case_reduces_to_diagonal():
    s = ImpedancePn(20.0, F1, np.diag([0.1 + 0.2j, 0.3 - 0.1j]))
    l = ImpedancePn(20.0, F1, np.diag([1.0 + 0.5j, 0.8 + 0.2j]))
    for inj in Injection:
        lp, sp = imp.original_from_modified(s, l, inj, "p")
        ln, sn = imp.original_from_modified(s, l, inj, "n")
        assert lp.value == pytest.approx(1.0 + 0.5j) and sp.value == pytest.approx(0.1 + 0.2j)
        assert ln.value == pytest.approx(0.8 + 0.2j) and sn.value == pytest.approx(0.3 - 0.1j)
        assert (lp.side, sp.side, lp.injection, ln.frequency) == (Side.LOAD, Side.SOURCE, inj, -30.0)


def test_original_frozen_values():
    s = ImpedancePn(20.0, F1, [[0.1 + 0.2j, 0.05], [0.02j, 0.3 - 0.1j]])
    l = ImpedancePn(20.0, F1, [[1.0 + 0.5j, 0.2 - 0.1j], [0.1, 0.8 + 0.2j]])
    got = {}
    for inj in Injection:
        for seq in "pn":
            lo, so = imp.original_from_modified(s, l, inj, seq)
            got[(inj.value, seq)] = (lo.value, so.value)
    for key, (lo, so) in got.items():
        bl, bs = brute_force_original(s.m, l.m, key[0], key[1])
        assert abs(lo - bl) < 1e-13 and abs(so - bs) < 1e-13
    # shunt and series differ once the subsystems couple the sequences
    assert abs(got[("shunt", "p")][0] - got[("series", "p")][0]) > 1e-3


@settings(max_examples=200)
@given(mat, mat, st.sampled_from(list(Injection)), st.sampled_from("pn"))
def test_original_matches_brute_force(s, l, inj, seq):
    s = s + 2 * np.eye(2)
    l = l + 2 * np.eye(2)
    try:
        lo, so = imp.original_from_modified(ImpedancePn(10.0, F1, s), ImpedancePn(10.0, F1, l), inj, seq)
        bl, bs = brute_force_original(s, l, inj, seq)
    except (imp.ResonanceError, np.linalg.LinAlgError):
        return
    if not (np.isfinite(bl) and np.isfinite(bs)) or max(abs(bl), abs(bs)) > 1e6:
        return
    assert abs(lo.value - bl) <= 1e-8 * max(1.0, abs(bl))
    assert abs(so.value - bs) <= 1e-8 * max(1.0, abs(bs))


def test_original_resonance_and_bad_sequence():
    # series: Z_nn,S + Z_nn,L = 0 has no solution
    s = ImpedancePn(10.0, F1, np.diag([1.0, 1.0j]))
    l = ImpedancePn(10.0, F1, np.diag([1.0, -1.0j]))
    with pytest.raises(imp.ResonanceError):
        imp.original_from_modified(s, l, Injection.SERIES, "p")
    with pytest.raises(ValueError):
        imp.original_from_modified(s, l, "shunt", "z")
