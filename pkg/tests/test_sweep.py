import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mirrorfreq import sweep as sw
from mirrorfreq.checks import oracle_errors
from mirrorfreq.impedance import Injection, rl_branch_dq, to_pn
from mirrorfreq.simcore import preset

ORACLE_GRID = (3, 30, 80, 150, 700)


@pytest.fixture(scope="module")
def oracle():
    return sw.run_sweep(sw.SweepPlan(ORACLE_GRID, "shunt", preset("oracle-rl")))


elem = st.builds(complex, st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))


@given(arrays(np.complex128, (2, 2), elements=elem))
def test_solve_point_recovers_matrix(z):
    i1, i2 = np.array([1.0, 0.3j]), np.array([0.2, -1.0 + 0.5j])
    got, cond = sw.solve_point(z @ i1, z @ i2, i1, i2)
    assert np.allclose(got, z, atol=1e-12) and cond < 10


def test_solve_point_dependent_injections():
    i = np.array([1.0, 0.5j])
    with pytest.raises(sw.LinearDependenceError):
        sw.solve_point(i, 2 * i, i, 2 * i)


def test_plan_excludes_fundamental_collisions():
    plan = sw.SweepPlan((10, 50, 100, 20), "shunt", preset("A1"))
    # f_p = 2 f1 collides with the mirror of the fundamental; f_n = 0 is kept (DC)
    assert plan.f_dq_list == (10.0, 20.0, 50.0)
    assert [f for f, _ in plan.excluded] == [100.0]
    assert 50 not in sw.DEFAULT_GRID and 100 not in sw.DEFAULT_GRID


def test_dc_negative_sequence_point_is_flagged():
    res = sw.run_sweep(sw.SweepPlan((50,), "shunt", preset("oracle-rl")))
    assert res.points[0].flags == ["dc-negative-sequence"]


def test_plan_rejects_off_grid_and_duplicates():
    with pytest.raises(ValueError, match="1 Hz grid"):
        sw.SweepPlan((10.5,), "shunt", preset("A1"))
    with pytest.raises(ValueError, match="distinct"):
        sw.SweepPlan((10, 10), "shunt", preset("A1"))
    with pytest.raises(ValueError):
        sw.SweepPlan((10,), "shunt", preset("A1"), sides="middle")


def test_default_plan_band_limits():
    plan = sw.default_plan("A1", "series", fmin=100, fmax=300)
    assert min(plan.f_dq_list) >= 100 and max(plan.f_dq_list) <= 300
    assert plan.injection_kind is Injection.SERIES


def test_oracle_matches_closed_form(oracle):
    mag, deg = oracle_errors(oracle)
    assert mag < 1e-5 and deg < 1e-3
    p = oracle.points[1]
    ref = rl_branch_dq(0.02, 0.25, 30.0, 50.0)
    assert np.allclose(p.zdq_source, ref, rtol=1e-5, atol=1e-6)
    assert np.allclose(p.zpn_source, to_pn(ref), rtol=1e-5, atol=1e-6)


def test_oracle_points_are_clean(oracle):
    for p in oracle.points:
        assert p.ok and not p.flags
        assert p.amplitude == oracle.metadata["amplitude_pu"]
        assert p.residual < sw.LINEARITY_TOL


def test_method_b_agrees_on_oracle(oracle):
    for p in oracle.points:
        for side in sw.SIDES:
            zpn = getattr(p, f"zpn_{side}")
            assert np.max(np.abs(sw.method_b(p, side) - zpn)) < 1e-6 * np.max(np.abs(zpn))


def test_fold_negative_frequency(oracle):
    low, high = oracle.points[0], oracle.points[-1]
    f = sw.fold_negative_frequency(low)
    assert f["folded"] and f["f_n_reported"] == 47 and f["sequence_n"] == "p"
    assert f["z_nn_source"] == pytest.approx(np.conj(low.zpn_source[1, 1]))
    g = sw.fold_negative_frequency(high)
    assert not g["folded"] and g["z_nn_load"] == pytest.approx(high.zpn_load[1, 1])
    # folded value is the RL branch seen by a positive sequence at 47 Hz
    assert f["z_nn_source"] == pytest.approx(0.02 + 0.25j * 47 / 50, rel=1e-5)


def test_fold_table_examples():
    for f_dq, reported in ((40, 10), (15, 35)):
        p = sw.SweepPoint(float(f_dq), 50.0)
        f = sw.fold_negative_frequency(p)
        assert f["folded"] and f["f_n_reported"] == reported


def test_determinant_per_point(sweep_of):
    for p in sweep_of("A2").ok_points():
        for side in sw.SIDES:
            a, b = np.linalg.det(p.zdq(side).m), np.linalg.det(p.zpn(side).m)
            assert abs(a - b) <= 1e-10 * abs(a)


def test_amplitude_independence():
    plan = sw.SweepPlan((20, 170, 600), "shunt", preset("A2"))
    lo = sw.run_sweep(plan, amplitude=0.01)
    hi = sw.run_sweep(plan, amplitude=0.04)
    for a, b in zip(lo.points, hi.points):
        for side in sw.SIDES:
            za, zb = getattr(a, f"zdq_{side}"), getattr(b, f"zdq_{side}")
            assert np.max(np.abs(za - zb)) / np.max(np.abs(za)) < 0.02


def test_json_round_trip(oracle, tmp_path):
    path = tmp_path / "s.json"
    oracle.to_json(path)
    back = sw.SweepResult.from_json(path)
    assert back.to_dict() == json.loads(path.read_text())
    assert np.array_equal(back.points[2].zpn_load, oracle.points[2].zpn_load)
    with pytest.raises(ValueError):
        sw.SweepResult.from_dict({"schema": "other"})


def test_csv_layout(oracle, tmp_path):
    oracle.to_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0].startswith("f_dq_Hz,f_p_Hz,f_n_Hz,fold,ok,Zdq_source_dd_mag_pu,Zdq_source_dd_deg")
    assert len(rows) == len(ORACLE_GRID) + 1
    assert rows[1].split(",")[:5] == ["3", "53", "-47", "1", "1"]


def test_thread_count_env_override(monkeypatch):
    monkeypatch.setenv("MIRRORFREQ_THREADS", "3")
    assert sw._thread_count(8) == 3
    monkeypatch.delenv("MIRRORFREQ_THREADS")
    assert sw._thread_count(None) == 1 and sw._thread_count(5) == 5


def test_result_independent_of_threads(oracle):
    again = sw.run_sweep(sw.SweepPlan(ORACLE_GRID, "shunt", preset("oracle-rl")), threads=3)
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(oracle.to_dict(), sort_keys=True)


def test_tone_residual_of_pure_tone_is_zero():
    t = np.arange(1000) / 1000.0
    x = 0.3 + 0.02 * np.cos(2 * np.pi * 7 * t + 0.4)
    ph = 0.02 * np.exp(0.4j)
    assert sw._tone_residual(x, t, 7.0, ph) < 1e-12
    # an added second harmonic shows up in proportion
    y = x + 0.002 * np.cos(2 * np.pi * 14 * t)
    assert sw._tone_residual(y, t, 7.0, ph) == pytest.approx(0.1 / np.sqrt(1.01), rel=1e-9)


def test_large_injection_is_scaled_down():
    # near the A1 resonance a 0.2 pu probe is far outside the small-signal range
    res = sw.run_sweep(sw.SweepPlan((175,), "shunt", preset("A1")), amplitude=0.2)
    p = res.points[0]
    assert p.ok and p.amplitude < 0.2
    assert p.residual <= sw.LINEARITY_TOL


def test_direct_original_on_passive_pair(oracle):
    for p in oracle.points:
        d = sw.direct_original(p, "shunt")
        assert d["source_p"] == pytest.approx(0.02 + 0.25j * p.f_p / 50, rel=1e-5)
        assert d["load_n"] == pytest.approx(1.0 + 0.3j * p.f_n / 50, rel=1e-5)
