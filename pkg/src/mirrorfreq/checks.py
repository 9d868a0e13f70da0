"""Invariant suite behind ``mirrorfreq validate``.

Every check returns a :class:`CheckResult` with the worst observed value and
the tolerance it was held to.  Two fault modes exist as negative controls:
``"perturbed-az"`` swaps in a slightly non-unitary transform matrix and
``"oracle-bias"`` scales the extracted oracle impedances by 1.01.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import phasor as ph
from .impedance import (A_Z, ImpedanceDq, ImpedancePn, Injection, mfd_classify, original_from_modified,
                        rl_branch_dq, to_dq, to_pn)
from .stability import eigenvalue_mismatch

FAULTS = ("perturbed-az", "oracle-bias")

# 40 points, 2 Hz - 1 kHz
ORACLE_GRID = (
    2, 3, 4, 5, 6, 8, 10, 12, 15, 18, 22, 27, 33, 40, 45, 55, 60, 70, 80, 90,
    110, 130, 150, 175, 200, 240, 280, 330, 400, 450, 500, 550, 600, 650, 700,
    750, 800, 850, 900, 1000,
)

ORACLE_MAG_TOL = 0.01
ORACLE_DEG_TOL = 2.0
ROUNDTRIP_TOL = 1e-14
DET_TOL = 1e-13
EIG_TOL = 1e-12
APPENDIX_D_TOL = 1e-10
PARK_TOL = 1e-12
SPECTRAL_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail}


def random_matrices(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2)))


def perturbed_az(eps: float = 1e-3) -> np.ndarray:
    """A_Z with one entry nudged; no longer unitary."""
    a = A_Z.copy()
    a[0, 0] *= 1 + eps
    return a


def _similar(a, m):
    # the transform as used in practice: A m A^H, which relies on A being unitary
    return a @ m @ a.conj().T


def check_roundtrip(n: int = 10_000, seed: int = 1) -> CheckResult:
    ms = random_matrices(np.random.default_rng(seed), n)
    worst = 0.0
    for m in ms:
        back = to_dq(to_pn(m))
        worst = max(worst, float(np.max(np.abs(back - m)) / max(1.0, np.max(np.abs(m)))))
    return CheckResult("transform round trip", worst <= ROUNDTRIP_TOL, worst, ROUNDTRIP_TOL,
                       f"{n} random matrices")


def check_determinant(n: int = 10_000, seed: int = 2, a_z: Optional[np.ndarray] = None) -> CheckResult:
    a = A_Z if a_z is None else a_z
    ms = random_matrices(np.random.default_rng(seed), n)
    worst = 0.0
    for m in ms:
        d_dq = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        p = _similar(a, m)
        d_pn = p[0, 0] * p[1, 1] - p[0, 1] * p[1, 0]
        worst = max(worst, abs(d_pn - d_dq) / max(1.0, abs(d_dq)))
    return CheckResult("det(Z_dq) = det(Z_pn)", worst <= DET_TOL, float(worst), DET_TOL,
                       f"{n} random matrices")


def check_eigenvalues(n: int = 10_000, seed: int = 3, a_z: Optional[np.ndarray] = None) -> CheckResult:
    a = A_Z if a_z is None else a_z
    rng = np.random.default_rng(seed)
    zs = random_matrices(rng, n)
    zl = random_matrices(rng, n) + 3 * np.eye(2)
    worst = 0.0
    for s, l in zip(zs, zl):
        ldq = s @ np.linalg.inv(l)
        lpn = _similar(a, s) @ np.linalg.inv(_similar(a, l))
        scale = max(1.0, float(np.max(np.abs(np.linalg.eigvals(ldq)))))
        worst = max(worst, eigenvalue_mismatch(ldq, lpn) / scale)
    return CheckResult("eig(L_dq) = eig(L_pn)", worst <= EIG_TOL, float(worst), EIG_TOL,
                       f"{n} random source/load pairs")


def check_mfd_structure(n: int = 10_000, seed: int = 4) -> CheckResult:
    """Skew-symmetric dq <=> diagonal pn, tested in both directions."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    for k in range(n):
        zx, zy = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        zdq = np.array([[zx, zy], [-zy, zx]])
        zpn = to_pn(zdq)
        off = max(abs(zpn[0, 1]), abs(zpn[1, 0])) / max(abs(zpn[0, 0]), abs(zpn[1, 1]))
        worst = max(worst, off)
        ok_fwd, _ = mfd_classify(ImpedancePn(10.0, 50.0, zpn), rel_tol=1e-9)
        d = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        back = to_dq(np.diag(d))
        skew = max(abs(back[0, 0] - back[1, 1]), abs(back[0, 1] + back[1, 0])) / np.max(np.abs(back))
        worst = max(worst, skew)
        ok_back, _ = mfd_classify(ImpedanceDq(10.0, back), rel_tol=1e-9)
        # a generic matrix must not classify as MFD
        g = random_matrices(rng, 1)[0]
        ok_generic, _ = mfd_classify(ImpedanceDq(10.0, g), rel_tol=0.05)
        if not (ok_fwd and ok_back) or ok_generic:
            failures += 1
    return CheckResult("MFD structure (both implications)", failures == 0 and worst <= 1e-12,
                       float(worst), 1e-12, f"{failures} misclassified of {n}")


def brute_force_original(source: np.ndarray, load: np.ndarray, injection, sequence: str):
    """Original sequence impedances (load, source) from the raw interface equations.

    Unknowns ``[VpL, VnL, VpS, VnS, IpL, InL, IpS, InS]``.  Four generalized
    Ohm's law rows, three interconnection rows for the injection type and
    one normalization row for the injected sequence.
    """
    injection = Injection(injection)
    A = np.zeros((8, 8), dtype=complex)
    b = np.zeros(8, dtype=complex)
    VPL, VNL, VPS, VNS, IPL, INL, IPS, INS = range(8)
    rows = [
        {VPL: 1, IPL: -load[0, 0], INL: -load[0, 1]},
        {VNL: 1, IPL: -load[1, 0], INL: -load[1, 1]},
        {VPS: 1, IPS: -source[0, 0], INS: -source[0, 1]},
        {VNS: 1, IPS: -source[1, 0], INS: -source[1, 1]},
    ]
    inj, other = (IPL, INL) if sequence == "p" else (INL, IPL)
    if injection is Injection.SHUNT:
        rows += [{VPL: 1, VPS: -1}, {VNL: 1, VNS: -1}, {other: 1, other + 2: 1}]
        # normalization on the shared voltage of the injected sequence
        rows.append({VPL if sequence == "p" else VNL: 1})
    else:
        rows += [{IPL: 1, IPS: 1}, {INL: 1, INS: 1}]
        vo = VNL if sequence == "p" else VPL
        rows += [{vo: 1, vo + 2: -1}, {inj: 1}]
    for r, row in enumerate(rows):
        for col, val in row.items():
            A[r, col] = val
    b[7] = 1.0
    x = np.linalg.solve(A, b)
    # each side is referred to its own current
    if sequence == "p":
        return x[VPL] / x[IPL], x[VPS] / x[IPS]
    return x[VNL] / x[INL], x[VNS] / x[INS]


def check_appendix_d(n: int = 10_000, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        s = random_matrices(rng, 1)[0] + 2 * np.eye(2)
        l = random_matrices(rng, 1)[0] + 2 * np.eye(2)
        zs, zl = ImpedancePn(10.0, 50.0, s), ImpedancePn(10.0, 50.0, l)
        for inj in Injection:
            for seq in "pn":
                lo, so = original_from_modified(zs, zl, inj, seq)
                bl, bs = brute_force_original(s, l, inj, seq)
                err = max(abs(lo.value - bl) / max(1.0, abs(bl)), abs(so.value - bs) / max(1.0, abs(bs)))
                worst = max(worst, err)
    return CheckResult("original-sequence formulas vs brute force", worst <= APPENDIX_D_TOL,
                       float(worst), APPENDIX_D_TOL, f"{n} random pairs x 4 variants")


def check_park_roundtrip(n: int = 200, samples: int = 500, seed: int = 6) -> CheckResult:
    """inverse_park(park(x)) = x on random zero-sequence-free series."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = rng.standard_normal((2, samples))
        abc = ph.ThreePhaseSeries(1e4, a, b, -(a + b))
        theta = rng.uniform(-np.pi, np.pi, samples)
        back = ph.inverse_park(ph.park_transform(abc, theta), theta)
        worst = max(worst, float(max(np.max(np.abs(back.a - abc.a)), np.max(np.abs(back.b - abc.b)),
                                     np.max(np.abs(back.c - abc.c)))))
    return CheckResult("Park round trip", worst <= PARK_TOL, worst, PARK_TOL,
                       f"{n} random series x {samples} samples")


def dq_tone_to_abc(vd: complex, vq: complex, f_dq: float, f1: float = 50.0, fs: float = 10_000.0,
                   duration: float = 1.0) -> ph.ThreePhaseSeries:
    t = np.arange(int(round(fs * duration))) / fs
    d = np.real(vd * np.exp(2j * np.pi * f_dq * t))
    q = np.real(vq * np.exp(2j * np.pi * f_dq * t))
    return ph.inverse_park(ph.DqSeries(fs, d, q), ph.fixed_ramp(f1, t))


def check_frequency_mapping(n: int = 20, seed: int = 7, f1: float = 50.0) -> CheckResult:
    """A dq tone at f lands on exactly f + f1 and |f - f1| in abc; nothing elsewhere."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f = float(rng.integers(1, 400))
        if f == f1:
            continue
        vd, vq = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        abc = dq_tone_to_abc(vd, vq, f, f1)
        fs = abc.sample_rate
        for ch in (abc.a, abc.b, abc.c):
            spec = np.abs(np.fft.rfft(ch)) * 2 / len(ch)
            lines = [int(f + f1), int(abs(f - f1))]
            peak = spec[lines].max()
            rest = np.delete(spec, lines)
            worst = max(worst, float(rest.max() / peak))
    return CheckResult("dq tone -> two abc lines", worst <= SPECTRAL_TOL, worst, SPECTRAL_TOL,
                       f"{n} random tones, all 1 Hz bins up to {fs / 2:g} Hz")


def check_sequence_purity(n: int = 20, seed: int = 8, f1: float = 50.0) -> CheckResult:
    """The f + f1 line is positive sequence, the f - f1 line negative sequence."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f = float(rng.integers(f1 + 1, 400))
        vd, vq = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        abc = dq_tone_to_abc(vd, vq, f, f1)
        pos = ph.symmetric_components(*ph.extract_abc(abc, f + f1, (0.0, 1.0), f1))
        neg = ph.symmetric_components(*ph.extract_abc(abc, f - f1, (0.0, 1.0), f1))
        worst = max(worst, pos[1].amplitude / pos[0].amplitude, neg[0].amplitude / neg[1].amplitude)
    return CheckResult("sequence purity of the two lines", worst <= SPECTRAL_TOL, float(worst), SPECTRAL_TOL,
                       f"{n} random tones")


def check_phasor_composition(n: int = 10_000, seed: int = 9, f1: float = 50.0) -> CheckResult:
    """dq -> sequence -> dq and sequence -> dq -> sequence are the identity."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        f = float(rng.integers(1, 1000))
        vd, vq, vp, vn = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        p, m = ph.dq_phasor_to_sequence(ph.HarmonicPhasor(vd, f, ph.Frame.DQ_D),
                                        ph.HarmonicPhasor(vq, f, ph.Frame.DQ_Q), f1)
        (d1, q1), (d2, q2) = ph.sequence_to_dq_phasor(p, f1), ph.sequence_to_dq_phasor(m, f1)
        e1 = max(abs(d1.value + d2.value - vd), abs(q1.value + q2.value - vq))
        sp = ph.HarmonicPhasor(vp, f + f1, ph.Frame.SEQ_POSITIVE)
        sn = ph.HarmonicPhasor(vn, f - f1, ph.Frame.SEQ_NEGATIVE)
        (dp, qp), (dn, qn) = ph.sequence_to_dq_phasor(sp, f1), ph.sequence_to_dq_phasor(sn, f1)
        p2, n2 = ph.dq_phasor_to_sequence(ph.HarmonicPhasor(dp.value + dn.value, f, ph.Frame.DQ_D),
                                          ph.HarmonicPhasor(qp.value + qn.value, f, ph.Frame.DQ_Q), f1)
        e2 = max(abs(p2.value - vp), abs(n2.value - vn))
        worst = max(worst, e1, e2)
    return CheckResult("dq <-> sequence phasor composition", worst <= PARK_TOL, float(worst), PARK_TOL,
                       f"{n} random phasor pairs, both orders")


def check_two_tone_example(f1: float = 50.0) -> CheckResult:
    """I_d = 0.06/_80, I_q = 0.09/_30 at 80 Hz splits into pure 130 Hz and 30 Hz sets."""
    vd, vq = ph.polar(0.06, 80.0), ph.polar(0.09, 30.0)
    abc = dq_tone_to_abc(vd, vq, 80.0, f1)
    ip, in_ = ph.dq_phasor_to_sequence(ph.HarmonicPhasor(vd, 80.0, ph.Frame.DQ_D),
                                       ph.HarmonicPhasor(vq, 80.0, ph.Frame.DQ_Q), f1)
    mp, mn = ph.sequence_phasors(abc, 130.0, 30.0, (0.0, 1.0), f1)
    p130 = ph.symmetric_components(*ph.extract_abc(abc, 130.0, (0.0, 1.0), f1))
    p30 = ph.symmetric_components(*ph.extract_abc(abc, 30.0, (0.0, 1.0), f1))
    err = max(abs(mp.value - ip.value) / ip.amplitude, abs(mn.value - in_.value) / in_.amplitude,
              p130[1].amplitude / p130[0].amplitude, p30[0].amplitude / p30[1].amplitude)
    detail = (f"I_p {ip.amplitude:.4f}/_{ip.angle_deg:.1f} deg at {ip.frequency:g} Hz, "
              f"I_n {in_.amplitude:.4f}/_{in_.angle_deg:.1f} deg at {in_.frequency:g} Hz")
    return CheckResult("80 Hz dq tone -> 30/130 Hz split", err <= SPECTRAL_TOL, float(err), SPECTRAL_TOL, detail)


def phasor_suite() -> list:
    return [check_park_roundtrip(), check_frequency_mapping(), check_sequence_purity(),
            check_phasor_composition(), check_two_tone_example()]


def oracle_errors(result, bias: float = 1.0) -> tuple:
    """Worst magnitude (relative) and phase (deg) error of an oracle sweep."""
    cfg = result.metadata["config"]
    f1 = result.metadata["f1"]
    sides = {"source": (cfg["source"]["R"], cfg["source"]["X"]),
             "load": (cfg["load"]["R"], cfg["load"]["X"])}
    mag, deg = 0.0, 0.0
    for p in result.points:
        if not p.ok:
            return math.inf, math.inf
        for side, (r, x) in sides.items():
            ref_dq = rl_branch_dq(r, x, p.f_dq, f1)
            for ext, ref in ((p.zdq(side).m, ref_dq), (p.zpn(side).m, to_pn(ref_dq))):
                ext = bias * ext
                scale = np.max(np.abs(ref))
                for e, z in zip(ext.ravel(), ref.ravel()):
                    if abs(z) <= 1e-9 * scale:
                        # structurally zero entry: bounded by the matrix scale
                        mag = max(mag, abs(e) / scale)
                        continue
                    mag = max(mag, abs(abs(e) - abs(z)) / abs(z))
                    deg = max(deg, abs(math.degrees(np.angle(e / z))))
    return mag, deg


def check_oracle(grid=ORACLE_GRID, bias: float = 1.0, threads: Optional[int] = None) -> CheckResult:
    from .simcore import preset
    from .sweep import SweepPlan, run_sweep

    t0 = time.perf_counter()
    res = run_sweep(SweepPlan(tuple(grid), "shunt", preset("oracle-rl")), threads=threads)
    elapsed = time.perf_counter() - t0
    mag, deg = oracle_errors(res, bias)
    passed = mag <= ORACLE_MAG_TOL and deg <= ORACLE_DEG_TOL
    return CheckResult("oracle extraction", passed, mag, ORACLE_MAG_TOL,
                       f"phase {deg:.3g} deg (tol {ORACLE_DEG_TOL:g}), {len(grid)} points in {elapsed:.1f} s")


def run_suite(fault: Optional[str] = None, n: int = 10_000, threads: Optional[int] = None) -> list:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault mode {fault!r}; expected one of {FAULTS}")
    a_z = perturbed_az() if fault == "perturbed-az" else None
    bias = 1.01 if fault == "oracle-bias" else 1.0
    return phasor_suite() + [
        check_oracle(bias=bias, threads=threads),
        check_roundtrip(n),
        check_determinant(n, a_z=a_z),
        check_eigenvalues(n, a_z=a_z),
        check_mfd_structure(n),
        check_appendix_d(n),
    ]
