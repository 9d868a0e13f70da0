"""Minor-loop gain, characteristic loci and Nyquist encirclement counting.

The loci are sampled on a one-sided frequency grid.  The Nyquist contour is
closed by mirroring: for real-coefficient dq dynamics ``L(-jw) = conj(L(jw))``
so the negative-frequency branch is the complex conjugate of the sampled one,
traversed backwards.  The user asserts that source and load are each stable
on their own (the usual precondition of the generalized Nyquist criterion);
this is not checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .impedance import ImpedanceDq, ImpedancePn, eig2, safe_inv, to_pn

MARGINAL_TOL = 1e-9
MAX_ARG_STEP = math.pi / 4


@dataclass(frozen=True)
class MinorLoopPoint:
    f_dq: float
    L: np.ndarray
    lambda1: complex
    lambda2: complex


@dataclass(frozen=True)
class NyquistLoci:
    frequencies: np.ndarray
    locus1: np.ndarray
    locus2: np.ndarray
    closure: str = "conjugate-mirror"

    def __post_init__(self):
        n = len(self.frequencies)
        if len(self.locus1) != n or len(self.locus2) != n:
            raise ValueError("loci must match the frequency grid length")


@dataclass(frozen=True)
class GncVerdict:
    encirclements: int
    stable: bool
    margin: float
    critical_frequency: float
    marginal: bool = False
    grid_ok: bool = True
    max_arg_step: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "encirclements": self.encirclements,
            "stable": self.stable,
            "margin": self.margin,
            "critical_frequency": self.critical_frequency,
            "marginal": self.marginal,
            "grid_ok": self.grid_ok,
            "max_arg_step": self.max_arg_step,
            "notes": list(self.notes),
        }


def minor_loop_gain(zs, yl) -> MinorLoopPoint:
    """``L = Z_source @ Y_load`` with its closed-form eigenvalues.

    Both operands are either :class:`ImpedanceDq` or :class:`ImpedancePn`
    (the load admittance wrapped in the same type) at the same frequency.
    """
    if type(zs) is not type(yl):
        raise ValueError("source impedance and load admittance must share a domain")
    if zs.f_dq != yl.f_dq:
        raise ValueError(f"frequency mismatch: {zs.f_dq} vs {yl.f_dq}")
    L = zs.m @ yl.m
    l1, l2 = eig2(L)
    return MinorLoopPoint(zs.f_dq, L, l1, l2)


def minor_loop_from_impedances(zs, zl) -> MinorLoopPoint:
    y = safe_inv(zl.m, "load impedance")
    if isinstance(zl, ImpedancePn):
        return minor_loop_gain(zs, ImpedancePn(zl.f_dq, zl.f1, y))
    return minor_loop_gain(zs, ImpedanceDq(zl.f_dq, y))


def build_loci(points) -> NyquistLoci:
    """Order eigenvalues into two continuous trajectories.

    At each step the pairing with the smaller total distance to the previous
    point wins; ties keep the previous ordering.
    """
    points = list(points)
    if len(points) < 2:
        raise ValueError("need at least two frequency points")
    f = np.array([p.f_dq for p in points], dtype=float)
    if np.any(np.diff(f) <= 0):
        raise ValueError("frequency points must be strictly ascending")
    l1 = np.empty(len(points), complex)
    l2 = np.empty(len(points), complex)
    l1[0], l2[0] = points[0].lambda1, points[0].lambda2
    for k in range(1, len(points)):
        a, b = points[k].lambda1, points[k].lambda2
        keep = abs(a - l1[k - 1]) + abs(b - l2[k - 1])
        swap = abs(b - l1[k - 1]) + abs(a - l2[k - 1])
        if swap < keep:
            a, b = b, a
        l1[k], l2[k] = a, b
    return NyquistLoci(f, l1, l2)


def _arg_steps(z: np.ndarray) -> np.ndarray:
    return np.angle(z[1:] / z[:-1])


def _closed_contour(locus: np.ndarray) -> np.ndarray:
    # mirror branch (-f_max .. -f_min), sampled branch, back to the start
    return np.concatenate([np.conj(locus[::-1]), locus, np.conj(locus[-1:])])


def winding_number(path: np.ndarray, point: complex = -1 + 0j) -> float:
    rel = np.asarray(path) - point
    return float(np.sum(_arg_steps(rel)) / (2 * np.pi))


def count_encirclements(loci: NyquistLoci, point: complex = -1 + 0j) -> GncVerdict:
    if len(loci.frequencies) == 0:
        raise ValueError("empty loci")
    total = 0.0
    max_step = 0.0
    margin, f_crit = np.inf, float("nan")
    notes = []
    for locus in (loci.locus1, loci.locus2):
        d = np.abs(locus - point)
        k = int(np.argmin(d))
        if d[k] < margin:
            margin, f_crit = float(d[k]), float(loci.frequencies[k])
        if d[k] <= MARGINAL_TOL:
            continue
        total += winding_number(_closed_contour(locus), point)
        max_step = max(max_step, float(np.max(np.abs(_arg_steps(locus - point)))))
    if margin <= MARGINAL_TOL:
        return GncVerdict(0, False, margin, f_crit, marginal=True, grid_ok=True,
                          max_arg_step=max_step, notes=["locus passes through the critical point"])
    n = int(round(total))
    # clockwise encirclement counts as positive
    n = -n
    grid_ok = max_step <= MAX_ARG_STEP
    if not grid_ok:
        notes.append(
            f"argument step {max_step:.3f} rad exceeds {MAX_ARG_STEP:.3f}; refine the frequency grid"
        )
    return GncVerdict(abs(n), n == 0, margin, f_crit, marginal=False, grid_ok=grid_ok,
                      max_arg_step=max_step, notes=notes)


def loci_from_matrices(freqs, zs_list, zl_list) -> NyquistLoci:
    pts = [minor_loop_from_impedances(a, b) for a, b in zip(zs_list, zl_list)]
    order = np.argsort([p.f_dq for p in pts])
    return build_loci([pts[i] for i in order])


def eigenvalue_mismatch(ldq: np.ndarray, lpn: np.ndarray) -> float:
    """Order-matched distance between the eigenvalue sets of two 2x2 matrices."""
    a = eig2(ldq)
    b = eig2(lpn)
    d1 = max(abs(a[0] - b[0]), abs(a[1] - b[1]))
    d2 = max(abs(a[0] - b[1]), abs(a[1] - b[0]))
    return min(d1, d2)


def gnc_equivalence_check(sweep_s, sweep_l=None) -> float:
    """Max eigenvalue mismatch between L_dq and L_pn over a sweep.

    Accepts a combined sweep result (source and load in one record) or two
    sweeps; in the latter case the source side is taken from the first and
    the load side from the second.
    """
    sweep_l = sweep_s if sweep_l is None else sweep_l
    fs = [p.f_dq for p in sweep_s.points]
    fl = [p.f_dq for p in sweep_l.points]
    if fs != fl:
        raise ValueError("source and load sweeps use different frequency grids")
    worst = 0.0
    for ps, pl in zip(sweep_s.points, sweep_l.points):
        if not (ps.ok and pl.ok):
            continue
        ldq = ps.zdq_source @ safe_inv(pl.zdq_load)
        lpn = ps.zpn_source @ safe_inv(pl.zpn_load)
        scale = max(1.0, np.abs(eig2(ldq)).max())
        worst = max(worst, eigenvalue_mismatch(ldq, lpn) / scale)
    return worst


def transform_consistency(zdq_s, zdq_l) -> float:
    """Mismatch between L_dq and A_Z-transformed L_pn (exact similarity path)."""
    ldq = zdq_s @ safe_inv(zdq_l)
    lpn = to_pn(zdq_s) @ safe_inv(to_pn(zdq_l))
    return eigenvalue_mismatch(ldq, lpn)


def loci_deviation(a: NyquistLoci, b: NyquistLoci) -> np.ndarray:
    """Per-frequency relative set distance between two loci pairs."""
    if not np.array_equal(a.frequencies, b.frequencies):
        raise ValueError("loci on different grids")
    out = np.empty(len(a.frequencies))
    for k in range(len(out)):
        x = (a.locus1[k], a.locus2[k])
        y = (b.locus1[k], b.locus2[k])
        d = min(max(abs(x[0] - y[0]), abs(x[1] - y[1])), max(abs(x[0] - y[1]), abs(x[1] - y[0])))
        out[k] = d / max(abs(x[0]), abs(x[1]), 1e-12)
    return out
