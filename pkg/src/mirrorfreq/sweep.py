"""Frequency sweep: injections, phasor extraction and impedance solves.

For each dq frequency two runs are made: a positive sequence injection at
``f_dq + f1`` and a reversed-order injection at ``f_dq - f1``.  From the same
pair of runs both subsystems are identified, in both domains:

* dq: Park transform with the fixed ramp, single-bin DFT at f_dq
* modified sequence: symmetric components of the abc phasors at f_p and f_n

Negative sequence quantities at a negative f_n are kept in the signed
convention (so ``Z_pn = A_Z Z_dq inv(A_Z)`` holds exactly); the folded
positive-sequence view at |f_n| is derived on demand by conjugation.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .impedance import ImpedanceDq, ImpedancePn, SingularMatrixError, to_pn
from .phasor import extract_dq, fixed_ramp, park_transform, sequence_phasors
from .simcore import (CaseConfig, DivergenceError, InjectionKind, InjectionSpec, Model,
                      build_case, equilibrium, run_time_domain)

COND_LIMIT = 1e6
# residual (rms, relative to the perturbation) not explained by DC + the probe tone
LINEARITY_TOL = 0.02
AMPLITUDE_STEPS = 4

# log-spaced at low frequency, dense where the A-case loci pass close to
# (-1, 0); 50 Hz (DC negative sequence) and 100 Hz (collision) are left out
DEFAULT_GRID = (
    2, 3, 4, 5, 6, 8, 10, 12, 15, 18, 22, 27, 33, 40, 45, 55, 60, 70, 80, 90,
    110, 120, 130, 140, 150, 155, 160, 165, 170, 175, 180, 185, 190, 195, 200,
    205, 210, 215, 220, 230, 240, 250, 260, 280, 300, 330, 360, 400, 450, 500,
    550, 600, 650, 700, 800, 900, 1000,
)

SIDES = ("source", "load")


class LinearDependenceError(SingularMatrixError):
    pass


@dataclass
class SweepPlan:
    f_dq_list: tuple
    injection_kind: InjectionKind
    case: CaseConfig
    sides: str = "both"
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        self.injection_kind = InjectionKind(self.injection_kind)
        if self.sides not in ("source", "load", "both"):
            raise ValueError("sides must be 'source', 'load' or 'both'")
        f1 = self.case.f1
        freqs = []
        for f in self.f_dq_list:
            if f < 1 or abs(f - round(f)) > 1e-9:
                raise ValueError(f"f_dq={f} is not on the 1 Hz grid (>= 1 Hz)")
            f = float(round(f))
            if abs(f - f1) == f1 or f + f1 == f1:
                self.excluded.append((f, "injection frequency collides with the fundamental"))
                continue
            freqs.append(f)
        if len(set(freqs)) != len(freqs):
            raise ValueError("f_dq values must be distinct")
        self.f_dq_list = tuple(sorted(freqs))


def default_plan(case, injection="shunt", fmin=None, fmax=None, grid=None) -> SweepPlan:
    cfg = build_case(case).config if isinstance(case, str) else case
    freqs = list(DEFAULT_GRID if grid is None else grid)
    if fmin is not None:
        freqs = [f for f in freqs if f >= fmin]
    if fmax is not None:
        freqs = [f for f in freqs if f <= fmax]
    return SweepPlan(tuple(freqs), InjectionKind(injection), cfg)


def solve_point(v1, v2, i1, i2, cond_limit: float = COND_LIMIT):
    """``Z = [V1 V2] @ inv([I1 I2])`` for two runs of phasor pairs.

    Returns ``(Z, cond)``; raises :class:`LinearDependenceError` when the
    injections did not produce independent currents.
    """
    V = np.column_stack([np.asarray(v1, complex), np.asarray(v2, complex)])
    I = np.column_stack([np.asarray(i1, complex), np.asarray(i2, complex)])
    cond = float(np.linalg.cond(I))
    if not math.isfinite(cond) or cond > cond_limit:
        raise LinearDependenceError("current matrix is singular; the injections are not independent", cond)
    return V @ np.linalg.inv(I), cond


@dataclass
class SweepPoint:
    f_dq: float
    f1: float
    zdq_source: Optional[np.ndarray] = None
    zdq_load: Optional[np.ndarray] = None
    zpn_source: Optional[np.ndarray] = None
    zpn_load: Optional[np.ndarray] = None
    cond: dict = field(default_factory=dict)
    phasors: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    error: Optional[str] = None
    amplitude: Optional[float] = None
    residual: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def f_p(self):
        return self.f_dq + self.f1

    @property
    def f_n(self):
        return self.f_dq - self.f1

    @property
    def folded(self) -> bool:
        return self.f_n < 0

    def zdq(self, side) -> ImpedanceDq:
        return ImpedanceDq(self.f_dq, getattr(self, f"zdq_{side}"))

    def zpn(self, side) -> ImpedancePn:
        return ImpedancePn(self.f_dq, self.f1, getattr(self, f"zpn_{side}"))


def fold_negative_frequency(point: SweepPoint) -> dict:
    """Positive-sequence view of the negative sequence diagonal below f1.

    A negative sequence set at -w is a positive sequence set at +w; with
    real signals its phasor is the conjugate, so ``Z_nn(-w) -> conj(Z_nn)``
    relabelled as positive sequence at |f_n|.  Above f1 this is the
    identity.
    """
    out = {"f_dq": point.f_dq, "f_n": point.f_n, "folded": point.folded,
           "f_n_reported": abs(point.f_n), "sequence_n": "p" if point.folded else "n"}
    for side in SIDES:
        m = getattr(point, f"zpn_{side}")
        if m is None:
            continue
        out[f"z_nn_{side}"] = complex(np.conj(m[1, 1])) if point.folded else complex(m[1, 1])
    return out


@dataclass
class SweepResult:
    points: list
    metadata: dict

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.f_dq for p in self.points])

    def ok_points(self):
        return [p for p in self.points if p.ok]

    def flagged(self):
        return [p for p in self.points if not p.ok or p.flags]

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        def cm(m):
            if m is None:
                return None
            return [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in m]

        def cp(d):
            return {k: {"re": float(v.real), "im": float(v.imag)} for k, v in d.items()}

        pts = []
        for p in self.points:
            pts.append({
                "f_dq": p.f_dq, "f_p": p.f_p, "f_n": p.f_n,
                "Z_dq_source": cm(p.zdq_source), "Z_dq_load": cm(p.zdq_load),
                "Z_pn_source": cm(p.zpn_source), "Z_pn_load": cm(p.zpn_load),
                "fold": p.folded, "flags": list(p.flags), "error": p.error,
                "condition_numbers": dict(p.cond),
                "amplitude_pu": p.amplitude, "tone_residual": p.residual,
                "phasors": {run: cp(d) for run, d in p.phasors.items()},
            })
        return {"schema": "mirrorfreq.sweep", "schema_version": 1,
                "metadata": self.metadata, "points": pts}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        if d.get("schema") != "mirrorfreq.sweep" or d.get("schema_version") != 1:
            raise ValueError("not a version-1 sweep result document")
        f1 = d["metadata"]["f1"]

        def um(m):
            if m is None:
                return None
            return np.array([[complex(v["re"], v["im"]) for v in row] for row in m])

        pts = []
        for r in d["points"]:
            pts.append(SweepPoint(
                f_dq=r["f_dq"], f1=f1,
                zdq_source=um(r["Z_dq_source"]), zdq_load=um(r["Z_dq_load"]),
                zpn_source=um(r["Z_pn_source"]), zpn_load=um(r["Z_pn_load"]),
                cond=r.get("condition_numbers", {}), flags=r.get("flags", []), error=r.get("error"),
                amplitude=r.get("amplitude_pu"), residual=r.get("tone_residual"),
                phasors={run: {k: complex(v["re"], v["im"]) for k, v in ph.items()}
                         for run, ph in r.get("phasors", {}).items()},
            ))
        return cls(pts, d["metadata"])

    @classmethod
    def from_json(cls, path) -> "SweepResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path):
        entries = (("dd", 0, 0), ("dq", 0, 1), ("qd", 1, 0), ("qq", 1, 1))
        pn_entries = (("pp", 0, 0), ("pn", 0, 1), ("np", 1, 0), ("nn", 1, 1))
        header = ["f_dq_Hz", "f_p_Hz", "f_n_Hz", "fold", "ok"]
        mats = []
        for side in SIDES:
            for dom, names in (("dq", entries), ("pn", pn_entries)):
                for nm, i, j in names:
                    mats.append((f"z{dom}_{side}", i, j))
                    header += [f"Z{dom}_{side}_{nm}_mag_pu", f"Z{dom}_{side}_{nm}_deg"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for p in self.points:
                row = [f"{p.f_dq:.12g}", f"{p.f_p:.12g}", f"{p.f_n:.12g}", int(p.folded), int(p.ok)]
                for attr, i, j in mats:
                    m = getattr(p, attr)
                    if m is None:
                        row += ["", ""]
                    else:
                        v = m[i, j]
                        row += [f"{abs(v):.12g}", f"{math.degrees(np.angle(v)):.12g}"]
                w.writerow(row)


# --------------------------------------------------------------------------
# execution


def _thread_count(threads: Optional[int]) -> int:
    env = os.environ.get("MIRRORFREQ_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(threads or 1))


def _tone_residual(x: np.ndarray, t: np.ndarray, f: float, phasor: complex) -> float:
    x = x - np.mean(x)
    fit = np.real(phasor * np.exp(2j * np.pi * f * t))
    scale = np.sqrt(np.mean(x * x))
    return float(np.sqrt(np.mean((x - fit) ** 2)) / scale) if scale > 0 else 0.0


def _measure(record, f_dq: float, f1: float, window):
    """dq and sequence phasors of the four interface signals of one run.

    Also returns the worst tone residual of the dq currents: the share of
    the perturbation not explained by a single tone at f_dq.  Large values
    mean the response left the small-signal regime.
    """
    theta = fixed_ramp(f1, record.time)
    sig = {"Vs": record.interface_v, "Vl": record.load_v, "Is": record.source_i, "Il": record.load_i}
    out = {}
    residual = 0.0
    for name, abc in sig.items():
        dq = park_transform(abc, theta)
        d, q = extract_dq(dq, f_dq, window, f1)
        p, n = sequence_phasors(abc, f_dq + f1, f_dq - f1, window, f1)
        out[f"{name}_d"], out[f"{name}_q"] = d.value, q.value
        out[f"{name}_p"], out[f"{name}_n"] = p.value, n.value
        if name in ("Is", "Il"):
            t = dq.time
            w = (t >= window[0] - 1e-12) & (t < window[1] - 1e-12)
            residual = max(residual, _tone_residual(dq.d[w], t[w], f_dq, d.value),
                           _tone_residual(dq.q[w], t[w], f_dq, q.value))
    return out, residual


def _run_one(model, x0, spec, settle, window_len, f1):
    rec = run_time_domain(model, spec, settle + window_len, x0=x0, record_from=settle)
    return _measure(rec, spec.f_inj, f1, (settle, settle + window_len))


def _run_gated(model, x0, spec, settle, window_len, f1):
    """Run one injection, shrinking the amplitude until the response is linear.

    Returns ``(phasors, residual, amplitude)``; phasors is the last
    exception when every attempt diverged.
    """
    amp = spec.amplitude
    last = None
    for _ in range(AMPLITUDE_STEPS):
        s = InjectionSpec(spec.kind, spec.f_inj, amp, spec.run_index)
        try:
            ph, res = _run_one(model, x0, s, settle, window_len, f1)
            last = (ph, res, amp)
            if res <= LINEARITY_TOL:
                return last
        except DivergenceError as exc:
            if last is None or isinstance(last[0], Exception):
                last = (exc, float("inf"), amp)
        amp /= 4
    return last


def run_sweep(plan: SweepPlan, threads: Optional[int] = None, amplitude: Optional[float] = None,
              model: Optional[Model] = None, progress=None) -> SweepResult:
    cfg = plan.case
    model = build_case(cfg) if model is None else model
    sim = cfg.sim
    amp = sim.injection_amplitude if amplitude is None else amplitude
    f1 = cfg.f1
    x0 = equilibrium(model)
    jobs = []
    for f in plan.f_dq_list:
        for run in (1, 2):
            jobs.append((f, run, InjectionSpec(plan.injection_kind, f, amp, run)))

    def work(job):
        f, run, spec = job
        try:
            return _run_gated(model, x0, spec, sim.settle, sim.window, f1)
        finally:
            if progress is not None:
                progress(f, run)

    n_threads = _thread_count(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    points = []
    for k, f in enumerate(plan.f_dq_list):
        (r1, res1, a1), (r2, res2, a2) = results[2 * k], results[2 * k + 1]
        pt = SweepPoint(f, f1, amplitude=min(a1, a2), residual=max(res1, res2))
        if f - f1 == 0:
            pt.flags.append("dc-negative-sequence")
        if isinstance(r1, Exception) or isinstance(r2, Exception):
            pt.error = f"divergent run: {r1 if isinstance(r1, Exception) else r2}"
            pt.residual = None
            points.append(pt)
            continue
        if pt.residual > LINEARITY_TOL:
            pt.flags.append("nonlinear-response")
        pt.phasors = {"run1": r1, "run2": r2}
        try:
            _solve_all(pt, r1, r2, plan)
        except LinearDependenceError as exc:
            pt.error = str(exc)
        points.append(pt)

    meta = {
        "tool_version": __version__,
        "case": cfg.name,
        "f1": f1,
        "injection": plan.injection_kind.value,
        "amplitude_pu": amp,
        "linearity_tol": LINEARITY_TOL,
        "settle_s": sim.settle,
        "window_s": sim.window,
        "dt_s": sim.dt,
        "sides": plan.sides,
        "excluded": [[f, why] for f, why in plan.excluded],
        "config": cfg.to_dict(),
    }
    return SweepResult(points, meta)


def _solve_all(pt: SweepPoint, r1: dict, r2: dict, plan: SweepPlan):
    series = plan.injection_kind is InjectionKind.SERIES
    for side, vkey, ikey in (("source", "Vs", "Is"), ("load", "Vl" if series else "Vs", "Il")):
        if plan.sides not in (side, "both"):
            continue
        zdq, cdq = solve_point(
            (r1[f"{vkey}_d"], r1[f"{vkey}_q"]), (r2[f"{vkey}_d"], r2[f"{vkey}_q"]),
            (r1[f"{ikey}_d"], r1[f"{ikey}_q"]), (r2[f"{ikey}_d"], r2[f"{ikey}_q"]))
        zpn, cpn = solve_point(
            (r1[f"{vkey}_p"], r1[f"{vkey}_n"]), (r2[f"{vkey}_p"], r2[f"{vkey}_n"]),
            (r1[f"{ikey}_p"], r1[f"{ikey}_n"]), (r2[f"{ikey}_p"], r2[f"{ikey}_n"]))
        setattr(pt, f"zdq_{side}", zdq)
        setattr(pt, f"zpn_{side}", zpn)
        pt.cond[f"{side}_dq"] = cdq
        pt.cond[f"{side}_pn"] = cpn


def direct_original(point: SweepPoint, injection: InjectionKind) -> dict:
    """Original sequence impedances measured directly from the single-sequence runs.

    Run 1 is a pure positive sequence injection (gives Z_p), run 2 a pure
    negative sequence injection at the signed f_n (gives Z_n).
    """
    r1, r2 = point.phasors["run1"], point.phasors["run2"]
    vl = "Vl" if InjectionKind(injection) is InjectionKind.SERIES else "Vs"
    return {
        "load_p": r1[f"{vl}_p"] / r1["Il_p"],
        "load_n": r2[f"{vl}_n"] / r2["Il_n"],
        "source_p": r1["Vs_p"] / r1["Is_p"],
        "source_n": r2["Vs_n"] / r2["Is_n"],
    }


def method_b(point: SweepPoint, side: str) -> np.ndarray:
    """Modified sequence matrix obtained by transforming the extracted dq matrix."""
    return to_pn(getattr(point, f"zdq_{side}"))
