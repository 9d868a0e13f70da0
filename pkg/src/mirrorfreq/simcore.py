"""Averaged time-domain models of the source/load converter cases.

All quantities are per unit on the AC base; time is in seconds.  The
network is written with complex space vectors in the global synchronous
frame (``theta = 2 pi f_n t``), which for a balanced three-wire system is
equivalent to integrating the abc equations.  Recorded interface signals are
mapped back to abc with the inverse Park transform.

Topology (Fig. 4 style)::

    source converter --Z_S--> (v_S) [series injection] (v_L) --Z_L--> load converter
                                   ^ shunt injection current into the node

The source converter regulates the terminal voltage of its filter through a
virtual inductance and a PI loop; the load converter is current controlled
with decoupling feed-forward, optionally with a DC-link voltage loop and an
SRF-PLL.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numba
import numpy as np
from scipy import optimize

from .impedance import Injection
from .phasor import SQRT_3_2, DqSeries, ThreePhaseSeries, balanced_set, fixed_ramp, inverse_park

# state layout
N_STATES = 16
(IL_D, IL_Q, VFS_D, VFS_Q, XV_D, XV_Q, VFL_D, VFL_Q, XI_D, XI_Q, DELTA, XPLL, VDC, XDC,
 IFS_D, IFS_Q) = range(N_STATES)
STATE_NAMES = (
    "iL_d", "iL_q", "vfS_d", "vfS_q", "xv_d", "xv_q", "vfL_d", "vfL_q",
    "xi_d", "xi_q", "delta", "xpll", "vdc", "xdc", "ifS_d", "ifS_q",
)

# parameter vector layout
(P_WB, P_RS, P_XS, P_RL, P_XL, P_SRC_MODE, P_VD, P_VQ, P_LVD, P_LVQ, P_KPVD, P_KPVQ,
 P_TIVD, P_TIVQ, P_TAUV, P_LOAD_MODE, P_KPID, P_KPIQ, P_TIID, P_TIIQ, P_ID, P_IQ,
 P_KPPLL, P_KIPLL, P_TAUC, P_KPVDC, P_TIVDC, P_VDC, P_INJ_KIND, P_INJ_AMP, P_INJ_W,
 P_INJ_SIGMA, P_VSDC, P_DC_ENERGY, P_VIRT_DYN, P_DC_POWER, P_VFF) = range(37)
N_PARAMS = 37

SRC_IDEAL, SRC_VOLTAGE = 0, 1
LOAD_PASSIVE, LOAD_CURRENT, LOAD_DC = 0, 1, 2
INJ_NONE, INJ_SHUNT, INJ_SERIES = 0, 1, 2

# recorded channels (global dq frame)
REC_NAMES = ("vS_d", "vS_q", "vL_d", "vL_q", "iS_d", "iS_q", "iL_d", "iL_q", "vdc", "delta")
N_REC = len(REC_NAMES)

DIVERGENCE_LIMIT = 1e3
# DC-link collapse: the v_dc^2 loop has a mirror operating point at -V*,
# which a real converter never reaches (its diodes clamp the link)
VDC_COLLAPSE = 0.2

DIV_BLOWUP, DIV_DC_COLLAPSE = 1, 2


class DivergenceError(RuntimeError):
    def __init__(self, t, reason=DIV_BLOWUP):
        why = (f"a state exceeded {DIVERGENCE_LIMIT:g} pu" if reason == DIV_BLOWUP
               else f"DC-link voltage collapsed below {VDC_COLLAPSE:g} pu")
        super().__init__(f"simulation diverged at t={t:.6f} s ({why})")
        self.t = t
        self.reason = reason


class ConfigError(ValueError):
    pass


class SteadyStateError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class BaseValues:
    V_base: float = 690.0
    S_base: float = 1e6
    V_dc_base: float = 1400.0
    f_n: float = 50.0


@dataclass
class SourceConfig:
    kind: str = "voltage"  # "voltage" | "ideal"
    R: float = 0.007
    X: float = 0.15
    V_Sdc: float = 1.0
    L_vd: float = 0.0
    L_vq: float = 0.2
    K_pvd: float = 1.0
    K_pvq: float = 1.3
    T_ivd: float = 0.1
    T_ivq: float = 0.2
    v_d_ref: float = 1.0
    v_q_ref: float = 0.0
    tau_meas: float = 2e-4
    # "dynamic": the virtual inductances also present their s*L drop;
    # "static": only the fundamental-frequency cross terms
    virtual_law: str = "static"
    sync: str = "fixed-ramp"


@dataclass
class PllConfig:
    kp: float = 178.0
    ki: float = 15791.0


@dataclass
class LoadConfig:
    kind: str = "dc-voltage"  # "dc-voltage" | "current" | "passive"
    R: float = 0.02
    X: float = 0.25
    K_pid: float = 1.59
    K_piq: float = 2.07
    T_iid: float = 0.047
    T_iiq: float = 0.033
    i_d_ref: float = 1.1
    i_q_ref: float = 0.4
    C_dc: float = 11.5e-3
    K_pvdc: float = 8.33
    T_ivdc: float = 0.0036
    V_dc_ref: float = 1.0
    I_dc: float = 1.1
    # "energy": the DC PI acts on v_dc^2 (stored energy); "linear": on v_dc
    dc_loop: str = "energy"
    dc_output: str = "power"  # PI output is a power reference, i_d* = p* / v_d
    voltage_feedforward: bool = False
    tau_meas: float = 2e-4
    pll: Optional[PllConfig] = field(default_factory=PllConfig)
    sync: str = "pll"


@dataclass
class SimSettings:
    dt: float = 20e-6
    settle: float = 0.4
    window: float = 1.0
    record_every: int = 5
    injection_amplitude: float = 0.02


@dataclass
class CaseConfig:
    name: str = "custom"
    base: BaseValues = field(default_factory=BaseValues)
    source: SourceConfig = field(default_factory=SourceConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    schema_version: int = 1

    @property
    def f1(self) -> float:
        return self.base.f_n

    def validate(self) -> "CaseConfig":
        positive = [
            ("base.f_n", self.base.f_n), ("base.V_base", self.base.V_base),
            ("base.S_base", self.base.S_base), ("base.V_dc_base", self.base.V_dc_base),
            ("source.X", self.source.X), ("load.X", self.load.X),
            ("sim.dt", self.sim.dt), ("sim.window", self.sim.window),
            ("sim.injection_amplitude", self.sim.injection_amplitude),
        ]
        if self.source.kind == "voltage":
            positive += [("source.T_ivd", self.source.T_ivd), ("source.T_ivq", self.source.T_ivq),
                         ("source.tau_meas", self.source.tau_meas)]
            if self.source.virtual_law not in ("dynamic", "static"):
                raise ConfigError(f"source.virtual_law: unknown value {self.source.virtual_law!r}")
        elif self.source.kind != "ideal":
            raise ConfigError(f"source.kind: unknown value {self.source.kind!r}")
        if self.load.kind in ("current", "dc-voltage"):
            positive += [("load.T_iid", self.load.T_iid), ("load.T_iiq", self.load.T_iiq),
                         ("load.tau_meas", self.load.tau_meas)]
        elif self.load.kind != "passive":
            raise ConfigError(f"load.kind: unknown value {self.load.kind!r}")
        if self.load.kind == "dc-voltage":
            positive += [("load.C_dc", self.load.C_dc), ("load.T_ivdc", self.load.T_ivdc),
                         ("load.V_dc_ref", self.load.V_dc_ref)]
            if self.load.pll is None:
                raise ConfigError("load.pll: a dc-voltage load needs PLL gains")
            if self.load.dc_loop not in ("energy", "linear"):
                raise ConfigError(f"load.dc_loop: unknown value {self.load.dc_loop!r}")
            if self.load.dc_output not in ("power", "current"):
                raise ConfigError(f"load.dc_output: unknown value {self.load.dc_output!r}")
        for name, value in positive:
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name}: must be a positive number, got {value!r}")
        for name in ("source.R", "load.R", "sim.settle"):
            obj, attr = name.split(".")
            value = getattr(getattr(self, obj), attr)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name}: must be non-negative, got {value!r}")
        if self.sim.record_every < 1:
            raise ConfigError("sim.record_every: must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CaseConfig":
        d = copy.deepcopy(d)
        version = d.pop("schema_version", 1)
        if version != 1:
            raise ConfigError(f"schema_version: unsupported version {version}")

        def build(klass, data, path):
            if data is None:
                return None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: expected an object")
            known = {f.name: f for f in fields(klass)}
            unknown = set(data) - set(known)
            if unknown:
                raise ConfigError(f"{path}: unknown field(s) {sorted(unknown)}")
            kwargs = {}
            for k, v in data.items():
                sub = _NESTED.get((klass, k))
                kwargs[k] = build(sub, v, f"{path}.{k}") if sub else v
            return klass(**kwargs)

        cfg = build(cls, d, "config")
        return cfg.validate()


_NESTED = {
    (CaseConfig, "base"): BaseValues,
    (CaseConfig, "source"): SourceConfig,
    (CaseConfig, "load"): LoadConfig,
    (CaseConfig, "sim"): SimSettings,
    (LoadConfig, "pll"): PllConfig,
}


def preset(name: str) -> CaseConfig:
    """Case presets A1, A2, B (Appendix A tables) and the passive RL oracle."""
    key = name.upper().replace("_", "-")
    if key == "A1":
        return CaseConfig(name="A1").validate()
    if key == "A2":
        cfg = CaseConfig(name="A2")
        cfg.source = replace(cfg.source, L_vd=0.1, L_vq=0.1, K_pvq=1.0, T_ivq=0.1)
        return cfg.validate()
    if key == "B":
        cfg = preset("A2")
        cfg.name = "B"
        cfg.load = replace(cfg.load, kind="current", K_piq=1.59, T_iiq=0.047, i_d_ref=1.1,
                           pll=None, sync="fixed-ramp")
        return cfg.validate()
    if key == "ORACLE-RL":
        return passive_oracle_config()
    raise ConfigError(f"unknown preset {name!r} (expected A1, A2, B or oracle-rl)")


PRESETS = ("A1", "A2", "B", "oracle-rl")


def passive_oracle_config(R: float = 0.02, X: float = 0.25, load_R: float = 1.0,
                          load_X: float = 0.3) -> CaseConfig:
    """Ideal 1 pu source behind a series RL branch feeding a passive RL load."""
    if R < 0 or X <= 0:
        raise ConfigError("oracle branch needs R >= 0 and X > 0")
    cfg = CaseConfig(name="oracle-rl")
    cfg.source = SourceConfig(kind="ideal", R=R, X=X, v_d_ref=1.0, v_q_ref=0.0)
    cfg.load = LoadConfig(kind="passive", R=load_R, X=load_X, pll=None, sync="none")
    return cfg.validate()


# --------------------------------------------------------------------------
# model


@dataclass
class Model:
    config: CaseConfig
    params: np.ndarray
    idc_schedule: tuple  # (times, values) piecewise constant
    tau_load: float = 1e-3

    @property
    def f1(self) -> float:
        return self.config.f1

    def with_idc(self, idc: float) -> "Model":
        return Model(self.config, self.params.copy(),
                     (np.array([0.0]), np.array([float(idc)])), self.tau_load)


def build_case(case) -> Model:
    cfg = preset(case) if isinstance(case, str) else case
    cfg.validate()
    s, l, b = cfg.source, cfg.load, cfg.base
    p = np.zeros(N_PARAMS)
    p[P_WB] = 2 * np.pi * b.f_n
    p[P_RS], p[P_XS] = s.R, s.X
    p[P_RL], p[P_XL] = l.R, l.X
    p[P_SRC_MODE] = SRC_IDEAL if s.kind == "ideal" else SRC_VOLTAGE
    p[P_VD], p[P_VQ] = s.v_d_ref, s.v_q_ref
    p[P_LVD], p[P_LVQ] = s.L_vd, s.L_vq
    p[P_KPVD], p[P_KPVQ] = s.K_pvd, s.K_pvq
    p[P_TIVD], p[P_TIVQ] = s.T_ivd, s.T_ivq
    p[P_TAUV] = s.tau_meas
    p[P_VSDC] = s.V_Sdc
    p[P_VIRT_DYN] = 1.0 if s.virtual_law == "dynamic" else 0.0
    p[P_LOAD_MODE] = {"passive": LOAD_PASSIVE, "current": LOAD_CURRENT, "dc-voltage": LOAD_DC}[l.kind]
    p[P_KPID], p[P_KPIQ] = l.K_pid, l.K_piq
    p[P_TIID], p[P_TIIQ] = l.T_iid, l.T_iiq
    p[P_ID], p[P_IQ] = l.i_d_ref, l.i_q_ref
    if l.pll is not None:
        p[P_KPPLL], p[P_KIPLL] = l.pll.kp, l.pll.ki
    # DC-link energy time constant C V_dc_base^2 / S_base
    p[P_TAUC] = l.C_dc * b.V_dc_base**2 / b.S_base
    p[P_KPVDC], p[P_TIVDC] = l.K_pvdc, l.T_ivdc
    p[P_VDC] = l.V_dc_ref
    p[P_DC_ENERGY] = 1.0 if l.dc_loop == "energy" else 0.0
    p[P_DC_POWER] = 1.0 if l.dc_output == "power" else 0.0
    p[P_VFF] = 1.0 if l.voltage_feedforward else 0.0
    if l.kind == "passive":
        # the load measurement filter time constant is unused; keep it finite
        p[P_KPID] = p[P_KPIQ] = 0.0
    p[P_TIID] = max(p[P_TIID], 1e-9)
    p[P_TIIQ] = max(p[P_TIIQ], 1e-9)
    p[P_TIVD] = max(p[P_TIVD], 1e-9)
    p[P_TIVQ] = max(p[P_TIVQ], 1e-9)
    p[P_TIVDC] = max(p[P_TIVDC], 1e-9)
    p[P_TAUC] = max(p[P_TAUC], 1e-9)
    tau_l = l.tau_meas if l.kind != "passive" else 1e-3
    p[P_TAUV] = s.tau_meas if s.kind == "voltage" else 1e-3
    return Model(cfg, p, (np.array([0.0]), np.array([l.I_dc])), tau_l)


@numba.njit(cache=True, nogil=True)
def _idc_at(t, sched_t, sched_v):
    k = 0
    for j in range(sched_t.shape[0]):
        if t >= sched_t[j]:
            k = j
    return sched_v[k]


@numba.njit(cache=True, nogil=True)
def _rhs(t, x, p, tau_l, sched_t, sched_v, dx, out):
    """State derivative; ``out`` receives (vS, vL, iS_out) for recording."""
    wb = p[P_WB]
    ls = p[P_XS] / wb
    ll = p[P_XL] / wb
    zs = p[P_RS] + 1j * p[P_XS]
    zl = p[P_RL] + 1j * p[P_XL]

    kind = int(p[P_INJ_KIND])
    inj = 0j
    dinj = 0j
    if kind != INJ_NONE:
        sig = p[P_INJ_SIGMA]
        w = p[P_INJ_W]
        inj = p[P_INJ_AMP] * np.exp(1j * (sig * w * t - sig * np.pi / 2))
        dinj = 1j * sig * w * inj

    il = x[IL_D] + 1j * x[IL_Q]
    if kind == INJ_SHUNT:
        iso = il - inj
    else:
        iso = il

    # source converter
    vfs = x[VFS_D] + 1j * x[VFS_Q]
    tau_s = p[P_TAUV]
    if int(p[P_SRC_MODE]) == SRC_IDEAL:
        es = p[P_VD] + 1j * p[P_VQ]
        dx[VFS_D] = -x[VFS_D]
        dx[VFS_Q] = -x[VFS_Q]
        dx[XV_D] = -x[XV_D]
        dx[XV_Q] = -x[XV_Q]
        dx[IFS_D] = -x[IFS_D]
        dx[IFS_Q] = -x[IFS_Q]
    else:
        # per-axis virtual inductance drop on the voltage references, fed
        # by the filtered output current
        di_d = (iso.real - x[IFS_D]) / tau_s
        di_q = (iso.imag - x[IFS_Q]) / tau_s
        dyn = p[P_VIRT_DYN] / wb
        vref_d = p[P_VD] + p[P_LVD] * (x[IFS_Q] - dyn * di_d)
        vref_q = p[P_VQ] - p[P_LVQ] * (x[IFS_D] + dyn * di_q)
        ed = vref_d - vfs.real
        eq = vref_q - vfs.imag
        es = (vref_d + p[P_KPVD] * ed + p[P_KPVD] / p[P_TIVD] * x[XV_D]) + 1j * (
            vref_q + p[P_KPVQ] * eq + p[P_KPVQ] / p[P_TIVQ] * x[XV_Q])
        dx[XV_D] = ed
        dx[XV_Q] = eq
        dx[IFS_D] = di_d
        dx[IFS_Q] = di_q

    # load converter
    mode = int(p[P_LOAD_MODE])
    vfl = x[VFL_D] + 1j * x[VFL_Q]
    if mode == LOAD_PASSIVE:
        el = 0j
        dx[XI_D] = -x[XI_D]
        dx[XI_Q] = -x[XI_Q]
        dx[DELTA] = -x[DELTA]
        dx[XPLL] = -x[XPLL]
        dx[VDC] = 1.0 - x[VDC]
        dx[XDC] = -x[XDC]
    else:
        if mode == LOAD_DC:
            delta = x[DELTA]
        else:
            delta = 0.0
        rot = np.exp(-1j * delta)
        vfl_l = vfl * rot
        il_l = il * rot
        if mode == LOAD_DC:
            if p[P_DC_ENERGY] > 0.5:
                e_dc = p[P_VDC] * p[P_VDC] - x[VDC] * x[VDC]
            else:
                e_dc = p[P_VDC] - x[VDC]
            id_ref = p[P_KPVDC] * e_dc + p[P_KPVDC] / p[P_TIVDC] * x[XDC]
            if p[P_DC_POWER] > 0.5:
                id_ref = id_ref / vfl_l.real
        else:
            id_ref = p[P_ID]
        e_d = id_ref - il_l.real
        e_q = p[P_IQ] - il_l.imag
        u = (p[P_KPID] * e_d + p[P_KPID] / p[P_TIID] * x[XI_D]) + 1j * (
            p[P_KPIQ] * e_q + p[P_KPIQ] / p[P_TIIQ] * x[XI_Q])
        el_l = p[P_VFF] * vfl_l - 1j * p[P_XL] * il_l - u
        el = el_l * np.exp(1j * delta)
        dx[XI_D] = e_d
        dx[XI_Q] = e_q
        if mode == LOAD_DC:
            vq_l = vfl_l.imag
            dx[DELTA] = p[P_KPPLL] * vq_l + p[P_KIPLL] * x[XPLL]
            dx[XPLL] = vq_l
            pconv = (el * np.conj(il)).real
            dx[VDC] = (pconv / x[VDC] - _idc_at(t, sched_t, sched_v)) / p[P_TAUC]
            dx[XDC] = e_dc
        else:
            dx[DELTA] = -x[DELTA]
            dx[XPLL] = -x[XPLL]
            dx[VDC] = 1.0 - x[VDC]
            dx[XDC] = -x[XDC]

    # network
    if kind == INJ_SERIES:
        dil = (es - el + inj - (zs + zl) * il) / (ls + ll)
        vs = es - zs * il - ls * dil
        vl = vs + inj
    else:
        dil = (es - el - zs * iso - zl * il + ls * dinj) / (ls + ll)
        vl = el + zl * il + ll * dil
        vs = vl
    dx[IL_D] = dil.real
    dx[IL_Q] = dil.imag

    if int(p[P_SRC_MODE]) == SRC_VOLTAGE:
        dx[VFS_D] = (vs.real - x[VFS_D]) / tau_s
        dx[VFS_Q] = (vs.imag - x[VFS_Q]) / tau_s
    dx[VFL_D] = (vl.real - x[VFL_D]) / tau_l
    dx[VFL_Q] = (vl.imag - x[VFL_Q]) / tau_l

    out[0] = vs.real
    out[1] = vs.imag
    out[2] = vl.real
    out[3] = vl.imag
    out[4] = iso.real
    out[5] = iso.imag


@numba.njit(cache=True, nogil=True)
def _integrate(x0, p, tau_l, sched_t, sched_v, t0, n_steps, dt, rec_every, rec_start):
    n = x0.shape[0]
    n_rec = (n_steps - rec_start) // rec_every + 1 if n_steps >= rec_start else 0
    rec = np.zeros((n_rec, N_REC))
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    out = np.empty(6)
    scratch = np.empty(6)
    r = 0
    diverged = -1
    reason = 0
    dc_mode = int(p[P_LOAD_MODE]) == LOAD_DC
    for step in range(n_steps + 1):
        t = t0 + step * dt
        _rhs(t, x, p, tau_l, sched_t, sched_v, k1, out)
        if step >= rec_start and (step - rec_start) % rec_every == 0 and r < n_rec:
            rec[r, 0] = out[0]
            rec[r, 1] = out[1]
            rec[r, 2] = out[2]
            rec[r, 3] = out[3]
            rec[r, 4] = out[4]
            rec[r, 5] = out[5]
            rec[r, 6] = x[IL_D]
            rec[r, 7] = x[IL_Q]
            rec[r, 8] = x[VDC]
            rec[r, 9] = x[DELTA]
            r += 1
        if step == n_steps:
            break
        for i in range(n):
            xt[i] = x[i] + 0.5 * dt * k1[i]
        _rhs(t + 0.5 * dt, xt, p, tau_l, sched_t, sched_v, k2, scratch)
        for i in range(n):
            xt[i] = x[i] + 0.5 * dt * k2[i]
        _rhs(t + 0.5 * dt, xt, p, tau_l, sched_t, sched_v, k3, scratch)
        for i in range(n):
            xt[i] = x[i] + dt * k3[i]
        _rhs(t + dt, xt, p, tau_l, sched_t, sched_v, k4, scratch)
        for i in range(n):
            x[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            if not (abs(x[i]) <= DIVERGENCE_LIMIT):
                reason = DIV_BLOWUP
        if reason == 0 and dc_mode and x[VDC] < VDC_COLLAPSE:
            reason = DIV_DC_COLLAPSE
        if reason != 0:
            diverged = step + 1
            break
    return rec, x, diverged, reason


def _sched(model: Model):
    t, v = model.idc_schedule
    return np.asarray(t, dtype=float), np.asarray(v, dtype=float)


def derivative(model: Model, x, t: float = 0.0, params=None) -> np.ndarray:
    p = model.params if params is None else params
    dx = np.zeros(N_STATES)
    out = np.zeros(6)
    st, sv = _sched(model)
    _rhs(float(t), np.asarray(x, dtype=float), p, model.tau_load, st, sv, dx, out)
    return dx


def _initial_guess(model: Model) -> np.ndarray:
    cfg = model.config
    x = np.zeros(N_STATES)
    x[VDC] = 1.0
    x[VFS_D] = x[VFL_D] = cfg.source.v_d_ref
    if cfg.load.kind == "passive":
        z = complex(cfg.source.R + cfg.load.R, cfg.source.X + cfg.load.X)
        i = complex(cfg.source.v_d_ref, cfg.source.v_q_ref) / z
    else:
        idc = float(model.idc_schedule[1][0])
        i = complex(idc if cfg.load.kind == "dc-voltage" else cfg.load.i_d_ref, cfg.load.i_q_ref)
    x[IL_D], x[IL_Q] = i.real, i.imag
    if cfg.source.kind == "voltage":
        x[IFS_D], x[IFS_Q] = i.real, i.imag
    return x


def equilibrium(model: Model, x0=None, check: bool = True) -> np.ndarray:
    """Operating point of the unperturbed model.

    Solved as a root of the time-invariant vector field and then confirmed by
    simulation: the last two fundamental periods of every recorded channel
    must agree sample-wise within 1e-5 pu.
    """
    p = model.params.copy()
    p[P_INJ_KIND] = INJ_NONE
    x0 = _initial_guess(model) if x0 is None else np.asarray(x0, float)
    sol = optimize.root(lambda x: derivative(model, x, 0.0, p), x0, method="hybr", tol=1e-13)
    if not sol.success and np.max(np.abs(derivative(model, sol.x, 0.0, p))) > 1e-8:
        raise SteadyStateError(f"no operating point found: {sol.message}")
    x = sol.x
    if check:
        steady_state_gate(model, x)
    return x


def steady_state_gate(model: Model, x, tol: float = 1e-5, periods: int = 2):
    p = model.params.copy()
    p[P_INJ_KIND] = INJ_NONE
    dt = model.config.sim.dt
    n_per = int(round(1.0 / (model.f1 * dt)))
    st, sv = _sched(model)
    rec, _, div, _ = _integrate(np.asarray(x, float), p, model.tau_load, st, sv, 0.0,
                             (periods + 1) * n_per, dt, 1, 0)
    if div >= 0:
        raise SteadyStateError("operating point is not stable: run diverged")
    last = rec[-n_per:]
    prev = rec[-2 * n_per:-n_per]
    dev = float(np.max(np.abs(last - prev)))
    if dev > tol:
        raise SteadyStateError(f"not in periodic steady state: deviation {dev:.3g} pu > {tol:g}")
    return dev


def linearize(model: Model, x_eq=None, eps: float = 1e-7):
    """Central-difference Jacobian at the operating point and its eigenvalues."""
    x_eq = equilibrium(model, check=False) if x_eq is None else x_eq
    p = model.params.copy()
    p[P_INJ_KIND] = INJ_NONE
    A = np.zeros((N_STATES, N_STATES))
    for j in range(N_STATES):
        h = eps * max(1.0, abs(x_eq[j]))
        xp = x_eq.copy()
        xm = x_eq.copy()
        xp[j] += h
        xm[j] -= h
        A[:, j] = (derivative(model, xp, 0.0, p) - derivative(model, xm, 0.0, p)) / (2 * h)
    return A, np.linalg.eigvals(A)


# --------------------------------------------------------------------------
# injection


# one enum for simulation and impedance algebra
InjectionKind = Injection


@dataclass(frozen=True)
class InjectionSpec:
    kind: InjectionKind
    f_inj: float
    amplitude: float
    run_index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", InjectionKind(self.kind))
        if not self.amplitude > 0:
            raise ValueError("injection amplitude must be positive")
        if self.f_inj == 0 or abs(self.f_inj - round(self.f_inj)) > 1e-9:
            raise ValueError(f"injection frequency {self.f_inj} must be a nonzero integer (1 Hz grid)")
        if self.run_index not in (1, 2):
            raise ValueError("run_index must be 1 or 2")

    @property
    def sequence(self) -> str:
        return "p" if self.run_index == 1 else "n"


def inject_signal(spec: InjectionSpec, f1: float, t) -> ThreePhaseSeries:
    """Three-phase perturbation waveforms.

    Run 1 is a positive sequence sine set at ``f_inj + f1``; run 2 a sine set
    at ``f_inj - f1`` with reversed phase order.
    """
    t = np.asarray(t, dtype=float)
    if spec.run_index == 1:
        a, b, c = balanced_set(spec.amplitude, spec.f_inj + f1, t, fn=np.sin)
    else:
        a, b, c = balanced_set(spec.amplitude, spec.f_inj - f1, t, negative=True, fn=np.sin)
    fs = 1.0 / (t[1] - t[0]) if t.size > 1 else 1.0
    return ThreePhaseSeries(fs, a, b, c, t0=float(t[0]) if t.size else 0.0)


def injection_dq(spec: InjectionSpec, t) -> np.ndarray:
    """The injection of :func:`inject_signal` as a complex dq vector (theta = w1 t)."""
    sig = 1.0 if spec.run_index == 1 else -1.0
    w = 2 * np.pi * spec.f_inj
    return SQRT_3_2 * spec.amplitude * np.exp(1j * (sig * w * np.asarray(t) - sig * np.pi / 2))


# --------------------------------------------------------------------------
# runs


@dataclass
class SimRecord:
    dt: float
    t0: float
    f1: float
    interface_v: ThreePhaseSeries  # source-side terminal voltage
    load_v: ThreePhaseSeries  # load-side terminal voltage (differs under series injection)
    source_i: ThreePhaseSeries  # current into the source subsystem
    load_i: ThreePhaseSeries  # current into the load subsystem
    aux: dict
    dq: dict

    @property
    def sample_rate(self) -> float:
        return self.interface_v.sample_rate

    @property
    def time(self) -> np.ndarray:
        return self.interface_v.time

    def to_csv(self, path):
        cols = {"t_s": self.time}
        for name, s in (("v_src", self.interface_v), ("v_load", self.load_v),
                        ("i_src", self.source_i), ("i_load", self.load_i)):
            cols[f"{name}_a_pu"], cols[f"{name}_b_pu"], cols[f"{name}_c_pu"] = s.a, s.b, s.c
        for k, v in self.aux.items():
            if isinstance(v, np.ndarray):
                cols[k] = v
        names = list(cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*(cols[n] for n in names)):
                w.writerow([f"{v:.12g}" for v in row])


def _to_abc(d, q, theta, fs, t0):
    return inverse_park(DqSeries(fs, d, q, t0=t0), theta)


def run_time_domain(model: Model, injection: Optional[InjectionSpec] = None,
                    duration: Optional[float] = None, x0=None, record_from: float = 0.0,
                    raise_on_divergence: bool = True) -> SimRecord:
    """Fixed-step RK4 run from the operating point (or ``x0``).

    Samples are recorded every ``sim.record_every`` steps from
    ``record_from`` on.  Divergence raises :class:`DivergenceError` unless
    ``raise_on_divergence`` is false, in which case the truncated record is
    returned with ``aux['diverged_at']`` set.
    """
    cfg = model.config
    sim = cfg.sim
    if duration is None:
        duration = sim.settle + sim.window
    if x0 is None:
        x0 = equilibrium(model)
    p = model.params.copy()
    if injection is None:
        p[P_INJ_KIND] = INJ_NONE
    else:
        p[P_INJ_KIND] = INJ_SHUNT if injection.kind is InjectionKind.SHUNT else INJ_SERIES
        p[P_INJ_AMP] = SQRT_3_2 * injection.amplitude
        p[P_INJ_W] = 2 * np.pi * injection.f_inj
        p[P_INJ_SIGMA] = 1.0 if injection.run_index == 1 else -1.0
    dt = sim.dt
    n_steps = int(round(duration / dt))
    rec_start = int(round(record_from / dt))
    st, sv = _sched(model)
    rec, x_end, div, reason = _integrate(np.asarray(x0, float), p, model.tau_load, st, sv, 0.0,
                                 n_steps, dt, sim.record_every, rec_start)
    diverged_at = None
    if div >= 0:
        diverged_at = div * dt
        if raise_on_divergence:
            raise DivergenceError(diverged_at, reason)
        n_ok = max(0, (div - rec_start) // sim.record_every)
        rec = rec[:n_ok]
    fs = 1.0 / (dt * sim.record_every)
    t0 = rec_start * dt
    t = t0 + np.arange(rec.shape[0]) / fs
    theta = fixed_ramp(cfg.f1, t)
    ch = {name: rec[:, k] for k, name in enumerate(REC_NAMES)}
    vs = _to_abc(ch["vS_d"], ch["vS_q"], theta, fs, t0)
    vl = _to_abc(ch["vL_d"], ch["vL_q"], theta, fs, t0)
    # current into the source is minus the converter output current
    i_s = _to_abc(-ch["iS_d"], -ch["iS_q"], theta, fs, t0)
    i_l = _to_abc(ch["iL_d"], ch["iL_q"], theta, fs, t0)
    aux = {"vdc_pu": ch["vdc"], "pll_delta_rad": ch["delta"],
           "i_sd_pu": ch["iS_d"], "i_sq_pu": ch["iS_q"]}
    if diverged_at is not None:
        aux["diverged_at"] = diverged_at
        aux["divergence_reason"] = "blow-up" if reason == DIV_BLOWUP else "dc-collapse"
    return SimRecord(dt, t0, cfg.f1, vs, vl, i_s, i_l, aux, ch | {"x_end": x_end})


def passive_oracle_model(R: float, L: float, f1: float = 50.0) -> Model:
    """Passive RL oracle; ``L`` is the per-unit inductance, i.e. w1 L = L at f1."""
    if R < 0 or not L > 0:
        raise ConfigError("passive oracle needs R >= 0 and L > 0")
    cfg = passive_oracle_config(R=R, X=L)
    cfg.base.f_n = f1
    return build_case(cfg)


# --------------------------------------------------------------------------
# step-load scenario


@dataclass
class StepResult:
    t: np.ndarray
    i_sd: np.ndarray
    i_sq: np.ndarray
    idc: np.ndarray
    diverged_at: Optional[float]
    unstable: bool
    growth: list  # per-segment oscillation envelope ratio (late / early)

    def segment_summary(self):
        return self.growth


def run_step_schedule(model: Model, schedule, hold: float = 1.0, start_idc: Optional[float] = None,
                      record_every: int = 10, growth_limit: float = 1.0) -> StepResult:
    """Step I_dc through ``schedule`` values, each held ``hold`` seconds.

    The run starts from the operating point at ``start_idc`` (default: the
    first schedule value).  A segment is called unstable when the run
    diverges or the oscillation envelope of i_sd in the second half of the
    segment exceeds the first half by ``growth_limit``.
    """
    if model.config.load.kind != "dc-voltage":
        raise ConfigError("step-sim needs a load with DC-current consumption (dc-voltage mode)")
    schedule = [float(v) for v in schedule]
    start = schedule[0] if start_idc is None else float(start_idc)
    m0 = model.with_idc(start)
    x0 = equilibrium(m0, check=False)
    times = np.array([0.0] + [hold * (k + 1) for k in range(len(schedule))])
    values = np.array([start] + schedule)
    cfg = copy.deepcopy(model.config)
    cfg.sim.record_every = record_every
    m = Model(cfg, model.params.copy(), (times, values), model.tau_load)
    duration = hold * (len(schedule) + 1)
    rec = run_time_domain(m, None, duration, x0=x0, raise_on_divergence=False)
    t = rec.time
    i_sd, i_sq = rec.aux["i_sd_pu"], rec.aux["i_sq_pu"]
    idc = np.array([values[np.searchsorted(times, tt, side="right") - 1] for tt in t])
    growth = []
    unstable = rec.aux.get("diverged_at") is not None
    for k in range(1, len(times)):
        a, b = times[k], times[k] + hold
        mid = (a + b) / 2
        seg1 = (t >= a + 0.05 * hold) & (t < mid)
        seg2 = (t >= mid) & (t < b)
        if seg1.sum() < 4 or seg2.sum() < 4:
            growth.append(float("inf"))
            continue
        late = i_sd[seg2] - np.mean(i_sd[seg2])
        early = i_sd[seg1] - np.mean(i_sd[seg1])
        amp1 = np.max(np.abs(early))
        amp2 = np.max(np.abs(late))
        ratio = float(amp2 / amp1) if amp1 > 1e-12 else 0.0
        growth.append(ratio)
        if ratio > growth_limit and amp2 > 1e-4:
            unstable = True
    return StepResult(t, i_sd, i_sq, idc, rec.aux.get("diverged_at"), unstable, growth)
