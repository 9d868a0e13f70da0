"""Three-phase / dq signal handling and harmonic phasor algebra.

Phasors are cosine referenced: ``x(t) = |V| cos(w t + angle(V))`` maps to
the complex number ``V``.  The Park transform uses the sqrt(2/3) scaling,
so a balanced set of peak amplitude ``A`` appears in dq with magnitude
``sqrt(3/2) * A``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

A_OP = np.exp(2j * np.pi / 3)  # 120 degree rotation operator
SQRT6 = math.sqrt(6.0)
SQRT_3_2 = math.sqrt(1.5)
SQRT_2_3 = math.sqrt(2.0 / 3.0)


class Frame(enum.Enum):
    ABC_PHASE_A = "abc_a"
    DQ_D = "dq_d"
    DQ_Q = "dq_q"
    SEQ_POSITIVE = "seq_p"
    SEQ_NEGATIVE = "seq_n"


@dataclass(frozen=True)
class HarmonicPhasor:
    value: complex
    frequency: float
    frame: Frame

    def __post_init__(self):
        if not math.isfinite(self.frequency):
            raise ValueError(f"phasor frequency must be finite, got {self.frequency}")

    @property
    def amplitude(self) -> float:
        return abs(self.value)

    @property
    def angle_deg(self) -> float:
        return wrap_deg(math.degrees(np.angle(self.value)))


def wrap_deg(angle: float) -> float:
    """Wrap an angle in degrees to (-180, 180]."""
    a = math.fmod(angle, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def polar(mag: float, deg: float) -> complex:
    return complex(mag * np.exp(1j * math.radians(deg)))


@dataclass(frozen=True)
class ThreePhaseSeries:
    sample_rate: float
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        n = len(self.a)
        if n < 1 or len(self.b) != n or len(self.c) != n:
            raise ValueError("three-phase channels must share a nonzero length")

    def __len__(self):
        return len(self.a)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.a)) / self.sample_rate

    def space_vector(self) -> np.ndarray:
        """``x_a + a x_b + a^2 x_c`` per sample (zero sequence drops out)."""
        return self.a + A_OP * self.b + A_OP**2 * self.c


@dataclass(frozen=True)
class DqSeries:
    sample_rate: float
    d: np.ndarray
    q: np.ndarray
    # angle samples used for the transform, or None for a fixed ramp
    theta: Union[np.ndarray, None] = None
    t0: float = 0.0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if len(self.d) != len(self.q):
            raise ValueError("d and q channels must have equal length")

    def __len__(self):
        return len(self.d)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.d)) / self.sample_rate


def fixed_ramp(f1: float, t: np.ndarray) -> np.ndarray:
    return 2 * np.pi * f1 * np.asarray(t)


def _check_theta(n: int, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n,):
        raise ValueError(f"theta has {theta.size} samples, series has {n}")
    return theta


def park_transform(abc: ThreePhaseSeries, theta) -> DqSeries:
    theta = _check_theta(len(abc), theta)
    k = 2 * np.pi / 3
    d = SQRT_2_3 * (np.cos(theta) * abc.a + np.cos(theta - k) * abc.b + np.cos(theta + k) * abc.c)
    q = -SQRT_2_3 * (np.sin(theta) * abc.a + np.sin(theta - k) * abc.b + np.sin(theta + k) * abc.c)
    return DqSeries(abc.sample_rate, d, q, theta=theta, t0=abc.t0)


def inverse_park(dq: DqSeries, theta) -> ThreePhaseSeries:
    """Transpose of the Park matrix; exact inverse on zero-sequence-free sets."""
    theta = _check_theta(len(dq), theta)
    k = 2 * np.pi / 3
    a = SQRT_2_3 * (np.cos(theta) * dq.d - np.sin(theta) * dq.q)
    b = SQRT_2_3 * (np.cos(theta - k) * dq.d - np.sin(theta - k) * dq.q)
    c = SQRT_2_3 * (np.cos(theta + k) * dq.d - np.sin(theta + k) * dq.q)
    return ThreePhaseSeries(dq.sample_rate, a, b, c, t0=dq.t0)


def symmetric_components(pa: HarmonicPhasor, pb: HarmonicPhasor, pc: HarmonicPhasor):
    """Positive and negative sequence phasors, unnormalized (no 1/3).

    A balanced positive set of phase amplitude 1 gives ``Vp = 3``.
    """
    if not (pa.frequency == pb.frequency == pc.frequency):
        raise ValueError(
            f"symmetric components need equal frequencies, got "
            f"{pa.frequency}, {pb.frequency}, {pc.frequency}"
        )
    a, a2 = A_OP, A_OP**2
    vp = pa.value + a * pb.value + a2 * pc.value
    vn = pa.value + a2 * pb.value + a * pc.value
    return (
        HarmonicPhasor(complex(vp), pa.frequency, Frame.SEQ_POSITIVE),
        HarmonicPhasor(complex(vn), pa.frequency, Frame.SEQ_NEGATIVE),
    )


def dq_phasor_to_sequence(vd: HarmonicPhasor, vq: HarmonicPhasor, f1: float):
    """Split a dq phasor pair into (Vp at f+f1, Vn at f-f1).

    The negative sequence frequency is signed; folding happens in the sweep.
    """
    if vd.frequency != vq.frequency:
        raise ValueError("Vd and Vq must share one frequency")
    f = vd.frequency
    if f < 0:
        raise ValueError("dq frequency must be non-negative")
    vp = (vd.value + 1j * vq.value) / SQRT6
    vn = (vd.value - 1j * vq.value) / SQRT6
    return (
        HarmonicPhasor(complex(vp), f + f1, Frame.SEQ_POSITIVE),
        HarmonicPhasor(complex(vn), f - f1, Frame.SEQ_NEGATIVE),
    )


def sequence_to_dq_phasor(v: HarmonicPhasor, f1: float):
    if v.frame is Frame.SEQ_POSITIVE:
        if not v.frequency > 0:
            raise ValueError("positive sequence phasor needs a positive frequency")
        vec, f = (1.0, -1j), v.frequency - f1
    elif v.frame is Frame.SEQ_NEGATIVE:
        vec, f = (1.0, 1j), v.frequency + f1
    else:
        raise ValueError(f"expected a sequence phasor, got frame {v.frame}")
    vd = SQRT_3_2 * v.value * vec[0]
    vq = SQRT_3_2 * v.value * vec[1]
    return (
        HarmonicPhasor(complex(vd), f, Frame.DQ_D),
        HarmonicPhasor(complex(vq), f, Frame.DQ_Q),
    )


class WindowError(ValueError):
    pass


def _window_slice(n: int, sample_rate: float, t0: float, window) -> slice:
    t_start, t_end = window
    i0 = (t_start - t0) * sample_rate
    i1 = (t_end - t0) * sample_rate
    if abs(i0 - round(i0)) > 1e-6 or abs(i1 - round(i1)) > 1e-6:
        raise WindowError(f"window {window} does not fall on sample boundaries")
    i0, i1 = int(round(i0)), int(round(i1))
    if i0 < 0 or i1 > n or i1 <= i0:
        raise WindowError(f"window {window} lies outside the series")
    return slice(i0, i1)


def check_commensurate(f: float, duration: float, f1: float | None = None, tol: float = 1e-9):
    """Raise unless ``duration`` holds an integer number of periods of ``f`` (and ``f1``)."""
    for name, freq in (("f", f), ("f1", f1)):
        if freq is None or freq == 0:
            continue
        cycles = abs(freq) * duration
        if abs(cycles - round(cycles)) > tol * max(1.0, cycles):
            raise WindowError(
                f"window of {duration} s is not commensurate with {name}={freq} Hz "
                f"({cycles:.6g} periods)"
            )


def _project(x: np.ndarray, t: np.ndarray, f: float) -> complex:
    if f == 0:
        return complex(np.mean(x))
    return complex(2.0 * np.mean(x * np.exp(-2j * np.pi * f * t)))


def extract_phasor(series, sample_rate: float, f: float, window, t0: float = 0.0,
                   f1: float | None = None, frame: Frame = Frame.ABC_PHASE_A) -> HarmonicPhasor:
    """Single-bin DFT of one real channel over a rectangular window.

    ``window`` is ``(t_start, t_end)`` in absolute time; phases refer to
    t = 0.  The window must hold whole periods of ``f`` (and of ``f1`` if
    given), otherwise :class:`WindowError` is raised.
    """
    x = np.asarray(series, dtype=float)
    check_commensurate(f, window[1] - window[0], f1)
    sl = _window_slice(len(x), sample_rate, t0, window)
    t = t0 + np.arange(sl.start, sl.stop) / sample_rate
    return HarmonicPhasor(_project(x[sl], t, f), float(f), frame)


def extract_abc(abc: ThreePhaseSeries, f: float, window, f1: float | None = None):
    return tuple(
        extract_phasor(ch, abc.sample_rate, f, window, t0=abc.t0, f1=f1)
        for ch in (abc.a, abc.b, abc.c)
    )


def extract_dq(dq: DqSeries, f: float, window, f1: float | None = None):
    vd = extract_phasor(dq.d, dq.sample_rate, f, window, t0=dq.t0, f1=f1, frame=Frame.DQ_D)
    vq = extract_phasor(dq.q, dq.sample_rate, f, window, t0=dq.t0, f1=f1, frame=Frame.DQ_Q)
    return vd, vq


def sequence_phasors(abc: ThreePhaseSeries, f_p: float, f_n: float, window, f1: float):
    """Normalized sequence phasors (Vp at f_p, Vn at signed f_n) of an abc record.

    Uses per-phase extraction plus the symmetric component transform scaled
    by 1/3, so a balanced set gives its phase-a phasor.  A negative f_n is
    measured as the positive sequence set at |f_n| and conjugated; f_n = 0
    is read from the three windowed means.
    """
    pa, pb, pc = extract_abc(abc, f_p, window, f1)
    vp, _ = symmetric_components(pa, pb, pc)
    if f_n > 0:
        na, nb, nc = extract_abc(abc, f_n, window, f1)
        _, vn = symmetric_components(na, nb, nc)
        vn_val = vn.value / 3
    elif f_n < 0:
        na, nb, nc = extract_abc(abc, -f_n, window, f1)
        vpos, _ = symmetric_components(na, nb, nc)
        vn_val = np.conj(vpos.value) / 3
    else:
        na, nb, nc = extract_abc(abc, 0.0, window, f1)
        # a DC negative sequence set holds (Re Vn, Re aVn, Re a^2 Vn)
        vn_val = np.conj(2.0 / 3.0 * (na.value + A_OP * nb.value + A_OP**2 * nc.value))
    return (
        HarmonicPhasor(complex(vp.value / 3), f_p, Frame.SEQ_POSITIVE),
        HarmonicPhasor(complex(vn_val), f_n, Frame.SEQ_NEGATIVE),
    )


def balanced_set(amplitude: float, f: float, t, phase: float = 0.0, negative: bool = False,
                 fn: Callable = np.cos) -> tuple:
    """Balanced three-phase waveforms ``fn(2 pi f t + phase - k 2pi/3)``."""
    t = np.asarray(t, dtype=float)
    k = 2 * np.pi / 3
    sgn = -1.0 if negative else 1.0
    w = 2 * np.pi * f * t + phase
    return (amplitude * fn(w), amplitude * fn(w - sgn * k), amplitude * fn(w + sgn * k))
