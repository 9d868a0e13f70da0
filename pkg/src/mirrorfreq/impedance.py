"""2x2 impedance algebra between the dq frame and the modified sequence frame.

The modified sequence matrix couples the positive sequence at
``f_p = f_dq + f1`` with the negative sequence at ``f_n = f_dq - f1``::

    Z_pn = A_Z @ Z_dq @ inv(A_Z),   A_Z = [[1, j], [1, -j]] / sqrt(2)

A_Z is unitary, so the similarity preserves determinant, trace and
eigenvalues.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

A_Z = np.array([[1, 1j], [1, -1j]]) / np.sqrt(2)
A_Z_INV = A_Z.conj().T

DEFAULT_MFD_TOL = 0.05


class SingularMatrixError(ValueError):
    def __init__(self, msg, cond=np.inf):
        super().__init__(f"{msg} (condition estimate {cond:.3g})")
        self.cond = cond


class DegenerateExcitationError(ValueError):
    pass


class ResonanceError(ZeroDivisionError):
    def __init__(self, msg, frequency=None):
        if frequency is not None:
            msg = f"{msg} at f_dq={frequency} Hz"
        super().__init__(msg)
        self.frequency = frequency


class Injection(enum.Enum):
    SHUNT = "shunt"
    SERIES = "series"


class Side(enum.Enum):
    SOURCE = "source"
    LOAD = "load"


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("impedance matrix has non-finite entries")
    return m


@dataclass(frozen=True)
class ImpedanceDq:
    f_dq: float
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _as_matrix(self.m))


@dataclass(frozen=True)
class ImpedancePn:
    f_dq: float
    f1: float
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _as_matrix(self.m))

    @property
    def f_p(self) -> float:
        return self.f_dq + self.f1

    @property
    def f_n(self) -> float:
        return self.f_dq - self.f1

    @property
    def pp(self):
        return self.m[0, 0]

    @property
    def pn(self):
        return self.m[0, 1]

    @property
    def np_(self):
        return self.m[1, 0]

    @property
    def nn(self):
        return self.m[1, 1]


@dataclass(frozen=True)
class MfdStructure:
    zx: complex
    zy: complex
    residual: float = 0.0

    def dq_matrix(self) -> np.ndarray:
        return np.array([[self.zx, self.zy], [-self.zy, self.zx]])


@dataclass(frozen=True)
class OriginalSequenceValue:
    """Original (decoupled) sequence impedance of one subsystem.

    Meaningless without the injection and side tags: the value depends on
    both.
    """

    value: complex
    frequency: float
    sequence: str
    injection: Injection
    side: Side


def to_pn(m) -> np.ndarray:
    return A_Z @ np.asarray(m, dtype=complex) @ A_Z_INV


def to_dq(m) -> np.ndarray:
    return A_Z_INV @ np.asarray(m, dtype=complex) @ A_Z


def zdq_to_zpn(z: ImpedanceDq, f1: float) -> ImpedancePn:
    return ImpedancePn(z.f_dq, f1, to_pn(z.m))


def zpn_to_zdq(z: ImpedancePn) -> ImpedanceDq:
    return ImpedanceDq(z.f_dq, to_dq(z.m))


def safe_inv(m, what="matrix", cond_limit=1e12) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError(f"{what} is singular", cond)
    return np.linalg.inv(m)


def admittance_transform(y, direction: str = "dq->pn") -> np.ndarray:
    """Similarity transform of an admittance; the same A_Z as for impedance."""
    if direction == "dq->pn":
        return to_pn(y)
    if direction == "pn->dq":
        return to_dq(y)
    raise ValueError(f"unknown direction {direction!r}")


def admittance(z, what="impedance") -> np.ndarray:
    return safe_inv(z, what)


def mfd_classify(z, rel_tol: float = DEFAULT_MFD_TOL):
    """Check mirror-frequency decoupling.

    ``z`` is an :class:`ImpedancePn` (off-diagonals vs dominant diagonal) or
    an :class:`ImpedanceDq` (skew-symmetry vs the matrix 2-norm).  Returns
    ``(is_mfd, MfdStructure)`` where the residual is the relative violation.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    if isinstance(z, ImpedancePn):
        mpn = z.m
        mdq = to_dq(mpn)
        scale = max(abs(mpn[0, 0]), abs(mpn[1, 1]))
        off = max(abs(mpn[0, 1]), abs(mpn[1, 0]))
    elif isinstance(z, ImpedanceDq):
        mdq = z.m
        scale = np.linalg.norm(mdq, 2)
        off = max(abs(mdq[0, 0] - mdq[1, 1]), abs(mdq[0, 1] + mdq[1, 0]))
    else:
        raise TypeError("mfd_classify expects ImpedancePn or ImpedanceDq")
    zx = (mdq[0, 0] + mdq[1, 1]) / 2
    zy = (mdq[0, 1] - mdq[1, 0]) / 2
    if scale == 0:
        return off == 0, MfdStructure(complex(zx), complex(zy), 0.0 if off == 0 else np.inf)
    residual = float(off / scale)
    return residual <= rel_tol, MfdStructure(complex(zx), complex(zy), residual)


def off_diagonal_ratio(zpn) -> float:
    m = zpn.m if isinstance(zpn, ImpedancePn) else np.asarray(zpn)
    scale = max(abs(m[0, 0]), abs(m[1, 1]))
    return float(max(abs(m[0, 1]), abs(m[1, 0])) / scale) if scale else 0.0


def mfd_single_measurement_zdq(vd, vq, id_, iq, tol=1e-14) -> MfdStructure:
    """Skew-symmetric dq impedance from one (V, I) phasor measurement."""
    den = id_ * id_ + iq * iq
    if abs(den) <= tol * (abs(id_) ** 2 + abs(iq) ** 2) or den == 0:
        raise DegenerateExcitationError(
            "Id^2 + Iq^2 vanishes; a single injection cannot identify Zx, Zy"
        )
    zx = (vd * id_ + vq * iq) / den
    zy = (vd * iq - vq * id_) / den
    return MfdStructure(complex(zx), complex(zy))


def mfd_pn_diagonal(s: MfdStructure) -> tuple:
    """(Z_pp, Z_nn) of a skew-symmetric dq matrix, expanded directly from A_Z."""
    return s.zx - 1j * s.zy, s.zx + 1j * s.zy


def determinant_pair(zdq: ImpedanceDq, zpn: ImpedancePn) -> tuple:
    return complex(np.linalg.det(zdq.m)), complex(np.linalg.det(zpn.m))


def eig2(m) -> tuple:
    """Closed-form eigenvalues of a 2x2 complex matrix."""
    m = np.asarray(m, dtype=complex)
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = np.sqrt(tr * tr / 4 - det)
    l1 = tr / 2 + disc
    # the root of larger magnitude is computed directly, the other from det
    l2 = tr / 2 - disc
    if abs(l1) < abs(l2):
        l1, l2 = l2, l1
    if l1 != 0:
        l2 = det / l1
    return complex(l1), complex(l2)


def _det(m):
    return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]


def _checked_div(num, den, what, frequency, scale):
    if abs(den) <= 1e-14 * max(scale, 1e-300):
        raise ResonanceError(f"zero denominator in {what}", frequency)
    return num / den


def original_from_modified(source: ImpedancePn, load: ImpedancePn,
                           injection: Injection, sequence: str):
    """Original sequence impedances (load, source) implied by the modified matrices.

    ``sequence`` is ``"p"`` for positive sequence injection (returns Z_p at
    f_p) or ``"n"`` for negative (Z_n at the signed f_n).
    """
    injection = Injection(injection)
    s, l = source.m, load.m
    ds, dl = _det(s), _det(l)
    f = source.f_dq
    scale = float(np.max(np.abs(s)) * np.max(np.abs(l)) + np.max(np.abs(s)) ** 2 + np.max(np.abs(l)) ** 2)
    spp, spn, snp, snn = s[0, 0], s[0, 1], s[1, 0], s[1, 1]
    lpp, lpn, lnp, lnn = l[0, 0], l[0, 1], l[1, 0], l[1, 1]
    if sequence == "p":
        freq = source.f_p
        if injection is Injection.SHUNT:
            zl = _checked_div(lpp * ds + spp * dl, ds + lnn * spp - lpn * snp, "Zp load shunt", f, scale)
            zs = _checked_div(spp * dl + lpp * ds, dl + snn * lpp - spn * lnp, "Zp source shunt", f, scale)
        else:
            zl = _checked_div(lpp * snn - lpn * snp + dl, snn + lnn, "Zp load series", f, scale)
            zs = _checked_div(spp * lnn - spn * lnp + ds, lnn + snn, "Zp source series", f, scale)
    elif sequence == "n":
        freq = source.f_n
        if injection is Injection.SHUNT:
            zl = _checked_div(lnn * ds + snn * dl, ds + lpp * snn - lnp * spn, "Zn load shunt", f, scale)
            zs = _checked_div(snn * dl + lnn * ds, dl + spp * lnn - snp * lpn, "Zn source shunt", f, scale)
        else:
            zl = _checked_div(lnn * spp - lnp * spn + dl, spp + lpp, "Zn load series", f, scale)
            zs = _checked_div(snn * lpp - snp * lpn + ds, lpp + spp, "Zn source series", f, scale)
    else:
        raise ValueError(f"sequence must be 'p' or 'n', got {sequence!r}")
    return (
        OriginalSequenceValue(complex(zl), freq, sequence, injection, Side.LOAD),
        OriginalSequenceValue(complex(zs), freq, sequence, injection, Side.SOURCE),
    )


def rl_branch_dq(r: float, x1: float, f_dq: float, f1: float) -> np.ndarray:
    """Closed-form dq impedance of a series RL branch (x1 = w1 L in pu)."""
    zs = r + 1j * x1 * f_dq / f1
    return np.array([[zs, -x1], [x1, zs]], dtype=complex)


def rl_branch_pn(r: float, x1: float, f_dq: float, f1: float) -> np.ndarray:
    fp, fn = f_dq + f1, f_dq - f1
    return np.diag([r + 1j * x1 * fp / f1, r + 1j * x1 * fn / f1]).astype(complex)
