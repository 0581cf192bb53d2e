"""Macrospin model of an MTJ free layer under attack fields.

Vectors are float64 numpy arrays of shape ``(3,)``.  Fields are in tesla
throughout, the anisotropy field included.  The equation of motion is the
explicit Landau-Lifshitz-Gilbert form with a spin-transfer term::

    dm/dt = -g m x H - a g m x (m x H) + (I_s hbar G / 2e) m x (m x e_p)

Note that this form carries no ``1/(1 + a**2)`` prefactor.  That is
deliberate: the common Gilbert-to-LL conversion factor is left out so the
dynamics follow the form above exactly.

A bit is ``0`` when the free layer is parallel to the fixed layer (which
points along ``+easy_axis``) and ``1`` when anti-parallel.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import _llg

HBAR = 1.054571817e-34  # J s
E_CHARGE = 1.602176634e-19  # C

#: initial tilt off the easy axis; stands in for thermal seeding
INITIAL_TILT_DEG = 1.0
#: integrator resolution: at least this many steps per fastest precession period
STEPS_PER_PERIOD = 50
#: longest direct integration attempted by :func:`onset_time`
DIRECT_STEP_LIMIT = 400_000

_UNIT_TOL = 1e-9


class StepTooCoarse(ValueError):
    """Time step too large to resolve the precession frequency."""


class NoFlipInBracket(RuntimeError):
    """The upper bisection bracket failed to switch the cell."""


class InvalidParams(ValueError):
    pass


def vec3(x: float, y: float, z: float) -> np.ndarray:
    v = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector component in {v}")
    return v


def normalized(v: Sequence[float]) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(a))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError(f"cannot normalize {a}")
    return a / n


def _is_unit(v: Sequence[float]) -> bool:
    return abs(math.sqrt(sum(c * c for c in v)) - 1.0) <= _UNIT_TOL


def _as_tuple(v) -> tuple:
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class MtjParams:
    """Free-layer physics of one cell class.

    ``m_s`` scales the diagonal demagnetizing coefficients into a field
    (saturation magnetization expressed in tesla).  ``susceptibility_factor``
    multiplies the applied field the cell sees; sensor cells use values above
    one to model their smaller free layer.
    """

    gamma: float = 1.76e11
    alpha: float = 0.01
    h_k: float = 0.05
    easy_axis: tuple = (1.0, 0.0, 0.0)
    h_demag: tuple = (0.0, 0.0, 1.0)
    m_s: float = 1.0
    h_exchange: tuple = (0.0, 0.0, 0.0)
    e_p: tuple = (1.0, 0.0, 0.0)
    susceptibility_factor: float = 1.0

    def __post_init__(self):
        for name in ("easy_axis", "h_demag", "h_exchange", "e_p"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
            if len(getattr(self, name)) != 3:
                raise InvalidParams(f"{name} must have three components")
        if not (self.alpha > 0 and self.gamma > 0 and self.h_k > 0):
            raise InvalidParams("alpha, gamma and h_k must be positive")
        if self.m_s < 0:
            raise InvalidParams("m_s must be non-negative")
        if not _is_unit(self.easy_axis) or not _is_unit(self.e_p):
            raise InvalidParams("easy_axis and e_p must be unit vectors")
        if any(not 0.0 <= d <= 1.0 for d in self.h_demag) or abs(sum(self.h_demag) - 1.0) > 1e-6:
            raise InvalidParams("demag coefficients must lie in [0, 1] and sum to 1")
        if self.susceptibility_factor < 1.0:
            raise InvalidParams("susceptibility_factor must be >= 1")
        vals = (self.gamma, self.alpha, self.h_k, self.m_s, self.susceptibility_factor,
                *self.easy_axis, *self.h_demag, *self.h_exchange, *self.e_p)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParams("non-finite parameter")

    def with_susceptibility(self, factor: float) -> "MtjParams":
        return dataclasses.replace(self, susceptibility_factor=factor)


@dataclass(frozen=True)
class SpinCurrent:
    i_s: float = 0.0
    g_psi: float = 0.5
    enabled: bool = False

    def __post_init__(self):
        if self.i_s < 0 or self.g_psi <= 0:
            raise InvalidParams("need i_s >= 0 and g_psi > 0")

    @property
    def prefactor(self) -> float:
        if not self.enabled:
            return 0.0
        return self.i_s * HBAR * self.g_psi / (2.0 * E_CHARGE)


NO_CURRENT = SpinCurrent()


class FieldKind(enum.Enum):
    NONE = "NONE"
    DC = "DC"
    AC = "AC"
    RAMP_AC = "RAMP_AC"


_KIND_CODE = {
    FieldKind.NONE: _llg.KIND_NONE,
    FieldKind.DC: _llg.KIND_DC,
    FieldKind.AC: _llg.KIND_AC,
    FieldKind.RAMP_AC: _llg.KIND_RAMP_AC,
}


@dataclass(frozen=True)
class FieldProfile:
    """Applied attack field: ``amplitude * envelope(t) * waveform(t) * direction``.

    AC waveforms are ``sin(2 pi f t)``; RAMP_AC grows its amplitude linearly
    from zero over ``ramp_time`` and then holds it.
    """

    kind: FieldKind = FieldKind.NONE
    amplitude: float = 0.0
    direction: tuple = (1.0, 0.0, 0.0)
    frequency: float = 0.0
    ramp_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FieldKind(self.kind))
        object.__setattr__(self, "direction", _as_tuple(self.direction))
        if len(self.direction) != 3 or not _is_unit(self.direction):
            raise InvalidParams("direction must be a unit vector")
        if self.amplitude < 0 or self.ramp_time < 0:
            raise InvalidParams("amplitude and ramp_time must be non-negative")
        if self.kind in (FieldKind.AC, FieldKind.RAMP_AC) and not self.frequency > 0:
            raise InvalidParams(f"{self.kind.value} profile needs a positive frequency")

    @classmethod
    def none(cls) -> "FieldProfile":
        return cls()

    @classmethod
    def dc(cls, amplitude: float, direction=(1.0, 0.0, 0.0)) -> "FieldProfile":
        return cls(FieldKind.DC, amplitude, direction)

    @classmethod
    def ac(cls, amplitude: float, frequency: float, direction=(1.0, 0.0, 0.0)) -> "FieldProfile":
        return cls(FieldKind.AC, amplitude, direction, frequency)

    @classmethod
    def ramp_ac(cls, amplitude: float, frequency: float, ramp_time: float,
                direction=(1.0, 0.0, 0.0)) -> "FieldProfile":
        return cls(FieldKind.RAMP_AC, amplitude, direction, frequency, ramp_time)

    def field_at(self, t: float) -> np.ndarray:
        a = _llg.field_magnitude(_KIND_CODE[self.kind], self.amplitude,
                                 self.frequency, self.ramp_time, float(t))
        return a * np.asarray(self.direction)

    def peak_amplitude(self, duration: Optional[float] = None) -> float:
        """Largest envelope value reached within ``[0, duration]``."""
        if self.kind is FieldKind.NONE:
            return 0.0
        if self.kind is FieldKind.RAMP_AC and duration is not None and self.ramp_time > 0:
            return self.amplitude * min(1.0, duration / self.ramp_time)
        return self.amplitude


@dataclass
class ExposureOutcome:
    """Result of exposing one cell to a field profile.

    ``flipped`` means the cell lost its stored value at some point during the
    exposure, i.e. the magnetization crossed the plane perpendicular to the
    easy axis.  ``flip_time`` is the first such crossing.  ``final_bit`` is the
    polarity read at the end of the window; under strong AC drive it is
    sensitive to the step size and is reported for information only.
    """

    flipped: bool
    flip_time: Optional[float]
    final_m: np.ndarray
    final_bit: int
    max_norm_drift: float = 0.0


@dataclass
class Trajectory:
    t: np.ndarray
    m: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[tuple]:
        return iter(zip(self.t, self.m))

    @property
    def final(self) -> np.ndarray:
        return self.m[-1]


def _kernel_args(p: MtjParams, profile: FieldProfile, j: SpinCurrent) -> tuple:
    return (
        _KIND_CODE[profile.kind], float(profile.amplitude),
        np.asarray(profile.direction, dtype=np.float64),
        float(profile.frequency), float(profile.ramp_time),
        float(p.susceptibility_factor),
        float(p.gamma), float(p.alpha), float(p.h_k),
        np.asarray(p.easy_axis, dtype=np.float64),
        np.asarray(p.h_demag, dtype=np.float64), float(p.m_s),
        np.asarray(p.h_exchange, dtype=np.float64),
        float(j.prefactor), np.asarray(p.e_p, dtype=np.float64),
    )


def effective_field(m, p: MtjParams, h_applied) -> np.ndarray:
    """Sum of applied, uniaxial anisotropy, demagnetizing and exchange fields."""
    out = np.empty(3)
    _llg.effective_field(
        np.asarray(m, dtype=np.float64), np.asarray(h_applied, dtype=np.float64),
        float(p.h_k), np.asarray(p.easy_axis, dtype=np.float64),
        np.asarray(p.h_demag, dtype=np.float64), float(p.m_s),
        np.asarray(p.h_exchange, dtype=np.float64), out,
    )
    return out


def llg_rhs(m, h_eff, j: SpinCurrent, p: MtjParams) -> np.ndarray:
    out = np.empty(3)
    _llg.rhs(np.asarray(m, dtype=np.float64), np.asarray(h_eff, dtype=np.float64),
             float(p.gamma), float(p.alpha), float(j.prefactor),
             np.asarray(p.e_p, dtype=np.float64), out)
    return out


def precession_frequency(p: MtjParams, profile: FieldProfile) -> float:
    """Upper bound on the Larmor frequency over the whole exposure (Hz)."""
    h_max = (p.susceptibility_factor * profile.peak_amplitude() + p.h_k
             + p.m_s * max(p.h_demag) + math.sqrt(sum(c * c for c in p.h_exchange)))
    return p.gamma * h_max / (2.0 * math.pi)


def max_stable_dt(p: MtjParams, profile: FieldProfile) -> float:
    return 1.0 / (STEPS_PER_PERIOD * precession_frequency(p, profile))


def default_dt(p: MtjParams, profile: FieldProfile) -> float:
    """Step used when none is given: half the coarsest allowed step."""
    return 0.5 * max_stable_dt(p, profile)


def _step_plan(p, profile, duration, dt):
    if duration < 0:
        raise ValueError("duration must be >= 0")
    limit = max_stable_dt(p, profile)
    if dt is None:
        dt = 0.5 * limit
    if dt <= 0:
        raise StepTooCoarse("dt must be positive")
    if dt > limit * (1.0 + 1e-12):
        raise StepTooCoarse(f"dt={dt:.3e}s exceeds 1/(50 f_precession)={limit:.3e}s")
    if duration == 0:
        return 0, dt
    n = math.ceil(duration / dt - 1e-9)
    return n, duration / n


def integrate(m0, profile: FieldProfile, j: SpinCurrent, p: MtjParams,
              duration: float, dt: Optional[float] = None) -> Trajectory:
    """Fixed-step RK4 with renormalization after every step.

    The step is shrunk so that a whole number of steps lands exactly on
    ``duration``.
    """
    n, h = _step_plan(p, profile, duration, dt)
    m0 = normalized(m0)
    path = _llg.trajectory(m0, n, h, *_kernel_args(p, profile, j))
    return Trajectory(np.arange(n + 1) * h, path)


def resolve_bit(m, easy_axis) -> int:
    return 1 if float(np.dot(m, easy_axis)) < 0.0 else 0


def _tilt_axis(easy: np.ndarray) -> np.ndarray:
    ref = np.array([0.0, 0.0, 1.0]) if abs(easy[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    return normalized(np.cross(ref, easy))


def initial_magnetization(bit: int, p: MtjParams) -> np.ndarray:
    """Stored state for ``bit``, tilted slightly toward a fixed in-plane axis.

    Both polarities tilt toward the same side, so a field perpendicular to
    the easy axis treats them symmetrically.
    """
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    easy = np.asarray(p.easy_axis)
    th = math.radians(INITIAL_TILT_DEG)
    sign = 1.0 if bit == 0 else -1.0
    return normalized(sign * math.cos(th) * easy + math.sin(th) * _tilt_axis(easy))


def simulate_exposure(initial_bit: int, p: MtjParams, profile: FieldProfile,
                      duration: float, dt: Optional[float] = None,
                      j: SpinCurrent = NO_CURRENT) -> ExposureOutcome:
    m0 = initial_magnetization(initial_bit, p)
    n, h = _step_plan(p, profile, duration, dt)
    m, first, _last, drift = _llg.exposure(m0, n, h, *_kernel_args(p, profile, j))
    flipped = first >= 0
    return ExposureOutcome(
        flipped=flipped,
        flip_time=first * h if flipped else None,
        final_m=m,
        final_bit=resolve_bit(m, p.easy_axis),
        max_norm_drift=drift,
    )


def first_flip_time(initial_bit: int, p: MtjParams, profile: FieldProfile,
                    duration: float, dt: Optional[float] = None,
                    j: SpinCurrent = NO_CURRENT) -> Optional[float]:
    """Like ``simulate_exposure(...).flip_time`` but stops integrating at the flip."""
    m0 = initial_magnetization(initial_bit, p)
    n, h = _step_plan(p, profile, duration, dt)
    _m, first, _last, _drift = _llg.exposure(m0, n, h, *_kernel_args(p, profile, j), True)
    return first * h if first >= 0 else None


def anti_aligned_bit(p: MtjParams, direction) -> int:
    """The polarity a field along ``direction`` pushes against."""
    return 1 if float(np.dot(direction, p.easy_axis)) > 0 else 0


def _bisect(flips, lo: float, hi: float, tol: float) -> float:
    if not flips(hi):
        raise NoFlipInBracket(f"no flip at the upper bracket {hi:.4g} T")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if flips(mid):
            hi = mid
        else:
            lo = mid
    return hi


def switching_threshold(p: MtjParams, direction, duration: float,
                        dt: Optional[float] = None) -> float:
    """Smallest DC amplitude that reverses the anti-aligned bit within ``duration``.

    The returned value is the amplitude of the source field, so a cell with
    a larger susceptibility factor reports a proportionally smaller value.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    direction = _as_tuple(normalized(direction))
    bit = anti_aligned_bit(p, direction)
    upper = 10.0 * p.h_k

    def flips(a):
        return first_flip_time(bit, p, FieldProfile.dc(a, direction), duration, dt) is not None

    return _bisect(flips, 0.0, upper, 1e-3 * p.h_k)


@functools.lru_cache(maxsize=256)
def ac_disturb_threshold(p: MtjParams, direction: tuple, frequency: float,
                         bit: int, periods: int = 20) -> float:
    """Smallest constant AC amplitude that upsets ``bit`` within ``periods`` cycles."""
    duration = periods / frequency
    upper = 10.0 * p.h_k / p.susceptibility_factor
    dt = default_dt(p, FieldProfile.ac(upper, frequency, direction))

    def flips(a):
        prof = FieldProfile.ac(a, frequency, direction)
        return first_flip_time(bit, p, prof, duration, dt) is not None

    return _bisect(flips, 0.0, upper, 1e-3 * p.h_k / p.susceptibility_factor)


def onset_time(bit: int, p: MtjParams, profile: FieldProfile, duration: float,
               periods: int = 20) -> Optional[float]:
    """When a cell storing ``bit`` first loses it during an exposure, or None.

    Short exposures are integrated directly.  A ramp too long to integrate
    is treated as a slowly varying envelope: the cell is upset once the
    envelope reaches the cell's constant-amplitude AC threshold at the
    profile's frequency.  Long DC and AC exposures are integrated over an
    initial window only; their dynamics settle within nanoseconds.
    """
    if profile.kind is FieldKind.NONE or profile.amplitude == 0 or duration <= 0:
        return None
    dt = default_dt(p, profile)
    if duration / dt <= DIRECT_STEP_LIMIT:
        return first_flip_time(bit, p, profile, duration, dt)
    if profile.kind is FieldKind.RAMP_AC and profile.ramp_time / dt > DIRECT_STEP_LIMIT // 2:
        # threshold in terms of the field the cell sees, so that the
        # susceptibility factor scales onset exactly
        base = p.with_susceptibility(1.0)
        seen = ac_disturb_threshold(base, profile.direction, profile.frequency, bit, periods)
        need = seen / (p.susceptibility_factor * profile.amplitude)
        if need > 1.0:
            return None
        t = need * profile.ramp_time
        return t if t < duration else None
    window = min(duration, DIRECT_STEP_LIMIT * dt)
    return first_flip_time(bit, p, profile, window, dt)
