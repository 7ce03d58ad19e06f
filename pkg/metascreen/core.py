"""
Physical constants, wave quantities and phase helpers shared by every module.

Conventions used throughout the package:

- SI units inside the library (m, Hz, rad). Millimetres only at the
  config / CLI boundary.
- Time dependence e^{+jwt}; a wave travelling towards +z is p+ e^{-jk0 z}.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

AIR_DENSITY = 1.22  # kg/m^3
AIR_SOUND_SPEED = 343.0  # m/s
TWO_PI = 2.0 * np.pi


class MetascreenError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(MetascreenError, ValueError):
    """A precondition on an input value is violated."""


class SingularClosureError(MetascreenError):
    """The port closure of a transfer matrix cannot be solved."""


class NumericalError(MetascreenError):
    """A dense solve failed; carries the condition number when known."""

    def __init__(self, msg, condition_number=None):
        super().__init__(msg)
        self.condition_number = condition_number


class InfeasibleSelectionError(MetascreenError):
    """
    No table entry satisfies the amplitude restriction. ``cells`` lists the
    flat indices of the targets left without a selection.
    """

    def __init__(self, msg, nearest_split=None, cells=None):
        super().__init__(msg)
        self.nearest_split = nearest_split
        self.cells = list(cells) if cells is not None else []


class AliasingError(MetascreenError):
    """Adjacent samples of a phase profile jump by more than pi."""


class UndefinedCorrelationError(MetascreenError):
    """Correlation asked for a constant image."""


class ConfigError(MetascreenError):
    """Run configuration could not be read or validated."""


@dataclass(frozen=True)
class Medium:
    density: float = AIR_DENSITY
    sound_speed: float = AIR_SOUND_SPEED

    def __post_init__(self):
        if not (self.density > 0 and self.sound_speed > 0):
            raise DomainError('medium needs positive density and sound speed, got {0}, {1}'.format(
                self.density, self.sound_speed))


AIR = Medium()


@dataclass(frozen=True)
class WaveContext:
    frequency: float
    wavenumber: float
    wavelength: float


def make_wave_context(frequency, medium=AIR):
    """
    Wave quantities of a monochromatic field in ``medium``.

    :param frequency: frequency in Hz, > 0
    :param medium: propagation medium
    :return: WaveContext with k0 = 2 pi f / c0 and lambda0 = c0 / f
    """
    frequency = float(frequency)
    if not math.isfinite(frequency) or frequency <= 0:
        raise DomainError('frequency must be positive, got {0}'.format(frequency))
    return WaveContext(frequency=frequency,
                       wavenumber=TWO_PI * frequency / medium.sound_speed,
                       wavelength=medium.sound_speed / frequency)


def wrap_phase(phi):
    """Wrap phase(s) into the half-open interval (-pi, pi]."""
    arr = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError('phase must be finite')
    wrapped = np.pi - np.mod(np.pi - arr, TWO_PI)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


def phase_distance(a, b):
    """Circular distance between two phases, in [0, pi]."""
    return np.abs(wrap_phase(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def mm(value):
    """Millimetres to metres; accepts scalars and sequences."""
    if np.ndim(value) == 0:
        return float(value) * 1e-3
    return np.asarray(value, dtype=float) * 1e-3


def to_mm(value):
    if np.ndim(value) == 0:
        return float(value) * 1e3
    return np.asarray(value, dtype=float) * 1e3
