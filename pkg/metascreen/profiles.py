"""
Target phase profiles for line arrays and panels.

The array lies in the plane z = 0: along x for line arrays, in x-y for
panels. A focal point is given as (z0, x0) or (z0, x0, y0). Profiles stay
unwrapped; wrapping happens when cells are selected.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas

from metascreen import export_helper
from metascreen.core import TWO_PI, AliasingError, DomainError, mm

logger = logging.getLogger(__name__)

DEFAULT_PITCH = mm(14.3)
PROFILE_COLUMNS = ['index', 'x_mm', 'y_mm', 'phi_r_rad', 'phi_t_rad']


def cell_coordinates(n, pitch):
    """n positions spaced by ``pitch``, symmetric about 0."""
    if n < 1:
        raise DomainError('an array needs at least one cell, got {0}'.format(n))
    if not pitch > 0:
        raise DomainError('cell pitch must be positive, got {0}'.format(pitch))
    return (np.arange(n) - (n - 1) / 2.0) * pitch


@dataclass(frozen=True)
class ArrayLayout:
    """
    Cell centres of a line array (shape (n,)) or a panel (shape (ny, nx)).

    ``x`` and ``y`` have the layout's shape; y is zero for line arrays.
    """
    cell_pitch: float
    shape: Tuple[int, ...]

    def __post_init__(self):
        if len(self.shape) not in (1, 2) or min(self.shape) < 1:
            raise DomainError('layout shape must be (n,) or (ny, nx) with n >= 1, got {0}'.format(self.shape))
        if not self.cell_pitch > 0:
            raise DomainError('cell pitch must be positive, got {0}'.format(self.cell_pitch))

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def is_panel(self):
        return len(self.shape) == 2

    @property
    def x(self):
        if self.is_panel:
            return np.broadcast_to(cell_coordinates(self.shape[1], self.cell_pitch), self.shape).copy()
        return cell_coordinates(self.shape[0], self.cell_pitch)

    @property
    def y(self):
        if self.is_panel:
            column = cell_coordinates(self.shape[0], self.cell_pitch)[:, None]
            return np.broadcast_to(column, self.shape).copy()
        return np.zeros(self.shape)

    @property
    def cell_positions(self):
        """(n_cells, 2) array of (x, y), C order."""
        return np.column_stack([self.x.ravel(), self.y.ravel()])


def line_layout(n_cells, pitch=DEFAULT_PITCH):
    return ArrayLayout(cell_pitch=float(pitch), shape=(int(n_cells),))


def panel_layout(nx, ny=None, pitch=DEFAULT_PITCH):
    ny = nx if ny is None else ny
    return ArrayLayout(cell_pitch=float(pitch), shape=(int(ny), int(nx)))


@dataclass(frozen=True)
class PhaseProfile:
    layout: ArrayLayout
    phi_r: np.ndarray
    phi_t: np.ndarray

    def __post_init__(self):
        for name in ('phi_r', 'phi_t'):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != self.layout.shape:
                raise DomainError('{0} has shape {1}, layout has {2}'.format(name, values.shape, self.layout.shape))
            if not np.all(np.isfinite(values)):
                raise DomainError('{0} must be finite'.format(name))
            object.__setattr__(self, name, values)


def _focal_terms(layout, focal):
    focal = tuple(float(v) for v in focal)
    if len(focal) == 2:
        z0, x0 = focal
        y0 = 0.0
    elif len(focal) == 3:
        z0, x0, y0 = focal
    else:
        raise DomainError('focal point must be (z0, x0) or (z0, x0, y0), got {0}'.format(focal))
    if abs(z0) < 1e-12:
        raise DomainError('focal point lies on the array plane (z0 = 0)')
    to_cell = np.sqrt(z0 ** 2 + (layout.x - x0) ** 2 + (layout.y - y0) ** 2)
    to_origin = math.sqrt(z0 ** 2 + x0 ** 2 + y0 ** 2)
    return to_cell, to_origin


def focusing_profile(layout, focal, k0):
    """
    Per-cell phase that brings the transmitted wave to ``focal``:
    k0 * (|cell - focal| - |origin - focal|).
    """
    to_cell, to_origin = _focal_terms(layout, focal)
    return k0 * (to_cell - to_origin)


def diffusion_profile(layout, virtual_focus, k0):
    """Reflected phase of a wave diverging from ``virtual_focus``; the negative of focusing."""
    return -focusing_profile(layout, virtual_focus, k0)


def steering_profile(layout, theta_r, k0):
    """Linear phase k0 * x * sin(theta_r) that tilts the wave by ``theta_r``."""
    if not abs(theta_r) < np.pi / 2:
        raise DomainError('steering angle must satisfy |theta| < 90 deg, got {0:.2f} deg'.format(
            math.degrees(theta_r)))
    return k0 * layout.x * math.sin(theta_r)


def flat_profile(layout):
    return np.zeros(layout.shape)


def side_profile(kind, layout, k0, angle=0.0, focus=None):
    """One side of a design from a kind name, as used by run configs."""
    if kind == 'steering':
        return steering_profile(layout, angle, k0)
    if kind == 'focusing':
        return focusing_profile(layout, focus, k0)
    if kind == 'diffusion':
        return diffusion_profile(layout, focus, k0)
    if kind == 'flat':
        return flat_profile(layout)
    raise DomainError('unknown profile kind {0!r}'.format(kind))


@dataclass(frozen=True)
class SnellResult:
    angle: Optional[float]
    evanescent: bool
    gradient: float
    sin_argument: float
    fit_residual: float

    @property
    def angle_deg(self):
        return None if self.angle is None else math.degrees(self.angle)


def max_alias_free_pitch(theta, k0):
    """Largest pitch keeping the per-cell phase step of a steering profile below pi."""
    s = abs(math.sin(theta))
    if s == 0:
        return math.inf
    return (TWO_PI / k0) / (2.0 * s)


def snell_check(phases, layout, theta_i, k0):
    """
    Steering angle predicted by the generalized law of reflection/refraction
    for a line-array profile, air on both sides.

    :param phases: unwrapped per-cell phase along the array
    :param theta_i: incidence angle in radians
    :return: SnellResult; ``angle`` is None when the wave is evanescent
    """
    if layout.is_panel:
        raise DomainError('snell_check works on line arrays')
    phases = np.asarray(phases, dtype=float)
    if phases.shape != layout.shape:
        raise DomainError('profile has shape {0}, layout has {1}'.format(phases.shape, layout.shape))
    if phases.size < 2:
        raise DomainError('snell_check needs at least 2 cells')
    steps = np.diff(phases)
    if np.any(np.abs(steps) > np.pi):
        worst = int(np.argmax(np.abs(steps)))
        raise AliasingError('phase jumps by {0:.3f} rad between cells {1} and {2}'.format(
            steps[worst], worst, worst + 1))
    unwrapped = np.unwrap(phases)
    x = layout.x
    slope, intercept = np.polyfit(x, unwrapped, 1)
    residual = float(np.sqrt(np.mean((unwrapped - (slope * x + intercept)) ** 2)))
    wavelength = TWO_PI / k0
    argument = math.sin(theta_i) + wavelength * slope / TWO_PI
    if abs(argument) > 1.0:
        logger.info('phase gradient {0:.3f} rad/m gives an evanescent wave (sin = {1:.3f})'.format(slope, argument))
        return SnellResult(angle=None, evanescent=True, gradient=float(slope), sin_argument=float(argument),
                           fit_residual=residual)
    return SnellResult(angle=math.asin(argument), evanescent=False, gradient=float(slope),
                       sin_argument=float(argument), fit_residual=residual)


def profile_frame(profile):
    layout = profile.layout
    return pandas.DataFrame({
        'index': np.arange(layout.n_cells),
        'x_mm': layout.x.ravel() * 1e3,
        'y_mm': layout.y.ravel() * 1e3,
        'phi_r_rad': profile.phi_r.ravel(),
        'phi_t_rad': profile.phi_t.ravel(),
    }, columns=PROFILE_COLUMNS)


def write_profile_csv(profile, path):
    export_helper.write_csv(path, profile_frame(profile))
