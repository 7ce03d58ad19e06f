"""
Field prediction for line-array designs.

Each cell is a complex boundary pixel (its achieved r or t) held constant
across the cell width on a finer x grid, zero outside the aperture. Both
sides are radiated with the 1-D angular spectrum into the half-space in
front of them, so reflection maps use the same positive z as transmission
maps.
"""
import logging
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas
from scipy import fft

from metascreen import angular_spectrum, export_helper
from metascreen.cell_library import CellSelection
from metascreen.core import DomainError, mm

logger = logging.getLogger(__name__)

DEFAULT_SUPERSAMPLE = 7
DEFAULT_Z_STEP = mm(2.0)
DEFAULT_HALF_WIDTH = mm(300.0)
FARFIELD_POINTS = 4096
NOISE_FLOOR = 1e-6
DIFFRACTION_FACTOR = 3.0
INTENSITY_COLUMNS = ['x_mm', 'z_mm', 'intensity']


@dataclass(frozen=True)
class FocusResult:
    z: Optional[float]
    x: Optional[float]
    peak: float
    tie: bool = False
    no_peak: bool = False
    diffraction_peak: bool = False

    def error_to(self, focal):
        """Distance to a (z0, x0) target, None without a peak."""
        if self.no_peak:
            return None
        return math.hypot(self.z - focal[0], self.x - focal[1])


@dataclass(frozen=True)
class LobeResult:
    angle: Optional[float]
    side_lobe_ratio: float
    no_lobe: bool = False

    @property
    def angle_deg(self):
        return None if self.angle is None else math.degrees(self.angle)


@dataclass(frozen=True)
class SideReport:
    boundary: angular_spectrum.ComplexField
    intensity: np.ndarray  # (nz, nx)
    focus: FocusResult
    farfield_angles: np.ndarray
    farfield_intensity: np.ndarray
    lobe: LobeResult


@dataclass(frozen=True)
class DesignReport:
    frequency: float
    x: np.ndarray
    z: np.ndarray
    reflection: SideReport
    transmission: SideReport
    focal: Optional[tuple] = None

    @property
    def focus_location(self):
        f = self.transmission.focus
        return None if f.no_peak else (f.z, f.x)

    @property
    def focus_error(self):
        if self.focal is None:
            return None
        return self.transmission.focus.error_to(self.focal)

    @property
    def steering_angle(self):
        return self.reflection.lobe.angle

    @property
    def side_lobe_ratio(self):
        return self.reflection.lobe.side_lobe_ratio

    def summary(self):
        def side(report):
            f = report.focus
            return {
                'focus_z_mm': None if f.no_peak else f.z * 1e3,
                'focus_x_mm': None if f.no_peak else f.x * 1e3,
                'focus_peak': f.peak,
                'focus_tie': f.tie,
                'no_peak': f.no_peak,
                'diffraction_peak': f.diffraction_peak,
                'lobe_angle_deg': report.lobe.angle_deg,
                'side_lobe_ratio': report.lobe.side_lobe_ratio,
                'no_lobe': report.lobe.no_lobe,
            }
        error = self.focus_error
        return {
            'frequency_hz': self.frequency,
            'focal_mm': None if self.focal is None else [v * 1e3 for v in self.focal],
            'focus_error_mm': None if error is None else error * 1e3,
            'reflection': side(self.reflection),
            'transmission': side(self.transmission),
        }


def ideal_selections(phi_r, phi_t):
    """Stand-in selections carrying unit-amplitude ideal phases, no geometry."""
    return [CellSelection(h1=math.nan, w2=math.nan, w=math.nan, achieved_r=complex(np.exp(1j * r)),
                          achieved_t=complex(np.exp(1j * t)), phase_error_r=0.0, phase_error_t=0.0)
            for r, t in zip(np.ravel(phi_r), np.ravel(phi_t))]


def boundary_field(values, layout, wave, supersample=DEFAULT_SUPERSAMPLE, half_width=DEFAULT_HALF_WIDTH):
    """
    Piecewise-constant 1-D boundary field of a line array.

    Cell i covers [x_i - pitch/2, x_i + pitch/2); the grid spans
    +/- ``half_width`` (at least the aperture) with spacing pitch/supersample.
    """
    if layout.is_panel:
        raise DomainError('field prediction works on line arrays')
    values = np.asarray(values, dtype=complex)
    if values.shape != layout.shape:
        raise DomainError('{0} boundary values for {1} cells'.format(values.size, layout.n_cells))
    if supersample < 1:
        raise DomainError('supersample must be at least 1')
    pitch = layout.cell_pitch
    dx = pitch / supersample
    aperture_samples = layout.n_cells * supersample
    half_samples = max(int(math.ceil(half_width / dx)), int(math.ceil(aperture_samples / 2.0)))
    n = 2 * half_samples + (aperture_samples % 2)
    samples = np.zeros(n, dtype=complex)
    start = (n - aperture_samples) // 2
    samples[start:start + aperture_samples] = np.repeat(values, supersample)
    return angular_spectrum.ComplexField(samples=samples, spacing=(dx,), plane_z=0.0, wave=wave)


def z_planes(z_max, z_step=DEFAULT_Z_STEP, z_min=None):
    z_min = z_step if z_min is None else z_min
    if not (z_max >= z_min > 0 and z_step > 0):
        raise DomainError('need 0 < z_min <= z_max and a positive step')
    n = int(math.floor((z_max - z_min) / z_step + 1e-9)) + 1
    return np.round(z_min + z_step * np.arange(n), 12)


def locate_focus(intensity_map, x, z, boundary_level=None):
    """
    Peak of an intensity map indexed (z, x), refined by a 3-point parabola
    along each axis.

    Ties go to the smallest flat index and set ``tie``. A peak weaker than
    ``DIFFRACTION_FACTOR`` times ``boundary_level`` is flagged as an
    aperture-diffraction peak rather than a focus.
    """
    grid = np.asarray(intensity_map, dtype=float)
    if grid.size == 0:
        raise DomainError('intensity map is empty')
    grid = np.atleast_2d(grid)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    peak = float(grid.max())
    if np.ptp(grid) == 0:
        return FocusResult(z=None, x=None, peak=peak, no_peak=True)
    flat = int(np.argmax(grid))
    iz, ix = np.unravel_index(flat, grid.shape)
    tie = int(np.count_nonzero(np.isclose(grid, peak, rtol=1e-12, atol=0.0))) > 1
    z_focus = _refine(grid[:, ix], iz, z)
    x_focus = _refine(grid[iz, :], ix, x)
    diffraction = boundary_level is not None and peak < DIFFRACTION_FACTOR * boundary_level
    return FocusResult(z=z_focus, x=x_focus, peak=peak, tie=tie, diffraction_peak=bool(diffraction))


def _refine(profile, i, axis):
    if axis.size == 1 or i == 0 or i == axis.size - 1:
        return float(axis[i])
    a, b, c = profile[i - 1], profile[i], profile[i + 1]
    denominator = a - 2.0 * b + c
    if denominator >= 0:
        return float(axis[i])
    offset = 0.5 * (a - c) / denominator
    return float(axis[i] + offset * (axis[i + 1] - axis[i - 1]) / 2.0)


def farfield_pattern(boundary, n_points=FARFIELD_POINTS):
    """
    Far-field intensity against angle from the boundary field's spectrum,
    restricted to the propagating band kx = k sin(theta); max-normalized.
    """
    if boundary.ndim != 1:
        raise DomainError('far field is computed for 1-D boundaries')
    n = max(n_points, boundary.shape[0])
    spectral = fft.fftshift(fft.fft(boundary.samples, n))
    kx = fft.fftshift(2.0 * np.pi * fft.fftfreq(n, boundary.spacing[0]))
    k = boundary.wave.wavenumber
    inside = np.abs(kx) <= k
    angles = np.arcsin(kx[inside] / k)
    level = np.abs(spectral[inside]) ** 2
    top = level.max() if level.size else 0.0
    if top > 0:
        level = level / top
    return angles, level


def steering_lobe(angles, intensity, noise_floor=NOISE_FLOOR):
    """Main-lobe angle and the ratio of the strongest other lobe to it."""
    angles = np.asarray(angles, dtype=float)
    intensity = np.asarray(intensity, dtype=float)
    if intensity.size == 0 or intensity.max() <= 0:
        return LobeResult(angle=None, side_lobe_ratio=0.0, no_lobe=True)
    floor = noise_floor * intensity.max()
    padded = np.concatenate([[-np.inf], intensity, [-np.inf]])
    is_peak = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] > padded[2:]) & (intensity > floor)
    peaks = np.flatnonzero(is_peak)
    if peaks.size == 0:
        return LobeResult(angle=None, side_lobe_ratio=0.0, no_lobe=True)
    order = peaks[np.argsort(-intensity[peaks], kind='stable')]
    main = order[0]
    ratio = float(intensity[order[1]] / intensity[main]) if order.size > 1 else 0.0
    return LobeResult(angle=float(angles[main]), side_lobe_ratio=ratio)


def _side_report(values, layout, wave, z, supersample, half_width, padded):
    boundary = boundary_field(values, layout, wave, supersample, half_width)
    stack = angular_spectrum.radiate_stack(boundary, z, padded=padded)
    intensity = np.abs(stack) ** 2
    x = boundary.coordinates()[0]
    level = float(np.mean(np.abs(np.asarray(values)) ** 2))
    focus = locate_focus(intensity, x, z, boundary_level=level)
    angles, pattern = farfield_pattern(boundary)
    return SideReport(boundary=boundary, intensity=intensity, focus=focus, farfield_angles=angles,
                      farfield_intensity=pattern, lobe=steering_lobe(angles, pattern))


def predict_fields(selections, layout, wave, z_range, focal=None, supersample=DEFAULT_SUPERSAMPLE,
                   half_width=DEFAULT_HALF_WIDTH, z_step=DEFAULT_Z_STEP, padded=True):
    """
    Reflection and transmission intensity maps of a line-array design.

    :param selections: one CellSelection per cell, in layout order
    :param z_range: (z_min, z_max) or just z_max, metres
    :param focal: optional (z0, x0) the transmission side should focus on
    """
    if len(selections) != layout.n_cells:
        raise DomainError('{0} selections for {1} cells'.format(len(selections), layout.n_cells))
    if np.ndim(z_range) == 0:
        z = z_planes(float(z_range), z_step)
    else:
        z = z_planes(float(z_range[1]), z_step, z_min=float(z_range[0]))
    r_values = np.array([s.achieved_r for s in selections]).reshape(layout.shape)
    t_values = np.array([s.achieved_t for s in selections]).reshape(layout.shape)
    reflection = _side_report(r_values, layout, wave, z, supersample, half_width, padded)
    transmission = _side_report(t_values, layout, wave, z, supersample, half_width, padded)
    report = DesignReport(frequency=wave.frequency, x=reflection.boundary.coordinates()[0], z=z,
                          reflection=reflection, transmission=transmission,
                          focal=None if focal is None else (float(focal[0]), float(focal[1])))
    logger.info('{0:g} Hz: transmission peak at z={1} mm, reflection lobe {2} deg'.format(
        wave.frequency,
        'n/a' if transmission.focus.no_peak else '{0:.1f}'.format(transmission.focus.z * 1e3),
        'n/a' if reflection.lobe.no_lobe else '{0:.1f}'.format(reflection.lobe.angle_deg)))
    return report


def intensity_frame(intensity_map, x, z):
    Z, X = np.meshgrid(z, x, indexing='ij')
    return pandas.DataFrame({'x_mm': X.ravel() * 1e3, 'z_mm': Z.ravel() * 1e3,
                             'intensity': np.asarray(intensity_map).ravel()}, columns=INTENSITY_COLUMNS)


def farfield_frame(angles, intensity):
    return pandas.DataFrame({'angle_deg': np.degrees(angles), 'intensity': intensity},
                            columns=['angle_deg', 'intensity'])


def write_report(report, dir, prefix):
    """Intensity CSV + PGM per side, far-field CSV and the JSON summary."""
    for name in ('reflection', 'transmission'):
        side = getattr(report, name)
        base = os.path.join(dir, '{0}_{1}'.format(prefix, name))
        export_helper.write_csv(base + '_intensity.csv', intensity_frame(side.intensity, report.x, report.z))
        export_helper.write_pgm(base + '_intensity.pgm', side.intensity)
    export_helper.write_csv(os.path.join(dir, '{0}_farfield.csv'.format(prefix)),
                            farfield_frame(report.reflection.farfield_angles, report.reflection.farfield_intensity))
    export_helper.write_json(os.path.join(dir, '{0}_report.json'.format(prefix)), report.summary())
