"""
Hologram phase retrieval by iterating angular-spectrum propagation, and the
two-sided panel designer built on it.

Each side is retrieved independently with a unit-amplitude hologram plane;
the two phase maps only meet when cells are picked from the response table.
The reflection side is handled in a mirrored frame: its target plane is
treated as lying |z_r| ahead of the panel.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import ndimage

from metascreen import angular_spectrum, export_helper, letters
from metascreen.cell_library import CellSelection, responses_at, select_cells
from metascreen.core import (AIR, DomainError, InfeasibleSelectionError, UndefinedCorrelationError,
                             make_wave_context, mm, wrap_phase)
from metascreen.profiles import ArrayLayout, panel_layout

logger = logging.getLogger(__name__)

SIDES = ('reflection', 'transmission')


def correlation(image_a, image_b):
    """Pearson correlation of two equally shaped images, in [-1, 1]."""
    a = np.asarray(image_a, dtype=float).ravel()
    b = np.asarray(image_b, dtype=float).ravel()
    if np.shape(image_a) != np.shape(image_b):
        raise DomainError('images differ in shape: {0} vs {1}'.format(np.shape(image_a), np.shape(image_b)))
    a = a - a.mean()
    b = b - b.mean()
    norm = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if norm == 0.0:
        raise UndefinedCorrelationError('correlation is undefined for a constant image')
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


def reconstruction_quality(intensity, target_intensity):
    """
    Correlation with the target; for a flat target, where correlation is
    undefined, the flatness 1 - std/mean of the intensity.
    """
    target_intensity = np.asarray(target_intensity, dtype=float)
    if np.ptp(target_intensity) > 0:
        try:
            return correlation(intensity, target_intensity)
        except UndefinedCorrelationError:
            return 0.0
    intensity = np.asarray(intensity, dtype=float)
    mean = float(intensity.mean())
    if mean <= 0:
        return 0.0
    return float(np.clip(1.0 - intensity.std() / mean, -1.0, 1.0))


def resample_image(image, shape):
    """Nearest-neighbour resampling of a 2-D image onto ``shape``."""
    image = np.asarray(image, dtype=float)
    if image.shape == tuple(shape):
        return image.copy()
    zoom = (shape[0] / image.shape[0], shape[1] / image.shape[1])
    out = ndimage.zoom(image, zoom, order=0, grid_mode=True, mode='nearest')
    fixed = np.zeros(shape)
    rows, cols = min(shape[0], out.shape[0]), min(shape[1], out.shape[1])
    fixed[:rows, :cols] = out[:rows, :cols]
    return fixed


def normalize_target(image):
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise DomainError('target image must be 2-D, got shape {0}'.format(image.shape))
    if np.any(~np.isfinite(image)) or np.any(image < 0):
        raise DomainError('target image must be finite and non-negative')
    peak = float(image.max())
    if peak <= 0:
        raise DomainError('target image is all zero')
    return image / peak


def load_target(name_or_path, shape, strict=False):
    """
    Target raster from a bundled letter name or an image file, on ``shape``.

    A raster of the wrong shape is resampled with a warning, or rejected
    when ``strict``.
    """
    if name_or_path in letters.available_letters():
        image = letters.letter_raster(name_or_path)
    else:
        try:
            image = export_helper.read_grayscale(name_or_path)
        except OSError as e:
            raise DomainError('cannot read target image {0}: {1}'.format(name_or_path, e))
    if image.shape != tuple(shape):
        if strict:
            raise DomainError('target {0} has shape {1}, panel is {2}'.format(name_or_path, image.shape, tuple(shape)))
        logger.warning('target {0} has shape {1}; resampling to {2}'.format(name_or_path, image.shape, tuple(shape)))
        image = resample_image(image, shape)
    return normalize_target(image)


@dataclass(frozen=True)
class HologramSpec:
    target_r: np.ndarray
    target_t: np.ndarray
    z_r: float = mm(-120.0)
    z_t: float = mm(150.0)
    frequency: float = 6000.0
    layout: ArrayLayout = field(default_factory=lambda: panel_layout(25))
    max_iterations: int = 200
    tol: float = 1e-4
    seed: Optional[int] = None
    medium: object = AIR

    def __post_init__(self):
        if not self.layout.is_panel:
            raise DomainError('hologram layout must be a 2-D panel')
        if not self.z_r < 0 < self.z_t:
            raise DomainError('hologram planes need z_r < 0 < z_t, got {0}, {1}'.format(self.z_r, self.z_t))
        if self.max_iterations < 1:
            raise DomainError('max_iterations must be at least 1')
        for name in ('target_r', 'target_t'):
            image = normalize_target(getattr(self, name))
            if image.shape != self.layout.shape:
                raise DomainError('{0} has shape {1}, panel is {2}'.format(name, image.shape, self.layout.shape))
            object.__setattr__(self, name, image)

    @property
    def wave(self):
        return make_wave_context(self.frequency, self.medium)

    def swapped(self):
        """Same spec with the two targets exchanged."""
        return HologramSpec(target_r=self.target_t, target_t=self.target_r, z_r=self.z_r, z_t=self.z_t,
                            frequency=self.frequency, layout=self.layout, max_iterations=self.max_iterations,
                            tol=self.tol, seed=self.seed, medium=self.medium)


@dataclass(frozen=True)
class IasaResult:
    phase_map: np.ndarray
    correlation_history: List[float]
    final_field: angular_spectrum.ComplexField

    @property
    def iterations(self):
        return len(self.correlation_history)

    @property
    def final_correlation(self):
        return self.correlation_history[-1]

    def hologram_field(self, plane_z=0.0):
        """Unit-amplitude hologram-plane field carrying ``phase_map``."""
        ff = self.final_field
        return angular_spectrum.ComplexField(samples=np.exp(1j * self.phase_map), spacing=ff.spacing,
                                             plane_z=plane_z, wave=ff.wave, allow_aliasing=ff.allow_aliasing)


def run_iasa(target, dz, wave, layout, max_iterations=200, tol=1e-4, seed=None, padded=True):
    """
    Phase-only hologram whose field at distance ``dz`` best reproduces
    ``target`` (amplitude image on the layout grid).

    :param seed: None for a zero initial phase, otherwise the seed of a
        uniform random initial phase in (-pi, pi]
    :return: IasaResult; the phase map is in the package's exp(+jwt)
        convention and is the phase that produced ``final_field``
    """
    if not abs(dz) > 0:
        raise DomainError('propagation distance must be non-zero')
    target = normalize_target(target)
    if target.shape != layout.shape:
        raise DomainError('target has shape {0}, layout has {1}'.format(target.shape, layout.shape))
    target_intensity = target ** 2
    spacing = (layout.cell_pitch,) * target.ndim

    if seed is None:
        phase = np.zeros(layout.shape)
    else:
        rng = np.random.default_rng(seed)
        phase = wrap_phase(rng.uniform(-np.pi, np.pi, size=layout.shape))
    # iterate in the propagator's own frame; phases flip sign on the way out
    hologram = angular_spectrum.ComplexField(samples=np.exp(1j * phase), spacing=spacing, plane_z=0.0,
                                             wave=wave)
    history = []
    image = None
    for iteration in range(max_iterations):
        image = angular_spectrum.propagate(hologram, dz, padded=padded)
        history.append(reconstruction_quality(angular_spectrum.intensity(image), target_intensity))
        if (iteration + 1) % 20 == 0:
            logger.info('iasa iteration {0}/{1}: quality {2:.4f}'.format(iteration + 1, max_iterations, history[-1]))
        if iteration > 0 and abs(history[-1] - history[-2]) < tol:
            logger.debug('iasa converged after {0} iterations'.format(iteration + 1))
            break
        if iteration == max_iterations - 1:
            break
        constrained = image.with_samples(target * np.exp(1j * np.angle(image.samples)))
        back = angular_spectrum.propagate(constrained, -dz, padded=padded)
        hologram = hologram.with_samples(np.exp(1j * np.angle(back.samples)), plane_z=0.0)

    phase_map = wrap_phase(-np.angle(hologram.samples))
    final_field = angular_spectrum.from_spectral_frame(image)
    return IasaResult(phase_map=phase_map, correlation_history=[float(q) for q in history],
                      final_field=final_field)


@dataclass(frozen=True)
class PanelDesign:
    """Quantized two-sided panel; every per-cell map has the layout's shape."""
    layout: ArrayLayout
    frequency: float
    selections: List[CellSelection]
    phi_r: np.ndarray
    phi_t: np.ndarray
    reflection: IasaResult
    transmission: IasaResult
    seed: Optional[int] = None

    def _map(self, attr):
        return np.array([getattr(s, attr) for s in self.selections], dtype=float).reshape(self.layout.shape)

    @property
    def h1_map(self):
        return self._map('h1')

    @property
    def w2_map(self):
        return self._map('w2')

    @property
    def w_map(self):
        return self._map('w')

    @property
    def achieved_phase_r(self):
        return np.angle(np.array([s.achieved_r for s in self.selections])).reshape(self.layout.shape)

    @property
    def achieved_phase_t(self):
        return np.angle(np.array([s.achieved_t for s in self.selections])).reshape(self.layout.shape)

    @property
    def error_r(self):
        return self._map('phase_error_r')

    @property
    def error_t(self):
        return self._map('phase_error_t')

    def error_stats(self):
        return {
            'reflection': {'mean': float(self.error_r.mean()), 'max': float(self.error_r.max())},
            'transmission': {'mean': float(self.error_t.mean()), 'max': float(self.error_t.max())},
        }


def describe_cells(cells, shape):
    """Short (ix, iy) description of flat cell indices on a panel."""
    if not cells:
        return 'no cell'
    iy, ix = np.unravel_index(cells[0], shape)
    text = 'cell (ix={0}, iy={1})'.format(int(ix), int(iy))
    if len(cells) > 1:
        text += ' and {0} more'.format(len(cells) - 1)
    return text


def _side_seeds(seed):
    if seed is None:
        return None, None
    return [seed, 0], [seed, 1]


def design_two_sided_panel(spec, table, padded=True):
    """
    Retrieve both phase maps and pick one cell per pixel for them.

    :raises InfeasibleSelectionError: when no table entry is usable, naming the
        first affected cell
    """
    wave = spec.wave
    seed_r, seed_t = _side_seeds(spec.seed)
    logger.info('retrieving reflection-side hologram at {0:g} mm'.format(spec.z_r * 1e3))
    result_r = run_iasa(spec.target_r, abs(spec.z_r), wave, spec.layout, spec.max_iterations, spec.tol,
                        seed=seed_r, padded=padded)
    logger.info('retrieving transmission-side hologram at {0:g} mm'.format(spec.z_t * 1e3))
    result_t = run_iasa(spec.target_t, spec.z_t, wave, spec.layout, spec.max_iterations, spec.tol,
                        seed=seed_t, padded=padded)
    try:
        selections = select_cells(table, result_r.phase_map.ravel(), result_t.phase_map.ravel(),
                                  frequency=spec.frequency)
    except InfeasibleSelectionError as e:
        raise InfeasibleSelectionError('{0}: {1}'.format(describe_cells(e.cells, spec.layout.shape), e),
                                       nearest_split=e.nearest_split, cells=e.cells)
    design = PanelDesign(layout=spec.layout, frequency=float(spec.frequency), selections=selections,
                         phi_r=result_r.phase_map, phi_t=result_t.phase_map,
                         reflection=result_r, transmission=result_t, seed=spec.seed)
    stats = design.error_stats()
    logger.info('quantization error: reflection mean {0:.3f} rad, transmission mean {1:.3f} rad'.format(
        stats['reflection']['mean'], stats['transmission']['mean']))
    return design


@dataclass(frozen=True)
class SideVerification:
    side: str
    frequency: float
    distance: float
    intensity: np.ndarray
    correlation: float
    sweep_distances: np.ndarray
    sweep_correlations: np.ndarray

    @property
    def best_distance(self):
        return float(self.sweep_distances[int(np.argmax(self.sweep_correlations))])

    @property
    def best_offset(self):
        return self.best_distance - self.distance


@dataclass(frozen=True)
class HologramVerification:
    frequency: float
    ideal: bool
    sides: Dict[str, SideVerification]


def _sweep_distances(distance, half_range, step):
    offsets = np.arange(-half_range, half_range + step / 2.0, step)
    distances = np.round(distance + offsets, 12)
    distances = distances[distances > 0]
    if not np.any(np.isclose(distances, distance)):
        distances = np.sort(np.append(distances, distance))
    return distances


def verify_hologram(design, table, spec, frequency=None, ideal=False, half_range=mm(60.0), step=mm(5.0),
                    padded=True):
    """
    Render both sides of a panel and score them against the targets.

    The hologram-plane field is the achieved r (reflection) or t
    (transmission) of every selected cell at ``frequency``; with ``ideal``
    it is the unit-amplitude retrieved phase instead. Besides the nominal
    planes, a stack of planes around each is scored.
    """
    frequency = spec.frequency if frequency is None else float(frequency)
    wave = make_wave_context(frequency, spec.medium)
    if ideal:
        boundaries = {'reflection': np.exp(1j * design.phi_r), 'transmission': np.exp(1j * design.phi_t)}
    else:
        moved = responses_at(table, design.selections, frequency)
        shape = design.layout.shape
        boundaries = {'reflection': np.array([s.achieved_r for s in moved]).reshape(shape),
                      'transmission': np.array([s.achieved_t for s in moved]).reshape(shape)}
    targets = {'reflection': spec.target_r ** 2, 'transmission': spec.target_t ** 2}
    distances = {'reflection': abs(spec.z_r), 'transmission': spec.z_t}
    spacing = (design.layout.cell_pitch,) * 2

    sides = {}
    for side in SIDES:
        boundary = angular_spectrum.ComplexField(samples=boundaries[side], spacing=spacing, plane_z=0.0, wave=wave)
        image = angular_spectrum.radiate(boundary, distances[side], padded=padded)
        image_intensity = angular_spectrum.intensity(image)
        sweep = _sweep_distances(distances[side], half_range, step)
        stack = angular_spectrum.radiate_stack(boundary, sweep, padded=padded)
        sweep_q = np.array([reconstruction_quality(np.abs(s) ** 2, targets[side]) for s in stack])
        sides[side] = SideVerification(side=side, frequency=frequency, distance=distances[side],
                                       intensity=image_intensity,
                                       correlation=reconstruction_quality(image_intensity, targets[side]),
                                       sweep_distances=sweep, sweep_correlations=sweep_q)
        logger.info('{0} side at {1:g} Hz: correlation {2:.3f}, best plane {3:+.0f} mm from nominal'.format(
            side, frequency, sides[side].correlation, sides[side].best_offset * 1e3))
    return HologramVerification(frequency=frequency, ideal=ideal, sides=sides)


def design_to_json(design, iterations=None):
    """Per-cell export of a panel design plus run metadata."""
    ny, nx = design.layout.shape
    cells = []
    for flat, s in enumerate(design.selections):
        iy, ix = divmod(flat, nx)
        cells.append({
            'ix': ix, 'iy': iy,
            'h1_mm': s.h1 * 1e3, 'w2_mm': s.w2 * 1e3, 'w_mm': s.w * 1e3,
            'phi_r_rad': float(design.phi_r.ravel()[flat]), 'phi_t_rad': float(design.phi_t.ravel()[flat]),
            'err_r_rad': s.phase_error_r, 'err_t_rad': s.phase_error_t,
        })
    return {
        'cells': cells,
        'frequency_hz': design.frequency,
        'seed': design.seed,
        'iterations': iterations if iterations is not None else {
            'reflection': design.reflection.iterations, 'transmission': design.transmission.iterations},
        'grid': [ny, nx],
        'pitch_mm': design.layout.cell_pitch * 1e3,
        'error_stats': design.error_stats(),
    }
