"""
Angular-spectrum propagation between parallel planes, 1-D and 2-D.

``propagate`` multiplies the spectrum by exp(+j dz kz) on the propagating
disk and by exp(-|dz| kappa) outside it. That kernel corresponds to an
exp(-jwt) time factor; fields in the package convention (exp(+jwt)) go
through ``to_spectral_frame`` / ``from_spectral_frame``, which ``radiate``
wraps up.
"""
import logging
import os
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
import pandas
from scipy import fft

from metascreen import export_helper
from metascreen.core import AIR, DomainError, WaveContext, make_wave_context

logger = logging.getLogger(__name__)

FIELD_COLUMNS = ['x_mm', 'y_mm', 're_p', 'im_p']


@dataclass(frozen=True)
class ComplexField:
    """
    Complex pressure sampled on a uniform grid.

    ``spacing`` has one entry per array axis; a 2-D grid is indexed (y, x).
    """
    samples: np.ndarray
    spacing: Tuple[float, ...]
    plane_z: float
    wave: WaveContext
    allow_aliasing: bool = False

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex)
        if samples.ndim not in (1, 2) or samples.size == 0:
            raise DomainError('field must be a non-empty 1-D or 2-D grid, got shape {0}'.format(samples.shape))
        spacing = tuple(float(d) for d in np.atleast_1d(self.spacing))
        if len(spacing) == 1 and samples.ndim == 2:
            spacing = spacing * 2
        if len(spacing) != samples.ndim:
            raise DomainError('need one spacing per axis, got {0} for shape {1}'.format(spacing, samples.shape))
        if any(not d > 0 for d in spacing):
            raise DomainError('sample spacing must be positive, got {0}'.format(spacing))
        limit = self.wave.wavelength / 2.0
        if not self.allow_aliasing and any(d >= limit for d in spacing):
            raise DomainError('sample spacing {0:.2f} mm is not below half a wavelength ({1:.2f} mm)'.format(
                max(spacing) * 1e3, limit * 1e3))
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'plane_z', float(self.plane_z))

    @property
    def shape(self):
        return self.samples.shape

    @property
    def ndim(self):
        return self.samples.ndim

    def coordinates(self):
        """Sample positions per axis, centred on 0."""
        return [(np.arange(n) - (n - 1) / 2.0) * d for n, d in zip(self.shape, self.spacing)]

    def with_samples(self, samples, plane_z=None):
        return replace(self, samples=samples, plane_z=self.plane_z if plane_z is None else plane_z)


def make_field(samples, spacing, frequency, plane_z=0.0, medium=AIR, allow_aliasing=False):
    return ComplexField(samples=samples, spacing=spacing, plane_z=plane_z,
                        wave=make_wave_context(frequency, medium), allow_aliasing=allow_aliasing)


def wavenumber_axes(shape, spacing):
    return [2.0 * np.pi * fft.fftfreq(n, d) for n, d in zip(shape, spacing)]


def _transverse_wavenumber_sq(shape, spacing):
    axes = wavenumber_axes(shape, spacing)
    if len(axes) == 1:
        return axes[0] ** 2
    ky, kx = np.meshgrid(axes[0], axes[1], indexing='ij')
    return kx ** 2 + ky ** 2


def spectrum(field):
    """Unnormalized DFT of the samples; its axes are ``wavenumber_axes``."""
    return fft.fftn(field.samples)


def inverse_spectrum(spectral, like):
    """Inverse of ``spectrum``, returned as a field on the grid of ``like``."""
    return like.with_samples(fft.ifftn(spectral))


def propagator_value(kx, ky, k, dz):
    """
    exp(+j dz kz) with kz = sqrt(k^2 - kx^2 - ky^2) on the propagating disk;
    exp(-|dz| sqrt(kx^2 + ky^2 - k^2)) outside it, for either sign of dz.
    """
    if not k > 0:
        raise DomainError('wavenumber must be positive, got {0}'.format(k))
    kt2 = np.asarray(kx, dtype=float) ** 2 + np.asarray(ky, dtype=float) ** 2
    return _propagator(kt2, k, dz)


def _propagator(kt2, k, dz):
    kz2 = k ** 2 - kt2
    propagating = kz2 >= 0
    root = np.sqrt(np.abs(kz2))
    value = np.where(propagating, np.exp(1j * dz * root), np.exp(-abs(dz) * root))
    if value.ndim == 0:
        return complex(value)
    return value


def _next_pow2(n):
    return 1 << int(np.ceil(np.log2(max(n, 1))))


def _padding(shape):
    return [(_next_pow2(2 * n) - n) // 2 for n in shape], [_next_pow2(2 * n) for n in shape]


def _pad(samples):
    before, padded_shape = _padding(samples.shape)
    out = np.zeros(padded_shape, dtype=complex)
    index = tuple(slice(b, b + n) for b, n in zip(before, samples.shape))
    out[index] = samples
    return out, index


def propagate(field, dz, padded=True):
    """
    Field on the plane ``dz`` further along z.

    :param padded: embed the grid in one of at least twice the size per axis
        (next power of two) and crop afterwards; with ``padded=False`` the
        grid is treated as periodic
    """
    return field.with_samples(propagate_stack(field, [dz], padded=padded)[0], plane_z=field.plane_z + dz)


def propagate_stack(field, distances, padded=True):
    """
    Samples of ``field`` propagated by each of ``distances``.

    :return: array of shape (len(distances),) + field.shape
    """
    distances = np.atleast_1d(np.asarray(distances, dtype=float))
    if padded:
        work, crop = _pad(field.samples)
    else:
        work, crop = field.samples, tuple(slice(None) for _ in field.shape)
    spectral = fft.fftn(work)
    kt2 = _transverse_wavenumber_sq(work.shape, field.spacing)
    k = field.wave.wavenumber
    out = np.empty((distances.size,) + field.shape, dtype=complex)
    for i, dz in enumerate(distances):
        if dz == 0:
            out[i] = field.samples
            continue
        out[i] = fft.ifftn(spectral * _propagator(kt2, k, dz))[crop]
    return out


def propagating_part(field):
    """Field with every evanescent spectral component removed (periodic grid)."""
    kt2 = _transverse_wavenumber_sq(field.shape, field.spacing)
    mask = kt2 <= field.wave.wavenumber ** 2
    return field.with_samples(fft.ifftn(fft.fftn(field.samples) * mask))


def intensity(field):
    """|p|^2, in units of the incident amplitude squared."""
    samples = field.samples if isinstance(field, ComplexField) else np.asarray(field)
    return np.abs(samples) ** 2


def to_spectral_frame(field):
    return field.with_samples(np.conj(field.samples))


def from_spectral_frame(field):
    return field.with_samples(np.conj(field.samples))


def radiate(field, dz, padded=True):
    """``propagate`` for a field in the package's exp(+jwt) convention."""
    return from_spectral_frame(propagate(to_spectral_frame(field), dz, padded=padded))


def radiate_stack(field, distances, padded=True):
    return np.conj(propagate_stack(to_spectral_frame(field), distances, padded=padded))


def field_frame(field):
    coords = field.coordinates()
    if field.ndim == 1:
        x = coords[0]
        y = np.zeros_like(x)
    else:
        y, x = np.meshgrid(coords[0], coords[1], indexing='ij')
    samples = field.samples.ravel()
    return pandas.DataFrame({'x_mm': x.ravel() * 1e3, 'y_mm': y.ravel() * 1e3,
                             're_p': samples.real, 'im_p': samples.imag}, columns=FIELD_COLUMNS)


def field_metadata(field):
    return {
        'shape': list(field.shape),
        'spacing_mm': [d * 1e3 for d in field.spacing],
        'plane_z_mm': field.plane_z * 1e3,
        'frequency_hz': field.wave.frequency,
        'wavelength_mm': field.wave.wavelength * 1e3,
        'allow_aliasing': field.allow_aliasing,
        'columns': FIELD_COLUMNS,
    }


def write_field(field, dir, name):
    """
    <name>.csv samples, <name>.pgm max-normalized intensity and <name>.json grid metadata.

    :return: path of the CSV file
    """
    csv_path = os.path.join(dir, name + '.csv')
    export_helper.write_csv(csv_path, field_frame(field))
    export_helper.write_pgm(os.path.join(dir, name + '.pgm'), np.atleast_2d(intensity(field)))
    export_helper.write_json(os.path.join(dir, name + '.json'), field_metadata(field))
    return csv_path


def read_field(csv_path, medium=AIR):
    """Inverse of ``write_field``; the sidecar JSON sits next to the CSV."""
    meta_path = os.path.splitext(csv_path)[0] + '.json'
    if not os.path.exists(meta_path):
        raise DomainError('field file {0} has no sidecar {1}'.format(csv_path, meta_path))
    meta = export_helper.read_json(meta_path)
    frame = pandas.read_csv(csv_path)
    missing = [c for c in FIELD_COLUMNS if c not in frame.columns]
    if missing:
        raise DomainError('field file lacks columns {0}'.format(', '.join(missing)))
    shape = tuple(int(n) for n in meta['shape'])
    if len(frame) != int(np.prod(shape)):
        raise DomainError('field file has {0} rows, sidecar says {1}'.format(len(frame), shape))
    samples = (frame['re_p'].to_numpy() + 1j * frame['im_p'].to_numpy()).reshape(shape)
    return make_field(samples, tuple(d * 1e-3 for d in meta['spacing_mm']), meta['frequency_hz'],
                      plane_z=meta['plane_z_mm'] * 1e-3, medium=medium,
                      allow_aliasing=bool(meta.get('allow_aliasing', False)))
