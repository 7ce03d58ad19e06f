"""
Plane-wave scattering in a rigid channel of piecewise-constant cross-section.

Each region i carries a forward amplitude p_t and a backward amplitude p_r,
both referenced at the upstream face of the region. At the interface between
regions i and i+1 pressure and (p_t - p_r)/S are continuous, S being the
open-area ratio of the region. Stacking the 2x2 interface matrices gives the
total transfer matrix; closing it with unit incidence upstream and no
incoming wave downstream yields r and t.

``brute_force_oracle`` solves the same physics as one dense linear system and
is kept as an independent check of the cascade.
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from metascreen.core import DomainError, NumericalError, SingularClosureError, mm

logger = logging.getLogger(__name__)

CELL_HEIGHT = mm(50.0)  # h = h1 + h2 + h3
OUTLET_LENGTH = mm(4.0)
SINGULAR_T22 = 1e-14
ORACLE_MAX_CONDITION = 1e13


@dataclass(frozen=True)
class UnitCellGeometry:
    """
    Geometry of one cell, SI units.

    The slab pair sits h1 below the inlet, is h2 thick and leaves an opening w.
    Below it, after the spacer h3, n_plates thin plates of thickness t and
    pitch t + h4 protrude w2 from each wall.
    """
    h1: float = mm(31.0)
    h2: float = mm(14.3)
    w: float = mm(8.0)
    w2: float = mm(1.0)
    t: float = mm(1.0)
    h4: float = mm(4.0)
    L: float = mm(14.3)
    D: float = mm(14.3)
    n_plates: int = 15
    h: float = CELL_HEIGHT
    outlet_length: float = OUTLET_LENGTH
    end_correction: float = 0.0

    @property
    def h3(self):
        return self.h - self.h1 - self.h2

    def validate(self):
        eps = 1e-12
        if not self.h1 > 0:
            raise DomainError('h1 must be positive, got {0} m'.format(self.h1))
        if self.h2 <= 0 or self.h1 + self.h2 > self.h + eps:
            raise DomainError('h1 + h2 must not exceed h = {0:.1f} mm (h1={1:.3f} mm, h2={2:.3f} mm)'.format(
                self.h * 1e3, self.h1 * 1e3, self.h2 * 1e3))
        if not 0 < self.w <= self.L + eps:
            raise DomainError('slab opening w must satisfy 0 < w <= L, got w={0:.3f} mm'.format(self.w * 1e3))
        if self.w2 < 0 or 2 * self.w2 >= self.L:
            raise DomainError('plate protrusion w2 must satisfy 0 <= 2*w2 < L, got w2={0:.3f} mm'.format(
                self.w2 * 1e3))
        if self.n_plates < 1:
            raise DomainError('n_plates must be at least 1, got {0}'.format(self.n_plates))
        for name in ('t', 'L', 'D'):
            if getattr(self, name) <= 0:
                raise DomainError('{0} must be positive'.format(name))
        if self.h4 < 0 or self.outlet_length < 0 or self.end_correction < 0:
            raise DomainError('h4, outlet length and end correction must be non-negative')
        return self

    def with_params(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class Segment:
    area_ratio: float
    length: float

    def __post_init__(self):
        if not 0 < self.area_ratio <= 1:
            raise DomainError('area ratio must lie in (0, 1], got {0}'.format(self.area_ratio))
        if self.length < 0:
            raise DomainError('segment length must be non-negative, got {0}'.format(self.length))


@dataclass(frozen=True)
class SegmentChain:
    """Finite regions between two semi-infinite uniform ports."""
    segments: Tuple[Segment, ...]
    port_ratio_in: float = 1.0
    port_ratio_out: float = 1.0
    end_correction: float = 0.0

    def __post_init__(self):
        if len(self.segments) == 0:
            raise DomainError('segment chain must not be empty')
        for ratio in (self.port_ratio_in, self.port_ratio_out):
            if not 0 < ratio <= 1:
                raise DomainError('port area ratio must lie in (0, 1], got {0}'.format(ratio))

    @classmethod
    def from_arrays(cls, area_ratios, lengths, **kwargs):
        segments = tuple(Segment(float(s), float(d)) for s, d in zip(area_ratios, lengths))
        return cls(segments=segments, **kwargs)

    @property
    def area_ratios(self):
        return np.array([s.area_ratio for s in self.segments])

    @property
    def lengths(self):
        return np.array([s.length for s in self.segments])

    @property
    def total_length(self):
        return float(self.lengths.sum())

    def effective_lengths(self):
        return effective_lengths(self.area_ratios, self.lengths, self.end_correction)

    def reversed(self):
        return SegmentChain(segments=tuple(reversed(self.segments)),
                            port_ratio_in=self.port_ratio_out,
                            port_ratio_out=self.port_ratio_in,
                            end_correction=self.end_correction)


@dataclass(frozen=True)
class ScatteringResult:
    r: complex
    t: complex

    @property
    def energy_sum(self):
        return abs(self.r) ** 2 + abs(self.t) ** 2


def effective_lengths(area_ratios, lengths, end_correction=0.0):
    """Geometric lengths, plus ``end_correction`` on constricted regions."""
    area_ratios = np.asarray(area_ratios, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if end_correction:
        return lengths + np.where(area_ratios < 1.0, end_correction, 0.0)
    return lengths


def plate_area_ratio(w2, L):
    return (L - 2.0 * w2) / L


def segment_arrays(geometry):
    """Area ratios and lengths of the discretized cell, as numpy arrays."""
    ratios, lengths = segment_arrays_batch(geometry, [geometry.h1], [geometry.w2], [geometry.w])
    return ratios[0], lengths[0]


def segment_arrays_batch(defaults, h1, w2, w):
    """
    Segment area ratios and lengths for many geometries at once.

    Everything but h1, w2 and w is taken from ``defaults``.

    :param h1, w2, w: equally shaped 1-D arrays (metres)
    :return: (B, N) area ratios, (B, N) lengths
    """
    g = defaults
    h1 = np.asarray(h1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    w = np.asarray(w, dtype=float)
    ones = np.ones_like(h1)
    plate = plate_area_ratio(w2, g.L)
    ratio_cols = [ones, w / g.L, ones]
    # h3 can come out as -1e-19 when h1 + h2 == h
    length_cols = [h1, g.h2 * ones, np.maximum(g.h - h1 - g.h2, 0.0)]
    for i in range(g.n_plates):
        if i > 0:
            ratio_cols.append(ones)
            length_cols.append(g.h4 * ones)
        ratio_cols.append(plate)
        length_cols.append(g.t * ones)
    ratio_cols.append(ones)
    length_cols.append(g.outlet_length * ones)
    return np.stack(ratio_cols, axis=-1), np.stack(length_cols, axis=-1)


def discretize(geometry):
    """
    Turn a cell geometry into its chain of uniform regions.

    inlet h1 | slab opening w/L over h2 | spacer h3 | n_plates plate openings
    (L - 2 w2)/L over t, separated by open gaps h4 | outlet.
    """
    geometry.validate()
    ratios, lengths = segment_arrays(geometry)
    return SegmentChain.from_arrays(ratios, lengths, end_correction=geometry.end_correction)


def interface_matrix(S_up, S_down, h_e, k0):
    """
    Transfer matrix from the upstream face of region i to the upstream face
    of region i+1.

    p_t' = ((1+s) a + (1-s) b) / 2,  p_r' = ((1-s) a + (1+s) b) / 2
    with s = S_down / S_up, a = p_t e^{-j k0 h_e}, b = p_r e^{+j k0 h_e}.
    """
    if not (S_up > 0 and S_down > 0):
        raise DomainError('area ratios must be positive, got {0}, {1}'.format(S_up, S_down))
    if h_e < 0:
        raise DomainError('effective length must be non-negative, got {0}'.format(h_e))
    return _interface_batch(np.array([S_up], dtype=float), np.array([S_down], dtype=float),
                            np.array([h_e], dtype=float), k0)[0]


def _interface_batch(S_up, S_down, h_e, k0):
    sigma = S_down / S_up
    fwd = np.exp(-1j * k0 * h_e)
    bwd = np.exp(1j * k0 * h_e)
    m = np.empty(sigma.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = 0.5 * (1 + sigma) * fwd
    m[..., 0, 1] = 0.5 * (1 - sigma) * bwd
    m[..., 1, 0] = 0.5 * (1 - sigma) * fwd
    m[..., 1, 1] = 0.5 * (1 + sigma) * bwd
    return m


def total_matrix_batch(area_ratios, lengths, k0, port_ratio_in=1.0, port_ratio_out=1.0, end_correction=0.0):
    """
    Total transfer matrices for a batch of chains sharing a segment count.

    :param area_ratios: (..., N) area ratios
    :param lengths: (..., N) geometric lengths
    :param k0: scalar wavenumber or an array broadcastable to the batch shape
    :return: (..., 2, 2) complex matrices, later interfaces multiplied on the left
    """
    area_ratios = np.asarray(area_ratios, dtype=float)
    lengths = effective_lengths(area_ratios, lengths, end_correction)
    batch_shape = np.broadcast_shapes(area_ratios.shape[:-1], np.shape(k0))
    area_ratios = np.broadcast_to(area_ratios, batch_shape + area_ratios.shape[-1:])
    lengths = np.broadcast_to(lengths, batch_shape + lengths.shape[-1:])
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), batch_shape)
    n = area_ratios.shape[-1]

    port_in = np.full(batch_shape, float(port_ratio_in))
    total = _interface_batch(port_in, area_ratios[..., 0], np.zeros(batch_shape), k0)
    for i in range(n):
        S_down = area_ratios[..., i + 1] if i + 1 < n else np.full(batch_shape, float(port_ratio_out))
        step = _interface_batch(area_ratios[..., i], S_down, lengths[..., i], k0)
        total = step @ total
    return total


def total_matrix(chain, k0):
    """Ordered product T_n ... T_1 over every interface of ``chain``."""
    return total_matrix_batch(chain.area_ratios, chain.lengths, k0,
                              chain.port_ratio_in, chain.port_ratio_out, chain.end_correction)


def close_ports(T):
    """
    Solve (t, 0) = T (1, r) for every matrix of a batch.

    :return: (r, t) complex arrays of the batch shape
    """
    T = np.asarray(T)
    t22 = T[..., 1, 1]
    if np.any(np.abs(t22) < SINGULAR_T22):
        raise SingularClosureError('|T22| below {0:g}; chain closure is singular'.format(SINGULAR_T22))
    r = -T[..., 1, 0] / t22
    t = T[..., 0, 0] + T[..., 0, 1] * r
    return r, t


def scattering(chain, k0):
    """Reflection and transmission of a chain under unit plane-wave incidence."""
    if not k0 > 0:
        raise DomainError('wavenumber must be positive, got {0}'.format(k0))
    r, t = close_ports(total_matrix(chain, k0))
    return ScatteringResult(r=complex(r), t=complex(t))


def brute_force_oracle(chain, k0):
    """
    Solve the chain as a single dense system.

    Unknowns: r, (A_i, B_i) for every region, t. Equations: pressure and
    (p+ - p-)/S continuity at the entry face, at every internal interface and
    at the exit face.
    """
    ratios = chain.area_ratios
    lengths = chain.effective_lengths()
    n = len(ratios)
    size = 2 * n + 2
    A = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)

    def a_idx(i):
        return 1 + 2 * i

    def b_idx(i):
        return 2 + 2 * i

    r_idx, t_idx = 0, size - 1
    S_in, S_out = chain.port_ratio_in, chain.port_ratio_out

    # entry face: 1 + r = A0 + B0 ; (1 - r)/S_in = (A0 - B0)/S0
    A[0, r_idx] = 1.0
    A[0, a_idx(0)] = -1.0
    A[0, b_idx(0)] = -1.0
    rhs[0] = -1.0
    A[1, r_idx] = -1.0 / S_in
    A[1, a_idx(0)] = -1.0 / ratios[0]
    A[1, b_idx(0)] = 1.0 / ratios[0]
    rhs[1] = -1.0 / S_in

    row = 2
    for i in range(n):
        fwd = np.exp(-1j * k0 * lengths[i])
        bwd = np.exp(1j * k0 * lengths[i])
        A[row, a_idx(i)] = fwd
        A[row, b_idx(i)] = bwd
        A[row + 1, a_idx(i)] = fwd / ratios[i]
        A[row + 1, b_idx(i)] = -bwd / ratios[i]
        if i + 1 < n:
            A[row, a_idx(i + 1)] = -1.0
            A[row, b_idx(i + 1)] = -1.0
            A[row + 1, a_idx(i + 1)] = -1.0 / ratios[i + 1]
            A[row + 1, b_idx(i + 1)] = 1.0 / ratios[i + 1]
        else:
            A[row, t_idx] = -1.0
            A[row + 1, t_idx] = -1.0 / S_out
        row += 2

    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > ORACLE_MAX_CONDITION:
        raise NumericalError('oracle system is singular (condition number {0:.3e})'.format(cond),
                             condition_number=cond)
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as e:
        raise NumericalError('oracle solve failed (condition number {0:.3e}): {1}'.format(cond, e),
                             condition_number=cond) from e
    return ScatteringResult(r=complex(x[r_idx]), t=complex(x[t_idx]))
