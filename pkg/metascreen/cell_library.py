"""
Cell response tables and their inversion.

A table holds r and t of the cell over the Cartesian grid
h1 x w2 x w x frequency. ``select_cell`` picks, by exhaustive search, the grid
point whose reflected and transmitted phases best match a target pair.
"""
import io
import logging
import os
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
import pandas
from scipy import stats

from metascreen import export_helper
from metascreen.core import (AIR, TWO_PI, DomainError, InfeasibleSelectionError, make_wave_context, mm,
                             phase_distance, wrap_phase)
from metascreen.duct_model import SINGULAR_T22, segment_arrays_batch, total_matrix_batch

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ['h1_mm', 'w2_mm', 'w_mm', 'freq_hz', 're_r', 'im_r', 're_t', 'im_t']
AMPLITUDE_TOLERANCE = 0.1
DECOUPLING_LIMIT = 0.6
BATCH_SIZE = 20000


def grid_range(start, stop, step):
    """Inclusive arithmetic grid, rounded to suppress arange drift."""
    if step <= 0:
        raise DomainError('grid step must be positive, got {0}'.format(step))
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    if n < 1:
        raise DomainError('empty grid [{0}, {1}] step {2}'.format(start, stop, step))
    return np.round(start + step * np.arange(n), 12)


DEFAULT_H1_MM = grid_range(1.0, 35.0, 0.5)
DEFAULT_W2_MM = grid_range(1.0, 5.0, 0.1)
DEFAULT_W_MM = grid_range(0.5, 14.3, 0.2)
DEFAULT_FREQUENCIES = grid_range(4000.0, 8000.0, 500.0)


@dataclass(frozen=True)
class TableGrids:
    """Sampled parameter axes, metres."""
    h1: Tuple[float, ...]
    w2: Tuple[float, ...]
    w: Tuple[float, ...]

    @classmethod
    def from_mm(cls, h1_mm=DEFAULT_H1_MM, w2_mm=DEFAULT_W2_MM, w_mm=DEFAULT_W_MM):
        return cls(h1=tuple(float(v) for v in mm(np.atleast_1d(h1_mm))),
                   w2=tuple(float(v) for v in mm(np.atleast_1d(w2_mm))),
                   w=tuple(float(v) for v in mm(np.atleast_1d(w_mm))))

    def axes(self):
        return np.array(self.h1), np.array(self.w2), np.array(self.w)


@dataclass(frozen=True)
class CellSelection:
    h1: float
    w2: float
    w: float
    achieved_r: complex
    achieved_t: complex
    phase_error_r: float
    phase_error_t: float
    index: Optional[Tuple[int, int, int]] = None


@dataclass(frozen=True)
class TableSlice:
    axis: str
    values: np.ndarray
    r: np.ndarray
    t: np.ndarray
    frequency: float

    def phases(self, which):
        if which == 'reflection':
            return np.angle(self.r)
        if which == 'transmission':
            return np.angle(self.t)
        raise DomainError("which must be 'reflection' or 'transmission', got {0!r}".format(which))


@dataclass(frozen=True)
class DecouplingReport:
    frequency: float
    transmission_variation_over_h1: float
    reflection_variation_over_w2: float
    limit: float = DECOUPLING_LIMIT

    @property
    def decoupled(self):
        return (self.transmission_variation_over_h1 < self.limit
                and self.reflection_variation_over_w2 < self.limit)


class CellResponseTable:
    """r, t over h1 x w2 x w x frequency; immutable once built."""

    def __init__(self, h1, w2, w, frequencies, r, t, defaults, medium=AIR, failed=None):
        self.h1 = np.asarray(h1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.frequencies = np.asarray(frequencies, dtype=float)
        shape = (len(self.h1), len(self.w2), len(self.w), len(self.frequencies))
        self.r = np.asarray(r, dtype=complex).reshape(shape)
        self.t = np.asarray(t, dtype=complex).reshape(shape)
        self.failed = np.zeros(shape, dtype=bool) if failed is None else np.asarray(failed).reshape(shape)
        self.defaults = defaults
        self.medium = medium
        self.source_key = None
        for name in ('h1', 'w2', 'w', 'frequencies'):
            axis = getattr(self, name)
            if axis.size > 1 and np.any(np.diff(axis) <= 0):
                raise DomainError('table axis {0} must be strictly increasing'.format(name))
        for arr in (self.r, self.t, self.failed):
            arr.setflags(write=False)

    @property
    def shape(self):
        return self.r.shape

    def __len__(self):
        return int(np.prod(self.shape))

    def __repr__(self):
        return 'CellResponseTable(h1={0}, w2={1}, w={2}, freqs={3})'.format(*self.shape)

    def frequency_index(self, frequency):
        hits = np.flatnonzero(np.isclose(self.frequencies, frequency, rtol=0, atol=1e-6))
        if hits.size == 0:
            raise DomainError('table does not cover {0} Hz (has {1})'.format(
                frequency, ', '.join('{0:g}'.format(f) for f in self.frequencies)))
        return int(hits[0])

    def axis_index(self, name, value):
        axis = getattr(self, name)
        hits = np.flatnonzero(np.isclose(axis, value, rtol=0, atol=1e-9))
        if hits.size == 0:
            raise DomainError('{0} = {1:.4f} mm is not on the table grid'.format(name, value * 1e3))
        return int(hits[0])

    def entry(self, index, frequency):
        """ScatteringResult-like pair (r, t) of a grid point at ``frequency``."""
        fi = self.frequency_index(frequency)
        i, j, k = index
        return complex(self.r[i, j, k, fi]), complex(self.t[i, j, k, fi])

    def max_energy_error(self):
        ok = ~self.failed
        if not ok.any():
            return 0.0
        return float(np.max(np.abs(np.abs(self.r[ok]) ** 2 + np.abs(self.t[ok]) ** 2 - 1.0)))

    def content_hash(self):
        if self.source_key is not None:
            return self.source_key
        return table_key(self.defaults, TableGrids(tuple(self.h1), tuple(self.w2), tuple(self.w)),
                         self.frequencies, self.medium)


def _validate_grids(defaults, grids):
    h1, w2, w = grids.axes()
    for name, axis in (('h1', h1), ('w2', w2), ('w', w)):
        if axis.size == 0:
            raise DomainError('grid {0} is empty'.format(name))
        if axis.size > 1 and np.any(np.diff(axis) <= 0):
            raise DomainError('grid {0} must be strictly increasing'.format(name))
    # corners of the box are enough: every invariant is monotone in one parameter
    for value in (h1.min(), h1.max()):
        defaults.with_params(h1=float(value)).validate()
    for value in (w2.min(), w2.max()):
        defaults.with_params(w2=float(value)).validate()
    for value in (w.min(), w.max()):
        defaults.with_params(w=float(value)).validate()


def build_table(defaults, grids, frequencies, medium=AIR):
    """
    Sweep the cell over the Cartesian product of ``grids`` and ``frequencies``.

    Entries whose port closure is singular are recorded in ``failed`` and
    hold NaN.
    """
    defaults.validate()
    _validate_grids(defaults, grids)
    frequencies = np.sort(np.unique(np.asarray(frequencies, dtype=float)))
    k0 = np.array([make_wave_context(f, medium).wavenumber for f in frequencies])
    h1, w2, w = grids.axes()
    H1, W2, W = np.meshgrid(h1, w2, w, indexing='ij')
    H1, W2, W = H1.ravel(), W2.ravel(), W.ravel()
    n_entries = H1.size
    r = np.empty((n_entries, k0.size), dtype=complex)
    t = np.empty((n_entries, k0.size), dtype=complex)
    failed = np.zeros((n_entries, k0.size), dtype=bool)

    logger.info('building cell table: {0} geometries x {1} frequencies'.format(n_entries, k0.size))
    for start in range(0, n_entries, BATCH_SIZE):
        stop = min(start + BATCH_SIZE, n_entries)
        ratios, lengths = segment_arrays_batch(defaults, H1[start:stop], W2[start:stop], W[start:stop])
        T = total_matrix_batch(ratios[:, None, :], lengths[:, None, :], k0[None, :],
                               end_correction=defaults.end_correction)
        t22 = T[..., 1, 1]
        bad = np.abs(t22) < SINGULAR_T22
        safe = np.where(bad, 1.0, t22)
        rr = -T[..., 1, 0] / safe
        tt = T[..., 0, 0] + T[..., 0, 1] * rr
        r[start:stop] = np.where(bad, np.nan, rr)
        t[start:stop] = np.where(bad, np.nan, tt)
        failed[start:stop] = bad
        if stop < n_entries:
            logger.debug('table batch {0}/{1}'.format(stop, n_entries))
    if failed.any():
        logger.warning('{0} table entries failed with a singular closure'.format(int(failed.sum())))
    shape = (h1.size, w2.size, w.size, k0.size)
    return CellResponseTable(h1, w2, w, frequencies, r.reshape(shape), t.reshape(shape),
                             defaults=defaults, medium=medium, failed=failed.reshape(shape))


def table_slice(table, axis, frequency, h1=None, w2=None, w=None):
    """One-parameter slice of a table; the other two parameters are fixed."""
    fixed = {'h1': h1, 'w2': w2, 'w': w}
    if axis not in fixed:
        raise DomainError('unknown table axis {0!r}'.format(axis))
    fi = table.frequency_index(frequency)
    index = []
    for name in ('h1', 'w2', 'w'):
        if name == axis:
            index.append(slice(None))
        elif fixed[name] is None:
            if getattr(table, name).size != 1:
                raise DomainError('slice along {0} needs a fixed {1}'.format(axis, name))
            index.append(0)
        else:
            index.append(table.axis_index(name, fixed[name]))
    index.append(fi)
    index = tuple(index)
    return TableSlice(axis=axis, values=getattr(table, axis).copy(), r=table.r[index].copy(),
                      t=table.t[index].copy(), frequency=float(table.frequencies[fi]))


def coverage_span(phases, which='reflection'):
    """
    Length of the smallest arc of the unit circle holding every phase.

    ``phases`` is either an array of phases or a TableSlice, in which case
    ``which`` picks the reflected or transmitted phase.
    """
    if isinstance(phases, TableSlice):
        phases = phases.phases(which)
    phases = np.asarray(phases, dtype=float).ravel()
    phases = phases[np.isfinite(phases)]
    if phases.size < 2:
        raise DomainError('coverage span needs at least 2 samples, got {0}'.format(phases.size))
    on_circle = np.sort(np.mod(wrap_phase(phases), TWO_PI))
    gaps = np.diff(on_circle)
    wrap_gap = on_circle[0] + TWO_PI - on_circle[-1]
    max_gap = max(float(gaps.max()) if gaps.size else 0.0, float(wrap_gap))
    return float(TWO_PI - max_gap)


def total_variation(phases):
    """Sum of circular increments between consecutive phases."""
    phases = np.asarray(phases, dtype=float)
    if phases.size < 2:
        return 0.0
    return float(np.sum(phase_distance(phases[1:], phases[:-1])))


def decoupling_report(table, frequency, h1_fixed=mm(31.0), w2_fixed=mm(1.0), w=None):
    """
    How much the "other" phase moves along each single-parameter sweep:
    phi_t along h1 (w2 fixed) and phi_r along w2 (h1 fixed).
    """
    h1_sweep = table_slice(table, 'h1', frequency, w2=w2_fixed, w=w)
    w2_sweep = table_slice(table, 'w2', frequency, h1=h1_fixed, w=w)
    return DecouplingReport(frequency=float(frequency),
                            transmission_variation_over_h1=total_variation(np.angle(h1_sweep.t)),
                            reflection_variation_over_w2=total_variation(np.angle(w2_sweep.r)))


def amplitude_trend(table, frequency, h1=None, w2=None):
    """Spearman rank correlation of |t| against w along a w slice."""
    s = table_slice(table, 'w', frequency, h1=h1, w2=w2)
    rho, _ = stats.spearmanr(s.values, np.abs(s.t))
    return float(rho)


def select_cells(table, target_phi_r, target_phi_t, frequency=None, amplitude_split=None, chunk=64):
    """
    Vectorized ``select_cell`` over many targets.

    Cost of a grid point is phase_distance(phi_r, arg r) + phase_distance(phi_t, arg t);
    the arg-min follows C order of (h1, w2, w), i.e. ties go to the smaller h1,
    then the smaller w2, then the smaller w.
    """
    if frequency is None:
        if table.frequencies.size != 1:
            raise DomainError('table holds several frequencies; pass the query frequency')
        frequency = float(table.frequencies[0])
    fi = table.frequency_index(frequency)
    target_phi_r = np.atleast_1d(np.asarray(target_phi_r, dtype=float))
    target_phi_t = np.atleast_1d(np.asarray(target_phi_t, dtype=float))
    if target_phi_r.shape != target_phi_t.shape:
        raise DomainError('reflection and transmission targets differ in shape')
    # feasibility is target independent: a failure covers every cell
    every_cell = range(target_phi_r.size)
    rr = table.r[..., fi].ravel()
    tt = table.t[..., fi].ravel()
    feasible = ~table.failed[..., fi].ravel()
    if amplitude_split is not None:
        power_t = np.abs(tt) ** 2
        in_band = np.abs(power_t - amplitude_split) <= AMPLITUDE_TOLERANCE + 1e-12
        if not np.any(feasible & in_band):
            candidates = power_t[feasible]
            nearest = float(candidates[np.argmin(np.abs(candidates - amplitude_split))]) if candidates.size else None
            raise InfeasibleSelectionError(
                'no cell reaches |t|^2 = {0:.3f} +/- {1}; nearest achievable split is {2}'.format(
                    amplitude_split, AMPLITUDE_TOLERANCE, nearest), nearest_split=nearest, cells=every_cell)
        feasible = feasible & in_band

    candidates = np.flatnonzero(feasible)
    if candidates.size == 0:
        raise InfeasibleSelectionError('table has no usable entry at {0:g} Hz'.format(frequency), cells=every_cell)
    phase_r = np.angle(rr[candidates])
    phase_t = np.angle(tt[candidates])

    shape3 = table.shape[:3]
    selections = []
    for start in range(0, target_phi_r.size, chunk):
        tr = target_phi_r[start:start + chunk, None]
        ts = target_phi_t[start:start + chunk, None]
        err_r = phase_distance(tr, phase_r[None, :])
        err_t = phase_distance(ts, phase_t[None, :])
        best = np.argmin(err_r + err_t, axis=1)
        for row, col in enumerate(best):
            flat = candidates[col]
            i, j, k = np.unravel_index(flat, shape3)
            selections.append(CellSelection(
                h1=float(table.h1[i]), w2=float(table.w2[j]), w=float(table.w[k]),
                achieved_r=complex(rr[flat]), achieved_t=complex(tt[flat]),
                phase_error_r=float(err_r[row, col]), phase_error_t=float(err_t[row, col]),
                index=(int(i), int(j), int(k))))
    return selections


def select_cell(table, target_phi_r, target_phi_t, amplitude_split=None, frequency=None):
    """Best grid point for one (phi_r, phi_t) target."""
    return select_cells(table, [target_phi_r], [target_phi_t], frequency=frequency,
                        amplitude_split=amplitude_split)[0]


def responses_at(table, selections, frequency):
    """Re-evaluate selections at another tabulated frequency."""
    moved = []
    for s in selections:
        r, t = table.entry(s.index, frequency)
        moved.append(CellSelection(h1=s.h1, w2=s.w2, w=s.w, achieved_r=r, achieved_t=t,
                                   phase_error_r=s.phase_error_r, phase_error_t=s.phase_error_t,
                                   index=s.index))
    return moved


def table_key(defaults, grids, frequencies, medium=AIR):
    payload = {'defaults': asdict(defaults), 'medium': asdict(medium),
               'h1': list(grids.h1), 'w2': list(grids.w2), 'w': list(grids.w),
               'frequencies': [float(f) for f in np.sort(np.unique(frequencies))]}
    return export_helper.content_hash(payload, length=16)


def table_to_frame(table):
    H1, W2, W, F = np.meshgrid(table.h1, table.w2, table.w, table.frequencies, indexing='ij')
    return pandas.DataFrame({
        'h1_mm': H1.ravel() * 1e3, 'w2_mm': W2.ravel() * 1e3, 'w_mm': W.ravel() * 1e3,
        'freq_hz': F.ravel(),
        're_r': table.r.real.ravel(), 'im_r': table.r.imag.ravel(),
        're_t': table.t.real.ravel(), 'im_t': table.t.imag.ravel(),
    }, columns=TABLE_COLUMNS)


def write_table_csv(table, path):
    export_helper.write_csv(path, table_to_frame(table))


def read_table_csv(path, defaults, medium=AIR):
    frame = pandas.read_csv(path)
    return table_from_frame(frame, defaults, medium)


def table_from_frame(frame, defaults, medium=AIR):
    missing = [c for c in TABLE_COLUMNS if c not in frame.columns]
    if missing:
        raise DomainError('table file lacks columns {0}'.format(', '.join(missing)))
    h1 = np.unique(frame['h1_mm'].to_numpy())
    w2 = np.unique(frame['w2_mm'].to_numpy())
    w = np.unique(frame['w_mm'].to_numpy())
    f = np.unique(frame['freq_hz'].to_numpy())
    shape = (h1.size, w2.size, w.size, f.size)
    if len(frame) != int(np.prod(shape)):
        raise DomainError('table file has {0} rows, expected {1}'.format(len(frame), int(np.prod(shape))))
    frame = frame.sort_values(['h1_mm', 'w2_mm', 'w_mm', 'freq_hz'], kind='mergesort')
    r = frame['re_r'].to_numpy() + 1j * frame['im_r'].to_numpy()
    t = frame['re_t'].to_numpy() + 1j * frame['im_t'].to_numpy()
    failed = ~(np.isfinite(r) & np.isfinite(t))
    return CellResponseTable(mm(h1), mm(w2), mm(w), f, r.reshape(shape), t.reshape(shape),
                             defaults=defaults, medium=medium, failed=failed.reshape(shape))


def load_or_build_table(defaults, grids, frequencies, cache_dir=None, medium=AIR):
    """
    Table from the on-disk cache, building and caching it on a miss.

    A freshly built table is written and read back, so a cache hit and a miss
    hand out identical numbers.
    """
    if cache_dir is None:
        return build_table(defaults, grids, frequencies, medium)
    key = table_key(defaults, grids, frequencies, medium)
    path = os.path.join(cache_dir, 'table-{0}.csv'.format(key))
    if os.path.exists(path):
        logger.info('cell table cache hit {0}'.format(path))
        table = read_table_csv(path, defaults, medium)
        table.source_key = key
        return table
    table = build_table(defaults, grids, frequencies, medium)
    export_helper.make_local_dir(cache_dir)
    frame = table_to_frame(table)
    export_helper.write_csv(path, frame)
    logger.info('cell table cached to {0}'.format(path))
    table = table_from_frame(pandas.read_csv(io.StringIO(export_helper.frame_to_csv_text(frame))),
                             defaults, medium)
    table.source_key = key
    return table
