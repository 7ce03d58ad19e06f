import math

import numpy as np
import pytest
from scipy import stats

from metascreen.cell_library import (CellResponseTable, TableGrids, build_table, coverage_span, decoupling_report,
                                     grid_range, load_or_build_table, read_table_csv, responses_at, select_cell,
                                     select_cells, table_key, table_slice, total_variation, write_table_csv)
from metascreen.core import TWO_PI, DomainError, InfeasibleSelectionError, make_wave_context, mm, phase_distance
from metascreen.duct_model import discretize, scattering


def test_grid_range_is_inclusive():
    np.testing.assert_allclose(grid_range(1.0, 5.0, 0.1)[[0, -1]], [1.0, 5.0])
    assert grid_range(1.0, 35.0, 0.25).size == 137
    with pytest.raises(DomainError):
        grid_range(1.0, 2.0, 0.0)


def test_table_entries_match_single_cell(geometry, coarse_table):
    index = (coarse_table.axis_index('h1', mm(20.0)), coarse_table.axis_index('w2', mm(2.5)), 0)
    r, t = coarse_table.entry(index, 6000.0)
    direct = scattering(discretize(geometry.with_params(h1=mm(20.0), w2=mm(2.5))),
                        make_wave_context(6000.0).wavenumber)
    assert r == pytest.approx(direct.r, abs=1e-10)
    assert t == pytest.approx(direct.t, abs=1e-10)


def test_table_conserves_energy(design_table):
    assert design_table.max_energy_error() < 1e-9
    assert not design_table.failed.any()


def test_table_is_immutable(coarse_table):
    with pytest.raises(ValueError):
        coarse_table.r[0, 0, 0, 0] = 0.0


def test_table_rejects_unordered_axes(geometry):
    with pytest.raises(DomainError):
        CellResponseTable([mm(2.0), mm(1.0)], [mm(1.0)], [mm(8.0)], [6000.0], np.zeros(2), np.zeros(2),
                          defaults=geometry)


def test_build_table_rejects_invalid_grid_corner(geometry):
    with pytest.raises(DomainError):
        build_table(geometry, TableGrids.from_mm(h1_mm=[10.0, 36.0], w2_mm=[1.0], w_mm=[8.0]), [6000.0])


def test_unknown_frequency_is_rejected(coarse_table):
    with pytest.raises(DomainError):
        coarse_table.frequency_index(6100.0)


def test_reflection_phase_covers_full_circle(geometry):
    grids = TableGrids.from_mm(h1_mm=grid_range(1.0, 35.0, 0.25), w2_mm=[1.0], w_mm=[8.0])
    table = build_table(geometry, grids, [6000.0])
    span = coverage_span(table_slice(table, 'h1', 6000.0), 'reflection')
    assert span >= TWO_PI - 0.1


@pytest.mark.parametrize('h1_mm', [28.0, 31.0])
def test_transmission_phase_span_over_plate_width(design_table, h1_mm):
    span = coverage_span(table_slice(design_table, 'w2', 6000.0, h1=mm(h1_mm)), 'transmission')
    # about one radian, far from 0.8 of a turn
    assert 0.9 < span < 1.15
    assert span < 0.8 * TWO_PI


def test_coverage_span_of_known_phases():
    assert coverage_span([0.0, 1.0, 2.0]) == pytest.approx(2.0)
    assert coverage_span([math.pi - 0.1, -math.pi + 0.1]) == pytest.approx(0.2)
    assert coverage_span(np.linspace(-math.pi, math.pi, 64, endpoint=False)) == pytest.approx(
        TWO_PI - TWO_PI / 64)
    with pytest.raises(DomainError):
        coverage_span([1.0])


def test_total_variation_follows_the_short_way_round():
    assert total_variation([math.pi - 0.1, -math.pi + 0.1, -math.pi + 0.3]) == pytest.approx(0.4)
    assert total_variation([0.5]) == 0.0


def test_slice_needs_fixed_parameters(design_table):
    with pytest.raises(DomainError):
        table_slice(design_table, 'h1', 6000.0)
    s = table_slice(design_table, 'w2', 6000.0, h1=mm(31.0))
    assert s.values.shape == s.r.shape == (41,)
    with pytest.raises(DomainError):
        table_slice(design_table, 'w2', 6000.0, h1=mm(31.2))


def test_decoupling_report_fields(design_table):
    report = decoupling_report(design_table, 6000.0)
    assert report.transmission_variation_over_h1 >= 0
    assert report.reflection_variation_over_w2 >= 0
    assert report.decoupled == (report.transmission_variation_over_h1 < 0.6
                                and report.reflection_variation_over_w2 < 0.6)


def test_amplitude_allocation_over_slab_opening(geometry):
    grids = TableGrids.from_mm(h1_mm=[31.0], w2_mm=[1.0], w_mm=grid_range(0.5, 14.3, 0.2))
    table = build_table(geometry, grids, [6000.0])
    s = table_slice(table, 'w', 6000.0)
    assert abs(s.r[0]) > 0.9
    rho, _ = stats.spearmanr(s.values, np.abs(s.t))
    assert rho > 0.9


def test_narrow_opening_reflects_more(geometry):
    grids = TableGrids.from_mm(h1_mm=[31.0], w2_mm=[1.0], w_mm=grid_range(0.1, 1.0, 0.1))
    table = build_table(geometry, grids, [6000.0])
    assert np.all(np.diff(np.abs(table_slice(table, 'w', 6000.0).r)) < 0)


def test_select_cell_recovers_a_table_entry(design_table):
    fi = design_table.frequency_index(6000.0)
    i, j = 37, 12
    target_r = float(np.angle(design_table.r[i, j, 0, fi]))
    target_t = float(np.angle(design_table.t[i, j, 0, fi]))
    selection = select_cell(design_table, target_r, target_t, frequency=6000.0)
    assert selection.phase_error_r + selection.phase_error_t == pytest.approx(0.0, abs=1e-12)
    assert selection.index[2] == 0


def test_select_cells_is_a_global_minimum(design_table, rng):
    targets_r = rng.uniform(-math.pi, math.pi, 5)
    targets_t = rng.uniform(-math.pi, math.pi, 5)
    fi = design_table.frequency_index(6000.0)
    phase_r = np.angle(design_table.r[..., fi]).ravel()
    phase_t = np.angle(design_table.t[..., fi]).ravel()
    for selection, tr, tt in zip(select_cells(design_table, targets_r, targets_t, frequency=6000.0),
                                 targets_r, targets_t):
        best = np.min(phase_distance(tr, phase_r) + phase_distance(tt, phase_t))
        assert selection.phase_error_r + selection.phase_error_t == pytest.approx(best, abs=1e-12)


def test_select_cells_needs_frequency_for_multi_frequency_table(design_table):
    with pytest.raises(DomainError):
        select_cells(design_table, [0.0], [0.0])


def test_unreachable_amplitude_split(design_table):
    with pytest.raises(InfeasibleSelectionError) as info:
        select_cells(design_table, [0.0, 1.0, 2.0], [0.0, 0.5, 1.0], frequency=6000.0, amplitude_split=1.5)
    assert info.value.nearest_split is not None
    assert info.value.nearest_split <= 1.0 + 1e-9
    assert info.value.cells == [0, 1, 2]


def test_table_without_usable_entries_names_every_cell(coarse_table):
    broken = CellResponseTable(coarse_table.h1, coarse_table.w2, coarse_table.w, coarse_table.frequencies,
                               coarse_table.r, coarse_table.t, defaults=coarse_table.defaults,
                               failed=np.ones(coarse_table.shape, dtype=bool))
    with pytest.raises(InfeasibleSelectionError) as info:
        select_cells(broken, [0.0, 1.0], [0.0, 1.0], frequency=6000.0)
    assert info.value.cells == [0, 1]
    assert info.value.nearest_split is None


def test_responses_at_moves_to_other_frequency(design_table):
    selections = select_cells(design_table, [0.3, -1.0], [1.2, 2.0], frequency=6000.0)
    same = responses_at(design_table, selections, 6000.0)
    assert [s.achieved_r for s in same] == [s.achieved_r for s in selections]
    moved = responses_at(design_table, selections, 6500.0)
    for s, m in zip(selections, moved):
        assert (m.h1, m.w2, m.w) == (s.h1, s.w2, s.w)
        assert m.achieved_r == design_table.entry(s.index, 6500.0)[0]


def test_table_csv_round_trip(geometry, coarse_table, tmp_path):
    path = str(tmp_path / 'table.csv')
    write_table_csv(coarse_table, path)
    loaded = read_table_csv(path, geometry)
    assert loaded.shape == coarse_table.shape
    np.testing.assert_allclose(loaded.r, coarse_table.r, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(loaded.h1, coarse_table.h1, rtol=1e-12)


def test_cache_hit_and_miss_agree(geometry, tmp_path):
    grids = TableGrids.from_mm(h1_mm=grid_range(10.0, 20.0, 1.0), w2_mm=[1.0, 2.0], w_mm=[8.0])
    cache = str(tmp_path / 'cache')
    first = load_or_build_table(geometry, grids, [6000.0], cache_dir=cache)
    second = load_or_build_table(geometry, grids, [6000.0], cache_dir=cache)
    assert (tmp_path / 'cache' / 'table-{0}.csv'.format(table_key(geometry, grids, [6000.0]))).exists()
    np.testing.assert_array_equal(first.r, second.r)
    np.testing.assert_array_equal(first.t, second.t)
    assert first.content_hash() == second.content_hash()


def test_table_key_depends_on_geometry(geometry):
    grids = TableGrids.from_mm(h1_mm=[10.0], w2_mm=[1.0], w_mm=[8.0])
    assert table_key(geometry, grids, [6000.0]) != table_key(geometry.with_params(n_plates=10), grids, [6000.0])
    assert table_key(geometry, grids, [6000.0, 5500.0]) == table_key(geometry, grids, [5500.0, 6000.0])
