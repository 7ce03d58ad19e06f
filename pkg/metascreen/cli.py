"""
Command line: sweep tables, design line arrays, design two-sided hologram
panels, propagate raw fields.

Exit status: 0 when every tolerance check passes, 2 when the run finished
but a check failed, 1 on error.
"""
import logging
import math
import os
import sys
import traceback

import click
import numpy as np
import pandas

import metascreen
from metascreen import angular_spectrum, config_helper, export_helper, field_verify, iasa, profiles
from metascreen.cell_library import (TableGrids, amplitude_trend, coverage_span, decoupling_report,
                                     grid_range, load_or_build_table, responses_at, select_cells, table_slice,
                                     write_table_csv)
from metascreen.core import (TWO_PI, ConfigError, InfeasibleSelectionError, MetascreenError, make_wave_context,
                             mm)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TOLERANCE = 2

FREQ_TARGETS = {
    'sweep': 'sweep.frequencies_hz',
    'design': 'design.evaluation_frequencies_hz',
    'hologram': 'hologram.evaluation_frequencies_hz',
}


def parse_frequencies(text):
    try:
        values = [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError('--freq expects comma-separated frequencies in Hz, got {0!r}'.format(text))
    if not values:
        raise ConfigError('--freq got no frequency')
    return values


def setup_logging(level_name, verbose):
    level = logging.DEBUG if verbose else getattr(logging, str(level_name).upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s', force=True)


def common_options(func):
    func = click.option('--verbose', is_flag=True, help='debug logging')(func)
    func = click.option('--strict', is_flag=True, help='reject targets that need resampling')(func)
    func = click.option('--cache', 'cache_dir', default=None, help='cell table cache directory')(func)
    func = click.option('--seed', type=int, default=None, help='seed of the random initial phase')(func)
    func = click.option('--out', 'output_dir', default=None, help='output root directory')(func)
    func = click.option('--freq', default=None, help='comma-separated frequencies in Hz')(func)
    func = click.option('--config', 'config_path', default=None, type=click.Path(dir_okay=False),
                        help='JSON or YAML run file')(func)
    return func


def flag_overrides(command, freq, output_dir, seed, cache_dir, strict):
    overrides = {}
    if freq is not None:
        values = parse_frequencies(freq)
        if command == 'propagate':
            overrides['propagate.frequency_hz'] = values[0]
        else:
            overrides[FREQ_TARGETS[command]] = values
    if output_dir is not None:
        overrides['run.output_dir'] = output_dir
    if seed is not None:
        overrides['run.seed'] = seed
    if cache_dir is not None:
        overrides['run.cache_dir'] = cache_dir
    if strict:
        overrides['run.strict'] = True
    return overrides


def run_command(command, body, config_path, freq, output_dir, seed, cache_dir, strict, verbose):
    """Resolve config, run ``body(config, out_dir)``, write the manifest, exit."""
    setup_logging('INFO', verbose)
    try:
        config = config_helper.load_config(
            config_path, overrides=flag_overrides(command, freq, output_dir, seed, cache_dir, strict))
        setup_logging(config['run']['log_level'], verbose)
        chash = config_helper.config_hash(config)
        out_dir = export_helper.get_output_dir(config['run']['output_dir'], command, chash)
        logger.info('{0}: writing to {1}'.format(command, out_dir))
        status, table_hash, checks = body(config, out_dir)
        export_helper.write_manifest(out_dir, command, config, chash, metascreen.__version__,
                                     table_hash=table_hash, extra={'checks': checks, 'status': status})
    except (MetascreenError, ValueError, OSError) as e:
        logger.error('{0} failed: {1}'.format(command, e))
        logger.debug(traceback.format_exc())
        sys.exit(EXIT_ERROR)
    if status == EXIT_TOLERANCE:
        failed = [c['name'] for c in checks if not c['passed']]
        logger.warning('tolerance checks failed: {0}'.format(', '.join(failed)))
    sys.exit(status)


def check(name, passed, value=None, limit=None):
    return {'name': name, 'passed': bool(passed), 'value': value, 'limit': limit}


def status_of(checks):
    return EXIT_OK if all(c['passed'] for c in checks) else EXIT_TOLERANCE


def table_grids(config, h1_step_mm=None, with_w_grid=False):
    g = config['grids']
    h1 = config_helper.grid_values(g['h1_mm'])
    if h1_step_mm is not None:
        h1 = grid_range(float(h1.min()), float(h1.max()), h1_step_mm)
    w2 = config_helper.grid_values(g['w2_mm'])
    w = config_helper.grid_values(g['w_mm']) if with_w_grid else [config['geometry']['w_mm']]
    return TableGrids.from_mm(h1_mm=h1, w2_mm=w2, w_mm=w)


@click.group()
@click.version_option(metascreen.__version__)
def cli():
    """Design and verification of two-sided acoustic metascreens."""


@cli.command()
@common_options
def sweep(**options):
    """Cell response table, phase coverage and amplitude allocation."""
    run_command('sweep', cmd_sweep, **options)


@cli.command()
@common_options
def design(**options):
    """Line-array design: profiles, cell selection, predicted fields."""
    run_command('design', cmd_design, **options)


@cli.command()
@common_options
def hologram(**options):
    """Two-sided hologram panel design and verification."""
    run_command('hologram', cmd_hologram, **options)


@cli.command()
@common_options
def propagate(**options):
    """Propagate a dumped field by propagate.dz_mm."""
    run_command('propagate', cmd_propagate, **options)


def _slice_frame(s, axis):
    return pandas.DataFrame({
        '{0}_mm'.format(axis): s.values * 1e3,
        'freq_hz': s.frequency,
        'abs_r': np.abs(s.r), 'phase_r_rad': np.angle(s.r),
        'abs_t': np.abs(s.t), 'phase_t_rad': np.angle(s.t),
    })


def _phase_map(table, axis, which, fixed):
    rows = []
    for f in table.frequencies:
        s = table_slice(table, axis, f, **fixed)
        rows.append(s.phases(which))
    return np.array(rows)


def cmd_sweep(config, out_dir):
    sw = config['sweep']
    geometry = config_helper.geometry_from_config(config)
    cache_dir = config['run']['cache_dir']
    frequencies = sorted(set(sw['frequencies_hz']))
    grids = table_grids(config, h1_step_mm=sw['h1_step_mm'])
    table = load_or_build_table(geometry, grids, frequencies, cache_dir)
    write_table_csv(table, os.path.join(out_dir, 'table.csv'))

    coverage = []
    checks = []
    fixed_w2 = mm(sw['h1_slice_w2_mm'])
    if 'h1' in sw['axes']:
        frames = []
        for f in table.frequencies:
            s = table_slice(table, 'h1', f, w2=fixed_w2)
            frames.append(_slice_frame(s, 'h1'))
            span = coverage_span(s, 'reflection')
            coverage.append({'freq_hz': f, 'slice': 'h1', 'fixed': 'w2_mm={0:g}'.format(sw['h1_slice_w2_mm']),
                             'which': 'reflection', 'span_rad': span})
            if f >= sw['coverage_min_frequency_hz']:
                limit = TWO_PI - sw['coverage_tolerance_rad']
                checks.append(check('reflection_coverage_{0:g}hz'.format(f), span >= limit, span, limit))
        export_helper.write_csv(os.path.join(out_dir, 'h1_slice.csv'), pandas.concat(frames, ignore_index=True))
        if sw['phase_maps']:
            export_helper.write_pgm(os.path.join(out_dir, 'phase_map_reflection_h1.pgm'),
                                    _phase_map(table, 'h1', 'reflection', {'w2': fixed_w2}), -np.pi, np.pi)
    if 'w2' in sw['axes']:
        frames = []
        for h1_mm in sw['w2_slice_h1_mm']:
            for f in table.frequencies:
                s = table_slice(table, 'w2', f, h1=mm(h1_mm))
                frame = _slice_frame(s, 'w2')
                frame.insert(0, 'h1_mm', h1_mm)
                frames.append(frame)
                coverage.append({'freq_hz': f, 'slice': 'w2', 'fixed': 'h1_mm={0:g}'.format(h1_mm),
                                 'which': 'transmission', 'span_rad': coverage_span(s, 'transmission')})
            if sw['phase_maps']:
                export_helper.write_pgm(os.path.join(out_dir, 'phase_map_transmission_w2_h1-{0:g}.pgm'.format(h1_mm)),
                                        _phase_map(table, 'w2', 'transmission', {'h1': mm(h1_mm)}), -np.pi, np.pi)
        export_helper.write_csv(os.path.join(out_dir, 'w2_slice.csv'), pandas.concat(frames, ignore_index=True))
        f_check = sw['report_frequency_hz']
        if np.any(np.isclose(table.frequencies, f_check)):
            h1_check = sw['transmission_coverage_h1_mm']
            span = coverage_span(table_slice(table, 'w2', f_check, h1=mm(h1_check)), 'transmission')
            limit = sw['transmission_coverage_fraction'] * TWO_PI
            checks.append(check('transmission_coverage_{0:g}hz_h1-{1:g}'.format(f_check, h1_check),
                                span >= limit, span, limit))
            if span < limit:
                logger.warning('transmission phase over w2 at h1 = {0:g} mm spans {1:.3f} rad, '
                               'below {2:.3f} rad'.format(h1_check, span, limit))
    export_helper.write_csv(os.path.join(out_dir, 'coverage.csv'), pandas.DataFrame(
        coverage, columns=['freq_hz', 'slice', 'fixed', 'which', 'span_rad']))

    report = {'coverage': coverage, 'table_entries': len(table), 'max_energy_error': table.max_energy_error()}
    f_report = sw['report_frequency_hz']
    if np.any(np.isclose(table.frequencies, f_report)):
        d = decoupling_report(table, f_report, h1_fixed=mm(config['geometry']['h1_mm']), w2_fixed=fixed_w2)
        report['decoupling'] = {'frequency_hz': d.frequency,
                                'transmission_variation_over_h1_rad': d.transmission_variation_over_h1,
                                'reflection_variation_over_w2_rad': d.reflection_variation_over_w2,
                                'limit_rad': d.limit, 'decoupled': d.decoupled}

    if 'w' in sw['axes']:
        amp_grids = TableGrids.from_mm(h1_mm=[sw['amplitude_h1_mm']], w2_mm=[sw['amplitude_w2_mm']],
                                       w_mm=config_helper.grid_values(config['grids']['w_mm']))
        amp_table = load_or_build_table(geometry, amp_grids, frequencies, cache_dir)
        frames = [_slice_frame(table_slice(amp_table, 'w', f), 'w') for f in amp_table.frequencies]
        export_helper.write_csv(os.path.join(out_dir, 'amplitude_table.csv'), pandas.concat(frames, ignore_index=True))
        trend = {}
        for f in amp_table.frequencies:
            s = table_slice(amp_table, 'w', f)
            trend['{0:g}'.format(f)] = {'spearman_abs_t_vs_w': amplitude_trend(amp_table, f),
                                        'abs_r_at_min_w': float(np.abs(s.r[0]))}
        report['amplitude'] = trend
        key = '{0:g}'.format(f_report)
        if key in trend:
            checks.append(check('amplitude_spearman', trend[key]['spearman_abs_t_vs_w'] > 0.9,
                                trend[key]['spearman_abs_t_vs_w'], 0.9))
            checks.append(check('reflection_at_min_w', trend[key]['abs_r_at_min_w'] > 0.9,
                                trend[key]['abs_r_at_min_w'], 0.9))
    report['checks'] = checks
    export_helper.write_json(os.path.join(out_dir, 'sweep_report.json'), report)
    return status_of(checks), table.content_hash(), checks


def _side_phases(side_cfg, layout, k0):
    return profiles.side_profile(side_cfg['kind'], layout, k0, angle=math.radians(side_cfg['angle_deg']),
                                 focus=tuple(mm(v) for v in side_cfg['focus_mm']))


def _selections_payload(layout, profile, selections):
    cells = []
    for i, s in enumerate(selections):
        cells.append({'index': i, 'x_mm': float(layout.x[i]) * 1e3,
                      'h1_mm': s.h1 * 1e3, 'w2_mm': s.w2 * 1e3, 'w_mm': s.w * 1e3,
                      'phi_r_rad': float(profile.phi_r[i]), 'phi_t_rad': float(profile.phi_t[i]),
                      'achieved_phase_r_rad': float(np.angle(s.achieved_r)), 'abs_r': abs(s.achieved_r),
                      'achieved_phase_t_rad': float(np.angle(s.achieved_t)), 'abs_t': abs(s.achieved_t),
                      'err_r_rad': s.phase_error_r, 'err_t_rad': s.phase_error_t})
    return cells


def _side_checks(name, side_cfg, side, f, f0, wave0, d):
    """Tolerance checks for one side of one predicted design."""
    checks = []
    wavelength = wave0.wavelength
    if side_cfg['kind'] == 'focusing':
        focal = tuple(mm(v) for v in side_cfg['focus_mm'])
        if f == f0:
            if d['focus_tolerance_mm'] is not None:
                limit = mm(d['focus_tolerance_mm'])
            else:
                limit = wavelength / 2.0 if name.startswith('ideal') else wavelength
            error = side.focus.error_to(focal)
            checks.append(check('{0}_focus_error_m'.format(name), error is not None and error <= limit, error, limit))
        else:
            x_peak = None if side.focus.no_peak else side.focus.x
            limit = make_wave_context(f).wavelength / 2.0
            checks.append(check('{0}_focus_on_axis_m'.format(name),
                                x_peak is not None and abs(x_peak - focal[1]) < limit, x_peak, limit))
    elif side_cfg['kind'] == 'steering' and not name.startswith('ideal'):
        sin_expected = math.sin(math.radians(side_cfg['angle_deg'])) * f0 / f
        if abs(sin_expected) < 1:
            expected = math.degrees(math.asin(sin_expected))
            angle = side.lobe.angle_deg
            checks.append(check('{0}_lobe_angle_deg'.format(name),
                                angle is not None and abs(angle - expected) <= d['angle_tolerance_deg'],
                                angle, expected))
            if f == f0:
                checks.append(check('{0}_side_lobe_ratio'.format(name),
                                    side.lobe.side_lobe_ratio < d['side_lobe_limit'],
                                    side.lobe.side_lobe_ratio, d['side_lobe_limit']))
    return checks


def cmd_design(config, out_dir):
    d = config['design']
    f0 = d['design_frequency_hz']
    wave0 = make_wave_context(f0)
    layout = profiles.line_layout(d['n_cells'], mm(d['pitch_mm']))
    profile = profiles.PhaseProfile(layout=layout, phi_r=_side_phases(d['reflection'], layout, wave0.wavenumber),
                                    phi_t=_side_phases(d['transmission'], layout, wave0.wavenumber))
    profiles.write_profile_csv(profile, os.path.join(out_dir, 'profile.csv'))

    summary = {'snell': {}}
    for side, phases in (('reflection', profile.phi_r), ('transmission', profile.phi_t)):
        if d[side]['kind'] == 'steering':
            try:
                result = profiles.snell_check(phases, layout, 0.0, wave0.wavenumber)
                summary['snell'][side] = {'angle_deg': result.angle_deg, 'evanescent': result.evanescent,
                                          'fit_residual_rad': result.fit_residual}
            except MetascreenError as e:
                summary['snell'][side] = {'error': str(e)}

    geometry = config_helper.geometry_from_config(config)
    frequencies = sorted(set([f0] + list(d['evaluation_frequencies_hz'])))
    grids = table_grids(config, with_w_grid=d['amplitude_split'] is not None)
    table = load_or_build_table(geometry, grids, frequencies, config['run']['cache_dir'])
    try:
        selections = select_cells(table, profile.phi_r, profile.phi_t, frequency=f0,
                                  amplitude_split=d['amplitude_split'])
    except InfeasibleSelectionError as e:
        export_helper.write_json(os.path.join(out_dir, 'infeasible.json'), {
            'cells': [{'index': i, 'x_mm': float(x) * 1e3, 'amplitude_split': d['amplitude_split'],
                       'nearest_split': e.nearest_split} for i, x in zip(e.cells, layout.x[e.cells])],
            'message': str(e)})
        raise
    export_helper.write_json(os.path.join(out_dir, 'selections.json'), {
        'frequency_hz': f0, 'cells': _selections_payload(layout, profile, selections)})

    z_range = (mm(d['z_step_mm']), mm(d['z_max_mm']))
    checks = []
    reports = {}
    ideal = field_verify.ideal_selections(profile.phi_r, profile.phi_t)
    for f in frequencies:
        wave = make_wave_context(f)
        moved = responses_at(table, selections, f)
        for kind, cells in (('ideal', ideal), ('quantized', moved)):
            report = field_verify.predict_fields(cells, layout, wave, z_range, supersample=d['supersample'],
                                                 z_step=mm(d['z_step_mm']))
            prefix = '{0}_{1:g}hz'.format(kind, f)
            field_verify.write_report(report, out_dir, prefix)
            reports[prefix] = report.summary()
            for side in ('reflection', 'transmission'):
                checks += _side_checks('{0}_{1}'.format(prefix, side), d[side], getattr(report, side), f, f0,
                                       wave0, d)
    summary['reports'] = reports
    summary['checks'] = checks
    export_helper.write_json(os.path.join(out_dir, 'design_report.json'), summary)
    return status_of(checks), table.content_hash(), checks


def _stack_image(stack):
    """Max-normalized planes side by side, one blank column between them."""
    planes = [p / p.max() if p.max() > 0 else p for p in stack]
    gap = np.zeros((planes[0].shape[0], 1))
    tiles = []
    for p in planes:
        tiles += [p, gap]
    return np.hstack(tiles[:-1])


def cmd_hologram(config, out_dir):
    h = config['hologram']
    strict = config['run']['strict']
    layout = profiles.panel_layout(h['grid'], pitch=mm(h['pitch_mm']))
    target_r = iasa.load_target(h['target_r'], layout.shape, strict=strict)
    target_t = iasa.load_target(h['target_t'], layout.shape, strict=strict)
    seed = config['run']['seed'] if h['random_init'] else None
    spec = iasa.HologramSpec(target_r=target_r, target_t=target_t, z_r=mm(h['z_r_mm']), z_t=mm(h['z_t_mm']),
                             frequency=h['design_frequency_hz'], layout=layout,
                             max_iterations=h['max_iterations'], tol=h['tol'], seed=seed)
    geometry = config_helper.geometry_from_config(config)
    frequencies = sorted(set([spec.frequency] + list(h['evaluation_frequencies_hz'])))
    table = load_or_build_table(geometry, table_grids(config), frequencies, config['run']['cache_dir'])
    panel = iasa.design_two_sided_panel(spec, table)

    export_helper.write_json(os.path.join(out_dir, 'panel_design.json'), iasa.design_to_json(panel))
    export_helper.write_pgm(os.path.join(out_dir, 'phase_r.pgm'), panel.phi_r, -np.pi, np.pi)
    export_helper.write_pgm(os.path.join(out_dir, 'phase_t.pgm'), panel.phi_t, -np.pi, np.pi)
    h1_axis, w2_axis = table.h1, table.w2
    export_helper.write_pgm(os.path.join(out_dir, 'h1_map.pgm'), panel.h1_map, h1_axis.min(), h1_axis.max())
    export_helper.write_pgm(os.path.join(out_dir, 'w2_map.pgm'), panel.w2_map, w2_axis.min(), w2_axis.max())
    export_helper.write_json(os.path.join(out_dir, 'iasa_history.json'), {
        'reflection': panel.reflection.correlation_history,
        'transmission': panel.transmission.correlation_history})

    half_range, step = mm(h['sweep_half_range_mm']), mm(h['sweep_step_mm'])
    runs = [(spec.frequency, True)] + [(f, False) for f in frequencies]
    results = {}
    sweep_rows = []
    for f, ideal in runs:
        verification = iasa.verify_hologram(panel, table, spec, frequency=f, ideal=ideal,
                                            half_range=half_range, step=step)
        kind = 'ideal' if ideal else 'quantized'
        results[(kind, f)] = verification
        for side, v in verification.sides.items():
            export_helper.write_pgm(os.path.join(out_dir, '{0}_{1}_{2:g}hz.pgm'.format(side, kind, f)), v.intensity)
            for z, q in zip(v.sweep_distances, v.sweep_correlations):
                sweep_rows.append({'kind': kind, 'freq_hz': f, 'side': side, 'distance_mm': z * 1e3,
                                   'correlation': q})
            if not ideal:
                wave = make_wave_context(f)
                boundary = _panel_boundary(panel, table, side, f, wave)
                stack = np.abs(angular_spectrum.radiate_stack(boundary, v.sweep_distances)) ** 2
                export_helper.write_pgm(os.path.join(out_dir, '{0}_zsweep_{1:g}hz.pgm'.format(side, f)),
                                        _stack_image(stack))
    export_helper.write_csv(os.path.join(out_dir, 'zsweep.csv'), pandas.DataFrame(
        sweep_rows, columns=['kind', 'freq_hz', 'side', 'distance_mm', 'correlation']))

    checks = []
    ideal_v = results[('ideal', spec.frequency)]
    quant_v = results[('quantized', spec.frequency)]
    metrics = {}
    error_stats = panel.error_stats()
    for side in iasa.SIDES:
        q, qi = quant_v.sides[side].correlation, ideal_v.sides[side].correlation
        mean_error = error_stats[side]['mean']
        side_checks = [
            check('{0}_correlation'.format(side), q >= h['min_correlation'], q, h['min_correlation']),
            check('{0}_quantization_drop'.format(side), qi - q <= h['max_correlation_drop'], qi - q,
                  h['max_correlation_drop']),
            check('{0}_mean_phase_error_rad'.format(side), mean_error < h['max_mean_phase_error_rad'], mean_error,
                  h['max_mean_phase_error_rad']),
        ]
        failed = [c['name'] for c in side_checks if not c['passed']]
        if failed:
            logger.warning('{0} side misses its tolerances: {1}'.format(side, ', '.join(failed)))
        checks += side_checks
        metrics[side] = {'ideal_correlation': qi, 'quantized_correlation': q, 'mean_phase_error_rad': mean_error,
                         'passed': not failed, 'failed_checks': failed}
    for f in frequencies:
        if f == spec.frequency:
            continue
        for side in iasa.SIDES:
            offset = results[('quantized', f)].sides[side].best_offset
            metrics.setdefault('best_plane_offset_mm', {}).setdefault('{0:g}'.format(f), {})[side] = offset * 1e3
            limit = mm(h['plane_tolerance_mm'])
            checks.append(check('{0}_best_plane_{1:g}hz_m'.format(side, f), abs(offset) <= limit, offset, limit))
    export_helper.write_json(os.path.join(out_dir, 'hologram_report.json'), {
        'metrics': metrics, 'checks': checks, 'error_stats': error_stats})
    return status_of(checks), table.content_hash(), checks


def _panel_boundary(panel, table, side, f, wave):
    moved = responses_at(table, panel.selections, f)
    attr = 'achieved_r' if side == 'reflection' else 'achieved_t'
    values = np.array([getattr(s, attr) for s in moved]).reshape(panel.layout.shape)
    return angular_spectrum.ComplexField(samples=values, spacing=(panel.layout.cell_pitch,) * 2, plane_z=0.0,
                                         wave=wave)


def cmd_propagate(config, out_dir):
    p = config['propagate']
    if not p['input']:
        raise ConfigError('propagate.input must name a field CSV written by write_field')
    source = angular_spectrum.read_field(p['input'])
    if p['frequency_hz'] is not None and p['frequency_hz'] != source.wave.frequency:
        logger.warning('re-labelling field from {0:g} Hz to {1:g} Hz'.format(source.wave.frequency, p['frequency_hz']))
        source = angular_spectrum.make_field(source.samples, source.spacing, p['frequency_hz'],
                                             plane_z=source.plane_z, allow_aliasing=p['allow_aliasing'])
    result = angular_spectrum.radiate(source, mm(p['dz_mm']), padded=p['padded'])
    angular_spectrum.write_field(result, out_dir, 'propagated')
    return EXIT_OK, None, []


def main():
    cli()


if __name__ == '__main__':
    main()
