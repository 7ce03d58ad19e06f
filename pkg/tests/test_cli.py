import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

import metascreen
from metascreen.angular_spectrum import make_field, read_field, write_field
from metascreen.cli import cli
from metascreen.core import mm
from metascreen.export_helper import read_json

SMALL_GRIDS = {
    'h1_mm': {'start': 1.0, 'stop': 35.0, 'step': 1.0},
    'w2_mm': {'start': 1.0, 'stop': 5.0, 'step': 0.5},
    'w_mm': [8.0],
}


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return CliRunner()


def write_config(tmp_path, data, name='run.json'):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def run_dir(root, command):
    base = os.path.join(root, command)
    hashes = os.listdir(base)
    assert len(hashes) == 1
    return os.path.join(base, hashes[0])


def test_version(runner):
    result = runner.invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert metascreen.__version__ in result.output


def test_propagate_dumped_field(runner, tmp_path):
    samples = np.zeros((9, 9), dtype=complex)
    samples[4, 4] = 1.0
    source = write_field(make_field(samples, (mm(10.0),) * 2, 6000.0), str(tmp_path), 'source')
    config = write_config(tmp_path, {'propagate': {'input': source, 'dz_mm': 50.0}})
    result = runner.invoke(cli, ['propagate', '--config', config, '--out', 'out'])
    assert result.exit_code == 0, result.output
    out = run_dir(str(tmp_path / 'out'), 'propagate')
    field = read_field(os.path.join(out, 'propagated.csv'))
    assert field.plane_z == pytest.approx(mm(50.0))
    assert field.shape == (9, 9)
    manifest = read_json(os.path.join(out, 'manifest.json'))
    assert manifest['command'] == 'propagate'
    assert manifest['config']['propagate']['dz_mm'] == 50.0


def test_propagate_without_input_fails(runner):
    result = runner.invoke(cli, ['propagate', '--out', 'out'])
    assert result.exit_code == 1


def test_bad_config_key_fails(runner, tmp_path):
    config = write_config(tmp_path, {'sweep': {'frequency_hz': [6000]}})
    result = runner.invoke(cli, ['sweep', '--config', config, '--out', 'out'])
    assert result.exit_code == 1


def test_bad_frequency_flag_fails(runner):
    result = runner.invoke(cli, ['sweep', '--freq', '6k', '--out', 'out'])
    assert result.exit_code == 1


def test_sweep_outputs(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': {'w2_mm': {'start': 1.0, 'stop': 2.0, 'step': 0.5}},
        'sweep': {'axes': ['h1', 'w2'], 'w2_slice_h1_mm': [31.0]},
    })
    result = runner.invoke(cli, ['sweep', '--config', config, '--freq', '6000', '--out', 'out', '--cache', 'cache'])
    assert result.exit_code == 2, result.output
    out = run_dir(str(tmp_path / 'out'), 'sweep')
    for name in ('table.csv', 'h1_slice.csv', 'w2_slice.csv', 'coverage.csv', 'sweep_report.json',
                 'phase_map_reflection_h1.pgm', 'manifest.json'):
        assert os.path.exists(os.path.join(out, name)), name
    manifest = read_json(os.path.join(out, 'manifest.json'))
    assert manifest['status'] == result.exit_code
    assert manifest['table_hash'] is not None
    assert os.listdir(str(tmp_path / 'cache'))
    report = read_json(os.path.join(out, 'sweep_report.json'))
    assert 'decoupling' in report
    transmission = [c for c in report['checks'] if c['name'] == 'transmission_coverage_6000hz_h1-31']
    assert len(transmission) == 1
    assert not transmission[0]['passed']
    assert transmission[0]['value'] < transmission[0]['limit']


def test_design_outputs(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': SMALL_GRIDS,
        'design': {'z_max_mm': 300.0, 'z_step_mm': 5.0},
    })
    result = runner.invoke(cli, ['design', '--config', config, '--freq', '6000', '--out', 'out'])
    assert result.exit_code in (0, 2), result.output
    out = run_dir(str(tmp_path / 'out'), 'design')
    for name in ('profile.csv', 'selections.json', 'design_report.json', 'quantized_6000hz_report.json',
                 'ideal_6000hz_transmission_intensity.pgm', 'quantized_6000hz_farfield.csv'):
        assert os.path.exists(os.path.join(out, name)), name
    selections = read_json(os.path.join(out, 'selections.json'))
    assert len(selections['cells']) == 24
    report = read_json(os.path.join(out, 'design_report.json'))
    assert report['snell']['reflection']['angle_deg'] == pytest.approx(45.0, abs=1e-6)
    assert all(check['passed'] for check in report['checks']) == (result.exit_code == 0)


def test_design_with_unreachable_split(runner, tmp_path):
    config = write_config(tmp_path, {'grids': SMALL_GRIDS, 'design': {'amplitude_split': 1.5}})
    result = runner.invoke(cli, ['design', '--config', config, '--freq', '6000', '--out', 'out'])
    assert result.exit_code == 1
    infeasible = read_json(os.path.join(run_dir(str(tmp_path / 'out'), 'design'), 'infeasible.json'))
    assert len(infeasible['cells']) == 24


def test_hologram_outputs(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': SMALL_GRIDS,
        'hologram': {'max_iterations': 5, 'sweep_half_range_mm': 20.0, 'sweep_step_mm': 10.0},
    })
    result = runner.invoke(cli, ['hologram', '--config', config, '--freq', '6500', '--out', 'out'])
    assert result.exit_code in (0, 2), result.output
    out = run_dir(str(tmp_path / 'out'), 'hologram')
    for name in ('panel_design.json', 'phase_r.pgm', 'h1_map.pgm', 'iasa_history.json', 'zsweep.csv',
                 'hologram_report.json', 'transmission_quantized_6500hz.pgm', 'reflection_zsweep_6500hz.pgm'):
        assert os.path.exists(os.path.join(out, name)), name
    design = read_json(os.path.join(out, 'panel_design.json'))
    assert design['grid'] == [25, 25]
    assert len(design['cells']) == 625
    report = read_json(os.path.join(out, 'hologram_report.json'))
    for side in ('reflection', 'transmission'):
        metrics = report['metrics'][side]
        assert metrics['passed'] == (not metrics['failed_checks'])
        assert '{0}_mean_phase_error_rad'.format(side) in [c['name'] for c in report['checks']]


def assert_reruns_identical(runner, tmp_path, command, config, args, names):
    for out in ('first', 'second'):
        result = runner.invoke(cli, [command, '--config', config, '--out', out] + args)
        assert result.exit_code in (0, 2), result.output
    first = run_dir(str(tmp_path / 'first'), command)
    second = run_dir(str(tmp_path / 'second'), command)
    assert os.path.basename(first) == os.path.basename(second)
    for name in names:
        with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
            assert a.read() == b.read(), name


def test_repeated_hologram_runs_are_byte_identical(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': SMALL_GRIDS,
        'hologram': {'max_iterations': 3, 'random_init': True, 'sweep_half_range_mm': 10.0,
                     'sweep_step_mm': 10.0},
    })
    assert_reruns_identical(runner, tmp_path, 'hologram', config, ['--freq', '6500', '--seed', '42'],
                            ['panel_design.json', 'zsweep.csv', 'hologram_report.json', 'iasa_history.json'])


def test_repeated_sweep_runs_are_byte_identical(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': {'w2_mm': {'start': 1.0, 'stop': 2.0, 'step': 0.5}},
        'sweep': {'axes': ['h1', 'w2'], 'w2_slice_h1_mm': [31.0]},
    })
    assert_reruns_identical(runner, tmp_path, 'sweep', config, ['--freq', '6000'],
                            ['table.csv', 'h1_slice.csv', 'w2_slice.csv', 'coverage.csv', 'sweep_report.json'])


def test_repeated_design_runs_are_byte_identical(runner, tmp_path):
    config = write_config(tmp_path, {
        'grids': SMALL_GRIDS,
        'design': {'z_max_mm': 300.0, 'z_step_mm': 5.0},
    })
    assert_reruns_identical(runner, tmp_path, 'design', config, ['--freq', '6000'],
                            ['profile.csv', 'selections.json', 'design_report.json', 'quantized_6000hz_report.json',
                             'quantized_6000hz_farfield.csv', 'ideal_6000hz_reflection_intensity.csv'])
