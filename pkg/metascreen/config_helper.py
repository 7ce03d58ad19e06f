"""
Run configuration: site properties, JSON/YAML run files and flag overrides.

Precedence, lowest first: built-in defaults, ``metascreen.properties``,
the run file, command-line flags. Lengths are millimetres and frequencies
hertz in every file; conversion to SI happens in the ``*_from_config``
helpers.
"""
import copy
import json
import logging
import os

import numpy as np
import yaml

from metascreen import export_helper
from metascreen.cell_library import grid_range
from metascreen.core import ConfigError, DomainError, mm
from metascreen.duct_model import UnitCellGeometry

logger = logging.getLogger(__name__)

PROPERTIES_FILE = 'metascreen.properties'

# keys a properties file may set, and where they land in the run config
PROPERTY_KEYS = {
    'output_dir': 'run.output_dir',
    'cache_dir': 'run.cache_dir',
    'log_level': 'run.log_level',
    'seed': 'run.seed',
}

DEFAULT_CONFIG = {
    'run': {
        'output_dir': 'out',
        'cache_dir': None,
        'log_level': 'INFO',
        'seed': 0,
        'strict': False,
    },
    'geometry': {
        'h1_mm': 31.0,
        'h2_mm': 14.3,
        'w_mm': 8.0,
        'w2_mm': 1.0,
        't_mm': 1.0,
        'h4_mm': 4.0,
        'L_mm': 14.3,
        'D_mm': 14.3,
        'n_plates': 15,
        'h_mm': 50.0,
        'outlet_length_mm': 4.0,
        'end_correction_mm': 0.0,
    },
    'grids': {
        'h1_mm': {'start': 1.0, 'stop': 35.0, 'step': 0.5},
        'w2_mm': {'start': 1.0, 'stop': 5.0, 'step': 0.1},
        'w_mm': {'start': 0.5, 'stop': 14.3, 'step': 0.2},
    },
    'sweep': {
        'frequencies_hz': [4000.0, 4500.0, 5000.0, 5500.0, 6000.0, 6500.0, 7000.0, 7500.0, 8000.0],
        'axes': ['h1', 'w2', 'w'],
        'h1_slice_w2_mm': 1.0,
        'w2_slice_h1_mm': [28.0, 31.0],
        'amplitude_h1_mm': 31.0,
        'amplitude_w2_mm': 1.0,
        'phase_maps': True,
        'report_frequency_hz': 6000.0,
        'h1_step_mm': 0.25,
        'coverage_tolerance_rad': 0.1,
        'coverage_min_frequency_hz': 5100.0,
        'transmission_coverage_h1_mm': 31.0,
        'transmission_coverage_fraction': 0.8,
    },
    'design': {
        'design_frequency_hz': 6000.0,
        'evaluation_frequencies_hz': [5500.0, 6000.0, 6500.0],
        'n_cells': 24,
        'pitch_mm': 14.3,
        'amplitude_split': None,
        'reflection': {'kind': 'steering', 'angle_deg': 45.0, 'focus_mm': [250.0, 0.0]},
        'transmission': {'kind': 'focusing', 'angle_deg': 0.0, 'focus_mm': [250.0, 0.0]},
        'z_max_mm': 400.0,
        'z_step_mm': 2.0,
        'supersample': 7,
        'focus_tolerance_mm': None,
        'angle_tolerance_deg': 3.0,
        'side_lobe_limit': 0.5,
    },
    'hologram': {
        'design_frequency_hz': 6000.0,
        'evaluation_frequencies_hz': [5500.0, 6500.0],
        'target_r': 'C',
        'target_t': 'L',
        'z_r_mm': -120.0,
        'z_t_mm': 150.0,
        'grid': 25,
        'pitch_mm': 14.3,
        'max_iterations': 200,
        'tol': 1e-4,
        'random_init': False,
        'sweep_half_range_mm': 60.0,
        'sweep_step_mm': 5.0,
        'min_correlation': 0.45,
        'max_correlation_drop': 0.15,
        'max_mean_phase_error_rad': 0.2,
        'plane_tolerance_mm': 40.0,
    },
    'propagate': {
        'input': None,
        'frequency_hz': None,
        'dz_mm': 100.0,
        'padded': True,
        'allow_aliasing': False,
    },
}

# leaves that are not plain scalars of their default's type
GRID_KEYS = {'grids.h1_mm', 'grids.w2_mm', 'grids.w_mm'}
NUMBER_LISTS = {'sweep.frequencies_hz', 'sweep.w2_slice_h1_mm', 'design.evaluation_frequencies_hz',
                'hologram.evaluation_frequencies_hz', 'design.reflection.focus_mm',
                'design.transmission.focus_mm'}
STRING_LISTS = {'sweep.axes'}
OPTIONAL_NUMBERS = {'design.amplitude_split', 'design.focus_tolerance_mm', 'propagate.frequency_hz'}
OPTIONAL_STRINGS = {'run.cache_dir', 'propagate.input'}

PROFILE_KINDS = ('steering', 'focusing', 'diffusion', 'flat')
SWEEP_AXES = ('h1', 'w2', 'w')

# not part of the experiment, so left out of the config hash
UNHASHED_KEYS = ('output_dir', 'cache_dir', 'log_level')


def read_properties_file(file_name):
    properties = {}
    with open(file_name) as fp:
        for line in fp:
            line = line.strip()
            if not line or line.startswith('#') or line.startswith('[default'):
                continue
            key, value = __parse_line__(line)
            logger.debug('property {0} = {1}'.format(key, value))
            properties[key] = value
    return properties


def __parse_line__(input):
    if '=' not in input:
        raise ConfigError('malformed properties line {0!r}, expected key=value'.format(input))
    key, value = input.split('=', maxsplit=1)
    key = key.strip()  # handles key = value as well as key=value
    value = value.strip()

    return key, value


def read_run_file(path):
    """Parse a JSON or YAML run file, chosen by suffix."""
    suffix = os.path.splitext(path)[1].lower()
    try:
        with open(path) as fp:
            text = fp.read()
    except OSError as e:
        raise ConfigError('cannot read config {0}: {1}'.format(path, e))
    if suffix == '.json':
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError('{0}: line {1} column {2}: {3}'.format(path, e.lineno, e.colno, e.msg))
    elif suffix in ('.yaml', '.yml'):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            if mark is not None:
                raise ConfigError('{0}: line {1} column {2}: {3}'.format(
                    path, mark.line + 1, mark.column + 1, getattr(e, 'problem', e)))
            raise ConfigError('{0}: {1}'.format(path, e))
    else:
        raise ConfigError('config {0} must end in .json, .yaml or .yml'.format(path))
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError('{0}: top level must be a mapping'.format(path))
    return data


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_leaf(key, value, default):
    if key in GRID_KEYS:
        if isinstance(value, list) and value and all(_is_number(v) for v in value):
            return
        if isinstance(value, dict):
            unknown = sorted(set(value) - {'start', 'stop', 'step'})
            if unknown:
                raise ConfigError('unknown config key {0}.{1}'.format(key, unknown[0]))
            missing = sorted({'start', 'stop', 'step'} - set(value))
            if missing:
                raise ConfigError('{0} needs start, stop and step (missing {1})'.format(key, ', '.join(missing)))
            if all(_is_number(v) for v in value.values()):
                return
        raise ConfigError('{0} must be a list of numbers or {{start, stop, step}}'.format(key))
    if key in NUMBER_LISTS:
        if isinstance(value, list) and all(_is_number(v) for v in value):
            return
        raise ConfigError('{0} must be a list of numbers'.format(key))
    if key in STRING_LISTS:
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return
        raise ConfigError('{0} must be a list of strings'.format(key))
    if key in OPTIONAL_NUMBERS:
        if value is None or _is_number(value):
            return
        raise ConfigError('{0} must be a number or null'.format(key))
    if key in OPTIONAL_STRINGS:
        if value is None or isinstance(value, str):
            return
        raise ConfigError('{0} must be a string or null'.format(key))
    if isinstance(default, bool):
        if isinstance(value, bool):
            return
        raise ConfigError('{0} must be true or false'.format(key))
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return
        raise ConfigError('{0} must be an integer'.format(key))
    if isinstance(default, float):
        if _is_number(value):
            return
        raise ConfigError('{0} must be a number'.format(key))
    if isinstance(default, str):
        if isinstance(value, str):
            return
        raise ConfigError('{0} must be a string'.format(key))


def validate_config(data, schema=None, prefix=''):
    """Reject unknown keys and mistyped values, naming the dotted key path."""
    schema = DEFAULT_CONFIG if schema is None else schema
    if not isinstance(data, dict):
        raise ConfigError('{0} must be a mapping'.format(prefix.rstrip('.') or 'config'))
    for key, value in data.items():
        path = prefix + str(key)
        if key not in schema:
            raise ConfigError('unknown config key {0}'.format(path))
        default = schema[key]
        if isinstance(default, dict) and path not in GRID_KEYS:
            validate_config(value, default, path + '.')
        else:
            _check_leaf(path, value, default)


def deep_merge(base, update):
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and not _is_grid_spec(value):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _is_grid_spec(value):
    return bool(value) and set(value) <= {'start', 'stop', 'step'}


def set_dotted(config, dotted, value):
    node = config
    parts = dotted.split('.')
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def get_dotted(config, dotted):
    node = config
    for part in dotted.split('.'):
        node = node[part]
    return node


def _properties_overrides(properties):
    overrides = {}
    for key, value in properties.items():
        if key not in PROPERTY_KEYS:
            raise ConfigError('unknown property {0} in {1}'.format(key, PROPERTIES_FILE))
        if key == 'seed':
            try:
                value = int(value)
            except ValueError:
                raise ConfigError('property seed must be an integer, got {0!r}'.format(value))
        set_dotted(overrides, PROPERTY_KEYS[key], value)
    return overrides


def load_config(path=None, properties_path=PROPERTIES_FILE, overrides=None):
    """
    Resolve the run configuration.

    :param path: JSON/YAML run file or None for defaults only
    :param properties_path: site properties file; silently skipped if missing
    :param overrides: mapping of dotted key -> value from the command line
    :return: fully populated config dict (mm / Hz units)
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if properties_path and os.path.exists(properties_path):
        logger.info('reading site defaults from {0}'.format(properties_path))
        config = deep_merge(config, _properties_overrides(read_properties_file(properties_path)))
    if path:
        data = read_run_file(path)
        validate_config(data)
        config = deep_merge(config, data)
    if overrides:
        flags = {}
        for dotted, value in overrides.items():
            set_dotted(flags, dotted, value)
        validate_config(flags)
        config = deep_merge(config, flags)
    check_config(config)
    return config


def check_config(config):
    """Value-level checks that a schema cannot express."""
    for side in ('reflection', 'transmission'):
        profile = config['design'][side]
        if profile['kind'] not in PROFILE_KINDS:
            raise ConfigError('design.{0}.kind must be one of {1}, got {2!r}'.format(
                side, ', '.join(PROFILE_KINDS), profile['kind']))
        if len(profile['focus_mm']) != 2:
            raise ConfigError('design.{0}.focus_mm must be [z, x]'.format(side))
    for axis in config['sweep']['axes']:
        if axis not in SWEEP_AXES:
            raise ConfigError('sweep.axes entries must be among {0}, got {1!r}'.format(', '.join(SWEEP_AXES), axis))
    if config['design']['n_cells'] < 1:
        raise ConfigError('design.n_cells must be at least 1, got {0}'.format(config['design']['n_cells']))
    if config['hologram']['grid'] < 2:
        raise ConfigError('hologram.grid must be at least 2')
    if not config['hologram']['z_r_mm'] < 0 < config['hologram']['z_t_mm']:
        raise ConfigError('hologram planes need z_r_mm < 0 < z_t_mm')
    if config['design']['supersample'] < 1:
        raise ConfigError('design.supersample must be at least 1')
    for dotted in ('sweep.frequencies_hz', 'design.evaluation_frequencies_hz', 'hologram.evaluation_frequencies_hz'):
        values = get_dotted(config, dotted)
        if any(v <= 0 for v in values):
            raise ConfigError('{0} must hold positive frequencies'.format(dotted))
    geometry = geometry_from_config(config)
    for axis in SWEEP_AXES:
        values = grid_values(config['grids'][axis + '_mm'])
        if values.size == 0:
            raise ConfigError('grids.{0}_mm is empty'.format(axis))
        for value in (values.min(), values.max()):
            try:
                geometry.with_params(**{axis: mm(float(value))}).validate()
            except DomainError as e:
                raise ConfigError('grids.{0}_mm: {1}'.format(axis, e))


def config_hash(config):
    hashed = copy.deepcopy(config)
    for key in UNHASHED_KEYS:
        hashed['run'].pop(key, None)
    return export_helper.content_hash(hashed, length=12)


def geometry_from_config(config):
    g = config['geometry']
    geometry = UnitCellGeometry(h1=mm(g['h1_mm']), h2=mm(g['h2_mm']), w=mm(g['w_mm']), w2=mm(g['w2_mm']),
                                t=mm(g['t_mm']), h4=mm(g['h4_mm']), L=mm(g['L_mm']), D=mm(g['D_mm']),
                                n_plates=int(g['n_plates']), h=mm(g['h_mm']),
                                outlet_length=mm(g['outlet_length_mm']),
                                end_correction=mm(g['end_correction_mm']))
    try:
        return geometry.validate()
    except DomainError as e:
        raise ConfigError('geometry: {0}'.format(e))


def grid_values(spec):
    """Grid spec (list, or start/stop/step) as a sorted array, in the file's units."""
    if isinstance(spec, dict):
        return grid_range(spec['start'], spec['stop'], spec['step'])
    return np.unique(np.asarray(spec, dtype=float))
