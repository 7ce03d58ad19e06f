"""
Output directories and file writers.

Every writer goes through a temp file in the target directory followed by
os.replace, so a reader never sees a half-written file.
"""
import hashlib
import io
import json
import logging
import os
import tempfile

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.12g'


# make dir if it does not exist
def make_local_dir(dir):
    if not os.path.exists(dir):
        os.makedirs(dir, exist_ok=True)


def get_output_dir(out_root, command, config_hash):
    """
    <out_root>/<command>/<config_hash>/, created if missing.

    :param out_root: root output directory, from --out or the properties file
    :param command: cli command name
    :param config_hash: hash of the resolved configuration
    """
    if not out_root:
        msg = 'please configure output_dir in metascreen.properties or pass --out'
        logger.error(msg)
        raise ValueError("Error: {0}".format(msg))
    dir = os.path.join(out_root, command, config_hash)
    make_local_dir(dir)
    return dir


def atomic_write_bytes(path, data):
    dir = os.path.dirname(os.path.abspath(path))
    make_local_dir(dir)
    fd, tmp = tempfile.mkstemp(prefix='.tmp-', dir=dir)
    try:
        with os.fdopen(fd, 'wb') as fp:
            fp.write(data)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug('wrote {0}'.format(path))


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode('utf-8'))


def _to_builtin(value):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_builtin(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return {'re': value.real, 'im': value.imag}
    return value


def json_text(payload):
    """Canonical JSON: sorted keys, fixed indentation, numpy values converted."""
    return json.dumps(_to_builtin(payload), sort_keys=True, indent=2) + '\n'


def write_json(path, payload):
    atomic_write_text(path, json_text(payload))


def read_json(path):
    with open(path) as fp:
        return json.load(fp)


def content_hash(payload, length=12):
    """SHA-256 over the canonical JSON form of ``payload``, truncated to ``length`` hex digits."""
    canonical = json.dumps(_to_builtin(payload), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:length]


def frame_to_csv_text(frame):
    return frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def write_csv(path, frame):
    atomic_write_text(path, frame_to_csv_text(frame))


def grayscale(grid, lo=None, hi=None):
    """
    Map a real 2-D grid onto 0..255.

    Without explicit bounds the grid is max-normalized, which is how
    intensity renders are stored; phase maps pass (-pi, pi).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError('image grid must be 2-D, got shape {0}'.format(grid.shape))
    grid = np.where(np.isfinite(grid), grid, 0.0)
    lo = 0.0 if lo is None else float(lo)
    hi = float(grid.max()) if hi is None else float(hi)
    if hi <= lo:
        return np.zeros(grid.shape, dtype=np.uint8)
    scaled = np.clip((grid - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def write_pgm(path, grid, lo=None, hi=None):
    """8-bit binary PGM; row 0 of ``grid`` is the top image row."""
    image = Image.fromarray(grayscale(grid, lo, hi))
    buffer = io.BytesIO()
    image.save(buffer, format='PPM')
    atomic_write_bytes(path, buffer.getvalue())


def read_grayscale(path):
    """Raster file as a float grid in [0, 1]."""
    with Image.open(path) as image:
        data = np.asarray(image.convert('L'), dtype=float)
    return data / 255.0


def write_manifest(dir, command, config, config_hash, version, table_hash=None, extra=None):
    manifest = {
        'command': command,
        'config': config,
        'config_hash': config_hash,
        'table_hash': table_hash,
        'version': version,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(dir, 'manifest.json')
    write_json(path, manifest)
    return path
