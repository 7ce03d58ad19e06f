"""
Bundled 25x25 binary letter rasters used as hologram targets.

Assets are text files, one row per line, '#' for 1 and '.' for 0.
Generation rule (block capitals, 3-pixel stroke, rows/columns 0-based):

- L: vertical bar columns 6-8, rows 4-20; base rows 18-20, columns 6-18
- C: the L strokes plus a top bar rows 4-6, columns 6-18
"""
import os

import numpy as np

from metascreen.core import DomainError

ASSET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'assets')
LETTER_SIZE = 25
STROKE = 3

# (row range, column range) per stroke, inclusive
_STROKES = {
    'L': [((4, 20), (6, 8)), ((18, 20), (6, 18))],
    'C': [((4, 20), (6, 8)), ((18, 20), (6, 18)), ((4, 6), (6, 18))],
}


def available_letters():
    return sorted(_STROKES)


def letter_rule(name):
    """Raster built directly from the generation rule."""
    if name not in _STROKES:
        raise DomainError('no bundled letter {0!r}; have {1}'.format(name, ', '.join(available_letters())))
    grid = np.zeros((LETTER_SIZE, LETTER_SIZE))
    for (r0, r1), (c0, c1) in _STROKES[name]:
        grid[r0:r1 + 1, c0:c1 + 1] = 1.0
    return grid


def letter_raster(name):
    """Bundled raster of letter ``name`` as a 0/1 float grid."""
    if name not in _STROKES:
        raise DomainError('no bundled letter {0!r}; have {1}'.format(name, ', '.join(available_letters())))
    path = os.path.join(ASSET_DIR, 'letter_{0}.txt'.format(name))
    with open(path) as fp:
        rows = [line.strip() for line in fp if line.strip()]
    return np.array([[1.0 if ch == '#' else 0.0 for ch in row] for row in rows])
