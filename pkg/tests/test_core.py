import math

import numpy as np
import pytest

from metascreen.core import (AIR_SOUND_SPEED, DomainError, Medium, make_wave_context, mm, phase_distance, to_mm,
                             wrap_phase)


def test_wave_context_at_design_frequency():
    wave = make_wave_context(6000.0)
    assert wave.wavelength == pytest.approx(AIR_SOUND_SPEED / 6000.0)
    assert wave.wavenumber == pytest.approx(2 * math.pi / wave.wavelength)


@pytest.mark.parametrize('frequency', [0.0, -10.0, float('nan'), float('inf')])
def test_wave_context_rejects_bad_frequency(frequency):
    with pytest.raises(DomainError):
        make_wave_context(frequency)


def test_medium_rejects_non_positive_values():
    with pytest.raises(DomainError):
        Medium(density=0.0)


def test_wrap_phase_is_half_open():
    assert wrap_phase(math.pi) == pytest.approx(math.pi)
    assert wrap_phase(-math.pi) == pytest.approx(math.pi)
    assert wrap_phase(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    values = wrap_phase(np.linspace(-20, 20, 401))
    assert np.all(values > -math.pi) and np.all(values <= math.pi)


def test_wrap_phase_rejects_non_finite():
    with pytest.raises(DomainError):
        wrap_phase([0.0, np.nan])


def test_phase_distance_is_circular():
    assert phase_distance(math.pi - 0.1, -math.pi + 0.1) == pytest.approx(0.2)
    assert phase_distance(0.0, math.pi) == pytest.approx(math.pi)
    assert phase_distance(1.0, 1.0 + 4 * math.pi) == pytest.approx(0.0, abs=1e-12)


def test_mm_conversions():
    assert mm(14.3) == pytest.approx(0.0143)
    assert to_mm(0.0143) == pytest.approx(14.3)
    np.testing.assert_allclose(mm([1.0, 2.0]), [0.001, 0.002])


def test_wrap_phase_is_idempotent(rng):
    values = np.concatenate([rng.uniform(-1e3, 1e3, 5000), rng.normal(0.0, 4.0, 5000),
                             [math.pi, -math.pi, 0.0, 2 * math.pi]])
    once = wrap_phase(values)
    twice = wrap_phase(once)
    assert np.all(twice > -math.pi) and np.all(twice <= math.pi)
    assert np.max(phase_distance(twice, once)) < 1e-12
    np.testing.assert_allclose(twice, once, atol=1e-12)


def test_phase_distance_is_a_metric(rng):
    a, b, c = rng.uniform(-4 * math.pi, 4 * math.pi, (3, 10000))
    ab, bc, ac = phase_distance(a, b), phase_distance(b, c), phase_distance(a, c)
    assert np.all(ac <= ab + bc + 1e-12)
    np.testing.assert_allclose(ab, phase_distance(b, a), atol=1e-12)
    assert np.all((ab >= 0) & (ab <= math.pi))
    assert np.max(phase_distance(a, a + 2 * math.pi)) < 1e-9
