import math

import numpy as np
import pytest

from metascreen.core import AliasingError, DomainError, mm
from metascreen.profiles import (PROFILE_COLUMNS, PhaseProfile, diffusion_profile, flat_profile, focusing_profile,
                                 line_layout, max_alias_free_pitch, panel_layout, profile_frame, side_profile,
                                 snell_check, steering_profile)


def test_line_layout_is_centred():
    layout = line_layout(24, mm(14.3))
    assert layout.n_cells == 24 and not layout.is_panel
    assert layout.x.mean() == pytest.approx(0.0, abs=1e-15)
    assert layout.x[1] - layout.x[0] == pytest.approx(mm(14.3))


def test_panel_layout_axes():
    layout = panel_layout(4, 3, mm(10.0))
    assert layout.shape == (3, 4)
    assert layout.x.shape == layout.y.shape == (3, 4)
    np.testing.assert_allclose(layout.x[0], layout.x[2])
    np.testing.assert_allclose(layout.y[:, 0], [-0.01, 0.0, 0.01])
    assert layout.cell_positions.shape == (12, 2)


def test_layout_rejects_empty_array():
    with pytest.raises(DomainError):
        line_layout(0)


def test_focusing_profile_is_convex_and_zero_at_origin(wave):
    layout = line_layout(25, mm(14.3))
    phi = focusing_profile(layout, (mm(250.0), 0.0), wave.wavenumber)
    assert phi[12] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.diff(phi, 2) > 0)
    np.testing.assert_allclose(phi, phi[::-1])


def test_focusing_profile_on_panel(wave):
    layout = panel_layout(5, pitch=mm(14.3))
    phi = focusing_profile(layout, (mm(150.0), 0.0, 0.0), wave.wavenumber)
    assert phi.shape == (5, 5)
    assert phi[2, 2] == pytest.approx(0.0, abs=1e-12)
    assert phi[0, 0] > phi[0, 2] > 0


def test_focal_point_on_array_plane_is_rejected(wave):
    with pytest.raises(DomainError):
        focusing_profile(line_layout(4), (0.0, 0.0), wave.wavenumber)


def test_diffusion_mirrors_focusing(wave):
    layout = line_layout(24)
    focal = (mm(200.0), mm(10.0))
    np.testing.assert_allclose(diffusion_profile(layout, focal, wave.wavenumber),
                               -focusing_profile(layout, focal, wave.wavenumber))


def test_steering_profile_gradient(wave):
    layout = line_layout(24, mm(14.3))
    phi = steering_profile(layout, math.radians(45.0), wave.wavenumber)
    np.testing.assert_allclose(np.diff(phi), wave.wavenumber * mm(14.3) * math.sin(math.radians(45.0)))
    with pytest.raises(DomainError):
        steering_profile(layout, math.radians(90.0), wave.wavenumber)


def test_side_profile_dispatch(wave):
    layout = line_layout(8)
    np.testing.assert_array_equal(side_profile('flat', layout, wave.wavenumber), flat_profile(layout))
    np.testing.assert_allclose(side_profile('steering', layout, wave.wavenumber, angle=0.3),
                               steering_profile(layout, 0.3, wave.wavenumber))
    with pytest.raises(DomainError):
        side_profile('vortex', layout, wave.wavenumber)


@pytest.mark.parametrize('degrees', range(-60, 61, 5))
def test_snell_round_trip(wave, degrees):
    layout = line_layout(24, mm(14.3))
    theta = math.radians(degrees)
    result = snell_check(steering_profile(layout, theta, wave.wavenumber), layout, 0.0, wave.wavenumber)
    assert not result.evanescent
    assert result.angle_deg == pytest.approx(degrees, abs=0.1)
    assert result.fit_residual < 1e-9


def test_snell_reports_evanescent_gradient(wave):
    layout = line_layout(10, mm(14.3))
    result = snell_check(3.0 * np.arange(10), layout, 0.0, wave.wavenumber)
    assert result.evanescent and result.angle is None
    assert abs(result.sin_argument) > 1


def test_snell_rejects_wrapped_profile(wave):
    layout = line_layout(10, mm(14.3))
    phases = np.angle(np.exp(1j * 1.5 * np.arange(10)))
    with pytest.raises(AliasingError):
        snell_check(phases, layout, 0.0, wave.wavenumber)


def test_snell_with_oblique_incidence(wave):
    layout = line_layout(24, mm(14.3))
    result = snell_check(np.zeros(24), layout, math.radians(20.0), wave.wavenumber)
    assert result.angle_deg == pytest.approx(20.0)


def test_alias_free_pitch(wave):
    assert max_alias_free_pitch(math.radians(45.0), wave.wavenumber) == pytest.approx(
        wave.wavelength / (2 * math.sin(math.radians(45.0))))
    assert max_alias_free_pitch(0.0, wave.wavenumber) == math.inf


def test_profile_frame_columns(wave):
    layout = line_layout(6)
    profile = PhaseProfile(layout=layout, phi_r=steering_profile(layout, 0.5, wave.wavenumber),
                           phi_t=np.zeros(6))
    frame = profile_frame(profile)
    assert list(frame.columns) == PROFILE_COLUMNS
    assert len(frame) == 6


def test_phase_profile_shape_check():
    with pytest.raises(DomainError):
        PhaseProfile(layout=line_layout(4), phi_r=np.zeros(3), phi_t=np.zeros(4))
