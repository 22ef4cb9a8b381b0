import numpy as np
import pytest
from hypothesis import given, strategies as st

from gplab.lattice import make_grid
from gplab.nls import (
    NonlinearityCoefficients,
    WaveField,
    energy,
    evolve_to_times,
    gaussian_packet,
    load_trajectory,
    mass,
    nls_evolve,
    plane_wave,
    save_trajectory,
    strang_step,
)

COEFFS = NonlinearityCoefficients.of(1.0, 0.5)


@pytest.fixture(scope="module")
def packet_run():
    g = make_grid(1, 256, 20.0)
    phi0 = gaussian_packet(g, 1.0, 0.0, 1.0)
    return phi0, nls_evolve(phi0, COEFFS, 1.0, 1e-3, sample_every=0.5)


def test_coefficients_validation():
    with pytest.raises(ValueError):
        NonlinearityCoefficients(())
    with pytest.raises(ValueError):
        NonlinearityCoefficients.of(-1.0)
    with pytest.raises(ValueError):
        NonlinearityCoefficients.of(float("nan"))
    assert COEFFS.p0 == 2


def test_mass_and_energy_conserved(packet_run):
    phi0, traj = packet_run
    last = traj.field(len(traj) - 1)
    assert abs(mass(last) - mass(phi0)) <= 1e-10
    assert abs(energy(last, COEFFS) - energy(phi0, COEFFS)) / energy(phi0, COEFFS) <= 1e-6


def test_energy_drift_second_order():
    g = make_grid(1, 128, 20.0)
    phi0 = gaussian_packet(g, 1.0, 0.0, 1.0)
    e0 = energy(phi0, COEFFS)
    drift = [abs(energy(nls_evolve(phi0, COEFFS, 0.5, dt, 0.5).field(1), COEFFS) - e0) for dt in (4e-3, 2e-3)]
    assert drift[0] / drift[1] == pytest.approx(4, rel=0.25)


def test_plane_wave_dispersion():
    g = make_grid(1, 32, 2 * np.pi)
    phi0 = plane_wave(g, 2)
    A = g.L ** -0.5
    traj = nls_evolve(phi0, COEFFS, 1.0, 1e-2, 1.0)
    omega = 4 + COEFFS.b[0] * A**2 + COEFFS.b[1] * A**4
    assert np.max(np.abs(traj.states[-1] - phi0.values * np.exp(-1j * omega))) / A <= 1e-8


def test_time_reversal():
    g = make_grid(1, 64, 10.0)
    phi = gaussian_packet(g, 0.7, 1.0, -2.0).values
    fwd = strang_step(phi, g, COEFFS, 0.01)
    assert np.allclose(strang_step(fwd, g, COEFFS, -0.01), phi, atol=1e-13)


def test_evolve_to_times_independent_of_order():
    g = make_grid(1, 64, 10.0)
    phi0 = gaussian_packet(g, 1.0)
    a = evolve_to_times(phi0, COEFFS, [0.3, 0.1], 0.01)
    b = evolve_to_times(phi0, COEFFS, [0.1, 0.3], 0.01)
    assert np.allclose(a[0], b[1]) and np.allclose(a[1], b[0])


@pytest.mark.parametrize("kw", [dict(T=1.0, dt=0.0), dict(T=-1.0, dt=0.1), dict(T=1.0, dt=0.3)])
def test_evolve_rejects(kw):
    g = make_grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        nls_evolve(gaussian_packet(g, 0.2), COEFFS, **kw)


def test_non_finite_field_rejected():
    g = make_grid(1, 16, 1.0)
    v = np.ones(16, complex)
    v[3] = np.nan
    with pytest.raises(ValueError):
        nls_evolve(WaveField(g, v), COEFFS, 0.1, 0.01)


@given(st.floats(0.3, 2.0), st.floats(-2, 2))
def test_mass_conserved_property(width, k0):
    g = make_grid(1, 64, 16.0)
    phi0 = gaussian_packet(g, width, 0.0, k0)
    out = nls_evolve(phi0, COEFFS, 0.05, 0.01, 0.05).field(1)
    assert mass(out) == pytest.approx(mass(phi0), abs=1e-12)


def test_trajectory_round_trip(tmp_path, packet_run):
    _, traj = packet_run
    manifest = save_trajectory(traj, tmp_path)
    back = load_trajectory(manifest)
    assert back.coeffs == traj.coeffs and back.stride == traj.stride
    assert all(np.array_equal(a, b) for a, b in zip(back.states, traj.states))
