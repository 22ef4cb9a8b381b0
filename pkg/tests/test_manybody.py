import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, strategies as st

from gplab.lattice import make_grid
from gplab.manybody import (
    ManyBodyHamiltonian,
    ManyBodyState,
    MemoryCapError,
    PotentialSpec,
    ScalingParams,
    chi_cutoff,
    chi_regularize,
    energy_moment,
    evolve_manybody,
    marginal,
    random_symmetric_state,
    scaled_potential_field,
    sobolev_product_expectation,
    swap_particles,
    total_potential,
)
from gplab.nls import gaussian_packet

GAUSS = PotentialSpec(1, height=2.0)

# int exp(-u^2/2) du = sqrt(2 pi); int_{-1}^{1} exp(-1/(1-u^2)) du
B0_GAUSS = math.sqrt(2 * math.pi)
B0_BUMP = 0.44399381616807943


def test_b0_closed_forms():
    assert PotentialSpec(1).b0 == pytest.approx(B0_GAUSS, rel=1e-12)
    # the three-body form has determinant 3
    assert PotentialSpec(2, width=0.5, height=3.0).b0 == pytest.approx(3 * (0.5 * B0_GAUSS) ** 2 / math.sqrt(3), rel=1e-10)
    assert PotentialSpec(1, shape="bump").b0 == pytest.approx(B0_BUMP, rel=1e-10)
    assert PotentialSpec(1, d=2).b0 == pytest.approx(2 * math.pi, rel=1e-10)


def test_b0_matches_direct_quadrature():
    spec = PotentialSpec(2, shape="bump", width=1.3)
    direct, _ = scipy.integrate.dblquad(lambda a, b: float(spec(np.array([a, b]))), -1.5, 1.5, -1.5, 1.5)
    assert spec.b0 == pytest.approx(direct, rel=1e-6)


@given(seed=st.integers(0, 10**6))
def test_profile_permutation_symmetric(seed):
    x = np.random.default_rng(seed).normal(size=(3, 2))
    for spec in (PotentialSpec(2, d=2), PotentialSpec(2, d=2, shape="bump", width=3.0)):
        vals = {round(float(spec(np.concatenate([x[a] - x[b], x[a] - x[c]]))), 12) for a, b, c in [(0, 1, 2), (1, 0, 2), (2, 1, 0)]}
        assert len(vals) == 1


def test_scaled_potential_mass_is_preserved():
    g = make_grid(1, 64, 20.0)
    for N in (2, 10, 100):
        f = scaled_potential_field(PotentialSpec(1), ScalingParams(N, 0.1), g, (1, 2), 2)
        assert f[0].sum() * g.dx == pytest.approx(B0_GAUSS, rel=1e-6)


def test_scaled_potential_rejects_bad_tuples():
    g = make_grid(1, 8, 1.0)
    sc = ScalingParams(3, 0.1)
    for tup in [(1,), (2, 1), (1, 4), (0, 1)]:
        with pytest.raises(ValueError):
            scaled_potential_field(GAUSS, sc, g, tup, 3)


def test_beta_range_and_resolution():
    g = make_grid(1, 8, 2 * math.pi)
    ScalingParams(3, 0.1).check(1, 1, g)
    with pytest.raises(ValueError):
        ScalingParams(3, 0.25).check(1, 1, g)
    with pytest.raises(ValueError):
        ScalingParams(3, 0.0).check(1, 1, g)
    with pytest.raises(ValueError):
        ScalingParams(10**6, 0.2).check(1, 1, g)


def test_total_potential_symmetric():
    g = make_grid(1, 8, 2 * math.pi)
    V = total_potential(g, 3, [GAUSS, PotentialSpec(2)], ScalingParams(3, 0.1))
    assert np.allclose(V, V.transpose(1, 0, 2)) and np.allclose(V, V.transpose(0, 2, 1))
    assert V.min() >= 0


def test_apply_matches_dense():
    g = make_grid(1, 8, 2 * math.pi)
    H = ManyBodyHamiltonian(g, 3, [GAUSS, PotentialSpec(2)], ScalingParams(3, 0.1))
    psi = random_symmetric_state(g, 3, np.random.default_rng(0))
    dense = H.dense() @ psi.values.reshape(-1)
    assert np.allclose(H.apply(psi.values).reshape(-1), dense, atol=1e-12)
    assert np.allclose(H.dense(), H.dense().T)


def test_split_step_matches_expm():
    g = make_grid(1, 8, 2 * math.pi)
    sc = ScalingParams(2, 0.1)
    psi0 = ManyBodyState.product(gaussian_packet(g, 1.0, 0.0, 1.0), 2)
    traj = evolve_manybody(psi0, [GAUSS], sc, 0.5, 1e-3, 500)
    H = ManyBodyHamiltonian(g, 2, [GAUSS], sc).dense()
    exact = scipy.linalg.expm(-0.5j * H) @ psi0.values.reshape(-1)
    err = g.norm((traj.states[-1].reshape(-1) - exact).reshape(8, 8))
    assert err <= 1e-6


def test_norm_and_symmetry_preserved():
    g = make_grid(1, 8, 2 * math.pi)
    psi = random_symmetric_state(g, 3, np.random.default_rng(3))
    traj = evolve_manybody(psi, [GAUSS], ScalingParams(3, 0.1), 0.05, 1e-3, 50)
    out = traj.state(len(traj) - 1)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert out.symmetry_defect() < 1e-12


def test_memory_cap():
    g = make_grid(1, 16, 1.0)
    psi = ManyBodyState.product(gaussian_packet(g, 0.1), 3)
    with pytest.raises(MemoryCapError):
        evolve_manybody(psi, [GAUSS], ScalingParams(3, 0.1), 0.01, 0.01, memory_cap=1000)


def test_marginal_of_product_state():
    g = make_grid(1, 8, 2 * math.pi)
    phi = gaussian_packet(g, 1.0, 0.0, 1.0)
    gam = marginal(ManyBodyState.product(phi, 3), 1)
    assert np.allclose(gam.values, np.outer(phi.values, phi.values.conj()))
    assert gam.trace() == pytest.approx(1.0)


@given(seed=st.integers(0, 10**6))
def test_marginal_invariants(seed):
    g = make_grid(1, 8, 2 * math.pi)
    psi = random_symmetric_state(g, 3, np.random.default_rng(seed))
    gam = marginal(psi, 2)
    assert gam.hermitian_defect() < 1e-10
    assert gam.trace().real == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.eigvalsh(gam.matrix()).min() > -1e-12
    assert gam.symmetry_defect() < 1e-10


def test_swap_is_involution(rng):
    v = rng.normal(size=(4, 4, 4))
    assert np.array_equal(swap_particles(swap_particles(v, 1, 0, 2), 1, 0, 2), v)


def test_energy_bound_identity_free():
    g = make_grid(1, 8, 2 * math.pi)
    psi = random_symmetric_state(g, 3, np.random.default_rng(1), bandlimit=3)
    ratio = energy_moment(psi, [], ScalingParams(3, 0.1), 1) / (3 * sobolev_product_expectation(psi, 1))
    assert ratio == pytest.approx(1.0, abs=1e-10)


def test_second_moment_dominates_square():
    g = make_grid(1, 8, 2 * math.pi)
    psi = random_symmetric_state(g, 2, np.random.default_rng(2), bandlimit=3)
    sc = ScalingParams(2, 0.1)
    assert energy_moment(psi, [GAUSS], sc, 2) >= energy_moment(psi, [GAUSS], sc, 1) ** 2


def test_chi_cutoff_shape():
    s = np.linspace(-1, 3, 401)
    c = chi_cutoff(s)
    assert np.all(c[s <= 1] == 1) and np.all(c[s >= 2] == 0)
    assert np.all(np.diff(c) <= 0) and c.min() >= 0


def test_chi_regularize_limits():
    g = make_grid(1, 8, 2 * math.pi)
    sc = ScalingParams(2, 0.1)
    psi = random_symmetric_state(g, 2, np.random.default_rng(4), bandlimit=2)
    dists = [g.norm(chi_regularize(psi, [GAUSS], sc, kap).values - psi.values) for kap in (1.0, 0.5, 0.1)]
    assert dists[0] > dists[1] > dists[2]
    tiny = chi_regularize(psi, [GAUSS], sc, 1e-4)
    assert np.allclose(tiny.values, psi.values, atol=1e-12)
    with pytest.raises(ValueError):
        chi_regularize(psi, [GAUSS], sc, 0.0)
