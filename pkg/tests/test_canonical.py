import numpy as np
import pytest
from scipy import integrate

from rotorlattice import build_lattice
from rotorlattice.canonical import (
    FlowDiverged,
    FlowParams,
    ResonantBondError,
    action_shift,
    active_pairs,
    forward_map,
    grad_phi,
    grad_phi_fd,
    grad_phi_linear,
    homological_residual,
    inverse_map,
    map_jacobian,
    phi_linear_closed,
    phi_pairs,
    phi_value,
)
from rotorlattice.lattice import Lattice
from rotorlattice.model import sqrt_potential

from conftest import make_spec, random_state


def _quad_phi_pair(Jj, Jn, theta, dfreq, G):
    """Phi_jn by adaptive quadrature: 1/4 int_0^theta (G - <G>) / (f_j - f_n)."""
    def g(t):
        return G(2 * Jj + 2 * Jn - 4 * np.sqrt(Jj * Jn) * np.cos(t))

    mean = integrate.quad(g, 0, 2 * np.pi, epsabs=1e-14, epsrel=1e-13, limit=200)[0] / (2 * np.pi)
    val = integrate.quad(lambda t: g(t) - mean, 0, theta, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return 0.25 * val / dfreq, mean


def test_phi_linear_closed_form(rng):
    spec = make_spec(8)
    u = random_state(rng, 8, size=100)
    assert np.max(np.abs(phi_value(u, spec) - phi_linear_closed(u, spec))) < 1e-10


def test_phi_matches_adaptive_quadrature(rng):
    spec = make_spec(4, potential=sqrt_potential(1.0))
    u = random_state(rng, 4)
    I, psi = 0.5 * np.abs(u) ** 2, np.angle(u)
    pairs = active_pairs(spec)
    got = phi_pairs(u, spec)
    f = spec.frequency.f
    for k, (j, n) in enumerate(pairs):
        df = spec.signs[j] * f(2 * I[j]) - spec.signs[n] * f(2 * I[n])
        want, _ = _quad_phi_pair(I[j], I[n], psi[j] - psi[n], df, spec.potential.G)
        assert got[k] == pytest.approx(want, abs=1e-11)


def test_phi_trivial_states(rng):
    spec = make_spec(6, potential=sqrt_potential(0.5))
    same_angle = np.sqrt(2 * rng.uniform(0.2, 2, 6)) * np.exp(0.7j)
    assert abs(phi_value(same_angle, spec)) < 1e-13
    assert phi_value(np.zeros(6, complex), spec) == 0.0


def test_phi_pair_symmetry(rng):
    spec = make_spec(7, potential=sqrt_potential(1.0))
    vals = phi_pairs(random_state(rng, 7, size=5), spec)
    E = vals.shape[-1] // 2
    assert np.allclose(vals[..., :E], vals[..., E:], atol=1e-14)


@pytest.mark.parametrize("potential,tol", [(None, 1e-8), (sqrt_potential(1.0), 1e-6)])
def test_homological_residual(rng, potential, tol):
    spec = make_spec(8, potential=potential)
    u = random_state(rng, 8, size=100)
    assert np.max(homological_residual(u, spec)) < tol
    assert homological_residual(np.zeros(8, complex), spec) == 0.0


@pytest.mark.parametrize("potential", [None, sqrt_potential(2.0)])
def test_homological_identity_independent_oracle(rng, potential):
    """{F~, Phi} = -sum_j f_j d Phi / d psi_j by finite differences in the angles."""
    spec = make_spec(5, potential=potential)
    u = random_state(rng, 5)
    I, psi = 0.5 * np.abs(u) ** 2, np.angle(u)
    fj = spec.signs * spec.frequency.f(2 * I)
    h = 1e-5
    bracket = 0.0
    for j in range(5):
        e = np.zeros(5)
        e[j] = h
        up = phi_value(np.sqrt(2 * I) * np.exp(1j * (psi + e)), spec)
        dn = phi_value(np.sqrt(2 * I) * np.exp(1j * (psi - e)), spec)
        bracket -= fj[j] * (up - dn) / (2 * h)
    G = spec.potential.G
    G_tilde, G_mean = 0.0, 0.0
    for j, n in active_pairs(spec):
        G_tilde += 0.25 * G(abs(u[j] - u[n]) ** 2)
        G_mean += 0.25 * _quad_phi_pair(I[j], I[n], 0.0, 1.0, G)[1]
    assert abs(G_tilde + bracket - G_mean) < 1e-7


def test_grad_phi_analytic_vs_fd(rng):
    spec = make_spec(6)
    u = random_state(rng, 6, size=4)
    a = grad_phi_linear(u, spec)
    fd = grad_phi_fd(u, spec)
    assert np.max(np.abs(a - fd)) < 1e-7 * np.max(np.abs(a))
    assert grad_phi(u, spec).shape == u.shape


def test_round_trip_and_generator_conservation(rng):
    for potential, params in [(None, FlowParams(substeps=16)),
                              (sqrt_potential(1.0), FlowParams(substeps=8, points=64))]:
        spec = make_spec(5, potential=potential)
        u = random_state(rng, 5, size=3)
        v = forward_map(u, 0.01, spec, params)
        back = inverse_map(v, 0.01, spec, params)
        assert np.max(np.abs(back - u)) < 1e-8
        assert np.max(np.abs(phi_value(v, spec) - phi_value(u, spec))) < 1e-8
        assert np.max(np.abs(v - u)) > 1e-4


def test_near_identity_scaling(rng):
    spec = make_spec(8)
    u = random_state(rng, 8, size=20)
    ratios = [np.max(np.abs(forward_map(u, e, spec) - u)) / np.sqrt(e) for e in (1e-2, 1e-3, 1e-4)]
    assert (max(ratios) - min(ratios)) / min(ratios) < 0.2
    shifts = [np.max(action_shift(u, e, spec)) / np.sqrt(e) for e in (1e-2, 1e-3, 1e-4)]
    assert (max(shifts) - min(shifts)) / min(shifts) < 0.2


def test_zero_eps_is_identity(rng):
    spec = make_spec(4)
    u = random_state(rng, 4)
    assert np.all(action_shift(u, 0.0, spec) == 0)
    assert np.array_equal(forward_map(u, 0.0, spec), u)
    with pytest.raises(ValueError):
        forward_map(u, 1.5, spec)


def test_defect_locality(rng):
    clean = make_spec(12)
    defect = make_spec(lattice=build_lattice(1, [12], defects=[11]))
    u = random_state(rng, 12)
    a = action_shift(u, 1e-4, clean)
    b = action_shift(u, 1e-4, defect)
    assert np.max(np.abs(a[:3] - b[:3])) < 1e-12
    assert np.max(np.abs(a[9:] - b[9:])) > 1e-6


def test_defect_bonds_omitted(rng):
    spec = make_spec(lattice=build_lattice(1, [8], defects=[4]))
    assert sorted(map(tuple, active_pairs(spec)[:3].tolist())) == [(0, 1), (1, 2), (6, 7)]
    u = random_state(rng, 8)
    # no generator bond touches the defect closure {3, 4, 5}
    w = u.copy()
    w[3] *= 1.7
    w[4] *= np.exp(0.4j)
    w[5] *= 0.3
    assert phi_value(w, spec) == pytest.approx(phi_value(u, spec), abs=1e-14)


def test_resonant_bond_refused():
    lat = build_lattice(1, [3])
    forced = Lattice(lat.dim, lat.extents, lat.nodes, lat.neighbors, frozenset(), {1: 1})
    spec = make_spec(lattice=forced)
    with pytest.raises(ResonantBondError):
        phi_value(np.ones(3, complex), spec)


def test_symplectic_jacobian(rng):
    for N in (2, 3):
        spec = make_spec(N)
        u = random_state(rng, N)
        J = map_jacobian(u, 0.05, spec)
        assert abs(np.linalg.det(J) - 1) < 1e-4
        Omega = np.kron(np.eye(N), np.array([[0.0, 1.0], [-1.0, 0.0]]))
        assert np.max(np.abs(J.T @ Omega @ J - Omega)) < 1e-6


def test_flow_params_and_divergence(rng):
    with pytest.raises(ValueError):
        FlowParams(substeps=4)
    with pytest.raises(ValueError):
        FlowParams(points=7)
    spec = make_spec(3)
    with pytest.raises(FlowDiverged):
        forward_map(np.array([2e6, 1.0, 1.0j]), 0.5, spec)
    u = random_state(rng, 3)
    adaptive = forward_map(u, 0.01, spec, FlowParams(substeps=8, tolerance=1e-13))
    assert np.max(np.abs(adaptive - forward_map(u, 0.01, spec, FlowParams(substeps=64)))) < 1e-12
