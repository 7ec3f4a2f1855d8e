import warnings

import numpy as np
import pytest

from rotorlattice import build_lattice
from rotorlattice.lattice import WeightedNormParams, weight_sum, weighted_inner, weighted_norm
from rotorlattice.model import (
    AssumptionWarning,
    Dissipation,
    Frequency,
    ModelSpec,
    diagonal,
    dissipation,
    dissipation_local,
    drift_full,
    example2,
    grad_full,
    hamiltonian,
    linear_coupled,
    local_energy,
    power_frequency,
    sqrt_potential,
)

from conftest import make_spec, random_state


def test_zero_state_energy():
    spec = make_spec(5)
    assert hamiltonian(np.zeros(5, complex), spec) == 0.0
    assert np.all(local_energy(np.zeros(5, complex), spec) == 0.0)
    assert np.all(grad_full(np.zeros(5, complex), spec) == 0.0)


def test_two_chain_alternated_signs_cancel():
    # F(1) = 1.5 on both nodes but the signs are +1 and -1
    spec = make_spec(2, eps=0.04)
    assert hamiltonian(np.array([1.0, 1.0]), spec) == pytest.approx(0.0, abs=1e-15)


def test_two_chain_equal_signs():
    lat = build_lattice(1, [2], defects=[0, 1])
    spec = make_spec(lattice=lat, eps=0.04)
    assert hamiltonian(np.array([1.0, 1.0]), spec) == pytest.approx(1.5)
    # interaction term: u = (1, 0) gives 0.2/4 * (1 + 1) on top of F terms
    expected = 0.5 * 1.5 + 0.05 * 2
    assert hamiltonian(np.array([1.0, 0.0]), spec) == pytest.approx(expected)


def test_single_node_gradient():
    spec = make_spec(1)
    assert grad_full(np.array([1.0 + 0j]), spec)[0] == pytest.approx(2j)


@pytest.mark.parametrize("potential", [None, sqrt_potential(1.0)])
def test_gradient_matches_finite_differences(rng, potential):
    spec = make_spec(6, eps=0.04, potential=potential)
    lat2 = build_lattice(2, [2, 3])
    spec2 = make_spec(lattice=lat2, eps=0.3, potential=potential)
    h = 1e-5
    for sp in (spec, spec2):
        N = sp.lattice.N
        for _ in range(5):
            u = rng.uniform(-1.4, 1.4, N) + 1j * rng.uniform(-1.4, 1.4, N)
            fd = np.empty(N, complex)
            for j in range(N):
                e = np.zeros(N, complex)
                e[j] = h
                dx = (hamiltonian(u + e, sp) - hamiltonian(u - e, sp)) / (2 * h)
                dy = (hamiltonian(u + 1j * e, sp) - hamiltonian(u - 1j * e, sp)) / (2 * h)
                fd[j] = 1j * (dx + 1j * dy)
            g = grad_full(u, sp)
            assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-6


def test_hamiltonian_part_moves_no_total_action(rng):
    spec = make_spec(8, eps=0.5)
    u = random_state(rng, 8, size=20)
    g = grad_full(u, spec)
    rot = 1j * spec.signs * spec.frequency.f(np.abs(u) ** 2) * u
    assert np.max(np.abs(np.real(rot * np.conj(u)))) < 1e-13
    assert np.max(np.abs(np.real(g * np.conj(u)).sum(axis=-1))) < 1e-12


def test_batched_evaluation(rng):
    spec = make_spec(5)
    u = random_state(rng, 5, size=4)
    for fn in (hamiltonian, local_energy, grad_full, drift_full):
        batched = fn(u, spec)
        single = np.array([fn(x, spec) for x in u])
        assert np.allclose(batched, single, rtol=1e-13, atol=1e-14)


def test_dissipation_examples():
    spec2 = make_spec(1, diagonal(2))
    assert dissipation(np.array([2.0 + 0j]), spec2)[0] == -2
    spec4 = make_spec(1, diagonal(4), k=2)
    assert dissipation(np.array([1 + 1j]), spec4)[0] == pytest.approx(-2 - 2j)
    spec_e = make_spec(3, example2(), k=2)
    g = dissipation(np.ones(3, complex), spec_e)
    assert g.tolist() == pytest.approx([0.0, -0.25, -0.5])


def test_dissipation_local_matches_vector(rng):
    lat = build_lattice(2, [3, 3])
    cases = [make_spec(6, example2(), k=2), make_spec(lattice=lat, dissipation=linear_coupled(0.1 + 0.05j)),
             make_spec(lattice=lat, dissipation=diagonal(4), k=2)]
    for spec in cases:
        u = random_state(rng, spec.lattice.N, size=3)
        full = dissipation(u, spec)
        for j in range(spec.lattice.N):
            assert np.allclose(dissipation_local(u, spec, j), full[..., j], atol=1e-15)


def test_linear_coupling_matrix():
    spec = make_spec(3, linear_coupled(0.1))
    u = np.array([1.0, 2.0, 3.0], complex)
    # g_j = -u_j + 0.1 * sum of neighbours
    assert dissipation(u, spec).real.tolist() == pytest.approx([-1 + 0.2, -2 + 0.4, -3 + 0.2])
    bad = np.zeros((3, 3))
    bad[0, 2] = 0.1
    with pytest.raises(ValueError):
        make_spec(3, linear_coupled(bad))


def test_example2_needs_chain():
    with pytest.raises(ValueError):
        make_spec(lattice=build_lattice(2, [2, 2]), dissipation=example2(), k=2)


def test_local_energy_sums_to_hamiltonian(rng):
    lat = build_lattice(2, [3, 2])
    spec = make_spec(lattice=lat, eps=0.3, potential=sqrt_potential(2.0))
    u = random_state(rng, lat.N, size=10)
    assert np.allclose(local_energy(u, spec).sum(axis=-1), hamiltonian(u, spec), rtol=1e-14)


def test_local_energy_eps_zero(rng):
    spec = make_spec(5, eps=0.0)
    u = random_state(rng, 5)
    I = 0.5 * np.abs(u) ** 2
    F = 2 * I + 0.5 * (2 * I) ** 2
    assert np.allclose(local_energy(u, spec), 0.5 * spec.signs * F, rtol=1e-14)


def test_frequency_alternation(rng):
    spec = make_spec(6)
    x, y = rng.uniform(0, 10, 100), rng.uniform(0, 10, 100)
    f = spec.frequency.f
    for a, b in spec.lattice.bonds:
        diff = spec.signs[a] * f(x) - spec.signs[b] * f(y)
        assert np.allclose(diff, spec.signs[a] * (f(x) + f(y)))
        assert np.all(np.abs(diff) >= 2 * 1.0 - 1e-12)


def _dissipativity_gap(spec, u, gamma, j, Cg):
    g = dissipation(u, spec)
    lhs = weighted_inner(g, u, gamma, j, spec.lattice)
    p = spec.dissipation.p
    rhs = -Cg * weighted_norm(u, WeightedNormParams(gamma, p, j), spec.lattice) ** p
    return rhs + weight_sum(spec.lattice, gamma, j) - lhs


@pytest.mark.parametrize("case,Cg", [("diag2", 1.0), ("diag4", 1.0), ("linear", 0.5), ("ex2", 0.1)])
def test_dissipativity_spot_check(rng, case, Cg):
    specs = {
        "diag2": make_spec(8, diagonal(2)),
        "diag4": make_spec(8, diagonal(4), k=2),
        "linear": make_spec(8, linear_coupled(0.1)),
        "ex2": make_spec(8, example2(), k=2),
    }
    spec = specs[case]
    for _ in range(50):
        u = random_state(rng, 8, 0.0, 8.0)
        for j in range(8):
            assert _dissipativity_gap(spec, u, 0.9, j, Cg) >= -1e-9


def test_frequency_assumption_enforced():
    lat = build_lattice(1, [3])
    with pytest.raises(ValueError):
        ModelSpec(lat, power_frequency(1), dissipation=diagonal(4))
    ModelSpec(lat, power_frequency(1), dissipation=diagonal(4), check_assumptions=False)


def test_custom_frequency_quadrature():
    freq = Frequency(lambda x: 1.0 + x)
    x = np.array([0.0, 0.5, 2.0, 3.7])
    assert np.allclose(freq.antiderivative(x), x + x**2 / 2, rtol=1e-12)


@pytest.mark.parametrize("kw", [dict(T=-1.0), dict(eps=1.5), dict(a=0.4), dict(T=np.nan)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        make_spec(3, **kw)


def test_no_dissipation_warns():
    with pytest.warns(AssumptionWarning):
        ModelSpec(build_lattice(1, [3]), dissipation=Dissipation("none"))


def test_non_finite_state():
    spec = make_spec(3)
    with pytest.raises(FloatingPointError):
        hamiltonian(np.array([1.0, np.nan, 0.0]), spec)
