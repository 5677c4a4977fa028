"""Property-based checks of the structural invariants on the coarse annulus."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from elastowave.analysis import energy
from elastowave.evolution import apply_generator, generator_pairing, integrate, solve_resolvent
from elastowave.tangential import BoundaryField, decompose_trace, lambda_star, stress_from_strain

from conftest import annulus_system

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
seeds = st.integers(min_value=0, max_value=2**32 - 1)
positive = st.floats(min_value=1e-2, max_value=1e2, allow_nan=False)


def system():
    return annulus_system(0.25)[0]


@SETTINGS
@given(seeds)
def test_generator_is_monotone(seed):
    sm = system()
    X = sm.random_state_vector(np.random.default_rng(seed))
    pair, diss = generator_pairing(X, sm)
    nrm = sm.norm_H2(X)
    assert pair >= -1e-12 * nrm
    assert abs(pair - diss) <= 1e-10 * nrm


@SETTINGS
@given(seeds, st.floats(min_value=-3, max_value=3))
def test_generator_is_linear(seed, c):
    sm = system()
    rng = np.random.default_rng(seed)
    X, Y = sm.random_state_vector(rng), sm.random_state_vector(rng)
    lhs = apply_generator(X + c * Y, sm)
    rhs = apply_generator(X, sm) + c * apply_generator(Y, sm)
    assert np.abs(lhs - rhs).max() <= 1e-9 * (1 + np.abs(rhs).max())


@SETTINGS
@given(seeds)
def test_resolvent_inverts_identity_plus_generator(seed):
    sm = system()
    k = sm.random_state_vector(np.random.default_rng(seed))
    U = solve_resolvent(k, sm)
    r = U + apply_generator(U, sm) - k
    assert sm.norm_H2(r) <= 1e-20 * sm.norm_H2(k)


@SETTINGS
@given(seeds)
def test_energy_matches_gram(seed):
    sm = system()
    X = sm.random_state_vector(np.random.default_rng(seed))
    Eo, Eg = energy(X, sm)
    assert Eo >= 0 and Eg >= 0
    assert abs(2 * (Eo + Eg) - sm.norm_H2(X)) <= 1e-12 * sm.norm_H2(X)


@settings(max_examples=8, deadline=None)
@given(seeds, st.sampled_from([0.005, 0.01, 0.05]))
def test_midpoint_step_dissipates_exactly(seed, dt):
    sm = system()
    X = sm.random_state_vector(np.random.default_rng(seed))
    tr = integrate(X, 0.0, dt, sm, n_steps=5)
    E = tr.energy
    assert np.all(np.diff(E) <= 1e-10 * E[0])
    assert np.abs(E[1:] - E[:-1] + tr.diss_a + tr.diss_g).max() <= 1e-11 * E[0]


@SETTINGS
@given(seeds)
def test_trace_decomposition_roundtrip(seed):
    lay = system().bops.layout
    A = np.random.default_rng(seed).standard_normal((lay.n, 2))
    assert np.allclose(decompose_trace(A, lay.frame).ambient(lay.frame), A, atol=1e-13)


@SETTINGS
@given(positive, positive)
def test_membrane_stress_law(lam, mu):
    lay = system().bops.layout
    eps = np.random.default_rng(0).standard_normal(len(lay.facets))
    sig = stress_from_strain(eps, lay, lam, mu)
    assert np.allclose(sig - 2 * mu * eps - lambda_star(lam, mu) * eps, 0.0, atol=1e-12 * (lam + mu))
    assert 0 < lambda_star(lam, mu) < 2 * mu


@SETTINGS
@given(seeds)
def test_coupling_pairing_is_a_transpose(seed):
    sm = system()
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(sm.n_u), rng.standard_normal(sm.n_z)
    assert np.isclose((sm.B @ x) @ y, x @ (sm.B.T @ y), rtol=1e-12, atol=1e-12)


@SETTINGS
@given(seeds)
def test_boundary_field_vector_roundtrip(seed):
    lay = system().bops.layout
    v = np.random.default_rng(seed).standard_normal(lay.ndof)
    assert np.array_equal(BoundaryField.from_vector(v, lay.n, 2).to_vector(), v)
