import numpy as np
import pytest

from elastowave.errors import StateError
from elastowave.evolution import (_frequency_bound, _sweep_spectrum, apply_generator, dense_spectrum,
                                  generator_pairing, generator_pencil, integrate, read_checkpoint,
                                  solve_resolvent, spectral_abscissa, write_checkpoint)
from elastowave.state import State

from conftest import annulus_system, bump_state


@pytest.fixture(scope="module")
def tiny():
    return annulus_system(0.5)[0]


@pytest.fixture(scope="module")
def tiny_conservative():
    return annulus_system(0.5, damped=False)[0]


def test_generator_of_zero(coarse):
    sm, _ = coarse
    assert not apply_generator(np.zeros(sm.n), sm).any()
    assert generator_pairing(np.zeros(sm.n), sm) == (0.0, 0.0)


def test_generator_block_structure(coarse, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    b = sm.blocks
    X[b["v"]] = 0.0
    X[b["w"]] = 0.0
    AX = apply_generator(X, sm)
    assert not AX[b["u"]].any() and not AX[b["z"]].any()


def test_generator_linearity(coarse, rng):
    sm, _ = coarse
    X1, X2 = sm.random_state_vector(rng), sm.random_state_vector(rng)
    lhs = apply_generator(X1 + 2 * X2, sm)
    rhs = apply_generator(X1, sm) + 2 * apply_generator(X2, sm)
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_generator_accepts_states(coarse, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    out = apply_generator(sm.unpack(X), sm)
    assert isinstance(out, State)
    assert np.allclose(sm.pack(out), apply_generator(X, sm))


def test_pairing_equals_dissipation(coarse, rng):
    sm, _ = coarse
    for _ in range(5):
        X = sm.random_state_vector(rng)
        pair, diss = generator_pairing(X, sm)
        assert abs(pair - diss) <= 1e-10 * sm.norm_H2(X)


def test_conservative_pairing_vanishes(coarse_conservative, rng):
    sm, _ = coarse_conservative
    X = sm.random_state_vector(rng)
    pair, diss = generator_pairing(X, sm)
    assert diss == 0.0
    assert abs(pair) <= 1e-12 * sm.norm_H2(X)


def test_resolvent_residual(coarse, rng):
    sm, _ = coarse
    for _ in range(3):
        k = sm.random_state_vector(rng)
        U = solve_resolvent(k, sm)
        r = U + apply_generator(U, sm) - k
        assert np.sqrt(sm.norm_H2(r) / sm.norm_H2(k)) <= 1e-10


def test_zero_data_stays_zero(coarse):
    sm, _ = coarse
    tr = integrate(np.zeros(sm.n), 0.5, 0.01, sm)
    assert not tr.states.any() and not tr.energy.any()


def test_bad_step_arguments(coarse):
    sm, _ = coarse
    with pytest.raises(StateError):
        integrate(np.zeros(sm.n), 1.0, 0.0, sm)
    with pytest.raises(StateError):
        integrate(np.zeros(sm.n), 1.0, 0.01, sm, store_stride=0)
    with pytest.raises(StateError):
        integrate(np.zeros(sm.n - 1), 1.0, 0.01, sm)


def test_conservative_energy_over_1000_steps(coarse_conservative):
    sm, _ = coarse_conservative
    tr = integrate(bump_state(sm), 10.0, 0.01, sm, store_stride=1000)
    assert tr.n_steps == 1000
    assert abs(tr.energy[-1] - tr.energy[0]) <= 1e-8 * tr.energy[0]


def test_damped_energy_nonincreasing_and_contractive(coarse):
    sm, _ = coarse
    tr = integrate(bump_state(sm), 3.0, 0.01, sm)
    E = tr.energy
    assert np.all(np.diff(E) <= 1e-12 * E[0])
    norms = np.sqrt([sm.norm_H2(X) for X in tr.states])
    assert np.all(norms[1:] <= norms[:-1] * (1 + 1e-10))
    step = E[1:] - E[:-1] + tr.diss_a + tr.diss_g
    assert np.abs(step).max() <= 1e-12 * E[0]
    assert tr.diss_a.min() >= 0 and tr.diss_g.min() >= 0


def test_time_reversal_in_conservative_limit(coarse_conservative):
    sm, _ = coarse_conservative
    X0 = bump_state(sm)
    fwd = integrate(X0, 1.0, 0.01, sm, store_stride=100)
    back = integrate(fwd.states[-1], 1.0, -0.01, sm, store_stride=100)
    err = np.sqrt(sm.norm_H2(back.states[-1] - X0) / sm.norm_H2(X0))
    assert err <= 1e-8


def test_strided_storage(coarse):
    sm, _ = coarse
    tr = integrate(bump_state(sm), 1.0, 0.01, sm, store_stride=10)
    assert tr.states.shape[0] == 11 and not tr.full
    assert np.array_equal(tr.state(50), tr.states[5])
    with pytest.raises(StateError):
        tr.state(55)


def test_checkpoint_roundtrip(coarse, tmp_path, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    write_checkpoint(tmp_path / "s.txt", X, sm, t=1.25)
    Y, t = read_checkpoint(tmp_path / "s.txt")
    assert t == 1.25 and np.array_equal(X, Y)


def test_conservative_spectrum_on_imaginary_axis(tiny_conservative):
    lam, rate = spectral_abscissa(tiny_conservative)[0]
    assert abs(lam.real) <= 1e-6


def test_damped_spectrum_in_left_half_plane(tiny):
    modes = spectral_abscissa(tiny)
    assert all(m.real < 0 for m, _ in modes)
    reals = [m.real for m, _ in modes]
    assert reals == sorted(reals, reverse=True)
    assert all(r == pytest.approx(-2 * m.real) for m, r in modes)


def test_sweep_finds_the_dense_abscissa(tiny):
    dense = dense_spectrum(tiny)
    L, W = generator_pencil(tiny)
    swept = _sweep_spectrum(L, W, _frequency_bound(tiny), 20, 4000, 1e-10)
    assert swept.real.max() == pytest.approx(dense.real.max(), abs=1e-8)
    # every swept value is a genuine eigenvalue
    d = np.abs(swept[:, None] - dense[None, :]).min(axis=1)
    assert d.max() <= 1e-6 * (1 + np.abs(swept).max())
