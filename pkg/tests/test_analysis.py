import json

import numpy as np
import pytest

from elastowave.analysis import (ENERGY_COLUMNS, EnergyTrace, IdentityReport, boundary_energy_report,
                                 check_identity, convergence_order, decay_identity_residual, energy, fit_decay,
                                 max_pairwise_identity_residual, multiplier_residuals, poincare_constant,
                                 poincare_constant_dense, psi_identity, trace_mass)
from elastowave.errors import AuditError, StateError
from elastowave.evolution import integrate

from conftest import bump_state


@pytest.fixture(scope="module")
def damped_run(coarse):
    sm, _ = coarse
    return integrate(bump_state(sm), 10.0, 0.01, sm)


def test_energy_of_zero_and_of_bulk_bump(coarse):
    sm, _ = coarse
    assert energy(np.zeros(sm.n), sm) == (0.0, 0.0)
    X = bump_state(sm)
    Eo, Eg = energy(X, sm)
    v = X[sm.blocks["v"]]
    assert Eo == pytest.approx(0.5 * v @ sm.M @ v, rel=1e-14) and Eg == 0.0


def test_energy_is_half_the_norm(coarse, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    assert 2 * sum(energy(X, sm)) == pytest.approx(sm.norm_H2(X), rel=1e-12)
    assert sum(energy(sm.unpack(X), sm)) == pytest.approx(sum(energy(X, sm)), rel=1e-14)


def test_identity_residual_on_zero_run(coarse):
    sm, _ = coarse
    tr = integrate(np.zeros(sm.n), 0.2, 0.01, sm)
    assert decay_identity_residual(tr, 0.0, 0.2) == 0.0


def test_identity_residual_damped_all_pairs(damped_run):
    E0 = damped_run.energy[0]
    assert max_pairwise_identity_residual(damped_run) <= 1e-8 * E0
    assert abs(decay_identity_residual(damped_run, 1.0, 7.5)) <= 1e-8 * E0


def test_identity_residual_conservative(coarse_conservative):
    sm, _ = coarse_conservative
    tr = integrate(bump_state(sm), 2.0, 0.01, sm)
    assert abs(decay_identity_residual(tr, 0.0, 2.0)) <= 1e-8 * tr.energy[0]


def test_off_grid_times_refused(damped_run):
    with pytest.raises(StateError):
        decay_identity_residual(damped_run, 0.0, 0.005)
    with pytest.raises(StateError):
        decay_identity_residual(damped_run, 2.0, 1.0)


def test_trace_invariants_and_csv(damped_run, tmp_path):
    tr = EnergyTrace.from_trajectory(damped_run)
    assert tr.E_total.min() >= 0
    assert np.all(np.diff(tr.diss_a_cum) >= 0) and np.all(np.diff(tr.diss_g_cum) >= 0)
    text = tr.to_csv(tmp_path / "e.csv")
    assert text.splitlines()[0] == ",".join(ENERGY_COLUMNS)
    back = EnergyTrace.read_csv(tmp_path / "e.csv")
    assert np.array_equal(back.E_omega, tr.E_omega) and np.array_equal(back.t, tr.t)


def test_fit_of_exact_exponential():
    t = np.linspace(0, 10, 501)
    fit = fit_decay(EnergyTrace.from_energy(t, 3.0 * np.exp(-t / 2)), normalize=False)
    assert fit.accepted
    assert fit.K1 == pytest.approx(3.0, abs=1e-10)
    assert fit.K2 == pytest.approx(2.0, abs=1e-10)
    assert json.loads(fit.to_json())["K2"] == pytest.approx(2.0)


def test_fit_rejects_conservative_trace(coarse_conservative):
    sm, _ = coarse_conservative
    tr = integrate(bump_state(sm), 2.0, 0.01, sm, store_stride=200)
    fit = fit_decay(EnergyTrace.from_trajectory(tr))
    assert not fit.accepted and "non-decaying" in fit.diagnostic


def test_fit_rejects_nonpositive_energy():
    t = np.linspace(0, 1, 50)
    fit = fit_decay((t, np.zeros_like(t)))
    assert not fit.accepted


def test_fit_envelope_holds_on_window(damped_run):
    tr = EnergyTrace.from_trajectory(damped_run)
    fit = fit_decay(tr)
    assert fit.accepted and fit.K1 >= 1 and fit.K2 > 0
    on = (tr.t >= fit.window[0]) & (tr.t <= fit.window[1])
    env = fit.K1 * np.exp(-tr.t[on] / fit.K2) * tr.E_total[0]
    assert np.all(tr.E_total[on] <= env * (1 + 1e-12))


def test_poincare_constant_against_dense_oracle(coarse):
    sm, _ = coarse
    p = poincare_constant(sm)
    assert p.C_p == pytest.approx(poincare_constant_dense(sm), abs=1e-8)
    # frozen dense-oracle value for the coarse reference annulus
    assert p.C_p == pytest.approx(0.6169822386042589, abs=1e-8)
    T = trace_mass(sm)
    x = p.vector
    assert (x @ T @ x) / (x @ sm.K @ x) == pytest.approx(p.C_p**2, abs=1e-8)


def test_poincare_inequality_random_fields(coarse, rng):
    sm, _ = coarse
    C2 = poincare_constant(sm).theta
    T = trace_mass(sm)
    for _ in range(100):
        u = rng.standard_normal(sm.n_u)
        assert (u @ T @ u) / (u @ sm.K @ u) <= C2 + 1e-8


def test_zero_trajectory_audits_vanish(coarse):
    sm, region = coarse
    tr = integrate(np.zeros(sm.n), 0.1, 0.01, sm)
    rep = multiplier_residuals(tr, sm, region, n_samples=5)
    for name in ("flux", "psi_one", "psi_xi", "k_flux", "membrane", "global"):
        assert all(v == 0.0 for v in rep[name].terms.values()), name
        assert rep[name].residual == 0.0


def test_audits_need_full_storage(coarse):
    sm, region = coarse
    tr = integrate(bump_state(sm), 0.2, 0.01, sm, store_stride=5)
    with pytest.raises(StateError):
        multiplier_residuals(tr, sm, region)


def test_constant_psi_identity_is_exact(coarse):
    sm, _ = coarse
    tr = integrate(bump_state(sm), 1.0, 0.01, sm)
    rep = psi_identity(tr, sm, 1.0)
    assert rep.relative <= 1e-12


def test_report_closure_and_bound_ratios(coarse):
    sm, region = coarse
    tr = integrate(bump_state(sm), 1.0, 0.01, sm)
    rep = multiplier_residuals(tr, sm, region, n_samples=20)
    for name in ("flux", "psi_xi", "k_flux", "membrane", "global"):
        r = rep[name]
        assert r.residual == float(sum(r.terms.values()))
        d = r.to_dict()
        assert set(d["terms"]) == set(r.terms)
    ratio = rep["multiplier_energy_ratio"]
    assert np.all(np.isfinite(ratio["ratios"]))
    assert ratio["xi_empirical"] >= max(ratio["ratios"])
    assert rep["tangential_norm_ratio"]["lower"] >= 1.0
    triple = rep["boundary_energy_triple"]
    assert triple["lhs"] <= triple["C_hat"] * triple["E0"] / triple["tau"] + triple["tau"] * triple["int_E"] + 1e-14


def test_boundary_report_of_static_sine(coarse):
    sm, _ = coarse
    lay = sm.bops.layout
    X = np.zeros(sm.n)
    th = np.arctan2(lay.coords[:, 1], lay.coords[:, 0])
    X[sm.blocks["z"]][lay.n:] = np.sin(th)
    tr = integrate(X, 0.0, 0.01, sm, n_steps=0)
    rep = boundary_energy_report(tr, sm)
    assert rep["|grad_T z_nu|^2"][0] == pytest.approx(np.pi, rel=0.02)
    zero = integrate(np.zeros(sm.n), 0.0, 0.01, sm, n_steps=0)
    assert all(not np.any(v) for k, v in boundary_energy_report(zero, sm).items() if k != "t")


def test_boundary_report_sums_to_twice_boundary_energy(damped_run, coarse):
    sm, _ = coarse
    rep = boundary_energy_report(damped_run, sm)
    total = sum(v for k, v in rep.items() if k != "t")
    assert np.abs(total - 2 * damped_run.E_gamma).max() <= 1e-12 * damped_run.energy[0]
    assert min(v.min() for k, v in rep.items() if k != "t") >= 0


def test_check_identity_raises():
    rep = IdentityReport("demo", {"a": 1.0, "b": -0.5}, h=0.1, scale=1.0)
    assert rep.residual == 0.5
    check_identity(rep, 0.6)
    with pytest.raises(AuditError):
        check_identity(rep, 0.1)


def test_convergence_order_of_halving():
    assert convergence_order(4e-3, 1e-3) == pytest.approx(2.0)
