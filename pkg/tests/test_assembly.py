import json

import numpy as np
import pytest
import scipy.linalg as sla

from elastowave.assembly import (MaterialParams, assemble_bulk, assemble_resolvent_system, coercivity_ratios,
                                 read_coo, write_coo)
from elastowave.errors import AssumptionError, StateError
from elastowave.evolution import solve_resolvent
from elastowave.geometry import GAMMA1, build_mesh
from elastowave.tangential import decompose_trace


def test_lame_constants_must_be_positive():
    with pytest.raises(AssumptionError):
        MaterialParams(0.0, 1.0)
    with pytest.raises(AssumptionError):
        MaterialParams(1.0, -1.0)


def test_rigid_motions_have_no_energy(coarse):
    sm, _ = coarse
    X = sm.mesh.vertices
    for u in (np.tile([1.0, 0.0], len(X)), np.tile([0.0, 1.0], len(X)),
              np.column_stack([-X[:, 1], X[:, 0]]).ravel()):
        assert np.abs(sm.K_full @ u).max() < 1e-12


@pytest.mark.parametrize("lam,alpha", [(1.0, 1.0), (2.5, 0.4)])
def test_identity_field_energy(lam, alpha):
    mesh = build_mesh("annulus", 1.0, 2.0, 0.25)
    K, M, _ = assemble_bulk(mesh, MaterialParams(lam, alpha))
    u = mesh.vertices.ravel()
    area = mesh.volumes.sum()
    # sigma(x):eps(x) = 4 alpha + 4 lambda is constant; the polygonal area is exact for P1
    assert u @ K @ u == pytest.approx((4 * alpha + 4 * lam) * area, rel=1e-10)
    assert area == pytest.approx(3 * np.pi, rel=2e-3)
    ones = np.tile([1.0, 0.0], mesh.n_vertices)
    assert ones @ M @ ones == pytest.approx(area, rel=1e-12)


def test_bulk_forms_symmetric_and_constrained_stiffness_definite(coarse):
    sm, _ = coarse
    for A in (sm.K_full, sm.M_full, sm.D_full):
        assert abs(A - A.T).max() == 0.0
    assert sla.eigvalsh(sm.K.toarray()).min() > 0


def test_damping_rows_vanish_off_the_collar(coarse):
    sm, region = coarse
    in_supp = np.zeros(sm.mesh.n_vertices, dtype=bool)
    in_supp[np.unique(sm.mesh.cells[region.a_field > 0])] = True
    rows = np.abs(sm.D_full).sum(axis=1).A.ravel().reshape(-1, 2)
    assert np.all(rows[~in_supp] == 0.0)
    assert np.all(rows[in_supp] > 0.0)


def test_coupling_total_is_gamma1_length(coarse):
    sm, _ = coarse
    lay = sm.bops.layout
    u = np.tile([1.0, 0.0], sm.mesh.n_vertices)
    z = decompose_trace(np.tile([1.0, 0.0], (lay.n, 1)), lay.frame).to_vector()
    assert z @ sm.B_full @ u == pytest.approx(lay.measures.sum(), rel=1e-13)


def test_coupling_ignores_fields_off_gamma1(coarse, rng):
    sm, _ = coarse
    u = rng.standard_normal((sm.mesh.n_vertices, 2))
    u[sm.mesh.boundary_nodes(GAMMA1)] = 0.0
    assert np.abs(sm.B_full @ u.ravel()).max() == 0.0


def test_coupling_transpose_pairing(coarse, rng):
    sm, _ = coarse
    x = rng.standard_normal(sm.B.shape[1])
    y = rng.standard_normal(sm.B.shape[0])
    assert (sm.B @ x) @ y == pytest.approx(x @ (sm.B.T @ y), rel=1e-13)


def test_gram_matches_block_forms(coarse, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    b = sm.blocks
    parts = sum(X[b[k]] @ (A @ X[b[k]]) for k, A in zip("uvzw", (sm.K, sm.M, sm.K_b, sm.M_f)))
    assert sm.norm_H2(X) == pytest.approx(parts, rel=1e-13)


def test_pack_rejects_wrong_shapes(coarse):
    sm, _ = coarse
    with pytest.raises(StateError):
        sm.unpack(np.zeros(sm.n + 1))


def test_pack_unpack_roundtrip(coarse, rng):
    sm, _ = coarse
    X = sm.random_state_vector(rng)
    assert np.array_equal(sm.pack(sm.unpack(X)), X)


def test_zero_load_gives_zero_resolvent(coarse):
    sm, _ = coarse
    rs = assemble_resolvent_system(np.zeros(sm.n), sm)
    assert not rs.Psi.any()
    assert not solve_resolvent(np.zeros(sm.n), sm).any()


def test_resolvent_reconstruction_is_exact(coarse, rng):
    sm, _ = coarse
    k = sm.random_state_vector(rng)
    U = solve_resolvent(k, sm)
    b = sm.blocks
    assert np.array_equal(U[b["u"]], U[b["v"]] + k[b["u"]])
    assert np.array_equal(U[b["z"]], U[b["w"]] + k[b["z"]])


def test_symmetric_part_positive_definite(coarse):
    sm, _ = coarse
    rs = assemble_resolvent_system(np.zeros(sm.n), sm)
    sla.cholesky(rs.Phi_sym.toarray())
    Phi = rs.Phi.toarray()
    assert np.allclose(0.5 * (Phi + Phi.T), rs.Phi_sym.toarray(), atol=1e-14)


def test_coercivity_against_h_floor(coarse):
    sm, _ = coarse
    assert coercivity_ratios(sm, 100).min() >= min(1.0, 1.0 / 1.0) - 1e-8


def test_coo_roundtrip(coarse, tmp_path):
    sm, _ = coarse
    write_coo(sm.K, tmp_path / "K.coo")
    assert abs(read_coo(tmp_path / "K.coo") - sm.K).max() == 0.0


def test_constraint_map_json(coarse):
    sm, _ = coarse
    cm = json.loads(sm.constraint_map_json())
    assert len(cm["free_dofs"]) == sm.n_u
    fixed = set(cm["gamma0_nodes"])
    assert all(d // 2 not in fixed for d in cm["free_dofs"])
    assert len(cm["free_dofs"]) + 2 * len(fixed) == 2 * cm["n_vertices"]
