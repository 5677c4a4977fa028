import numpy as np
import pytest

from elastowave.errors import GeometricConditionError, MeshError, ParameterError, RegionOverlapError
from elastowave.geometry import (GAMMA0, GAMMA1, build_mesh, build_region_fields, classify_boundary,
                                 compute_boundary_frames, gamma1_loops, read_mesh, write_mesh)


def classified(h=0.25, **kw):
    return classify_boundary(build_mesh("annulus", 1.0, 2.0, h, **kw), np.zeros(2), 1.0)


def test_boundary_length_of_coarse_annulus():
    m = build_mesh("annulus", 1.0, 2.0, 0.5)
    assert m.facet_measures.sum() == pytest.approx(2 * np.pi * 3, rel=0.05)


def test_area_close_to_annulus():
    m = build_mesh("annulus", 1.0, 2.0, 0.25)
    assert m.volumes.sum() == pytest.approx(3 * np.pi, rel=0.02)
    assert np.all(m.volumes > 0)
    assert m.h <= 0.25 + 1e-12


def test_swapped_radii_rejected():
    with pytest.raises(ParameterError):
        build_mesh("annulus", 2.0, 1.0, 0.1)


def test_each_boundary_facet_has_one_owner():
    m = build_mesh("annulus", 1.0, 2.0, 0.25)
    owners = m.facet_cells
    assert len(owners) == len(m.boundary_facets)
    for f, c in zip(m.boundary_facets, owners):
        assert set(f) <= set(m.cells[c])


def test_centered_observer_splits_inner_and_outer():
    m = classified()
    r = np.linalg.norm(m.facet_centroids, axis=1)
    assert np.all(m.boundary_labels[r > 1.5] == GAMMA0)
    assert np.all(m.boundary_labels[r < 1.5] == GAMMA1)
    assert not set(m.boundary_nodes(GAMMA0)) & set(m.boundary_nodes(GAMMA1))
    d = np.einsum("fi,fi->f", m.facet_centroids, m.facet_normals)
    assert d[m.facets(GAMMA0)].min() >= 1.0
    assert d[m.facets(GAMMA1)].max() <= 0.0


def test_margin_larger_than_outer_radius_fails():
    with pytest.raises(GeometricConditionError):
        classify_boundary(build_mesh("annulus", 1.0, 2.0, 0.25), np.zeros(2), 3.0)


def test_disk_has_no_acoustic_part():
    with pytest.raises(GeometricConditionError):
        classify_boundary(build_mesh("disk", 0.0, 1.0, 0.25), np.zeros(2), 0.5)


def test_mesh_text_roundtrip(tmp_path):
    m = classified()
    write_mesh(m, tmp_path / "m.txt")
    m2 = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.cells, m2.cells)
    assert np.array_equal(m.boundary_facets, m2.boundary_facets)
    assert np.array_equal(m.boundary_labels, m2.boundary_labels)
    write_mesh(m2, tmp_path / "m2.txt")
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "m2.txt").read_bytes()


def test_truncated_mesh_file_is_a_mesh_error(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 3 1 0\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        read_mesh(p)


def test_frames_on_circles():
    m = classified(0.125)
    fr = compute_boundary_frames(m)
    X = m.vertices[fr.nodes]
    i = np.argmin(np.linalg.norm(X - [2.0, 0.0], axis=1))
    assert np.allclose(fr.normal[i], [1.0, 0.0], atol=1e-12)
    assert fr.curvature[i] == pytest.approx(0.5, abs=1e-3)
    inner = fr.labels == GAMMA1
    assert np.all(np.einsum("ni,ni->n", fr.normal[inner], X[inner]) < 0)
    assert np.allclose(fr.curvature[inner], -1.0, atol=1e-3)
    assert np.abs(np.einsum("nij,nj->ni", fr.projector, fr.normal)).max() < 1e-15
    P = fr.projector
    assert np.allclose(np.einsum("nij,njk->nik", P, P), P, atol=1e-15)
    assert np.allclose(P, np.transpose(P, (0, 2, 1)))


@pytest.mark.parametrize("grading", [0.0, 0.3])
def test_curvature_converges_first_order(grading):
    errs = []
    for h in (0.25, 0.125):
        fr = compute_boundary_frames(classified(h, grading=grading))
        exact = np.where(fr.labels == GAMMA1, -1.0, 0.5)
        errs.append(np.abs(fr.curvature - exact).max())
    assert np.log2(errs[0] / errs[1]) >= 1.0


def test_region_fields_of_reference_collar():
    m = classified()
    rg = build_region_fields(m, 0.3, 1.0)
    r_cells = np.linalg.norm(m.vertices[m.cells], axis=2)
    # omega: cells reaching depth < 0.3 below the outer circle
    assert np.all(r_cells[rg.omega].max(axis=1) > 1.7 - 1e-9)
    gamma1_nodes = m.boundary_nodes(GAMMA1)
    touching = np.isin(m.cells, gamma1_nodes).any(axis=1)
    assert not np.any(rg.omega & touching)
    assert np.all(rg.omega_half <= rg.omega_eps) and np.all(rg.omega_eps <= rg.omega)
    touching0 = np.isin(m.cells, m.boundary_nodes(GAMMA0)).any(axis=1)
    assert np.all(rg.omega_half[touching0])
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.allclose(rg.xi_eps[np.isclose(r, 2.0)], 1.0)
    assert np.all(rg.xi_eps[r <= 1.6 + 1e-12] == 0.0)
    assert np.all((rg.a_field >= 1.0) | ~rg.omega) and np.all(rg.a_field >= 0)


def test_k_field_is_normal_on_boundary_and_zero_inside():
    m = classified()
    fr = compute_boundary_frames(m)
    rg = build_region_fields(m, 0.3, 1.0, frames=fr)
    assert np.abs(rg.k_field[fr.nodes] - fr.normal).max() < 1e-12
    r = np.linalg.norm(m.vertices, axis=1)
    deep = (r <= 1.7 - 1e-9) & (r >= 1.3 + 1e-9)
    assert np.all(rg.k_field[deep] == 0.0)


def test_cutoff_ratio_bounded_by_inverse_square_width():
    m = classified(0.125)
    for eps in (0.3, 0.15):
        ratio = build_region_fields(m, eps, 1.0).xi_ratio(m)
        assert np.nanmax(ratio) * eps**2 < 40.0


def test_collar_reaching_gamma1_is_rejected():
    with pytest.raises(RegionOverlapError):
        build_region_fields(classified(), 1.2, 1.0)


def test_ramp_profile_stays_above_floor():
    m = classified()
    rg = build_region_fields(m, 0.3, 2.0, profile="ramp")
    assert np.all(rg.a_field[rg.omega] >= 2.0)
    assert np.all(rg.a_field[~rg.omega] == 0.0)


def test_gamma1_is_one_closed_loop():
    loops = gamma1_loops(classified())
    assert len(loops) == 1


def test_shell_mesh_is_classified():
    m = classify_boundary(build_mesh("shell", 1.0, 2.0, 0.5), np.zeros(3), 1.0)
    fr = compute_boundary_frames(m)
    assert np.all(m.volumes > 0)
    S = fr.shape
    assert np.allclose(S, np.transpose(S, (0, 2, 1)))
    assert np.abs(np.linalg.norm(fr.normal, axis=1) - 1).max() < 1e-12
