"""Bulk elasticity forms, trace coupling, phase-space Gram matrix and the
resolvent system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import AssumptionError, StateError
from .geometry import GAMMA0, BoundaryFrame, Mesh, RegionFields
from .kernels import elasticity_element_matrices, scalar_mass_element_matrices
from .state import State
from .tangential import BoundaryField, BoundaryOperators, assemble_boundary_operators, scalar_boundary_mass


@dataclass(frozen=True)
class MaterialParams:
    lam: float
    alpha: float
    f: object = 1.0
    g: object = 1.0
    h: object = 1.0
    floors: tuple | None = None
    allow_zero_g: bool = False

    def __post_init__(self):
        if not (self.lam > 0 and self.alpha > 0):
            raise AssumptionError(f"Lamé constants must be positive (lambda={self.lam}, alpha={self.alpha})")


def _scatter(cells_dofs, loc, n):
    k = cells_dofs.shape[1]
    rows = np.repeat(cells_dofs, k, axis=1).ravel()
    cols = np.tile(cells_dofs, (1, k)).ravel()
    A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def vector_dofs(cells, dim):
    """Dof numbers ``node*d + c`` per cell, ordered ``(a, c)``."""
    return (cells[:, :, None] * dim + np.arange(dim)).reshape(len(cells), -1)


def assemble_bulk(mesh: Mesh, params: MaterialParams, a_field=None, backend=None):
    """Unconstrained vector P1 stiffness, mass and damping matrices."""
    d = mesh.dim
    n = mesh.n_vertices * d
    vol = mesh.volumes
    if a_field is None:
        a_field = np.zeros(mesh.n_cells)
    a_field = np.asarray(a_field, dtype=float)
    if np.any(a_field < 0):
        raise AssumptionError("damping coefficient must be nonnegative")
    dofs = vector_dofs(mesh.cells, d)
    K = _scatter(dofs, elasticity_element_matrices(mesh.grads, vol, params.alpha, params.lam, backend), n)
    K = (0.5 * (K + K.T)).tocsr()  # a + b == b + a, so this is bitwise symmetric
    Ms = scalar_mass_element_matrices(vol, 1.0, d + 1, backend)
    Ds = scalar_mass_element_matrices(vol, a_field, d + 1, backend)
    M_scalar = _scatter(mesh.cells, Ms, mesh.n_vertices)
    D_scalar = _scatter(mesh.cells, Ds, mesh.n_vertices)
    eye = sp.identity(d, format="csr")
    return K, sp.kron(M_scalar, eye, format="csr"), sp.kron(D_scalar, eye, format="csr")


def assemble_coupling(mesh: Mesh, bops: BoundaryOperators, weight=1.0) -> sp.csr_matrix:
    """GAMMA1 pairing ``int weight u . z`` of bulk traces with frame-coordinate boundary fields.

    Shape ``(n_boundary_dofs, n_vertices*d)``; the same matrix enters the bulk
    equation transposed and the boundary equations directly. ``weight`` is a
    constant or a nodal field on the GAMMA1 nodes.
    """
    lay = bops.layout
    d = mesh.dim
    Ms = scalar_boundary_mass(lay, weight).tocoo()
    a, b, m = Ms.row, Ms.col, Ms.data
    gb = lay.nodes[b]
    rows, cols, vals = [], [], []
    for c in range(d):
        for k in range(d - 1):
            rows.append(lay.tangential_dofs(a, k))
            cols.append(gb * d + c)
            vals.append(m * lay.frame.tangents[a, k, c])
        rows.append(lay.normal_dofs(a))
        cols.append(gb * d + c)
        vals.append(m * lay.frame.normal[a, c])
    B = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(lay.ndof, mesh.n_vertices * d)).tocsr()
    B.sum_duplicates()
    return B


@dataclass(eq=False)
class SystemMatrices:
    """All assembled forms, restricted to the GAMMA0-free bulk dofs where noted."""

    mesh: Mesh
    frames: BoundaryFrame
    params: MaterialParams
    bops: BoundaryOperators
    free: np.ndarray
    K_full: sp.csr_matrix
    M_full: sp.csr_matrix
    D_full: sp.csr_matrix
    B_full: sp.csr_matrix
    region: RegionFields | None = None
    a_field: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)

    @cached_property
    def K(self):
        return self.K_full[self.free][:, self.free].tocsr()

    @cached_property
    def M(self):
        return self.M_full[self.free][:, self.free].tocsr()

    @cached_property
    def D(self):
        return self.D_full[self.free][:, self.free].tocsr()

    @cached_property
    def B(self):
        return self.B_full[:, self.free].tocsr()

    @property
    def M_f(self):
        return self.bops.M_f

    @property
    def D_g(self):
        return self.bops.D_g

    @property
    def K_b(self):
        return self.bops.K_boundary

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def n_u(self) -> int:
        return len(self.free)

    @property
    def n_z(self) -> int:
        return self.bops.layout.ndof

    @property
    def n(self) -> int:
        return 2 * (self.n_u + self.n_z)

    @cached_property
    def blocks(self):
        nu, nz = self.n_u, self.n_z
        o = np.cumsum([0, nu, nu, nz, nz])
        return {name: slice(o[i], o[i + 1]) for i, name in enumerate("uvzw")}

    @cached_property
    def G_H(self) -> sp.csr_matrix:
        """Gram matrix of the phase-space inner product, blocks (u, v, z, w)."""
        return sp.block_diag([self.K, self.M, self.K_b, self.M_f], format="csr")

    def pack(self, U: State) -> np.ndarray:
        d = self.dim
        u = np.asarray(U.u, dtype=float).reshape(-1)
        v = np.asarray(U.v, dtype=float).reshape(-1)
        if u.shape != (self.mesh.n_vertices * d,) or v.shape != u.shape:
            raise StateError("bulk blocks do not match the mesh")
        return np.concatenate([u[self.free], v[self.free], U.z.to_vector(), U.w.to_vector()])

    def unpack(self, X) -> State:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n,):
            raise StateError(f"state vector has shape {X.shape}, expected ({self.n},)")
        d, N, nb = self.dim, self.mesh.n_vertices, self.bops.layout.n
        u = np.zeros(N * d)
        v = np.zeros(N * d)
        b = self.blocks
        u[self.free] = X[b["u"]]
        v[self.free] = X[b["v"]]
        return State(u.reshape(N, d), v.reshape(N, d),
                     BoundaryField.from_vector(X[b["z"]], nb, d), BoundaryField.from_vector(X[b["w"]], nb, d))

    def norm_H2(self, X) -> float:
        return float(X @ (self.G_H @ X))

    def random_state_vector(self, rng) -> np.ndarray:
        return rng.standard_normal(self.n)

    def constraint_map(self) -> dict:
        return {
            "n_vertices": int(self.mesh.n_vertices),
            "dim": int(self.dim),
            "gamma0_nodes": [int(i) for i in self.mesh.boundary_nodes(GAMMA0)],
            "free_dofs": [int(i) for i in self.free],
            "gamma1_nodes": [int(i) for i in self.bops.layout.nodes],
        }

    def constraint_map_json(self) -> str:
        return json.dumps(self.constraint_map())


def free_dofs(mesh: Mesh) -> np.ndarray:
    d = mesh.dim
    fixed = np.zeros(mesh.n_vertices, dtype=bool)
    fixed[mesh.boundary_nodes(GAMMA0)] = True
    return np.flatnonzero(np.repeat(~fixed, d))


def build_system(mesh: Mesh, frames: BoundaryFrame, params: MaterialParams,
                 region: RegionFields | None = None, a_field=None, backend=None) -> SystemMatrices:
    """Assemble every form for a classified mesh."""
    if a_field is None:
        a_field = region.a_field if region is not None else np.zeros(mesh.n_cells)
    K, M, D = assemble_bulk(mesh, params, a_field, backend)
    bops = assemble_boundary_operators(mesh, frames, params.f, params.g, params.h, params.lam, params.alpha,
                                       floors=params.floors, allow_zero_g=params.allow_zero_g)
    B = assemble_coupling(mesh, bops)
    return SystemMatrices(mesh, frames, params, bops, free_dofs(mesh), K, M, D, B, region,
                          np.asarray(a_field, dtype=float))


# --------------------------------------------------------------------------
# resolvent
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ResolventSystem:
    """``Phi (v, w) = Psi`` for the velocities; ``Phi_sym`` is its symmetric part.

    The skew part is the trace coupling, which drops out of ``Phi(V, V)``.
    """

    Phi: sp.csr_matrix
    Phi_sym: sp.csr_matrix
    Psi: np.ndarray
    k: np.ndarray
    sm: SystemMatrices

    def reconstruct(self, vw) -> np.ndarray:
        """Full state ``U`` from the velocities: ``u = v + k1``, ``z = w + k3``."""
        sm, b = self.sm, self.sm.blocks
        v, w = vw[: sm.n_u], vw[sm.n_u:]
        X = np.empty(sm.n)
        X[b["v"]] = v
        X[b["w"]] = w
        X[b["u"]] = v + self.k[b["u"]]
        X[b["z"]] = w + self.k[b["z"]]
        return X


def resolvent_form(sm: SystemMatrices) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    if "phi" not in sm.cache:
        P = sm.M + sm.K + sm.D
        Q = sm.M_f + sm.D_g + sm.K_b
        Phi_sym = sp.block_diag([P, Q], format="csr")
        Phi = sp.bmat([[P, -sm.B.T], [sm.B, Q]], format="csc")
        sm.cache["phi"] = (Phi, Phi_sym)
    return sm.cache["phi"]


def assemble_resolvent_system(k, sm: SystemMatrices) -> ResolventSystem:
    """Velocity system of ``(I + A)U = k`` after eliminating ``u`` and ``z``."""
    k = sm.pack(k) if isinstance(k, State) else np.asarray(k, dtype=float)
    if k.shape != (sm.n,):
        raise StateError("k has the wrong size")
    b = sm.blocks
    Phi, Phi_sym = resolvent_form(sm)
    Psi = np.concatenate([
        sm.M @ k[b["v"]] - sm.K @ k[b["u"]],
        sm.M_f @ k[b["w"]] - sm.K_b @ k[b["z"]],
    ])
    return ResolventSystem(Phi, Phi_sym, Psi, k, sm)


def resolvent_norm_gram(sm: SystemMatrices) -> sp.csr_matrix:
    """Gram matrix of ``||v||_V^2 + ||w||^2`` with the boundary displacement norm."""
    return sp.block_diag([sm.K, sm.K_b], format="csr")


def coercivity_ratios(sm: SystemMatrices, n_samples: int = 100, seed: int = 0) -> np.ndarray:
    """``Phi(V, V) / (||v||_V^2 + ||w||^2)`` for random velocity pairs ``V``."""
    _, Phi_sym = resolvent_form(sm)
    N = resolvent_norm_gram(sm)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_samples, Phi_sym.shape[0]))
    num = np.einsum("ij,ij->i", V, (Phi_sym @ V.T).T)
    den = np.einsum("ij,ij->i", V, (N @ V.T).T)
    return num / den


def write_coo(A, path) -> None:
    """Plain-text coordinate export: a ``rows cols nnz`` header, then ``i j value`` lines."""
    C = sp.coo_matrix(A)
    C.sum_duplicates()
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, x in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i} {j} {x:.17g}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        n, m, _ = (int(x) for x in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, m))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, m)).tocsr()
