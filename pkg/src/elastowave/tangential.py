"""Tangential calculus on the acoustic boundary GAMMA1.

Boundary unknowns live on GAMMA1 nodes in the local frame: ``d-1``
tangential coefficients and one normal coefficient per node. Vectors use a
block layout ``[z_T (node-major), z_nu]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import AssumptionError, StateError
from .geometry import GAMMA1, BoundaryFrame, Mesh
from .quadrature import simplex_rule


def lambda_star(lam: float, mu: float) -> float:
    """Effective membrane Lamé constant ``2*lam*mu/(lam + 2*mu)``."""
    return 2.0 * lam * mu / (lam + 2.0 * mu)


@dataclass(frozen=True)
class BoundaryField:
    z_T: np.ndarray  # (n, d-1)
    z_nu: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return len(self.z_nu)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.z_T), self.z_nu])

    @classmethod
    def from_vector(cls, vec, n: int, dim: int) -> "BoundaryField":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n * dim,):
            raise StateError(f"boundary vector has shape {vec.shape}, expected ({n * dim},)")
        return cls(vec[: n * (dim - 1)].reshape(n, dim - 1), vec[n * (dim - 1):])

    @classmethod
    def zeros(cls, n: int, dim: int) -> "BoundaryField":
        return cls(np.zeros((n, dim - 1)), np.zeros(n))

    def ambient(self, frames: BoundaryFrame) -> np.ndarray:
        return np.einsum("nk,nki->ni", self.z_T, frames.tangents) + self.z_nu[:, None] * frames.normal


def decompose_trace(ambient, frames: BoundaryFrame) -> BoundaryField:
    """Split an ambient vector field on the frame's nodes into ``(z_T, z_nu)``."""
    ambient = np.asarray(ambient, dtype=float)
    if ambient.shape != frames.normal.shape:
        raise StateError(f"field of shape {ambient.shape} does not match {len(frames.nodes)} framed nodes")
    z_nu = np.einsum("ni,ni->n", ambient, frames.normal)
    tang = np.einsum("nij,nj->ni", frames.projector, ambient)
    z_T = np.einsum("ni,nki->nk", tang, frames.tangents)
    return BoundaryField(z_T, z_nu)


class Gamma1Layout:
    """GAMMA1 nodes, facets (local numbering) and element geometry."""

    def __init__(self, mesh: Mesh, frames: BoundaryFrame):
        self.dim = mesh.dim
        self.frame = frames.restrict(GAMMA1)
        self.nodes = self.frame.nodes
        self.n = len(self.nodes)
        self.facet_ids = mesh.facets(GAMMA1)
        self.facets = self.frame.local[mesh.boundary_facets[self.facet_ids]]
        self.measures = mesh.facet_measures[self.facet_ids]
        self.coords = mesh.vertices[self.nodes]
        self.facet_normals = mesh.facet_normals[self.facet_ids]
        if np.any(self.facets < 0):
            raise StateError("GAMMA1 facet references a node without frame")

    @property
    def ndof(self) -> int:
        return self.n * self.dim

    def tangential_dofs(self, node, k):
        return node * (self.dim - 1) + k

    def normal_dofs(self, node):
        return self.n * (self.dim - 1) + node

    @cached_property
    def surface_grads(self) -> np.ndarray:
        """In-plane gradients of the hat functions on each facet, ``(F, d, d)``."""
        X = self.coords[self.facets]
        if self.dim == 2:
            t = X[:, 1] - X[:, 0]
            g1 = t / np.einsum("fi,fi->f", t, t)[:, None]
            return np.stack([-g1, g1], axis=1)
        E = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)  # (F, 3, 2)
        G = np.einsum("fia,fib->fab", E, E)
        g12 = np.einsum("fia,fab->fbi", E, np.linalg.inv(G))  # (F, 2, 3)
        return np.concatenate([-g12.sum(axis=1, keepdims=True), g12], axis=1)

    @cached_property
    def orientation(self) -> np.ndarray:
        """2D only: +1 where facet vertex order follows the nodal tangent."""
        X = self.coords[self.facets]
        tau = self.frame.tangents[self.facets, 0].sum(axis=1)
        return np.sign(np.einsum("fi,fi->f", X[:, 1] - X[:, 0], tau))

    @cached_property
    def neighbours(self) -> tuple[np.ndarray, np.ndarray]:
        """2D only: (next, prev) node along the nodal tangent."""
        nxt = np.empty(self.n, dtype=np.int64)
        prv = np.empty(self.n, dtype=np.int64)
        for (a, b), s in zip(self.facets, self.orientation):
            if s < 0:
                a, b = b, a
            nxt[a], prv[b] = b, a
        return nxt, prv

    def facet_projectors(self) -> np.ndarray:
        n = self.facet_normals
        return np.eye(self.dim)[None] - np.einsum("fi,fj->fij", n, n)

    def facet_shape(self) -> np.ndarray:
        """Nodal shape operators averaged to facets, as ambient ``(F, d, d)`` tensors."""
        S = np.einsum("nab,nai,nbj->nij", self.frame.shape, self.frame.tangents, self.frame.tangents)
        Se = S[self.facets].mean(axis=1)
        P = self.facet_projectors()
        return np.einsum("fij,fjk,fkl->fil", P, Se, P)


# --------------------------------------------------------------------------
# strain / stress
# --------------------------------------------------------------------------

def strain_operator(layout: Gamma1Layout) -> sp.csr_matrix:
    """Sparse map from boundary dofs to the constant tangential strain per facet.

    2D: one row per facet, ``d_s z_T + kappa z_nu``. 3D: nine rows per
    facet holding ``sym(P grad_T z_T P) + z_nu S`` row-major.
    """
    n, d = layout.n, layout.dim
    F = layout.facets
    nf = len(F)
    rows, cols, vals = [], [], []
    if d == 2:
        L = layout.measures
        kap = layout.frame.curvature[F].mean(axis=1)
        s = layout.orientation
        for a in range(2):
            rows += [np.arange(nf)] * 2
            cols += [layout.tangential_dofs(F[:, a], 0), layout.normal_dofs(F[:, a])]
            vals += [s * (1.0 if a == 1 else -1.0) / L, 0.5 * kap]
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, n * d))
    P = layout.facet_projectors()
    S = layout.facet_shape()
    g = layout.surface_grads  # (F, 3, 3): hat a, component j
    tang = layout.frame.tangents
    base = 9 * np.arange(nf)
    for a in range(3):
        for k in range(2):
            t = tang[F[:, a], k]  # (F, 3)
            Pt = np.einsum("fij,fj->fi", P, t)
            G = np.einsum("fi,fj->fij", Pt, g[:, a])  # P (t outer grad)
            Gs = 0.5 * (G + np.transpose(G, (0, 2, 1)))
            for comp in range(9):
                rows.append(base + comp)
                cols.append(layout.tangential_dofs(F[:, a], k))
                vals.append(Gs[:, comp // 3, comp % 3])
        for comp in range(9):
            rows.append(base + comp)
            cols.append(layout.normal_dofs(F[:, a]))
            vals.append(S[:, comp // 3, comp % 3] / 3.0)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(9 * nf, n * d))


def stress_from_strain(strain, layout: Gamma1Layout, lam, mu):
    ls = lambda_star(lam, mu)
    if layout.dim == 2:
        return (2.0 * mu + ls) * strain
    P = layout.facet_projectors()
    tr = np.einsum("fii->f", strain)
    return 2.0 * mu * strain + ls * tr[:, None, None] * P


def tangential_strain_stress(z: BoundaryField, layout: Gamma1Layout, lam: float, mu: float):
    """Per-facet tangential strain and membrane stress of a boundary field."""
    if lam <= 0 or mu <= 0:
        raise AssumptionError("Lamé constants must be positive")
    e = strain_operator(layout) @ z.to_vector()
    if layout.dim == 3:
        e = e.reshape(-1, 3, 3)
    return e, stress_from_strain(e, layout, lam, mu)


# --------------------------------------------------------------------------
# boundary forms
# --------------------------------------------------------------------------

def scalar_boundary_mass(layout: Gamma1Layout, coef=1.0) -> sp.csr_matrix:
    """``int c phi_a phi_b`` over GAMMA1 with ``c`` a nodal (P1) or constant field."""
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (layout.n,))
    bary, w = simplex_rule(layout.dim)
    F = layout.facets
    c_q = coef[F] @ bary.T  # (F, nq)
    loc = np.einsum("q,fq,qa,qb->fab", w, c_q * layout.measures[:, None], bary, bary)
    loc = 0.5 * (loc + np.transpose(loc, (0, 2, 1)))  # bitwise symmetric after assembly
    return _assemble(F, loc, layout.n)


def scalar_boundary_stiffness(layout: Gamma1Layout) -> sp.csr_matrix:
    g = layout.surface_grads
    loc = layout.measures[:, None, None] * np.einsum("fai,fbi->fab", g, g)
    return _assemble(layout.facets, loc, layout.n)


def _assemble(F, loc, n):
    k = F.shape[1]
    rows = np.repeat(F, k, axis=1).ravel()
    cols = np.tile(F, (1, k)).ravel()
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(n, n))


def vectorize(Ms: sp.spmatrix, dim: int) -> sp.csr_matrix:
    """Scalar nodal form -> block form acting on every frame component."""
    return sp.block_diag([sp.kron(Ms, sp.identity(dim - 1)), Ms], format="csr")


def embed_normal(Ms: sp.spmatrix, dim: int) -> sp.csr_matrix:
    n = Ms.shape[0]
    return sp.block_diag([sp.csr_matrix((n * (dim - 1), n * (dim - 1))), Ms], format="csr")


@dataclass(frozen=True, eq=False)
class BoundaryOperators:
    layout: Gamma1Layout
    M_f: sp.csr_matrix
    D_g: sp.csr_matrix
    H_h: sp.csr_matrix
    K_elastic: sp.csr_matrix
    K_LB: sp.csr_matrix  # scalar, acts on z_nu
    strain: sp.csr_matrix
    lam: float
    mu: float

    @cached_property
    def K_LB_full(self) -> sp.csr_matrix:
        return embed_normal(self.K_LB, self.layout.dim)

    @cached_property
    def K_boundary(self) -> sp.csr_matrix:
        """Gram matrix of the boundary displacement norm (h-mass + membrane + Laplace-Beltrami)."""
        return (self.H_h + self.K_elastic + self.K_LB_full).tocsr()


def _check_coefficient(name, values, floor, allow_zero):
    values = np.asarray(values, dtype=float)
    if allow_zero:
        if np.any(values < 0):
            raise AssumptionError(f"coefficient {name} must be nonnegative")
        return
    if floor is None:
        floor = 0.0
        ok = np.all(values > 0)
    else:
        ok = floor > 0 and np.all(values >= floor)
    if not ok:
        raise AssumptionError(f"coefficient {name} violates its positive floor ({floor}); min {values.min():.4g}")


def assemble_boundary_operators(mesh: Mesh, frames: BoundaryFrame, f, g, h, lam: float, mu: float,
                                floors=None, allow_zero_g: bool = False) -> BoundaryOperators:
    """Galerkin matrices of the GAMMA1 forms over P1 boundary elements.

    ``floors=(f0, g0, h0)`` are checked nodewise; ``allow_zero_g`` admits the
    undamped boundary (g = 0) used for conservation checks.
    """
    layout = Gamma1Layout(mesh, frames)
    n, d = layout.n, layout.dim
    coefs = {}
    for i, (name, c) in enumerate((("f", f), ("g", g), ("h", h))):
        arr = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
        _check_coefficient(name, arr, None if floors is None else floors[i], allow_zero_g and name == "g")
        coefs[name] = arr
    if lam <= 0 or mu <= 0:
        raise AssumptionError("Lamé constants must be positive")
    E = strain_operator(layout)
    if d == 2:
        W = sp.diags(layout.measures)
        K_el = (2.0 * mu + lambda_star(lam, mu)) * (E.T @ W @ E)
    else:
        W = sp.diags(np.repeat(layout.measures, 9))
        T = sp.kron(sp.identity(len(layout.facets)), sp.csr_matrix(np.eye(3).reshape(1, 9)))
        TE = T @ E
        K_el = 2.0 * mu * (E.T @ W @ E) + lambda_star(lam, mu) * (TE.T @ sp.diags(layout.measures) @ TE)
    K_el = (0.5 * (K_el + K_el.T)).tocsr()
    return BoundaryOperators(
        layout,
        vectorize(scalar_boundary_mass(layout, coefs["f"]), d),
        vectorize(scalar_boundary_mass(layout, coefs["g"]), d),
        vectorize(scalar_boundary_mass(layout, coefs["h"]), d),
        K_el,
        scalar_boundary_stiffness(layout),
        E,
        float(lam),
        float(mu),
    )


# --------------------------------------------------------------------------
# Stokes consistency diagnostic
# --------------------------------------------------------------------------

def _nodal_derivative(layout: Gamma1Layout, field_amb):
    """Tangential component of d/ds of an ambient nodal field (2D, three-point, non-uniform)."""
    nxt, prv = layout.neighbours
    X = layout.coords
    hp = np.linalg.norm(X[nxt] - X, axis=1)
    hm = np.linalg.norm(X - X[prv], axis=1)
    tau = layout.frame.tangents[:, 0]
    fp = np.einsum("ni,ni->n", field_amb[nxt], tau)
    fm = np.einsum("ni,ni->n", field_amb[prv], tau)
    f0 = np.einsum("ni,ni->n", field_amb, tau)
    der = (hm**2 * fp - hp**2 * fm + (hp**2 - hm**2) * f0) / (hp * hm * (hp + hm))
    return der, 0.5 * (hp + hm)


def stokes_residual(v_T: BoundaryField, u_T: BoundaryField, layout: Gamma1Layout) -> float:
    """``|int div_T v_T . u_T + int tr(v_T . pi d_T u_T)|`` on a closed GAMMA1 curve.

    Derivatives are collocated three-point differences of the ambient fields
    on the (possibly non-uniform) node spacing, integrated with dual-cell
    weights; normal parts are ignored. The Galerkin pairing of the P1
    interpolants would vanish identically, so this is a consistency check on
    the nodal tangential calculus.
    """
    if layout.dim != 2:
        raise NotImplementedError("the Stokes diagnostic is implemented for closed curves (d=2)")
    fr = layout.frame
    V = BoundaryField(v_T.z_T, np.zeros(layout.n)).ambient(fr)
    U = BoundaryField(u_T.z_T, np.zeros(layout.n)).ambient(fr)
    dv, w = _nodal_derivative(layout, V)
    du, _ = _nodal_derivative(layout, U)
    return float(abs(np.sum(w * (dv * u_T.z_T[:, 0] + v_T.z_T[:, 0] * du))))
