"""Per-cell P1 kernels with a numba path and a numpy path.

Both paths return identical arrays up to round-off; ``backend`` selects one
explicitly, otherwise :func:`elastowave._accel.numba_enabled` decides.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, numba_enabled, prange


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------

def _p1_geometry_np(vertices, cells):
    X = vertices[cells]  # (C, d+1, d)
    d = vertices.shape[1]
    J = X[:, 1:, :] - X[:, :1, :]  # rows are edge vectors
    det = np.linalg.det(J)
    vol = det / math.factorial(d)
    Jinv = np.linalg.inv(J)  # (C, d, d)
    ref = np.vstack([-np.ones((1, d)), np.eye(d)])  # (d+1, d) reference gradients
    grads = np.einsum("ij,cjk->cik", ref, np.transpose(Jinv, (0, 2, 1)))
    # grad phi_a = J^{-1} e_a  (columns); einsum above gives (C, d+1, d)
    return grads, vol


def _elasticity_np(grads, vol, alpha, lam):
    C, n, d = grads.shape
    gg = np.einsum("zak,zbk->zab", grads, grads)
    eye = np.eye(d)
    K = (
        alpha * np.einsum("ie,zab->zaibe", eye, gg)
        + alpha * np.einsum("zae,zbi->zaibe", grads, grads)
        + lam * np.einsum("zai,zbe->zaibe", grads, grads)
    )
    return K.reshape(C, n * d, n * d) * vol[:, None, None]


def _mass_np(vol, weight, n):
    base = (np.ones((n, n)) + np.eye(n)) / (n * (n + 1))
    return (vol * weight)[:, None, None] * base[None]


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _p1_geometry_nb(vertices, cells):
    C = cells.shape[0]
    n = cells.shape[1]
    d = n - 1
    grads = np.empty((C, n, d))
    vol = np.empty(C)
    fact = 1.0
    for k in range(2, d + 1):
        fact *= k
    for c in prange(C):
        J = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                J[i, j] = vertices[cells[c, i + 1], j] - vertices[cells[c, 0], j]
        det = np.linalg.det(J)
        vol[c] = det / fact
        Jinv = np.linalg.inv(J)
        for k in range(d):
            s = 0.0
            for i in range(d):
                grads[c, i + 1, k] = Jinv[k, i]
                s += Jinv[k, i]
            grads[c, 0, k] = -s
    return grads, vol


@njit(cache=True, parallel=True)
def _elasticity_nb(grads, vol, alpha, lam):
    C, n, d = grads.shape
    nd = n * d
    K = np.zeros((C, nd, nd))
    for c in prange(C):
        for a in range(n):
            for b in range(n):
                gab = 0.0
                for k in range(d):
                    gab += grads[c, a, k] * grads[c, b, k]
                for i in range(d):
                    for e in range(d):
                        val = alpha * grads[c, a, e] * grads[c, b, i] + lam * grads[c, a, i] * grads[c, b, e]
                        if i == e:
                            val += alpha * gab
                        K[c, a * d + i, b * d + e] = vol[c] * val
    return K


@njit(cache=True, parallel=True)
def _mass_nb(vol, weight, n):
    C = vol.shape[0]
    M = np.empty((C, n, n))
    denom = n * (n + 1)
    for c in prange(C):
        s = vol[c] * weight[c] / denom
        for a in range(n):
            for b in range(n):
                M[c, a, b] = 2.0 * s if a == b else s
    return M


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _use_numba(backend):
    if backend is None:
        return numba_enabled()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend == "numba" and numba_enabled()


def p1_geometry(vertices, cells, backend=None):
    """Barycentric gradients ``(C, d+1, d)`` and signed volumes ``(C,)``."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if _use_numba(backend):
        return _p1_geometry_nb(vertices, cells)
    return _p1_geometry_np(vertices, cells)


def elasticity_element_matrices(grads, vol, alpha, lam, backend=None):
    """Element matrices of ``int sigma(u):eps(v)`` with dof order ``a*d + c``."""
    grads = np.ascontiguousarray(grads, dtype=float)
    vol = np.ascontiguousarray(np.abs(vol), dtype=float)
    if _use_numba(backend):
        return _elasticity_nb(grads, vol, float(alpha), float(lam))
    return _elasticity_np(grads, vol, float(alpha), float(lam))


def scalar_mass_element_matrices(vol, weight, n, backend=None):
    """Consistent P1 mass on simplices with ``n`` vertices, cellwise weight."""
    vol = np.ascontiguousarray(np.abs(vol), dtype=float)
    weight = np.ascontiguousarray(np.broadcast_to(weight, vol.shape), dtype=float)
    if _use_numba(backend):
        return _mass_nb(vol, weight, int(n))
    return _mass_np(vol, weight, int(n))
