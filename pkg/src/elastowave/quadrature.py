"""Simplex quadrature in barycentric form; weights sum to one."""

import numpy as np


def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def simplex_rule(n_vertices: int):
    """Barycentric points ``(nq, n_vertices)`` and weights ``(nq,)``.

    Segment: 3-point Gauss (degree 5). Triangle: 6-point rule (degree 4).
    Tetrahedron: 5-point rule (degree 3, one negative weight).
    """
    if n_vertices == 2:
        x = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
        t = 0.5 * (x + 1)
        return np.stack([1 - t, t], axis=1), np.array([5, 8, 5]) / 18.0
    if n_vertices == 3:
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 0.109951743655322
        pts = _perm3(1 - 2 * a, a) + _perm3(1 - 2 * b, b)
        return np.array(pts), np.array([wa] * 3 + [wb] * 3)
    if n_vertices == 4:
        pts = [(0.25,) * 4] + [tuple(0.5 if i == j else 1 / 6 for i in range(4)) for j in range(4)]
        return np.array(pts), np.array([-0.8] + [0.45] * 4)
    raise ValueError(f"no rule for {n_vertices}-vertex simplices")
