"""Meshes of annuli and spherical shells, boundary classification, boundary
frames and the damping-collar fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .errors import GeometricConditionError, MeshError, ParameterError, RegionOverlapError
from .kernels import p1_geometry

GAMMA0 = 0
GAMMA1 = 1


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with labelled boundary facets.

    ``boundary_facets`` holds vertex indices (one row per facet) and
    ``boundary_labels`` the matching ``GAMMA0``/``GAMMA1`` labels.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    boundary_labels: np.ndarray
    h: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.h):
            object.__setattr__(self, "h", max_cell_diameter(self.vertices, self.cells))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @cached_property
    def _cell_geometry(self):
        return p1_geometry(self.vertices, self.cells)

    @property
    def grads(self) -> np.ndarray:
        return self._cell_geometry[0]

    @property
    def volumes(self) -> np.ndarray:
        return self._cell_geometry[1]

    @cached_property
    def facet_cells(self) -> np.ndarray:
        """Index of the single cell owning each boundary facet."""
        lookup = {}
        d = self.dim
        for c, cell in enumerate(self.cells):
            for skip in range(d + 1):
                key = tuple(sorted(np.delete(cell, skip)))
                lookup.setdefault(key, []).append(c)
        out = np.empty(len(self.boundary_facets), dtype=np.int64)
        for i, f in enumerate(self.boundary_facets):
            owners = lookup.get(tuple(sorted(f)), [])
            if len(owners) != 1:
                raise MeshError(f"boundary facet {i} belongs to {len(owners)} cells")
            out[i] = owners[0]
        return out

    @cached_property
    def facet_measures(self) -> np.ndarray:
        X = self.vertices[self.boundary_facets]
        if self.dim == 2:
            return np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)

    @cached_property
    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Unit outward normals of the (flat) boundary facets."""
        X = self.vertices[self.boundary_facets]
        if self.dim == 2:
            t = X[:, 1] - X[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            n = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
        norm = np.linalg.norm(n, axis=1)
        if np.any(norm <= 0):
            raise MeshError("degenerate boundary facet (zero measure)")
        n = n / norm[:, None]
        # orient away from the owning cell's interior
        inside = self.vertices[self.cells[self.facet_cells]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, self.facet_centroids - inside) < 0
        n[flip] *= -1
        return n

    def boundary_nodes(self, label: int | None = None) -> np.ndarray:
        facets = self.boundary_facets
        if label is not None:
            facets = facets[self.boundary_labels == label]
        return np.unique(facets)

    def facets(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.boundary_labels == label)


def max_cell_diameter(vertices, cells) -> float:
    X = vertices[cells]
    n = cells.shape[1]
    best = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            best = max(best, float(np.linalg.norm(X[:, i] - X[:, j], axis=1).max()))
    return best


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def _orient(vertices, cells):
    _, vol = p1_geometry(vertices, cells, backend="numpy")
    cells = cells.copy()
    neg = vol < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    return cells


def _boundary_faces(cells):
    n = cells.shape[1]
    faces = np.concatenate([np.delete(cells, k, axis=1) for k in range(n)])
    keys = np.sort(faces, axis=1)
    _, idx, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    return faces[idx[counts == 1]]


def _label_by_radius(vertices, facets, r_split):
    r = np.linalg.norm(vertices[facets].mean(axis=1), axis=1)
    return np.where(r < r_split, GAMMA1, GAMMA0).astype(np.int64)


def _annulus(r_in, r_out, h, grading=0.0):
    step = h / math.sqrt(2.0)
    n_r = max(1, math.ceil((r_out - r_in) / step - 1e-12))
    n_t = max(8, math.ceil(2 * math.pi * r_out / step - 1e-12))
    radii = np.linspace(r_in, r_out, n_r + 1)
    phi = 2 * math.pi * np.arange(n_t) / n_t
    theta = phi - grading * np.sin(phi)
    R, T = np.meshgrid(radii, theta, indexing="ij")
    vertices = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    k, j = np.meshgrid(np.arange(n_r), np.arange(n_t), indexing="ij")
    k, j = k.ravel(), j.ravel()
    jn = (j + 1) % n_t
    p00, p10, p11, p01 = k * n_t + j, (k + 1) * n_t + j, (k + 1) * n_t + jn, k * n_t + jn
    cells = np.concatenate([np.stack([p00, p10, p11], 1), np.stack([p00, p11, p01], 1)])
    return vertices, cells


def _disk(r_out, h):
    step = h / math.sqrt(2.0)
    n_r = max(1, math.ceil(r_out / step - 1e-12))
    pts = [np.zeros((1, 2))]
    for r in np.linspace(0, r_out, n_r + 1)[1:]:
        n = max(6, math.ceil(2 * math.pi * r / step - 1e-12))
        t = 2 * math.pi * np.arange(n) / n
        pts.append(np.stack([r * np.cos(t), r * np.sin(t)], axis=1))
    vertices = np.concatenate(pts)
    return vertices, Delaunay(vertices).simplices.astype(np.int64)


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere after ``level`` midpoint subdivisions."""
    p = (1 + math.sqrt(5)) / 2
    v = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
         (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(x, float) / np.linalg.norm(x) for x in v]
    faces = f
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def _shell(r_in, r_out, h):
    step = h / math.sqrt(2.0)
    n_r = max(1, math.ceil((r_out - r_in) / step - 1e-12))
    # icosphere edge length on the unit sphere is about 1.05 / 2**level
    level = max(1, math.ceil(math.log2(1.05 * r_out / step)))
    sv, sf = icosphere(level)
    ns = len(sv)
    radii = np.linspace(r_in, r_out, n_r + 1)
    vertices = np.concatenate([r * sv for r in radii])
    sf = np.sort(sf, axis=1)
    tets = []
    for k in range(n_r):
        A, B, C = (k * ns + sf[:, i] for i in range(3))
        At, Bt, Ct = A + ns, B + ns, C + ns
        tets += [np.stack([A, B, C, Ct], 1), np.stack([A, B, Bt, Ct], 1), np.stack([A, At, Bt, Ct], 1)]
    return vertices, np.concatenate(tets)


def build_mesh(kind: str, r_in: float, r_out: float, h: float, grading: float = 0.0) -> Mesh:
    """Mesh an annulus (``kind="annulus"``), spherical shell (``"shell"``) or,
    for degenerate-geometry checks, a disk (``"disk"``, ``r_in`` ignored).

    Facets on the inner circle/sphere start labelled GAMMA1 and those on the
    outer one GAMMA0; :func:`classify_boundary` relabels from the geometry.
    ``grading`` in [0, 1) clusters annulus nodes angularly via
    ``theta = phi - grading*sin(phi)``.
    """
    if not 0 <= grading < 1:
        raise ParameterError("grading must lie in [0, 1)")
    if kind == "disk":
        if not (r_out > 0 and 0 < h <= r_out / 2):
            raise ParameterError("disk needs 0 < h <= r_out/2")
        vertices, cells = _disk(r_out, h)
    else:
        if not (0 < r_in < r_out):
            raise ParameterError(f"need 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
        if not (0 < h <= (r_out - r_in) / 2):
            raise ParameterError(f"need 0 < h <= (r_out - r_in)/2, got h={h}")
        if kind == "annulus":
            vertices, cells = _annulus(r_in, r_out, h, grading)
        elif kind == "shell":
            vertices, cells = _shell(r_in, r_out, h)
        else:
            raise ParameterError(f"unknown mesh kind {kind!r}")
    cells = _orient(vertices, cells)
    facets = _boundary_faces(cells)
    split = 0.5 * (r_in + r_out) if kind != "disk" else -1.0
    labels = _label_by_radius(vertices, facets, split)
    return Mesh(vertices.shape[1], vertices, cells, facets, labels)


def classify_boundary(mesh: Mesh, x0, delta: float) -> Mesh:
    """Relabel boundary facets from the sign of ``(x_c - x0) . nu``.

    Facets with ``(x_c - x0).nu >= delta`` become GAMMA0, those with
    ``<= 0`` GAMMA1. Anything in between, an empty part, or a vertex shared
    by both parts raises :class:`GeometricConditionError`.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (mesh.dim,):
        raise ParameterError(f"x0 must have {mesh.dim} coordinates")
    if not delta > 0:
        raise ParameterError("delta must be positive")
    s = np.einsum("ij,ij->i", mesh.facet_centroids - x0, mesh.facet_normals)
    gap = (s > 0) & (s < delta)
    if np.any(gap):
        raise GeometricConditionError(
            f"{gap.sum()} boundary facets have 0 < (x-x0).nu < delta "
            f"(min {s[gap].min():.4g}, delta {delta:.4g})"
        )
    labels = np.where(s >= delta, GAMMA0, GAMMA1).astype(np.int64)
    if not np.any(labels == GAMMA0) or not np.any(labels == GAMMA1):
        raise GeometricConditionError("both GAMMA0 and GAMMA1 must be non-empty")
    shared = np.intersect1d(mesh.boundary_facets[labels == GAMMA0], mesh.boundary_facets[labels == GAMMA1])
    if shared.size:
        raise GeometricConditionError(f"GAMMA0 and GAMMA1 share {shared.size} vertices")
    return replace(mesh, boundary_labels=labels)


# --------------------------------------------------------------------------
# native text format
# --------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(mesh.boundary_facets)}"]
    lines += [" ".join(f"{x:.17g}" for x in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    lines += [" ".join(str(int(i)) for i in f) + f" {int(l)}" for f, l in zip(mesh.boundary_facets, mesh.boundary_labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = Path(path).read_text().split("\n")
    try:
        dim, nv, nc, nf = (int(x) for x in rows[0].split())
        verts = np.array([[float(x) for x in r.split()] for r in rows[1:1 + nv]], dtype=float)
        cells = np.array([[int(x) for x in r.split()] for r in rows[1 + nv:1 + nv + nc]], dtype=np.int64)
        fac = np.array([[int(x) for x in r.split()] for r in rows[1 + nv + nc:1 + nv + nc + nf]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    if verts.shape != (nv, dim) or cells.shape != (nc, dim + 1) or fac.shape != (nf, dim + 1):
        raise MeshError(f"mesh file {path}: section sizes do not match header")
    if not set(np.unique(fac[:, -1])) <= {GAMMA0, GAMMA1}:
        raise MeshError("facet labels must be 0 or 1")
    return Mesh(dim, verts, cells, fac[:, :-1].copy(), fac[:, -1].copy())


# --------------------------------------------------------------------------
# boundary frames
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryFrame:
    """Per boundary node: outward normal, tangent basis, projector and shape
    operator (``shape[:, 0, 0]`` is the signed curvature in 2D)."""

    nodes: np.ndarray
    labels: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    projector: np.ndarray
    shape: np.ndarray
    n_vertices: int

    @cached_property
    def local(self) -> np.ndarray:
        """Global vertex id -> row in the frame arrays (-1 if not on the boundary)."""
        out = -np.ones(self.n_vertices, dtype=np.int64)
        out[self.nodes] = np.arange(len(self.nodes))
        return out

    @property
    def curvature(self) -> np.ndarray:
        if self.shape.shape[1] != 1:
            raise ValueError("scalar curvature only exists in 2D")
        return self.shape[:, 0, 0]

    def rows(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def restrict(self, label: int) -> "BoundaryFrame":
        r = self.rows(label)
        return BoundaryFrame(self.nodes[r], self.labels[r], self.normal[r], self.tangents[r],
                             self.projector[r], self.shape[r], self.n_vertices)


def _node_neighbors(facets, n_vertices):
    nbrs = [set() for _ in range(n_vertices)]
    for f in facets:
        for a in f:
            nbrs[a].update(int(b) for b in f if b != a)
    return nbrs


def compute_boundary_frames(mesh: Mesh) -> BoundaryFrame:
    d = mesh.dim
    nodes = mesh.boundary_nodes()
    local = -np.ones(mesh.n_vertices, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    meas = mesh.facet_measures
    if np.any(meas <= 0):
        raise MeshError("degenerate boundary facet (zero measure)")
    acc = np.zeros((len(nodes), d))
    for k in range(d):
        np.add.at(acc, local[mesh.boundary_facets[:, k]], meas[:, None] * mesh.facet_normals)
    normal = acc / np.linalg.norm(acc, axis=1)[:, None]

    labels = np.empty(len(nodes), dtype=np.int64)
    for k in range(d):
        labels[local[mesh.boundary_facets[:, k]]] = mesh.boundary_labels

    if d == 2:
        tangents = np.stack([-normal[:, 1], normal[:, 0]], axis=1)[:, None, :]
    else:
        axis = np.eye(3)[np.argmin(np.abs(normal), axis=1)]
        t1 = axis - np.einsum("ij,ij->i", axis, normal)[:, None] * normal
        t1 /= np.linalg.norm(t1, axis=1)[:, None]
        t2 = np.cross(normal, t1)
        tangents = np.stack([t1, t2], axis=1)
    projector = np.eye(d)[None] - np.einsum("ni,nj->nij", normal, normal)

    X = mesh.vertices
    nbrs = _node_neighbors(mesh.boundary_facets, mesh.n_vertices)
    shape = np.zeros((len(nodes), d - 1, d - 1))
    for r, g in enumerate(nodes):
        nb = np.array(sorted(nbrs[g]))
        dx = X[nb] - X[g]
        dn = normal[local[nb]] - normal[r]
        if d == 2:
            tau = tangents[r, 0]
            ahead = dx @ tau > 0
            if ahead.sum() != 1 or len(nb) != 2:
                raise MeshError(f"boundary node {g} is not on a simple closed curve")
            nxt, prv = nb[ahead][0], nb[~ahead][0]
            ds = np.linalg.norm(X[nxt] - X[g]) + np.linalg.norm(X[g] - X[prv])
            shape[r, 0, 0] = (normal[local[nxt]] - normal[local[prv]]) @ tau / ds
        else:
            A = dx @ tangents[r].T  # tangential coordinates of neighbours
            Cm = dn @ tangents[r].T
            S, *_ = np.linalg.lstsq(A, Cm, rcond=None)  # Cm ~ A @ S
            S = S.T
            shape[r] = 0.5 * (S + S.T)
    return BoundaryFrame(nodes, labels, normal, tangents, projector, shape, mesh.n_vertices)


def gamma1_loops(mesh: Mesh) -> list[np.ndarray]:
    """Ordered vertex loops of GAMMA1 in 2D (each a closed curve)."""
    if mesh.dim != 2:
        raise ValueError("loops only exist in 2D")
    facets = mesh.boundary_facets[mesh.boundary_labels == GAMMA1]
    nbrs = {}
    for a, b in facets:
        nbrs.setdefault(int(a), []).append(int(b))
        nbrs.setdefault(int(b), []).append(int(a))
    seen, loops = set(), []
    for start in sorted(nbrs):
        if start in seen:
            continue
        loop, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = [n for n in nbrs[cur] if n != prev]
            nxt = nxt[0] if prev is not None else nbrs[cur][0]
            if nxt == start:
                break
            loop.append(nxt)
            seen.add(nxt)
            prev, cur = cur, nxt
        loops.append(np.array(loop))
    return loops


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def _closest_on_segments(P, A, B):
    AB = B - A
    t = np.einsum("pfi,fi->pf", P[:, None, :] - A[None], AB) / np.einsum("fi,fi->f", AB, AB)
    t = np.clip(t, 0.0, 1.0)
    return A[None] + t[..., None] * AB[None]


def _closest_on_triangles(P, A, B, C):
    AB, AC = B - A, C - A
    n = np.cross(AB, AC)
    nn = np.einsum("fi,fi->f", n, n)
    AP = P[:, None, :] - A[None]
    # barycentric coordinates of the in-plane projection
    v = np.einsum("pfi,fi->pf", np.cross(AP, AC[None]), n) / nn
    w = np.einsum("pfi,fi->pf", np.cross(AB[None], AP), n) / nn
    u = 1 - v - w
    proj = A[None] + v[..., None] * AB[None] + w[..., None] * AC[None]
    inside = (u >= 0) & (v >= 0) & (w >= 0)
    best = proj
    bestd = np.where(inside, np.linalg.norm(P[:, None, :] - proj, axis=-1), np.inf)
    for X, Y in ((A, B), (B, C), (C, A)):
        q = _closest_on_segments(P, X, Y)
        dq = np.linalg.norm(P[:, None, :] - q, axis=-1)
        take = dq < bestd
        best = np.where(take[..., None], q, best)
        bestd = np.where(take, dq, bestd)
    return best


def closest_boundary_points(mesh: Mesh, points, facet_ids, chunk: int = 256):
    """Distance to, and closest point on, the union of the given facets."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    F = mesh.vertices[mesh.boundary_facets[facet_ids]]
    dist = np.empty(len(points))
    close = np.empty_like(points)
    for s in range(0, len(points), chunk):
        P = points[s:s + chunk]
        if mesh.dim == 2:
            Q = _closest_on_segments(P, F[:, 0], F[:, 1])
        else:
            Q = _closest_on_triangles(P, F[:, 0], F[:, 1], F[:, 2])
        dd = np.linalg.norm(P[:, None, :] - Q, axis=-1)
        j = np.argmin(dd, axis=1)
        dist[s:s + chunk] = dd[np.arange(len(P)), j]
        close[s:s + chunk] = Q[np.arange(len(P)), j]
    return dist, close


# --------------------------------------------------------------------------
# damping collar and cutoff fields
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegionFields:
    """Collar masks (per cell), damping coefficient, cutoff and normal-extension fields."""

    eps: float
    a0: float
    x0: np.ndarray
    delta: float
    R: float
    dist_gamma0: np.ndarray
    omega: np.ndarray
    omega_eps: np.ndarray
    omega_half: np.ndarray
    node_omega: np.ndarray
    a_field: np.ndarray
    xi_eps: np.ndarray
    k_field: np.ndarray

    def xi_ratio(self, mesh: Mesh) -> np.ndarray:
        """``|grad xi|^2 / xi`` per cell (cell-mean xi), NaN where xi vanishes."""
        xi_c = self.xi_eps[mesh.cells].mean(axis=1)
        g = np.einsum("ca,cak->ck", self.xi_eps[mesh.cells], mesh.grads)
        out = np.full(mesh.n_cells, np.nan)
        pos = xi_c > 0
        out[pos] = np.einsum("ck,ck->c", g[pos], g[pos]) / xi_c[pos]
        return out


def build_region_fields(mesh: Mesh, eps: float, a0: float, profile: str = "constant",
                        x0=None, delta: float = float("nan"),
                        frames: BoundaryFrame | None = None) -> RegionFields:
    """Collar of width ``eps`` around GAMMA0 with damping ``a0`` and the
    ``xi = s**2`` cutoff (``s`` a linear ramp from depth ``eps`` to ``eps/2``).

    ``k_field`` is the unit direction to the nearest boundary point, equal to
    the nodal normal on the boundary, scaled linearly to zero at depth ``eps``.
    """
    if not eps > 0 or not a0 > 0:
        raise ParameterError("eps and a0 must be positive")
    if profile not in ("constant", "ramp"):
        raise ParameterError(f"unknown damping profile {profile!r}")
    f0, f1 = mesh.facets(GAMMA0), mesh.facets(GAMMA1)
    if len(f0) == 0 or len(f1) == 0:
        raise ParameterError("mesh must be classified with non-empty GAMMA0 and GAMMA1")
    X = mesh.vertices
    d0, _ = closest_boundary_points(mesh, X, f0)
    gap = d0[mesh.boundary_nodes(GAMMA1)].min()
    if eps >= gap:
        raise RegionOverlapError(f"eps={eps} reaches GAMMA1 (distance {gap:.4g})")

    dc = d0[mesh.cells]
    omega = dc.min(axis=1) < eps
    omega_half = dc.min(axis=1) < eps / 2
    node_omega = d0 < eps

    if profile == "constant":
        a = np.where(omega, a0, 0.0)
    else:
        depth = dc.mean(axis=1)
        a = np.where(omega, a0 * (2.0 - np.clip(depth / eps, 0.0, 1.0)), 0.0)

    s = np.clip((eps - d0) / (eps / 2), 0.0, 1.0)
    xi = s * s

    if frames is None:
        frames = compute_boundary_frames(mesh)
    dall, close = closest_boundary_points(mesh, X, np.arange(len(mesh.boundary_facets)))
    k = np.zeros_like(X)
    inner = (dall > 0) & (dall < eps)
    k[inner] = (close[inner] - X[inner]) / dall[inner, None] * (1 - dall[inner] / eps)[:, None]
    k[frames.nodes] = frames.normal

    x0 = np.zeros(mesh.dim) if x0 is None else np.asarray(x0, dtype=float)
    R = float(np.linalg.norm(X - x0, axis=1).max())
    return RegionFields(float(eps), float(a0), x0, float(delta), R, d0, omega, omega.copy(),
                        omega_half, node_omega, a, xi, k)
