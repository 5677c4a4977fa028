"""Energy bookkeeping, decay fitting, the trace constant, and quadrature audits
of the multiplier identities over stored trajectories.

Time integrals over ``[0, T]`` are taken with the midpoint rule on the
stored grid: every integrand is a quadratic form evaluated at
``(U_n + U_{n+1}) / 2``. For the implicit midpoint integrator this makes the
time discretisation of each identity exact, so a residual measures spatial
consistency only.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SystemMatrices, assemble_coupling, vector_dofs
from .errors import AuditError, SolverError, StateError
from .evolution import Trajectory, step_energies
from .geometry import GAMMA0, GAMMA1, RegionFields
from .quadrature import simplex_rule
from .tangential import lambda_star, scalar_boundary_mass, vectorize

ENERGY_COLUMNS = ("t", "E_total", "E_omega", "E_gamma", "diss_a_cum", "diss_g_cum", "identity_residual")


# --------------------------------------------------------------------------
# energy
# --------------------------------------------------------------------------

def energy(U, sm: SystemMatrices) -> tuple[float, float]:
    """``(E_omega, E_gamma)``; their sum is half the squared phase-space norm."""
    X = sm.pack(U) if not isinstance(U, np.ndarray) else U
    return step_energies(X, sm)


@dataclass
class EnergyTrace:
    t: np.ndarray
    E_omega: np.ndarray
    E_gamma: np.ndarray
    diss_a_cum: np.ndarray
    diss_g_cum: np.ndarray
    identity_residual: np.ndarray

    @property
    def E_total(self) -> np.ndarray:
        return self.E_omega + self.E_gamma

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "EnergyTrace":
        ca = np.concatenate([[0.0], np.cumsum(traj.diss_a)])
        cg = np.concatenate([[0.0], np.cumsum(traj.diss_g)])
        E = traj.energy
        return cls(traj.t.copy(), traj.E_omega.copy(), traj.E_gamma.copy(), ca, cg, E - E[0] + ca + cg)

    @classmethod
    def from_energy(cls, t, E) -> "EnergyTrace":
        """Bare trace (e.g. synthetic data): all energy booked as bulk, no dissipation record."""
        t = np.asarray(t, dtype=float)
        E = np.asarray(E, dtype=float)
        z = np.zeros_like(t)
        return cls(t, E, z.copy(), z.copy(), z.copy(), z.copy())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ENERGY_COLUMNS)
        for row in zip(self.t, self.E_total, self.E_omega, self.E_gamma, self.diss_a_cum,
                       self.diss_g_cum, self.identity_residual):
            w.writerow([f"{x:.17g}" for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "EnergyTrace":
        with open(path) as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != ENERGY_COLUMNS:
            raise StateError(f"unexpected energy CSV header {rows[0]}")
        A = np.array(rows[1:], dtype=float).reshape(-1, len(ENERGY_COLUMNS))
        return cls(A[:, 0], A[:, 2], A[:, 3], A[:, 4], A[:, 5], A[:, 6])


def _grid_index(traj: Trajectory, s: float) -> int:
    x = s / traj.dt
    n = int(round(x))
    if abs(x - n) > 1e-9 * max(1.0, abs(x)) or not 0 <= n <= traj.n_steps:
        raise StateError(f"time {s} is not on the trajectory grid (dt={traj.dt}, T={traj.t[-1]})")
    return n


def decay_identity_residual(traj: Trajectory, s1: float, s2: float) -> float:
    """``E(s2) - E(s1) + dissipation over [s1, s2]``; zero for an exact integrator."""
    if not s1 < s2:
        raise StateError("need s1 < s2")
    n1, n2 = _grid_index(traj, s1), _grid_index(traj, s2)
    E = traj.energy
    return float(E[n2] - E[n1] + traj.diss_a[n1:n2].sum() + traj.diss_g[n1:n2].sum())


def max_pairwise_identity_residual(traj: Trajectory) -> float:
    """Largest ``|decay_identity_residual|`` over all grid pairs, in O(n)."""
    r = EnergyTrace.from_trajectory(traj).identity_residual
    return float(r.max() - r.min())


# --------------------------------------------------------------------------
# decay fit
# --------------------------------------------------------------------------

@dataclass
class DecayFit:
    accepted: bool
    K1: float = float("nan")
    K2: float = float("nan")
    window: tuple[float, float] = (float("nan"), float("nan"))
    goodness: float = float("nan")
    rate: float = float("nan")
    diagnostic: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def fit_decay(trace, min_correlation: float = 0.99, n_starts: int = 200, min_points: int = 20,
              normalize: bool = True) -> DecayFit:
    """Log-linear envelope ``E(t) <= K1 exp(-t/K2) E(0)`` over the longest good suffix.

    Candidate windows all end at the last sample; the earliest start whose
    least-squares line through ``log E`` has correlation magnitude at least
    ``min_correlation`` wins. ``K2 = -1/slope``; ``K1`` is the intercept
    lifted just enough for the envelope to hold on the window, and never
    below 1. With ``normalize=False`` the raw ``log E`` is fitted and the
    reported ``K1`` multiplies nothing (it is the envelope of ``E`` itself).
    """
    t = np.asarray(trace.t if hasattr(trace, "t") else trace[0], dtype=float)
    E = np.asarray(trace.E_total if hasattr(trace, "E_total") else trace[1], dtype=float)
    if len(t) < min_points or np.any(~np.isfinite(E)):
        return DecayFit(False, diagnostic="trace too short or not finite")
    if np.any(E <= 0):
        return DecayFit(False, diagnostic="nonpositive energy in trace")
    y = np.log(E / E[0]) if normalize else np.log(E)
    starts = np.unique(np.linspace(0, len(t) - min_points, n_starts).astype(int))
    for i0 in starts:
        ts, ys = t[i0:], y[i0:]
        if np.ptp(ys) == 0:
            continue
        slope, icpt = np.polyfit(ts, ys, 1)
        corr = float(np.corrcoef(ts, ys)[0, 1])
        if abs(corr) >= min_correlation:
            if slope >= 0:
                return DecayFit(False, goodness=abs(corr), diagnostic="non-decaying trace (fitted slope >= 0)")
            K2 = -1.0 / slope
            lift = float(np.max(ys - (icpt + slope * ts)))
            K1 = max(1.0, math.exp(icpt + max(lift, 0.0)))
            return DecayFit(True, K1, K2, (float(ts[0]), float(ts[-1])), abs(corr), -slope)
    rel_drop = E[-1] / E[0]
    if rel_drop > 1 - 1e-6:
        return DecayFit(False, diagnostic="non-decaying trace (energy does not drop)")
    return DecayFit(False, diagnostic=f"no suffix window reaches correlation {min_correlation}")


# --------------------------------------------------------------------------
# trace constant
# --------------------------------------------------------------------------

def trace_mass(sm: SystemMatrices) -> sp.csr_matrix:
    """``int_GAMMA1 |u|^2`` as a matrix on the free bulk dofs."""
    lay = sm.bops.layout
    Ms = sp.kron(_gamma1_scalar_mass(sm), sp.identity(sm.dim), format="csr")
    P = sp.csr_matrix((np.ones(lay.n * sm.dim),
                       (np.arange(lay.n * sm.dim), (lay.nodes[:, None] * sm.dim + np.arange(sm.dim)).ravel())),
                      shape=(lay.n * sm.dim, sm.mesh.n_vertices * sm.dim))
    T = (P.T @ Ms @ P).tocsr()
    return T[sm.free][:, sm.free].tocsr()


def _gamma1_scalar_mass(sm):
    return scalar_boundary_mass(sm.bops.layout)


@dataclass
class PoincareResult:
    C_p: float
    theta: float
    vector: np.ndarray
    iterations: int


def poincare_constant(sm: SystemMatrices, tol: float = 1e-13, maxiter: int = 20000,
                      seed: int = 0) -> PoincareResult:
    """Smallest ``C`` with ``int_GAMMA1 |u|^2 <= C^2 u^T K u`` over discrete fields.

    Power iteration on ``K^{-1} T`` (one sparse factor of ``K``) with a
    Rayleigh-quotient stopping test; Lanczos on the same pencil takes over if
    the spectral gap is too small for the iteration cap.
    """
    T = trace_mass(sm)
    lu = spla.splu(sp.csc_matrix(sm.K))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(sm.n_u)
    theta = 0.0
    for it in range(1, maxiter + 1):
        y = lu.solve(T @ x)
        ny = math.sqrt(max(y @ (sm.K @ y), 0.0))
        if ny == 0:
            raise SolverError("trace mass annihilates the iterate")
        x = y / ny
        new = float(x @ (T @ x))
        if abs(new - theta) <= tol * new:
            theta = new
            break
        theta = new
    else:
        Kinv = spla.LinearOperator(sm.K.shape, matvec=lu.solve)
        try:
            vals, vecs = spla.eigsh(T, k=1, M=sm.K, Minv=Kinv, which="LA", tol=tol)
        except spla.ArpackNoConvergence as exc:
            raise SolverError("trace-constant eigen-iteration did not converge") from exc
        theta, x = float(vals[0]), vecs[:, 0] / math.sqrt(vecs[:, 0] @ (sm.K @ vecs[:, 0]))
        it = maxiter
    return PoincareResult(math.sqrt(theta), theta, x, it)


def poincare_constant_dense(sm: SystemMatrices) -> float:
    """Dense generalized symmetric eigensolve of the same pencil (small meshes)."""
    T = trace_mass(sm).toarray()
    vals = sla.eigh(T, sm.K.toarray(), eigvals_only=True)
    return math.sqrt(float(vals[-1]))


# --------------------------------------------------------------------------
# quadrature operators for the bulk identities
# --------------------------------------------------------------------------

def _sigma_phi(g, alpha, lam):
    """``sigma(phi_{a,c})`` for each cell, node ``a`` and component ``c``: ``(C, k, d, d, d)``
    indexed ``[cell, a, c, i, j]``."""
    d = g.shape[2]
    I = np.eye(d)
    C, k, _ = g.shape
    S = np.zeros((C, k, d, d, d))
    for c in range(d):
        S[:, :, c, c, :] += alpha * g
        S[:, :, c, :, c] += alpha * g
        S[:, :, c] += lam * g[:, :, c][:, :, None, None] * I
    return S


class BulkForms:
    """Sparse bilinear forms on the free bulk dofs (and boundary dofs) used by the audits."""

    def __init__(self, sm: SystemMatrices):
        self.sm = sm
        m = sm.mesh
        self.d = d = m.dim
        self.g = m.grads
        self.vol = m.volumes
        self.cells = m.cells
        self.nd = m.n_vertices * d
        bary, wq = simplex_rule(d + 1)
        self.bary, self.wq = bary, wq
        self.xq = np.einsum("qa,cai->cqi", bary, m.vertices[m.cells])  # (C, nq, d)
        self.S = _sigma_phi(self.g, sm.params.alpha, sm.params.lam)
        # boundary facet quadrature
        fb, fw = simplex_rule(d)
        self.fbary, self.fw = fb, fw
        self.dofs = vector_dofs(m.cells, d)

    # ---- generic pieces -------------------------------------------------
    def restrict(self, A, rows="u", cols="u"):
        if rows == "u":
            A = A[self.sm.free]
        return (A[:, self.sm.free] if cols == "u" else A).tocsr()

    def _cell_form(self, loc):
        k = self.dofs.shape[1]
        rows = np.repeat(self.dofs, k, axis=1).ravel()
        cols = np.tile(self.dofs, (1, k)).ravel()
        A = sp.coo_matrix((loc.reshape(len(loc), -1).ravel(), (rows, cols)), shape=(self.nd, self.nd)).tocsr()
        return self.restrict(A)

    def nodal_at_quad(self, field):
        """P1 nodal field (scalar or vector) at the cell quadrature points."""
        return np.einsum("qa,ca...->cq...", self.bary, np.asarray(field)[self.cells])

    def mass_form(self, weight_q):
        """``int w u.v`` with ``w`` given at quadrature points ``(C, nq)``."""
        ws = weight_q * self.wq[None] * self.vol[:, None]
        loc = np.einsum("cq,qa,qb->cab", ws, self.bary, self.bary)
        d = self.d
        full = np.einsum("cab,ij->caibj", loc, np.eye(d))
        return self._cell_form(full)

    def advect_form(self, q_q, weight_q):
        """``int w v . (q . grad) u``: rows test ``v``, columns ``u``."""
        ws = weight_q * self.wq[None] * self.vol[:, None]
        qg = np.einsum("cqi,cbi->cqb", q_q, self.g)
        loc = np.einsum("cq,qa,cqb->cab", ws, self.bary, qg)
        full = np.einsum("cab,ij->caibj", loc, np.eye(self.d))
        return self._cell_form(full)

    def stress_form(self, factor):
        """``sum_c factor_c sigma(u):eps(u)`` per cell (``factor`` absorbs the volume)."""
        # sigma(phi_ai) : grad(phi_bj) = sigma(phi_ai)[j, :] . g_b
        loc = np.einsum("caikl,cbl->caikb", self.S, self.g)  # [c,a,i,k,b] = sigma_ai[k,:].g_b
        loc = np.transpose(loc, (0, 1, 2, 4, 3))  # [c,a,i,b,j]
        return self._cell_form(factor[:, None, None, None, None] * loc)

    def stress_gradq_form(self, Gq):
        """``int sigma(u) : (grad u grad q)`` with ``Gq[c, j, k] = d_k q_j`` cellwise."""
        h = np.einsum("cbj,cjk->cbk", self.g, Gq)
        loc = np.einsum("caikl,cbl->caikb", self.S, h)
        loc = np.transpose(loc, (0, 1, 2, 4, 3))
        return self._cell_form(self.vol[:, None, None, None, None] * loc)

    def stress_gradpsi_form(self, psi):
        """``int sigma(u) : (u (x) grad psi)``: columns are the second ``u``."""
        gpsi = np.einsum("ca,cak->ck", psi[self.cells], self.g)
        s = np.einsum("caiek,ck->caie", self.S, gpsi)  # (sigma(phi_ai) grad psi)[e]
        k = self.g.shape[1]
        loc = np.einsum("caie,b->caibe", s, np.full(k, 1.0 / k)) * self.vol[:, None, None, None, None]
        return self._cell_form(loc)

    def cell_gradient(self, field):
        return np.einsum("ca...,cak->c...k", np.asarray(field)[self.cells], self.g)

    # ---- boundary facets ------------------------------------------------
    def facet_data(self, label):
        m = self.sm.mesh
        ids = m.facets(label)
        F = m.boundary_facets[ids]
        X = m.vertices[F]
        xq = np.einsum("qa,fai->fqi", self.fbary, X)
        ws = m.facet_measures[ids][:, None] * self.fw[None]
        return ids, F, xq, ws, m.facet_normals[ids], m.facet_cells[ids]

    def facet_trace_mass(self, label, weight_q):
        """``int_label w u.v`` on bulk traces."""
        ids, F, xq, ws, nrm, own = self.facet_data(label)
        loc = np.einsum("fq,qa,qb->fab", weight_q * ws, self.fbary, self.fbary)
        d = self.d
        dofs = vector_dofs(F, d)
        full = np.einsum("fab,ij->faibj", loc, np.eye(d)).reshape(len(F), dofs.shape[1], dofs.shape[1])
        rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
        cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
        return self.restrict(sp.coo_matrix((full.ravel(), (rows, cols)), shape=(self.nd, self.nd)).tocsr())

    def facet_stress_energy(self, label, weight_int):
        """``sum_f (int_f w) sigma:eps`` of the owning cell."""
        ids, F, xq, ws, nrm, own = self.facet_data(label)
        factor = np.zeros(len(self.vol))
        np.add.at(factor, own, weight_int)
        return self.stress_form(factor)

    def facet_traction_advect(self, label, q_field):
        """``int_label (sigma(u) nu) . (q . grad) u`` with the owning cell's constant gradients."""
        ids, F, xq, ws, nrm, own = self.facet_data(label)
        qbar = np.einsum("fq,fqi->fi", ws, self.nodal_at_quad_facet(q_field, F))  # int_f q
        S = self.S[own]  # (f, k, d, d, d)
        t = np.einsum("faiec,fc->faie", S, nrm)  # (sigma(phi_ai) nu)[e]
        qg = np.einsum("fi,fbi->fb", qbar, self.g[own])
        loc = np.einsum("faie,fb->faibe", t, qg)
        dofs = self.dofs[own]
        k = dofs.shape[1]
        rows = np.repeat(dofs, k, axis=1).ravel()
        cols = np.tile(dofs, (1, k)).ravel()
        return self.restrict(sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(self.nd, self.nd)).tocsr())

    def nodal_at_quad_facet(self, field, F):
        return np.einsum("qa,fa...->fq...", self.fbary, np.asarray(field)[F])

    def gamma1_velocity_advect(self, q_field):
        """``int_GAMMA1 w . (q . grad) u``: rows boundary dofs (frame coordinates), columns bulk ``u``."""
        sm = self.sm
        lay = sm.bops.layout
        ids, F, xq, ws, nrm, own = self.facet_data(GAMMA1)
        qq = self.nodal_at_quad_facet(q_field, F)  # (f, nq, d)
        qg = np.einsum("fqi,fbi->fqb", qq, self.g[own])  # (f, nq, kb)
        Floc = lay.frame.local[F]  # boundary-local node ids
        vals = np.einsum("fq,qa,fqb->fab", ws, self.fbary, qg)  # (f, a(facet node), b(cell node))
        d = self.d
        rows, cols, data = [], [], []
        cellnodes = self.cells[own]
        for e in range(d):
            # boundary dof of facet node a, ambient component e -> frame vector entry
            for kk in range(d - 1):
                r = lay.tangential_dofs(Floc, kk)
                coef = lay.frame.tangents[Floc, kk, e]
                rows.append(np.repeat(r[:, :, None], cellnodes.shape[1], axis=2).ravel())
                cols.append(np.repeat((cellnodes * d + e)[:, None, :], F.shape[1], axis=1).ravel())
                data.append((vals * coef[:, :, None]).ravel())
            r = lay.normal_dofs(Floc)
            coef = lay.frame.normal[Floc, e]
            rows.append(np.repeat(r[:, :, None], cellnodes.shape[1], axis=2).ravel())
            cols.append(np.repeat((cellnodes * d + e)[:, None, :], F.shape[1], axis=1).ravel())
            data.append((vals * coef[:, :, None]).ravel())
        A = sp.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(lay.ndof, self.nd)).tocsr()
        return A[:, sm.free].tocsr()


# --------------------------------------------------------------------------
# identity reports
# --------------------------------------------------------------------------

@dataclass
class IdentityReport:
    name: str
    terms: dict
    h: float
    residual: float = 0.0
    scale: float = 1.0
    order: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.residual = float(sum(self.terms.values()))

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else abs(self.residual)

    def to_dict(self) -> dict:
        return {"name": self.name, "terms": {k: float(v) for k, v in self.terms.items()},
                "residual": self.residual, "relative_residual": self.relative, "scale": self.scale,
                "h": self.h, "order": self.order, "info": self.info}


def _midpoints(traj: Trajectory, sm: SystemMatrices):
    if not traj.full:
        raise StateError("multiplier audits need every time step stored (store_stride = 1)")
    X = traj.states
    return 0.5 * (X[1:] + X[:-1])


def _qform(A, X, Y):
    """``sum_n X[n] . A Y[n]`` for row-stacked samples."""
    return float(np.einsum("ni,ni->", X, (A @ Y.T).T))


class _Run:
    """Midpoint samples and end states of a trajectory split into blocks."""

    def __init__(self, traj, sm):
        b = sm.blocks
        Xm = _midpoints(traj, sm)
        self.dt = traj.dt
        self.um, self.vm, self.zm, self.wm = (Xm[:, b[k]] for k in "uvzw")
        self.end = {0: traj.states[0], 1: traj.states[-1]}
        self.b = b

    def at(self, which, block):
        return self.end[which][self.b[block]]

    def integral(self, A, left, right):
        return self.dt * _qform(A, getattr(self, left + "m"), getattr(self, right + "m"))

    def bracket(self, A, left, right):
        return float(self.at(1, left) @ (A @ self.at(1, right)) - self.at(0, left) @ (A @ self.at(0, right)))


def bulk_flux_identity(traj: Trajectory, sm: SystemMatrices, q_field, name="bulk_flux",
                       gamma1_traction: str = "velocity", forms: BulkForms | None = None) -> IdentityReport:
    """Multiplier ``2 (q . grad) u`` applied to the bulk equation.

    Signed terms sum to zero for exact solutions. On GAMMA1 the traction is
    replaced by the boundary velocity (``gamma1_traction="velocity"``) or
    taken from the adjacent cell (``"cell"``); on GAMMA0 it is always the cell
    traction.
    """
    F = forms or BulkForms(sm)
    q = np.asarray(q_field, dtype=float)
    run = _Run(traj, sm)
    qq = F.nodal_at_quad(q)
    ones = np.ones(qq.shape[:2])
    Gq = F.cell_gradient(q)  # (C, d, d): [c, j, k] = d_k q_j
    divq = np.einsum("cjj->c", Gq)
    a_c = np.asarray(sm.a_field, dtype=float)

    A_adv = F.advect_form(qq, ones)
    A_adv_a = F.advect_form(qq, a_c[:, None] * ones)
    M_div = F.mass_form(divq[:, None] * ones)
    K_div = F.stress_form(divq * F.vol)
    K_gq = F.stress_gradq_form(Gq)

    terms = {
        "-[2 int u'.(q.grad)u]": -2.0 * run.bracket(A_adv, "v", "u"),
        "int div q sigma:eps": run.integral(K_div, "u", "u"),
        "-int div q |u'|^2": -run.integral(M_div, "v", "v"),
        "-2 int sigma:(grad u grad q)": -2.0 * run.integral(K_gq, "u", "u"),
        "-2 int a u'.(q.grad)u": -2.0 * run.integral(A_adv_a, "v", "u"),
    }
    for label, tag in ((GAMMA0, "G0"), (GAMMA1, "G1")):
        ids, Fc, xq, ws, nrm, own = F.facet_data(label)
        qn_q = np.einsum("fqi,fi->fq", F.nodal_at_quad_facet(q, Fc), nrm)
        qn_int = np.einsum("fq,fq->f", ws, qn_q)
        terms[f"int_{tag} (q.nu)|u'|^2"] = run.integral(F.facet_trace_mass(label, qn_q), "v", "v")
        terms[f"-int_{tag} (q.nu) sigma:eps"] = -run.integral(F.facet_stress_energy(label, qn_int), "u", "u")
        if label == GAMMA1 and gamma1_traction == "velocity":
            A = F.gamma1_velocity_advect(q)
            terms["2 int_G1 z'.(q.grad)u"] = 2.0 * run.integral(A, "w", "u")
        else:
            terms[f"2 int_{tag} (sigma nu).(q.grad)u"] = 2.0 * run.integral(F.facet_traction_advect(label, q), "u", "u")
    scale = _energy_scale(traj)
    return IdentityReport(name, terms, sm.mesh.h, scale=scale,
                          info={"gamma1_traction": gamma1_traction})


def psi_identity(traj: Trajectory, sm: SystemMatrices, psi, name="psi", forms: BulkForms | None = None,
                 scale_by: float = 1.0) -> IdentityReport:
    """Multiplier ``2 psi u`` applied to the bulk equation (``psi`` nodal, P1)."""
    F = forms or BulkForms(sm)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (sm.mesh.n_vertices,)).copy()
    run = _Run(traj, sm)
    pq = F.nodal_at_quad(psi)
    a_c = np.asarray(sm.a_field, dtype=float)
    M_psi = F.mass_form(pq)
    M_apsi = F.mass_form(a_c[:, None] * pq)
    K_psi = F.stress_form(psi[F.cells].mean(axis=1) * F.vol)
    K_gpsi = F.stress_gradpsi_form(psi)
    B_psi = assemble_coupling(sm.mesh, sm.bops, psi[sm.bops.layout.nodes])[:, sm.free]
    c = 2.0 * scale_by
    terms = {
        "[2 int u' psi u]": c * run.bracket(M_psi, "v", "u"),
        "-2 int psi |u'|^2": -c * run.integral(M_psi, "v", "v"),
        "-2 int_G1 z' psi u": -c * run.integral(B_psi, "w", "u"),
        "2 int psi sigma:eps": c * run.integral(K_psi, "u", "u"),
        "2 int sigma:(u grad psi)": c * run.integral(K_gpsi, "u", "u"),
        "2 int a psi u'.u": c * run.integral(M_apsi, "v", "u"),
    }
    return IdentityReport(name, terms, sm.mesh.h, scale=_energy_scale(traj), info={"weight": scale_by})


def _energy_scale(traj):
    return float(traj.energy[0] * max(traj.t[-1], traj.dt))


# ---- GAMMA1 membrane multiplier (closed curves) --------------------------

class CurveQuadrature:
    """Gauss points on the GAMMA1 segments with oriented arc-length derivatives."""

    def __init__(self, sm: SystemMatrices):
        lay = sm.bops.layout
        if lay.dim != 2:
            raise NotImplementedError("the membrane multiplier audit is implemented for d = 2")
        self.lay = lay
        self.sm = sm
        bary, w = simplex_rule(2)
        self.bary = bary
        self.F = lay.facets
        self.ws = lay.measures[:, None] * w[None]
        self.sgn = lay.orientation  # +1 if facet order follows tangent
        self.inv_len = self.sgn / lay.measures
        self.kappa = lay.frame.curvature
        self.tau = lay.frame.tangents[:, 0]

    def val(self, nodal):
        return np.einsum("qa,fa...->fq...", self.bary, np.asarray(nodal)[self.F])

    def ds(self, nodal):
        n = np.asarray(nodal)[self.F]
        return (n[:, 1] - n[:, 0]) * self.inv_len.reshape((-1,) + (1,) * (n.ndim - 2))


def membrane_identity(traj: Trajectory, sm: SystemMatrices, q_field, name="membrane") -> IdentityReport:
    """Multiplier ``2 p d_s z`` (``p = q . tau``) applied to the GAMMA1 equations in d = 2.

    With ``eps = d_s z_T + kappa z_nu`` and ``eta = d_s z_nu - kappa z_T`` (the frame
    components of ``d_s z``) the signed terms below sum to zero for smooth
    solutions on a closed curve.
    """
    cq = CurveQuadrature(sm)
    lay = cq.lay
    n = lay.n
    b = sm.blocks
    prm = sm.params
    c_el = 2.0 * prm.alpha + lambda_star(prm.lam, prm.alpha)
    fcoef = _nodal_coef(prm.f, n)
    gcoef = _nodal_coef(prm.g, n)
    hcoef = _nodal_coef(prm.h, n)
    q_nodes = np.asarray(q_field, dtype=float)[lay.nodes]
    p = np.einsum("ni,ni->n", q_nodes, cq.tau)
    P, dP = cq.val(p), cq.ds(p)[:, None]
    K, dK = cq.val(cq.kappa), cq.ds(cq.kappa)[:, None]
    fP, d_fP = cq.val(fcoef * p), cq.ds(fcoef * p)[:, None]
    G = cq.val(gcoef)
    d_hP = cq.ds(hcoef * p)[:, None]
    ws = cq.ws
    d = sm.dim

    def split(Z):
        Z = Z.reshape(-1)
        return Z[:n], Z[n:]

    def geom(Z):
        zT, zN = split(Z)
        ZT, ZN = cq.val(zT), cq.val(zN)
        dZT, dZN = cq.ds(zT)[:, None], cq.ds(zN)[:, None]
        eps = dZT + K * ZN
        eta = dZN - K * ZT
        return ZT, ZN, dZN, eps, eta, dZT

    def trace_frame(V):
        """Ambient bulk velocity on GAMMA1 nodes -> (T, nu) components at Gauss points."""
        full = np.zeros(sm.mesh.n_vertices * d)
        full[sm.free] = V
        amb = full.reshape(-1, d)[lay.nodes]
        return cq.val(np.einsum("ni,ni->n", amb, cq.tau)), cq.val(np.einsum("ni,ni->n", amb, lay.frame.normal))

    def bracket_term(X):
        z, w = X[b["z"]], X[b["w"]]
        ZT, ZN, dZN, eps, eta, _ = geom(z)
        WT, WN = (cq.val(x) for x in split(w))
        return 2.0 * np.sum(ws * fP * (WT * eps + WN * eta))

    acc = dict.fromkeys([
        "int d_s(f p)|z'|^2", "2 int g p z'.d_s z", "-int d_s(h p)|z|^2", "2 int p u'.d_s z",
        "c int d_s p eps^2", "2c int p kappa eps eta", "2 int d_s p eta d_s z_nu",
        "-int d_s p (d_s z_nu)^2", "-2 int p d_s(kappa z_T) d_s z_nu"], 0.0)
    Xm = _midpoints(traj, sm)
    dt = traj.dt
    for X in Xm:
        z, w, v = X[b["z"]], X[b["w"]], X[b["v"]]
        ZT, ZN, dZN, eps, eta, dZT = geom(z)
        WT, WN = (cq.val(x) for x in split(w))
        VT, VN = trace_frame(v)
        acc["int d_s(f p)|z'|^2"] += dt * np.sum(ws * d_fP * (WT**2 + WN**2))
        acc["2 int g p z'.d_s z"] += dt * 2.0 * np.sum(ws * G * P * (WT * eps + WN * eta))
        acc["-int d_s(h p)|z|^2"] -= dt * np.sum(ws * d_hP * (ZT**2 + ZN**2))
        acc["2 int p u'.d_s z"] += dt * 2.0 * np.sum(ws * P * (VT * eps + VN * eta))
        acc["c int d_s p eps^2"] += dt * c_el * np.sum(ws * dP * eps**2)
        acc["2c int p kappa eps eta"] += dt * 2.0 * c_el * np.sum(ws * P * K * eps * eta)
        acc["2 int d_s p eta d_s z_nu"] += dt * 2.0 * np.sum(ws * dP * eta * dZN)
        acc["-int d_s p (d_s z_nu)^2"] -= dt * np.sum(ws * dP * dZN**2)
        acc["-2 int p d_s(kappa z_T) d_s z_nu"] -= dt * 2.0 * np.sum(ws * P * (dK * ZT + K * dZT) * dZN)
    terms = {"[2 int f p z'.d_s z]": float(bracket_term(traj.states[-1]) - bracket_term(traj.states[0]))}
    terms.update({k: float(v) for k, v in acc.items()})
    return IdentityReport(name, terms, sm.mesh.h, scale=_energy_scale(traj))


def _nodal_coef(c, n):
    return np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()


def global_identity(traj: Trajectory, sm: SystemMatrices, x0, forms: BulkForms | None = None,
                    gamma1_traction: str = "velocity") -> IdentityReport:
    """Combined d = 2 identity with ``q = x - x0``: bulk flux, minus half the
    ``psi = 1`` identity, plus the membrane identity. The bulk energy terms
    collapse to ``-2 int E_omega``; all other terms are kept by name.
    """
    F = forms or BulkForms(sm)
    q = sm.mesh.vertices - np.asarray(x0, dtype=float)
    bulk = bulk_flux_identity(traj, sm, q, forms=F, gamma1_traction=gamma1_traction)
    psi = psi_identity(traj, sm, 1.0, forms=F, scale_by=-(sm.dim - 1) / 2.0)
    terms = {}
    energy_keys = {"int div q sigma:eps", "-int div q |u'|^2", "-2 int sigma:(grad u grad q)"}
    psi_energy = {"-2 int psi |u'|^2", "2 int psi sigma:eps"}
    e_omega = sum(bulk.terms[k] for k in energy_keys) + sum(psi.terms[k] for k in psi_energy)
    terms["-2 int E_omega"] = e_omega
    for k, v in bulk.terms.items():
        if k not in energy_keys:
            terms["bulk: " + k] = v
    for k, v in psi.terms.items():
        if k not in psi_energy:
            terms["psi: " + k] = v
    info = {"2 int E dt": float(2.0 * traj.dt * np.sum(0.5 * (traj.energy[1:] + traj.energy[:-1])))}
    if sm.dim == 2:
        mem = membrane_identity(traj, sm, q)
        for k, v in mem.terms.items():
            terms["membrane: " + k] = v
    return IdentityReport("global", terms, sm.mesh.h, scale=_energy_scale(traj), info=info)


def convergence_order(residual_coarse: float, residual_fine: float, ratio: float = 2.0) -> float:
    a, b = abs(residual_coarse), abs(residual_fine)
    if b == 0:
        return float("inf")
    return math.log(a / b) / math.log(ratio)


def multiplier_residuals(traj: Trajectory, sm: SystemMatrices, region: RegionFields,
                         gamma1_traction: str = "velocity", tau: float = 1.0,
                         n_samples: int = 50) -> dict:
    """Every audited identity plus the energy-bound ratios for one stored trajectory."""
    F = BulkForms(sm)
    x0 = region.x0
    q = sm.mesh.vertices - x0
    out = {
        "flux": bulk_flux_identity(traj, sm, q, "flux", gamma1_traction, F),
        "psi_one": psi_identity(traj, sm, 1.0, "psi_one", F),
        "psi_xi": psi_identity(traj, sm, region.xi_eps, "psi_xi", F),
        "k_flux": bulk_flux_identity(traj, sm, region.k_field, "k_flux", gamma1_traction, F),
    }
    if sm.dim == 2:
        out["membrane"] = membrane_identity(traj, sm, q)
        out["global"] = global_identity(traj, sm, x0, F, gamma1_traction)
    out["multiplier_energy_ratio"] = multiplier_energy_ratio(traj, sm, x0, n_samples, F)
    out["tangential_norm_ratio"] = tangential_norm_ratio(traj, sm, n_samples)
    out["boundary_energy_triple"] = boundary_energy_triple(traj, sm, tau)
    return out


def multiplier_energy_ratio(traj, sm, x0, n_samples=50, forms=None) -> dict:
    """``2 int ((x-x0).grad u + u)^2 / E(t)`` at evenly spread stored samples."""
    F = forms or BulkForms(sm)
    q = sm.mesh.vertices - np.asarray(x0, dtype=float)
    qq = F.nodal_at_quad(q)
    ws = F.wq[None] * F.vol[:, None]
    n_st = traj.states.shape[0]
    idx = np.unique(np.linspace(0, n_st - 1, n_samples).astype(int))
    ratios = []
    b = sm.blocks
    d = sm.dim
    for j in idx:
        X = traj.states[j]
        full = np.zeros(sm.mesh.n_vertices * d)
        full[sm.free] = X[b["u"]]
        U = full.reshape(-1, d)
        grad = np.einsum("cai,cak->cik", U[F.cells], F.g)
        val = np.einsum("cik,cqk->cqi", grad, qq) + F.nodal_at_quad(U)
        num = 2.0 * np.sum(ws[:, :, None] * val**2)
        E = sum(step_energies(X, sm))
        ratios.append(num / E if E > 0 else float("nan"))
    ratios = np.array(ratios)
    return {"ratios": ratios.tolist(), "xi_empirical": float(np.nanmax(ratios)) if np.isfinite(ratios).any() else float("nan"),
            "sample_steps": (idx * traj.stride).tolist()}


def tangential_norm_ratio(traj, sm, n_samples=50) -> dict:
    """Bounds of ``(int |z_T|^2 + sigma_T:eps_T) / int |z_T|^2`` along the run."""
    bops = sm.bops
    n, d = bops.layout.n, sm.dim
    nT = n * (d - 1)
    M1 = vectorize(scalar_boundary_mass(bops.layout), d)
    b = sm.blocks
    n_st = traj.states.shape[0]
    idx = np.unique(np.linspace(0, n_st - 1, n_samples).astype(int))
    vals = []
    for j in idx:
        z = traj.states[j][b["z"]].copy()
        z[nT:] = 0.0
        l2 = z @ (M1 @ z)
        if l2 > 0:
            vals.append((l2 + z @ (bops.K_elastic @ z)) / l2)
    vals = np.array(vals)
    if len(vals) == 0:
        return {"lower": float("nan"), "upper": float("nan"), "samples": 0}
    return {"lower": float(vals.min()), "upper": float(vals.max()), "samples": int(len(vals))}


def boundary_energy_report(traj: Trajectory, sm: SystemMatrices) -> dict:
    """The four boundary energy densities integrated over GAMMA1 at every stored sample."""
    bops = sm.bops
    b = sm.blocks
    nT = bops.layout.n * (sm.dim - 1)
    Z = traj.states[:, b["z"]]
    W = traj.states[:, b["w"]]
    out = {
        "f|z'|^2": np.einsum("ni,ni->n", W, (bops.M_f @ W.T).T),
        "h|z|^2": np.einsum("ni,ni->n", Z, (bops.H_h @ Z.T).T),
        "sigma_T:eps_T": np.einsum("ni,ni->n", Z, (bops.K_elastic @ Z.T).T),
        "|grad_T z_nu|^2": np.einsum("ni,ni->n", Z[:, nT:], (bops.K_LB @ Z[:, nT:].T).T),
    }
    out["t"] = traj.t[:: traj.stride]
    return out


def boundary_energy_triple(traj: Trajectory, sm: SystemMatrices, tau: float = 1.0) -> dict:
    """``(int int [sigma_T:eps_T + |z|^2 + |grad z_nu|^2], E(0), int E)`` and the smallest
    constant ``C`` for which ``lhs <= C E(0)/tau + tau int E`` holds."""
    bops = sm.bops
    M1 = vectorize(scalar_boundary_mass(bops.layout), sm.dim)
    A = (bops.K_elastic + M1 + bops.K_LB_full).tocsr()
    b = sm.blocks
    if traj.full:
        Xm = _midpoints(traj, sm)[:, b["z"]]
        lhs = traj.dt * _qform(A, Xm, Xm)
    else:
        Z = traj.states[:, b["z"]]
        vals = np.einsum("ni,ni->n", Z, (A @ Z.T).T)
        lhs = float(np.trapezoid(vals, traj.t[:: traj.stride]))
    E = traj.energy
    intE = float(traj.dt * np.sum(0.5 * (E[1:] + E[:-1])))
    C = tau * (lhs - tau * intE) / E[0] if E[0] > 0 else float("nan")
    return {"lhs": float(lhs), "E0": float(E[0]), "int_E": intE, "tau": tau, "C_hat": float(max(C, 0.0))}


def check_identity(report: IdentityReport, tol: float) -> None:
    if report.relative > tol:
        raise AuditError(f"{report.name}: relative residual {report.relative:.3e} exceeds {tol:.1e}")
