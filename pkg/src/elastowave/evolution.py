"""Semigroup dynamics on the assembled system: generator, resolvent, time
stepping and the eigenvalues of the discrete generator.

Phase-space vectors are packed as ``(u, v, z, w)`` over the GAMMA0-free bulk
dofs and the frame-coordinate GAMMA1 dofs (see ``SystemMatrices.blocks``).
Most functions take either a :class:`State` or such a packed vector and answer
in kind.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SystemMatrices, assemble_resolvent_system
from .errors import SolverError, StateError
from .state import State

__all__ = [
    "State", "Trajectory", "apply_generator", "generator_pairing", "solve_resolvent",
    "integrate", "step_energies", "spectral_abscissa", "generator_pencil", "dense_spectrum",
    "write_checkpoint", "read_checkpoint",
]

log = logging.getLogger(__name__)


def _as_vector(U, sm: SystemMatrices):
    if isinstance(U, State):
        return sm.pack(U), True
    X = np.asarray(U, dtype=float)
    if X.shape != (sm.n,):
        raise StateError(f"state vector has shape {X.shape}, expected ({sm.n},)")
    return X, False


def _factor(A, what):
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:  # singular factor
        raise SolverError(f"factorization of {what} failed: {exc}") from exc


def _mass_solvers(sm: SystemMatrices):
    if "mass_lu" not in sm.cache:
        sm.cache["mass_lu"] = (_factor(sm.M, "bulk mass"), _factor(sm.M_f, "boundary mass"))
    return sm.cache["mass_lu"]


def _weak_generator(X, sm: SystemMatrices):
    """Right-hand sides ``(K u + D v - B^T w, K_b z + D_g w + B v)`` of the two mass solves."""
    b = sm.blocks
    u, v, z, w = X[b["u"]], X[b["v"]], X[b["z"]], X[b["w"]]
    return sm.K @ u + sm.D @ v - sm.B.T @ w, sm.K_b @ z + sm.D_g @ w + sm.B @ v


def apply_generator(U, sm: SystemMatrices):
    """``A_h U`` with both mass matrices inverted by cached sparse LU."""
    X, was_state = _as_vector(U, sm)
    lu_m, lu_f = _mass_solvers(sm)
    rv, rw = _weak_generator(X, sm)
    b = sm.blocks
    AX = np.empty_like(X)
    AX[b["u"]] = -X[b["v"]]
    AX[b["v"]] = lu_m.solve(rv)
    AX[b["z"]] = -X[b["w"]]
    AX[b["w"]] = lu_f.solve(rw)
    return sm.unpack(AX) if was_state else AX


def generator_pairing(U, sm: SystemMatrices) -> tuple[float, float]:
    """``(<A_h U, U>_H, v^T D v + w^T D_g w)``; the skew coupling cancels in the first."""
    X, _ = _as_vector(U, sm)
    AX = apply_generator(X, sm)
    b = sm.blocks
    v, w = X[b["v"]], X[b["w"]]
    return float(AX @ (sm.G_H @ X)), float(v @ (sm.D @ v) + w @ (sm.D_g @ w))


def solve_resolvent(k, sm: SystemMatrices):
    """Solve ``(I + A_h) U = k`` through the velocity system and reconstruct ``u, z``."""
    kx, was_state = _as_vector(k, sm)
    rs = assemble_resolvent_system(kx, sm)
    if "phi_lu" not in sm.cache:
        sm.cache["phi_lu"] = _factor(rs.Phi, "resolvent form")
    vw = sm.cache["phi_lu"].solve(rs.Psi)
    if not np.all(np.isfinite(vw)):
        raise SolverError("resolvent solve produced non-finite values")
    X = rs.reconstruct(vw)
    return sm.unpack(X) if was_state else X


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Midpoint-rule run. ``states[j]`` is the packed state at ``t[j*stride]``.

    ``E_omega``/``E_gamma`` and the dissipation increments are recorded at
    every step regardless of ``stride``; ``diss_a[n]``, ``diss_g[n]`` belong to
    the step ``t[n] -> t[n+1]``.
    """

    dt: float
    t: np.ndarray
    stride: int
    states: np.ndarray
    E_omega: np.ndarray
    E_gamma: np.ndarray
    diss_a: np.ndarray
    diss_g: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def energy(self) -> np.ndarray:
        return self.E_omega + self.E_gamma

    @property
    def full(self) -> bool:
        return self.stride == 1

    def state(self, n: int) -> np.ndarray:
        if n % self.stride:
            raise StateError(f"step {n} was not stored (stride {self.stride})")
        return self.states[n // self.stride]

    def midpoint(self, n: int) -> np.ndarray:
        return 0.5 * (self.state(n) + self.state(n + 1))


def step_energies(X, sm: SystemMatrices) -> tuple[float, float]:
    b = sm.blocks
    u, v, z, w = X[b["u"]], X[b["v"]], X[b["z"]], X[b["w"]]
    E_om = 0.5 * (v @ (sm.M @ v) + u @ (sm.K @ u))
    E_ga = 0.5 * (w @ (sm.M_f @ w) + z @ (sm.K_b @ z))
    return float(E_om), float(E_ga)


def _midpoint_operator(sm: SystemMatrices, dt: float):
    key = ("midpoint", float(dt))
    if key not in sm.cache:
        P = 2.0 * sm.M + (0.5 * dt * dt) * sm.K + dt * sm.D
        Q = 2.0 * sm.M_f + (0.5 * dt * dt) * sm.K_b + dt * sm.D_g
        S = sp.bmat([[P, -dt * sm.B.T], [dt * sm.B, Q]], format="csc")
        sm.cache[key] = _factor(S, f"midpoint step operator (dt={dt})")
    return sm.cache[key]


def integrate(U0, T: float, dt: float, sm: SystemMatrices, store_stride: int = 1,
              n_steps: int | None = None) -> Trajectory:
    """Implicit midpoint rule for ``U' + A_h U = 0``.

    Each step solves for the midpoint velocities ``(v_m, w_m)`` with a factor
    computed once per ``dt``; displacements follow from ``u1 = u0 + dt v_m``.
    The energy drop of every step equals ``dt (v_m^T D v_m + w_m^T D_g w_m)``
    up to the accuracy of the linear solve. A negative ``dt`` runs backwards.
    """
    if dt == 0 or not np.isfinite(dt):
        raise StateError("dt must be a nonzero finite number")
    if store_stride < 1:
        raise StateError("store_stride must be at least 1")
    if n_steps is None:
        if T <= 0:
            raise StateError("T must be positive")
        n_steps = int(round(T / abs(dt)))
    X, _ = _as_vector(U0, sm)
    X = X.copy()
    lu = _midpoint_operator(sm, dt)
    b = sm.blocks
    nu = sm.n_u

    t = dt * np.arange(n_steps + 1)
    states = np.empty((n_steps // store_stride + 1, sm.n))
    E_om = np.empty(n_steps + 1)
    E_ga = np.empty(n_steps + 1)
    diss_a = np.empty(n_steps)
    diss_g = np.empty(n_steps)
    states[0] = X
    E_om[0], E_ga[0] = step_energies(X, sm)
    for n in range(n_steps):
        u0, v0, z0, w0 = X[b["u"]], X[b["v"]], X[b["z"]], X[b["w"]]
        rhs = np.concatenate([2.0 * (sm.M @ v0) - dt * (sm.K @ u0),
                              2.0 * (sm.M_f @ w0) - dt * (sm.K_b @ z0)])
        mid = lu.solve(rhs)
        if not np.all(np.isfinite(mid)):
            raise SolverError(f"midpoint solve failed at step {n}")
        vm, wm = mid[:nu], mid[nu:]
        X[b["u"]] = u0 + dt * vm
        X[b["z"]] = z0 + dt * wm
        X[b["v"]] = 2.0 * vm - v0
        X[b["w"]] = 2.0 * wm - w0
        diss_a[n] = dt * (vm @ (sm.D @ vm))
        diss_g[n] = dt * (wm @ (sm.D_g @ wm))
        E_om[n + 1], E_ga[n + 1] = step_energies(X, sm)
        if (n + 1) % store_stride == 0:
            states[(n + 1) // store_stride] = X
    return Trajectory(float(dt), t, store_stride, states, E_om, E_ga, diss_a, diss_g)


# --------------------------------------------------------------------------
# spectrum
# --------------------------------------------------------------------------

def generator_pencil(sm: SystemMatrices):
    """``(L, W)`` with ``L x = mu W x`` equivalent to ``A_h x = mu x``.

    ``W = diag(I, M, I, M_f)``; the eigenvalues of ``-A_h`` are ``-mu``.
    """
    nu, nz = sm.n_u, sm.n_z
    Iu, Iz = sp.identity(nu, format="csr"), sp.identity(nz, format="csr")
    L = sp.bmat([
        [None, -Iu, None, None],
        [sm.K, sm.D, None, -sm.B.T],
        [None, None, None, -Iz],
        [None, sm.B, sm.K_b, sm.D_g],
    ], format="csc")
    W = sp.block_diag([Iu, sm.M, Iz, sm.M_f], format="csc")
    return L, W


def dense_spectrum(sm: SystemMatrices) -> np.ndarray:
    """All eigenvalues of ``-A_h`` by a dense generalized eigensolve (small meshes only)."""
    L, W = generator_pencil(sm)
    mu = sla.eig(L.toarray(), W.toarray(), right=False)
    return -mu


def _frequency_bound(sm: SystemMatrices) -> float:
    """Upper bound on ``|Im|`` of the spectrum: the largest undamped frequency."""
    top = []
    for K, M in ((sm.K, sm.M), (sm.K_b, sm.M_f)):
        if K.shape[0] == 0:
            continue
        val = spla.eigsh(K, k=1, M=M, which="LM", return_eigenvectors=False, tol=1e-6)
        top.append(float(val[0]))
    # the coupling is skew and bounded by the mass pairing, so a small margin covers it
    return 1.1 * np.sqrt(max(top)) + 1.0


def spectral_abscissa(sm: SystemMatrices, n_modes: int = 6, k_per_shift: int = 40,
                      max_shifts: int = 4000, tol: float = 1e-10) -> list[tuple[complex, float]]:
    """Eigenvalues of ``-A_h`` with the largest real part, with their energy decay rates.

    The spectrum is symmetric about the real axis and confined to
    ``|Im| <= omega_max``. Shift-invert Arnoldi is run at shifts ``i*s`` that
    march up the imaginary axis; each shift covers the disc out to its
    farthest converged eigenvalue, and the next shift is placed on that
    disc's rim so the whole strip is swept. Returned pairs are
    ``(lambda, -2 Re lambda)`` sorted by descending real part; the second
    entry is the rate at which energy (a quadratic quantity) decays.
    """
    L, W = generator_pencil(sm)
    n = L.shape[0]
    if n <= 600:
        lam = dense_spectrum(sm)
    else:
        lam = _sweep_spectrum(L, W, _frequency_bound(sm), k_per_shift, max_shifts, tol)
    lam = lam[lam.imag >= -1e-12]
    order = np.argsort(-lam.real, kind="stable")
    top = lam[order][:n_modes]
    return [(complex(x), float(-2.0 * x.real)) for x in top]


def _sweep_spectrum(L, W, omega_max, k, max_shifts, tol):
    n = L.shape[0]
    k = min(k, n - 2)
    Lc = L.astype(complex)
    Wc = W.astype(complex)
    found = []
    s = 0.0
    for _ in range(max_shifts):
        sigma = 1j * s
        lu = spla.splu(sp.csc_matrix(Lc - sigma * Wc))
        op = spla.LinearOperator((n, n), matvec=lambda x, lu=lu: lu.solve(Wc @ x), dtype=complex)
        try:
            nu = spla.eigs(op, k=k, which="LM", tol=tol, return_eigenvectors=False,
                           maxiter=20 * n)
        except spla.ArpackNoConvergence as exc:
            nu = exc.eigenvalues
            if len(nu) == 0:
                raise SolverError(f"shift-invert Arnoldi did not converge at shift {s:.4g}") from exc
        mu = sigma + 1.0 / nu
        found.append(mu)
        radius = np.max(np.abs(mu - sigma))
        if s > omega_max:
            break
        # stay inside the covered disc along the axis; the rim in the left
        # half plane is reached by the strongly damped modes only
        s += max(radius * 0.9, 1e-3)
    else:
        raise SolverError(f"spectral sweep did not reach omega_max={omega_max:.4g} in {max_shifts} shifts")
    mu = np.concatenate(found)
    # shifts sit in the upper half plane of mu, i.e. the lower one of -mu;
    # report the conjugate partners, which are eigenvalues too
    lam = -mu.conj()
    # de-duplicate overlaps between neighbouring discs
    lam = lam[np.lexsort((lam.real, np.round(lam.imag, 8)))]
    keep = np.ones(len(lam), dtype=bool)
    keep[1:] = np.abs(np.diff(lam)) > 1e-7 * (1 + np.abs(lam[1:]))
    return lam[keep]


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def write_checkpoint(path, X, sm: SystemMatrices, t: float = 0.0) -> None:
    """Plain-text state dump: one value per line under ``# block`` headers."""
    b = sm.blocks
    with open(path, "w") as fh:
        fh.write(f"# elastowave-state t={t:.17g} n={sm.n}\n")
        for name in "uvzw":
            seg = X[b[name]]
            fh.write(f"# {name} {len(seg)}\n")
            fh.writelines(f"{x:.17g}\n" for x in seg)


def read_checkpoint(path) -> tuple[np.ndarray, float]:
    parts, t = [], 0.0
    with open(path) as fh:
        head = fh.readline().split()
        for tok in head:
            if tok.startswith("t="):
                t = float(tok[2:])
        for line in fh:
            if line.startswith("#"):
                parts.append([])
            elif line.strip():
                if not parts:
                    raise StateError("checkpoint values before the first block header")
                parts[-1].append(float(line))
    if len(parts) != 4:
        raise StateError(f"checkpoint has {len(parts)} blocks, expected 4")
    return np.concatenate([np.array(p) for p in parts]), t
