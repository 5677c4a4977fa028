"""Command-line scenario runner.

``elastowave simulate|resolvent-check|spectrum|audit <config.json>`` runs one
scenario and writes its artifacts into the configured output directory;
``elastowave converge <config.json> --levels N`` repeats the run on halved
mesh sizes and tabulates empirical orders.

Exit codes: 0 success, 2 invalid configuration or coefficient assumption,
3 geometric condition, 4 solver failure, 5 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import set_threads
from .analysis import (EnergyTrace, fit_decay, max_pairwise_identity_residual, multiplier_residuals,
                       poincare_constant)
from .assembly import MaterialParams, SystemMatrices, build_system, coercivity_ratios
from .config import ScenarioConfig, load_config
from .errors import (AssumptionError, ElastowaveError, AuditError, GeometricConditionError, MeshError, ParameterError,
                     RegionOverlapError, SolverError, StateError)
from .evolution import apply_generator, integrate, solve_resolvent, spectral_abscissa
from .geometry import (BoundaryFrame, Mesh, RegionFields, build_mesh, build_region_fields, classify_boundary,
                       compute_boundary_frames, write_mesh)
from .state import State
from .tangential import BoundaryField

log = logging.getLogger("elastowave")

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SOLVER, EXIT_AUDIT = 0, 2, 3, 4, 5

ENERGY_IDENTITY_TOL = 1e-8
RESOLVENT_TOL = 1e-10


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ParameterError, AssumptionError, StateError)):
        return EXIT_CONFIG
    if isinstance(exc, (GeometricConditionError, RegionOverlapError, MeshError)):
        return EXIT_GEOMETRY
    if isinstance(exc, AuditError):
        return EXIT_AUDIT
    return EXIT_SOLVER


@dataclass
class Scenario:
    config: ScenarioConfig
    mesh: Mesh
    frames: BoundaryFrame
    region: RegionFields
    sm: SystemMatrices

    def initial_state(self) -> State:
        """Smooth compactly supported velocity bump ``(1 - s^2)^4`` times a fixed direction."""
        ini = self.config.initial
        mesh, d = self.mesh, self.mesh.dim
        center = np.zeros(d)
        center[: min(d, len(ini["center"]))] = ini["center"][:d]
        amp = np.zeros(d)
        amp[: min(d, len(ini["amplitude"]))] = ini["amplitude"][:d]
        s = np.linalg.norm(mesh.vertices - center, axis=1) / ini["radius"]
        phi = np.where(s < 1.0, (1.0 - s * s) ** 4, 0.0)
        v = phi[:, None] * amp
        u = np.zeros_like(v)
        nb = self.sm.bops.layout.n
        X = self.sm.pack(State(u, v, BoundaryField.zeros(nb, d), BoundaryField.zeros(nb, d)))
        return self.sm.unpack(X)  # drops the GAMMA0 values


def build_scenario(cfg: ScenarioConfig, backend=None) -> Scenario:
    geo, mat, dmp, bnd = cfg.geometry, cfg.material, cfg.damping, cfg.boundary
    mesh = build_mesh(geo["kind"], geo["r_in"], geo["r_out"], geo["h"], geo["grading"])
    x0 = np.zeros(mesh.dim)
    x0[: min(mesh.dim, len(geo["x0"]))] = geo["x0"][: mesh.dim]
    mesh = classify_boundary(mesh, x0, geo["delta"])
    frames = compute_boundary_frames(mesh)
    region = build_region_fields(mesh, dmp["eps"], dmp["a0"], dmp["profile"], x0, geo["delta"], frames)
    floors = tuple(bnd["floors"]) if bnd["floors"] else None
    params = MaterialParams(mat["lambda"], mat["alpha"], bnd["f"], bnd["g"], bnd["h"], floors)
    sm = build_system(mesh, frames, params, region=region, backend=backend)
    return Scenario(cfg, mesh, frames, region, sm)


def _finite(x):
    """JSON-safe float (NaN and infinities become null)."""
    x = float(x)
    return x if math.isfinite(x) else None


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _spectrum_summary(sm) -> dict:
    modes = spectral_abscissa(sm)
    lam, rate = modes[0]
    return {
        "abscissa": _finite(lam.real),
        "leading_eigenvalue": [_finite(lam.real), _finite(lam.imag)],
        "energy_rate": _finite(rate),
        "modes": [[_finite(m.real), _finite(m.imag)] for m, _ in modes],
    }


def resolvent_check(scn: Scenario, n_samples: int = 20, seed: int = 0) -> dict:
    """Solve ``(I + A) U = k`` for random ``k`` and measure the phase-space residual."""
    sm = scn.sm
    rng = np.random.default_rng(seed)
    worst = 0.0
    recon = 0.0
    b = sm.blocks
    for _ in range(n_samples):
        k = sm.random_state_vector(rng)
        U = solve_resolvent(k, sm)
        r = U + apply_generator(U, sm) - k
        worst = max(worst, math.sqrt(max(sm.norm_H2(r), 0.0) / sm.norm_H2(k)))
        recon = max(recon, float(np.max(np.abs((U[b["u"]] - U[b["v"]]) - k[b["u"]]))),
                    float(np.max(np.abs((U[b["z"]] - U[b["w"]]) - k[b["z"]]))))
    ratios = coercivity_ratios(sm, 100, seed)
    floors = sm.params.floors
    h0 = floors[2] if floors else float(np.min(np.broadcast_to(sm.params.h, (sm.bops.layout.n,))))
    return {"max_relative_residual": worst, "reconstruction_error": recon,
            "coercivity_min": float(ratios.min()), "coercivity_bound": min(1.0, 1.0 / h0),
            "n_samples": n_samples}


def execute(cfg: ScenarioConfig, command: str = "simulate") -> dict:
    """Run one scenario, write its artifacts and return the summary dictionary.

    Raises the package exceptions; :func:`run_scenario` maps them to exit codes.
    """
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParameterError(f"cannot create output directory {out}: {exc}") from exc
    scn = build_scenario(cfg)
    sm = scn.sm
    write_mesh(scn.mesh, out / "mesh.txt")
    (out / "constraints.json").write_text(sm.constraint_map_json() + "\n")
    summary = {"command": command, "h": cfg.geometry["h"], "n_dofs": int(sm.n),
               "assumptions": cfg.assumption_report(), "config": cfg.to_dict()}
    failures = []

    if command == "resolvent-check":
        rc = resolvent_check(scn)
        summary["resolvent"] = rc
        if rc["max_relative_residual"] > RESOLVENT_TOL:
            failures.append("resolvent residual")
        if rc["coercivity_min"] < rc["coercivity_bound"] - 1e-8:
            failures.append("coercivity")
    elif command == "spectrum":
        summary["spectrum"] = _spectrum_summary(sm)
    else:
        audit = command == "audit" or cfg.analysis["audit"]
        stride = 1 if audit else cfg.store_stride
        traj = integrate(scn.initial_state(), cfg.time["T"], cfg.time["dt"], sm, store_stride=stride)
        trace = EnergyTrace.from_trajectory(traj)
        trace.to_csv(out / "energy.csv")
        fit = fit_decay(trace, min_correlation=cfg.analysis["min_correlation"])
        E0 = float(traj.energy[0])
        ident = max_pairwise_identity_residual(traj)
        summary["energy"] = {"E0": E0, "E_final": float(traj.energy[-1]),
                             "max_identity_residual": ident,
                             "relative_identity_residual": ident / E0 if E0 > 0 else ident}
        summary["fit"] = {"accepted": fit.accepted, "K1": _finite(fit.K1), "K2": _finite(fit.K2),
                          "rate": _finite(fit.rate), "window": [_finite(w) for w in fit.window],
                          "correlation": _finite(fit.goodness), "diagnostic": fit.diagnostic}
        if summary["energy"]["relative_identity_residual"] > ENERGY_IDENTITY_TOL:
            failures.append("energy identity")
        if cfg.analysis["spectrum"]:
            summary["spectrum"] = _spectrum_summary(sm)
        if cfg.analysis["poincare"]:
            summary["poincare"] = {"C_p": poincare_constant(sm).C_p}
        if audit:
            reports = multiplier_residuals(traj, sm, scn.region)
            tol = cfg.analysis["audit_tol"]
            audits = {}
            for name, rep in reports.items():
                if hasattr(rep, "relative"):
                    audits[name] = {"residual": rep.residual, "relative": rep.relative, "scale": rep.scale}
                    if rep.relative > tol:
                        failures.append(f"identity {name}")
                else:
                    audits[name] = {k: _finite(v) for k, v in rep.items()
                                    if isinstance(v, (int, float, np.floating))}
            summary["audit"] = {"tolerance": tol, "identities": audits,
                                "max_relative_residual": max(a["relative"] for a in audits.values()
                                                             if "relative" in a)}
    summary["failures"] = failures
    _dump_json(out / "summary.json", summary)
    if failures:
        raise AuditError("audit failed: " + ", ".join(failures))
    return summary


def run_scenario(cfg: ScenarioConfig, command: str = "simulate") -> int:
    """Exit-code wrapper around :func:`execute`."""
    try:
        execute(cfg, command)
    except Exception as exc:  # every failure maps onto the documented codes
        code = exit_code_for(exc)
        log.error("%s: %s", type(exc).__name__, exc)
        return code
    return EXIT_OK


# --------------------------------------------------------------------------
# convergence
# --------------------------------------------------------------------------

CONVERGENCE_COLUMNS = ("h", "quantity", "value", "order")


def convergence_study(cfg: ScenarioConfig, levels: int) -> list[dict]:
    """Run the scenario at ``h, h/2, ...`` with audits on and tabulate orders.

    Returns rows ``{h, quantity, value, order}``; ``order`` compares a level
    with the previous one (``log2`` of the residual ratio, or of the change
    ratio for ``C_p`` and the rate). Writes ``convergence.csv`` next to the
    per-level outputs.
    """
    if not isinstance(levels, int) or levels < 2:
        raise ParameterError("convergence study needs at least 2 levels")
    base = Path(cfg.output)
    base.mkdir(parents=True, exist_ok=True)
    analysis = dict(cfg.analysis, audit=True, poincare=True, spectrum=False)
    values: dict[str, list[float]] = {}
    hs = []
    for lev in range(levels):
        h = cfg.geometry["h"] / 2 ** lev
        sub = ScenarioConfig(dict(cfg.geometry, h=h), cfg.material, cfg.damping, cfg.boundary, cfg.time,
                             cfg.initial, analysis, str(base / f"level{lev}"))
        try:
            s = execute(sub, "audit")
        except AuditError:
            s = json.loads((base / f"level{lev}" / "summary.json").read_text())
        except ElastowaveError as exc:
            exc.args = (f"level {lev} (h={h}): {exc}",)
            raise
        hs.append(h)
        for name, a in s["audit"]["identities"].items():
            if "residual" in a:
                values.setdefault(name, []).append(abs(a["residual"]))
        values.setdefault("C_p", []).append(s["poincare"]["C_p"])
        values.setdefault("fit_rate", []).append(s["fit"]["rate"] if s["fit"]["rate"] is not None else math.nan)
    rows = []
    for name, vals in values.items():
        for i, (h, v) in enumerate(zip(hs, vals)):
            order = None
            if name in ("C_p", "fit_rate"):
                if i >= 2:
                    d1, d2 = vals[i - 1] - vals[i - 2], vals[i] - vals[i - 1]
                    order = math.log2(abs(d1 / d2)) if d2 != 0 and d1 != 0 else None
            elif i >= 1 and v > 0 and vals[i - 1] > 0:
                order = math.log2(vals[i - 1] / v)
            rows.append({"h": h, "quantity": name, "value": v, "order": order})
    with open(base / "convergence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CONVERGENCE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                        for k in CONVERGENCE_COLUMNS})
    return rows


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastowave", description=__doc__.split("\n\n")[0])
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded kernels so repeated runs write identical files")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "time integration, decay fit and optional analyses"),
                       ("resolvent-check", "solve (I + A)U = k for random k"),
                       ("spectrum", "leading eigenvalues of the discrete generator"),
                       ("audit", "simulate with every multiplier identity audited")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("-o", "--output", help="override the output directory")
    c = sub.add_parser("converge", help="refinement study with empirical orders")
    c.add_argument("config")
    c.add_argument("--levels", type=int, required=True)
    c.add_argument("-o", "--output")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    set_threads(deterministic=args.deterministic)
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg = cfg.with_output(args.output)
    except ParameterError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.command == "converge":
        try:
            convergence_study(cfg, args.levels)
        except Exception as exc:
            log.error("%s: %s", type(exc).__name__, exc)
            return exit_code_for(exc)
        return EXIT_OK
    return run_scenario(cfg, args.command)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
