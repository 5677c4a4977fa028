import functools

import numpy as np
import pytest

from elastowave.assembly import MaterialParams, build_system
from elastowave.geometry import build_mesh, build_region_fields, classify_boundary, compute_boundary_frames
from elastowave.state import State
from elastowave.tangential import BoundaryField

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance line; the terminal summary prints them in order."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@functools.lru_cache(maxsize=None)
def annulus_system(h=0.25, eps=0.3, a0=1.0, x0=(0.0, 0.0), delta=1.0, lam=1.0, alpha=1.0,
                   f=1.0, g=1.0, hh=1.0, damped=True):
    """Annulus 1..2 with the inner circle as GAMMA1; cached because assembly dominates small tests."""
    mesh = classify_boundary(build_mesh("annulus", 1.0, 2.0, h), np.array(x0), delta)
    frames = compute_boundary_frames(mesh)
    region = build_region_fields(mesh, eps, a0, x0=np.array(x0), delta=delta, frames=frames)
    if damped:
        params = MaterialParams(lam, alpha, f, g, hh)
        sm = build_system(mesh, frames, params, region=region)
    else:
        params = MaterialParams(lam, alpha, f, 0.0, hh, allow_zero_g=True)
        sm = build_system(mesh, frames, params, region=region, a_field=np.zeros(mesh.n_cells))
    return sm, region


def bump_state(sm, center=(0.0, 1.5), radius=0.8, amplitude=(1.0, 0.5)):
    """Smooth velocity bump ``(1 - s^2)^4``, packed, with GAMMA0 values dropped."""
    X = sm.mesh.vertices
    s = np.linalg.norm(X - np.asarray(center), axis=1) / radius
    phi = np.where(s < 1, (1 - s * s) ** 4, 0.0)
    v = phi[:, None] * np.asarray(amplitude)
    nb = sm.bops.layout.n
    return sm.pack(State(np.zeros_like(v), v, BoundaryField.zeros(nb, 2), BoundaryField.zeros(nb, 2)))


@pytest.fixture(scope="session")
def coarse():
    return annulus_system(0.25)


@pytest.fixture(scope="session")
def coarse_conservative():
    return annulus_system(0.25, damped=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
