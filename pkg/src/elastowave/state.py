from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tangential import BoundaryField


@dataclass(frozen=True)
class State:
    """Semigroup state: bulk displacement/velocity ``(N, d)`` (zero on GAMMA0)
    and GAMMA1 displacement/velocity in frame coordinates."""

    u: np.ndarray
    v: np.ndarray
    z: BoundaryField
    w: BoundaryField

    @property
    def z_T(self):
        return self.z.z_T

    @property
    def z_nu(self):
        return self.z.z_nu

    @property
    def w_T(self):
        return self.w.z_T

    @property
    def w_nu(self):
        return self.w.z_nu

    @classmethod
    def zeros(cls, n_vertices: int, n_boundary: int, dim: int) -> "State":
        return cls(np.zeros((n_vertices, dim)), np.zeros((n_vertices, dim)),
                   BoundaryField.zeros(n_boundary, dim), BoundaryField.zeros(n_boundary, dim))

    def __add__(self, other: "State") -> "State":
        return State(self.u + other.u, self.v + other.v,
                     BoundaryField(self.z.z_T + other.z.z_T, self.z.z_nu + other.z.z_nu),
                     BoundaryField(self.w.z_T + other.w.z_T, self.w.z_nu + other.w.z_nu))

    def __mul__(self, c: float) -> "State":
        return State(c * self.u, c * self.v, BoundaryField(c * self.z.z_T, c * self.z.z_nu),
                     BoundaryField(c * self.w.z_T, c * self.w.z_nu))

    __rmul__ = __mul__
