"""Disturbance model: x' = f(x,u) + F theta' with theta' = S_tilde theta."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..kernels import matexp
from .vehicle import N_STATES

N_THETA = 7


@dataclass
class DisturbanceModel:
    """Known basis F (orthonormal columns) plus the ground-truth generator
    S_tilde and initial parameter theta0 used for simulation."""

    basis: np.ndarray
    s_tilde: np.ndarray
    theta0: np.ndarray

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=float)
        self.s_tilde = np.asarray(self.s_tilde, dtype=float)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        n_th = self.s_tilde.shape[0]
        if self.basis.shape[1] != n_th or self.theta0.shape != (n_th,):
            raise ValueError("inconsistent disturbance dimensions")
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(n_th), atol=1e-12):
            raise ValueError("F must have orthonormal columns")

    @property
    def n_theta(self) -> int:
        return self.s_tilde.shape[0]

    def theta(self, t: float) -> np.ndarray:
        """theta(t) = exp(t S_tilde) theta0."""
        return matexp(t * self.s_tilde) @ self.theta0

    def step_matrix(self, delta_t: float) -> np.ndarray:
        """S = exp(delta_t S_tilde)."""
        return matexp(delta_t * self.s_tilde)

    def drift(self, theta: np.ndarray) -> np.ndarray:
        """State-derivative contribution F S_tilde theta."""
        return self.basis @ (self.s_tilde @ theta)


def disturbance_basis() -> np.ndarray:
    """13x7 basis: columns 1-2 hit the rx', ry' rows, 3-4 the vx', vy' rows,
    5-7 the angular-acceleration rows."""
    f = np.zeros((N_STATES, N_THETA))
    f[1, 0] = 1.0   # rx'
    f[2, 1] = 1.0   # ry'
    f[4, 2] = 1.0   # vx'
    f[5, 3] = 1.0   # vy'
    f[10, 4] = 1.0  # wx'
    f[11, 5] = 1.0  # wy'
    f[12, 6] = 1.0  # wz'
    return f


PAPER_S_TILDE_DIAG = np.array([0.001, -0.12, 0.03, 0.05, 0.07, 0.2, 0.0005])
PAPER_THETA0 = 1e-2 * np.array([0.2, 0.1, 0.1, 3.0, 1.0, 2.0, 3.0])


def paper_disturbance(theta0_scale: float = 1.0) -> DisturbanceModel:
    """Benchmark disturbance: seven decoupled modes, all in range(F^T)."""
    return DisturbanceModel(
        basis=disturbance_basis(),
        s_tilde=np.diag(PAPER_S_TILDE_DIAG),
        theta0=theta0_scale * PAPER_THETA0,
    )
