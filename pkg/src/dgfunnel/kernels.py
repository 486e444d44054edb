"""Dense linear-algebra primitives used throughout the toolkit.

Thin SVD, Moore-Penrose pseudoinverse, range/complement projectors, matrix
exponential and principal logarithm, and symmetric-PSD checks.  Everything
here is a pure function of its inputs; numpy/scipy provide the numerics
(expm is scaling-and-squaring with a Pade approximant, logm is inverse
scaling-and-squaring).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import LogUndefined, NonFinite, NonSquare

__all__ = [
    "ThinSvd",
    "thin_svd",
    "pinv",
    "projector_range",
    "projector_complement",
    "matexp",
    "matlog",
    "is_symmetric_psd",
    "symmetrize",
    "default_rank_tolerance",
]


def _as_matrix(m, name: str = "m") -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains NaN or infinite entries")
    return a


def default_rank_tolerance(sigma_max: float, shape: tuple[int, int]) -> float:
    """Standard relative cutoff: max(rows, cols) * eps * sigma_max."""
    return max(shape) * np.finfo(float).eps * sigma_max


@dataclass(frozen=True)
class ThinSvd:
    """Thin SVD of a matrix: u @ diag(sigma) @ v.T with rank-r factors.

    u is n x r and v is m x r with orthonormal columns; sigma holds the r
    singular values above ``rank_tolerance`` in descending order.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank_tolerance: float

    @property
    def rank(self) -> int:
        return self.sigma.size

    def reconstruct(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.u.shape[0], self.v.shape[0]))
        return self.u @ (self.sigma[:, None] * self.v.T)


def thin_svd(m, rank_tolerance: float = 0.0) -> ThinSvd:
    """Thin SVD keeping only singular values above the rank tolerance.

    rank_tolerance = 0 selects the standard relative default
    max(rows, cols) * eps * sigma_max.
    """
    a = _as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if rank_tolerance < 0:
        raise ValueError("rank_tolerance must be >= 0")
    tol = rank_tolerance
    if tol == 0.0:
        tol = default_rank_tolerance(s[0] if s.size else 0.0, a.shape)
    r = int(np.sum(s > tol))
    return ThinSvd(u=u[:, :r].copy(), sigma=s[:r].copy(), v=vt[:r].T.copy(),
                   rank_tolerance=tol)


def pinv(m, rank_tolerance: float = 0.0) -> np.ndarray:
    """Moore-Penrose pseudoinverse with relative rank truncation."""
    f = thin_svd(m, rank_tolerance)
    if f.rank == 0:
        return np.zeros((f.v.shape[0], f.u.shape[0]))
    return f.v @ (f.u / f.sigma).T


def projector_range(m, rank_tolerance: float = 0.0) -> np.ndarray:
    """Orthogonal projector onto the range (column space) of m."""
    f = thin_svd(m, rank_tolerance)
    n = f.u.shape[0]
    if f.rank == 0:
        return np.zeros((n, n))
    return f.u @ f.u.T


def projector_complement(m, rank_tolerance: float = 0.0) -> np.ndarray:
    """Orthogonal projector onto the orthogonal complement of range(m)."""
    p = projector_range(m, rank_tolerance)
    return np.eye(p.shape[0]) - p


def matexp(m) -> np.ndarray:
    """Matrix exponential e^m (scaling-and-squaring Pade)."""
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NonSquare(f"matexp needs a square matrix, got {a.shape}")
    return scipy.linalg.expm(a)


def matlog(m) -> np.ndarray:
    """Principal matrix logarithm.

    Raises LogUndefined when any eigenvalue lies on the closed negative real
    axis (includes singular matrices), which signals that a discrete-time
    estimate cannot be mapped back to a generator.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NonSquare(f"matlog needs a square matrix, got {a.shape}")
    ev = np.linalg.eigvals(a)
    scale = max(1.0, float(np.max(np.abs(ev))))
    on_negative_axis = (ev.real <= 0.0) & (np.abs(ev.imag) <= 1e-12 * scale)
    if np.any(on_negative_axis):
        raise LogUndefined(
            "eigenvalue on the closed negative real axis; principal log "
            "undefined (time step too large or degenerate estimate)"
        )
    out = scipy.linalg.logm(a)
    if np.iscomplexobj(out):
        out = out.real
    return out


def symmetrize(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    return 0.5 * (a + a.T)


def is_symmetric_psd(m, tol: float = 1e-9) -> bool:
    """True when m is symmetric and its minimum eigenvalue >= -tol."""
    a = np.asarray(m, dtype=float)
    if a.shape[0] != a.shape[1]:
        return False
    if not np.allclose(a, a.T, atol=tol * max(1.0, float(np.abs(a).max()))):
        return False
    w = np.linalg.eigvalsh(symmetrize(a))
    return bool(w.min() >= -tol)
