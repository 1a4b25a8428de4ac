"""Parameter containers for the quasi-particle and embedding Hamiltonians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-10


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol * scale)


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


@dataclass
class QpParams:
    """Quasi-particle renormalization vector and potential (one spin)."""

    omega: np.ndarray
    lambda_qp: np.ndarray

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega))
        self.lambda_qp = np.atleast_2d(np.asarray(self.lambda_qp))
        n = self.omega.shape[0]
        if self.lambda_qp.shape != (n, n):
            raise ValueError(f"lambda_qp must be {n}x{n}, got {self.lambda_qp.shape}")
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be finite")
        if not is_hermitian(self.lambda_qp):
            raise ValueError("lambda_qp must be Hermitian")

    @property
    def n_ghosts(self) -> int:
        return self.omega.shape[0]

    @property
    def weight(self) -> float:
        """Sum of |omega_a|^2, the total quasi-particle spectral weight."""
        return float(np.sum(np.abs(self.omega) ** 2))


@dataclass
class EmbParams:
    """Embedding Hamiltonian parameters.

    The Hamiltonian is ``U n0u n0d + mu (n0u + n0d)
    + sum_a delta_a (d0^+ d_a + h.c.) - sum_ab lambda_emb[b, a] d_a^+ d_b``.
    """

    delta: np.ndarray
    lambda_emb: np.ndarray
    u: float
    mu: float

    def __post_init__(self):
        self.delta = np.atleast_1d(np.asarray(self.delta))
        self.lambda_emb = np.atleast_2d(np.asarray(self.lambda_emb))
        n = self.delta.shape[0]
        if self.lambda_emb.shape != (n, n):
            raise ValueError(f"lambda_emb must be {n}x{n}, got {self.lambda_emb.shape}")
        if not is_hermitian(self.lambda_emb):
            raise ValueError("lambda_emb must be Hermitian")
        self.u = float(self.u)
        self.mu = float(self.mu)

    @property
    def n_ghosts(self) -> int:
        return self.delta.shape[0]

    def quadratic(self) -> np.ndarray:
        """Quadratic part without mu; orbital 0 is the impurity."""
        n = self.n_ghosts
        dtype = np.result_type(self.delta, self.lambda_emb, float)
        h = np.zeros((n + 1, n + 1), dtype=dtype)
        h[0, 1:] = self.delta
        h[1:, 0] = np.conj(self.delta)
        # -sum_ab L[b, a] d_a^+ d_b  ->  h[a, b] = -L[b, a]
        h[1:, 1:] = -self.lambda_emb.T
        return h
