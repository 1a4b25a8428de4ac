"""Local Green's function and density of states from quasi-particle parameters."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import EnergyGrid
from .params import QpParams


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray
    delta: float = 0.01

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        if w.ndim != 1 or len(w) < 2 or np.any(np.diff(w) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not self.delta > 0:
            raise ValueError("broadening must be positive")
        object.__setattr__(self, "omegas", w)

    @classmethod
    def uniform(cls, lo: float = -3.0, hi: float = 3.0, step: float = 0.01, delta: float = 0.01):
        n = int(round((hi - lo) / step)) + 1
        return cls(np.linspace(lo, hi, n), delta)

    @property
    def step(self) -> float:
        return float(np.mean(np.diff(self.omegas)))

    def __len__(self) -> int:
        return len(self.omegas)


@dataclass(frozen=True)
class DosCurve:
    freq: FrequencyGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.freq.omegas.shape:
            raise ValueError("DOS values must align with the frequency grid")
        object.__setattr__(self, "values", v)

    def to_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh)
            writer.writerow(["omega", "A"])
            for w, a in zip(self.freq.omegas, self.values):
                writer.writerow([f"{w:.6f}", f"{a:.12e}"])


def greens_function(qp: QpParams, grid: EnergyGrid, freq: FrequencyGrid) -> np.ndarray:
    """Local G(w) = sum_k w_k omega^+ [w + i delta - omega eps_k omega^+ - lambda]^-1 omega."""
    n = qp.n_ghosts
    omega = np.asarray(qp.omega, dtype=complex)
    hk = grid.points[:, None, None] * np.outer(omega, omega.conj())[None] + qp.lambda_qp[None]
    eye = np.eye(n)
    rhs = np.broadcast_to(omega[:, None], (len(grid), n, 1))
    out = np.empty(len(freq), dtype=complex)
    if not np.any(omega):
        out[:] = 0
        return out
    for i, w in enumerate(freq.omegas):
        x = np.linalg.solve((w + 1j * freq.delta) * eye[None] - hk, rhs)
        out[i] = np.sum(grid.weights * (omega.conj() @ x[..., 0].T))
    return out


def dos(g: np.ndarray, freq: FrequencyGrid) -> DosCurve:
    return DosCurve(freq, -np.imag(g) / np.pi)


def qp_dos(qp: QpParams, grid: EnergyGrid, freq: FrequencyGrid) -> DosCurve:
    return dos(greens_function(qp, grid, freq), freq)


def sum_rule(curve: DosCurve, qp: QpParams) -> float:
    """|integral of A - sum_a |omega_a|^2| by the trapezoidal rule."""
    return float(abs(np.trapezoid(curve.values, curve.freq.omegas) - qp.weight))


def gap_metric(curve: DosCurve) -> float:
    """A(0), linearly interpolated if 0 is not a grid point."""
    return float(np.interp(0.0, curve.freq.omegas, curve.values))


def low_frequency_peak(curve: DosCurve, window: float = 1.0) -> float:
    """|omega| of the highest point of A within |omega| <= window (ties to lower |omega|)."""
    w = curve.freq.omegas
    inside = np.abs(w) <= window
    if not inside.any():
        raise ValueError("no frequencies inside the window")
    cand = np.flatnonzero(inside)
    v = curve.values[cand]
    best = cand[np.isclose(v, v.max(), rtol=0, atol=1e-12)]
    return float(np.min(np.abs(w[best])))
