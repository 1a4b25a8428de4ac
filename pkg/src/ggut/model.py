"""Reference lattice problem and the generic Anderson impurity model."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .params import EmbParams

# alias used throughout: an embedding model is just its parameter set
EmbeddingModel = EmbParams


@dataclass(frozen=True)
class LatticeSpec:
    """Bethe lattice with half-bandwidth D; the energy unit is D."""

    half_bandwidth: float = 1.0
    n_energy: int = 400

    def __post_init__(self):
        if not self.half_bandwidth > 0:
            raise ValueError("half_bandwidth must be positive")
        if self.n_energy < 2:
            raise ValueError("n_energy must be at least 2")

    @property
    def hopping(self) -> float:
        return self.half_bandwidth / 2


@dataclass(frozen=True)
class HubbardParams:
    U: float
    mu: float | None = None
    T: float = 0.002

    def __post_init__(self):
        if self.U < 0:
            raise ValueError("U must be nonnegative")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.mu is None:
            # half filling
            object.__setattr__(self, "mu", -self.U / 2)


@dataclass(frozen=True)
class EnergyGrid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.shape != w.shape or pts.ndim != 1:
            raise ValueError("points and weights must be 1-d arrays of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.points)

    def moment(self, n: int) -> float:
        return float(np.sum(self.weights * self.points**n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["energy", "weight"])
            for e, w in zip(self.points, self.weights):
                writer.writerow([repr(float(e)), repr(float(w))])

    @classmethod
    def from_csv(cls, path) -> "EnergyGrid":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "energy":
                    continue
                rows.append((float(row[0]), float(row[1])))
        pts, w = np.array(rows).T
        return cls(pts, w / w.sum())


def discretize_semicircle(spec: LatticeSpec) -> EnergyGrid:
    """Gauss-Chebyshev (second kind) quadrature of the semicircular DOS."""
    n = spec.n_energy
    x = np.arange(1, n + 1) * np.pi / (n + 1)
    points = spec.half_bandwidth * np.cos(x)
    weights = np.sin(x) ** 2
    return EnergyGrid(points[::-1].copy(), (weights / weights.sum())[::-1].copy())


def semicircle_dos(omega, half_bandwidth: float = 1.0):
    """A_0(w) = (1/(pi t)) sqrt(1 - (w/2t)^2) with t = D/2."""
    t = half_bandwidth / 2
    x = np.asarray(omega, dtype=float) / (2 * t)
    return np.where(np.abs(x) < 1, np.sqrt(np.clip(1 - x**2, 0, None)) / (np.pi * t), 0.0)


def build_generic_aim(n_ghosts: int, U: float) -> EmbParams:
    """Chain Anderson impurity model with unit hoppings and mu = -U/2."""
    if n_ghosts < 1:
        raise ValueError("n_ghosts must be at least 1")
    delta = np.zeros(n_ghosts)
    delta[0] = -1.0
    lam = np.zeros((n_ghosts, n_ghosts))
    idx = np.arange(n_ghosts - 1)
    lam[idx, idx + 1] = lam[idx + 1, idx] = 1.0
    return EmbParams(delta, lam, U, -U / 2)
