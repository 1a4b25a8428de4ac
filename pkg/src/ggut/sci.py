"""Selected-CI truncation, subspace diagonalization and error metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import EmptyBasis, NonConvergence
from .fock import (
    DEGENERACY_TOL, EmbSolution, SectorBasis, SectorHamiltonian, build_hamiltonian, ground_manifold,
    ground_state, half_filled_sector, model_quadratic, one_rdm, solve_fci,
)
from .spectral import DosCurve

DENSE_LIMIT = 64


@dataclass
class CiSet:
    """Determinants of a sector ranked by descending weight."""

    basis: SectorBasis
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.indices) == 0:
            raise EmptyBasis("CI set is empty")
        if self.indices.shape != self.weights.shape:
            raise ValueError("indices and weights must align")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate determinants in CI set")
        if np.any(np.diff(self.weights) > 0):
            raise ValueError("weights must be sorted descending")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def fraction(self) -> float:
        return len(self) / len(self.basis)

    @property
    def determinants(self):
        return [self.basis.states[i] for i in self.indices]

    @property
    def captured_weight(self) -> float:
        return float(self.weights.sum())


def rank(weights: np.ndarray) -> np.ndarray:
    """Positions sorted by descending weight; ties keep basis order."""
    w = np.asarray(weights, dtype=float)
    return np.lexsort((np.arange(len(w)), -w))


def truncate_by_weight(
    weights: np.ndarray, basis: SectorBasis, *, fraction: float | None = None,
    count: int | None = None, threshold: float | None = None,
) -> CiSet:
    """Keep the top determinants under exactly one of the three policies."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(basis),):
        raise ValueError("one weight per sector determinant is required")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    given = [x is not None for x in (fraction, count, threshold)]
    if sum(given) != 1:
        raise ValueError("choose exactly one of fraction, count, threshold")
    order = rank(w)
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        k = math.ceil(fraction * len(w) - 1e-9)
    elif count is not None:
        k = min(int(count), len(w))
    else:
        k = int(np.count_nonzero(w >= threshold))
    if k < 1:
        raise EmptyBasis("truncation policy selected no determinants")
    keep = order[:k]
    return CiSet(basis, keep, w[keep])


def subspace_hamiltonian(model, ci: CiSet, full=None):
    """Hamiltonian restricted to the CI set, rows ordered by sector position."""
    idx = np.sort(ci.indices)
    h = full if full is not None else build_hamiltonian(model, ci.basis)
    return h[idx][:, idx], idx


def solve_subspace(model, ci: CiSet, seed: int = 0, full=None) -> EmbSolution:
    """Ground state within the CI subspace and its densities."""
    h, idx = subspace_hamiltonian(model, ci, full)
    if len(idx) < DENSE_LIMIT:
        e, v = np.linalg.eigh(h.toarray())
        energy, vec = float(e[0]), v[:, 0]
    else:
        energy, vec = ground_state(h, seed=seed)
    zeta, rho = one_rdm(vec, ci.basis, idx)
    return EmbSolution(energy, vec, zeta, rho, ci.basis, idx)


def cumulative_weight(amplitudes: np.ndarray) -> np.ndarray:
    """Sigma_alpha(K) for K = 1..len, largest weights first."""
    w = np.abs(np.asarray(amplitudes)) ** 2
    return np.cumsum(w[rank(w)]) / w.sum()


def ensemble_weights(vectors: np.ndarray) -> np.ndarray:
    """Determinant weights of the equal mixture of degenerate ground states.

    Independent of the basis chosen inside the degenerate manifold; returned as
    amplitudes (square roots) so they feed :func:`cumulative_weight` directly.
    """
    v = np.atleast_2d(np.asarray(vectors).T).T
    return np.sqrt(np.mean(np.abs(v) ** 2, axis=1))


def ground_state_weights(model, seed: int = 0, tol: float = DEGENERACY_TOL):
    """(ground energy, ensemble amplitudes, degeneracy) over the half-filled sector."""
    basis = half_filled_sector(model_quadratic(model).shape[0] - 1)
    energies, vecs = ground_manifold(SectorHamiltonian(model, basis), seed=seed, tol=tol)
    return float(energies[0]), ensemble_weights(vecs), len(energies)


def count_for_weight(amplitudes: np.ndarray, target: float) -> int:
    """Smallest K with Sigma_alpha(K) >= target."""
    cum = cumulative_weight(amplitudes)
    return int(min(np.searchsorted(cum, target - 1e-15) + 1, len(cum)))


@dataclass
class SciErrorReport:
    r_energy: float
    r_energy_rel: float
    r_dos: float
    r_moments: list[float] = field(default_factory=list)
    sigma_alpha: float = float("nan")


def error_metrics(
    ref_dos: DosCurve, ref_energy: float, trial_dos: DosCurve, trial_energy: float,
    max_moment: int = 3, sigma_alpha: float = float("nan"),
) -> SciErrorReport:
    """R_E, R_A = sum |dA|^2 dw and R_A^n = sum |w^n dA| dw."""
    w_ref, w_trial = ref_dos.freq.omegas, trial_dos.freq.omegas
    if w_ref.shape != w_trial.shape or not np.allclose(w_ref, w_trial):
        raise ValueError("DOS curves live on different frequency grids")
    dw = np.gradient(w_ref)
    diff = trial_dos.values - ref_dos.values
    r_e = abs(trial_energy - ref_energy)
    moments = [float(np.sum(np.abs(w_ref**n * diff) * dw)) for n in range(max_moment + 1)]
    return SciErrorReport(
        r_energy=float(r_e),
        r_energy_rel=float(r_e / abs(ref_energy)) if ref_energy else float(r_e),
        r_dos=float(np.sum(diff**2 * dw)),
        r_moments=moments,
        sigma_alpha=sigma_alpha,
    )


def _exp_model(x, n):
    a, b, c = x
    return a + b * np.exp(c * n)


def fit_exponential(n_values, k_values, max_steps: int = 500) -> tuple[float, float, float]:
    """Least-squares fit K ~ a + b exp(c N) by Levenberg-Marquardt.

    Starts from a = 0, b = first K, c = log-slope of the last two points.
    """
    n = np.asarray(n_values, dtype=float)
    k = np.asarray(k_values, dtype=float)
    if len(n) < 3 or n.shape != k.shape:
        raise ValueError("at least three (N, K) points are required")
    order = np.argsort(n)
    n, k = n[order], k[order]
    c0 = math.log(k[-1] / k[-2]) / (n[-1] - n[-2]) if k[-1] > 0 and k[-2] > 0 else 0.1
    # b chosen so that the initial curve passes through the first point
    x0 = np.array([0.0, k[0] * math.exp(-c0 * n[0]), c0])
    res = least_squares(
        lambda x: (_exp_model(x, n) - k) / np.maximum(k, 1.0), x0, method="lm",
        max_nfev=max_steps * 4, xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    if res.status <= 0:
        raise NonConvergence(f"exponential fit failed: {res.message}")
    a, b, c = (float(v) for v in res.x)
    return a, b, c


class SciSolver:
    """Truncated CI using the exact ground-state weights (the classical reference)."""

    name = "sci"

    def __init__(self, fraction: float | None = None, count: int | None = None, seed: int = 0):
        self.fraction = fraction
        self.count = count
        self.seed = seed
        self.last_ci: CiSet | None = None

    def solve(self, model) -> EmbSolution:
        basis = half_filled_sector(model.quadratic().shape[0] - 1)
        full = build_hamiltonian(model, basis)
        ref = solve_fci(model, basis, seed=self.seed)
        ci = truncate_by_weight(np.abs(ref.amplitudes) ** 2, basis, fraction=self.fraction, count=self.count)
        self.last_ci = ci
        return solve_subspace(model, ci, seed=self.seed, full=full)


REPORT_COLUMNS = ["p", "K", "R_E", "R_E_rel", "R_A"]


def write_report_csv(path, rows: list[tuple[float, int, SciErrorReport]], header: str | None = None) -> None:
    n_mom = max((len(r.r_moments) for _, _, r in rows), default=0)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS + [f"R_A^{n}" for n in range(n_mom)] + ["sigma_alpha"])
        for p, k, r in rows:
            writer.writerow(
                [f"{p:.6f}", k, f"{r.r_energy:.12e}", f"{r.r_energy_rel:.12e}", f"{r.r_dos:.12e}"]
                + [f"{m:.12e}" for m in r.r_moments]
                + [f"{r.sigma_alpha:.12f}"]
            )
