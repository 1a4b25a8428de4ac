"""Quantum-selected CI: sample an LUCJ trial state, keep the configurations seen
in the right symmetry sector, and diagonalize in their span."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .basisrot import RotatedModel, rotate
from .cutting import reassemble, sample_variants
from .errors import ConfigError, EmptyBasis
from .fock import EmbSolution, SectorBasis, build_hamiltonian, half_filled_sector
from .qsim import (
    LucjParams, bits_to_bitstring, bitstring_to_bits, energy_expectation,
    lucj_circuit, reference_preparation, sample, simulate, simulate_sector, spsa_minimize,
)
from .sci import CiSet, solve_subspace, truncate_by_weight

N_VARIANTS = 16


@dataclass(frozen=True)
class HarvestConfig:
    total_shots: int = 320_000
    fraction: float = 0.05
    source: str = "cut"
    layers: int = 1
    macro: int = 4
    micro: int = 10

    def __post_init__(self):
        if self.total_shots < 1:
            raise ConfigError("total_shots must be at least 1")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.source not in ("cut", "uncut"):
            raise ConfigError("source must be 'cut' or 'uncut'")
        if self.source == "cut" and self.layers != 1:
            raise ConfigError(f"cutting supports one layer only; {self.layers} layers need {2 * self.layers} cuts")

    @property
    def shots_per_variant(self) -> int:
        return max(1, self.total_shots // N_VARIANTS)


def postselect(weights: dict[str, float], basis: SectorBasis) -> dict[tuple[int, int], float]:
    """Keep bitstrings with the sector's per-spin particle numbers; renormalize."""
    kept: dict[tuple[int, int], float] = {}
    for bits, w in weights.items():
        if len(bits) != 2 * basis.n_orb:
            raise ValueError(f"bitstring {bits!r} does not have {2 * basis.n_orb} qubits")
        up, dn = bitstring_to_bits(bits)
        if bin(up).count("1") == basis.n_up and bin(dn).count("1") == basis.n_dn and w > 0:
            kept[(up, dn)] = kept.get((up, dn), 0.0) + float(w)
    total = sum(kept.values())
    if not kept or total <= 0:
        raise EmptyBasis("post-selection rejected every sample")
    return {k: v / total for k, v in sorted(kept.items())}


def harvest(cfg: HarvestConfig, survivors: dict[tuple[int, int], float], basis: SectorBasis) -> CiSet:
    """Rank survivors by weight and keep ceil(p |S|) of them (or all, if fewer)."""
    if not survivors:
        raise EmptyBasis("no determinants to harvest")
    w = np.zeros(len(basis))
    for (up, dn), v in survivors.items():
        pos = basis.index(up, dn)
        if pos < 0:
            raise ValueError(f"determinant ({up}, {dn}) is outside the sector")
        w[pos] += v
    cap = math.ceil(cfg.fraction * len(basis) - 1e-9)
    return truncate_by_weight(w, basis, count=min(cap, int(np.count_nonzero(w))))


@dataclass
class QsciResult:
    solution: EmbSolution
    params: LucjParams
    trial_energy: float
    ci: CiSet
    raw_weights: dict[str, float] = field(repr=False, default_factory=dict)
    n_survivors: int = 0


def optimize_ansatz(model, init: LucjParams | None, cfg: HarvestConfig, seed: int, h=None):
    n_orb = model.quadratic().shape[0]
    n_ghosts = n_orb - 1
    basis = half_filled_sector(n_ghosts)
    h = h if h is not None else build_hamiltonian(model, basis)
    prep = reference_preparation(model)
    if init is None:
        init = LucjParams.random(n_orb, cfg.layers, seed=seed)

    def energy(x):
        return energy_expectation(simulate_sector(lucj_circuit(model, init.with_vector(x), prep), basis), model, basis, h)

    res = spsa_minimize(energy, init.vector(), cfg.macro, cfg.micro, seed=seed)
    return init.with_vector(res.x), res.value


def sample_weights(model, params: LucjParams, cfg: HarvestConfig, seed: int) -> dict[str, float]:
    circ = lucj_circuit(model, params)
    if cfg.source == "uncut":
        counts = sample(simulate(circ), cfg.total_shots, seed)
        total = sum(counts.values())
        return {k: c / total for k, c in counts.items()}
    up, dn = sample_variants(circ, cfg.shots_per_variant, seed)
    return reassemble(up, dn)


def qsci_solve(
    model: RotatedModel, cfg: HarvestConfig, seed: int = 0, init: LucjParams | None = None,
    counts: dict[str, int] | None = None,
) -> QsciResult:
    """LUCJ -> SPSA -> sampling -> post-selection -> truncation -> subspace solve.

    ``counts`` bypasses the optimization and sampling stages with externally
    supplied measurement counts.
    """
    n_ghosts = model.quadratic().shape[0] - 1
    basis = half_filled_sector(n_ghosts)
    h = build_hamiltonian(model, basis)
    if counts is None:
        params, e_trial = optimize_ansatz(model, init, cfg, seed, h)
        weights = sample_weights(model, params, cfg, seed)
    else:
        params = init or LucjParams.zeros(n_ghosts + 1, cfg.layers)
        e_trial = float("nan")
        total = sum(counts.values())
        weights = {k: c / total for k, c in counts.items()}
    survivors = postselect(weights, basis)
    ci = harvest(cfg, survivors, basis)
    sol = solve_subspace(model, ci, seed=seed, full=h)
    return QsciResult(sol, params, e_trial, ci, weights, len(survivors))


class QsciSolver:
    """Loop-compatible solver: star rotation, QSCI solve, densities rotated back.

    With ``warm_start`` (the default) the optimized angles of one call seed the
    SPSA run of the next, so the ansatz follows the loop. Without it every call
    starts from the same angles and the solver is a deterministic function of
    the embedding parameters.
    """

    name = "qsci"

    def __init__(self, cfg: HarvestConfig, seed: int = 0, kind: int | None = None, warm_start: bool = True):
        self.cfg = cfg
        self.seed = seed
        self.kind = kind
        self.warm_start = warm_start
        self.params: LucjParams | None = None
        self.history: list[QsciResult] = []

    def solve(self, emb) -> EmbSolution:
        kind = emb.n_ghosts if self.kind is None else self.kind
        model = rotate(emb, kind)
        res = qsci_solve(model, self.cfg, self.seed, self.params if self.warm_start else None)
        self.params = res.params
        self.history.append(res)
        zeta, rho = model.back_rotate(res.solution.zeta, res.solution.rho_emb)
        zeta, rho = np.real_if_close(zeta), np.real_if_close(rho)
        return replace(res.solution, zeta=zeta, rho_emb=rho)


def write_basis_dump(path, ci: CiSet, header: str | None = None) -> None:
    """Harvested determinants as (up_bits, dn_bits, bitstring, weight) rows."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(["up_bits", "dn_bits", "bitstring", "weight"])
        n_orb = ci.basis.n_orb
        for det, w in zip(ci.determinants, ci.weights):
            writer.writerow([det.up_bits, det.dn_bits, bits_to_bitstring(det.up_bits, det.dn_bits, n_orb), f"{w:.12e}"])
