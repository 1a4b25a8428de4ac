"""Self-consistent ghost Gutzwiller loop.

One iteration maps quasi-particle parameters (omega, lambda_qp) to embedding
parameters (delta, lambda_emb), solves the embedding ground state, and maps
its one-body densities back to new quasi-particle parameters. All quantities
are per spin; the paramagnetic solution is mirrored to the other spin.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NonConvergence, SingularDensityError
from .fock import EmbSolution
from .model import EnergyGrid, HubbardParams, LatticeSpec, discretize_semicircle
from .params import EmbParams, QpParams, hermitize, is_hermitian

log = logging.getLogger(__name__)

# eigenvalue floor for rho(1-rho); ghost modes decoupled from the impurity
# sit at exactly 0 or 1 and would otherwise dominate the update with noise
EIG_CLIP = 1e-8
SINGULAR_TOL = 1e-12
CONFLUENT_TOL = 1e-10


def fermi_matrix(h: np.ndarray, T: float) -> np.ndarray:
    """Fermi-Dirac function of a Hermitian matrix, U f(E) U^+."""
    h = np.asarray(h)
    if h.ndim == 0:
        h = h.reshape(1, 1)
    if not is_hermitian(h):
        raise ValueError("fermi_matrix needs a Hermitian matrix")
    if not T > 0:
        raise ValueError("temperature must be positive")
    e, v = np.linalg.eigh(h)
    return hermitize((v * expit(-e / T)) @ v.conj().T)


def _band_matrices(qp: QpParams, grid: EnergyGrid) -> np.ndarray:
    """omega eps omega^+ + lambda_qp for every grid energy, shape (nk, N_g, N_g)."""
    outer = np.outer(qp.omega, qp.omega.conj())
    return grid.points[:, None, None] * outer[None] + qp.lambda_qp[None]


def _band_occupations(qp: QpParams, grid: EnergyGrid, T: float) -> np.ndarray:
    e, v = np.linalg.eigh(_band_matrices(qp, grid))
    f = expit(-e / T)
    return np.einsum("kab,kb,kcb->kac", v, f, v.conj())


def compute_rho_qp(qp: QpParams, grid: EnergyGrid, T: float) -> np.ndarray:
    """Quasi-particle ghost density, rho_ab = sum_k w_k [n_F(h_k)]_ba."""
    occ = _band_occupations(qp, grid, T)
    rho = np.einsum("k,kab->ab", grid.weights, occ).T
    rho = hermitize(rho)
    return rho.real if not np.iscomplexobj(qp.omega) and not np.iscomplexobj(qp.lambda_qp) else rho


def _sqrt_fn(x):
    return np.sqrt(x * (1 - x))


def _sqrt_fn_prime(x):
    return (1 - 2 * x) / (2 * np.sqrt(x * (1 - x)))


def _density_eigh(rho: np.ndarray, strict: bool = False, clip: float = EIG_CLIP):
    if not is_hermitian(rho, 1e-8):
        raise ValueError("density matrix must be Hermitian")
    lam, u = np.linalg.eigh(hermitize(rho))
    if strict and np.any((lam < SINGULAR_TOL) | (lam > 1 - SINGULAR_TOL)):
        raise SingularDensityError(f"density eigenvalues {lam} touch 0 or 1")
    return np.clip(lam, clip, 1 - clip), u


def inv_sqrt_rho(rho: np.ndarray, strict: bool = False, clip: float = EIG_CLIP) -> np.ndarray:
    """[rho (1 - rho)]^(-1/2) with eigenvalues clipped away from 0 and 1."""
    lam, u = _density_eigh(rho, strict, clip)
    return (u / _sqrt_fn(lam)) @ u.conj().T


def matfunc_derivative(rho: np.ndarray, clip: float = EIG_CLIP) -> np.ndarray:
    """Derivative table d g(rho)_cd / d rho_ab for g(x) = sqrt(x (1 - x)).

    Built from divided differences of g in the eigenbasis of rho (confluent
    limit g' for near-degenerate eigenvalues). Indexed as ``table[c, d, a, b]``.
    """
    lam, u = _density_eigh(rho, clip=clip)
    diff = lam[:, None] - lam[None, :]
    gl = _sqrt_fn(lam)
    confluent = np.abs(diff) < CONFLUENT_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(confluent, 0.0, (gl[:, None] - gl[None, :]) / np.where(confluent, 1.0, diff))
    gp = _sqrt_fn_prime(lam)
    dd = np.where(confluent, 0.5 * (gp[:, None] + gp[None, :]), dd)
    # dg = U (G o (U^+ drho U)) U^+
    return np.einsum("ci,ai,ij,bj,dj->cdab", u, u.conj(), dd, u, u.conj())


def derivative_term(rho: np.ndarray, omega: np.ndarray, delta: np.ndarray, clip: float = EIG_CLIP) -> np.ndarray:
    """sum_cd omega_c d g_cd / d rho_ab delta_d plus its Hermitian conjugate."""
    table = matfunc_derivative(rho, clip)
    y = np.einsum("c,cdab,d->ab", omega, table, delta)
    return y + y.conj().T


def compute_emb_params(
    qp: QpParams, rho_qp: np.ndarray, grid: EnergyGrid, T: float, u: float = 0.0, mu: float = 0.0,
    strict: bool = False, clip: float = EIG_CLIP,
) -> EmbParams:
    """Hybridization and ghost potential of the embedding Hamiltonian."""
    occ = _band_occupations(qp, grid, T)
    # [eps omega^+ n_F(h_k)]_c summed over the grid
    kin = np.einsum("k,k,b,kbc->c", grid.weights, grid.points, qp.omega.conj(), occ)
    delta = inv_sqrt_rho(rho_qp, strict, clip) @ kin
    lam_emb = -derivative_term(rho_qp, qp.omega, delta, clip) - qp.lambda_qp
    lam_emb = hermitize(lam_emb)
    if not np.iscomplexobj(qp.omega) and not np.iscomplexobj(qp.lambda_qp):
        delta, lam_emb = delta.real, lam_emb.real
    return EmbParams(delta, lam_emb, u, mu)


def ghost_hole_density(rho_emb: np.ndarray) -> np.ndarray:
    """1 - rho_emb^T; the embedding ghosts are holes of the quasi-particle ghosts."""
    return np.eye(rho_emb.shape[0]) - rho_emb.T


def update_qp(solution: EmbSolution, emb: EmbParams, strict: bool = False, clip: float = EIG_CLIP) -> QpParams:
    """New (omega, lambda_qp) from the embedding ground-state densities."""
    zeta = np.asarray(solution.zeta)
    rho_emb = np.asarray(solution.rho_emb)
    omega = zeta @ inv_sqrt_rho(rho_emb, strict, clip)
    # the derivative is taken at the hole density, where d g flips sign
    rho_h = ghost_hole_density(rho_emb)
    lam_qp = -derivative_term(rho_h, omega, emb.delta, clip) - emb.lambda_emb
    lam_qp = hermitize(lam_qp)
    if not np.iscomplexobj(lam_qp) or np.allclose(lam_qp.imag, 0):
        lam_qp = lam_qp.real
    if np.iscomplexobj(omega) and np.allclose(omega.imag, 0):
        omega = omega.real
    return QpParams(omega, lam_qp)


def initial_qp(n_ghosts: int, half_bandwidth: float = 1.0) -> QpParams:
    """Uniform omega and evenly spaced diagonal lambda_qp over [-D, D]."""
    if n_ghosts == 1:
        levels = np.zeros(1)
    else:
        levels = np.linspace(-half_bandwidth, half_bandwidth, n_ghosts)
    return QpParams(np.full(n_ghosts, 1 / np.sqrt(n_ghosts)), np.diag(levels))


@dataclass
class LoopState:
    iteration: int
    residual_omega: float
    residual_lambda: float
    residual_trace: float
    mixing_alpha: float
    energy: float = float("nan")
    # size of the particle-hole-odd part removed from the proposal (0 when not projecting)
    symmetry_breaking: float = 0.0

    @property
    def residual(self) -> float:
        return max(self.residual_omega, self.residual_lambda, self.residual_trace)


@dataclass
class LoopConfig:
    tol: float = 1e-6
    mixing: float = 0.3
    max_iter: int = 200
    warm_start: str | Path | None = None
    raise_on_nonconvergence: bool = True
    checkpoint: str | Path | None = None
    # project onto particle-hole symmetric parameters; None means "when mu = -U/2"
    particle_hole: bool | None = None
    eig_clip: float = EIG_CLIP
    strict: bool = False

    def __post_init__(self):
        if not 0 < self.mixing <= 1:
            raise ConfigError("mixing must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be positive and max_iter at least 1")


@dataclass
class ConvergedResult:
    qp: QpParams
    emb: EmbParams
    solution: EmbSolution
    history: list[LoopState] = field(default_factory=list)
    converged: bool = True
    rho_qp: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.history)


def particle_hole_project(qp: QpParams) -> QpParams:
    """Nearest parameters invariant under the ghost reversal J: J omega = omega, J L J = -L.

    At half filling the exact loop map preserves this symmetry when the initial
    guess has it; projecting removes round-off that would otherwise grow, and
    the symmetry-odd part of proposals from truncated solvers.
    """
    omega = 0.5 * (qp.omega + qp.omega[::-1])
    lam = 0.5 * (qp.lambda_qp - qp.lambda_qp[::-1, ::-1])
    return QpParams(omega, hermitize(lam))


def is_particle_hole_symmetric(qp: QpParams, tol: float = 1e-8) -> bool:
    return bool(
        np.allclose(qp.omega, qp.omega[::-1], atol=tol)
        and np.allclose(qp.lambda_qp, -qp.lambda_qp[::-1, ::-1], atol=tol)
    )


def loop_step(qp: QpParams, model: HubbardParams, grid: EnergyGrid, solver, clip: float = EIG_CLIP, strict: bool = False):
    """One pass of the four loop steps; returns (rho_qp, emb, solution, proposed qp)."""
    rho_qp = compute_rho_qp(qp, grid, model.T)
    emb = compute_emb_params(qp, rho_qp, grid, model.T, u=model.U, mu=model.mu, strict=strict, clip=clip)
    sol = solver.solve(emb)
    return rho_qp, emb, sol, update_qp(sol, emb, strict, clip)


def run_loop(
    model: HubbardParams, lattice: LatticeSpec, solver, cfg: LoopConfig | None = None,
    n_ghosts: int | None = None, init: QpParams | None = None, callback=None,
) -> ConvergedResult:
    """Iterate the loop with linear mixing until all residuals drop below tol.

    The starting point is, in order of precedence: ``init``, the checkpoint at
    ``cfg.warm_start``, or :func:`initial_qp`.
    """
    cfg = cfg or LoopConfig()
    if init is None and cfg.warm_start:
        init = read_checkpoint(cfg.warm_start).qp
    if init is None:
        if n_ghosts is None:
            raise ConfigError("n_ghosts is required without an initial guess")
        init = initial_qp(n_ghosts, lattice.half_bandwidth)
    n_g = init.n_ghosts
    if n_g % 2 == 0:
        raise ConfigError("only odd numbers of ghosts are supported")
    grid = discretize_semicircle(lattice)
    symmetric = cfg.particle_hole
    if symmetric is None:
        symmetric = bool(np.isclose(model.mu, -model.U / 2)) and is_particle_hole_symmetric(init, 1e-6)
    qp = particle_hole_project(init) if symmetric else init
    history: list[LoopState] = []
    for it in range(1, cfg.max_iter + 1):
        rho_qp, emb, sol, prop = loop_step(qp, model, grid, solver, cfg.eig_clip, cfg.strict)
        rho_h = ghost_hole_density(sol.rho_emb)
        breaking = 0.0
        if symmetric:
            # the loop iterates the projected map, so its fixed point is judged against it
            sym = particle_hole_project(prop)
            breaking = float(max(np.max(np.abs(sym.omega - prop.omega)), np.max(np.abs(sym.lambda_qp - prop.lambda_qp))))
            prop = sym
        state = LoopState(
            iteration=it,
            residual_omega=float(np.max(np.abs(prop.omega - qp.omega))),
            residual_lambda=float(np.max(np.abs(prop.lambda_qp - qp.lambda_qp))),
            residual_trace=float(abs(np.trace(rho_qp) - np.trace(rho_h))),
            mixing_alpha=cfg.mixing,
            energy=sol.energy,
            symmetry_breaking=breaking,
        )
        history.append(state)
        log.info(
            "iter %d  dOmega %.2e  dLambda %.2e  dTr %.2e  E %.8f",
            it, state.residual_omega, state.residual_lambda, state.residual_trace, sol.energy,
        )
        if callback is not None:
            callback(state, qp, emb, sol)
        if state.residual < cfg.tol:
            result = ConvergedResult(qp, emb, sol, history, True, rho_qp)
            if cfg.checkpoint:
                write_checkpoint(cfg.checkpoint, result, model)
            return result
        a = cfg.mixing
        qp = QpParams(
            a * prop.omega + (1 - a) * qp.omega,
            hermitize(a * prop.lambda_qp + (1 - a) * qp.lambda_qp),
        )
        if symmetric:
            qp = particle_hole_project(qp)
    result = ConvergedResult(qp, emb, sol, history, False, rho_qp)
    if cfg.checkpoint:
        write_checkpoint(cfg.checkpoint, result, model)
    if cfg.raise_on_nonconvergence:
        err = NonConvergence(
            f"loop not converged after {cfg.max_iter} iterations "
            f"(last residual {history[-1].residual:.3e})",
            history=history,
        )
        err.result = result
        raise err
    return result


# -- checkpoints --------------------------------------------------------------


def _pairs(x) -> list:
    x = np.asarray(x, dtype=complex).ravel()
    return [[float(v.real), float(v.imag)] for v in x]


def _unpairs(pairs, shape=None) -> np.ndarray:
    arr = np.array([complex(a, b) for a, b in pairs])
    if np.allclose(arr.imag, 0):
        arr = arr.real
    return arr.reshape(shape) if shape else arr


@dataclass
class Checkpoint:
    qp: QpParams
    u: float
    mu: float
    T: float
    iteration: int = 0
    residuals: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def n_ghosts(self) -> int:
        return self.qp.n_ghosts


def write_checkpoint(path, result: ConvergedResult | QpParams, model: HubbardParams, extra=None) -> None:
    if isinstance(result, ConvergedResult):
        qp = result.qp
        last = result.history[-1] if result.history else None
        iteration = last.iteration if last else 0
        residuals = {
            "omega": last.residual_omega, "lambda": last.residual_lambda, "trace": last.residual_trace,
        } if last else {}
        converged = result.converged
    else:
        qp, iteration, residuals, converged = result, 0, {}, None
    doc = {
        "N_g": qp.n_ghosts,
        "U": model.U,
        "mu": model.mu,
        "T": model.T,
        "omega": _pairs(qp.omega),
        "lambda_qp": _pairs(qp.lambda_qp),
        "iteration": iteration,
        "residuals": residuals,
        "converged": converged,
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1))


def read_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    n = int(doc["N_g"])
    qp = QpParams(_unpairs(doc["omega"]), _unpairs(doc["lambda_qp"], (n, n)))
    return Checkpoint(
        qp, float(doc["U"]), float(doc["mu"]), float(doc["T"]),
        int(doc.get("iteration", 0)), doc.get("residuals", {}), doc.get("extra", {}),
    )
