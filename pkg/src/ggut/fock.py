"""Determinant basis, sparse embedding Hamiltonian, Lanczos and 1-RDMs.

Orbital 0 is the impurity, orbitals 1..N_g are the ghosts; the same
ordering is used for both spins. A determinant is a pair of bitmasks
(bit p set = orbital p occupied). Fermionic signs follow a Jordan-Wigner
ordering of the spin-up block followed by the spin-down block, so every
spin-conserving one-body term acts within its own block and the sector
Hamiltonian is ``K_up (x) 1 + 1 (x) K_dn + diag(interaction)``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import NonConvergence
from .params import EmbParams

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class Determinant:
    up_bits: int
    dn_bits: int


def popcount(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    count = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


@functools.lru_cache(maxsize=64)
def strings(n_orb: int, n_el: int) -> np.ndarray:
    """All n_orb-bit occupation strings with n_el bits set, ascending."""
    if n_el == 0:
        return np.zeros(1, dtype=np.int64)
    out = [sum(1 << p for p in occ) for occ in combinations(range(n_orb), n_el)]
    arr = np.array(sorted(out), dtype=np.int64)
    arr.setflags(write=False)
    return arr


class SectorBasis:
    """Ordered determinants of a fixed (n_up, n_dn) sector.

    States are sorted by (up_bits, dn_bits); position = i_up * n_dn_strings + i_dn.
    """

    def __init__(self, n_orb: int, n_up: int, n_dn: int):
        if n_orb < 1:
            raise ValueError("n_orb must be positive")
        if not (0 <= n_up <= n_orb and 0 <= n_dn <= n_orb):
            raise ValueError(f"particle counts ({n_up}, {n_dn}) out of range for {n_orb} orbitals")
        self.n_orb = n_orb
        self.n_up = n_up
        self.n_dn = n_dn
        self.up_strings = strings(n_orb, n_up)
        self.dn_strings = strings(n_orb, n_dn)

    def __len__(self) -> int:
        return len(self.up_strings) * len(self.dn_strings)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.up_strings), len(self.dn_strings)

    @functools.cached_property
    def up(self) -> np.ndarray:
        return np.repeat(self.up_strings, len(self.dn_strings))

    @functools.cached_property
    def dn(self) -> np.ndarray:
        return np.tile(self.dn_strings, len(self.up_strings))

    @property
    def states(self) -> list[Determinant]:
        return [Determinant(int(u), int(d)) for u, d in zip(self.up, self.dn)]

    def index(self, up_bits, dn_bits) -> np.ndarray:
        """Positions of determinants; -1 where a determinant is not in the sector."""
        up_bits = np.asarray(up_bits, dtype=np.int64)
        dn_bits = np.asarray(dn_bits, dtype=np.int64)
        iu = np.searchsorted(self.up_strings, up_bits)
        idn = np.searchsorted(self.dn_strings, dn_bits)
        iu_c = np.minimum(iu, len(self.up_strings) - 1)
        idn_c = np.minimum(idn, len(self.dn_strings) - 1)
        ok = (self.up_strings[iu_c] == up_bits) & (self.dn_strings[idn_c] == dn_bits)
        return np.where(ok, iu_c * len(self.dn_strings) + idn_c, -1)

    def __contains__(self, det: Determinant) -> bool:
        return bool(self.index(det.up_bits, det.dn_bits) >= 0)


def enumerate_sector(n_orb: int, n_up: int, n_dn: int) -> SectorBasis:
    basis = SectorBasis(n_orb, n_up, n_dn)
    assert len(basis) == comb(n_orb, n_up) * comb(n_orb, n_dn)
    return basis


def half_filled_sector(n_ghosts: int) -> SectorBasis:
    """The (N_g+1)/2 per spin sector of an impurity plus N_g ghosts."""
    n_orb = n_ghosts + 1
    if n_orb % 2:
        raise ValueError("half filling needs an odd number of ghosts")
    return enumerate_sector(n_orb, n_orb // 2, n_orb // 2)


@functools.lru_cache(maxsize=64)
def hop_table(n_orb: int, n_el: int):
    """Nonzero elements of c_p^+ c_q on the n_el-particle strings.

    Returns a dict (p, q) -> (src, dst, sign) of index arrays into strings(n_orb, n_el).
    """
    strs = strings(n_orb, n_el)
    table = {}
    for p in range(n_orb):
        for q in range(n_orb):
            occ_q = (strs >> q) & 1 == 1
            if p == q:
                src = np.nonzero(occ_q)[0]
                table[p, q] = (src, src, np.ones(len(src)))
                continue
            ok = occ_q & ((strs >> p) & 1 == 0)
            src = np.nonzero(ok)[0]
            s = strs[src]
            new = (s ^ (1 << q)) | (1 << p)
            lo, hi = min(p, q), max(p, q)
            between = ((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1)
            sign = 1.0 - 2.0 * (popcount(s & between) % 2)
            dst = np.searchsorted(strs, new)
            table[p, q] = (src, dst, sign)
    return table


def spin_block(h: np.ndarray, n_orb: int, n_el: int) -> sp.csr_matrix:
    """Matrix of sum_pq h[p, q] c_p^+ c_q on the n_el-particle strings."""
    dim = len(strings(n_orb, n_el))
    rows, cols, vals = [], [], []
    for (p, q), (src, dst, sign) in hop_table(n_orb, n_el).items():
        if h[p, q] == 0 or len(src) == 0:
            continue
        rows.append(dst)
        cols.append(src)
        vals.append(h[p, q] * sign)
    if not rows:
        return sp.csr_matrix((dim, dim), dtype=h.dtype)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )


def model_quadratic(model) -> np.ndarray:
    """One-body matrix including mu on the impurity orbital."""
    h = np.array(model.quadratic(), dtype=np.result_type(model.quadratic(), float))
    h[0, 0] += model.mu
    return h


def interaction_diagonal(model, basis: SectorBasis) -> np.ndarray:
    """U n0u n0d on the sector, as a (n_up_strings, n_dn_strings) array."""
    nu = (basis.up_strings & 1).astype(float)
    nd = (basis.dn_strings & 1).astype(float)
    return model.u * np.outer(nu, nd)


def _check_dims(model, basis: SectorBasis) -> np.ndarray:
    h = model_quadratic(model)
    if h.shape != (basis.n_orb, basis.n_orb):
        raise ValueError(f"model has {h.shape[0]} orbitals, basis has {basis.n_orb}")
    return h


def build_hamiltonian(model, basis: SectorBasis) -> sp.csr_matrix:
    """Sparse Hamiltonian of an embedding model on a full sector."""
    h = _check_dims(model, basis)
    kup = spin_block(h, basis.n_orb, basis.n_up)
    kdn = spin_block(h, basis.n_orb, basis.n_dn)
    nu, nd = basis.shape
    ham = sp.kron(kup, sp.identity(nd), format="csr") + sp.kron(sp.identity(nu), kdn, format="csr")
    ham = ham + sp.diags(interaction_diagonal(model, basis).ravel())
    return ham.tocsr()


class SectorHamiltonian(LinearOperator):
    """Matrix-free sector Hamiltonian using the spin-block product structure."""

    def __init__(self, model, basis: SectorBasis):
        h = _check_dims(model, basis)
        self.basis = basis
        self.kup = spin_block(h, basis.n_orb, basis.n_up)
        self.kdn_t = spin_block(h, basis.n_orb, basis.n_dn).T.tocsr()
        self.diag = interaction_diagonal(model, basis)
        dtype = np.result_type(h, float)
        super().__init__(dtype=dtype, shape=(len(basis), len(basis)))

    def _matvec(self, x):
        x2 = np.asarray(x).reshape(self.basis.shape)
        y = self.kup @ x2 + (self.kdn_t.T @ x2.T).T + self.diag * x2
        return y.ravel()

    def _adjoint(self):
        return self


# embedding spectra with weakly coupled ghosts are dense near the ground state
SOLVER_MAX_MATVEC = 5000


def lanczos_ground_state(
    apply, dim: int, seed: int = 0, tol: float = 1e-9, max_iter: int = 500, krylov: int = 120,
    v0: np.ndarray | None = None, keep: int = 8, dtype=float,
):
    """Lowest eigenpair by thick-restarted Lanczos with full reorthogonalization.

    Args:
        apply: callable v -> H v for a Hermitian H.
        dim: dimension of H.
        seed: seeds the random start vector.
        tol: target for ||H v - E v||.
        max_iter: cap on the total number of matrix-vector products.
        krylov: maximum basis size per restart cycle.
        v0: optional start vector (overrides the random start).
        keep: number of lowest Ritz vectors carried across a restart.
        dtype: scalar type of H (complex H needs a complex Krylov basis).

    Returns:
        (energy, normalized vector)
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) if v0 is None else np.array(v0)
    v = v / np.linalg.norm(v)
    # keep the Krylov basis under ~200 MB
    krylov = max(4, min(krylov, dim, int(2.5e7 // max(dim, 1))))
    keep = max(1, min(keep, krylov // 2))
    basis = np.zeros((krylov + 1, dim), dtype=np.result_type(v, dtype, float))
    proj = np.zeros((krylov, krylov))
    basis[0] = v
    n_kept = 0
    n_mv = 0
    best = (np.inf, None, None)
    while True:
        j = n_kept
        while True:
            w = apply(basis[j])
            n_mv += 1
            proj[j, j] = float(np.real(np.vdot(basis[j], w)))
            # two passes of classical Gram-Schmidt against the whole basis
            for _ in range(2):
                w = w - basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
            beta = float(np.linalg.norm(w))
            k = j + 1
            evals, evecs = np.linalg.eigh(proj[:k, :k])
            est = abs(beta * evecs[-1, 0])
            if beta < 1e-12 * max(1.0, abs(evals[0])) or est < 0.1 * tol:
                break
            if k == krylov or n_mv >= max_iter:
                break
            basis[k] = w / beta
            proj[j, k] = proj[k, j] = beta
            j = k
        ritz = evecs[:, 0] @ basis[:k]
        ritz /= np.linalg.norm(ritz)
        hv = apply(ritz)
        n_mv += 1
        energy = float(np.real(np.vdot(ritz, hv)))
        resid = float(np.linalg.norm(hv - energy * ritz))
        if resid < best[0]:
            best = (resid, energy, ritz)
        if resid < tol:
            return energy, ritz
        if n_mv >= max_iter or beta < 1e-12 * max(1.0, abs(evals[0])):
            raise NonConvergence(
                f"Lanczos stopped after {n_mv} products with residual {best[0]:.3e}",
                best_residual=best[0],
            )
        # thick restart: lowest Ritz vectors plus the current residual direction
        n_kept = min(keep, k)
        kept = evecs[:, :n_kept].T @ basis[:k]
        basis[:n_kept] = kept
        basis[n_kept] = w / beta
        proj[:] = 0.0
        proj[np.arange(n_kept), np.arange(n_kept)] = evals[:n_kept]
        proj[:n_kept, n_kept] = proj[n_kept, :n_kept] = beta * evecs[-1, :n_kept]


def ground_state(h, seed: int = 0, tol: float = 1e-9, max_iter: int = 500, v0=None):
    """Lowest eigenpair of a sparse matrix or LinearOperator."""
    dim = h.shape[0]
    if dim < 1:
        raise ValueError("empty Hamiltonian")
    if dim == 1:
        return float(np.real(h @ np.ones(1))[0]), np.ones(1)
    return lanczos_ground_state(lambda x: h @ x, dim, seed=seed, tol=tol, max_iter=max_iter, v0=v0, dtype=h.dtype)


# states closer than this to the ground energy count as degenerate with it
DEGENERACY_TOL = 1e-6


def ground_manifold(
    h, seed: int = 0, tol: float = DEGENERACY_TOL, max_states: int = 64, max_iter: int = SOLVER_MAX_MATVEC,
):
    """All eigenpairs within ``tol`` of the ground energy, by deflated Lanczos.

    Found vectors are lifted out of the way (P H P + s Q Q^+, with P = 1 - Q Q^+
    and s far above the spectrum) before searching for the next one.

    Returns:
        (energies, vectors) with vectors as orthonormal columns.
    """
    dim = h.shape[0]
    e0, v = ground_state(h, seed=seed, max_iter=max_iter)
    energies, vecs = [e0], [v]
    lift = abs(e0) + float(np.max(np.abs(h @ np.ones(dim)))) + 1.0
    while len(vecs) < min(max_states, dim):
        q = np.column_stack(vecs)

        def apply(x, q=q):
            px = x - q @ (q.conj().T @ x)
            hx = h @ px
            return hx - q @ (q.conj().T @ hx) + (e0 + lift) * (q @ (q.conj().T @ x))

        start = np.random.default_rng(seed + len(vecs)).standard_normal(dim)
        start = start - q @ (q.conj().T @ start)
        e, v = lanczos_ground_state(apply, dim, tol=1e-9, max_iter=max_iter, v0=start, dtype=h.dtype)
        if e > e0 + tol:
            break
        v = v - q @ (q.conj().T @ v)
        energies.append(e)
        vecs.append(v / np.linalg.norm(v))
    return np.array(energies), np.column_stack(vecs)


@dataclass
class EmbSolution:
    """Ground state of an embedding Hamiltonian and its one-body densities.

    ``zeta[a] = <d0^+ d_a>`` and ``rho_emb[a, b] = <d_a^+ d_b>`` over ghost
    indices, averaged over spin. ``indices`` locates the amplitudes in the full
    sector when the solve was done in a truncated determinant set.
    """

    energy: float
    amplitudes: np.ndarray
    zeta: np.ndarray
    rho_emb: np.ndarray
    basis: SectorBasis
    indices: np.ndarray | None = None

    def full_amplitudes(self) -> np.ndarray:
        if self.indices is None:
            return self.amplitudes
        full = np.zeros(len(self.basis), dtype=self.amplitudes.dtype)
        full[self.indices] = self.amplitudes
        return full


def spin_rdms(amplitudes: np.ndarray, basis: SectorBasis, indices=None):
    """Spin-resolved 1-RDMs gamma[p, q] = <c_p^+ c_q> over all orbitals."""
    psi = np.asarray(amplitudes)
    if indices is not None:
        full = np.zeros(len(basis), dtype=psi.dtype)
        full[np.asarray(indices)] = psi
        psi = full
    x = psi.reshape(basis.shape)
    n = basis.n_orb
    dtype = np.result_type(x, float)
    g_up = np.zeros((n, n), dtype=dtype)
    g_dn = np.zeros((n, n), dtype=dtype)
    for (p, q), (src, dst, sign) in hop_table(n, basis.n_up).items():
        if len(src):
            g_up[p, q] = np.sum(sign * np.sum(x[dst].conj() * x[src], axis=1))
    xt = x.T
    for (p, q), (src, dst, sign) in hop_table(n, basis.n_dn).items():
        if len(src):
            g_dn[p, q] = np.sum(sign * np.sum(xt[dst].conj() * xt[src], axis=1))
    return g_up, g_dn


def one_rdm(amplitudes: np.ndarray, basis: SectorBasis, indices=None):
    """Spin-averaged (zeta, rho_emb) over the ghost orbitals."""
    g_up, g_dn = spin_rdms(amplitudes, basis, indices)
    g = 0.5 * (g_up + g_dn)
    zeta = g[0, 1:].copy()
    rho = g[1:, 1:].copy()
    rho = 0.5 * (rho + rho.conj().T)
    if not np.iscomplexobj(amplitudes):
        zeta, rho = zeta.real, rho.real
    return zeta, rho


def solve_fci(
    model, basis: SectorBasis | None = None, seed: int = 0, v0=None, max_iter: int = SOLVER_MAX_MATVEC,
) -> EmbSolution:
    """Full-CI ground state of an embedding model at half filling."""
    if basis is None:
        basis = half_filled_sector(model_quadratic(model).shape[0] - 1)
    op = SectorHamiltonian(model, basis)
    energy, vec = ground_state(op, seed=seed, v0=v0, max_iter=max_iter)
    zeta, rho = one_rdm(vec, basis)
    return EmbSolution(energy, vec, zeta, rho, basis)


def dump_coo(h: sp.spmatrix, path) -> None:
    """Write a sparse matrix as 'row col value' lines (debugging aid)."""
    coo = sp.coo_matrix(h)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")


class FciSolver:
    """Impurity solver that diagonalizes the full half-filled sector."""

    name = "fci"

    def __init__(self, seed: int = 0, max_iter: int = SOLVER_MAX_MATVEC):
        self.seed = seed
        self.max_iter = max_iter
        self._last = None

    def solve(self, model: EmbParams) -> EmbSolution:
        v0 = None
        if self._last is not None and len(self._last) == len(half_filled_sector(model.n_ghosts)):
            v0 = self._last
        sol = solve_fci(model, seed=self.seed, v0=v0, max_iter=self.max_iter)
        self._last = sol.amplitudes
        return sol
