"""Single-particle rotations of the ghost bath: chain, star and partial bases."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .params import EmbParams, hermitize, is_hermitian

ORIGINAL = 0
CHAIN = 1


@dataclass
class RotatedModel:
    """Embedding model with a general quadratic part.

    ``one_body`` is the (N_g+1)-square quadratic matrix without mu (orbital 0 is
    the impurity); ``rotation`` maps rotated orbitals to original ones,
    ``one_body = rotation^+ h_orig rotation``.
    """

    one_body: np.ndarray
    u: float
    mu: float
    rotation: np.ndarray
    kind: int = ORIGINAL

    def __post_init__(self):
        self.one_body = np.asarray(self.one_body)
        self.rotation = np.asarray(self.rotation)
        n = self.one_body.shape[0]
        if not is_hermitian(self.one_body):
            raise ValueError("one_body must be Hermitian")
        if self.rotation.shape != (n, n):
            raise ValueError("rotation shape does not match one_body")
        if not np.allclose(self.rotation.conj().T @ self.rotation, np.eye(n), atol=1e-10):
            raise ValueError("rotation must be unitary")
        if not (np.isclose(abs(self.rotation[0, 0]), 1, atol=1e-12)
                and np.allclose(self.rotation[0, 1:], 0) and np.allclose(self.rotation[1:, 0], 0)):
            raise ValueError("rotation must leave the impurity orbital untouched")
        self.u = float(self.u)
        self.mu = float(self.mu)

    @property
    def n_ghosts(self) -> int:
        return self.one_body.shape[0] - 1

    @property
    def delta(self) -> np.ndarray:
        return self.one_body[0, 1:]

    @property
    def bath(self) -> np.ndarray:
        return self.one_body[1:, 1:]

    def quadratic(self) -> np.ndarray:
        return self.one_body

    @property
    def ghost_rotation(self) -> np.ndarray:
        return self.rotation[1:, 1:]

    def back_rotate(self, zeta: np.ndarray, rho: np.ndarray):
        """Ghost densities in the rotated basis -> original ghost basis.

        With d_a = sum_i W_ai d_rot_i, <d0^+ d_a> = (W zeta_rot)_a and
        <d_a^+ d_b> = (conj(W) rho_rot W^T)_ab.
        """
        w = self.ghost_rotation
        return w @ zeta, hermitize(w.conj() @ rho @ w.T)


def _embed(ghost_rotation: np.ndarray) -> np.ndarray:
    n = ghost_rotation.shape[0]
    r = np.eye(n + 1, dtype=ghost_rotation.dtype)
    r[1:, 1:] = ghost_rotation
    return r


def _rotated(emb: EmbParams | RotatedModel, ghost_rotation: np.ndarray, kind: int) -> RotatedModel:
    h0 = emb.quadratic()
    base = emb.rotation if isinstance(emb, RotatedModel) else np.eye(h0.shape[0])
    r = _embed(ghost_rotation)
    h = hermitize(r.conj().T @ h0 @ r)
    return RotatedModel(h, emb.u, emb.mu, base @ r, kind)


def identity(emb: EmbParams) -> RotatedModel:
    n = emb.n_ghosts
    return RotatedModel(emb.quadratic(), emb.u, emb.mu, np.eye(n + 1), ORIGINAL)


def _lanczos_vectors(bath: np.ndarray, seed: np.ndarray) -> np.ndarray:
    """Orthonormal Krylov vectors of ``bath`` started from ``seed`` (columns)."""
    n = bath.shape[0]
    vecs = []
    norm = np.linalg.norm(seed)
    v = seed / norm if norm > 1e-14 else np.eye(n, dtype=bath.dtype)[0]
    while len(vecs) < n:
        for q in vecs:
            v = v - q * np.vdot(q, v)
        for q in vecs:
            v = v - q * np.vdot(q, v)
        nv = np.linalg.norm(v)
        if nv < 1e-10:
            # Krylov space exhausted: continue with the first basis vector outside it
            cols = np.column_stack(vecs) if vecs else np.zeros((n, 0))
            for e in np.eye(n, dtype=bath.dtype):
                cand = e - cols @ (cols.conj().T @ e)
                if np.linalg.norm(cand) > 1e-6:
                    v = cand
                    break
            continue
        v = v / nv
        vecs.append(v)
        v = bath @ v
    return np.column_stack(vecs)


def to_chain(emb: EmbParams | RotatedModel) -> RotatedModel:
    """Tridiagonal bath with only the first chain site coupled to the impurity.

    The first chain orbital is the normalized hybridization vector; the rest
    follow by Lanczos (equivalently Householder) tridiagonalization of the bath.
    """
    h = emb.quadratic()
    bath = h[1:, 1:]
    # h[0, a] = delta_a couples d0^+ d_a, so the coupled bath mode is conj(delta)
    q = _lanczos_vectors(bath, np.conj(h[0, 1:]))
    # fix signs so that chain hoppings are nonnegative where defined
    for j in range(q.shape[1]):
        ref = (h[0, 1:] @ q[:, 0]) if j == 0 else (q[:, j - 1].conj() @ bath @ q[:, j])
        if abs(ref) > 1e-14:
            q[:, j] *= np.conj(ref) / abs(ref)
        if np.isrealobj(h):
            q[:, j] = q[:, j].real
    return _rotated(emb, np.real_if_close(q), CHAIN)


def _star_order(evals: np.ndarray, couplings: np.ndarray) -> np.ndarray:
    mags = np.round(np.abs(couplings), 12)
    return np.lexsort((evals, -mags))


def to_star(emb: EmbParams | RotatedModel) -> RotatedModel:
    """Diagonal bath; ghosts ordered by descending |delta_rot|, then energy."""
    h = emb.quadratic()
    evals, vecs = np.linalg.eigh(h[1:, 1:])
    couplings = h[0, 1:] @ vecs
    order = _star_order(evals, couplings)
    vecs = vecs[:, order]
    return _rotated(emb, vecs, emb.n_ghosts)


def to_partial(emb: EmbParams | RotatedModel, r: int) -> RotatedModel:
    """Chain basis, then diagonalize the last ``r`` chain orbitals among themselves."""
    n = emb.n_ghosts
    if r == n:
        return to_star(emb)
    if not 2 <= r <= n - 1:
        raise ValueError(f"partial rotation needs 2 <= r <= {n - 1}, got {r}")
    chain = to_chain(emb)
    h = chain.one_body
    lo = n - r
    block = h[1 + lo:, 1 + lo:]
    evals, vecs = np.linalg.eigh(block)
    # coupling of each eigenmode to the preceding chain site
    couplings = h[lo, 1 + lo:] @ vecs
    vecs = vecs[:, _star_order(evals, couplings)]
    g = np.eye(n, dtype=np.result_type(vecs, h))
    g[lo:, lo:] = vecs
    out = _rotated(chain, g, r)
    return out


def rotate(emb: EmbParams, kind: int) -> RotatedModel:
    """Rotation by index: 0 original, 1 chain, 2..N_g-1 partial, N_g star."""
    n = emb.n_ghosts
    if kind == ORIGINAL:
        return identity(emb)
    if kind == n:
        return to_star(emb)
    if kind == CHAIN:
        return to_chain(emb)
    if 2 <= kind < n:
        return to_partial(emb, kind)
    raise ValueError(f"rotation kind must lie in 0..{n}, got {kind}")


def hybridization_table(model: RotatedModel) -> list[tuple[int, float]]:
    """(ghost index, |delta_rot|) sorted by descending magnitude."""
    mags = np.abs(model.delta)
    order = np.argsort(-mags, kind="stable")
    return [(int(i) + 1, float(mags[i])) for i in order]


def write_hybridization_csv(path, model: RotatedModel, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "magnitude"])
        for i, m in hybridization_table(model):
            writer.writerow([i, f"{m:.12e}"])


class RotatedSolver:
    """Solve in a rotated bath basis and report densities in the original one."""

    def __init__(self, inner, kind: int):
        self.inner = inner
        self.kind = kind
        self.name = f"{getattr(inner, 'name', 'solver')}@{kind}"
        self.last_model: RotatedModel | None = None

    def solve(self, emb: EmbParams):
        model = rotate(emb, self.kind)
        self.last_model = model
        sol = self.inner.solve(model)
        zeta, rho = model.back_rotate(sol.zeta, sol.rho_emb)
        if np.isrealobj(sol.zeta) and np.isrealobj(sol.rho_emb):
            zeta, rho = np.real(zeta), np.real(rho)
        return replace(sol, zeta=zeta, rho_emb=rho)
