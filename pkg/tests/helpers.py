"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np

from ggut.fock import model_quadratic
from ggut.params import EmbParams


def random_emb(rng, n_ghosts: int, u: float | None = None, complex_: bool = False) -> EmbParams:
    delta = rng.normal(size=n_ghosts)
    lam = rng.normal(size=(n_ghosts, n_ghosts))
    if complex_:
        delta = delta + 1j * rng.normal(size=n_ghosts)
        lam = lam + 1j * rng.normal(size=(n_ghosts, n_ghosts))
    lam = 0.5 * (lam + lam.conj().T)
    u = float(rng.uniform(0, 4)) if u is None else u
    return EmbParams(delta, lam, u, -u / 2)


def fock_annihilators(n_modes: int) -> list[np.ndarray]:
    """Dense c_m on the 2^n Fock space; bit m of the index is mode m, and
    c_m carries the sign (-1)^(number of occupied modes below m)."""
    dim = 2**n_modes
    idx = np.arange(dim)
    ops = []
    for m in range(n_modes):
        c = np.zeros((dim, dim))
        occ = (idx >> m) & 1 == 1
        src = idx[occ]
        below = np.array([bin(s & ((1 << m) - 1)).count("1") for s in src])
        c[src ^ (1 << m), src] = (-1.0) ** below
        ops.append(c)
    return ops


def fock_hamiltonian(model) -> tuple[np.ndarray, list[np.ndarray]]:
    """Embedding Hamiltonian on the full Fock space; modes are up orbitals then down."""
    h = model_quadratic(model)
    n = h.shape[0]
    c = fock_annihilators(2 * n)
    ham = np.zeros((4**n, 4**n), dtype=np.result_type(h, float))
    for s in range(2):
        for p in range(n):
            for q in range(n):
                if h[p, q] != 0:
                    ham = ham + h[p, q] * c[s * n + p].T @ c[s * n + q]
    n_up, n_dn = c[0].T @ c[0], c[n].T @ c[n]
    ham = ham + model.u * n_up @ n_dn
    return ham, c


def fock_index(up_bits, dn_bits, n_orb: int):
    return np.asarray(up_bits) | (np.asarray(dn_bits) << n_orb)


def semicircle_greens(z, half_bandwidth: float = 1.0):
    """Local Green's function of the semicircular DOS, branch with Im G < 0 above the axis."""
    d = half_bandwidth
    z = np.asarray(z, dtype=complex)
    root = np.sqrt(z - d) * np.sqrt(z + d)
    return 2 * (z - root) / d**2


_PAULIS = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def pauli_string(n_qubits: int, ops: dict[int, str]) -> np.ndarray:
    """Kronecker product with qubit 0 as the most significant factor."""
    out = np.eye(1, dtype=complex)
    for q in range(n_qubits):
        out = np.kron(out, _PAULIS[ops[q]] if q in ops else np.eye(2))
    return out


def gate_unitary_oracle(kind: str, qubits, param: float, n_qubits: int) -> np.ndarray:
    """exp(i * generator * param) built from Pauli strings with a matrix exponential."""
    from scipy.linalg import expm

    if kind == "phase":
        gen = pauli_string(n_qubits, {qubits[0]: "Z"})
    elif kind == "zz":
        gen = pauli_string(n_qubits, {qubits[0]: "Z", qubits[1]: "Z"})
    else:
        i, j = qubits
        gen = 0.5 * (pauli_string(n_qubits, {i: "X", j: "X"}) + pauli_string(n_qubits, {i: "Y", j: "Y"}))
    return expm(1j * param * gen)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
