"""State-vector simulation of number-conserving circuits and the LUCJ ansatz.

Qubit 0 is the most significant bit of an amplitude index and the first
character of a bitstring. For ``n = N_g + 1`` orbitals per spin the layout is
spin-up orbital p on qubit ``n - 1 - p`` and spin-down orbital p on qubit
``n + p``, so the two impurity qubits ``n - 1`` and ``n`` sit next to each
other at the block boundary and the bath chains run outward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fock import SectorBasis, build_hamiltonian, half_filled_sector, model_quadratic

SPSA_A = 0.1
SPSA_C = 0.1
SPSA_STABILITY = 2.0
SPSA_ALPHA = 0.602
SPSA_GAMMA = 0.101


@dataclass(frozen=True)
class Gate:
    """One gate: ``xxyy`` exp(i theta/2 (XX+YY)), ``phase`` exp(i lam Z), ``zz`` exp(i phi ZZ)."""

    kind: str
    qubits: tuple[int, ...]
    param: float = 0.0

    def __post_init__(self):
        arity = {"xxyy": 2, "zz": 2, "phase": 1}
        if self.kind not in arity:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(self.qubits) != arity[self.kind]:
            raise ValueError(f"{self.kind} acts on {arity[self.kind]} qubit(s)")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError("two-qubit gates need distinct qubits")


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    initial: str | None = None

    def append(self, kind: str, qubits, param: float = 0.0) -> None:
        q = tuple(int(x) for x in np.atleast_1d(qubits))
        if any(not 0 <= x < self.n_qubits for x in q):
            raise ValueError(f"qubit index out of range in {q}")
        self.gates.append(Gate(kind, q, float(param)))

    def __len__(self) -> int:
        return len(self.gates)

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, [Gate(g.kind, g.qubits, -g.param) for g in reversed(self.gates)])


# -- state vectors ------------------------------------------------------------


def basis_state(bitstring: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bitstring), dtype=complex)
    psi[int(bitstring, 2)] = 1.0
    return psi


@lru_cache(maxsize=None)
def _bits(n_qubits: int, q: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    return ((idx >> (n_qubits - 1 - q)) & 1).astype(np.int8)


@lru_cache(maxsize=None)
def _pair_indices(n_qubits: int, i: int, j: int):
    """Indices with (bit_i, bit_j) = (0, 1) and their partners with (1, 0)."""
    bi, bj = _bits(n_qubits, i), _bits(n_qubits, j)
    a = np.flatnonzero((bi == 0) & (bj == 1))
    mask = (1 << (n_qubits - 1 - i)) | (1 << (n_qubits - 1 - j))
    return a, a ^ mask


def _z(n_qubits: int, q: int) -> np.ndarray:
    return 1 - 2 * _bits(n_qubits, q).astype(float)


def apply_gate(psi: np.ndarray, gate: Gate, n_qubits: int) -> np.ndarray:
    """Apply one gate in place and return the state."""
    if gate.kind == "xxyy":
        a, b = _pair_indices(n_qubits, *gate.qubits)
        c, s = np.cos(gate.param), 1j * np.sin(gate.param)
        pa, pb = psi[a], psi[b]
        psi[a] = c * pa + s * pb
        psi[b] = s * pa + c * pb
    elif gate.kind == "phase":
        psi *= np.exp(1j * gate.param * _z(n_qubits, gate.qubits[0]))
    else:
        zz = _z(n_qubits, gate.qubits[0]) * _z(n_qubits, gate.qubits[1])
        psi *= np.exp(1j * gate.param * zz)
    return psi


def simulate(circuit: Circuit, initial: np.ndarray | str | None = None) -> np.ndarray:
    if initial is None:
        initial = circuit.initial if circuit.initial is not None else "0" * circuit.n_qubits
    psi = basis_state(initial) if isinstance(initial, str) else np.array(initial, dtype=complex)
    if psi.shape != (2**circuit.n_qubits,):
        raise ValueError("initial state does not match the qubit count")
    for g in circuit.gates:
        apply_gate(psi, g, circuit.n_qubits)
    return psi


_PAULI = {
    "I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]),
}


def gate_matrix(gate: Gate) -> np.ndarray:
    """Dense unitary of a gate on its own qubits (first operand most significant)."""
    if gate.kind == "phase":
        return np.diag(np.exp(1j * gate.param * np.array([1.0, -1.0])))
    if gate.kind == "zz":
        return np.diag(np.exp(1j * gate.param * np.array([1.0, -1.0, -1.0, 1.0])))
    gen = np.kron(_PAULI["X"], _PAULI["X"]) + np.kron(_PAULI["Y"], _PAULI["Y"])
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(0.5j * gate.param * w)) @ v.conj().T


def dense_unitary(circuit: Circuit) -> np.ndarray:
    """Full 2^n unitary by Kronecker embedding of each gate (small circuits only)."""
    n = circuit.n_qubits
    total = np.eye(2**n, dtype=complex)
    for g in circuit.gates:
        u = gate_matrix(g)
        k = len(g.qubits)
        others = [q for q in range(n) if q not in g.qubits]
        perm = list(g.qubits) + others
        full = np.kron(u, np.eye(2 ** (n - k)))
        # reorder tensor axes from (gate qubits, others) to (0..n-1)
        t = full.reshape([2] * (2 * n))
        inv = np.argsort(perm)
        t = t.transpose(list(inv) + [n + x for x in inv])
        total = t.reshape(2**n, 2**n) @ total
    return total


# -- fermion <-> qubit layout ---------------------------------------------------


def up_qubit(n_orb: int, p: int) -> int:
    return n_orb - 1 - p


def dn_qubit(n_orb: int, p: int) -> int:
    return n_orb + p


def bitstring_to_bits(bitstring: str) -> tuple[int, int]:
    """(up_bits, dn_bits) of a 2n-character bitstring under the qubit layout."""
    n = len(bitstring) // 2
    up = sum(1 << p for p in range(n) if bitstring[up_qubit(n, p)] == "1")
    dn = sum(1 << p for p in range(n) if bitstring[dn_qubit(n, p)] == "1")
    return up, dn


def bits_to_bitstring(up: int, dn: int, n_orb: int) -> str:
    chars = ["0"] * (2 * n_orb)
    for p in range(n_orb):
        if up >> p & 1:
            chars[up_qubit(n_orb, p)] = "1"
        if dn >> p & 1:
            chars[dn_qubit(n_orb, p)] = "1"
    return "".join(chars)


@lru_cache(maxsize=None)
def _sector_positions(n_orb: int, n_up: int, n_dn: int) -> np.ndarray:
    """State-vector index of every determinant of the sector, in sector order."""
    from .fock import enumerate_sector

    basis = enumerate_sector(n_orb, n_up, n_dn)
    up_idx = np.zeros(len(basis.up_strings), dtype=np.int64)
    dn_idx = np.zeros(len(basis.dn_strings), dtype=np.int64)
    for p in range(n_orb):
        up_idx |= ((basis.up_strings >> p) & 1).astype(np.int64) << (2 * n_orb - 1 - up_qubit(n_orb, p))
        dn_idx |= ((basis.dn_strings >> p) & 1).astype(np.int64) << (2 * n_orb - 1 - dn_qubit(n_orb, p))
    return (up_idx[:, None] | dn_idx[None, :]).ravel()


def sector_amplitudes(psi: np.ndarray, basis: SectorBasis) -> np.ndarray:
    """Amplitudes of the sector determinants.

    Reversing the spin-up orbital order relative to the fermionic ordering only
    changes every determinant of a fixed sector by the same sign, so these
    amplitudes can be used directly with the sector Hamiltonian.
    """
    return psi[_sector_positions(basis.n_orb, basis.n_up, basis.n_dn)]


def embed_sector(amplitudes: np.ndarray, basis: SectorBasis) -> np.ndarray:
    psi = np.zeros(4**basis.n_orb, dtype=complex)
    psi[_sector_positions(basis.n_orb, basis.n_up, basis.n_dn)] = amplitudes
    return psi


@lru_cache(maxsize=None)
def _sorted_sector(n_orb: int, n_up: int, n_dn: int):
    pos = _sector_positions(n_orb, n_up, n_dn)
    order = np.argsort(pos)
    return pos, pos[order], order


@lru_cache(maxsize=None)
def _sector_pairs(n_orb: int, n_up: int, n_dn: int, i: int, j: int):
    """Sector positions with (bit_i, bit_j) = (0, 1) and of their swapped partners."""
    n_qubits = 2 * n_orb
    pos, sorted_pos, order = _sorted_sector(n_orb, n_up, n_dn)
    bi = (pos >> (n_qubits - 1 - i)) & 1
    bj = (pos >> (n_qubits - 1 - j)) & 1
    a = np.flatnonzero((bi == 0) & (bj == 1))
    partner = pos[a] ^ ((1 << (n_qubits - 1 - i)) | (1 << (n_qubits - 1 - j)))
    loc = np.searchsorted(sorted_pos, partner)
    if np.any(loc >= len(pos)) or np.any(sorted_pos[np.minimum(loc, len(pos) - 1)] != partner):
        raise ValueError("gate leaves the particle-number sector")
    return a, order[loc]


@lru_cache(maxsize=None)
def _sector_z(n_orb: int, n_up: int, n_dn: int, q: int) -> np.ndarray:
    pos = _sector_positions(n_orb, n_up, n_dn)
    return 1.0 - 2.0 * ((pos >> (2 * n_orb - 1 - q)) & 1)


def simulate_sector(circuit: Circuit, basis: SectorBasis, initial: str | None = None) -> np.ndarray:
    """Sector amplitudes of the circuit output, for number-conserving circuits.

    Equal to ``sector_amplitudes(simulate(circuit), basis)`` when the initial
    bitstring lies in the sector, at a fraction of the cost.
    """
    key = (basis.n_orb, basis.n_up, basis.n_dn)
    if circuit.n_qubits != 2 * basis.n_orb:
        raise ValueError("circuit and sector sizes differ")
    initial = initial if initial is not None else circuit.initial
    up, dn = bitstring_to_bits(initial or "0" * circuit.n_qubits)
    start = basis.index(up, dn)
    if start < 0:
        raise ValueError("initial state is outside the sector")
    x = np.zeros(len(basis), dtype=complex)
    x[start] = 1.0
    for g in circuit.gates:
        if g.kind == "xxyy":
            a, b = _sector_pairs(*key, *g.qubits)
            c, s = np.cos(g.param), 1j * np.sin(g.param)
            xa, xb = x[a], x[b]
            x[a] = c * xa + s * xb
            x[b] = s * xa + c * xb
        elif g.kind == "phase":
            x *= np.exp(1j * g.param * _sector_z(*key, g.qubits[0]))
        else:
            x *= np.exp(1j * g.param * _sector_z(*key, g.qubits[0]) * _sector_z(*key, g.qubits[1]))
    return x


def energy_expectation(psi: np.ndarray, model, basis: SectorBasis | None = None, h=None) -> float:
    """<psi|H|psi> for a state supported on the half-filled sector.

    ``psi`` is either a full state vector or the sector amplitudes.
    """
    n_orb = model_quadratic(model).shape[0]
    basis = basis or half_filled_sector(n_orb - 1)
    h = h if h is not None else build_hamiltonian(model, basis)
    x = psi if len(psi) == len(basis) else sector_amplitudes(psi, basis)
    return float(np.real(np.vdot(x, h @ x)))


# -- LUCJ ansatz ------------------------------------------------------------------


def givens_pairs(n: int) -> list[tuple[int, int]]:
    """Nearest-neighbour brick pattern of n(n-1)/2 pairs (local orbital indices)."""
    pairs = []
    for layer in range(n):
        for p in range(layer % 2, n - 1, 2):
            pairs.append((p, p + 1))
    return pairs[: n * (n - 1) // 2]


@dataclass
class LucjParams:
    """Angles of one or more layers, shared by both spins (spin balanced).

    Per layer: ``theta`` for the n(n-1)/2 nearest-neighbour orbital-rotation
    gates, ``lam`` for the n phase gates, ``phi`` for the n-1 same-spin
    density-density gates and ``phi_ud`` for the impurity up-down gate.
    """

    n_orb: int
    theta: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    phi_ud: np.ndarray

    def __post_init__(self):
        n = self.n_orb
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.phi_ud = np.atleast_1d(np.asarray(self.phi_ud, dtype=float))
        m = self.layers
        shapes = {
            "theta": (m, n * (n - 1) // 2), "lam": (m, n), "phi": (m, n - 1), "phi_ud": (m,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")

    @property
    def layers(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def zeros(cls, n_orb: int, layers: int = 1) -> "LucjParams":
        n = n_orb
        return cls(n, np.zeros((layers, n * (n - 1) // 2)), np.zeros((layers, n)),
                   np.zeros((layers, n - 1)), np.zeros(layers))

    @classmethod
    def random(cls, n_orb: int, layers: int = 1, seed: int = 0, scale: float = 0.05) -> "LucjParams":
        p = cls.zeros(n_orb, layers)
        rng = np.random.default_rng(seed)
        return p.with_vector(rng.uniform(-scale, scale, p.size))

    @property
    def size(self) -> int:
        return self.theta.size + self.lam.size + self.phi.size + self.phi_ud.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.lam.ravel(), self.phi.ravel(), self.phi_ud])

    def with_vector(self, x: np.ndarray) -> "LucjParams":
        x = np.asarray(x, dtype=float)
        m, n = self.layers, self.n_orb
        sizes = np.cumsum([self.theta.size, self.lam.size, self.phi.size])
        t, l, f, u = np.split(x, sizes)
        return LucjParams(n, t.reshape(m, -1), l.reshape(m, n), f.reshape(m, n - 1), u)

    def to_json(self) -> str:
        return json.dumps({
            "n_orb": self.n_orb, "theta": self.theta.tolist(), "lam": self.lam.tolist(),
            "phi": self.phi.tolist(), "phi_ud": self.phi_ud.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "LucjParams":
        d = json.loads(text)
        return cls(d["n_orb"], d["theta"], d["lam"], d["phi"], d["phi_ud"])


@dataclass
class MeanField:
    """Hartree mean-field determinant of the embedding model (one orbital set per spin)."""

    orbitals: tuple[np.ndarray, np.ndarray]
    energy: float
    impurity_density: tuple[float, float]


def _aufbau(h: np.ndarray, n_el: int):
    e, c = np.linalg.eigh(h)
    occ = c[:, :n_el]
    return c, (occ @ occ.conj().T).real


def mean_field(model, max_iter: int = 500, tol: float = 1e-10, mixing: float = 0.5) -> MeanField:
    """Lowest-energy Hartree determinant among a paramagnetic and a moment-carrying start.

    The only interaction is U n0u n0d, so each spin sees its one-body matrix
    plus U times the other spin's impurity density. With mu = -U/2 the
    paramagnetic solution is the familiar half-filling shift of +U/2.
    """
    h = np.array(model_quadratic(model), dtype=complex)
    n_orb = h.shape[0]
    n_el = n_orb // 2
    u = float(model.u)
    best: MeanField | None = None
    for start in ((0.5, 0.5), (1.0, 0.0)):
        n_up, n_dn = start
        for _ in range(max_iter):
            h_up, h_dn = h.copy(), h.copy()
            h_up[0, 0] += u * n_dn
            h_dn[0, 0] += u * n_up
            c_up, g_up = _aufbau(h_up, n_el)
            c_dn, g_dn = _aufbau(h_dn, n_el)
            new_up, new_dn = g_up[0, 0], g_dn[0, 0]
            done = max(abs(new_up - n_up), abs(new_dn - n_dn)) < tol
            n_up = mixing * new_up + (1 - mixing) * n_up
            n_dn = mixing * new_dn + (1 - mixing) * n_dn
            if done:
                break
        energy = float(np.real(np.sum(h * g_up.T) + np.sum(h * g_dn.T)) + u * g_up[0, 0] * g_dn[0, 0])
        cand = MeanField((c_up, c_dn), energy, (float(g_up[0, 0]), float(g_dn[0, 0])))
        if best is None or cand.energy < best.energy - 1e-9:
            best = cand
    return best


def reference_occupations(model) -> np.ndarray:
    """Computational orbitals occupied in the reference determinant (per spin):
    the (N_g+1)/2 lowest diagonal entries of the Hartree-shifted one-body
    matrix, ties to lower indices."""
    h = model_quadratic(model)
    n_orb = h.shape[0]
    diag = np.real(np.diag(h)).copy()
    diag[0] += model.u / 2
    order = np.lexsort((np.arange(n_orb), np.round(diag, 12)))
    return np.sort(order[: n_orb // 2])


def reference_bitstring(model) -> str:
    n_orb = model_quadratic(model).shape[0]
    bits = sum(1 << int(p) for p in reference_occupations(model))
    return bits_to_bitstring(bits, bits, n_orb)


def _u2_angles(v: np.ndarray, tol: float = 1e-14):
    """v = diag(e^{i a0}, e^{i a1}) R(theta) diag(1, e^{i b1}), R = [[c, is], [is, c]]."""
    c, s = abs(v[0, 0]), abs(v[0, 1])
    theta = float(np.arctan2(s, c))
    if s < tol:
        return np.angle(v[0, 0]), np.angle(v[1, 1]), 0.0, 0.0
    if c < tol:
        return 0.0, np.angle(v[1, 0]) - np.pi / 2, theta, np.angle(v[0, 1]) - np.pi / 2
    a0 = np.angle(v[0, 0])
    return a0, np.angle(v[1, 0]) - np.pi / 2, theta, np.angle(v[0, 1]) - np.pi / 2 - a0


def givens_network(u: np.ndarray) -> list[tuple[str, tuple[int, ...], float]]:
    """Nearest-neighbour gates whose single-particle action is the unitary ``u``.

    Gates are returned in time order as (kind, local orbitals, angle). An
    exp(i lam Z) gate multiplies its orbital by e^{-2 i lam} (global phases
    dropped); exp(i theta/2 (XX+YY)) acts as [[c, i s], [i s, c]].
    """
    u = np.array(u, dtype=complex)
    n = u.shape[0]
    rotations = []
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            a, b = u[i - 1, j], u[i, j]
            r = np.hypot(abs(a), abs(b))
            if abs(b) < 1e-15:
                continue
            w = np.array([[np.conj(a), np.conj(b)], [-b, a]]) / r
            u[[i - 1, i], :] = w @ u[[i - 1, i], :]
            rotations.append((i - 1, w.conj().T))
    ops: list[tuple[str, tuple[int, ...], float]] = []
    # u_original = W_1^+ ... W_K^+ D: apply D first, then W_K^+, ..., W_1^+
    for p in range(n):
        ops.append(("phase", (p,), -0.5 * float(np.angle(u[p, p]))))
    for p, v in reversed(rotations):
        a0, a1, theta, b1 = _u2_angles(v)
        ops.append(("phase", (p + 1,), -0.5 * b1))
        ops.append(("xxyy", (p, p + 1), theta))
        ops.append(("phase", (p,), -0.5 * a0))
        ops.append(("phase", (p + 1,), -0.5 * a1))
    return [op for op in ops if op[0] != "phase" or abs(op[2]) > 1e-15]


def _rotation_to(orbitals: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """Unitary whose ``occ`` columns are the occupied orbitals (lowest first)."""
    n_orb = orbitals.shape[0]
    virt = np.setdiff1d(np.arange(n_orb), occ)
    u = np.zeros((n_orb, n_orb), dtype=complex)
    u[:, occ] = orbitals[:, : len(occ)]
    u[:, virt] = orbitals[:, len(occ):]
    return u


def reference_preparation(model):
    """Reference bitstring and per-spin gates turning it into the mean-field determinant.

    Returns ``(bitstring, (up_gates, dn_gates))``.
    """
    occ = reference_occupations(model)
    mf = mean_field(model)
    ops = tuple(givens_network(_rotation_to(c, occ)) for c in mf.orbitals)
    return reference_bitstring(model), ops


def _orbital_rotation(circ: Circuit, n: int, theta: np.ndarray, lam: np.ndarray, sign: float) -> None:
    """K (sign=+1) or its inverse (sign=-1) on both spin chains."""
    pairs = givens_pairs(n)
    gates = []
    for (p, q), t in zip(pairs, theta):
        gates.append(("xxyy", (p, q), t))
    for p in range(n):
        gates.append(("phase", (p,), lam[p]))
    if sign < 0:
        gates = [(k, qs, -a) for k, qs, a in reversed(gates)]
    _append_local(circ, n, gates)


def _append_local(circ: Circuit, n: int, gates, spins=(up_qubit, dn_qubit)) -> None:
    for kind, qs, a in gates:
        for qubit in spins:
            circ.append(kind, [qubit(n, x) for x in qs], a)


def build_lucj(n_ghosts: int, params: LucjParams, reference: str | None = None, prep=((), ())) -> Circuit:
    """prod_m K_m J_m J_ud,m K_m^+ acting on the state ``prep`` makes from ``reference``.

    ``prep`` is a pair of gate lists (kind, local orbitals, angle) for the up
    and down spins, applied before the LUCJ layers.
    """
    if n_ghosts % 2 == 0:
        raise ValueError("only odd numbers of ghosts are supported")
    n = n_ghosts + 1
    if params.n_orb != n:
        raise ValueError("parameter set does not match the orbital count")
    if reference is not None and len(reference) != 2 * n:
        raise ValueError("reference bitstring has the wrong length")
    circ = Circuit(2 * n, initial=reference)
    _append_local(circ, n, prep[0], (up_qubit,))
    _append_local(circ, n, prep[1], (dn_qubit,))
    for m in range(params.layers - 1, -1, -1):
        _orbital_rotation(circ, n, params.theta[m], params.lam[m], -1)
        for p in range(n - 1):
            circ.append("zz", [up_qubit(n, p), up_qubit(n, p + 1)], params.phi[m, p])
            circ.append("zz", [dn_qubit(n, p), dn_qubit(n, p + 1)], params.phi[m, p])
        circ.append("zz", [up_qubit(n, 0), dn_qubit(n, 0)], params.phi_ud[m])
        _orbital_rotation(circ, n, params.theta[m], params.lam[m], +1)
    return circ


def lucj_circuit(model, params: LucjParams, prep=None) -> Circuit:
    """LUCJ circuit on the mean-field determinant of ``model``."""
    n_ghosts = model_quadratic(model).shape[0] - 1
    ref, ops = prep if prep is not None else reference_preparation(model)
    return build_lucj(n_ghosts, params, ref, ops)


def lucj_state(model, params: LucjParams, prep=None) -> np.ndarray:
    return simulate(lucj_circuit(model, params, prep))


# -- optimization and sampling ----------------------------------------------------


@dataclass
class SpsaResult:
    x: np.ndarray
    value: float
    evaluations: int
    history: list[float] = field(default_factory=list)


def spsa_minimize(
    objective, x0: np.ndarray, macro: int = 4, micro: int = 10, seed: int = 0,
    a: float = SPSA_A, c: float = SPSA_C, stability: float = SPSA_STABILITY,
) -> SpsaResult:
    """SPSA with the standard gain sequences; each macro round restarts the gains
    from the best point seen so far. Returns the best evaluated point."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    best_x, best_f = x0.copy(), float(objective(x0))
    n_eval = 1
    history = [best_f]
    for _ in range(macro):
        x = best_x.copy()
        for k in range(micro):
            ak = a / (k + 1 + stability) ** SPSA_ALPHA
            ck = c / (k + 1) ** SPSA_GAMMA
            d = rng.choice([-1.0, 1.0], size=x.shape)
            fp, fm = float(objective(x + ck * d)), float(objective(x - ck * d))
            n_eval += 2
            for f, xx in ((fp, x + ck * d), (fm, x - ck * d)):
                if f < best_f:
                    best_f, best_x = f, xx.copy()
            x = x - ak * (fp - fm) / (2 * ck) * d
            fx = float(objective(x))
            n_eval += 1
            if fx < best_f:
                best_f, best_x = fx, x.copy()
            history.append(best_f)
    return SpsaResult(best_x, best_f, n_eval, history)


def spsa_optimize(
    objective, init: LucjParams, macro: int = 4, micro: int = 10, seed: int = 0,
) -> LucjParams:
    res = spsa_minimize(lambda v: objective(init.with_vector(v)), init.vector(), macro, micro, seed)
    return init.with_vector(res.x)


def sample(psi: np.ndarray, n_shots: int, seed: int = 0, n_qubits: int | None = None) -> dict[str, int]:
    """Multinomial computational-basis samples as {bitstring: count}."""
    if n_shots < 1:
        raise ValueError("n_shots must be at least 1")
    probs = np.abs(psi) ** 2
    probs = probs / probs.sum()
    n_qubits = n_qubits or int(round(np.log2(len(psi))))
    counts = np.random.default_rng(seed).multinomial(n_shots, probs)
    hit = np.flatnonzero(counts)
    return {format(int(i), f"0{n_qubits}b"): int(counts[i]) for i in hit}


def write_counts(path, counts: dict[str, int]) -> None:
    with open(path, "w") as fh:
        json.dump(dict(sorted(counts.items())), fh, indent=0)


def read_counts(path) -> dict[str, int]:
    with open(path) as fh:
        raw = json.load(fh)
    return {str(k): int(v) for k, v in raw.items()}
