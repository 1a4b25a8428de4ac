"""Wire cutting of the impurity spin-down qubit around the up-down LUCJ gate.

A cut replaces the identity channel on one qubit by measurements of
observables O_i on the incoming wire and preparations rho_i on the outgoing
wire, rho = sum_i c_i Tr(O_i rho) rho_i. Two cuts (before and after the
cross-spin ZZ gate) split a single-layer LUCJ circuit into a spin-up part,
which carries the cut wire on an ancilla, and a spin-down part with a
mid-circuit measurement followed by a re-preparation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .qsim import Circuit, Gate, apply_gate, bitstring_to_bits, dn_qubit, simulate, up_qubit

_S2 = 1 / np.sqrt(2)
PREP_STATES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_S2, _S2], dtype=complex),
    "i": np.array([_S2, 1j * _S2], dtype=complex),
    "-": np.array([_S2, -_S2], dtype=complex),
    "-i": np.array([_S2, -1j * _S2], dtype=complex),
}
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
PREPARATIONS = ("0", "1", "+", "i")
# measurement basis paired with each preparation class
MEASURE_BASIS = {"0": "Z", "1": "Z", "+": "X", "i": "Y"}
# rotation taking the basis eigenstates to |0>, |1>
_BASIS_ROTATION = {
    "Z": np.eye(2, dtype=complex),
    "X": np.array([[1, 1], [1, -1]], dtype=complex) * _S2,
    "Y": np.array([[1, -1j], [1, 1j]], dtype=complex) * _S2,
}


@dataclass(frozen=True)
class CutTerm:
    coefficient: float
    observable: np.ndarray
    prep: str

    @property
    def prep_state(self) -> np.ndarray:
        return PREP_STATES[self.prep]


def decompose_identity_channel(scheme: str = "pauli") -> list[CutTerm]:
    """Terms of the identity channel on one qubit.

    ``pauli``: eight terms 1/2 sum_O sum_s s Tr(O rho) |s_O><s_O| over
    O in {I, X, Y, Z} with +-1 eigenstate preparations.
    ``reduced``: four preparations |0>, |1>, |+>, |i>; the |->, |-i>
    contributions are folded into the observables using
    |-><-| = I - |+><+| and |-i><-i| = I - |i><i|.
    """
    if scheme == "pauli":
        half = 0.5
        return [
            CutTerm(half, PAULI["I"], "0"), CutTerm(half, PAULI["I"], "1"),
            CutTerm(half, PAULI["X"], "+"), CutTerm(-half, PAULI["X"], "-"),
            CutTerm(half, PAULI["Y"], "i"), CutTerm(-half, PAULI["Y"], "-i"),
            CutTerm(half, PAULI["Z"], "0"), CutTerm(-half, PAULI["Z"], "1"),
        ]
    if scheme == "reduced":
        i, x, y, z = (PAULI[k] for k in "IXYZ")
        return [
            CutTerm(1.0, 0.5 * (i - x - y + z), "0"),
            CutTerm(1.0, 0.5 * (i - x - y - z), "1"),
            CutTerm(1.0, x, "+"),
            CutTerm(1.0, y, "i"),
        ]
    raise ValueError(f"unknown cut scheme {scheme!r}")


def apply_channel_terms(rho: np.ndarray, terms: list[CutTerm]) -> np.ndarray:
    """sum_i c_i Tr(O_i rho) rho_i for a single-qubit density matrix."""
    out = np.zeros((2, 2), dtype=complex)
    for t in terms:
        s = t.prep_state
        out += t.coefficient * np.trace(t.observable @ rho) * np.outer(s, s.conj())
    return out


def sampling_overhead(terms: list[CutTerm]) -> float:
    """Sum of |c_i| times the spectral norm of O_i (sampling cost per cut)."""
    return float(sum(abs(t.coefficient) * np.linalg.norm(t.observable, 2) for t in terms))


# -- density-matrix helpers for small circuits -------------------------------------


def _circuit_channel(rho: np.ndarray, circ: Circuit) -> np.ndarray:
    n = circ.n_qubits
    u = np.eye(2**n, dtype=complex)
    for j in range(2**n):
        u[:, j] = simulate(circ, u[:, j].copy())
    return u @ rho @ u.conj().T


def _cut_qubit(rho: np.ndarray, q: int, n: int, terms: list[CutTerm]) -> np.ndarray:
    """Apply the decomposed identity channel to qubit q of an n-qubit state."""
    out = np.zeros_like(rho)
    t = rho.reshape([2] * (2 * n))
    for term in terms:
        # Tr_q[(O x I) rho] followed by |s><s| on q
        reduced = np.tensordot(term.observable, t, axes=([1, 0], [q, n + q]))
        s = term.prep_state
        piece = np.multiply.outer(np.outer(s, s.conj()), reduced)
        axes = list(range(2, n + 1)), list(range(n + 1, 2 * n))
        # piece axes: (q_out, q_in, rest_out..., rest_in...) -> canonical order
        rest = [x for x in range(n) if x != q]
        src = [0] + axes[0] + [1] + axes[1]
        dst = [q] + rest + [n + q] + [n + r for r in rest]
        order = np.empty(2 * n, dtype=int)
        order[dst] = src
        out += term.coefficient * piece.transpose(order).reshape(2**n, 2**n)
    return out


def uncut_expectation(before: Circuit, after: Circuit, observable: np.ndarray, initial: np.ndarray) -> float:
    """<obs> after running ``before`` then ``after`` (diagonal observable as a vector)."""
    psi = simulate(after, simulate(before, initial))
    return float(np.real(np.sum(observable * np.abs(psi) ** 2)))


def cut_expectation(
    before: Circuit, after: Circuit, qubit: int, observable: np.ndarray, initial: np.ndarray,
    scheme: str = "pauli",
) -> float:
    """Same expectation with the wire of ``qubit`` cut between the two circuits."""
    n = before.n_qubits
    psi = simulate(before, initial)
    rho = _cut_qubit(np.outer(psi, psi.conj()), qubit, n, decompose_identity_channel(scheme))
    rho = _circuit_channel(rho, after)
    return float(np.real(np.sum(observable * np.diag(rho))))


# -- LUCJ splitting ------------------------------------------------------------------


@dataclass
class SplitCircuit:
    """A single-layer LUCJ circuit split at its cross-spin gate."""

    n_orb: int
    up_before: list[Gate]
    up_after: list[Gate]
    dn_before: list[Gate]
    dn_after: list[Gate]
    phi_ud: float
    up_reference: str
    dn_reference: str


@dataclass(frozen=True)
class WireCutPlan:
    cut_qubit: int
    n_cuts: int = 2
    preparations: tuple[str, ...] = PREPARATIONS
    bases: tuple[str, ...] = ("Z", "X", "Y")

    def variants(self) -> list[tuple[str, str]]:
        """(first-cut class, second-cut class) pairs, 16 in total."""
        return [(a, b) for a in self.preparations for b in self.preparations]


def split_lucj(circuit: Circuit) -> SplitCircuit:
    n = circuit.n_qubits // 2
    cross = [k for k, g in enumerate(circuit.gates)
             if g.kind == "zz" and {g.qubits[0] < n, g.qubits[1] < n} == {True, False}]
    if len(cross) != 1:
        raise ValueError(
            f"wire cutting needs exactly one cross-spin gate; this circuit has {len(cross)} "
            f"and would need {2 * len(cross)} cuts"
        )
    k = cross[0]
    gate = circuit.gates[k]
    if set(gate.qubits) != {up_qubit(n, 0), dn_qubit(n, 0)}:
        raise ValueError("the cross-spin gate must act on the two impurity qubits")
    ref = circuit.initial or "0" * (2 * n)

    def local(gates, spin):
        out = []
        for g in gates:
            qs = g.qubits
            if spin == "up" and all(q < n for q in qs):
                out.append(g)
            elif spin == "dn" and all(q >= n for q in qs):
                out.append(Gate(g.kind, tuple(q - n for q in qs), g.param))
            elif not (all(q < n for q in qs) or all(q >= n for q in qs)):
                raise ValueError("unexpected cross-spin gate")
        return out

    return SplitCircuit(
        n, local(circuit.gates[:k], "up"), local(circuit.gates[k + 1:], "up"),
        local(circuit.gates[:k], "dn"), local(circuit.gates[k + 1:], "dn"),
        gate.param, ref[:n], ref[n:],
    )


def _run(gates: list[Gate], psi: np.ndarray, n: int) -> np.ndarray:
    for g in gates:
        apply_gate(psi, g, n)
    return psi


def _kron_last(psi: np.ndarray, qubit_state: np.ndarray) -> np.ndarray:
    return np.kron(psi, qubit_state)


def _qubit_branches(psi: np.ndarray, q: int, n: int, basis_rot: np.ndarray):
    """Unnormalized post-measurement states of the other qubits, one per outcome."""
    t = basis_rot @ np.moveaxis(psi.reshape([2] * n), q, 0).reshape(2, -1)
    return t[0], t[1]


def _insert_qubit(rest: np.ndarray, state: np.ndarray, q: int, n: int) -> np.ndarray:
    t = np.multiply.outer(state, rest.reshape([2] * (n - 1)))
    return np.moveaxis(t, 0, q).reshape(-1)


def up_distribution(split: SplitCircuit, prep: str, basis: str) -> np.ndarray:
    """Joint distribution over (register bitstring, ancilla outcome), shape (2^n, 2)."""
    n = split.n_orb
    psi = np.zeros(2**n, dtype=complex)
    psi[int(split.up_reference, 2)] = 1.0
    psi = _run(split.up_before, psi, n)
    psi = _kron_last(psi, PREP_STATES[prep])
    apply_gate(psi, Gate("zz", (up_qubit(n, 0), n), split.phi_ud), n + 1)
    psi = _run(split.up_after, psi, n + 1)
    t = psi.reshape(2**n, 2) @ _BASIS_ROTATION[basis].T
    return np.abs(t) ** 2


def dn_distribution(split: SplitCircuit, basis: str, prep: str) -> np.ndarray:
    """Joint distribution over (mid-circuit outcome, register bitstring), shape (2, 2^n)."""
    n = split.n_orb
    q = dn_qubit(n, 0) - n
    psi = np.zeros(2**n, dtype=complex)
    psi[int(split.dn_reference, 2)] = 1.0
    psi = _run(split.dn_before, psi, n)
    out = np.zeros((2, 2**n))
    for outcome, rest in enumerate(_qubit_branches(psi, q, n, _BASIS_ROTATION[basis])):
        phi = _insert_qubit(rest, PREP_STATES[prep], q, n)
        phi = _run(split.dn_after, phi, n)
        out[outcome] = np.abs(phi) ** 2
    return out


def _expectation_matrix(rot: np.ndarray, observable: np.ndarray) -> np.ndarray:
    """Matrix M with <O> = sum_ab M_ab t_a conj(t_b) for amplitudes t in the rotated basis."""
    return rot @ observable @ rot.conj().T


def exact_cut_distribution(split: SplitCircuit, scheme: str = "reduced") -> np.ndarray:
    """Quasiprobability reconstruction of the full distribution from the two halves.

    Returns p[u, d] over up and down register bitstrings (state-vector level),
    which equals the uncut distribution for any angles.
    """
    n = split.n_orb
    terms = decompose_identity_channel(scheme)
    q = dn_qubit(n, 0) - n
    # spin-up side: ancilla prepared by cut-1 term, observable of cut-2 term
    up = {}
    for i, t1 in enumerate(terms):
        psi = np.zeros(2**n, dtype=complex)
        psi[int(split.up_reference, 2)] = 1.0
        psi = _run(split.up_before, psi, n)
        psi = _kron_last(psi, t1.prep_state)
        apply_gate(psi, Gate("zz", (up_qubit(n, 0), n), split.phi_ud), n + 1)
        psi = _run(split.up_after, psi, n + 1).reshape(2**n, 2)
        for j, t2 in enumerate(terms):
            up[i, j] = np.real(np.einsum("ua,ab,ub->u", psi.conj(), t2.observable, psi))
    # spin-down side: observable of cut-1 term mid-circuit, preparation of cut-2 term
    psi = np.zeros(2**n, dtype=complex)
    psi[int(split.dn_reference, 2)] = 1.0
    psi = _run(split.dn_before, psi, n)
    t = np.moveaxis(psi.reshape([2] * n), q, 0).reshape(2, -1)
    dn = {}
    for i, t1 in enumerate(terms):
        w, v = np.linalg.eigh(t1.observable)
        for j, t2 in enumerate(terms):
            acc = np.zeros(2**n)
            for k in range(2):
                rest = v[:, k].conj() @ t
                phi = _run(split.dn_after, _insert_qubit(rest, t2.prep_state, q, n), n)
                acc += w[k] * np.abs(phi) ** 2
            dn[i, j] = acc
    p = np.zeros((2**n, 2**n))
    for (i, j), pu in up.items():
        p += terms[i].coefficient * terms[j].coefficient * np.outer(pu, dn[i, j])
    return p


# -- sampling and reassembly -------------------------------------------------------


@dataclass
class SubCircuitSample:
    variant: tuple[str, str]
    spin: str
    counts: dict[str, int] = field(default_factory=dict)
    cut_counts: dict[str, int] = field(default_factory=dict)

    @property
    def shots(self) -> int:
        return sum(self.counts.values())


def build_subcircuits(circuit: Circuit, plan: WireCutPlan | None = None):
    """Split the circuit and list the (up, down) sub-circuit settings per variant."""
    split = split_lucj(circuit)
    n = split.n_orb
    plan = plan or WireCutPlan(cut_qubit=dn_qubit(n, 0))
    up, dn = [], []
    for a, b in plan.variants():
        up.append(((a, b), {"prep": a, "basis": MEASURE_BASIS[b]}))
        dn.append(((a, b), {"basis": MEASURE_BASIS[a], "prep": b}))
    return split, up, dn


def _draw(dist: np.ndarray, shots: int, rng) -> np.ndarray:
    flat = dist.ravel()
    return rng.multinomial(shots, flat / flat.sum()).reshape(dist.shape)


def sample_variants(circuit: Circuit, shots_per_variant: int, seed: int = 0, plan: WireCutPlan | None = None):
    """Sample both halves of every variant; returns (up_samples, dn_samples)."""
    if shots_per_variant < 1:
        raise ValueError("shots_per_variant must be at least 1")
    split, up_settings, dn_settings = build_subcircuits(circuit, plan)
    n = split.n_orb
    seeds = np.random.SeedSequence(seed).spawn(2 * len(up_settings))
    up_samples, dn_samples = [], []
    for k, ((variant, us), (_, ds)) in enumerate(zip(up_settings, dn_settings)):
        counts = _draw(up_distribution(split, us["prep"], us["basis"]), shots_per_variant,
                       np.random.default_rng(seeds[2 * k]))
        up_samples.append(SubCircuitSample(
            variant, "up",
            {format(int(u), f"0{n}b"): int(c) for u, c in enumerate(counts.sum(axis=1)) if c},
            {str(a): int(c) for a, c in enumerate(counts.sum(axis=0)) if c},
        ))
        counts = _draw(dn_distribution(split, ds["basis"], ds["prep"]), shots_per_variant,
                       np.random.default_rng(seeds[2 * k + 1]))
        dn_samples.append(SubCircuitSample(
            variant, "dn",
            {format(int(d), f"0{n}b"): int(c) for d, c in enumerate(counts.sum(axis=0)) if c},
            {str(a): int(c) for a, c in enumerate(counts.sum(axis=1)) if c},
        ))
    return up_samples, dn_samples


def _marginal(samples: list[SubCircuitSample]) -> dict[str, float]:
    pooled: dict[str, int] = {}
    for s in samples:
        for k, c in s.counts.items():
            pooled[k] = pooled.get(k, 0) + c
    total = sum(pooled.values())
    if total == 0:
        raise ValueError("no samples to reassemble")
    return {k: c / total for k, c in sorted(pooled.items())}


def reassemble(up_samples: list[SubCircuitSample], dn_samples: list[SubCircuitSample]) -> dict[str, float]:
    """Product of pooled per-spin marginals over all full bitstrings up+down."""
    fu, fd = _marginal(up_samples), _marginal(dn_samples)
    return {u + d: pu * pd for u, pu in fu.items() for d, pd in fd.items()}


def write_variant_counts(path, up_samples, dn_samples) -> None:
    doc = [
        {"variant": list(s.variant), "spin": s.spin, "counts": s.counts, "cut": s.cut_counts}
        for s in list(up_samples) + list(dn_samples)
    ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=0)


def write_weights_csv(path, weights: dict[str, float], header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh)
        writer.writerow(["up_bits", "dn_bits", "weight"])
        for b, w in weights.items():
            up, dn = bitstring_to_bits(b)
            writer.writerow([up, dn, f"{w:.12e}"])
