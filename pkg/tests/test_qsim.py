from __future__ import annotations

import numpy as np
import pytest
from helpers import gate_unitary_oracle, random_emb
from hypothesis import given, strategies as st

from ggut.basisrot import to_star
from ggut.fock import build_hamiltonian, half_filled_sector, solve_fci
from ggut.qsim import (
    Circuit, LucjParams, bits_to_bitstring, bitstring_to_bits, build_lucj, dense_unitary, dn_qubit,
    energy_expectation, givens_network, lucj_circuit, mean_field, read_counts, reference_bitstring,
    reference_preparation, sample, sector_amplitudes, simulate, simulate_sector, spsa_minimize, up_qubit,
    write_counts,
)

KINDS = ("xxyy", "phase", "zz")


def random_circuit(rng, n_qubits, n_gates):
    circ = Circuit(n_qubits)
    for _ in range(n_gates):
        kind = KINDS[rng.integers(3)]
        qs = rng.choice(n_qubits, size=1 if kind == "phase" else 2, replace=False)
        circ.append(kind, qs, rng.uniform(-np.pi, np.pi))
    return circ


def random_state(rng, n_qubits):
    psi = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    return psi / np.linalg.norm(psi)


@pytest.mark.parametrize("n_qubits", [2, 3, 4, 5, 6])
def test_gates_match_dense_unitaries(rng, n_qubits):
    circ = random_circuit(rng, n_qubits, 30)
    oracle = np.eye(2**n_qubits, dtype=complex)
    for g in circ.gates:
        oracle = gate_unitary_oracle(g.kind, g.qubits, g.param, n_qubits) @ oracle
    psi = random_state(rng, n_qubits)
    assert np.max(np.abs(simulate(circ, psi.copy()) - oracle @ psi)) < 1e-10
    assert np.max(np.abs(dense_unitary(circ) - oracle)) < 1e-10


def test_xxyy_acts_as_givens_rotation():
    circ = Circuit(2)
    circ.append("xxyy", [0, 1], 0.3)
    u = dense_unitary(circ)
    # {|01>, |10>} block is [[c, i s], [i s, c]]; |00> and |11> untouched
    assert np.allclose(u[1:3, 1:3], [[np.cos(0.3), 1j * np.sin(0.3)], [1j * np.sin(0.3), np.cos(0.3)]])
    assert np.isclose(u[0, 0], 1) and np.isclose(u[3, 3], 1)


@given(st.integers(0, 2**31 - 1))
def test_gates_conserve_particle_number(seed):
    rng = np.random.default_rng(seed)
    circ = random_circuit(rng, 5, 12)
    u = dense_unitary(circ)
    count = np.array([bin(i).count("1") for i in range(32)])
    assert np.allclose(u[count[:, None] != count[None, :]], 0)


def test_inverse_circuit(rng):
    circ = random_circuit(rng, 4, 20)
    psi = random_state(rng, 4)
    assert np.allclose(simulate(circ.inverse(), simulate(circ, psi.copy())), psi)


def test_gate_validation():
    circ = Circuit(3)
    with pytest.raises(ValueError):
        circ.append("xxyy", [0, 0], 0.1)
    with pytest.raises(ValueError):
        circ.append("zz", [0, 3], 0.1)
    with pytest.raises(ValueError):
        circ.append("cnot", [0, 1])


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**n - 1), st.integers(0, 2**n - 1))))
def test_bitstring_layout_round_trip(args):
    n, up, dn = args
    s = bits_to_bitstring(up, dn, n)
    assert len(s) == 2 * n and bitstring_to_bits(s) == (up, dn)


def test_impurity_qubits_are_adjacent():
    for n in (2, 4, 8):
        assert dn_qubit(n, 0) - up_qubit(n, 0) == 1
        assert bits_to_bitstring(1, 0, n)[n - 1] == "1" and bits_to_bitstring(0, 1, n)[n] == "1"


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_givens_network_reproduces_unitary(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    u, _ = np.linalg.qr(a)
    circ = Circuit(n)
    for kind, qs, angle in givens_network(u):
        circ.append(kind, qs, angle)
    # single-particle columns: the particle starts on orbital j (qubit j)
    m = np.zeros((n, n), dtype=complex)
    for j in range(n):
        out = simulate(circ, "".join("1" if q == j else "0" for q in range(n)))
        for i in range(n):
            m[i, j] = out[1 << (n - 1 - i)]
    ratio = m @ u.conj().T
    assert np.allclose(ratio, ratio[0, 0] * np.eye(n), atol=1e-12)
    assert np.isclose(abs(ratio[0, 0]), 1)


def test_mean_field_is_exact_without_interaction(rng):
    emb = random_emb(rng, 3, u=0.0)
    mf = mean_field(emb)
    assert abs(mf.energy - solve_fci(emb).energy) < 1e-10


@pytest.mark.parametrize("u", [1.0, 4.0])
def test_reference_preparation_yields_mean_field_state(rng, u):
    model = to_star(random_emb(rng, 3, u=u))
    basis = half_filled_sector(3)
    zero = LucjParams.zeros(4)
    prep = reference_preparation(model)
    amps = simulate_sector(lucj_circuit(model, zero, prep), basis)
    assert abs(np.linalg.norm(amps) - 1) < 1e-12
    assert abs(energy_expectation(amps, model, basis) - mean_field(model).energy) < 1e-10
    # mean field bounds the exact energy from above
    assert mean_field(model).energy >= solve_fci(model).energy - 1e-12


def test_reference_bitstring_half_filled(rng):
    model = to_star(random_emb(rng, 5))
    up, dn = bitstring_to_bits(reference_bitstring(model))
    assert bin(up).count("1") == 3 and bin(dn).count("1") == 3


def test_lucj_gate_counts():
    n = 4
    circ = build_lucj(3, LucjParams.zeros(n))
    assert circ.count("xxyy") == 2 * 2 * n * (n - 1) // 2
    assert circ.count("phase") == 2 * 2 * n
    assert circ.count("zz") == 2 * (n - 1) + 1
    assert build_lucj(3, LucjParams.zeros(n, 2)).count("zz") == 2 * (2 * (n - 1) + 1)
    with pytest.raises(ValueError):
        build_lucj(2, LucjParams.zeros(3))


def test_single_ghost_lucj_gate_count():
    # two orbitals per spin: one rotation pair and one same-spin ZZ per spin
    circ = build_lucj(1, LucjParams.zeros(2))
    assert circ.count("xxyy") == 4 and circ.count("zz") == 3 and circ.count("phase") == 8


def test_lucj_params_round_trip(rng):
    p = LucjParams.random(4, 2, seed=3)
    assert np.array_equal(p.with_vector(p.vector()).vector(), p.vector())
    q = LucjParams.from_json(p.to_json())
    assert np.array_equal(q.vector(), p.vector())
    assert np.all(np.abs(p.vector()) <= 0.05)
    with pytest.raises(ValueError):
        LucjParams(4, np.zeros((1, 5)), np.zeros((1, 4)), np.zeros((1, 3)), np.zeros(1))


@pytest.mark.parametrize("n_ghosts", [1, 3])
def test_sector_simulation_matches_full(rng, n_ghosts):
    model = to_star(random_emb(rng, n_ghosts))
    basis = half_filled_sector(n_ghosts)
    params = LucjParams.random(n_ghosts + 1, 2, seed=5, scale=1.0)
    circ = lucj_circuit(model, params)
    full = simulate(circ)
    assert np.allclose(simulate_sector(circ, basis), sector_amplitudes(full, basis), atol=1e-12)
    assert abs(np.linalg.norm(sector_amplitudes(full, basis)) - 1) < 1e-12
    h = build_hamiltonian(model, basis)
    assert abs(energy_expectation(full, model, basis, h) - energy_expectation(sector_amplitudes(full, basis), model, basis, h)) < 1e-12


def test_lucj_energy_is_variational(rng):
    model = to_star(random_emb(rng, 3))
    e_fci = solve_fci(model).energy
    for seed in range(3):
        params = LucjParams.random(4, 1, seed=seed, scale=1.0)
        assert energy_expectation(simulate(lucj_circuit(model, params)), model) >= e_fci - 1e-10


def test_spsa_decreases_quadratic():
    target = np.array([0.3, -0.2, 0.1])

    def f(x):
        return float(np.sum((x - target) ** 2))

    x0 = np.zeros(3)
    res = spsa_minimize(f, x0, macro=4, micro=10, seed=1)
    assert res.value < f(x0)
    assert res.value == pytest.approx(f(res.x))
    assert res.evaluations == 1 + 4 * 10 * 3
    assert all(a >= b for a, b in zip(res.history, res.history[1:]))
    again = spsa_minimize(f, x0, macro=4, micro=10, seed=1)
    assert np.array_equal(again.x, res.x)


def test_sampling(rng, tmp_path):
    psi = random_state(rng, 3)
    counts = sample(psi, 20000, seed=7)
    assert sum(counts.values()) == 20000
    assert counts == sample(psi, 20000, seed=7)
    freq = np.zeros(8)
    for k, c in counts.items():
        freq[int(k, 2)] = c / 20000
    assert np.max(np.abs(freq - np.abs(psi) ** 2)) < 0.02
    write_counts(tmp_path / "c.json", counts)
    assert read_counts(tmp_path / "c.json") == counts
    with pytest.raises(ValueError):
        sample(psi, 0)
