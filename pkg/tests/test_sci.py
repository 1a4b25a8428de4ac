from __future__ import annotations

import numpy as np
import pytest
from helpers import random_emb
from hypothesis import given, settings, strategies as st

from ggut.basisrot import to_star
from ggut.errors import EmptyBasis
from ggut.fock import DEGENERACY_TOL, build_hamiltonian, ground_manifold, half_filled_sector, solve_fci
from ggut.params import EmbParams
from ggut.sci import (
    CiSet, SciSolver, count_for_weight, cumulative_weight, ensemble_weights, error_metrics, fit_exponential,
    ground_state_weights, rank, solve_subspace, truncate_by_weight, write_report_csv,
)
from ggut.spectral import DosCurve, FrequencyGrid


def test_fit_recovers_synthetic_parameters():
    n = np.array([3.0, 5.0, 7.0, 9.0, 11.0])
    k = 2.0 + 0.5 * np.exp(0.25 * n)
    a, b, c = fit_exponential(n, k)
    assert abs(a - 2.0) < 1e-6 and abs(b - 0.5) < 1e-6 and abs(c - 0.25) < 1e-6


def test_fit_on_four_points_and_validation():
    n = np.array([3.0, 5.0, 7.0, 9.0])
    k = 10 * np.exp(0.2 * n) - 5
    a, b, c = fit_exponential(n, k)
    assert np.allclose(a + b * np.exp(c * n), k, rtol=1e-8)
    with pytest.raises(ValueError):
        fit_exponential([1, 2], [1, 2])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sci_is_variational_and_monotone(seed):
    rng = np.random.default_rng(seed)
    model = to_star(random_emb(rng, 3))
    basis = half_filled_sector(3)
    full = build_hamiltonian(model, basis)
    ref = solve_fci(model, basis)
    w = np.abs(ref.amplitudes) ** 2
    last = np.inf
    for k in range(1, len(basis) + 1):
        e = solve_subspace(model, truncate_by_weight(w, basis, count=k), full=full).energy
        assert e >= ref.energy - 1e-10
        assert e <= last + 1e-10
        last = e
    assert abs(last - ref.energy) < 1e-10


def test_truncation_policies():
    basis = half_filled_sector(1)
    w = np.array([0.1, 0.4, 0.4, 0.1])
    by_frac = truncate_by_weight(w, basis, fraction=0.5)
    assert list(by_frac.indices) == [1, 2] and by_frac.fraction == 0.5
    assert list(truncate_by_weight(w, basis, count=3).indices) == [1, 2, 0]
    assert len(truncate_by_weight(w, basis, threshold=0.2)) == 2
    assert truncate_by_weight(w, basis, count=10).captured_weight == pytest.approx(1.0)
    with pytest.raises(ValueError):
        truncate_by_weight(w, basis, fraction=0.5, count=2)
    with pytest.raises(ValueError):
        truncate_by_weight(-w, basis, count=1)
    with pytest.raises(EmptyBasis):
        truncate_by_weight(w, basis, threshold=0.9)
    assert list(rank(w)) == [1, 2, 0, 3]


def test_ci_set_validation():
    basis = half_filled_sector(1)
    with pytest.raises(EmptyBasis):
        CiSet(basis, [], [])
    with pytest.raises(ValueError):
        CiSet(basis, [0, 0], [0.5, 0.5])
    with pytest.raises(ValueError):
        CiSet(basis, [0, 1], [0.1, 0.5])


def test_cumulative_weight_and_count():
    amps = np.sqrt(np.array([0.5, 0.1, 0.3, 0.1]))
    cum = cumulative_weight(amps)
    assert np.allclose(cum, [0.5, 0.8, 0.9, 1.0])
    assert count_for_weight(amps, 0.8) == 2
    assert count_for_weight(amps, 0.85) == 3
    assert count_for_weight(amps, 1.0) == 4


def test_ground_manifold_matches_dense(rng):
    # three decoupled zero-energy ghosts make a degenerate ground manifold
    emb = EmbParams(np.array([0.8, 0.0, 0.0, 0.0, 0.0]), np.diag([0.0, 0.0, 0.0, 0.3, -0.3]), 2.0, -1.0)
    basis = half_filled_sector(5)
    h = build_hamiltonian(emb, basis)
    dense = np.linalg.eigvalsh(h.toarray())
    e, v = ground_manifold(h)
    expected = int(np.sum(dense < dense[0] + DEGENERACY_TOL))
    assert len(e) == expected > 1
    assert np.allclose(e, dense[:expected], atol=1e-8)
    assert np.allclose(v.conj().T @ v, np.eye(expected), atol=1e-8)
    assert np.linalg.norm(h @ v - v * e) < 1e-7


def test_ensemble_weights_are_basis_independent(rng):
    q, _ = np.linalg.qr(rng.normal(size=(20, 4)))
    mix, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert np.allclose(ensemble_weights(q), ensemble_weights(q @ mix))
    assert np.sum(ensemble_weights(q) ** 2) == pytest.approx(1.0)
    single = q[:, 0]
    assert np.allclose(ensemble_weights(single), np.abs(single))


def test_ground_state_weights_nondegenerate(rng):
    model = to_star(random_emb(rng, 3, u=1.0))
    e, amps, deg = ground_state_weights(model)
    ref = solve_fci(model)
    assert deg == 1 and abs(e - ref.energy) < 1e-9
    assert np.allclose(amps, np.abs(ref.amplitudes), atol=1e-6)


def test_sci_solver(rng):
    model = random_emb(rng, 3)
    solver = SciSolver(fraction=1.0)
    assert abs(solver.solve(model).energy - solve_fci(model).energy) < 1e-10
    assert len(SciSolver(count=5).solve(model).indices) == 5


def test_error_metrics_and_report(tmp_path):
    freq = FrequencyGrid.uniform(-1, 1, step=0.5)
    ref = DosCurve(freq, np.array([0.0, 1.0, 2.0, 1.0, 0.0]))
    trial = DosCurve(freq, np.array([0.0, 1.0, 1.0, 1.0, 0.0]))
    r = error_metrics(ref, -2.0, trial, -1.5)
    assert r.r_energy == 0.5 and r.r_energy_rel == 0.25
    assert r.r_dos == pytest.approx(0.5)
    assert r.r_moments[0] == pytest.approx(0.5) and r.r_moments[1] == pytest.approx(0.0)
    write_report_csv(tmp_path / "r.csv", [(0.5, 10, r)], header="hdr")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# hdr" and lines[1].startswith("p,K,R_E,R_E_rel,R_A,R_A^0")
    other = DosCurve(FrequencyGrid.uniform(-2, 2, step=1.0), np.zeros(5))
    with pytest.raises(ValueError):
        error_metrics(ref, -2.0, other, -1.5)
