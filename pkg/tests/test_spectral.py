from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ggut.model import EnergyGrid, LatticeSpec, discretize_semicircle
from ggut.params import QpParams
from ggut.spectral import DosCurve, FrequencyGrid, gap_metric, greens_function, qp_dos, sum_rule

from helpers import semicircle_greens

GRID = discretize_semicircle(LatticeSpec())


def test_lorentzian_pole_integrates_to_one():
    single = EnergyGrid(np.zeros(1), np.ones(1))
    freq = FrequencyGrid.uniform(-60, 60, 0.002, 0.01)
    curve = qp_dos(QpParams(np.ones(1), np.full((1, 1), 0.3)), single, freq)
    assert abs(np.trapezoid(curve.values, freq.omegas) - 1) < 1e-3
    assert abs(freq.omegas[np.argmax(curve.values)] - 0.3) < 1e-9


def test_lorentzian_matches_closed_form():
    single = EnergyGrid(np.zeros(1), np.ones(1))
    freq = FrequencyGrid.uniform(-1, 1, 0.05, 0.02)
    g = greens_function(QpParams(np.ones(1), np.full((1, 1), -0.2)), single, freq)
    assert np.allclose(g, 1 / (freq.omegas + 0.02j + 0.2), atol=1e-12)


def test_sum_rule_single_ghost():
    curve = qp_dos(QpParams(np.ones(1), np.zeros((1, 1))), GRID, FrequencyGrid.uniform())
    assert sum_rule(curve, QpParams(np.ones(1), np.zeros((1, 1)))) < 5e-3


def test_zero_omega_gives_zero():
    qp = QpParams(np.zeros(3), np.diag([-1.0, 0.0, 1.0]))
    curve = qp_dos(qp, GRID, FrequencyGrid.uniform())
    assert np.all(curve.values == 0)
    assert sum_rule(curve, qp) == 0


def test_free_band_is_broadened_semicircle():
    freq = FrequencyGrid.uniform(-1.5, 1.5, 0.01, 0.05)
    curve = qp_dos(QpParams(np.ones(1), np.zeros((1, 1))), discretize_semicircle(LatticeSpec(1.0, 2000)), freq)
    ref = -np.imag(semicircle_greens(freq.omegas + 0.05j)) / np.pi
    assert np.max(np.abs(curve.values - ref)) < 5e-3
    assert abs(gap_metric(curve) - np.interp(0.0, freq.omegas, ref)) < 5e-3


@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]))
def test_dos_nonnegative_and_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    omega = rng.normal(size=n)
    lam = rng.normal(size=(n, n))
    lam = 0.5 * (lam + lam.T)
    freq = FrequencyGrid.uniform(-2, 2, 0.05)
    curve = qp_dos(QpParams(omega, lam), GRID, freq)
    assert curve.values.min() > -1e-12
    # particle-hole symmetric parameters give A(w) = A(-w)
    sym = QpParams(0.5 * (omega + omega[::-1]), 0.5 * (lam - lam[::-1, ::-1]))
    a = qp_dos(sym, GRID, freq).values
    assert np.max(np.abs(a - a[::-1])) < 1e-6


def test_gap_metric_interpolates():
    freq = FrequencyGrid(np.array([-1.0, 1.0]))
    assert gap_metric(DosCurve(freq, np.array([0.0, 2.0]))) == 1.0


def test_dos_csv_has_header(tmp_path):
    curve = DosCurve(FrequencyGrid.uniform(-1, 1, 0.5), np.arange(5.0))
    curve.to_csv(tmp_path / "d.csv", "run info")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "# run info" and lines[1] == "omega,A" and len(lines) == 7


@pytest.mark.parametrize("omegas", [[0.0], [1.0, 0.0]])
def test_frequency_grid_validation(omegas):
    with pytest.raises(ValueError):
        FrequencyGrid(np.array(omegas))
