import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robin_asymptotics.asymptotics import (CSV_HEADER, DIRICHLET_GRID, NEUMANN_GRID, ExpansionRegime,
                                           SweepRow, SweepTable, check_derivative_identity,
                                           fit_power_law, geometric_grid, sweep, verify_expansion)
from robin_asymptotics.exceptions import EmptyWindow, RegimeMismatch
from robin_asymptotics.mesh import build_interval_mesh, build_rectangle_mesh
from robin_asymptotics.problem import Constant, Polynomial, ProblemSpec
from robin_asymptotics.solvers import SolverConfig

ODD = Polynomial((-0.5, 1.0))


def spec1d(p=2.0, q=2.0, n=400, source=Constant(1.0)):
    return ProblemSpec(build_interval_mesh(0, 1, n), p, q, 1.0, source)


def synthetic(alphas, energies, q=2.0):
    rows = tuple(SweepRow(float(a), float(e), 0.0, 0, 0.0) for a, e in zip(alphas, energies))
    return SweepTable(rows=rows, fingerprint="synthetic", q=q)


def test_default_grids():
    assert len(DIRICHLET_GRID) == 13 and DIRICHLET_GRID[0] == 10.0
    assert DIRICHLET_GRID[-1] == pytest.approx(1e4)
    assert NEUMANN_GRID[1] / NEUMANN_GRID[0] == pytest.approx(10 ** 0.25)
    assert geometric_grid(1, 100, 2) == pytest.approx((1, 10 ** 0.5, 10, 10 ** 1.5, 100))


def test_sweep_closed_form():
    t = sweep(spec1d(n=2000), [1, 2, 4])
    np.testing.assert_allclose(t.energies, [-1 / 24 - 1 / (4 * a) for a in (1, 2, 4)], atol=1e-6)
    assert t.all_ok and t.is_monotone() and t.is_concave()


def test_sweep_zero_source():
    t = sweep(spec1d(source=Constant(0.0)), [0.1, 1, 10])
    assert np.all(t.energies == 0)


def test_sweep_rejects_bad_grids():
    for bad in ([], [1, 1], [2, 1], [-1, 1], [0, 1]):
        with pytest.raises(ValueError):
            sweep(spec1d(n=10), bad)


def test_csv_format():
    t = sweep(spec1d(n=50), [0.5, 1.0])
    lines = t.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 3
    vals = lines[1].split(",")
    assert float(vals[1]) == t.rows[0].energy     # full precision survives the text round trip
    assert int(vals[3]) == t.rows[0].iters


@pytest.mark.parametrize("p,q", [(2.0, 2.0), (3.0, 1.5), (1.5, 3.0)])
def test_warm_start_matches_cold(p, q):
    s = spec1d(p, q, n=200, source=Polynomial((1, 1)))
    grid = geometric_grid(0.01, 100, 2)
    warm = sweep(s, grid)
    cold = sweep(s, grid, warm_start=False, workers=3)
    np.testing.assert_allclose(warm.energies, cold.energies, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(warm.boundary_q, cold.boundary_q, rtol=1e-6, atol=1e-12)


def test_failed_row_is_marked():
    t = sweep(spec1d(3.0, 2.0, n=100), [1.0, 2.0], SolverConfig(max_iter=1))
    assert not t.all_ok
    assert all(r.error for r in t.rows)


def test_fit_exact_power_law():
    a = np.array(DIRICHLET_GRID)
    fit = fit_power_law(synthetic(a, -1 / 24 - 1 / (4 * a)), -1 / 24, 1)
    assert fit.exponent == pytest.approx(-1.0, abs=1e-10)
    assert fit.prefactor == pytest.approx(0.25, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0, abs=1e-10)
    assert fit.window == (0, len(a) - 1)


def test_fit_square_root_law():
    a = np.array(geometric_grid(1, 1e3))
    fit = fit_power_law(synthetic(a, 3.0 - 2 * a ** -0.5), 3.0)
    assert fit.exponent == pytest.approx(-0.5, abs=1e-12)
    assert fit.prefactor == pytest.approx(2.0, rel=1e-12)


def test_fit_empty_window():
    with pytest.raises(EmptyWindow):
        fit_power_law(synthetic([1, 2, 3, 4], [5.0] * 4), 5.0)
    with pytest.raises(ValueError):
        fit_power_law(synthetic([1, 2, 3], [0, 1, 2]), 5.0, sign=0)


def test_fit_window_respects_noise_floor():
    a = np.array(geometric_grid(1, 1e4))
    e = -1 / a
    floor = np.where(a > 1e3, 1e-3, 0.0)
    fit = fit_power_law(synthetic(a, e), 0.0, 1, floor)
    assert a[fit.window[1]] <= 1e3
    assert fit.exponent == pytest.approx(-1.0, abs=1e-12)


@settings(max_examples=25)
@given(st.floats(1.5, 4.0), st.floats(1.5, 4.0), st.floats(-3, 3), st.floats(-3, 3),
       st.floats(-3, 1), st.integers(3, 6))
def test_sweep_tables_monotone_and_concave(p, q, c0, c1, log_lo, npts):
    s = spec1d(p, q, n=60, source=Polynomial((c0, c1)))
    t = sweep(s, geometric_grid(10 ** log_lo, 10 ** (log_lo + 2), (npts - 1) // 2 or 1))
    assert t.all_ok
    assert t.is_monotone(1e-10) and t.is_concave(1e-10)
    assert np.all(t.derivative_sandwich())


def test_derivative_identity_closed_form():
    r = check_derivative_identity(spec1d(n=2000), 1.0, 1e-3)
    assert r.rhs == pytest.approx(0.25, rel=1e-5)
    assert r.lhs == pytest.approx(0.25, rel=1e-5)
    assert r.relative_gap <= 1e-3 and r.sandwich_ok


def test_derivative_identity_zero_source():
    r = check_derivative_identity(spec1d(source=Constant(0.0), n=20), 2.0, 1e-3)
    assert r.lhs == 0 and r.rhs == 0 and r.relative_gap == 0


def test_derivative_identity_rejects_large_delta():
    with pytest.raises(ValueError):
        check_derivative_identity(spec1d(n=20), 1.0, 1.0)


def test_verify_dirichlet_closed_form():
    rep = verify_expansion(spec1d(n=1000), DIRICHLET_GRID)
    assert rep.regime is ExpansionRegime.DIRICHLET and rep.passed and rep.all_checks_ok
    assert rep.fitted_exponent == pytest.approx(-1, abs=0.02)
    assert rep.fitted_constant == pytest.approx(0.25, rel=0.05)


def test_verify_neumann_compatible_closed_form():
    rep = verify_expansion(spec1d(n=1000, source=ODD), NEUMANN_GRID)
    assert rep.regime is ExpansionRegime.NEUMANN_COMPATIBLE and rep.passed and rep.all_checks_ok
    assert rep.fitted_constant == pytest.approx(1 / 576, rel=0.05)


def test_verify_neumann_incompatible_closed_form():
    rep = verify_expansion(spec1d(n=1000), NEUMANN_GRID)
    assert rep.regime is ExpansionRegime.NEUMANN_INCOMPATIBLE and rep.passed and rep.all_checks_ok
    assert rep.details["K_f"] == pytest.approx(-1 / 24, abs=1e-4)
    a, scaled = rep.table.alphas, np.array(rep.details["scaled_energy"])
    assert np.all(scaled <= -0.25 + 1e-12)
    assert np.all(scaled >= -0.25 + a * rep.details["K_f"] - 1e-12)


def test_regime_mismatch():
    with pytest.raises(RegimeMismatch):
        verify_expansion(spec1d(n=50), NEUMANN_GRID, regime="neumann_compatible")
    with pytest.raises(RegimeMismatch):
        verify_expansion(spec1d(n=50, source=ODD), NEUMANN_GRID, regime="neumann_incompatible")


def test_report_serializes():
    import json
    rep = verify_expansion(spec1d(n=200), DIRICHLET_GRID, richardson=False)
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["regime"] == "dirichlet" and doc["passed"] is True
    assert set(doc["tolerances"]) == {"exponent", "constant"}


def test_failing_report_when_tolerance_too_tight():
    rep = verify_expansion(spec1d(n=1000), NEUMANN_GRID, tolerances={"exponent": 1e-6})
    assert not rep.passed


@pytest.mark.parametrize("q", [2.0, 3.0, 1.5])
def test_exponent_improves_deeper_in_regime(q):
    s = spec1d(2.0, q, n=200)
    gamma = 1 / (q - 1)
    shallow = fit_power_law(sweep(s, geometric_grid(1e-2, 1e-1)), 0.0).exponent
    deep = fit_power_law(sweep(s, geometric_grid(1e-5, 1e-4)), 0.0).exponent
    assert abs(deep + gamma) < abs(shallow + gamma)
    assert abs(deep + gamma) < 0.01 * gamma
