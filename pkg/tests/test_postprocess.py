import numpy as np
import pytest
from hypothesis import given, strategies as st

from robin_asymptotics.energy import gradient_lp_norm
from robin_asymptotics.exceptions import CompatibleSource
from robin_asymptotics.mesh import build_interval_mesh, build_rectangle_mesh
from robin_asymptotics.oracles import brute_min_g
from robin_asymptotics.postprocess import (BoundaryFlux, compute_rho_alpha, dirichlet_expansion_constant,
                                           dirichlet_extension_datum, expansion_constants,
                                           extend_boundary_datum, incompat_constant, min_g,
                                           neumann_slope, recover_boundary_flux)
from robin_asymptotics.problem import Constant, Polynomial, ProblemSpec
from robin_asymptotics.solvers import solve_dirichlet, solve_kf, solve_neumann_normalized, solve_robin

ODD = Polynomial((-0.5, 1.0))


def spec1d(p=2.0, q=2.0, alpha=1.0, n=1000, source=Constant(1.0)):
    return ProblemSpec(build_interval_mesh(0, 1, n), p, q, alpha, source)


def flux(values, weights=None):
    v = np.asarray(values, dtype=float)
    return BoundaryFlux(np.arange(v.size), v, np.ones(v.size) if weights is None else np.asarray(weights))


def test_dirichlet_flux_and_constant():
    s = spec1d()
    fl = recover_boundary_flux(s, solve_dirichlet(s).field)
    np.testing.assert_allclose(fl.values, -0.5, atol=1e-9)
    assert dirichlet_expansion_constant(fl, 2.0) == pytest.approx(0.25, rel=1e-9)


def test_expansion_constant_examples():
    assert dirichlet_expansion_constant(flux([0.0, 0.0]), 2.5) == 0.0
    assert dirichlet_expansion_constant(flux([-0.5, -0.5]), 3.0) == pytest.approx(
        (2 / 3) * 2 * 0.5 ** 1.5, rel=1e-14)
    assert dirichlet_expansion_constant(flux([-0.5, -0.5]), 3.0) == pytest.approx(0.4714, abs=1e-4)


def test_kf_flux_is_constant():
    s = spec1d()
    fl = recover_boundary_flux(s, solve_kf(s).field)
    np.testing.assert_allclose(fl.values, -0.5, atol=1e-9)


@pytest.mark.parametrize("mesh", [build_interval_mesh(0, 2, 50), build_rectangle_mesh(1, 1, 8, 8)])
@pytest.mark.parametrize("p", [2.0, 3.0])
def test_flux_balance(mesh, p):
    s = ProblemSpec(mesh, p, 2.0, 1.0, Constant(1.3))
    for sol in (solve_dirichlet(s), solve_robin(s), solve_kf(s)):
        fl = recover_boundary_flux(s, sol.field)
        assert fl.integral() + s.load.total_mass == pytest.approx(0.0, abs=1e-8)


def test_robin_consistency_refines():
    # |g_i + alpha |u_i|^(q-2) u_i| shrinks under refinement
    errs = []
    for n in (8, 16, 32, 64):
        s = ProblemSpec(build_rectangle_mesh(1, 1, n, n), 2.0, 3.0, 2.0, Constant(1.0))
        sol = solve_robin(s)
        fl = recover_boundary_flux(s, sol.field)
        u = sol.field.values[fl.vertices]
        errs.append(np.max(np.abs(fl.values + s.alpha * np.abs(u) * u)))
    assert errs[-1] < errs[0] / 4
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_robin_flux_exact_in_1d():
    s = spec1d(p=3.0, q=2.5, alpha=2.0, n=200)
    sol = solve_robin(s)
    fl = recover_boundary_flux(s, sol.field)
    u = sol.field.values[fl.vertices]
    np.testing.assert_allclose(fl.values, -2.0 * np.abs(u) ** 0.5 * u, atol=1e-9)


def test_neumann_slope_examples():
    s = spec1d(alpha=0.0, source=ODD)
    u0 = solve_neumann_normalized(s).field
    assert neumann_slope(s.mesh, u0, 2.0) == pytest.approx(1 / 576, rel=1e-6)
    m = build_interval_mesh(0, 1, 4)
    assert neumann_slope(m, np.zeros(5), 2.0) == 0.0
    assert neumann_slope(m, np.array([-0.3, 0, 0, 0, 0.3]), 2.0) == pytest.approx(0.09)


def test_incompat_constant_examples():
    assert incompat_constant(spec1d(n=5)) == pytest.approx(0.25)
    sq = ProblemSpec(build_rectangle_mesh(1, 1, 4, 4), 2.0, 2.0, 1.0)
    assert incompat_constant(sq) == pytest.approx(0.125, rel=1e-12)
    assert incompat_constant(spec1d(q=3.0, n=5, source=Constant(2.0))) == pytest.approx(4 / 3)
    with pytest.raises(CompatibleSource):
        incompat_constant(spec1d(n=5, source=ODD))


def test_min_g_examples():
    assert min_g(3.0, 0.0, 2.5) == (0.0, 0.0)
    t, m = min_g(1.0, 1.0, 2.0)
    assert (t, m) == pytest.approx((1.0, -0.5))
    t, m = min_g(2.0, -3.0, 3.0)
    assert t == pytest.approx(-1.5 ** 0.5, rel=1e-14)
    assert m == pytest.approx(-2.4495, abs=1e-4)
    with pytest.raises(ValueError):
        min_g(0.0, 1.0, 2.0)


@given(st.floats(0.05, 20), st.floats(-20, 20), st.floats(1.2, 5))
def test_min_g_against_search(a, b, q):
    t, m = min_g(a, b, q)
    tb, mb = brute_min_g(a, b, q)
    # absolute 1e-6 for moderate values, float resolution for huge ones
    assert m == pytest.approx(mb, abs=1e-6, rel=1e-12)
    assert a / q * abs(t) ** q - b * t == pytest.approx(m, rel=1e-12, abs=1e-14)


def test_extension_examples():
    m = build_rectangle_mesh(2, 1, 6, 3)
    c = extend_boundary_datum(m, np.full(m.boundary_vertices.size, 0.7))
    np.testing.assert_allclose(c.values, 0.7, rtol=1e-13)
    iv = build_interval_mesh(0, 1, 10)
    bv = iv.boundary_vertices
    vals = np.where(iv.vertices[bv, 0] == 0, -1.0, 2.0)
    lin = extend_boundary_datum(iv, vals)
    np.testing.assert_allclose(lin.values, -1 + 3 * iv.vertices[:, 0], atol=1e-13)
    with pytest.raises(ValueError):
        extend_boundary_datum(iv, [1.0])


def test_extension_of_dirichlet_datum():
    s = spec1d()
    fl = recover_boundary_flux(s, solve_dirichlet(s).field)
    ub = extend_boundary_datum(s.mesh, dirichlet_extension_datum(fl, 2.0))
    np.testing.assert_allclose(ub.values, 0.5, atol=1e-9)


@pytest.mark.parametrize("alpha", [0.1, 10.0, 1e4])
def test_rho_quadratic_case(alpha):
    s = ProblemSpec(build_rectangle_mesh(1, 1, 10, 10), 2.0, 2.0, 1.0)
    u_inf = solve_dirichlet(s).field
    ub = extend_boundary_datum(s.mesh, dirichlet_extension_datum(recover_boundary_flux(s, u_inf), 2.0))
    rho = compute_rho_alpha(s, u_inf, ub, alpha)
    assert rho == pytest.approx(0.5 * gradient_lp_norm(s.mesh, ub, 2) ** 2 / alpha, rel=1e-10)


def test_rho_zero_extension():
    s = spec1d(p=3.0, n=50)
    assert compute_rho_alpha(s, solve_dirichlet(s).field, np.zeros(51), 10.0) == 0.0


@given(st.floats(1.2, 5), st.floats(1.2, 4), st.floats(1e-3, 1e5), st.integers(0, 2 ** 31))
def test_rho_nonnegative(p, q, alpha, seed):
    rng = np.random.default_rng(seed)
    s = ProblemSpec(build_interval_mesh(0, 1, 12), p, q, 1.0)
    rho = compute_rho_alpha(s, rng.normal(size=13), rng.normal(size=13), alpha)
    assert rho >= -1e-12


def test_expansion_constants_bundle():
    c = expansion_constants(spec1d(n=200))
    assert c.gamma == 1.0 and c.dirichlet_prefactor == pytest.approx(0.25, rel=1e-9)
    assert c.neumann_slope is None and c.incompat_prefactor == pytest.approx(0.25)
    c = expansion_constants(spec1d(n=2000, source=ODD))
    assert c.incompat_prefactor is None and c.neumann_slope == pytest.approx(1 / 576, rel=1e-5)
