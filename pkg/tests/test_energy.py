import numpy as np
import pytest
from hypothesis import given, strategies as st

from robin_asymptotics.energy import (DiscreteField, boundary_q_integral, energy, poincare_ratio,
                                      residual)
from robin_asymptotics.mesh import build_interval_mesh, build_rectangle_mesh
from robin_asymptotics.problem import Constant, Polynomial, ProblemSpec

# Largest ratio found by multi-start BFGS maximization of poincare_ratio on each reference
# mesh; every run converged to a constant field, whose ratio is |Omega|^(1/p) / H^(1/q).
C_STAR = {
    ("interval8", 2.0, 2.0): 2 ** -0.5,
    ("interval8", 3.0, 1.5): 2 ** (-2 / 3),
    ("square4", 2.0, 2.0): 0.5,
}
REF_MESHES = {"interval8": build_interval_mesh(0, 1, 8), "square4": build_rectangle_mesh(1, 1, 4, 4)}


def spec1d(p=2.0, q=2.0, alpha=1.0, n=16, source=Constant(1.0)):
    return ProblemSpec(build_interval_mesh(0, 1, n), p, q, alpha, source)


def test_zero_field():
    s = spec1d(3.0, 1.5, 2.0)
    assert energy(s, np.zeros(s.mesh.n_vertices)).total == 0.0


@pytest.mark.parametrize("t,c,alpha", [(0.7, 1.0, 1.0), (-2.0, 3.0, 0.5), (1.5, -1.0, 4.0)])
def test_constant_field(t, c, alpha):
    s = spec1d(alpha=alpha, source=Constant(c))
    e = energy(s, np.full(s.mesh.n_vertices, t))
    assert e.total == pytest.approx(alpha * t * t - t * c, rel=1e-12)


def test_dirichlet_profile_parts():
    # u = x(1-x)/2: (1/2) int |u'|^2 = 1/24 and int u = 1/12
    s = spec1d(alpha=0.0, n=2000)
    x = s.mesh.vertices[:, 0]
    e = energy(s, x * (1 - x) / 2)
    assert e.bulk == pytest.approx(1 / 24, abs=1e-7)
    assert e.source == pytest.approx(1 / 12, abs=1e-7)
    assert e.total == pytest.approx(-1 / 24, abs=1e-7)


def test_boundary_integral_examples():
    sq = build_rectangle_mesh(1, 1, 3, 3)
    assert boundary_q_integral(sq, np.ones(sq.n_vertices), 2.7) == pytest.approx(4.0, rel=1e-13)
    iv = build_interval_mesh(0, 1, 5)
    assert boundary_q_integral(iv, np.full(6, -2.0), 3.0) == pytest.approx(16.0)
    x = iv.vertices[:, 0]
    u0 = -1 / 24 + x ** 2 / 4 - x ** 3 / 6
    assert boundary_q_integral(iv, u0, 2.0) == pytest.approx(1 / 288, rel=1e-12)


def test_boundary_rule_exact_for_quadratic_trace():
    # on an edge from 0 to 1, the P1 trace x integrates x^2 to 1/3 per unit edge
    m = build_rectangle_mesh(1, 1, 1, 1)
    x = m.vertices[:, 0]
    # bottom and top edges give 1/3 each, right edge gives 1, left 0
    assert boundary_q_integral(m, x, 2.0) == pytest.approx(2 / 3 + 1, rel=1e-13)


def test_residual_constant_field_identity():
    s = spec1d(p=3.0, q=2.5, alpha=1.7, source=Polynomial((1, -2, 0.5)))
    t = -0.8
    r = residual(s, np.full(s.mesh.n_vertices, t))
    expected = s.alpha * 2 * abs(t) ** 1.5 * np.sign(t) - s.load.total_mass
    assert r.sum() == pytest.approx(expected, rel=1e-12)


def _fd_check(spec, u, eps=1e-6):
    r = residual(spec, u)
    fd = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = eps
        fd[i] = (energy(spec, u + e).total - energy(spec, u - e).total) / (2 * eps)
    return np.max(np.abs(fd - r)) / np.max(np.abs(r))


@pytest.mark.parametrize("p,q", [(2.0, 2.0), (3.0, 1.5), (1.5, 3.0), (4.0, 4.0)])
def test_residual_matches_finite_differences_1d(p, q):
    rng = np.random.default_rng(1)
    s = spec1d(p, q, 1.3, n=12, source=Polynomial((1, 2)))
    x = s.mesh.vertices[:, 0]
    u = 1 + x + 0.3 * np.sin(7 * x) + 0.01 * rng.normal(size=x.size)   # no flat cells
    assert _fd_check(s, u) <= 1e-6


@pytest.mark.parametrize("p,q", [(2.0, 2.0), (2.5, 1.7)])
def test_residual_matches_finite_differences_2d(p, q):
    rng = np.random.default_rng(2)
    s = ProblemSpec(build_rectangle_mesh(1, 1, 3, 3), p, q, 0.8, Constant(1))
    v = s.mesh.vertices
    u = 1 + v[:, 0] + 2 * v[:, 1] ** 2 + 0.05 * rng.normal(size=len(v))
    assert _fd_check(s, u) <= 1e-6


def test_convexity_midpoint_1000_fields():
    rng = np.random.default_rng(20)
    worst = -np.inf
    for k in range(1000):
        p, q = rng.uniform(1.2, 4.0, size=2)
        s = spec1d(p, q, rng.uniform(0.01, 10), n=10, source=Polynomial(tuple(rng.normal(size=3))))
        u, v = rng.normal(size=(2, s.mesh.n_vertices)) * rng.uniform(0.1, 3)
        lam = (0.25, 0.5, 0.75)[k % 3]
        lhs = energy(s, lam * u + (1 - lam) * v).total
        rhs = lam * energy(s, u).total + (1 - lam) * energy(s, v).total
        worst = max(worst, lhs - rhs)
    assert worst <= 1e-12


@given(st.floats(-3, 3).filter(lambda t: abs(t) > 1e-3), st.floats(1.1, 5), st.floats(1.1, 5),
       st.integers(0, 2 ** 31))
def test_homogeneity(t, p, q, seed):
    s = spec1d(p, q, 1.0, n=7)
    u = np.random.default_rng(seed).normal(size=s.mesh.n_vertices)
    e1, et = energy(s, u), energy(s, t * u)
    assert et.bulk == pytest.approx(abs(t) ** p * e1.bulk, rel=1e-12)
    assert et.boundary == pytest.approx(abs(t) ** q * e1.boundary, rel=1e-12)


def test_poincare_examples():
    m = build_interval_mesh(0, 1, 50)
    assert poincare_ratio(m, np.ones(51), 2, 2) == pytest.approx(2 ** -0.5, rel=1e-12)
    x = m.vertices[:, 0]
    assert poincare_ratio(m, x, 2, 2) == pytest.approx((1 / np.sqrt(3)) / 2, rel=1e-12)
    with pytest.raises(ValueError):
        poincare_ratio(m, np.zeros(51), 2, 2)


@pytest.mark.parametrize("key", sorted(C_STAR))
def test_poincare_bounded_by_frozen_constant(key):
    name, p, q = key
    m = REF_MESHES[name]
    rng = np.random.default_rng(7)
    ratios = [poincare_ratio(m, rng.normal(size=m.n_vertices) * rng.uniform(0.01, 100)
                             + rng.normal() * rng.integers(0, 2), p, q) for _ in range(1000)]
    assert max(ratios) <= C_STAR[key] * (1 + 1e-12)


def test_field_validation():
    m = build_interval_mesh(0, 1, 3)
    with pytest.raises(ValueError):
        DiscreteField(m, [1.0, 2.0])
    with pytest.raises(ValueError):
        DiscreteField(m, [1.0, np.nan, 0, 0])
    f = DiscreteField(m, [0, 1, 2, 3])
    assert f.boundary_values.tolist() in ([0.0, 3.0], [3.0, 0.0])
    with pytest.raises(ValueError):
        f.values[0] = 5
