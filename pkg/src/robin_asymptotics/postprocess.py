"""Boundary flux recovery and the constants of the limit expansions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .energy import DiscreteEnergy, DiscreteField, _vals
from .exceptions import CompatibleSource
from .problem import Regime, classify_regime


@dataclass(frozen=True, eq=False)
class BoundaryFlux:
    """Recovered ``|grad u|^(p-2) du/dnu`` at the boundary vertices."""

    vertices: np.ndarray   # boundary vertex indices
    values: np.ndarray     # g_i
    weights: np.ndarray    # lumped boundary mass w_i

    def integral(self):
        return float(self.weights @ self.values)


@dataclass(frozen=True)
class ExpansionConstants:
    gamma: float
    dirichlet_prefactor: float
    neumann_slope: float | None
    incompat_prefactor: float | None


def recover_boundary_flux(spec, u) -> BoundaryFlux:
    """Variational flux recovery from the weak-form residual.

    Solves ``w_i g_i = int |grad u|^(p-2) grad u . grad phi_i - F_i`` for
    the boundary hat functions, with ``w_i`` the lumped boundary mass.
    """
    E = DiscreteEnergy.from_spec(spec, alpha=0.0)
    r = E.bulk_gradient(_vals(u)) - E.F
    bv = spec.mesh.boundary_vertices
    w = spec.mesh.boundary_lumped_weights
    return BoundaryFlux(vertices=bv, values=r[bv] / w, weights=w)


def dirichlet_expansion_constant(flux: BoundaryFlux, q) -> float:
    """Positive prefactor ``(q-1)/q int |g|^(q/(q-1)) ds`` of the Dirichlet-limit term."""
    return (q - 1.0) / q * float(flux.weights @ np.abs(flux.values) ** (q / (q - 1.0)))


def dirichlet_extension_datum(flux: BoundaryFlux, q):
    """Boundary values ``-sign(g) |g|^(1/(q-1))``.

    Equal to ``-|du/dnu|^((p-q)/(q-1)) du/dnu`` when ``g = |du/dnu|^(p-2) du/dnu``,
    and pointwise minimizer of ``|t|^q / q + g t``.
    """
    g = flux.values
    return -np.sign(g) * np.abs(g) ** (1.0 / (q - 1.0))


def neumann_slope(mesh, u0, q) -> float:
    """``(1/q) int_{dOmega} |u0|^q ds``, the slope of ``E_alpha`` at ``alpha = 0``."""
    from .energy import boundary_q_integral
    return boundary_q_integral(mesh, u0, q) / q


def incompat_constant(spec, tol=None) -> float:
    """Positive prefactor of the ``alpha^(-1/(q-1))`` divergence for ``int f != 0``."""
    if classify_regime(spec.load, tol) is Regime.COMPATIBLE:
        raise CompatibleSource("int f = 0: no divergent leading term")
    q = spec.q
    mass = abs(spec.load.total_mass)
    H = spec.mesh.boundary_measure
    return (q - 1.0) / q * mass ** (q / (q - 1.0)) / H ** (1.0 / (q - 1.0))


def min_g(a, b, q):
    """Minimizer and minimum of ``g(t) = (a/q)|t|^q - b t`` on the real line."""
    if not a > 0:
        raise ValueError("a must be positive")
    if not q > 1:
        raise ValueError("q must exceed 1")
    t = np.sign(b) * (abs(b) / a) ** (1.0 / (q - 1.0))
    m = (1.0 - q) / q * abs(b) ** (q / (q - 1.0)) / a ** (1.0 / (q - 1.0))
    return float(t), float(m)


def extend_boundary_datum(mesh, boundary_values, p=2.0) -> DiscreteField:
    """Discrete harmonic extension of values given at ``mesh.boundary_vertices``.

    The p = 2 extension is used for every ``p``; any W^{1,p} extension is
    admissible and this one is deterministic.
    """
    vals = np.asarray(boundary_values, dtype=float)
    bv = mesh.boundary_vertices
    if vals.shape != bv.shape:
        raise ValueError(f"expected {bv.size} boundary values, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary values must be finite")
    u = np.zeros(mesh.n_vertices)
    u[bv] = vals
    interior = np.setdiff1d(np.arange(mesh.n_vertices), bv)
    if interior.size:
        K = DiscreteEnergy(mesh, 2.0, 2.0, 0.0, np.zeros(mesh.n_vertices)).stiffness()
        rhs = -(K[interior][:, bv] @ vals)
        u[interior] = np.atleast_1d(spla.spsolve(K[interior][:, interior].tocsc(), rhs))
    return DiscreteField(mesh, u)


def _second_order_remainder(y, r):
    """``(1+y)^r - 1 - r y`` without cancellation for small ``|y|``."""
    out = np.empty_like(y)
    small = np.abs(y) < 0.1
    ys = y[small]
    # binomial series from the quadratic term on
    coef = r * (r - 1.0) / 2.0
    term = ys * ys
    acc = coef * term
    for k in range(2, 30):
        coef *= (r - k) / (k + 1.0)
        term = term * ys
        acc = acc + coef * term
    out[small] = acc
    yl = y[~small]
    out[~small] = (1.0 + yl) ** r - 1.0 - r * yl
    return out


def compute_rho_alpha(spec, u_inf, ubar, alpha) -> float:
    """Second-order remainder of the Dirichlet upper bound at ``alpha``.

    ``(alpha^g / p) int (|grad(u_inf + alpha^-g ubar)|^p - |grad u_inf|^p
    - p alpha^-g |grad u_inf|^(p-2) grad u_inf . grad ubar)`` with
    ``g = 1/(q-1)``; nonnegative by convexity.
    """
    p, gamma = spec.p, 1.0 / (spec.q - 1.0)
    t = float(alpha) ** (-gamma)
    E = DiscreteEnergy.from_spec(spec, alpha=0.0)
    a = E.grads(_vals(u_inf))
    b = E.grads(_vals(ubar))
    aa = np.sum(a * a, axis=1)
    ab = np.sum(a * b, axis=1)
    bb = np.sum(b * b, axis=1)
    X = 2.0 * t * ab + t * t * bb            # |a + t b|^2 - |a|^2
    bracket = np.empty_like(aa)
    deg = aa == 0
    bracket[deg] = (t * t * bb[deg]) ** (0.5 * p)
    nd = ~deg
    # |a|^p [(1+y)^(p/2) - 1 - (p/2) y] + (p/2) |a|^(p-2) t^2 |b|^2, y = X / |a|^2
    y = X[nd] / aa[nd]
    ap = aa[nd] ** (0.5 * p)
    bracket[nd] = ap * _second_order_remainder(y, 0.5 * p) + 0.5 * p * aa[nd] ** (0.5 * p - 1.0) * t * t * bb[nd]
    return float(np.sum(E.vol * bracket)) / (p * t)


def expansion_constants(spec, cfg=None, tol=None) -> ExpansionConstants:
    """All leading-order constants for ``spec``.

    ``neumann_slope`` is set only for a compatible source and
    ``incompat_prefactor`` only for an incompatible one.
    """
    from .solvers import solve_dirichlet, solve_neumann_normalized

    u_inf = solve_dirichlet(spec, cfg).field
    C_D = dirichlet_expansion_constant(recover_boundary_flux(spec, u_inf), spec.q)
    if classify_regime(spec.load, tol) is Regime.COMPATIBLE:
        u0 = solve_neumann_normalized(spec, cfg, tol=tol).field
        return ExpansionConstants(spec.gamma, C_D, neumann_slope(spec.mesh, u0, spec.q), None)
    return ExpansionConstants(spec.gamma, C_D, None, incompat_constant(spec, tol))
