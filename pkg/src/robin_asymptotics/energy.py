"""Discrete Robin energy on P1 fields, its gradient and boundary integrals.

For a P1 field the gradient is constant on each cell, so the bulk term
``(1/p) int |grad u|^p`` is integrated exactly. The boundary term uses
point evaluation in 1D and a fixed 6-point Gauss rule per edge in 2D.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import FACET_GAUSS_POINTS, cell_rule, gauss_segment


@dataclass(frozen=True, eq=False)
class DiscreteField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if v.size != self.mesh.n_vertices:
            raise ValueError(f"field has {v.size} values, mesh has {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def boundary_values(self):
        return self.values[self.mesh.boundary_vertices]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float      # (1/p) int |grad u|^p
    boundary: float  # (1/q) int_{dOmega} |u|^q
    source: float    # int f u
    alpha: float

    @property
    def total(self):
        return self.bulk + self.alpha * self.boundary - self.source


def _vals(u):
    return np.asarray(u.values if isinstance(u, DiscreteField) else u, dtype=float)


def _signed_pow(t, e):
    """``|t|^(e-1) * t``, zero where ``t`` is zero."""
    a = np.abs(t)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] ** (e - 1.0) * np.sign(t[nz])
    return out


class FacetRule:
    """Boundary quadrature: points, weights and P1 shape values per facet."""

    def __init__(self, mesh):
        self.mesh = mesh
        if mesh.dimension == 1:
            self.lam = np.ones((1, 1))
            self.w = np.ones(1)
        else:
            self.lam, self.w = gauss_segment(FACET_GAUSS_POINTS)
        self.facets = mesh.boundary_facets
        self.meas = mesh.facet_measures

    def trace(self, u):
        """Field values at the boundary quadrature points, shape ``(K, nq)``."""
        return u[self.facets] @ self.lam.T

    def integrate(self, values):
        return float(np.sum(self.meas * (values @ self.w)))

    def scatter(self, pointwise, n):
        """``sum_k |F_k| sum_q w_q c_kq phi_i(x_kq)`` for every vertex ``i``."""
        local = self.meas[:, None] * ((pointwise * self.w) @ self.lam)
        return np.bincount(self.facets.ravel(), weights=local.ravel(), minlength=n)

    def matrix(self, pointwise, n):
        """Sparse ``sum_k |F_k| sum_q w_q c_kq phi_i phi_j``."""
        d = self.facets.shape[1]
        loc = np.einsum("k,q,kq,qa,qb->kab", self.meas, self.w, pointwise, self.lam, self.lam)
        rows = np.repeat(self.facets, d, axis=1).ravel()
        cols = np.tile(self.facets, (1, d)).ravel()
        return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n))


class DiscreteEnergy:
    """Energy ``J(u) = bulk + alpha*boundary - F.u`` on a fixed mesh.

    Caches the index structures the solvers need; all methods take and
    return plain arrays.
    """

    def __init__(self, mesh, p, q, alpha, load_values):
        self.mesh = mesh
        self.p = float(p)
        self.q = float(q)
        self.alpha = float(alpha)
        self.F = np.asarray(load_values, dtype=float)
        self.G = mesh.grad_basis
        self.vol = mesh.cell_measures
        self.facets = FacetRule(mesh)
        self.n = mesh.n_vertices

    @classmethod
    def from_spec(cls, spec, alpha=None):
        return cls(spec.mesh, spec.p, spec.q, spec.alpha if alpha is None else alpha,
                   spec.load.values)

    def grads(self, u):
        return np.einsum("mk,mkd->md", u[self.mesh.cells], self.G)

    def parts(self, u):
        s = self.grads(u)
        bulk = float(np.sum(self.vol * np.sum(s * s, axis=1) ** (0.5 * self.p))) / self.p
        bnd = self.facets.integrate(np.abs(self.facets.trace(u)) ** self.q) / self.q
        src = float(self.F @ u)
        return bulk, bnd, src

    def value(self, u):
        bulk, bnd, src = self.parts(u)
        return bulk + self.alpha * bnd - src

    def bulk_gradient(self, u):
        s = self.grads(u)
        norm = np.sqrt(np.sum(s * s, axis=1))
        coef = np.zeros_like(norm)
        nz = norm > 0
        # degenerate cells contribute zero (0 lies in the subdifferential)
        coef[nz] = norm[nz] ** (self.p - 2.0)
        flux = (self.vol * coef)[:, None] * s                     # (M, d)
        local = np.einsum("md,mkd->mk", flux, self.G)
        return np.bincount(self.mesh.cells.ravel(), weights=local.ravel(), minlength=self.n)

    def boundary_gradient(self, u):
        """Gradient of ``(1/q) int |u|^q`` (no alpha)."""
        return self.facets.scatter(_signed_pow(self.facets.trace(u), self.q), self.n)

    def gradient(self, u):
        g = self.bulk_gradient(u) - self.F
        if self.alpha:
            g = g + self.alpha * self.boundary_gradient(u)
        return g

    def metric(self, u, rel_eps=1e-8, lagged=False):
        """SPD approximation of the Hessian at ``u``.

        The exact Hessian of ``(1/p)(|s|^2 + eps^2)^(p/2)`` per cell and of
        ``(alpha/q)(u^2 + eps^2)^(q/2)`` on the boundary, with ``eps`` a small
        multiple of the current gradient and trace scales.

        With ``lagged=True`` the exponents below 2 use the frozen-coefficient
        weights ``|s|^(p-2)`` and ``|u|^(q-2)`` instead; for p, q < 2 these
        majorize the energy around ``u``, so the unit step never increases it.
        """
        s = self.grads(u)
        ss = np.sum(s * s, axis=1)
        scale = np.sqrt(ss.max()) if ss.size else 0.0
        eps2 = (rel_eps * scale) ** 2 if scale > 0 else 1.0
        S = ss + eps2
        a = S ** (0.5 * (self.p - 2.0))
        b = (self.p - 2.0) * S ** (0.5 * (self.p - 4.0))
        if lagged and self.p < 2:
            b = np.zeros_like(b)
        # per-cell tensor a I + b s s^T contracted with basis gradients
        GG = np.einsum("mid,mjd->mij", self.G, self.G)
        Gs = np.einsum("mid,md->mi", self.G, s)
        loc = self.vol[:, None, None] * (a[:, None, None] * GG + b[:, None, None] * Gs[:, :, None] * Gs[:, None, :])
        c = self.mesh.cells
        k = c.shape[1]
        rows = np.repeat(c, k, axis=1).ravel()
        cols = np.tile(c, (1, k)).ravel()
        H = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(self.n, self.n))
        if self.alpha:
            t = self.facets.trace(u)
            tscale = np.abs(t).max() if t.size else 0.0
            teps2 = (rel_eps * tscale) ** 2 if tscale > 0 else 1.0
            qfac = 1.0 if lagged and self.q < 2 else self.q - 1.0
            w = self.alpha * qfac * (t * t + teps2) ** (0.5 * (self.q - 2.0))
            H = H + self.facets.matrix(w, self.n)
        return H.tocsr()

    def stiffness(self):
        """Linear (p = 2) stiffness matrix."""
        GG = np.einsum("mid,mjd->mij", self.G, self.G) * self.vol[:, None, None]
        c = self.mesh.cells
        k = c.shape[1]
        return sp.coo_matrix((GG.ravel(), (np.repeat(c, k, axis=1).ravel(), np.tile(c, (1, k)).ravel())),
                             shape=(self.n, self.n)).tocsr()

    def boundary_mass(self):
        return self.facets.matrix(np.ones((self.facets.facets.shape[0], self.facets.w.size)), self.n).tocsr()


def energy(spec, u) -> EnergyBreakdown:
    """Bulk, boundary and source parts of the discrete energy of ``u``."""
    bulk, bnd, src = DiscreteEnergy.from_spec(spec).parts(_vals(u))
    return EnergyBreakdown(bulk=bulk, boundary=bnd, source=src, alpha=float(spec.alpha))


def residual(spec, u):
    """Gradient of the discrete energy with respect to the nodal values.

    Component ``i`` is ``int |grad u|^(p-2) grad u . grad phi_i
    + alpha int_{dOmega} |u|^(q-2) u phi_i - F_i``.
    """
    return DiscreteEnergy.from_spec(spec).gradient(_vals(u))


def boundary_q_integral(mesh, u, q):
    """Raw ``int_{dOmega} |u|^q ds`` with the same facet rule as :func:`energy`."""
    rule = FacetRule(mesh)
    return rule.integrate(np.abs(rule.trace(_vals(u))) ** q)


def lp_norm(mesh, u, p):
    lam, w = cell_rule(mesh.dimension)
    uq = _vals(u)[mesh.cells] @ lam.T
    return float(np.sum(mesh.cell_measures * (np.abs(uq) ** p @ w))) ** (1.0 / p)


def gradient_lp_norm(mesh, u, p):
    s = np.einsum("mk,mkd->md", _vals(u)[mesh.cells], mesh.grad_basis)
    return float(np.sum(mesh.cell_measures * np.sum(s * s, axis=1) ** (0.5 * p))) ** (1.0 / p)


def poincare_ratio(mesh, u, p, q):
    """``||u||_Lp(Omega) / (||grad u||_Lp(Omega) + ||u||_Lq(dOmega))``."""
    den = gradient_lp_norm(mesh, u, p) + boundary_q_integral(mesh, u, q) ** (1.0 / q)
    if den == 0:
        raise ValueError("poincare_ratio is undefined for the zero field")
    return lp_norm(mesh, u, p) / den
