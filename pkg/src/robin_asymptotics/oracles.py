"""Reference solutions of the 1D problems, independent of the mesh code.

On an interval the Euler-Lagrange equation has the first integral
``|u'|^(p-2) u' = A - F(x)`` with ``F(x) = int_a^x f``. The Robin condition at
the left end fixes ``u(a)`` from ``A``, so one scalar root-finding problem in
``A`` determines the minimizer; everything else is quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial as _Poly
from scipy.integrate import quad

from .exceptions import IncompatibleSource, NoConvergence
from .problem import Constant, Polynomial

QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-13, limit=400)


@dataclass(frozen=True)
class OracleSolution:
    """Continuum reference values for one 1D problem.

    Energies that do not apply (for instance ``E_0`` for a source with
    nonzero mean) are ``None``.
    """

    u: Callable
    E_alpha: float | None
    E_inf: float | None
    E_0: float | None
    K_f: float | None
    method: str                              # "closed_form" or "quadrature"
    flux_constant: float | None = None       # A in |u'|^(p-2) u' = A - F
    dirichlet_prefactor: float | None = None
    neumann_slope: float | None = None
    boundary_values: tuple | None = None
    evaluations: dict = field(default_factory=dict, compare=False)


def _phi_inv(t, r):
    """Inverse of ``s -> |s|^(r-2) s``."""
    return math.copysign(abs(t) ** (1.0 / (r - 1.0)), t)


def oracle_1d_linear(a, b, alpha, c) -> OracleSolution:
    """Closed form for ``-u'' = c`` on ``(a, b)`` with Robin data ``alpha``.

    With ``L = b - a`` the minimizer is ``u = c(L t - t^2)/2 + cL/(2 alpha)``,
    ``t = x - a``, and ``E_alpha = -c^2 L^3/24 - c^2 L^2/(4 alpha)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    L, c, alpha = float(b - a), float(c), float(alpha)
    u0 = c * L / (2.0 * alpha)

    def u(x):
        t = np.asarray(x, dtype=float) - a
        return 0.5 * c * (L * t - t * t) + u0

    e_inf = -c * c * L ** 3 / 24.0
    return OracleSolution(
        u=u,
        E_alpha=e_inf - c * c * L * L / (4.0 * alpha),
        E_inf=e_inf,
        E_0=0.0 if c == 0 else None,
        K_f=e_inf,
        method="closed_form",
        flux_constant=c * L / 2.0,
        dirichlet_prefactor=c * c * L * L / 4.0,
        neumann_slope=0.0 if c == 0 else None,
        boundary_values=(u0, u0),
    )


class _FirstIntegral:
    """``sigma(x) = A - F(x)`` and the quadratures built on it."""

    def __init__(self, a, b, p, source):
        self.a, self.b, self.p = float(a), float(b), float(p)
        if isinstance(source, Constant):
            coeffs = [float(source.value)]
        elif isinstance(source, Polynomial) and source.dimension == 1:
            coeffs = list(source.coefficients)
        else:
            raise TypeError("the 1D oracle needs a Constant or 1D Polynomial source")
        self.f = _Poly(coeffs)
        self.F = self.f.integ(lbnd=self.a)
        self.M = float(self.F(self.b))
        self.neval = 0

    def _breaks(self, A):
        roots = (A - self.F).roots()
        real = roots[np.abs(roots.imag) < 1e-12].real
        return sorted({float(r) for r in real if self.a < r < self.b})

    def _quad(self, fn, A, lo=None, hi=None):
        lo = self.a if lo is None else lo
        hi = self.b if hi is None else hi
        pts = [lo] + [r for r in self._breaks(A) if lo < r < hi] + [hi]
        total = 0.0
        for x0, x1 in zip(pts[:-1], pts[1:]):
            val, _, info = quad(fn, x0, x1, full_output=1, **QUAD_OPTS)
            self.neval += info["neval"]
            total += val
        return total

    def du(self, A):
        p = self.p
        return lambda x: _phi_inv(A - self.F(x), p)

    def increment(self, A, x=None):
        """``int_a^x u'`` (``x = b`` by default)."""
        return self._quad(self.du(A), A, hi=x)

    def energy(self, A, ua, boundary):
        """``(1/p) int |u'|^p + boundary - int f u`` for ``u(a) = ua``.

        ``int f u = M u(b) - int F u'`` by parts.
        """
        du, p = self.du(A), self.p
        grad = self._quad(lambda x: abs(du(x)) ** p, A) / p
        ub = ua + self.increment(A)
        src = self.M * ub - self._quad(lambda x: self.F(x) * du(x), A)
        return grad + boundary - src

    def evaluator(self, A, ua):
        def u(x):
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            out = np.array([ua + (self.increment(A, xi) if xi > self.a else 0.0) for xi in xs])
            return out if np.ndim(x) else float(out[0])
        return u


def _bisect(h, lo=-1.0, hi=1.0, tol=1e-15, max_expand=200, max_iter=400):
    """Root of an increasing function; expands the bracket geometrically."""
    for _ in range(max_expand):
        if h(lo) <= 0:
            break
        lo *= 2.0
    else:
        raise NoConvergence("could not bracket the flux constant from below")
    for _ in range(max_expand):
        if h(hi) >= 0:
            break
        hi *= 2.0
    else:
        raise NoConvergence("could not bracket the flux constant from above")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * max(1.0, abs(mid)):
            return mid
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    raise NoConvergence("bisection did not reach the requested tolerance")


def oracle_1d_general_p(a, b, p, q, alpha, source=Constant(1.0)) -> OracleSolution:
    """Quadrature reference solution for general ``p, q`` on ``(a, b)``.

    Parameters
    ----------
    a, b : float
        Interval end points.
    p, q : float
        Exponents, both greater than 1.
    alpha : float
        Robin parameter. ``alpha = 0`` requests the normalized Neumann
        solution and needs a zero-mean source.
    source : Constant or Polynomial
        1D source term.

    Returns
    -------
    OracleSolution
        ``E_alpha`` (or ``E_0`` when ``alpha = 0``), ``E_inf`` and ``K_f``
        with ``C_D`` from the Dirichlet flux, and ``S_0`` when the source
        has zero mean.

    Raises
    ------
    NoConvergence
        If the flux constant cannot be bracketed or bisected.
    IncompatibleSource
        If ``alpha = 0`` with a source of nonzero mean.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not (p > 1 and q > 1):
        raise ValueError("p and q must exceed 1")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    fi = _FirstIntegral(a, b, p, source)
    M = fi.M
    scale = 1.0 + abs(M)
    compatible = abs(M) <= 1e-14 * scale * (b - a)
    qs = q / (q - 1.0)

    # Dirichlet: int u' = 0
    A_inf = _bisect(lambda A: fi.increment(A), -scale, scale)
    E_inf = fi.energy(A_inf, 0.0, 0.0)
    C_D = (q - 1.0) / q * (abs(A_inf) ** qs + abs(A_inf - M) ** qs)

    # K_f: constant flux -M/2 at both ends, u(a) + u(b) = 0
    A_k = 0.5 * M
    ua_k = -0.5 * fi.increment(A_k)
    K_f = fi.energy(A_k, ua_k, 0.0)

    E_0 = S_0 = None
    if compatible:
        # flux vanishes at both ends; |u(a)|^(q-2)u(a) = -|u(b)|^(q-2)u(b)
        ua0 = -0.5 * fi.increment(0.0)
        E_0 = fi.energy(0.0, ua0, 0.0)
        S_0 = 2.0 * abs(ua0) ** q / q

    if alpha == 0:
        if not compatible:
            raise IncompatibleSource(f"alpha = 0 needs a zero-mean source, got int f = {M}")
        A, ua, E_a = 0.0, ua0, None
    else:
        def ua_of(A):
            return _phi_inv(A / alpha, q)

        def h(A):
            # u(b) from the path minus u(b) from the right Robin condition
            return ua_of(A) + fi.increment(A) - _phi_inv((M - A) / alpha, q)

        A = _bisect(h, -scale, scale)
        ua = ua_of(A)
        ub = _phi_inv((M - A) / alpha, q)
        E_a = fi.energy(A, ua, alpha / q * (abs(ua) ** q + abs(ub) ** q))

    ub_final = ua + fi.increment(A)
    return OracleSolution(
        u=fi.evaluator(A, ua),
        E_alpha=E_a,
        E_inf=E_inf,
        E_0=E_0,
        K_f=K_f,
        method="quadrature",
        flux_constant=A,
        dirichlet_prefactor=C_D,
        neumann_slope=S_0,
        boundary_values=(ua, ub_final),
        evaluations={"quad_neval": fi.neval},
    )


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def brute_min_g(a, b, q, tol=1e-9):
    """Golden-section minimization of ``(a/q)|t|^q - b t``.

    Searches ``[-T, T]`` with ``T = 1 + 2 (|b|/a)^(1/(q-1))``, which
    contains the minimizer, until the bracket is below ``tol`` relative to
    ``max(1, |t|)``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if not q > 1:
        raise ValueError("q must exceed 1")

    def g(t):
        return a / q * abs(t) ** q - b * t

    T = 1.0 + 2.0 * (abs(b) / a) ** (1.0 / (q - 1.0))
    lo, hi = -T, T
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    g1, g2 = g(x1), g(x2)
    # relative stop: an absolute 1e-9 bracket is below float spacing for large minimizers
    for _ in range(400):
        if hi - lo <= tol * max(1.0, abs(x1)):
            break
        if g1 <= g2:
            hi, x2, g2 = x2, x1, g1
            x1 = hi - _INVPHI * (hi - lo)
            g1 = g(x1)
        else:
            lo, x1, g1 = x1, x2, g2
            x2 = lo + _INVPHI * (hi - lo)
            g2 = g(x2)
    t = 0.5 * (lo + hi)
    return t, g(t)
