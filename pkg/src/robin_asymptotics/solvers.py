"""Minimizers for the Robin, Dirichlet, normalized Neumann and K_f problems.

All four settings share one descent loop: a search direction from the
regularized Hessian (or the plain gradient), Armijo backtracking on the
exact, unregularized energy, and a max-norm residual certificate. Linear
constraints (Dirichlet pinning, a single hyperplane) are handled by
restricting to free vertices and by a bordered KKT solve.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import DiscreteEnergy, DiscreteField, EnergyBreakdown, FacetRule, _signed_pow
from .exceptions import IncompatibleSource, MaxIterationsExceeded, NonfiniteEnergy
from .problem import Regime, classify_regime

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class Setting(enum.Enum):
    ROBIN = "robin"
    DIRICHLET = "dirichlet"
    NEUMANN_NORMALIZED = "neumann"
    KF_CONSTRAINED = "kf"


@dataclass(frozen=True)
class SolverConfig:
    """Descent parameters.

    ``gtol`` is scaled by the Euclidean norm of the load vector (falling
    back to ``gtol`` itself for a zero load) to give the absolute max-norm
    residual tolerance.
    """

    gtol: float = 1e-10
    max_iter: int = 100_000
    contraction: float = 0.5
    armijo: float = 1e-4
    exact_linear: bool = False
    direction: str = "newton"   # or "steepest"
    max_backtracks: int = 80

    def __post_init__(self):
        if not self.gtol > 0:
            raise ValueError("gtol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        for name in ("contraction", "armijo"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.direction not in ("newton", "steepest"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def tolerance(self, load_values):
        scale = float(np.linalg.norm(load_values))
        return self.gtol * scale if scale > 0 else self.gtol


@dataclass(frozen=True, eq=False)
class Solution:
    field: DiscreteField
    energy: EnergyBreakdown
    iterations: int
    residual_norm: float
    setting: Setting
    tolerance: float
    history: tuple = field(default=(), repr=False)


class _Problem:
    """Energy restricted to free vertices and an optional hyperplane ``c.u = 0``."""

    def __init__(self, E, free, constraint=None):
        self.E = E
        self.free = free
        self.constraint = constraint
        self.c = None if constraint is None else np.asarray(constraint, dtype=float)[free]
        self.ones = np.ones(free.size)

    def rescaled(self):
        """Same problem in units where the load has unit max-norm.

        With ``u = lam v`` and ``lam = |F|^(1/(p-1))`` the energy is
        ``lam^p`` times the energy with load ``F/lam^(p-1)`` and boundary
        weight ``alpha lam^(q-p)``, so iterates and energies stay clear of
        underflow and overflow for extreme loads. Returns ``(problem, lam)``.
        """
        E = self.E
        fmax = float(np.max(np.abs(E.F), initial=0.0))
        if fmax == 0 or not np.isfinite(fmax):
            return self, 1.0
        lam = fmax ** (1.0 / (E.p - 1.0))
        alpha = E.alpha * lam ** (E.q - E.p)
        if not (np.isfinite(lam) and lam > 0 and np.isfinite(alpha) and (alpha > 0 or E.alpha == 0)):
            return self, 1.0
        scaled = DiscreteEnergy(E.mesh, E.p, E.q, alpha, E.F / fmax)
        return _Problem(scaled, self.free, self.constraint), lam

    def project_point(self, uf):
        # subtract the constant that restores c.u = 0
        if self.c is None:
            return uf
        return uf - (self.c @ uf) / (self.c @ self.ones)

    def project_grad(self, gf):
        if self.c is None:
            return gf
        return gf - self.c * (self.c @ gf) / (self.c @ self.c)

    def metric(self, u, lagged=False):
        return self.E.metric(u, lagged=lagged)[self.free][:, self.free]

    def residual(self, u):
        return self.project_grad(self.E.gradient(u)[self.free])

    def roundoff_floor(self, u, r):
        """Residual change caused by a few-ulp perturbation of ``u``.

        The residual cannot be certified below this level in floating point.
        """
        sign = np.where(np.arange(u.size) % 2 == 0, 1.0, -1.0)
        pert = u + 4 * _EPS * np.abs(u) * sign
        pert[np.setdiff1d(np.arange(u.size), self.free)] = u[np.setdiff1d(np.arange(u.size), self.free)]
        dr = self.residual(pert) - r
        return 2 * float(np.max(np.abs(dr), initial=0.0)) + 8 * _EPS * float(np.max(np.abs(self.E.F), initial=0.0))

    def newton_direction(self, H, gf):
        if self.c is None:
            K, rhs = H, -gf
        else:
            col = sp.csr_matrix(self.c[:, None])
            K = sp.bmat([[H, col], [col.T, None]], format="csc")
            rhs = np.concatenate([-gf, [0.0]])
        try:
            d = spla.spsolve(sp.csc_matrix(K), rhs)
        except RuntimeError:
            return None
        d = np.atleast_1d(d)[: gf.size]
        return d if np.all(np.isfinite(d)) else None


def _breakdown(E, u):
    bulk, bnd, src = E.parts(u)
    return EnergyBreakdown(bulk=bulk, boundary=bnd, source=src, alpha=E.alpha)


def _descend(prob, u0, cfg, tol, setting):
    E, free = prob.E, prob.free
    u = np.array(u0, dtype=float)
    u[free] = prob.project_point(u[free])

    def value(v):
        bulk, bnd, src = E.parts(v)
        noise = 64 * _EPS * (abs(bulk) + abs(E.alpha * bnd) + abs(src))
        return bulk + E.alpha * bnd - src, noise

    f, noise = value(u)
    if not np.isfinite(f):
        raise NonfiniteEnergy("initial field has non-finite energy")
    history = [f]
    rnorm = np.inf

    def result(it):
        return Solution(field=DiscreteField(E.mesh, u), energy=_breakdown(E, u), iterations=it,
                        residual_norm=rnorm, setting=setting, tolerance=tol, history=tuple(history))

    for it in range(cfg.max_iter + 1):
        g = E.gradient(u)
        gf = prob.project_grad(g[free])
        rnorm = float(np.max(np.abs(gf))) if gf.size else 0.0
        if rnorm <= tol:
            return result(it)
        floor = prob.roundoff_floor(u, gf)
        if rnorm <= floor:
            tol = max(tol, floor)
            return result(it)
        if it == cfg.max_iter:
            break

        d = None
        if cfg.direction == "newton":
            d = prob.newton_direction(prob.metric(u, lagged=True), g[free])
        if d is None or not (gf @ d < 0):
            d = -gf
        slope = float(g[free] @ d)

        t, accepted = 1.0, False
        if abs(slope) <= 100 * noise:
            # predicted decrease is below energy round-off: accept a step that reduces the residual
            for _ in range(cfg.max_backtracks):
                trial = u.copy()
                trial[free] += t * d
                rt = np.max(np.abs(prob.project_grad(E.gradient(trial)[free])))
                if rt < rnorm:
                    accepted = True
                    break
                t *= cfg.contraction
        else:
            for _ in range(cfg.max_backtracks):
                trial = u.copy()
                trial[free] += t * d
                ft, _ = value(trial)
                if np.isfinite(ft) and ft <= f + cfg.armijo * t * slope:
                    accepted = True
                    break
                t *= cfg.contraction
            if accepted and t == 1.0:
                # short step from a degenerate metric: expand while the energy keeps dropping
                for _ in range(60):
                    t2 = 2.0 * t
                    trial2 = u.copy()
                    trial2[free] += t2 * d
                    f2, _ = value(trial2)
                    if not (np.isfinite(f2) and f2 < ft and f2 <= f + cfg.armijo * t2 * slope):
                        break
                    t, trial, ft = t2, trial2, f2
        if not accepted:
            raise MaxIterationsExceeded(
                f"line search stalled at iteration {it} (residual {rnorm:.3e}, tolerance {tol:.3e})",
                best=result(it))
        trial[free] = prob.project_point(trial[free])
        u, (f, noise) = trial, value(trial)
        history.append(f)

    raise MaxIterationsExceeded(
        f"no convergence in {cfg.max_iter} iterations (residual {rnorm:.3e}, tolerance {tol:.3e})",
        best=result(cfg.max_iter))


def _linear_solve(prob, tol, setting):
    """Direct solve of the optimality system for p = q = 2."""
    E, free = prob.E, prob.free
    A = E.stiffness()
    if E.alpha:
        A = A + E.alpha * E.boundary_mass()
    A = A[free][:, free]
    if prob.c is None:
        uf = spla.spsolve(sp.csc_matrix(A), E.F[free])
    else:
        col = sp.csr_matrix(prob.c[:, None])
        K = sp.bmat([[A, col], [col.T, None]], format="csc")
        uf = spla.spsolve(K, np.concatenate([E.F[free], [0.0]]))[: free.size]
    u = np.zeros(E.n)
    u[free] = np.atleast_1d(uf)
    gf = prob.project_grad(E.gradient(u)[free])
    rnorm = float(np.max(np.abs(gf))) if gf.size else 0.0
    return Solution(field=DiscreteField(E.mesh, u), energy=_breakdown(E, u), iterations=1,
                    residual_norm=rnorm, setting=setting, tolerance=tol,
                    history=(E.value(u),))


def _run(prob, spec, cfg, initial, setting):
    cfg = cfg or SolverConfig()
    tol = cfg.tolerance(prob.E.F)
    sprob, lam = prob.rescaled()
    if cfg.exact_linear and spec.p == 2 and spec.q == 2:
        return _unscale(prob, _linear_solve(sprob, tol / lam, setting), lam, tol)
    u0 = np.zeros(prob.E.n) if initial is None else np.asarray(initial, dtype=float).copy()
    if u0.size != prob.E.n:
        raise ValueError("initial field does not match the mesh")
    u0[np.setdiff1d(np.arange(prob.E.n), prob.free)] = 0.0
    # residuals scale by lam^(p-1) = |F|_max, so the tolerance is divided by it
    gscale = lam ** (prob.E.p - 1.0)
    try:
        sol = _descend(sprob, u0 / lam, cfg, tol / gscale, setting)
    except MaxIterationsExceeded as exc:
        best = None if exc.best is None else _unscale(prob, exc.best, lam, tol)
        raise MaxIterationsExceeded(str(exc), best=best) from None
    sol = _unscale(prob, sol, lam, tol)
    log.debug("%s solve: %d iterations, residual %.3e", setting.value, sol.iterations, sol.residual_norm)
    return sol


def _unscale(prob, sol, lam, tol):
    """Map a solution of the rescaled problem back to the original units."""
    if lam == 1.0:
        return sol
    E = prob.E
    u = lam * sol.field.values
    gscale = lam ** (E.p - 1.0)
    # certify in the original units; the rescaled tolerance and round-off floor carry over
    r = prob.residual(u)
    rnorm = float(np.max(np.abs(r))) if r.size else 0.0
    tol = max(tol, sol.tolerance * gscale, prob.roundoff_floor(u, r))
    return Solution(field=DiscreteField(E.mesh, u), energy=_breakdown(E, u), iterations=sol.iterations,
                    residual_norm=rnorm, setting=sol.setting, tolerance=tol,
                    history=tuple(lam ** E.p * h for h in sol.history))


def _all(n):
    return np.arange(n)


def solve_robin(spec, cfg=None, initial=None) -> Solution:
    """Minimize ``J_alpha`` over all P1 fields."""
    if not spec.alpha > 0:
        raise ValueError(f"solve_robin needs alpha > 0, got {spec.alpha}")
    E = DiscreteEnergy.from_spec(spec)
    return _run(_Problem(E, _all(E.n)), spec, cfg, initial, Setting.ROBIN)


def solve_dirichlet(spec, cfg=None, initial=None) -> Solution:
    """Minimize bulk minus source over fields vanishing at boundary vertices."""
    E = DiscreteEnergy.from_spec(spec, alpha=0.0)
    free = np.setdiff1d(_all(E.n), spec.mesh.boundary_vertices)
    return _run(_Problem(E, free), spec, cfg, initial, Setting.DIRICHLET)


def normalization_shift(mesh, u, q, max_iter=200):
    """Constant ``c`` with ``int_{dOmega} |u+c|^(q-2) (u+c) ds = 0``, by bisection."""
    rule = FacetRule(mesh)
    tr = rule.trace(np.asarray(u, dtype=float))

    def h(c):
        return rule.integrate(_signed_pow(tr + c, q))

    M = 1.0 + float(np.max(np.abs(tr)))
    lo, hi = -M, M
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        hm = h(mid)
        if hm == 0:
            return mid
        if hm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_neumann_normalized(spec, cfg=None, initial=None, tol=None) -> Solution:
    """Neumann minimizer with ``int_{dOmega} |u|^(q-2) u ds = 0``.

    Minimizes over mean-zero fields, then shifts by the normalizing
    constant. ``tol`` is the compatibility tolerance.
    """
    if classify_regime(spec.load, tol) is Regime.INCOMPATIBLE:
        raise IncompatibleSource(
            f"int f = {spec.load.total_mass:.6g} != 0: the Neumann problem has no solution")
    E = DiscreteEnergy.from_spec(spec, alpha=0.0)
    sol = _run(_Problem(E, _all(E.n), constraint=np.ones(E.n)), spec, cfg, initial,
               Setting.NEUMANN_NORMALIZED)
    u = sol.field.values + normalization_shift(spec.mesh, sol.field.values, spec.q)
    return Solution(field=DiscreteField(spec.mesh, u), energy=_breakdown(E, u),
                    iterations=sol.iterations, residual_norm=sol.residual_norm,
                    setting=sol.setting, tolerance=sol.tolerance, history=sol.history)


def solve_kf(spec, cfg=None, initial=None) -> Solution:
    """Minimize bulk minus source subject to ``int_{dOmega} v ds = 0``."""
    E = DiscreteEnergy.from_spec(spec, alpha=0.0)
    c = np.zeros(E.n)
    c[spec.mesh.boundary_vertices] = spec.mesh.boundary_lumped_weights
    return _run(_Problem(E, _all(E.n), constraint=c), spec, cfg, initial, Setting.KF_CONSTRAINED)


SOLVERS = {
    Setting.ROBIN: solve_robin,
    Setting.DIRICHLET: solve_dirichlet,
    Setting.NEUMANN_NORMALIZED: solve_neumann_normalized,
    Setting.KF_CONSTRAINED: solve_kf,
}
