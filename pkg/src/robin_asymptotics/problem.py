"""Problem instances ``(mesh, p, q, alpha, f)`` and assembly of the load vector."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .exceptions import SourceError
from .mesh import Mesh
from .quadrature import cell_rule

MAX_POLY_DEGREE = 3


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, x):
        return np.full(np.asarray(x).shape[0], float(self.value))

    def describe(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class Polynomial:
    """Polynomial source of total degree at most 3.

    In 1D ``coefficients[i]`` multiplies ``x**i``; in 2D
    ``coefficients[i][j]`` multiplies ``x**i * y**j``.
    """

    coefficients: tuple

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim not in (1, 2) or c.size == 0:
            raise SourceError("polynomial coefficients must be a non-empty 1D or 2D array")
        if not np.all(np.isfinite(c)):
            raise SourceError("polynomial coefficients must be finite")
        i, j = np.indices(c.shape) if c.ndim == 2 else (np.arange(c.size), 0)
        if np.any((c != 0) & (i + j > MAX_POLY_DEGREE)):
            raise SourceError(f"polynomial degree exceeds {MAX_POLY_DEGREE}")
        object.__setattr__(self, "coefficients", _as_tuple(c))

    @property
    def dimension(self):
        return np.ndim(self.coefficients)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.coefficients)
        if c.ndim == 1:
            return np.polynomial.polynomial.polyval(x[:, 0], c)
        if x.shape[1] != 2:
            raise SourceError("2D polynomial source on a 1D mesh")
        return np.polynomial.polynomial.polyval2d(x[:, 0], x[:, 1], c)

    def describe(self):
        return {"kind": "polynomial", "coefficients": np.asarray(self.coefficients).tolist()}


@dataclass(frozen=True)
class Nodal:
    """Source given by its values at the mesh vertices (P1 interpolant)."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise SourceError("nodal source values must be finite")
        object.__setattr__(self, "values", tuple(v.tolist()))

    def describe(self):
        return {"kind": "nodal", "values": list(self.values)}


def _as_tuple(a):
    return tuple(_as_tuple(r) for r in a) if a.ndim > 1 else tuple(float(v) for v in a)


@dataclass(frozen=True)
class LoadVector:
    values: np.ndarray       # F_i = int f phi_i
    total_mass: float        # int f
    domain_measure: float
    source_sup: float        # max |f| over vertices and quadrature points

    @property
    def default_tolerance(self):
        return 1e-10 * self.domain_measure * self.source_sup


class Regime(enum.Enum):
    COMPATIBLE = "compatible"
    INCOMPATIBLE = "incompatible"


def assemble_source(mesh: Mesh, source) -> LoadVector:
    """Load vector ``F_i = int_Omega f phi_i dx`` via a degree-4 cell rule.

    The rule is exact for polynomial sources of degree <= 3 and for nodal
    sources (P1 times P1).
    """
    lam, w = cell_rule(mesh.dimension)
    xc = mesh.vertices[mesh.cells]                          # (M, d+1, d)
    if isinstance(source, Nodal):
        vals = np.asarray(source.values)
        if vals.size != mesh.n_vertices:
            raise SourceError(f"nodal source has {vals.size} values, mesh has {mesh.n_vertices} vertices")
        fq = vals[mesh.cells] @ lam.T                        # (M, nq)
        sup = float(np.max(np.abs(vals))) if vals.size else 0.0
    elif isinstance(source, (Constant, Polynomial)):
        if isinstance(source, Polynomial) and source.dimension != mesh.dimension:
            raise SourceError(f"{source.dimension}D polynomial on a {mesh.dimension}D mesh")
        xq = np.einsum("qk,mkd->mqd", lam, xc)
        fq = source(xq.reshape(-1, mesh.dimension)).reshape(xq.shape[:2])
        sup = max(float(np.max(np.abs(fq))), float(np.max(np.abs(source(mesh.vertices)))))
    else:
        raise SourceError(f"unknown source term {source!r}")

    local = mesh.cell_measures[:, None] * ((fq * w) @ lam)    # (M, d+1)
    F = np.bincount(mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    F.setflags(write=False)
    return LoadVector(values=F, total_mass=float(np.sum(F)),
                      domain_measure=mesh.volume, source_sup=sup)


def classify_regime(load: LoadVector, tol=None) -> Regime:
    """Compatible iff ``|int f| <= tol``; ``tol`` defaults to 1e-10 |Omega| max|f|."""
    if tol is None:
        tol = load.default_tolerance
    elif not tol > 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    return Regime.COMPATIBLE if abs(load.total_mass) <= tol else Regime.INCOMPATIBLE


@dataclass(frozen=True)
class ProblemSpec:
    mesh: Mesh
    p: float
    q: float
    alpha: float
    source: object = field(default_factory=lambda: Constant(1.0))

    def __post_init__(self):
        for name in ("p", "q", "alpha"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.q > 1:
            raise ValueError(f"q must exceed 1, got {self.q}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha} (negative alpha gives E = -inf)")

    @cached_property
    def load(self):
        return assemble_source(self.mesh, self.source)

    @property
    def gamma(self):
        return 1.0 / (self.q - 1.0)

    def with_alpha(self, alpha):
        new = replace(self, alpha=float(alpha))
        # the load does not depend on alpha: assemble once and share
        new.__dict__["load"] = self.load
        return new

    def with_mesh(self, mesh):
        src = self.source
        if isinstance(src, Nodal):
            raise ValueError("cannot transfer a nodal source to another mesh")
        return replace(self, mesh=mesh)

    def fingerprint(self):
        h = hashlib.sha256()
        m = self.mesh
        for a in (m.vertices, m.cells, m.boundary_facets):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.p, self.q, self.source.describe())).encode())
        return h.hexdigest()[:16]
