"""Simplicial meshes of intervals and rectangles with explicit boundary facets."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np

from .exceptions import MeshError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 mesh of a domain in 1D or 2D.

    ``boundary_facets`` are vertex-index tuples (one index in 1D, an edge in
    2D); in 2D each edge is ordered so that the boundary is traversed
    counter-clockwise, and ``facet_normals`` holds the outward unit normal.
    In 1D the facet measure is the counting measure, so each endpoint
    carries weight one.
    """

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    facet_normals: np.ndarray
    facet_measures: np.ndarray
    cell_measures: np.ndarray
    # generator parameters, e.g. ("interval", a, b, n); None for imported meshes
    family: tuple | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (self.dimension == other.dimension
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("vertices", "cells", "boundary_facets")))

    __hash__ = object.__hash__

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def volume(self):
        return float(np.sum(self.cell_measures))

    @property
    def boundary_measure(self):
        return float(np.sum(self.facet_measures))

    @cached_property
    def boundary_vertices(self):
        return _frozen(np.unique(self.boundary_facets), np.int64)

    @cached_property
    def boundary_lumped_weights(self):
        """Lumped boundary mass ``w_i = int_{dOmega} phi_i ds`` per boundary vertex.

        Ordered like :attr:`boundary_vertices`. P1 traces are integrated
        exactly by these weights.
        """
        w = np.zeros(self.n_vertices)
        share = self.facet_measures / self.dimension
        for k in range(self.dimension):
            np.add.at(w, self.boundary_facets[:, k], share)
        return _frozen(w[self.boundary_vertices], float)

    @cached_property
    def grad_basis(self):
        """Gradients of the barycentric hat functions, shape ``(cells, d+1, d)``."""
        x = self.vertices[self.cells]                       # (M, d+1, d)
        jac = (x[:, 1:, :] - x[:, :1, :]).transpose(0, 2, 1)  # (M, d, d)
        inv = np.linalg.inv(jac)                            # rows: grad lambda_1..d
        g = np.empty((self.n_cells, self.dimension + 1, self.dimension))
        g[:, 1:, :] = inv
        g[:, 0, :] = -inv.sum(axis=1)
        g.setflags(write=False)
        return g

    @cached_property
    def cell_diameters(self):
        x = self.vertices[self.cells]
        d = np.zeros(self.n_cells)
        for i, j in combinations(range(self.dimension + 1), 2):
            d = np.maximum(d, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return _frozen(d, float)

    @property
    def max_cell_diameter(self):
        return float(self.cell_diameters.max())

    def export(self, path):
        Path(path).write_text(format_mesh(self))


def _signed_measures(vertices, cells, dim):
    x = vertices[cells]
    if dim == 1:
        return x[:, 1, 0] - x[:, 0, 0]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def mesh_from_arrays(vertices, cells, boundary, family=None):
    """Validate raw arrays and build a :class:`Mesh`.

    Raises :class:`MeshError` for inverted or degenerate cells, boundary
    facets that are not exterior facets of exactly one cell, and boundary
    lists that miss an exterior facet.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim == 1:
        vertices = vertices[:, None]
    dim = vertices.shape[1]
    if dim not in (1, 2):
        raise MeshError(f"unsupported dimension {dim}")
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, dim + 1)
    boundary = np.asarray(boundary, dtype=np.int64).reshape(-1, dim)
    nv = vertices.shape[0]
    if cells.size == 0:
        raise MeshError("mesh has no cells")
    if cells.min() < 0 or cells.max() >= nv or (boundary.size and (boundary.min() < 0 or boundary.max() >= nv)):
        raise MeshError("vertex index out of range")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinate")

    measures = _signed_measures(vertices, cells, dim)
    bad = np.flatnonzero(~(measures > 0))
    if bad.size:
        raise MeshError(f"inverted or degenerate cell {int(bad[0])} (signed measure {measures[bad[0]]:.3g})")

    # facet -> owning cells
    owners = {}
    for c, cell in enumerate(cells):
        for face in combinations(cell.tolist(), dim):
            owners.setdefault(tuple(sorted(face)), []).append(c)
    exterior = {f for f, cs in owners.items() if len(cs) == 1}
    seen = Counter(tuple(sorted(f)) for f in boundary.tolist())
    for f, count in seen.items():
        if count > 1:
            raise MeshError(f"boundary facet {f} listed {count} times")
        if f not in owners:
            raise MeshError(f"boundary facet {f} is not a facet of any cell")
        if f not in exterior:
            raise MeshError(f"boundary facet {f} is shared by {len(owners[f])} cells")
    missing = exterior - set(seen)
    if missing:
        raise MeshError(f"boundary list omits exterior facet {sorted(missing)[0]}")

    oriented = np.empty_like(boundary)
    normals = np.empty((boundary.shape[0], dim))
    fmeas = np.empty(boundary.shape[0])
    for k, f in enumerate(boundary.tolist()):
        cell = cells[owners[tuple(sorted(f))][0]]
        opposite = vertices[[v for v in cell.tolist() if v not in f][0]]
        if dim == 1:
            s = np.sign(vertices[f[0], 0] - opposite[0])
            oriented[k] = f
            normals[k] = s
            fmeas[k] = 1.0
        else:
            a, b = vertices[f[0]], vertices[f[1]]
            t = b - a
            n = np.array([t[1], -t[0]])
            if np.dot(n, a - opposite) < 0:
                f = f[::-1]
                n = -n
            length = float(np.hypot(t[0], t[1]))
            oriented[k] = f
            normals[k] = n / length
            fmeas[k] = length

    return Mesh(
        dimension=dim,
        vertices=_frozen(vertices, float),
        cells=_frozen(cells, np.int64),
        boundary_facets=_frozen(oriented, np.int64),
        facet_normals=_frozen(normals, float),
        facet_measures=_frozen(fmeas, float),
        cell_measures=_frozen(measures, float),
        family=family,
    )


def build_interval_mesh(a, b, n):
    """Uniform mesh of ``[a, b]`` with ``n`` cells."""
    if not a < b:
        raise MeshError(f"interval needs a < b, got a={a}, b={b}")
    if int(n) != n or n < 1:
        raise MeshError(f"number of cells must be a positive integer, got {n}")
    n = int(n)
    x = np.linspace(a, b, n + 1)
    cells = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return mesh_from_arrays(x, cells, [[0], [n]], family=("interval", float(a), float(b), n))


def build_rectangle_mesh(lx, ly, nx, ny):
    """Structured triangulation of ``[0, lx] x [0, ly]``.

    Every grid square is cut along its lower-left to upper-right diagonal.
    """
    if not (lx > 0 and ly > 0):
        raise MeshError(f"rectangle sides must be positive, got {lx} x {ly}")
    for v in (nx, ny):
        if int(v) != v or v < 1:
            raise MeshError(f"subdivision counts must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)

    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])[::-1]
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])[::-1]
    boundary = np.vstack([bottom, right, top, left])
    return mesh_from_arrays(verts, cells, boundary,
                            family=("rectangle", float(lx), float(ly), nx, ny))


def refine_family(mesh, factor):
    """Rebuild a generated mesh with ``factor`` times as many subdivisions.

    ``factor`` may be a fraction such as 1/2 for coarsening; returns None
    for imported meshes or when the counts do not divide.
    """
    fam = mesh.family
    if fam is None:
        return None

    def scale(n):
        m = n * factor
        if abs(m - round(m)) > 1e-12 or round(m) < 1:
            return None
        return int(round(m))

    if fam[0] == "interval":
        n = scale(fam[3])
        return None if n is None else build_interval_mesh(fam[1], fam[2], n)
    nx, ny = scale(fam[3]), scale(fam[4])
    if nx is None or ny is None:
        return None
    return build_rectangle_mesh(fam[1], fam[2], nx, ny)


def format_mesh(mesh):
    lines = [f"dim {mesh.dimension}", f"vertices {mesh.n_vertices}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.cells]
    lines.append(f"boundary {mesh.boundary_facets.shape[0]}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.boundary_facets]
    return "\n".join(lines) + "\n"


class _LineReader:
    def __init__(self, text, source):
        self.lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
        self.lines = [(i, ln) for i, ln in self.lines if ln and not ln.startswith("#")]
        self.pos = 0
        self.source = source

    def error(self, msg, lineno=None):
        if lineno is None:
            lineno = self.lines[self.pos - 1][0] if self.pos else 1
        return MeshError(f"{self.source}:{lineno}: {msg}")

    def next(self):
        if self.pos >= len(self.lines):
            raise self.error("unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1]

    def header(self, key):
        lineno, ln = self.next()
        parts = ln.split()
        if len(parts) != 2 or parts[0] != key:
            raise self.error(f"expected '{key} <count>', got {ln!r}", lineno)
        try:
            return int(parts[1])
        except ValueError:
            raise self.error(f"bad count {parts[1]!r}", lineno) from None

    def rows(self, count, width, conv):
        out = []
        for _ in range(count):
            lineno, ln = self.next()
            parts = ln.split()
            if len(parts) != width:
                raise self.error(f"expected {width} entries, got {len(parts)}", lineno)
            try:
                out.append([conv(p) for p in parts])
            except ValueError:
                raise self.error(f"cannot parse {ln!r}", lineno) from None
        return out


def parse_mesh_text(text, source="<mesh>", extra_sections=()):
    """Parse the mesh text format; returns ``(mesh, extras)``.

    ``extras`` maps each name in ``extra_sections`` (read as ``name N``
    followed by N scalar lines) to a float array.
    """
    r = _LineReader(text, source)
    dim = r.header("dim")
    if dim not in (1, 2):
        raise r.error(f"unsupported dimension {dim}")
    nv = r.header("vertices")
    verts = r.rows(nv, dim, float)
    nc = r.header("cells")
    cells = r.rows(nc, dim + 1, int)
    nb = r.header("boundary")
    bnd = r.rows(nb, dim, int)
    extras = {}
    for name in extra_sections:
        count = r.header(name)
        extras[name] = np.array([row[0] for row in r.rows(count, 1, float)])
    if r.pos != len(r.lines):
        raise r.error("trailing content after last section", r.lines[r.pos][0])
    verts = np.array(verts, dtype=float).reshape(nv, dim)
    mesh = mesh_from_arrays(verts, np.array(cells, dtype=np.int64).reshape(nc, dim + 1),
                            np.array(bnd, dtype=np.int64).reshape(nb, dim))
    return mesh, extras


def import_mesh(path):
    path = Path(path)
    mesh, _ = parse_mesh_text(path.read_text(), source=str(path))
    return mesh
