"""Fixed quadrature rules on reference simplices.

Rules are returned in barycentric form: ``(lam, w)`` with ``lam`` of shape
``(npts, d + 1)`` and weights ``w`` summing to one, so that the integral over
a physical simplex of measure ``|T|`` is ``|T| * sum(w * f(x(lam)))``.
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_segment(npts):
    """Gauss-Legendre rule with ``npts`` points on the unit segment."""
    x, w = np.polynomial.legendre.leggauss(npts)
    t = 0.5 * (x + 1.0)
    lam = np.column_stack([1.0 - t, t])
    lam.setflags(write=False)
    w = 0.5 * w
    w.setflags(write=False)
    return lam, w


# Symmetric 6-point rule on the triangle, exact for total degree 4.
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2 = 0.091576213509771
_W2 = 1.0 / 3.0 - _W1


@lru_cache(maxsize=None)
def triangle_degree4():
    b1 = 1.0 - 2.0 * _A1
    b2 = 1.0 - 2.0 * _A2
    lam = np.array([
        [_A1, _A1, b1], [_A1, b1, _A1], [b1, _A1, _A1],
        [_A2, _A2, b2], [_A2, b2, _A2], [b2, _A2, _A2],
    ])
    w = np.array([_W1] * 3 + [_W2] * 3)
    lam.setflags(write=False)
    w.setflags(write=False)
    return lam, w


def cell_rule(dim):
    """Degree-4 rule on a cell of the given dimension."""
    if dim == 1:
        # 3 Gauss points integrate degree 5 exactly
        return gauss_segment(3)
    if dim == 2:
        return triangle_degree4()
    raise ValueError(f"unsupported dimension {dim}")


# Boundary rule for |u|^q along an edge; fixed so results are bit-reproducible.
FACET_GAUSS_POINTS = 6
