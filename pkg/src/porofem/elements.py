"""Lagrange P1/P2 reference triangles, quadrature rules and affine maps.

The reference triangle has vertices (0, 0), (1, 0), (0, 1).  P2 node
ordering is: the three vertices, then the midpoints of the edges opposite
vertices 0, 1 and 2, i.e. edges (1, 2), (2, 0), (0, 1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh, MeshError


class ElementKind(enum.Enum):
    P1 = 1
    P2 = 2


REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
P2_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.0, 0.5], [0.5, 0.0]])

# barycentric gradients in reference coordinates
_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_PAIRS = ((1, 2), (2, 0), (0, 1))


@dataclass(frozen=True)
class ReferenceElement:
    kind: ElementKind

    @property
    def degree(self) -> int:
        return self.kind.value

    @property
    def num_nodes(self) -> int:
        return 3 if self.kind is ElementKind.P1 else 6

    @property
    def nodes(self) -> np.ndarray:
        return REF_VERTICES if self.kind is ElementKind.P1 else P2_NODES

    def values(self, pts) -> np.ndarray:
        """Shape values, array (npts, nnodes)."""
        return shape_eval(self, pts)[0]

    def gradients(self, pts) -> np.ndarray:
        """Reference gradients, array (npts, nnodes, 2)."""
        return shape_eval(self, pts)[1]


P1 = ReferenceElement(ElementKind.P1)
P2 = ReferenceElement(ElementKind.P2)


def shape_eval(element: ReferenceElement, pts):
    """Values (npts, n) and reference gradients (npts, n, 2) at reference points.

    A single point of shape (2,) yields arrays without the leading axis.
    """
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    lam = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    npts = len(pts)
    if element.kind is ElementKind.P1:
        vals = lam
        grads = np.broadcast_to(_DLAM, (npts, 3, 2)).copy()
    else:
        vals = np.empty((npts, 6))
        grads = np.empty((npts, 6, 2))
        for i in range(3):
            vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * _DLAM[i]
        for k, (i, j) in enumerate(_EDGE_PAIRS):
            vals[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
            grads[:, 3 + k] = 4.0 * (lam[:, j, None] * _DLAM[i] + lam[:, i, None] * _DLAM[j])
    if single:
        return vals[0], grads[0]
    return vals, grads


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # reference coordinates (npts, 2)
    weights: np.ndarray  # sum to 1/2
    degree: int


def _orbit3(a, w):
    b = (1.0 - a) / 2.0
    bary = [(a, b, b), (b, a, b), (b, b, a)]
    return bary, [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    bary = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return bary, [w] * 6


def _rule(orbits, degree) -> QuadratureRule:
    bary, weights = [], []
    for b, w in orbits:
        bary += b
        weights += w
    bary = np.array(bary)
    # reference coordinates are the barycentrics of vertices 1 and 2
    pts = bary[:, 1:3].copy()
    w = 0.5 * np.array(weights)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Positive symmetric (Strang-Fix / Dunavant) rule exact to at least ``degree``."""
    if degree == 1:
        return _rule([([(1 / 3, 1 / 3, 1 / 3)], [1.0])], 1)
    if degree == 2:
        return _rule([_orbit3(2 / 3, 1 / 3)], 2)
    if degree in (3, 4):
        return _rule(
            [
                _orbit3(0.108103018168070, 0.223381589678011),
                _orbit3(0.816847572980459, 0.109951743655322),
            ],
            4,
        )
    if degree == 5:
        return _rule(
            [
                ([(1 / 3, 1 / 3, 1 / 3)], [0.225]),
                _orbit3(0.059715871789770, 0.132394152788506),
                _orbit3(0.797426985353087, 0.125939180544827),
            ],
            5,
        )
    if degree == 6:
        return _rule(
            [
                _orbit3(0.501426509658179, 0.116786275726379),
                _orbit3(0.873821971016996, 0.050844906370207),
                _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374),
            ],
            6,
        )
    raise ValueError(f"unsupported quadrature degree {degree!r}; expected 1..6")


def gauss_line(npts: int = 3):
    """Gauss-Legendre points on [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class AffineMap:
    """x = jac @ xhat + origin, vectorized over triangles when arrays are stacked."""

    jac: np.ndarray
    det: np.ndarray
    inv_t: np.ndarray
    origin: np.ndarray

    def __call__(self, ref_pts) -> np.ndarray:
        ref_pts = np.asarray(ref_pts, dtype=float)
        return np.einsum("...ij,qj->...qi", self.jac, ref_pts) + self.origin[..., None, :]


def affine_map(mesh: Mesh, tri=None) -> AffineMap:
    """Affine map of one triangle (``tri`` an int) or of all triangles (``tri=None``)."""
    p = mesh.vertices[mesh.triangles if tri is None else mesh.triangles[tri]]
    jac = np.stack([p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :]], axis=-1)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    if np.any(det <= 0):
        raise MeshError("degenerate or clockwise triangle")
    inv_t = np.empty_like(jac)
    inv_t[..., 0, 0] = jac[..., 1, 1]
    inv_t[..., 0, 1] = -jac[..., 1, 0]
    inv_t[..., 1, 0] = -jac[..., 0, 1]
    inv_t[..., 1, 1] = jac[..., 0, 0]
    inv_t /= det[..., None, None]
    return AffineMap(jac, det, inv_t, p[..., 0, :])
