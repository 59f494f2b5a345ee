"""Quadrature rules on the unit sphere S^2.

Weights are normalized so that they sum to the sphere area ``4 pi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule

from .errors import InvalidInputError

LEBEDEV_DEGREES = (
    3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35, 41, 47, 53,
    59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119, 125, 131,
)


@dataclass(frozen=True)
class SphereRule:
    """Nodes ``(K, 3)`` on the unit sphere with positive weights ``(K,)``."""

    nodes: np.ndarray
    weights: np.ndarray
    degree: int
    kind: str

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Integrate samples whose last axis runs over the nodes."""
        return values @ self.weights


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def lebedev(degree):
    """Lebedev-Laikov rule exact for spherical polynomials up to ``degree``."""
    if degree not in LEBEDEV_DEGREES:
        raise InvalidInputError(
            f"no Lebedev rule of degree {degree}; available: {LEBEDEV_DEGREES}")
    x, w = lebedev_rule(degree)
    return SphereRule(_freeze(x.T), _freeze(w * (4 * np.pi / w.sum())), degree, "lebedev")


@lru_cache(maxsize=None)
def product_rule(degree):
    """Gauss-Legendre in ``cos(theta)`` times the trapezoid rule in ``phi``.

    Exact for spherical polynomials up to ``degree``.
    """
    if degree < 1:
        raise InvalidInputError("degree must be positive")
    nt = (degree + 2) // 2
    nphi = degree + 1
    t, wt = np.polynomial.legendre.leggauss(nt)
    phi = (np.arange(nphi) + 0.5) * (2 * np.pi / nphi)
    st = np.sqrt(1 - t**2)
    nodes = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(t, np.ones(nphi))],
        axis=-1,
    ).reshape(-1, 3)
    weights = np.outer(wt, np.full(nphi, 2 * np.pi / nphi)).ravel()
    return SphereRule(_freeze(nodes), _freeze(weights), degree, "product")


def sphere_rule(degree, kind="lebedev"):
    if kind == "lebedev":
        return lebedev(degree)
    if kind == "product":
        return product_rule(degree)
    raise InvalidInputError(f"unknown quadrature kind {kind!r}")


def rule_at_least(degree):
    """Smallest Lebedev rule of degree >= ``degree``; product rule beyond 131."""
    for d in LEBEDEV_DEGREES:
        if d >= degree:
            return lebedev(d)
    return product_rule(degree)


@lru_cache(maxsize=None)
def folded_squares(degree, kind="lebedev"):
    """Fold a rule onto the positive octant for integrands even in each coordinate.

    Returns ``(squares, weights)`` where ``squares[k] = (x^2, y^2, z^2)`` of the
    distinct folded nodes. For any ``g``,
    ``sum_k weights[k] g(squares[k])`` equals the full rule applied to
    ``g(x^2, y^2, z^2)``.
    """
    rule = sphere_rule(degree, kind)
    sq = rule.nodes**2
    key = np.round(sq, 13)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    w = np.bincount(inverse, weights=rule.weights)
    # representative exact squares (first occurrence), renormalised to sum 1
    first = np.full(len(uniq), -1)
    first[inverse[::-1]] = np.arange(len(inverse))[::-1]
    squares = sq[first]
    squares = squares / squares.sum(axis=1, keepdims=True)
    return _freeze(squares), _freeze(w)
