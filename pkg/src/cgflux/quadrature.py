"""Quadrature rules on the reference triangle and the unit segment.

Triangle rules are symmetric Dunavant-type rules with positive weights on
the reference triangle with vertices (0,0), (1,0), (0,1); weights sum to
the triangle area 1/2.  Segment rules are Gauss-Legendre on [0, 1] with
weights summing to 1.
"""
import numpy as np

from .errors import UnsupportedDegreeError

MAX_TRIANGLE_DEGREE = 6
MAX_SEGMENT_DEGREE = 9


def _orbit1(a):
    # 3-point symmetric orbit (a, a), (1-2a, a), (a, 1-2a)
    return np.array([[a, a], [1.0 - 2.0 * a, a], [a, 1.0 - 2.0 * a]])


def _orbit2(a, b):
    # 6-point orbit of (a, b) under coordinate permutations
    c = 1.0 - a - b
    return np.array([[a, b], [b, a], [a, c], [c, a], [b, c], [c, b]])


def _build_triangle_rules():
    rules = {}
    rules[1] = (np.array([[1 / 3, 1 / 3]]), np.array([1.0]))
    rules[2] = (_orbit1(1 / 6), np.full(3, 1 / 3))
    # degree 4, 6 points (used for degree-3 requests as well: the classical
    # 4-point degree-3 rule has a negative weight)
    a1, a2 = 0.445948490915965, 0.091576213509771
    w1, w2 = 0.223381589678011, 0.109951743655322
    rules[4] = (np.vstack([_orbit1(a1), _orbit1(a2)]),
                np.concatenate([np.full(3, w1), np.full(3, w2)]))
    rules[3] = rules[4]
    # degree 5, 7 points
    b1, b2 = 0.470142064105115, 0.101286507323456
    v1, v2 = 0.132394152788506, 0.125939180544827
    rules[5] = (np.vstack([np.array([[1 / 3, 1 / 3]]), _orbit1(b1), _orbit1(b2)]),
                np.concatenate([[0.225], np.full(3, v1), np.full(3, v2)]))
    # degree 6, 12 points
    c1, c2 = 0.249286745170910, 0.063089014491502
    u1, u2 = 0.116786275726379, 0.050844906370207
    cab = (0.310352451033785, 0.053145049844816)
    u3 = 0.082851075618374
    rules[6] = (np.vstack([_orbit1(c1), _orbit1(c2), _orbit2(*cab)]),
                np.concatenate([np.full(3, u1), np.full(3, u2), np.full(6, u3)]))
    # normalize all weights to sum to the reference-triangle area
    return {d: (p, 0.5 * w / w.sum()) for d, (p, w) in rules.items()}


_TRIANGLE_RULES = _build_triangle_rules()


def triangle_rule(degree):
    """Points (m, 2) and weights (m,) exact for polynomials up to `degree`."""
    if not 1 <= degree <= MAX_TRIANGLE_DEGREE:
        raise UnsupportedDegreeError(f"triangle quadrature degree {degree} not supported")
    return _TRIANGLE_RULES[degree]


def segment_rule(degree):
    """Gauss points (m,) and weights (m,) on [0, 1], exact up to `degree`."""
    if not 0 <= degree <= MAX_SEGMENT_DEGREE:
        raise UnsupportedDegreeError(f"segment quadrature degree {degree} not supported")
    npts = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature(domain, degree):
    """Uniform entry point: domain is 'triangle' or 'segment'."""
    if domain == "triangle":
        return triangle_rule(degree)
    if domain == "segment":
        return segment_rule(degree)
    raise UnsupportedDegreeError(f"unknown quadrature domain {domain!r}")
