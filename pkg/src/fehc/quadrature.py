"""Symmetric quadrature rules on the reference triangle and on line segments.

The triangle tables are fully symmetric rules with positive weights and all
points strictly inside the triangle.  Orbit data is stored to 20 digits; the
values were obtained by Newton refinement of the moment equations (see
``scripts/gen_triangle_rules.py``).  Degrees 3 and 7 have no positive interior
rule of this family, so the next higher rule is returned.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# degree: (centroid weight, [(a, w) for S21 orbits], [(a, b, w) for S111 orbits])
_ORBITS = {
    1: (1.0, [], []),
    2: (None, [(0.66666666666666666667, 0.33333333333333333333)], []),
    4: (
        None,
        [(0.10810301816807022736, 0.2233815896780114657),
         (0.81684757298045851308, 0.10995174365532186764)],
        [],
    ),
    5: (
        0.225,
        [(0.059715871789769820459, 0.13239415278850618074),
         (0.7974269853530873224, 0.1259391805448271526)],
        [],
    ),
    6: (
        None,
        [(0.50142650965817915742, 0.11678627572637936603),
         (0.87382197101699554332, 0.050844906370206816921)],
        [(0.053145049844816947353, 0.31035245103378440542, 0.082851075618373575194)],
    ),
    8: (
        0.14431560767778716825,
        [(0.081414823414553687942, 0.095091634267284624794),
         (0.65886138449647958676, 0.10321737053471825028),
         (0.89890554336593804908, 0.032458497623198080311)],
        [(0.0083947774099576053372, 0.26311282963463811342, 0.027230314174434994265)],
    ),
    9: (
        0.097135796282798833819,
        [(0.020634961602524744433, 0.031334700227139070537),
         (0.12582081701412672546, 0.077827541004774279317),
         (0.62359292876193453952, 0.079647738927210253033),
         (0.91054097321109458027, 0.025577675658698031262)],
        [(0.036838412054736283635, 0.22196298916076569568, 0.043283539377289377289)],
    ),
    10: (
        0.090817990382753580095,
        [(0.028844733232685245265, 0.036725957756466704717),
         (0.78103684902992589041, 0.045321059435527934783)],
        [(0.14170721941487995476, 0.30793983876412095017, 0.072757916845420108604),
         (0.025003534762686386074, 0.24667256063990269392, 0.028327242531057484837),
         (0.0095408154002994575802, 0.066803251012200265774, 0.0094216669637328234599)],
    ),
}

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature rule in barycentric coordinates.

    Weights sum to one; multiply by the element area when integrating.
    """

    degree_exact: int
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    def __len__(self) -> int:
        return len(self.weights)


def _expand(c0, s21, s111):
    pts, wts = [], []
    if c0 is not None:
        pts.append((1 / 3, 1 / 3, 1 / 3))
        wts.append(c0)
    for a, w in s21:
        b = (1.0 - a) / 2.0
        for p in ((a, b, b), (b, a, b), (b, b, a)):
            pts.append(p)
            wts.append(w)
    for a, b, w in s111:
        c = 1.0 - a - b
        for p in itertools.permutations((a, b, c)):
            pts.append(p)
            wts.append(w)
    pts = np.array(pts, dtype=float)
    # restore the exact partition of unity lost when rounding to doubles
    pts[:, 2] = 1.0 - pts[:, 0] - pts[:, 1]
    return pts, np.array(wts, dtype=float)


@lru_cache(maxsize=None)
def quadrature_rule(degree_exact: int) -> QuadratureRule:
    """Return a symmetric rule exact for polynomials up to ``degree_exact``."""
    degree_exact = int(degree_exact)
    if not 1 <= degree_exact <= MAX_DEGREE:
        raise ValueError(f"no triangle rule for degree {degree_exact} (supported: 1..{MAX_DEGREE})")
    d = degree_exact
    while d not in _ORBITS:
        d += 1
    pts, wts = _expand(*_ORBITS[d])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(d, pts, wts)


@lru_cache(maxsize=None)
def gauss_line(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]; returns (points, weights) with weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def reference_moment(i: int, j: int) -> float:
    """Exact mean of x**i * y**j over the reference triangle (0,0),(1,0),(0,1)."""
    from math import factorial

    return 2.0 * factorial(i) * factorial(j) / factorial(i + j + 2)
