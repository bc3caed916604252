"""Regenerate the symmetric triangle quadrature tables in ``fehc/quadrature.py``.

Each rule is described by its orbit structure (S3 centroid, S21, S111) with
starting values taken from Dunavant (1985).  The moment equations are solved
by Newton's method in 40-digit arithmetic and the refined values are printed
in a form that can be pasted into the table.
"""

import itertools
import math

import mpmath as mp

mp.mp.dps = 40

# degree: (centroid weight or None, [(a, w) S21 ...], [(a, b, w) S111 ...])
STARTS = {
    1: (1.0, [], []),
    2: (None, [(0.666666666666667, 1 / 3)], []),
    4: (None, [(0.108103018168070, 0.223381589678011),
               (0.816847572980459, 0.109951743655322)], []),
    5: (0.225, [(0.059715871789770, 0.132394152788506),
                (0.797426985353087, 0.125939180544827)], []),
    6: (None, [(0.501426509658179, 0.116786275726379),
               (0.873821971016996, 0.050844906370207)],
        [(0.053145049844817, 0.310352451033784, 0.082851075618374)]),
    8: (0.144315607677787, [(0.081414823414554, 0.095091634267285),
                            (0.658861384496480, 0.103217370534718),
                            (0.898905543365938, 0.032458497623198)],
        [(0.008394777409958, 0.263112829634638, 0.027230314174435)]),
    9: (0.097135796282799, [(0.020634961602525, 0.031334700227139),
                            (0.125820817014127, 0.077827541004774),
                            (0.623592928761935, 0.079647738927210),
                            (0.910540973211095, 0.025577675658698)],
        [(0.036838412054736, 0.221962989160766, 0.043283539377289)]),
    10: (0.090817990382754, [(0.028844733232685, 0.036725957756467),
                             (0.781036849029926, 0.045321059435528)],
         [(0.141707219414880, 0.307939838764121, 0.072757916845420),
          (0.025003534762686, 0.246672560639903, 0.028327242531057),
          (0.009540815400299, 0.066803251012200, 0.009421666963733)]),
}


def expand(c0, s21, s111):
    pts, wts = [], []
    if c0 is not None:
        third = mp.mpf(1) / 3
        pts.append((third, third, third))
        wts.append(c0)
    for a, w in s21:
        b = (1 - a) / 2
        for p in {(a, b, b), (b, a, b), (b, b, a)}:
            pts.append(p)
            wts.append(w)
    for a, b, w in s111:
        c = 1 - a - b
        for p in itertools.permutations((a, b, c)):
            pts.append(p)
            wts.append(w)
    return pts, wts


def pack(c0, s21, s111):
    v = [] if c0 is None else [c0]
    for a, w in s21:
        v += [a, w]
    for a, b, w in s111:
        v += [a, b, w]
    return v


def unpack(v, shape):
    has_c0, n21, n111 = shape
    i = 0
    c0 = None
    if has_c0:
        c0 = v[0]
        i = 1
    s21 = []
    for _ in range(n21):
        s21.append((v[i], v[i + 1]))
        i += 2
    s111 = []
    for _ in range(n111):
        s111.append((v[i], v[i + 1], v[i + 2]))
        i += 3
    return c0, s21, s111


def residual(v, shape, degree):
    pts, wts = expand(*unpack(v, shape))
    res = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            exact = 2 * mp.factorial(i) * mp.factorial(j) / mp.factorial(i + j + 2)
            q = mp.fsum(w * p[0] ** i * p[1] ** j for p, w in zip(pts, wts))
            res.append(q - exact)
    return res


def refine(degree):
    c0, s21, s111 = STARTS[degree]
    shape = (c0 is not None, len(s21), len(s111))
    v = [mp.mpf(x) for x in pack(c0, s21, s111)]
    for _ in range(60):
        r = mp.matrix(residual(v, shape, degree))
        if mp.norm(r) < mp.mpf(10) ** (-35):
            break
        n = len(v)
        jac = mp.matrix(len(r), n)
        for k in range(n):
            dv = list(v)
            step = mp.mpf(10) ** (-20)
            dv[k] += step
            rk = residual(dv, shape, degree)
            for m in range(len(r)):
                jac[m, k] = (rk[m] - r[m]) / step
        # least-squares Newton step (system is overdetermined but consistent)
        jt = jac.T
        dx = mp.lu_solve(jt * jac, jt * r)
        v = [v[k] - dx[k] for k in range(n)]
    return unpack(v, shape), mp.norm(mp.matrix(residual(v, shape, degree)))


if __name__ == "__main__":
    for degree in STARTS:
        (c0, s21, s111), err = refine(degree)
        print(f"    {degree}: (  # residual {mp.nstr(err, 3)}")
        print(f"        {mp.nstr(c0, 20) if c0 is not None else None},")
        print("        [" + ", ".join(f"({mp.nstr(a, 20)}, {mp.nstr(w, 20)})" for a, w in s21) + "],")
        print("        [" + ", ".join(f"({mp.nstr(a, 20)}, {mp.nstr(b, 20)}, {mp.nstr(w, 20)})" for a, b, w in s111) + "],")
        print("    ),")
