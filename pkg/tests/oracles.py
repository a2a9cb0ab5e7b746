"""Brute-force reference implementations used to check the vectorised metrics.

Everything here is written with plain loops over pixels so that it shares no
code path with the package under test.
"""

import math

import numpy as np
from scipy.optimize import linprog


def _cells(grid):
    h, w = len(grid), len(grid[0])
    return [(r, c) for r in range(h) for c in range(w)]


def kldiv(p, q, eps):
    total = 0.0
    for r, c in _cells(p):
        total += q[r][c] * math.log(eps + q[r][c] / (p[r][c] + eps))
    return total


def _mean_std(grid):
    vals = [grid[r][c] for r, c in _cells(grid)]
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    return mean, math.sqrt(var)


def cc(a, b):
    ma, sa = _mean_std(a)
    mb, sb = _mean_std(b)
    cov = 0.0
    cells = _cells(a)
    for r, c in cells:
        cov += (a[r][c] - ma) * (b[r][c] - mb)
    return cov / len(cells) / (sa * sb)


def nss(p, points):
    m, s = _mean_std(p)
    if s == 0:
        return 0.0
    return sum((p[y][x] - m) / s for x, y in points) / len(points)


def sim(p, q):
    return sum(min(p[r][c], q[r][c]) for r, c in _cells(p))


def _roc_area(pos, neg):
    thresholds = sorted(pos, reverse=True)
    xs, ys = [0.0], [0.0]
    for t in thresholds:
        ys.append(sum(1 for v in pos if v >= t) / len(pos))
        xs.append(sum(1 for v in neg if v >= t) / len(neg))
    xs.append(1.0)
    ys.append(1.0)
    area = 0.0
    for i in range(1, len(xs)):
        area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0
    return area


def auc_judd(p, points):
    fixated = set((y, x) for x, y in points)
    pos = [p[r][c] for r, c in _cells(p) if (r, c) in fixated]
    neg = [p[r][c] for r, c in _cells(p) if (r, c) not in fixated]
    return _roc_area(pos, neg)


def sauc(p, points, negatives):
    pos = [p[y][x] for y, x in sorted(set((y, x) for x, y in points))]
    neg = [p[y][x] for y, x in sorted(set((y, x) for x, y in negatives))]
    return _roc_area(pos, neg)


def info_gain(p, baseline, points, eps):
    total = 0.0
    for x, y in points:
        total += math.log2(p[y][x] + eps) - math.log2(baseline[y][x] + eps)
    return total / len(points)


def emd_lp(p, q):
    """Transportation LP over every source/target cell pair, solved by HiGHS dual simplex."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    h, w = p.shape
    n = h * w
    coords = [(i // w, i % w) for i in range(n)]
    cost = np.array([[math.hypot(a[0] - b[0], a[1] - b[1]) for b in coords] for a in coords]).ravel()
    a_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        a_eq[i, i * n : (i + 1) * n] = 1.0
        a_eq[n + i, i::n] = 1.0
    b_eq = np.concatenate([p.ravel(), q.ravel()])
    # the last target constraint is implied by the others; dropping it keeps
    # round-off in the two marginal sums from making the system infeasible
    res = linprog(cost, A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs-ds",
                  options={"presolve": False, "primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return res.fun
