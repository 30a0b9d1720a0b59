"""Numba kernels for dynamic-programming SRSF alignment.

The lattice is the full ``(M+1) x (M+1)`` grid of node pairs ``(i, j)``
meaning ``gamma(t_i) = t_j``.  A node is entered from ``(i - a, j - b)``
for coprime steps ``1 <= a, b <= max_step``, which bounds the slope of
the piecewise-linear warp to ``[1/max_step, max_step]``.  The cost of an edge is the
trapezoidal integral of ``(q1(t) - sqrt(slope) q2(gamma(t)))**2`` along the
segment, sampled at ``max(a, b)`` sub-intervals.
"""

from math import gcd

import numpy as np
from numba import njit


def make_stencil(max_step: int) -> np.ndarray:
    """Coprime steps ``(a, b)`` with ``1 <= a, b <= max_step``, diagonal first.

    Ties in the recursion resolve to the earliest entry.
    """
    if max_step < 1:
        raise ValueError("max_step must be >= 1")
    steps = [(1, 1)]
    for a in range(1, max_step + 1):
        for b in range(1, max_step + 1):
            if (a, b) != (1, 1) and gcd(a, b) == 1:
                steps.append((a, b))
    return np.array(steps, dtype=np.int64)


DEFAULT_MAX_STEP = 4


class Stencil:
    """A step set plus the fractional sample offsets each step needs."""

    def __init__(self, max_step: int = DEFAULT_MAX_STEP):
        self.max_step = max_step
        self.steps = make_stencil(max_step)
        m = self.steps.max(axis=1)
        self.row_start = np.concatenate([[0], np.cumsum(m + 1)[:-1]]).astype(np.int64)
        # sub-sample r of step (a, b) sits at index offsets (r a / m, r b / m)
        self.x_off = np.concatenate([np.arange(k + 1) * a / k for (a, _), k in zip(self.steps, m)])
        self.y_off = np.concatenate([np.arange(k + 1) * b / k for (_, b), k in zip(self.steps, m)])

    def table(self, q: np.ndarray, axis: int) -> np.ndarray:
        """``table[row, l]`` = ``q`` interpolated at index ``l + offset[row]``."""
        off = self.x_off if axis == 0 else self.y_off
        n = q.size
        idx = np.arange(n)
        pos = np.minimum(idx[None, :] + off[:, None], n - 1)
        return np.interp(pos, idx, q)


@njit(cache=True)
def _feasible_range(i, n, kmax):
    # j such that (i, j) is reachable from (0, 0) and can still reach (M, M)
    M = n - 1
    lo = max((i + kmax - 1) // kmax, M - kmax * (M - i))
    hi = min(kmax * i, M - (M - i + kmax - 1) // kmax)
    return lo, hi


@njit(cache=True, inline="always")
def _relax(Ek, Ei, Pi, c, l0, l1, b, w, s):
    # branchless select so the loop vectorizes
    for l in range(l0, l1):
        v = Ek[l] + c[l] * w
        e = Ei[l + b]
        better = v < e
        Ei[l + b] = v if better else e
        Pi[l + b] = s if better else Pi[l + b]


@njit(cache=True)
def _dp_uniform(q1tab, q2tab, h, n, steps, row_start, kmax):
    E = np.full((n, n), np.inf)
    P = np.full((n, n), -1, dtype=np.int64)
    E[0, 0] = 0.0
    c = np.empty(n)
    for i in range(1, n):
        Ei = E[i]
        Pi = P[i]
        jlo, jhi = _feasible_range(i, n, kmax)
        for s in range(steps.shape[0]):
            a = steps[s, 0]
            b = steps[s, 1]
            k = i - a
            if k < 0:
                continue
            m = a if a > b else b
            rs = np.sqrt(b / a)
            w = h * a / m
            l0 = max(jlo - b, 0)
            l1 = jhi - b + 1
            if l1 <= l0:
                continue
            R = row_start[s]
            x0 = q1tab[R, k]
            x1 = q1tab[R + 1, k]
            Q0 = q2tab[R]
            Q1 = q2tab[R + 1]
            # trapezoid over m sub-intervals, unrolled for the common sizes
            if m == 1:
                for l in range(l0, l1):
                    d0 = x0 - rs * Q0[l]
                    d1 = x1 - rs * Q1[l]
                    c[l] = 0.5 * (d0 * d0 + d1 * d1)
            elif m == 2:
                x2 = q1tab[R + 2, k]
                Q2 = q2tab[R + 2]
                for l in range(l0, l1):
                    d0 = x0 - rs * Q0[l]
                    d1 = x1 - rs * Q1[l]
                    d2 = x2 - rs * Q2[l]
                    c[l] = 0.5 * (d0 * d0 + d2 * d2) + d1 * d1
            elif m == 3:
                x2 = q1tab[R + 2, k]
                x3 = q1tab[R + 3, k]
                Q2 = q2tab[R + 2]
                Q3 = q2tab[R + 3]
                for l in range(l0, l1):
                    d0 = x0 - rs * Q0[l]
                    d1 = x1 - rs * Q1[l]
                    d2 = x2 - rs * Q2[l]
                    d3 = x3 - rs * Q3[l]
                    c[l] = 0.5 * (d0 * d0 + d3 * d3) + d1 * d1 + d2 * d2
            elif m == 4:
                x2 = q1tab[R + 2, k]
                x3 = q1tab[R + 3, k]
                x4 = q1tab[R + 4, k]
                Q2 = q2tab[R + 2]
                Q3 = q2tab[R + 3]
                Q4 = q2tab[R + 4]
                for l in range(l0, l1):
                    d0 = x0 - rs * Q0[l]
                    d1 = x1 - rs * Q1[l]
                    d2 = x2 - rs * Q2[l]
                    d3 = x3 - rs * Q3[l]
                    d4 = x4 - rs * Q4[l]
                    c[l] = 0.5 * (d0 * d0 + d4 * d4) + d1 * d1 + d2 * d2 + d3 * d3
            else:
                for l in range(l0, l1):
                    c[l] = 0.0
                for r in range(m + 1):
                    wr = 0.5 if (r == 0 or r == m) else 1.0
                    x = q1tab[R + r, k]
                    Qr = q2tab[R + r]
                    for l in range(l0, l1):
                        d = x - rs * Qr[l]
                        c[l] += wr * d * d
            _relax(E[k], Ei, Pi, c, l0, l1, b, w, s)
    return E, P


@njit(cache=True)
def _interp1(t, v, x):
    n = t.size
    if x <= t[0]:
        return v[0]
    if x >= t[n - 1]:
        return v[n - 1]
    k = np.searchsorted(t, x) - 1
    if k < 0:
        k = 0
    u = (x - t[k]) / (t[k + 1] - t[k])
    return v[k] + u * (v[k + 1] - v[k])


@njit(cache=True)
def _dp_general(t, q1, q2, steps):
    inf = np.inf
    n = t.size
    E = np.full((n, n), inf)
    P = np.full((n, n), -1, dtype=np.int64)
    E[0, 0] = 0.0
    for i in range(1, n):
        for j in range(1, n):
            best = inf
            bs = -1
            for s in range(steps.shape[0]):
                a = steps[s, 0]
                b = steps[s, 1]
                k = i - a
                l = j - b
                if k < 0 or l < 0 or E[k, l] == inf:
                    continue
                m = a if a > b else b
                x0 = t[k]
                dx = (t[i] - x0) / m
                slope = (t[j] - t[l]) / (t[i] - x0)
                rs = np.sqrt(slope)
                cost = 0.0
                for r in range(m + 1):
                    x = x0 + r * dx
                    y = t[l] + slope * (x - x0)
                    d = _interp1(t, q1, x) - rs * _interp1(t, q2, y)
                    wr = 0.5 if (r == 0 or r == m) else 1.0
                    cost += wr * d * d
                cost = E[k, l] + cost * dx
                if cost < best:
                    best = cost
                    bs = s
            E[i, j] = best
            P[i, j] = bs
    return E, P


@njit(cache=True)
def _traceback(P, steps):
    n = P.shape[0]
    xs = np.empty(n, dtype=np.int64)
    ys = np.empty(n, dtype=np.int64)
    i = n - 1
    j = n - 1
    cnt = 0
    xs[cnt] = i
    ys[cnt] = j
    cnt += 1
    while i > 0 or j > 0:
        s = P[i, j]
        i -= steps[s, 0]
        j -= steps[s, 1]
        xs[cnt] = i
        ys[cnt] = j
        cnt += 1
    return xs[:cnt][::-1].copy(), ys[:cnt][::-1].copy()


def dp_path_uniform(q1tab: np.ndarray, q2tab: np.ndarray, n: int, stencil: Stencil):
    """Optimal lattice path on a uniform unit grid; returns (x_idx, y_idx, cost)."""
    E, P = _dp_uniform(
        q1tab, q2tab, 1.0 / (n - 1), n, stencil.steps, stencil.row_start, stencil.max_step
    )
    xs, ys = _traceback(P, stencil.steps)
    return xs, ys, float(E[n - 1, n - 1])


def dp_path_general(t: np.ndarray, q1: np.ndarray, q2: np.ndarray, stencil: Stencil):
    E, P = _dp_general(t, q1, q2, stencil.steps)
    xs, ys = _traceback(P, stencil.steps)
    return xs, ys, float(E[t.size - 1, t.size - 1])
