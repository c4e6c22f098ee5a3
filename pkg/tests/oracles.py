"""Deliberately naive reference implementations used to check the library."""

import math
from itertools import combinations

import numpy as np
from scipy.integrate import quad


def naive_chamfer(Fx, Fy):
    Fx, Fy = np.atleast_2d(Fx), np.atleast_2d(Fy)

    def directed(A, B):
        total = 0.0
        for u in A:
            best = math.inf
            for v in B:
                diff = u - v
                best = min(best, float(np.dot(diff, diff)))
            total += best
        return total / len(A)

    return directed(Fx, Fy) + directed(Fy, Fx)


def quad_cdf(z):
    """Phi(z) by integrating the Gaussian density."""
    dens = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    if z >= 0:
        return 0.5 + quad(dens, 0.0, z, epsabs=1e-13, epsrel=1e-13)[0]
    return 0.5 - quad(dens, z, 0.0, epsabs=1e-13, epsrel=1e-13)[0]


def central_diff(f, theta, step=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (f(up) - f(dn)) / (2 * step)
    return g


def reference_greedy(frames, scores, lam, k):
    """Step-by-step greedy on plain dicts; no caches, no vectorisation."""
    chosen = []
    for _ in range(k):
        best_id, best_val = None, -math.inf
        for i in sorted(scores):
            if i in chosen:
                continue
            div = 0.0
            if chosen:
                div = sum(naive_chamfer(frames[i], frames[j]) for j in chosen) / len(chosen)
            val = scores[i] + lam * div
            if val > best_val:  # strict: sorted iteration keeps the smallest id on ties
                best_id, best_val = i, val
        chosen.append(best_id)
    return chosen


def enumerate_objective(frames, scores, lam, k):
    """Best subset value by a second, independent enumeration."""
    best = -math.inf
    ids = sorted(scores)
    for S in combinations(ids, k):
        diff = sum(scores[i] for i in S) / k
        div = 0.0
        if k >= 2:
            pairs = list(combinations(S, 2))
            div = sum(naive_chamfer(frames[a], frames[b]) for a, b in pairs) / len(pairs)
        best = max(best, diff + lam * div)
    return best


def objective(frames, scores, lam, S):
    S = list(S)
    diff = sum(scores[i] for i in S) / len(S)
    if len(S) < 2:
        return diff
    pairs = list(combinations(S, 2))
    return diff + lam * sum(naive_chamfer(frames[a], frames[b]) for a, b in pairs) / len(pairs)


def brute_gmad(defender, attacker, centers, tol, per_level):
    """All admissible pairs per level, sorted by (-gap, a, b)."""
    ids = sorted(defender)
    lo, hi = min(defender.values()), max(defender.values())
    norm = {i: (defender[i] - lo) / (hi - lo) for i in ids}
    out = []
    for level, c in enumerate(centers):
        adm = [i for i in ids if abs(norm[i] - c) <= tol]
        cands = []
        for a in adm:
            for b in adm:
                if a < b:
                    cands.append((-abs(attacker[a] - attacker[b]), a, b))
        cands.sort()
        for negap, a, b in cands[:per_level]:
            out.append((level, a, b, -negap))
    return out
