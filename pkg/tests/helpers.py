"""Shared numerical helpers for the test suite."""
import itertools

import numpy as np

from ltw2 import autodiff as ad

# acceptance outcome lines, echoed in the terminal summary by conftest
CRITERIA = []


def grad_of(fn, *arrays):
    """Reverse-mode gradients of scalar ``fn(*vars)`` at ``arrays``."""
    tape = ad.Tape()
    xs = [tape.leaf(a) for a in arrays]
    return ad.backward(fn(*xs))


def fd_grad(fn, *arrays, h=1e-6):
    """Central finite differences of scalar ``fn(*arrays)``."""
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            plus = [np.array(x, dtype=np.float64) for x in arrays]
            minus = [np.array(x, dtype=np.float64) for x in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (float(fn(*plus)) - float(fn(*minus))) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


def brute_w2sq(a, b):
    """Minimum mean squared matching cost over all permutations."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64).T).T
    b = np.atleast_2d(np.asarray(b, dtype=np.float64).T).T
    n = len(a)
    best = np.inf
    for p in itertools.permutations(range(n)):
        c = float(np.sum((a - b[list(p)]) ** 2))
        best = min(best, c)
    return best / n


def brute_lexmin_perm(cost):
    """Lexicographically smallest permutation attaining the minimum cost."""
    n = cost.shape[0]
    best, arg = np.inf, None
    for p in itertools.permutations(range(n)):  # generated in lexicographic order
        c = float(cost[np.arange(n), list(p)].sum())
        if c < best - 1e-12 * max(1.0, abs(best) if np.isfinite(best) else 1.0):
            best, arg = c, p
    return np.array(arg)
