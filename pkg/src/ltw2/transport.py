"""Exact squared 2-Wasserstein distance between equal-size uniform clouds.

For two clouds of ``n`` points with uniform weights an optimal coupling is
a permutation, so W2^2 is a linear sum assignment over the squared
Euclidean cost matrix. Among equal-cost optimal permutations the
lexicographically smallest is returned.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import lsa


@dataclass
class TransportPlan:
    """Optimal matching ``a[i] -> b[perm[i]]`` and its mean squared cost."""

    perm: np.ndarray
    cost: float


def _clouds(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ValueError(f"cloud shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 1:
        raise ValueError("clouds must be nonempty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("clouds must be finite")
    return a, b


def cost_matrix(a, b):
    """Squared Euclidean distances ``C[i, j] = |a_i - b_j|^2``."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def w2sq(a, b):
    """Squared W2 between clouds ``a`` and ``b`` via optimal assignment.

    Args:
        a: ``(n, d)`` or ``(n,)`` points.
        b: Same shape as ``a``.

    Returns:
        TransportPlan with ``perm[i]`` the index in ``b`` matched to ``a[i]``.
    """
    a, b = _clouds(a, b)
    c = cost_matrix(a, b)
    perm, _, _ = lsa(c)
    n = a.shape[0]
    return TransportPlan(perm, float(c[np.arange(n), perm].sum() / n))


def w2sq_1d(a, b):
    """Squared W2 for scalar clouds by matching sorted ranks."""
    a, b = _clouds(a, b)
    if a.shape[1] != 1:
        raise ValueError("w2sq_1d needs one-dimensional clouds")
    ia = np.argsort(a[:, 0], kind="stable")
    ib = np.argsort(b[:, 0], kind="stable")
    perm = np.empty_like(ia)
    perm[ia] = ib
    gap = a[:, 0] - b[perm, 0]
    return TransportPlan(perm, float(np.dot(gap, gap) / a.shape[0]))


def w2sq_grad(a, b):
    """Squared W2 as a differentiable function of ``b`` with the plan frozen.

    Args:
        a: Fixed ``(n, d)`` cloud.
        b: ``(n, d)`` Var (or array).

    Returns:
        Scalar Var ``(1/n) sum_i |a_i - b_perm(i)|^2``; its gradient with
        respect to ``b_j`` is ``(2/n)(b_j - a_{perm^-1(j)})``.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    bv = ad.value_of(b)
    if a_arr.ndim == 1:
        a_arr = a_arr[:, None]
    if bv.ndim == 1:
        b = ad.reshape(b, (-1, 1))
        bv = bv[:, None]
    plan = w2sq(a_arr, bv)
    inv = np.empty_like(plan.perm)
    inv[plan.perm] = np.arange(len(inv))
    gap = ad.sub(b, a_arr[inv])
    return ad.scale(ad.sum(ad.square(gap)), 1.0 / a_arr.shape[0])
