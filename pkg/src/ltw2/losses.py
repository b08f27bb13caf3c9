"""Training losses between observed and predicted trajectory ensembles.

All losses average over the timestamps ``t_1..t_n`` (the shared initial
time is skipped) and return a :class:`LossReport` whose ``total`` is a Var
when the predicted states are.

* ``local_w2_loss``: squared W2 between the neighbourhood groups of every
  anchor trajectory, averaged over anchors and time.
* ``time_decoupled_w2_loss``: squared W2 between the full clouds.
* ``mmd_loss``: multi-bandwidth RBF maximum mean discrepancy.
* ``mse_loss``: index-paired mean squared error.
* ``mean_var_loss``: MSE plus the gap in total variance.
"""
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dynamics import ConfigError
from .kernels import group_plans
from .transport import w2sq, w2sq_1d


@dataclass
class NeighborhoodIndex:
    """Anchor groups ``G_j = {i : |x_i(0) - x_j(0)| <= delta}``.

    Identical groups are stored once: ``indptr``/``indices`` hold the unique
    groups in CSR form, ``anchor_group[j]`` maps anchor ``j`` to its unique
    group and ``multiplicity[g]`` counts the anchors sharing group ``g``.
    ``order`` is a nearest-neighbour tour over the unique groups, which lets
    each assignment solve warm-start from a similar predecessor.
    """

    delta: float
    groups: list
    indptr: np.ndarray
    indices: np.ndarray
    anchor_group: np.ndarray
    multiplicity: np.ndarray
    order: np.ndarray

    @property
    def n(self):
        return len(self.groups)

    @property
    def sizes(self):
        return np.array([len(g) for g in self.groups])


def build_neighborhoods(initial_states, delta):
    """Groups trajectories whose initial states lie within ``delta``."""
    x0 = np.asarray(initial_states, dtype=np.float64)
    if x0.ndim == 1:
        x0 = x0[:, None]
    n = x0.shape[0]
    if n < 1:
        raise ValueError("need at least one trajectory")
    delta = float(delta)
    if not delta >= 0:
        raise ConfigError("delta must be >= 0")
    if np.isinf(delta):
        member = np.ones((n, n), dtype=bool)
    else:
        diff = x0[:, None, :] - x0[None, :, :]
        member = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)) <= delta
    groups = [np.flatnonzero(row) for row in member]
    uniq, anchor_group, rep = {}, np.empty(n, dtype=np.int64), []
    for j, g in enumerate(groups):
        key = g.tobytes()
        if key not in uniq:
            uniq[key] = len(rep)
            rep.append(j)
        anchor_group[j] = uniq[key]
    members = [groups[j] for j in rep]
    indptr = np.concatenate([[0], np.cumsum([len(g) for g in members])]).astype(np.int64)
    indices = np.concatenate(members).astype(np.int64)
    mult = np.bincount(anchor_group, minlength=len(rep)).astype(np.int64)
    return NeighborhoodIndex(delta, groups, indptr, indices, anchor_group, mult,
                             _tour(x0[rep]))


def _tour(points):
    # Greedy nearest-neighbour ordering starting from the first point.
    m = points.shape[0]
    left = np.ones(m, dtype=bool)
    order = np.empty(m, dtype=np.int64)
    cur = 0
    for k in range(m):
        order[k] = cur
        left[cur] = False
        if k + 1 < m:
            d = np.sum((points - points[cur]) ** 2, axis=1)
            d[~left] = np.inf
            cur = int(np.argmin(d))
    return order


@dataclass
class LossReport:
    """Loss value with detached per-time and per-anchor diagnostics."""

    total: object
    per_time: np.ndarray
    per_anchor: np.ndarray

    @property
    def value(self):
        return float(ad.value_of(self.total))

    def to_dict(self):
        return {"loss": self.value, "per_time": self.per_time.tolist(),
                "per_anchor": self.per_anchor.tolist()}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _pair(obs, pred):
    a = np.asarray(obs.values(), dtype=np.float64)
    b = pred.values()
    if a.shape != b.shape:
        raise ValueError(f"observed {a.shape} and predicted {b.shape} shapes differ")
    go, gp = obs.grid, pred.grid
    if go.n_steps != gp.n_steps or not np.isclose(go.dt, gp.dt) or not np.isclose(go.t0, gp.t0):
        raise ValueError("observed and predicted grids differ")
    return a, b


def local_w2_loss(obs, pred, nbhd, canonical=False):
    """Local time-decoupled squared W2 loss.

    ``(1/(n_T N)) sum_i sum_j W2^2(obs[G_j](t_i), pred[G_j](t_i))``.

    Args:
        obs: Observed TrajectoryBatch.
        pred: Predicted TrajectoryBatch; states may be a Var.
        nbhd: NeighborhoodIndex built from the observed initial states.
        canonical: Resolve tied plans to the lexicographically smallest
            permutation (slower; the loss value and the gradient away from
            ties do not depend on it).

    Returns:
        LossReport. The gradient holds every plan fixed.
    """
    a, b = _pair(obs, pred)
    n, npts, d = a.shape
    if nbhd.n != n:
        raise ValueError("neighbourhood index size does not match the batch")
    n_t = npts - 1
    sizes = np.diff(nbhd.indptr)
    # weight of each stored (group, member) entry in the total
    w_group = nbhd.multiplicity / (n_t * n * sizes)
    w_entry = np.repeat(w_group, sizes)
    coef = np.bincount(nbhd.indices, weights=w_entry, minlength=n)
    target = np.zeros((n, npts, d))
    costs = np.empty((n_t, n))
    # column prices carry over between time steps as a warm start
    prices = None
    for i in range(1, npts):
        out_prices = np.zeros(n) if d > 1 else None
        g_cost, match = group_plans(a[:, i, :], b[:, i, :], nbhd.indptr, nbhd.indices,
                                    nbhd.order, canonical, True, 1e-12, prices, out_prices)
        prices = out_prices
        costs[i - 1] = g_cost[nbhd.anchor_group]
        obs_m = a[match, i, :]
        for k in range(d):
            target[:, i, k] = np.bincount(nbhd.indices, weights=w_entry * obs_m[:, k],
                                          minlength=n)
    total = np.sum(costs) / (n_t * n)

    def vjp(g):
        grad = coef[:, None, None] * b - target
        grad[:, 0, :] = 0.0
        return (2.0 * g * grad,)

    out = ad.record(np.asarray(total), [pred.states], vjp)
    return LossReport(out, costs.mean(axis=1), costs.mean(axis=0))


def time_decoupled_w2_loss(obs, pred):
    """Mean over time of squared W2 between the full observed and predicted clouds."""
    a, b = _pair(obs, pred)
    n, npts, d = a.shape
    n_t = npts - 1
    solve = w2sq_1d if d == 1 else w2sq
    per_time = np.empty(n_t)
    per_traj = np.zeros(n)
    terms = []
    for i in range(1, npts):
        plan = solve(a[:, i, :], b[:, i, :])
        per_time[i - 1] = plan.cost
        gaps = np.sum((a[:, i, :] - b[plan.perm, i, :]) ** 2, axis=1)
        per_traj[plan.perm] += gaps / n_t
        pred_i = ad.getitem(pred.states, (plan.perm, i))
        terms.append(ad.sum(ad.square(ad.sub(pred_i, a[:, i, :]))))
    total = ad.scale(ad.sum(ad.stack(terms)), 1.0 / (n * n_t))
    return LossReport(total, per_time, per_traj)


def median_bandwidth(obs):
    """Median pairwise distance of the observed cloud at the first step after t0."""
    x = np.asarray(obs.values(), dtype=np.float64)[:, 1, :]
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(x.shape[0], k=1)
    return float(np.median(dist[iu])) if iu[0].size else 1.0


def _rbf_sum(sq, bandwidths):
    out = 0.0
    for h in bandwidths:
        out = ad.add(out, ad.exp(ad.scale(sq, -1.0 / (2.0 * h * h))))
    return out


def _sqdist(x, y):
    n, m = ad.value_of(x).shape[0], ad.value_of(y).shape[0]
    diff = ad.sub(ad.reshape(x, (n, 1, -1)), ad.reshape(y, (1, m, -1)))
    return ad.sum(ad.square(diff), axis=2)


def mmd_loss(obs, pred, h0=None, multiplier=2.0, n_kernels=5):
    """Squared MMD (V-statistic) with kernel ``sum_k exp(-|x-y|^2 / (2 h_k^2))``.

    Args:
        obs, pred: TrajectoryBatches.
        h0: Base bandwidth; defaults to :func:`median_bandwidth` of ``obs``.
        multiplier: Ratio between consecutive bandwidths.
        n_kernels: Number of bandwidths ``h0 * multiplier**k``.
    """
    a, b = _pair(obs, pred)
    if h0 is None:
        h0 = median_bandwidth(obs)
    if not h0 > 0:
        raise ConfigError("MMD bandwidth h0 must be > 0")
    bws = [h0 * multiplier ** k for k in range(int(n_kernels))]
    n, npts, _ = a.shape
    n_t = npts - 1
    terms, per_time = [], np.empty(n_t)
    for i in range(1, npts):
        x = a[:, i, :]
        y = ad.getitem(pred.states, (slice(None), i))
        kxx = np.mean(_rbf_sum(_sqdist(x, x), bws))
        kxy = ad.mean(_rbf_sum(_sqdist(x, y), bws))
        kyy = ad.mean(_rbf_sum(_sqdist(y, y), bws))
        term = ad.add(ad.sub(kyy, ad.scale(kxy, 2.0)), kxx)
        per_time[i - 1] = float(ad.value_of(term))
        terms.append(term)
    total = ad.scale(ad.sum(ad.stack(terms)), 1.0 / n_t)
    return LossReport(total, per_time, np.full(n, np.nan))


def _sq_gaps(a, pred):
    # (N, n_T) squared distances between index-paired states, as a Var.
    gap = ad.sub(ad.getitem(pred.states, (slice(None), slice(1, None))), a[:, 1:, :])
    return ad.sum(ad.square(gap), axis=2)


def mse_loss(obs, pred):
    """Index-paired mean squared error over trajectories and time."""
    a, b = _pair(obs, pred)
    sq = _sq_gaps(a, pred)
    sqv = ad.value_of(sq)
    return LossReport(ad.mean(sq), sqv.mean(axis=0), sqv.mean(axis=1))


def mean_var_loss(obs, pred):
    """Mean over time of ``MSE(t_i) + |Var(obs(t_i)) - Var(pred(t_i))|``.

    ``Var`` is the total sum of squared deviations from the cloud mean.
    """
    a, b = _pair(obs, pred)
    n = a.shape[0]
    sq = _sq_gaps(a, pred)
    mse_t = ad.mean(sq, axis=0)
    pa = a[:, 1:, :]
    var_obs = np.sum((pa - pa.mean(axis=0)) ** 2, axis=(0, 2))
    pp = ad.getitem(pred.states, (slice(None), slice(1, None)))
    dev = ad.sub(pp, ad.scale(ad.sum(pp, axis=0), 1.0 / n))
    var_pred = ad.sum(ad.sum(ad.square(dev), axis=2), axis=0)
    per = ad.add(mse_t, ad.abs(ad.sub(var_pred, var_obs)))
    return LossReport(ad.mean(per), np.asarray(ad.value_of(per)),
                      np.asarray(ad.value_of(sq)).mean(axis=1))


LOSSES = {
    "local-w2": "local_w2",
    "w2": "time_decoupled_w2",
    "mmd": "mmd",
    "mse": "mse",
    "mean-var": "mean_var",
}


def evaluate_loss(kind, obs, pred, nbhd=None, h0=None, canonical=False):
    """Dispatches on a loss name (``local-w2``, ``w2``, ``mmd``, ``mse``, ``mean-var``)."""
    if kind == "local-w2":
        return local_w2_loss(obs, pred, nbhd, canonical)
    if kind == "w2":
        return time_decoupled_w2_loss(obs, pred)
    if kind == "mmd":
        return mmd_loss(obs, pred, h0)
    if kind == "mse":
        return mse_loss(obs, pred)
    if kind == "mean-var":
        return mean_var_loss(obs, pred)
    raise ConfigError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}")
