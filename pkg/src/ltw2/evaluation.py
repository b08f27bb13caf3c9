"""Post-training metrics.

* :func:`param_distribution_error`: squared W2 between reconstructed and true
  parameter clouds, scaled by the mean squared norm of the true samples.
* :func:`mean_var_errors`: per-coordinate moment errors.
* :func:`rate_bound_h`: empirical-measure convergence factor ``h(N, l)``.
* :func:`ensemble_summary`: per-time ensemble mean/std of two batches.
"""
import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .losses import _pair, time_decoupled_w2_loss
from .transport import w2sq, w2sq_1d

# exact assignment is cubic; multi-dimensional clouds are capped at this size
ASSIGNMENT_CAP = 2000


class EvaluationError(ValueError):
    """Invalid inputs to a metric."""


@dataclass
class MetricReport:
    """Distribution and moment errors of a reconstructed parameter cloud."""

    relative_error: float
    mean_abs_err: np.ndarray
    var_abs_err: np.ndarray
    w2sq_params: float
    n_samples: int

    def to_dict(self):
        return {"relative_error": self.relative_error,
                "mean_abs_err": np.asarray(self.mean_abs_err).tolist(),
                "var_abs_err": np.asarray(self.var_abs_err).tolist(),
                "w2sq_params": self.w2sq_params, "n_samples": self.n_samples}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _samples(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise EvaluationError(f"{name} must be (M, l), got shape {x.shape}")
    if x.shape[0] == 0:
        raise EvaluationError(f"{name} holds no samples")
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"{name} holds non-finite values")
    return x


def equalize(truth, recon, seed=0, cap=None):
    """Uniformly subsamples both clouds to a common size without replacement.

    The common size is ``min(len(truth), len(recon))``, further limited by
    ``cap`` when given. Clouds already at that size are left untouched.
    """
    m = min(truth.shape[0], recon.shape[0])
    if cap is not None:
        m = min(m, int(cap))
    rng = np.random.default_rng(seed)
    out = []
    for x in (truth, recon):
        if x.shape[0] > m:
            x = x[np.sort(rng.choice(x.shape[0], m, replace=False))]
        out.append(x)
    return out[0], out[1]


def param_distribution_error(truth, recon, seed=0, cap=ASSIGNMENT_CAP):
    """Relative squared W2 error between true and reconstructed parameters.

    Args:
        truth: ``(M, l)`` ground-truth samples.
        recon: ``(M', l)`` reconstructed samples.
        seed: Subsampling seed used when the counts differ or exceed ``cap``.
        cap: Largest cloud handed to the assignment solver when ``l > 1``;
            scalar clouds use the exact sorting path at any size.

    Returns:
        MetricReport.
    """
    truth = _samples(truth, "truth")
    recon = _samples(recon, "recon")
    if truth.shape[1] != recon.shape[1]:
        raise EvaluationError(f"parameter dimensions differ: {truth.shape[1]} vs {recon.shape[1]}")
    mean_err, var_err = mean_var_errors(truth, recon) if min(len(truth), len(recon)) > 1 else (
        np.abs(recon.mean(axis=0) - truth.mean(axis=0)), np.full(truth.shape[1], np.nan))
    a, b = equalize(truth, recon, seed, None if truth.shape[1] == 1 else cap)
    w2 = (w2sq_1d if a.shape[1] == 1 else w2sq)(a, b).cost
    denom = float(np.mean(np.sum(a * a, axis=1)))
    if denom == 0.0:
        raise EvaluationError("ground-truth samples are all zero")
    return MetricReport(w2 / denom, mean_err, var_err, float(w2), int(a.shape[0]))


def mean_var_errors(truth, recon):
    """``|E[recon] - E[truth]|`` and ``|Var[recon] - Var[truth]|`` per coordinate."""
    truth = _samples(truth, "truth")
    recon = _samples(recon, "recon")
    if truth.shape[0] < 2 or recon.shape[0] < 2:
        raise EvaluationError("variance needs at least two samples")
    return (np.abs(recon.mean(axis=0) - truth.mean(axis=0)),
            np.abs(recon.var(axis=0) - truth.var(axis=0)))


def rate_bound_h(n, l):
    """Convergence factor ``h(n, l)`` of the empirical measure (natural log).

    ``2 n^{-1/2} (log(1 + n) + 1)`` for ``l <= 4`` and ``2 n^{-2/l}`` above.
    """
    if n < 1 or l < 1:
        raise ValueError("n and l must be >= 1")
    if l <= 4:
        return 2.0 * (math.log1p(n) + 1.0) / math.sqrt(n)
    # dividing by the positive power keeps exact powers exact, e.g. h(32, 5)
    return 2.0 / n ** (2.0 / l)


@dataclass
class EnsembleSummary:
    """Per-time, per-dimension ensemble moments of two batches."""

    times: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    pred_mean: np.ndarray
    pred_std: np.ndarray
    w2: float

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dim", "obs_mean", "obs_std", "pred_mean", "pred_std"])
            for i, t in enumerate(self.times):
                for k in range(self.obs_mean.shape[1]):
                    w.writerow([f"{t:.17g}", k] + [f"{arr[i, k]:.17g}" for arr in
                               (self.obs_mean, self.obs_std, self.pred_mean, self.pred_std)])


def ensemble_summary(obs, pred):
    """Ensemble mean/std tables and the time-decoupled W2 loss of two batches."""
    a, b = _pair(obs, pred)
    w2 = time_decoupled_w2_loss(obs, type(pred)(b, pred.initial_states, pred.grid)).value
    return EnsembleSummary(obs.grid.times(), a.mean(axis=0), a.std(axis=0),
                           b.mean(axis=0), b.std(axis=0), float(w2))
