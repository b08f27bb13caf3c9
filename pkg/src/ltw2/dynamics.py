"""Time grids, model specifications, integrators and trajectory batches.

Integrators work on a whole batch of trajectories at once: states are
``(N, d)`` arrays (or Vars when recording on a tape) and parameters are
``(N, l)``. Paths come back as ``(N, n_steps + 1, d)``.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class IntegrationDiverged(FloatingPointError):
    """A state became non-finite during integration.

    Attributes:
        step: Index of the step that produced the non-finite state.
        trajectories: Indices of the affected trajectories.
    """

    def __init__(self, step, trajectories=()):
        self.step = int(step)
        self.trajectories = tuple(int(i) for i in trajectories)
        super().__init__(f"non-finite state at step {self.step} "
                         f"(trajectories {list(self.trajectories)[:10]})")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = t0 + i*dt`` for ``i = 0..n_steps``."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")

    @classmethod
    def from_points(cls, t0, dt, n_points):
        """Grid with ``n_points`` timestamps (``n_points - 1`` steps)."""
        return cls(float(t0), float(dt), int(n_points) - 1)

    @property
    def n_points(self):
        return self.n_steps + 1

    def times(self):
        return self.t0 + np.arange(self.n_steps + 1) * self.dt

    def time(self, i):
        return self.t0 + i * self.dt


@dataclass
class ModelSpec:
    """A parametric ODE or jump-diffusion.

    Callbacks take a batch of states ``x`` (``(N, d)``), a scalar time ``t``
    and parameters ``th`` (``(N, l)``), as arrays or Vars, and must be built
    from :mod:`ltw2.autodiff` primitives so they differentiate.

    Attributes:
        name: Identifier.
        kind: ``ode`` or ``jump_diffusion``.
        state_dim: d.
        param_dim: l.
        drift: f(x, t, th) -> (N, d).
        diffusion: sigma(x, t, th) -> (N, d) for diagonal noise or
            (N, d, m) for general noise.
        noise_dim: m (equal to d for diagonal noise).
        jump: beta(x, xi, t, th) -> (N, d), one mark ``xi`` (shape (N,)) per
            trajectory.
        jump_mean: Optional E[beta] over the mark law, (x, t, th) -> (N, d).
        sample_marks: Mark sampler ``(rng, size) -> array``.
        intensity: Total jump rate gamma(U) >= 0.
        compensator: ``analytic`` (uses ``jump_mean``) or ``mc``.
        mc_marks: Marks per step for the Monte Carlo compensator.
    """

    name: str
    kind: str
    state_dim: int
    param_dim: int
    drift: Callable
    diffusion: Optional[Callable] = None
    noise_dim: int = 0
    jump: Optional[Callable] = None
    jump_mean: Optional[Callable] = None
    sample_marks: Optional[Callable] = None
    intensity: float = 0.0
    compensator: str = "analytic"
    mc_marks: int = 64
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("ode", "jump_diffusion"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "jump_diffusion":
            if self.intensity < 0:
                raise ConfigError("jump intensity must be >= 0")
            if self.compensator not in ("analytic", "mc"):
                raise ConfigError("compensator must be 'analytic' or 'mc'")
            if self.compensator == "analytic" and self.intensity > 0 and self.jump_mean is None:
                raise ConfigError("analytic compensator needs jump_mean")
            if self.noise_dim == 0:
                self.noise_dim = self.state_dim


@dataclass
class TrajectoryBatch:
    """N paths on a shared grid.

    Attributes:
        states: ``(N, n_steps + 1, d)`` array, or Var for predicted paths.
        initial_states: ``(N, d)`` array.
        grid: The TimeGrid.
        params_used: Optional ``(N, l)`` parameters that generated the paths.
    """

    states: object
    initial_states: np.ndarray
    grid: TimeGrid
    params_used: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.initial_states.shape[0]

    @property
    def dim(self):
        return self.initial_states.shape[1]

    def values(self):
        return ad.value_of(self.states)


def substream(seed, *keys):
    """Child SeedSequence addressed by integer ``keys``.

    ``seed`` may be an int or a SeedSequence; the result depends only on the
    root entropy and the full key path, so streams never overlap.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


def _check_finite(x, step):
    v = ad.value_of(x)
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.all(np.isfinite(v.reshape(v.shape[0], -1)), axis=1))
        raise IntegrationDiverged(step, bad)


def _as_batch(x0, theta):
    single = np.ndim(ad.value_of(x0)) == 1
    if single:
        x0 = ad.reshape(x0, (1, -1))
        theta = ad.reshape(theta, (1, -1))
    return x0, theta, single


def rk4_integrate(model, x0, theta, grid):
    """Classical four-stage Runge-Kutta.

    Args:
        model: ModelSpec of kind ``ode``.
        x0: ``(d,)`` or ``(N, d)`` initial states.
        theta: ``(l,)`` or ``(N, l)`` parameters (array or Var).
        grid: TimeGrid.

    Returns:
        Path ``(n_steps + 1, d)`` for a single trajectory, else
        ``(N, n_steps + 1, d)``; a Var whenever an input is one.
    """
    if model.kind != "ode":
        raise ConfigError("rk4_integrate needs an ODE model")
    x, th, single = _as_batch(x0, theta)
    f, h = model.drift, grid.dt
    xs = [x]
    for i in range(grid.n_steps):
        t = grid.time(i)
        k1 = f(x, t, th)
        k2 = f(x + (0.5 * h) * k1, t + 0.5 * h, th)
        k3 = f(x + (0.5 * h) * k2, t + 0.5 * h, th)
        k4 = f(x + h * k3, t + h, th)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(x, i + 1)
        xs.append(x)
    path = ad.stack(xs, axis=1)
    return path[0] if single else path


def draw_jump_noise(model, grid, rng):
    """Pre-draws one trajectory's noise: Brownian increments, Poisson counts,
    jump marks and compensator marks, in that order."""
    n = grid.n_steps
    dB = rng.standard_normal((n, model.noise_dim)) * math.sqrt(grid.dt)
    lam = model.intensity * grid.dt
    counts = rng.poisson(lam, size=n) if lam > 0 else np.zeros(n, dtype=np.int64)
    total = int(counts.sum())
    marks = np.asarray(model.sample_marks(rng, total), dtype=np.float64) if total else np.zeros(0)
    mc = None
    if model.intensity > 0 and model.compensator == "mc":
        mc = np.asarray(model.sample_marks(rng, (n, model.mc_marks)), dtype=np.float64)
    return dB, counts, marks, mc


def _stack_noise(draws, n_steps):
    dB = np.stack([d[0] for d in draws], axis=1)  # (n_steps, N, m)
    counts = np.stack([d[1] for d in draws], axis=1)  # (n_steps, N)
    kmax = int(counts.max()) if counts.size else 0
    marks = np.zeros((n_steps, len(draws), max(kmax, 0)))
    for j, d in enumerate(draws):
        offs = np.concatenate([[0], np.cumsum(d[1])])
        for i in np.flatnonzero(d[1]):
            marks[i, j, :d[1][i]] = d[2][offs[i]:offs[i + 1]]
    mc = None
    if draws and draws[0][3] is not None:
        mc = np.stack([d[3] for d in draws], axis=1)  # (n_steps, N, K)
    return dB, counts, marks, mc


def em_jump_integrate(model, x0, theta, grid, rng=None, noise=None):
    """Euler-Maruyama with compensated Poisson jumps (left-point rule).

    Each step applies ``x += f dt + sigma dB + sum_k beta(x, xi_k) -
    gamma E[beta] dt`` with every coefficient evaluated at the pre-step state.

    Args:
        model: ModelSpec of kind ``jump_diffusion``.
        x0: ``(d,)`` or ``(N, d)``.
        theta: ``(l,)`` or ``(N, l)``.
        grid: TimeGrid.
        rng: Generator, or a sequence of N Generators (one per trajectory).
        noise: Optional pre-drawn noise, a list of N :func:`draw_jump_noise`
            tuples; overrides ``rng``.
    """
    if model.kind != "jump_diffusion":
        raise ConfigError("em_jump_integrate needs a jump-diffusion model")
    if model.intensity < 0:
        raise ConfigError("jump intensity must be >= 0")
    x, th, single = _as_batch(x0, theta)
    n_traj = ad.value_of(x).shape[0]
    if noise is None:
        rngs = rng if isinstance(rng, (list, tuple)) else [rng] * n_traj
        noise = [draw_jump_noise(model, grid, r) for r in rngs]
    dB, counts, marks, mc = _stack_noise(noise, grid.n_steps)
    h, gam = grid.dt, model.intensity
    xs = [x]
    for i in range(grid.n_steps):
        t = grid.time(i)
        incr = h * model.drift(x, t, th)
        if model.diffusion is not None:
            sig = model.diffusion(x, t, th)
            if np.ndim(ad.value_of(sig)) == 2:
                incr = incr + sig * dB[i]
            else:
                incr = incr + ad.matvec(sig, dB[i])
        if gam > 0:
            for k in range(marks.shape[2]):
                hit = (counts[i] > k).astype(np.float64)[:, None]
                if hit.any():
                    incr = incr + hit * model.jump(x, marks[i, :, k], t, th)
            incr = incr - (gam * h) * _compensator(model, x, t, th, None if mc is None else mc[i])
        x = x + incr
        _check_finite(x, i + 1)
        xs.append(x)
    path = ad.stack(xs, axis=1)
    return path[0] if single else path


def _compensator(model, x, t, th, mc_marks):
    if model.compensator == "analytic":
        return model.jump_mean(x, t, th)
    n, k = mc_marks.shape
    rep = np.repeat(np.arange(n), k)
    vals = model.jump(ad.gather(x, rep), mc_marks.reshape(-1), t, ad.gather(th, rep))
    return ad.mean(ad.reshape(vals, (n, k, -1)), axis=1)


def simulate_batch(model, initial_states, params, grid, seed=0):
    """Integrates one trajectory per row of ``params``.

    Args:
        model: ModelSpec.
        initial_states: ``(N, d)`` array.
        params: ``(N, l)`` array or Var.
        grid: TimeGrid.
        seed: Int or SeedSequence; trajectory ``i`` draws its noise from
            ``substream(seed, i)``, so no trajectory's noise depends on another's.

    Returns:
        TrajectoryBatch; ``states`` is a Var when ``params`` is.
    """
    x0 = np.asarray(initial_states, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != model.state_dim:
        raise ConfigError(f"initial states must be (N, {model.state_dim})")
    pv = ad.value_of(params)
    if pv.shape != (x0.shape[0], model.param_dim):
        raise ConfigError(f"params must be ({x0.shape[0]}, {model.param_dim}), got {pv.shape}")
    if model.kind == "ode":
        states = rk4_integrate(model, x0, params, grid)
    else:
        rngs = [np.random.default_rng(substream(seed, i)) for i in range(x0.shape[0])]
        states = em_jump_integrate(model, x0, params, grid, rngs)
    used = None if isinstance(params, ad.Var) else np.array(pv)
    return TrajectoryBatch(states, x0, grid, used)


def write_trajectories(batch, path):
    """Writes ``traj_id,t,x_0..x_{d-1}`` rows with 17 significant digits."""
    vals = batch.values()
    times = batch.grid.times()
    d = vals.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "t"] + [f"x_{k}" for k in range(d)])
        for i in range(vals.shape[0]):
            for j, t in enumerate(times):
                w.writerow([i, f"{t:.17g}"] + [f"{v:.17g}" for v in vals[i, j]])


def read_trajectories(path):
    """Loads a trajectory CSV; the grid is recovered from the timestamps."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["traj_id", "t"] or not header[2:]:
        raise ConfigError(f"{path}: bad trajectory header {header}")
    data = np.array(body, dtype=np.float64)
    ids = data[:, 0].astype(np.int64)
    n = int(ids.max()) + 1
    if not np.array_equal(ids, np.repeat(np.arange(n), len(ids) // n)):
        raise ConfigError(f"{path}: rows must be grouped by traj_id with equal lengths")
    npts = len(ids) // n
    times = data[:npts, 1]
    dt = (times[-1] - times[0]) / (npts - 1)
    grid = TimeGrid(float(times[0]), float(dt), npts - 1)
    if not np.allclose(times, grid.times(), rtol=0, atol=1e-9 * max(1.0, abs(times[-1]))):
        raise ConfigError(f"{path}: timestamps are not uniform")
    states = data[:, 2:].reshape(n, npts, -1)
    return TrajectoryBatch(states, states[:, 0, :].copy(), grid)


def write_matrix(arr, path, prefix="theta"):
    """Writes an ``(M, l)`` sample matrix as CSV with 17 significant digits."""
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}_{k}" for k in range(arr.shape[1])])
        for row in arr:
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array(rows[1:], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]))
