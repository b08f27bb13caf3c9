"""Training loop: sample parameters, simulate, score, back-propagate, update.

Every epoch draws fresh weight noise and fresh integrator noise. All
randomness derives from ``config.seed`` through :func:`substream` keys:
``(0,)`` network initialisation, ``(1, epoch, attempt)`` weight noise,
``(2, epoch, attempt)`` integrator noise (split further per trajectory).
"""
import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import snn as snn_mod
from .dynamics import ConfigError, IntegrationDiverged, ModelSpec, TimeGrid, simulate_batch, substream
from .losses import LOSSES, build_neighborhoods, evaluate_loss, median_bandwidth
from .optim import AdamWState, NonFiniteGradient, adamw_step


class TrainingAborted(RuntimeError):
    """Training stopped after repeated integration or gradient failures.

    Attributes:
        log: The TrainLog up to the failure.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass
class TrainConfig:
    """Settings of one training run.

    Attributes:
        loss: Loss name (``local-w2``, ``w2``, ``mmd``, ``mse``, ``mean-var``).
        delta: Neighbourhood radius for ``local-w2``.
        learning_rate: AdamW step size.
        weight_decay: Decoupled decay coefficient.
        max_epochs: Epoch limit.
        stop_tolerance: Stop once an epoch's loss is at or below this value.
        seed: Root seed.
        snn: Network specification.
        model: ModelSpec of the approximate system.
        grid: TimeGrid of the observations.
        n_trajectories: Number of predicted trajectories per epoch.
        decay_sigma: Apply weight decay to the noise-scale parameters too.
        mmd_h0: MMD base bandwidth (median heuristic when None).
        checkpoint_every: Checkpoint period in epochs (0 disables).
        record_wall_time: Fill the ``wall_ms`` log column.
    """

    loss: str
    delta: float
    learning_rate: float
    weight_decay: float
    max_epochs: int
    seed: int
    snn: snn_mod.SnnSpec
    model: ModelSpec
    grid: TimeGrid
    n_trajectories: int
    stop_tolerance: float = 0.0
    decay_sigma: bool = False
    mmd_h0: Optional[float] = None
    checkpoint_every: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if not self.stop_tolerance >= 0:
            raise ConfigError("stop_tolerance must be >= 0")
        if self.snn.output_dim != self.model.param_dim:
            raise ConfigError(f"network output_dim {self.snn.output_dim} != model "
                              f"param_dim {self.model.param_dim}")


@dataclass
class TrainLog:
    """Per-epoch records ``(epoch, loss, grad_norm, wall_ms)``."""

    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    diverged: list = field(default_factory=list)

    def append(self, epoch, loss, grad_norm, wall_ms=None):
        self.epochs.append(int(epoch))
        self.losses.append(float(loss))
        self.grad_norms.append(float(grad_norm))
        self.wall_ms.append(wall_ms)

    def __len__(self):
        return len(self.epochs)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "grad_norm", "wall_ms"])
            for e, l, g, t in zip(self.epochs, self.losses, self.grad_norms, self.wall_ms):
                w.writerow([e, f"{l:.17g}", f"{g:.17g}", "" if t is None else f"{t:.3f}"])


def _decay_mask(state, decay_sigma):
    names = state.names()
    return [decay_sigma or not n.endswith(".s") for n in names]


def _epoch_grads(config, state, obs, nbhd, h0, epoch, attempt, extra=None):
    tape = ad.Tape()
    bound = state.bind(tape)
    extra_bound = extra.bind(tape) if extra is not None else None
    rng_w = np.random.default_rng(substream(config.seed, 1, epoch, attempt))
    theta = snn_mod.sample_batch(bound, np.ones(config.snn.input_dim),
                                 config.n_trajectories, rng_w)
    model = config.model if extra_bound is None else extra_bound.model(config.model)
    pred = simulate_batch(model, obs.initial_states, theta, config.grid,
                          substream(config.seed, 2, epoch, attempt))
    report = evaluate_loss(config.loss, obs, pred, nbhd, h0)
    grads = ad.backward(report.total)
    return report.value, grads


def _check_obs(config, obs):
    g = obs.grid
    if g.n_steps != config.grid.n_steps or not np.isclose(g.dt, config.grid.dt):
        raise ConfigError("observation grid does not match the configured grid")
    if obs.n != config.n_trajectories:
        raise ConfigError(f"observations hold {obs.n} trajectories, config expects "
                          f"{config.n_trajectories}")


def train(config, obs, checkpoint=None, extra=None):
    """Fits the network to the observed ensemble.

    Args:
        config: TrainConfig.
        obs: Observed TrajectoryBatch.
        checkpoint: Optional callable ``(epoch, snn_state, adamw_state)``,
            called every ``config.checkpoint_every`` epochs and at the end.
        extra: Optional additional trainable module (see
            :func:`train_joint_diffusion`).

    Returns:
        ``(snn_state, log)``, plus the trained ``extra`` module when given.

    Raises:
        TrainingAborted: Two consecutive failed attempts in one epoch.
    """
    _check_obs(config, obs)
    state = snn_mod.init(config.snn, substream(config.seed, 0))
    nbhd = build_neighborhoods(obs.initial_states, config.delta) if config.loss == "local-w2" else None
    h0 = None
    if config.loss == "mmd":
        h0 = config.mmd_h0 if config.mmd_h0 is not None else median_bandwidth(obs)
    mask = _decay_mask(state, config.decay_sigma)
    n_snn = len(mask)
    leaves = state.arrays()
    if extra is not None:
        leaves = leaves + extra.arrays()
        mask = mask + [True] * len(extra.arrays())
    opt = AdamWState.zeros_like(leaves, mask)
    log = TrainLog()
    for epoch in range(1, config.max_epochs + 1):
        t_start = time.perf_counter()
        for attempt in (0, 1):
            try:
                loss, grads = _epoch_grads(config, state, obs, nbhd, h0, epoch, attempt, extra)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFiniteGradient(f"non-finite gradient at epoch {epoch}")
                break
            except (IntegrationDiverged, NonFiniteGradient, FloatingPointError) as exc:
                log.diverged.append((epoch, attempt, str(exc)))
                if attempt == 1:
                    raise TrainingAborted(f"epoch {epoch}: failed twice in a row ({exc})",
                                          log) from exc
        grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        leaves = adamw_step(opt, leaves, grads, config.learning_rate, config.weight_decay)
        state = state.with_arrays(leaves[:n_snn])
        if extra is not None:
            extra = extra.with_arrays(leaves[n_snn:])
        wall = (time.perf_counter() - t_start) * 1e3 if config.record_wall_time else None
        log.append(epoch, loss, grad_norm, wall)
        done = loss <= config.stop_tolerance or epoch == config.max_epochs
        if checkpoint is not None and (done or (config.checkpoint_every
                                                and epoch % config.checkpoint_every == 0)):
            checkpoint(epoch, state, opt)
        if done:
            break
    if extra is not None:
        return state, extra, log
    return state, log


@dataclass
class DiffusionNet:
    """Deterministic MLP ``sigma_hat(x)`` used as the diffusion coefficient.

    ``layers[k]`` holds ``W`` (out, in) and ``b`` (out,); hidden layers use
    ReLU and the output layer is linear.
    """

    layers: list

    def arrays(self):
        return [lay[key] for lay in self.layers for key in ("W", "b")]

    def with_arrays(self, arrays):
        it = iter(arrays)
        return DiffusionNet([{key: next(it) for key in ("W", "b")} for _ in self.layers])

    def bind(self, tape):
        return _BoundDiffusion(self.with_arrays([tape.leaf(a) for a in self.arrays()]))

    def __call__(self, x):
        z = x
        for k, lay in enumerate(self.layers):
            w = lay["W"]
            z = ad.add(ad.matmul(z, ad.value_of(w).T if not isinstance(w, ad.Var)
                                 else _transpose(w)), lay["b"])
            if k < len(self.layers) - 1:
                z = ad.relu(z)
        return z


def _transpose(w):
    wv = w.value
    return ad.record(wv.T.copy(), [w], lambda g: (g.T,))


class _BoundDiffusion:
    def __init__(self, net):
        self.net = net

    def model(self, base):
        """Copy of ``base`` with the network as diffusion coefficient."""
        net = self.net
        return ModelSpec(base.name + "+diffusion_net", base.kind, base.state_dim,
                         base.param_dim, base.drift, diffusion=lambda x, t, th: net(x),
                         noise_dim=base.noise_dim, jump=base.jump, jump_mean=base.jump_mean,
                         sample_marks=base.sample_marks, intensity=base.intensity,
                         compensator=base.compensator, mc_marks=base.mc_marks)


def init_diffusion_net(seed, widths=(50, 50), state_dim=1, init_std=0.1):
    """MLP with He-style hidden weights and a zero output layer (sigma_hat = 0)."""
    rng = np.random.default_rng(seed)
    dims = [state_dim] + list(widths) + [state_dim]
    layers = []
    for k in range(len(dims) - 1):
        if k == len(dims) - 2:
            w = np.zeros((dims[k + 1], dims[k]))
        else:
            w = rng.normal(0.0, init_std, size=(dims[k + 1], dims[k]))
        layers.append({"W": w, "b": np.zeros(dims[k + 1])})
    return DiffusionNet(layers)


def train_joint_diffusion(config, obs, net=None, checkpoint=None):
    """Trains the jump-mark network and a deterministic diffusion MLP together.

    ``config.model`` supplies drift and jumps; its diffusion is replaced by
    the MLP. The network parameters (``config.snn``) feed only the jump terms.

    Returns:
        ``(snn_state, diffusion_net, log)``.
    """
    if config.model.kind != "jump_diffusion":
        raise ConfigError("joint diffusion training needs a jump-diffusion model")
    if net is None:
        net = init_diffusion_net(substream(config.seed, 3), state_dim=config.model.state_dim)
    return train(config, obs, checkpoint=checkpoint, extra=net)


def diffusion_to_dict(net):
    return {"layers": [{"W": np.asarray(lay["W"]).tolist(), "b": np.asarray(lay["b"]).tolist()}
                       for lay in net.layers]}


def diffusion_from_dict(doc):
    layers = []
    for lay in doc["layers"]:
        w = np.asarray(lay["W"], dtype=np.float64)
        b = np.asarray(lay["b"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("diffusion layer arrays have inconsistent shapes")
        layers.append({"W": w, "b": b})
    return DiffusionNet(layers)


def diffusion_relative_error(net, paths, sigma0):
    """Relative squared L2 error of ``|sigma_hat(X)|`` against ``sigma0 sqrt|X|``.

    Time integrals use the same left-point rule in numerator and
    denominator, summed over all trajectories of ``paths`` (``(N, T+1, 1)``).
    """
    x = np.asarray(paths, dtype=np.float64)[:, :-1, :].reshape(-1, 1)
    est = np.abs(np.asarray(net(x)))
    ref = abs(sigma0) * np.sqrt(np.abs(x))
    return float(np.sum((est - ref) ** 2) / np.sum(ref ** 2))
