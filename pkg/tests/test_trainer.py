import math

import numpy as np
import pytest

from ltw2 import models, snn
from ltw2.dynamics import ConfigError, TimeGrid
from ltw2.optim import AdamWState, NonFiniteGradient, adamw_step
from ltw2.trainer import (TrainConfig, TrainingAborted, diffusion_from_dict,
                          diffusion_relative_error, diffusion_to_dict, init_diffusion_net,
                          train, train_joint_diffusion)


def test_adamw_first_step_hand_value():
    st = AdamWState.zeros_like([np.array(1.0)])
    (x,) = adamw_step(st, [np.array(1.0)], [np.array(1.0)], 0.1, 0.0)
    assert abs(x - (1 - 0.1 / (1 + 1e-8))) < 1e-15
    assert abs(x - 0.900000001) < 1e-15
    assert st.step == 1


def test_adamw_zero_gradient_and_decay():
    x0 = np.array([1.0, -2.0])
    st = AdamWState.zeros_like([x0])
    (x,) = adamw_step(st, [x0], [np.zeros(2)], 0.1, 0.0)
    np.testing.assert_array_equal(x, x0)
    st = AdamWState.zeros_like([x0, x0], decay_mask=[True, False])
    x, y = adamw_step(st, [x0, x0], [np.zeros(2), np.zeros(2)], 0.1, 0.5)
    np.testing.assert_allclose(x, x0 * (1 - 0.05), rtol=1e-15)
    np.testing.assert_array_equal(y, x0)


def test_adamw_rejects_non_finite():
    st = AdamWState.zeros_like([np.zeros(1)])
    with pytest.raises(NonFiniteGradient):
        adamw_step(st, [np.zeros(1)], [np.array([np.nan])], 0.1, 0.0)


def _reference_adamw(x, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adamw_quadratic_bowl_matches_reference():
    x = np.array(1.0)
    st = AdamWState.zeros_like([x])
    for _ in range(50):
        (x,) = adamw_step(st, [x], [2 * x], 0.1, 0.0)
    assert abs(x) < 1e-2
    assert abs(float(x) - _reference_adamw(1.0, 50, 0.1)) < 1e-14


def test_adamw_state_roundtrip(tmp_path):
    st = AdamWState.zeros_like([np.zeros((2, 2)), np.zeros(3)], decay_mask=[True, False])
    adamw_step(st, [np.ones((2, 2)), np.ones(3)], [np.ones((2, 2)), -np.ones(3)], 0.1, 0.1)
    back = AdamWState.from_dict(st.to_dict())
    assert back.step == 1 and back.decay_mask == [True, False]
    for a, b in zip(st.m + st.v, back.m + back.v):
        np.testing.assert_array_equal(a, b)
    st.save(tmp_path / "s.json")


def _small(loss="local-w2", epochs=3, seed=0, n=20, tol=0.0):
    grid = TimeGrid.from_points(0.0, 0.1, 11)
    obs = models.example1_data(1, n=n, grid=grid)
    spec = snn.SnnSpec(1, 1, [8], "relu", 2.0, 0.01, sigma_param="linear")
    cfg = TrainConfig(loss, 0.4, 0.001, 0.01, epochs, seed, spec, models.lotka_volterra(),
                      grid, n, stop_tolerance=tol)
    return cfg, obs


def test_config_validation():
    cfg, _ = _small()
    kw = dict(delta=0.4, learning_rate=0.001, weight_decay=0.0, max_epochs=1, seed=0,
              snn=cfg.snn, model=cfg.model, grid=cfg.grid, n_trajectories=20)
    with pytest.raises(ConfigError):
        TrainConfig("l1", **kw)
    with pytest.raises(ConfigError):
        TrainConfig("mse", **dict(kw, learning_rate=0.0))
    with pytest.raises(ConfigError):
        TrainConfig("mse", **dict(kw, max_epochs=0))
    with pytest.raises(ConfigError):
        TrainConfig("mse", **dict(kw, model=models.merton_jd()))


def test_single_epoch_with_large_tolerance():
    cfg, obs = _small(epochs=50, tol=1e9)
    seen = []
    state, log = train(cfg, obs, checkpoint=lambda e, s, o: seen.append(e))
    assert log.epochs == [1] and seen == [1]


@pytest.mark.parametrize("loss", ["local-w2", "w2", "mmd", "mse", "mean-var"])
def test_training_is_bit_reproducible(loss):
    cfg, obs = _small(loss)
    s1, l1 = train(cfg, obs)
    s2, l2 = train(cfg, obs)
    assert l1.losses == l2.losses and l1.grad_norms == l2.grad_norms
    for a, b in zip(s1.arrays(), s2.arrays()):
        np.testing.assert_array_equal(a, b)
    assert l1.epochs == [1, 2, 3]
    assert all(math.isfinite(v) for v in l1.losses)


def test_different_seed_changes_run():
    cfg, obs = _small()
    _, l1 = train(cfg, obs)
    cfg.seed = 1
    _, l2 = train(cfg, obs)
    assert l1.losses != l2.losses


def test_every_leaf_gets_gradient():
    cfg, obs = _small(epochs=10)
    state0 = snn.init(cfg.snn, 0)
    from ltw2.dynamics import substream
    init = snn.init(cfg.snn, substream(cfg.seed, 0))
    state, _ = train(cfg, obs)
    assert len(state.arrays()) == len(state0.arrays())
    for a, b in zip(init.arrays(), state.arrays()):
        assert np.all(a != b)


def test_checkpoints_and_log_csv(tmp_path):
    cfg, obs = _small(epochs=4)
    cfg.checkpoint_every = 2
    cfg.record_wall_time = True
    seen = []
    _, log = train(cfg, obs, checkpoint=lambda e, s, o: seen.append((e, o.step)))
    assert seen == [(2, 2), (4, 4)]
    log.write_csv(tmp_path / "log.csv")
    rows = (tmp_path / "log.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss,grad_norm,wall_ms" and len(rows) == 5
    assert all(w > 0 for w in log.wall_ms)


def test_observation_mismatch_rejected():
    cfg, obs = _small()
    cfg.n_trajectories = 21
    with pytest.raises(ConfigError):
        train(cfg, obs)


def test_repeated_divergence_aborts():
    cfg, obs = _small()
    # a drift that always overflows
    cfg.model = models.ModelSpec("bad", "ode", 2, 1, lambda x, t, th: x * 1e300 * 1e300)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingAborted) as err:
        train(cfg, obs)
    assert len(err.value.log.diverged) == 2 and len(err.value.log) == 0


def test_joint_diffusion_training_runs():
    grid = TimeGrid.from_points(0.0, 0.1, 6)
    law = models.MertonTruth(fixed_s=True)
    obs = law.simulate(0, 15, grid)
    spec = snn.SnnSpec(1, 1, [6], "relu", 0.01, 0.01, sigma_param="linear")
    model = models.merton_jd(with_diffusion=False)
    cfg = TrainConfig("local-w2", 0.1, 0.001, 0.0, 2, 0, spec, model, grid, 15)
    state, net, log = train_joint_diffusion(cfg, obs)
    assert len(log) == 2 and len(net.layers) == 3
    back = diffusion_from_dict(diffusion_to_dict(net))
    for a, b in zip(back.arrays(), net.arrays()):
        np.testing.assert_array_equal(a, b)
    err = diffusion_relative_error(net, obs.states, 0.3)
    assert 0 <= err < 2
    # an untrained network outputs zero, so the error is exactly one
    assert diffusion_relative_error(init_diffusion_net(0), obs.states, 0.3) == 1.0
    with pytest.raises(ConfigError):
        train_joint_diffusion(_small()[0], obs)
