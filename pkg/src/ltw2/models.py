"""Built-in models and their ground-truth parameter laws.

* ``lotka_volterra``: predator-prey system with one uncertain predation rate.
* ``ocular8d``: anti-VEGF drug kinetics in the vitreous and aqueous humour,
  eight states and seven kinetic rates.
* ``merton_jd``: scalar jump-diffusion with square-root diffusion and
  proportional jumps, parameters ``(s, xi)``.
* ``user_ode``: any right-hand side importable as ``"module:function"``.
"""
import importlib

import numpy as np

from . import autodiff as ad
from .dynamics import ConfigError, ModelSpec, TimeGrid, simulate_batch, substream


def _col(a, j):
    return ad.getitem(a, (slice(None), j))


def lotka_volterra():
    """dx = 2x - c x y, dy = c x y / 4 - 2y with parameter ``c``."""

    def drift(x, t, th):
        u, v, c = _col(x, 0), _col(x, 1), _col(th, 0)
        cuv = c * u * v
        return ad.stack([2.0 * u - cuv, 0.25 * cuv - 2.0 * v], axis=1)

    return ModelSpec("lotka_volterra", "ode", 2, 1, drift)


V_VIT = 2.05
V_AQ = 0.105
V_IN = 5.408
K0 = np.array([1.669, 0.00114, 0.575, 0.293, 0.259, 0.176, 2.505])
OCULAR_STATES = ("v_vit", "r_vit", "c_vit", "h_vit", "v_aq", "r_aq", "c_aq", "h_aq")
OCULAR_PARAMS = ("k_off", "k_on", "k_v", "k_r", "k_c", "k_h", "CL")


def _ocular_rhs(x, th):
    ratio = V_VIT / V_AQ
    vv, rv, cv, hv, va, ra, ca, ha = x.T
    koff, kon, kv, kr, kc, kh, cl = th.T
    a_vit = koff * cv - 2.0 * kon * vv * rv
    b_vit = 2.0 * koff * hv - kon * rv * cv
    a_aq = koff * ca - 2.0 * kon * va * ra
    b_aq = 2.0 * koff * ha - kon * ra * ca
    clr = cl / V_AQ
    return np.stack([
        a_vit - kv * vv + V_IN / V_VIT,
        a_vit + b_vit - kr * rv,
        b_vit - a_vit - kc * cv,
        -b_vit - kh * hv,
        a_aq + ratio * kv * vv - clr * va,
        a_aq + b_aq + ratio * kr * rv - clr * ra,
        b_aq - a_aq + ratio * kc * cv - clr * ca,
        ratio * kh * hv - b_aq - clr * ha,
    ], axis=1)


def _ocular_vjp(x, th, g):
    ratio = V_VIT / V_AQ
    vv, rv, cv, hv, va, ra, ca, ha = x.T
    koff, kon, kv, kr, kc, kh, cl = th.T
    g0, g1, g2, g3, g4, g5, g6, g7 = g.T
    clr = cl / V_AQ
    # cotangents of the four binding fluxes
    gav, gbv = g0 + g1 - g2, g1 + g2 - g3
    gaa, gba = g4 + g5 - g6, g5 + g6 - g7
    gx = np.stack([
        -2.0 * kon * rv * gav - kv * g0 + ratio * kv * g4,
        -2.0 * kon * vv * gav - kon * cv * gbv - kr * g1 + ratio * kr * g5,
        koff * gav - kon * rv * gbv - kc * g2 + ratio * kc * g6,
        2.0 * koff * gbv - kh * g3 + ratio * kh * g7,
        -2.0 * kon * ra * gaa - clr * g4,
        -2.0 * kon * va * gaa - kon * ca * gba - clr * g5,
        koff * gaa - kon * ra * gba - clr * g6,
        2.0 * koff * gba - clr * g7,
    ], axis=1)
    gth = np.stack([
        cv * gav + 2.0 * hv * gbv + ca * gaa + 2.0 * ha * gba,
        -2.0 * vv * rv * gav - rv * cv * gbv - 2.0 * va * ra * gaa - ra * ca * gba,
        vv * (ratio * g4 - g0),
        rv * (ratio * g5 - g1),
        cv * (ratio * g6 - g2),
        hv * (ratio * g7 - g3),
        -(va * g4 + ra * g5 + ca * g6 + ha * g7) / V_AQ,
    ], axis=1)
    return gx, gth


def ocular8d():
    """Eight-state ocular kinetics; parameters ordered as ``OCULAR_PARAMS``.

    The right-hand side is one tape node with a hand-written vjp.
    """

    def drift(x, t, th):
        xv, t_raw = ad.value_of(x), ad.value_of(th)
        tv = np.broadcast_to(t_raw, (xv.shape[0], 7))

        def vjp(g):
            gx, gth = _ocular_vjp(xv, tv, g)
            if np.shape(t_raw) != gth.shape:
                gth = gth.sum(axis=0).reshape(np.shape(t_raw))
            return tuple(gr for p, gr in ((x, gx), (th, gth)) if isinstance(p, ad.Var))

        return ad.record(_ocular_rhs(xv, tv), [x, th], vjp)

    return ModelSpec("ocular8d", "ode", 8, 7, drift)


def merton_jd(jump_rate=1.0, drift_rate=0.05, compensator="analytic", with_diffusion=True):
    """dX = 0.05 dt + s sqrt|X| dB + xi X dN~ with parameters ``(s, xi)``.

    ``xi`` is a per-trajectory parameter, so every jump in a path has size
    ``xi * X(t-)``; marks are identically 1 and the compensator is exact.
    With ``with_diffusion=False`` the only parameter is ``xi`` and the
    diffusion coefficient is left for the caller to supply.
    """
    j = 1 if with_diffusion else 0

    def drift(x, t, th):
        return np.full(ad.value_of(x).shape, drift_rate)

    def diffusion(x, t, th):
        return ad.getitem(th, (slice(None), slice(0, 1))) * ad.sqrt(ad.abs(x))

    def jump(x, xi, t, th):
        return ad.getitem(th, (slice(None), slice(j, j + 1))) * x * xi[:, None]

    def jump_mean(x, t, th):
        return ad.getitem(th, (slice(None), slice(j, j + 1))) * x

    def marks(rng, size):
        return np.ones(size)

    return ModelSpec("merton_jd", "jump_diffusion", 1, 1 + j, drift,
                     diffusion=diffusion if with_diffusion else None,
                     noise_dim=1, jump=jump, jump_mean=jump_mean, sample_marks=marks,
                     intensity=float(jump_rate), compensator=compensator)


def user_ode(target, state_dim, param_dim):
    """ODE whose drift ``f(x, t, th)`` is loaded from ``"module:function"``."""
    mod, _, fn = str(target).partition(":")
    if not mod or not fn:
        raise ConfigError(f"user ODE target must look like 'module:function', got {target!r}")
    try:
        f = getattr(importlib.import_module(mod), fn)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load user ODE {target!r}: {exc}") from exc
    return ModelSpec(f"user_ode:{target}", "ode", int(state_dim), int(param_dim), f)


def build_model(name, **opts):
    """Model from a configuration name and options."""
    if name == "lotka_volterra":
        return lotka_volterra(**opts)
    if name == "ocular8d":
        return ocular8d(**opts)
    if name == "merton_jd":
        return merton_jd(**opts)
    if name == "user_ode":
        return user_ode(**opts)
    raise ConfigError(f"unknown model {name!r}")


class GroundTruth:
    """Parameter and initial-state law of a synthetic experiment.

    Subclasses implement ``sample_params(rng, n)`` and
    ``sample_initial(rng, n)``; :meth:`report` maps raw parameters to the
    quantity being reconstructed.
    """

    model = None
    # truth columns the trained network reconstructs (None: all of them)
    recon_columns = None

    def sample_params(self, rng, n):
        raise NotImplementedError

    def sample_initial(self, rng, n):
        raise NotImplementedError

    def report(self, params):
        return np.asarray(params, dtype=np.float64)

    def report_truth(self, params):
        """Reported truth restricted to the reconstructed columns."""
        out = self.report(params)
        return out if self.recon_columns is None else out[:, self.recon_columns]

    def report_recon(self, params):
        """Reported form of network samples, comparable with :meth:`report_truth`."""
        if self.recon_columns is None:
            return self.report(params)
        return np.asarray(params, dtype=np.float64)

    def simulate(self, seed, n, grid):
        """Draws parameters, initial states and noise from disjoint substreams."""
        params = self.sample_params(np.random.default_rng(substream(seed, 0)), n)
        x0 = self.sample_initial(np.random.default_rng(substream(seed, 1)), n)
        return simulate_batch(self.model, x0, params, grid, substream(seed, 2))


class LotkaVolterraTruth(GroundTruth):
    """c ~ U(c_low, c_high); initial states ~ U(x_low, x_high)^2."""

    def __init__(self, c_low=2.0, c_high=4.0, x_low=1.0, x_high=2.0):
        self.model = lotka_volterra()
        self.c = (float(c_low), float(c_high))
        self.x = (float(x_low), float(x_high))

    def sample_params(self, rng, n):
        return rng.uniform(self.c[0], self.c[1], size=(n, 1))

    def sample_initial(self, rng, n):
        return rng.uniform(self.x[0], self.x[1], size=(n, 2))


class OcularTruth(GroundTruth):
    """k = k0 + c k0 * (A k~) with a mixing matrix A fixed per dataset seed."""

    def __init__(self, seed, c=0.1, ic_mean=1.0, ic_std=0.05):
        self.model = ocular8d()
        self.c = float(c)
        self.ic = (float(ic_mean), float(ic_std))
        self.A = np.random.default_rng(substream(seed, 3)).uniform(-0.5, 0.5, size=(7, 7))

    def sample_params(self, rng, n):
        kt = np.empty((n, 7))
        kt[:, 0] = rng.uniform(0.0, 1.0, n)
        kt[:, 1] = rng.uniform(0.0, 1.0, n)
        kt[:, 2] = rng.normal(0.0, 0.5, n)
        kt[:, 3] = rng.normal(0.0, 0.5, n)
        kt[:, 4] = rng.exponential(0.5, n)
        kt[:, 5] = rng.beta(2.0, 5.0, n)
        kt[:, 6] = rng.gamma(2.0, 2.0, n)
        return K0 + self.c * K0 * (kt @ self.A.T)

    def sample_initial(self, rng, n):
        return rng.normal(self.ic[0], self.ic[1], size=(n, 8))


class MertonTruth(GroundTruth):
    """s ~ sigma0 N(1, 1), xi ~ N(beta0, sigma1^2), X0 ~ N(x0_mean, sigma2^2).

    With ``fixed_s`` the diffusion scale is the constant ``sigma0`` and only
    ``xi`` is reconstructed (the diffusion is learned separately).
    """

    def __init__(self, sigma0=0.3, beta0=0.3, sigma1=0.15, sigma2=0.1, x0_mean=2.0,
                 jump_rate=1.0, compensator="analytic", fixed_s=False):
        self.model = merton_jd(jump_rate=jump_rate, compensator=compensator)
        self.sigma0, self.beta0 = float(sigma0), float(beta0)
        self.sigma1, self.sigma2 = float(sigma1), float(sigma2)
        self.x0_mean = float(x0_mean)
        self.fixed_s = bool(fixed_s)
        if self.fixed_s:
            self.recon_columns = [1]

    def sample_params(self, rng, n):
        s = self.sigma0 * rng.normal(1.0, 1.0, n)
        if self.fixed_s:
            s = np.full(n, self.sigma0)
        xi = rng.normal(self.beta0, self.sigma1, n)
        return np.stack([s, xi], axis=1)

    def sample_initial(self, rng, n):
        return rng.normal(self.x0_mean, self.sigma2, size=(n, 1))

    def report(self, params):
        out = np.array(params, dtype=np.float64)
        out[:, 0] = np.abs(out[:, 0])
        return out


class BoxTruth(GroundTruth):
    """Parameters and initial states uniform on axis-aligned boxes.

    Used for user-supplied ODEs; bounds are scalars or per-coordinate lists.
    """

    def __init__(self, model, param_low=0.0, param_high=1.0, x_low=0.0, x_high=1.0):
        self.model = model
        self.p = (param_low, param_high)
        self.x = (x_low, x_high)

    def sample_params(self, rng, n):
        return rng.uniform(self.p[0], self.p[1], size=(n, self.model.param_dim))

    def sample_initial(self, rng, n):
        return rng.uniform(self.x[0], self.x[1], size=(n, self.model.state_dim))


def example1_data(seed, n=200, grid=None):
    """Lotka-Volterra ensemble on t in [0, 8] with dt = 0.1."""
    grid = grid or TimeGrid.from_points(0.0, 0.1, 81)
    return LotkaVolterraTruth().simulate(seed, n, grid)


def example3_data(seed, n=200, grid=None, c=0.1):
    """Ocular ensemble on t in [0, 2] with dt = 0.05."""
    grid = grid or TimeGrid.from_points(0.0, 0.05, 41)
    return OcularTruth(seed, c=c).simulate(seed, n, grid)


def example4_data(seed, n=300, grid=None, **law):
    """Jump-diffusion ensemble on t in [0, 2] with dt = 0.1."""
    grid = grid or TimeGrid.from_points(0.0, 0.1, 21)
    return MertonTruth(**law).simulate(seed, n, grid)
