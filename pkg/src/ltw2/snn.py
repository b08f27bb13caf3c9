"""Stochastic neural network with Gaussian weights.

Every weight is drawn afresh on each forward pass as ``w = a + sigma * eps``
with ``eps ~ N(0, 1)``; the means ``a``, the scale parameters ``s`` and the
deterministic biases ``b`` are the trainable state. The scale is either
``sigma = exp(s)`` (``sigma_param="log"``, the default) or ``sigma = s``
(``sigma_param="linear"``, effective standard deviation ``|s|``).

The network maps a constant input (the scalar 1 when modelling a global
parameter distribution) to one parameter sample per forward pass.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

MODES = ("linear", "relu", "resnet")
TRANSFORMS = ("identity", "abs", "softplus")
SIGMA_PARAMS = ("log", "linear")


class SpecError(ValueError):
    """Invalid network specification."""


@dataclass
class SnnSpec:
    """Architecture of a stochastic network.

    Attributes:
        input_dim: Length of the input vector.
        output_dim: Number of parameters produced per sample.
        hidden_widths: Width of each hidden layer.
        modes: Propagation mode per hidden layer (``linear``, ``relu`` or
            ``resnet``). A single string applies to all hidden layers.
        init_bias: Constant bias fill, or ``{"normal": std}`` for
            ``N(0, std**2)`` draws.
        init_weight_mean_std: Standard deviation of the initial weight means;
            also the initial weight noise scale.
        output_transform: Per-output map (``identity``, ``abs``, ``softplus``).
            A single string applies to every output.
        sigma_param: ``log`` or ``linear`` parameterisation of the noise scale.
        separate_outputs: Use one independent sub-network per output.
    """

    input_dim: int = 1
    output_dim: int = 1
    hidden_widths: list = field(default_factory=lambda: [40])
    modes: object = "relu"
    init_bias: object = 0.0
    init_weight_mean_std: float = 0.01
    output_transform: object = "identity"
    sigma_param: str = "log"
    separate_outputs: bool = False

    def __post_init__(self):
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if isinstance(self.modes, str):
            self.modes = [self.modes] * len(self.hidden_widths)
        self.modes = [str(m).lower() for m in self.modes]
        if isinstance(self.output_transform, str):
            self.output_transform = [self.output_transform] * int(self.output_dim)
        self.output_transform = [str(t).lower() for t in self.output_transform]
        self.validate()

    def validate(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise SpecError("input_dim and output_dim must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise SpecError("hidden_widths must be nonempty with all widths >= 1")
        if len(self.modes) != len(self.hidden_widths):
            raise SpecError("one propagation mode per hidden layer is required")
        for m in self.modes:
            if m not in MODES:
                raise SpecError(f"unknown propagation mode {m!r}")
        widths = [self.input_dim] + self.hidden_widths
        for k, m in enumerate(self.modes):
            if m == "resnet" and widths[k] != widths[k + 1]:
                raise SpecError(f"resnet layer {k} needs equal widths, got "
                                f"{widths[k]} -> {widths[k + 1]}")
        if len(self.output_transform) != self.output_dim:
            raise SpecError("one output transform per output is required")
        for t in self.output_transform:
            if t not in TRANSFORMS:
                raise SpecError(f"unknown output transform {t!r}")
        if self.sigma_param not in SIGMA_PARAMS:
            raise SpecError(f"sigma_param must be one of {SIGMA_PARAMS}")
        if not self.init_weight_mean_std > 0:
            raise SpecError("init_weight_mean_std must be > 0")
        _bias_std(self.init_bias)

    def layer_shapes(self):
        """(out, in) per layer of one sub-network, output layer last."""
        out = 1 if self.separate_outputs else self.output_dim
        widths = [self.input_dim] + self.hidden_widths + [out]
        return [(widths[k + 1], widths[k]) for k in range(len(widths) - 1)]

    @property
    def n_nets(self):
        return self.output_dim if self.separate_outputs else 1

    def to_dict(self):
        return asdict(self)


def _bias_std(desc):
    # Returns (constant, std) for the bias initialiser.
    if isinstance(desc, dict):
        if set(desc) != {"normal"}:
            raise SpecError(f"bias initialiser must be a number or {{'normal': std}}, got {desc}")
        std = float(desc["normal"])
        if std < 0:
            raise SpecError("bias std must be >= 0")
        return 0.0, std
    return float(desc), 0.0


@dataclass
class SnnState:
    """Trainable arrays: ``nets[i][k]`` holds layer ``k`` of sub-network ``i``
    as a dict with keys ``a`` (means), ``s`` (scale parameters), ``b`` (biases)."""

    spec: SnnSpec
    nets: list

    def arrays(self):
        """Flat list of arrays in (net, layer, a/s/b) order."""
        return [layer[key] for net in self.nets for layer in net for key in ("a", "s", "b")]

    def names(self):
        return [f"net{i}.layer_{k}.{key}" for i, net in enumerate(self.nets)
                for k in range(len(net)) for key in ("a", "s", "b")]

    def with_arrays(self, arrays):
        """Returns a new state with the flat ``arrays`` in place of the current ones."""
        it = iter(arrays)
        nets = [[{key: next(it) for key in ("a", "s", "b")} for _ in net] for net in self.nets]
        return SnnState(self.spec, nets)

    def bind(self, tape):
        """Registers every array as a tape leaf; returns a state holding Vars."""
        return self.with_arrays([tape.leaf(a) for a in self.arrays()])

    def copy(self):
        return self.with_arrays([np.array(ad.value_of(a)) for a in self.arrays()])


def init(spec, seed):
    """Draws an initial state.

    Weight means are ``N(0, init_weight_mean_std**2)``, noise scales equal
    ``init_weight_mean_std``, and biases follow ``spec.init_bias``. Draw
    order is net by net, layer by layer, means before biases.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    std = float(spec.init_weight_mean_std)
    s0 = np.log(std) if spec.sigma_param == "log" else std
    b_const, b_std = _bias_std(spec.init_bias)
    nets = []
    for _ in range(spec.n_nets):
        layers = []
        for out, inp in spec.layer_shapes():
            a = rng.normal(0.0, std, size=(out, inp))
            b = rng.normal(0.0, b_std, size=out) if b_std > 0 else np.full(out, b_const)
            layers.append({"a": a, "s": np.full((out, inp), s0), "b": b})
        nets.append(layers)
    return SnnState(spec, nets)


def sigma_of(spec, s):
    """Noise scale from the stored parameter ``s`` (array or Var)."""
    return ad.exp(s) if spec.sigma_param == "log" else s


def _apply_transform(spec, z):
    kinds = spec.output_transform
    if all(k == "identity" for k in kinds):
        return z
    cols = []
    for j, k in enumerate(kinds):
        c = ad.getitem(z, (slice(None), slice(j, j + 1)))
        if k == "abs":
            c = ad.abs(c)
        elif k == "softplus":
            c = ad.softplus(c)
        cols.append(c)
    return ad.concat(cols, axis=1)


def _net_forward(spec, layers, x, eps):
    z = x
    n_hidden = len(spec.hidden_widths)
    for k, layer in enumerate(layers):
        w = ad.add(layer["a"], ad.mul(sigma_of(spec, layer["s"]), eps[k]))
        pre = ad.add(ad.matvec(w, z), layer["b"])
        if k == n_hidden:
            z = pre
        elif spec.modes[k] == "linear":
            z = pre
        elif spec.modes[k] == "relu":
            z = ad.relu(pre)
        else:
            z = ad.add(z, ad.relu(pre))
    return z


def sample_batch(state, x, n, rng):
    """Draws ``n`` independent parameter samples.

    Args:
        state: SnnState holding arrays (forward-only) or Vars (on a tape).
        x: Input vector of length ``spec.input_dim``.
        n: Number of samples (>= 1).
        rng: ``numpy.random.Generator``; weight noise is drawn net by net,
            layer by layer, each as one ``(n, out, in)`` block.

    Returns:
        ``(n, output_dim)`` array or Var; row ``i`` is one sample.
    """
    spec = state.spec
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != spec.input_dim:
        raise ValueError(f"input length {x.shape[0]} != input_dim {spec.input_dim}")
    xb = np.broadcast_to(x, (n, spec.input_dim))
    outs = []
    for layers in state.nets:
        eps = [rng.standard_normal((n,) + shape) for shape in spec.layer_shapes()]
        outs.append(_net_forward(spec, layers, xb, eps))
    z = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
    return _apply_transform(spec, z)


def sample_forward(state, x, rng):
    """One parameter sample (an ``output_dim`` vector) with fresh weight noise."""
    return ad.getitem(sample_batch(state, x, 1, rng), 0)


def deterministic_forward(state, x):
    """The network with every weight fixed at its mean (no noise)."""
    spec = state.spec
    xb = np.asarray(x, dtype=np.float64).reshape(1, -1)
    outs = [_net_forward(spec, layers, xb, [np.zeros((1,) + s) for s in spec.layer_shapes()])
            for layers in state.nets]
    z = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
    return _apply_transform(spec, z)[0]


def _layers_to_json(layers):
    return {f"layer_{k}": {key: np.asarray(ad.value_of(layer[key])).tolist()
                           for key in ("a", "s", "b")}
            for k, layer in enumerate(layers)}


def state_to_dict(state):
    doc = {"spec": state.spec.to_dict()}
    if state.spec.separate_outputs:
        doc["nets"] = [_layers_to_json(net) for net in state.nets]
    else:
        doc.update(_layers_to_json(state.nets[0]))
    return doc


def state_from_dict(doc):
    """Rebuilds an SnnState, checking every array against the spec's shapes."""
    spec = SnnSpec(**doc["spec"])
    raw = doc["nets"] if spec.separate_outputs else [
        {k: v for k, v in doc.items() if k.startswith("layer_")}]
    shapes = spec.layer_shapes()
    if len(raw) != spec.n_nets:
        raise SpecError(f"expected {spec.n_nets} sub-networks, found {len(raw)}")
    nets = []
    for net in raw:
        if len(net) != len(shapes):
            raise SpecError(f"expected {len(shapes)} layers, found {len(net)}")
        layers = []
        for k, (out, inp) in enumerate(shapes):
            lay = net[f"layer_{k}"]
            a = np.asarray(lay["a"], dtype=np.float64)
            s = np.asarray(lay["s"], dtype=np.float64)
            b = np.asarray(lay["b"], dtype=np.float64)
            if a.shape != (out, inp) or s.shape != (out, inp) or b.shape != (out,):
                raise SpecError(f"layer_{k} arrays do not match shape ({out}, {inp})")
            layers.append({"a": a, "s": s, "b": b})
        nets.append(layers)
    return SnnState(spec, nets)


def save_state(state, path):
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=1)


def load_state(path):
    with open(path) as fh:
        return state_from_dict(json.load(fh))
