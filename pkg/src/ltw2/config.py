"""Experiment configuration: strict JSON documents, bundled presets, overrides.

A document has six sections::

    model   {name, options}
    data    {n_trajectories, grid: {t0, dt, n_points}, seed, truth}
    snn     SnnSpec fields
    train   TrainConfig fields plus joint_diffusion
    eval    {m, seed, cap}
    output  {dir}

Unknown keys anywhere in the fixed schema raise :class:`ConfigError`.
``model.options`` and ``data.truth`` are forwarded as keyword arguments to
the model builder and the ground-truth law, which reject unknown names.
"""
import copy
import json
import math
from importlib import resources

import numpy as np

from . import models
from .dynamics import ConfigError, TimeGrid
from .snn import SnnSpec, SpecError

PRESETS = ("example1", "example3", "example4")

SCHEMA = {
    "model": {"name": None, "options": None},
    "data": {"n_trajectories": None, "grid": {"t0": None, "dt": None, "n_points": None},
             "seed": None, "truth": None},
    "snn": {k: None for k in SnnSpec.__dataclass_fields__},
    "train": {"loss": None, "delta": None, "learning_rate": None, "weight_decay": None,
              "max_epochs": None, "stop_tolerance": None, "seed": None, "decay_sigma": None,
              "mmd_h0": None, "checkpoint_every": None, "record_wall_time": None,
              "joint_diffusion": None},
    "eval": {"m": None, "seed": None, "cap": None},
    "output": {"dir": None},
}

DEFAULTS = {
    "model": {"options": {}},
    "data": {"seed": 0, "truth": {}},
    "snn": {},
    "train": {"stop_tolerance": 0.0, "seed": 0, "decay_sigma": False, "mmd_h0": None,
              "checkpoint_every": 0, "record_wall_time": False, "joint_diffusion": False},
    "eval": {"m": 10000, "seed": 0, "cap": 2000},
    "output": {"dir": "out"},
}

REQUIRED = {
    "model": ("name",),
    "data": ("n_trajectories", "grid"),
    "train": ("loss", "delta", "learning_rate", "weight_decay", "max_epochs"),
}


def _check_keys(doc, schema, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(schema[key], dict):
            _check_keys(value, schema[key], where)


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key not in (
                "options", "truth", "init_bias"):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def normalize(doc):
    """Validates a raw document and fills defaults; returns a new dict."""
    _check_keys(doc, SCHEMA, "")
    out = _merge(DEFAULTS, doc)
    for section, keys in REQUIRED.items():
        for key in keys:
            if key not in out.get(section, {}):
                raise ConfigError(f"missing required config key '{section}.{key}'")
    return out


def loads(text, source="<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    return normalize(doc)


def load(path):
    """Reads a config file, or a bundled preset when ``path`` names one."""
    if str(path) in PRESETS:
        return load_preset(str(path))
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror}") from exc
    return loads(text, str(path))


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("ltw2").joinpath("presets", f"{name}.json").read_text()


def load_preset(name):
    return loads(preset_text(name), name)


def parse_value(text):
    """Override value: JSON when it parses, the raw string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(doc, dotted, value):
    """Copy of ``doc`` with ``dotted`` (e.g. ``train.delta``) set to ``value``."""
    keys = dotted.split(".")
    schema = SCHEMA
    for k, key in enumerate(keys):
        free = schema is None
        if not free and key not in schema:
            raise ConfigError(f"unknown config key {dotted!r}")
        if not free and k < len(keys) - 1 and not isinstance(schema[key], dict) and key not in (
                "options", "truth"):
            raise ConfigError(f"config key {'.'.join(keys[:k + 1])!r} has no sub-keys")
        schema = None if free else schema[key]
    out = copy.deepcopy(doc)
    node = out
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return normalize(out)


def parse_vary(spec):
    """``"a.b=1,2"`` -> ``("a.b", [1, 2])``."""
    key, sep, values = spec.partition("=")
    if not sep or not key or not values:
        raise ConfigError(f"--vary expects KEY=V1,V2,..., got {spec!r}")
    return key.strip(), [parse_value(v.strip()) for v in values.split(",")]


def _delta(value):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        delta = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train.delta must be a number or 'inf', got {value!r}") from exc
    if not delta >= 0:
        raise ConfigError("train.delta must be >= 0")
    return delta


def build_grid(doc):
    g = doc["data"]["grid"]
    try:
        return TimeGrid.from_points(float(g["t0"]), float(g["dt"]), int(g["n_points"]))
    except KeyError as exc:
        raise ConfigError(f"data.grid is missing {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid data.grid: {exc}") from exc


def build_snn_spec(doc):
    try:
        return SnnSpec(**doc["snn"])
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid snn section: {exc}") from exc


def build_model(doc):
    try:
        return models.build_model(doc["model"]["name"], **doc["model"]["options"])
    except TypeError as exc:
        raise ConfigError(f"invalid model.options: {exc}") from exc


def build_truth(doc, seed):
    """Ground-truth parameter law of the configured model."""
    name = doc["model"]["name"]
    opts = dict(doc["data"]["truth"])
    try:
        if name == "lotka_volterra":
            return models.LotkaVolterraTruth(**opts)
        if name == "ocular8d":
            return models.OcularTruth(seed, **opts)
        if name == "merton_jd":
            mopts = doc["model"]["options"]
            extra = {k: mopts[k] for k in ("jump_rate", "compensator") if k in mopts}
            if mopts.get("with_diffusion", True) is False:
                opts.setdefault("fixed_s", True)
            return models.MertonTruth(**extra, **opts)
        if name == "user_ode":
            return models.BoxTruth(build_model(doc), **opts)
    except TypeError as exc:
        raise ConfigError(f"invalid data.truth: {exc}") from exc
    raise ConfigError(f"no ground-truth law for model {name!r}")


def build_train_config(doc, seed=None):
    """TrainConfig from a normalised document; ``seed`` overrides train.seed."""
    from .trainer import TrainConfig

    t = doc["train"]
    try:
        return TrainConfig(
            loss=str(t["loss"]), delta=_delta(t["delta"]),
            learning_rate=float(t["learning_rate"]), weight_decay=float(t["weight_decay"]),
            max_epochs=int(t["max_epochs"]), seed=int(t["seed"] if seed is None else seed),
            snn=build_snn_spec(doc), model=build_model(doc), grid=build_grid(doc),
            n_trajectories=int(doc["data"]["n_trajectories"]),
            stop_tolerance=float(t["stop_tolerance"]), decay_sigma=bool(t["decay_sigma"]),
            mmd_h0=None if t["mmd_h0"] is None else float(t["mmd_h0"]),
            checkpoint_every=int(t["checkpoint_every"]),
            record_wall_time=bool(t["record_wall_time"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid train section: {exc}") from exc


def dumps(doc):
    """Canonical JSON text of a document."""
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
