"""Command-line interface: ``ltw2 {simulate,train,evaluate,sweep}``.

Exit codes: 0 success, 2 configuration or input error, 3 training aborted,
4 evaluation error. ``LTW2_MAX_WORKERS`` caps the number of parallel sweep
workers (default 1).
"""
import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import snn as snn_mod
from .dynamics import (ConfigError, read_trajectories, simulate_batch, substream,
                       write_matrix, write_trajectories)
from .evaluation import EvaluationError, ensemble_summary, param_distribution_error
from .kernels import BACKEND
from .losses import LOSSES
from .trainer import (TrainingAborted, _BoundDiffusion, diffusion_from_dict,
                      diffusion_relative_error, diffusion_to_dict, train, train_joint_diffusion)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_EVAL = 0, 2, 3, 4


class EvalFailure(RuntimeError):
    """Evaluation could not be carried out (exit code 4)."""


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _outdir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {str(out)!r}: {exc.strerror}") from exc
    return out


def resolve_config(path, seed=None, sets=()):
    """Loads a config (file or preset name) and applies overrides.

    ``seed`` replaces the data, train and eval seeds; ``sets`` holds
    ``KEY=VALUE`` dot-path assignments.
    """
    doc = cfgmod.load(path)
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        doc = cfgmod.set_path(doc, key.strip(), cfgmod.parse_value(value.strip()))
    if seed is not None:
        for section in ("data", "train", "eval"):
            doc = cfgmod.set_path(doc, f"{section}.seed", int(seed))
    return doc


def run_simulate(doc, out):
    """Ground-truth ensemble: ``trajectories.csv`` and ``params_truth.csv``."""
    out = _outdir(out)
    seed = int(doc["data"]["seed"])
    truth = cfgmod.build_truth(doc, seed)
    grid = cfgmod.build_grid(doc)
    batch = truth.simulate(seed, int(doc["data"]["n_trajectories"]), grid)
    write_trajectories(batch, out / "trajectories.csv")
    write_matrix(batch.params_used, out / "params_truth.csv")
    (out / "config.json").write_text(cfgmod.dumps(doc))
    return batch


def _load_obs(data_dir):
    path = Path(data_dir) / "trajectories.csv"
    try:
        return read_trajectories(path)
    except OSError as exc:
        raise ConfigError(f"cannot read observations {str(path)!r}: {exc.strerror}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed observations {str(path)!r}: {exc}") from exc


def run_train(doc, data_dir, out, loss=None):
    """Trains on ``data_dir/trajectories.csv``; returns the final SnnState.

    Raises:
        TrainingAborted: after flushing ``train_log.csv``.
    """
    if loss is not None:
        doc = cfgmod.set_path(doc, "train.loss", loss)
    out = _outdir(out)
    config = cfgmod.build_train_config(doc)
    obs = _load_obs(data_dir)
    joint = bool(doc["train"]["joint_diffusion"])

    def checkpoint(epoch, state, opt):
        _write_json({"epoch": epoch, "snn": snn_mod.state_to_dict(state),
                     "adamw": opt.to_dict()}, out / f"checkpoint_{epoch:05d}.json")

    (out / "config.json").write_text(cfgmod.dumps(doc))
    try:
        if joint:
            state, net, log = train_joint_diffusion(config, obs, checkpoint=checkpoint)
        else:
            state, log = train(config, obs, checkpoint=checkpoint)
    except TrainingAborted as exc:
        if exc.log is not None:
            exc.log.write_csv(out / "train_log.csv")
        raise
    log.write_csv(out / "train_log.csv")
    snn_mod.save_state(state, out / "snn_final.json")
    if joint:
        _write_json(diffusion_to_dict(net), out / "diffusion_final.json")
    return state


def _load_snn(path, doc):
    try:
        state = snn_mod.load_state(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise EvalFailure(f"cannot load network {str(path)!r}: {exc}") from exc
    expected = cfgmod.build_snn_spec(doc).to_dict()
    if state.spec.to_dict() != expected:
        raise EvalFailure(f"network spec in {str(path)!r} does not match the config snn section")
    return state


def _load_diffusion(path):
    try:
        with open(path) as fh:
            return diffusion_from_dict(json.load(fh))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise EvalFailure(f"cannot load diffusion network {str(path)!r}: {exc}") from exc


def run_evaluate(doc, snn_path, out, data_dir=None, diffusion_path=None):
    """Writes ``metrics.json``, ``params_recon.csv`` and ``ensemble.csv``.

    The reference ensemble is ``data_dir/trajectories.csv`` when given,
    otherwise a fresh simulation of the configured ground truth.
    """
    out = _outdir(out)
    state = _load_snn(snn_path, doc)
    data_seed = int(doc["data"]["seed"])
    eval_seed = int(doc["eval"]["seed"])
    m = int(doc["eval"]["m"])
    if m < 1:
        raise ConfigError("eval.m must be >= 1")
    truth = cfgmod.build_truth(doc, data_seed)
    model = cfgmod.build_model(doc)
    grid = cfgmod.build_grid(doc)
    net = None
    if doc["train"]["joint_diffusion"]:
        net = _load_diffusion(diffusion_path or Path(snn_path).with_name("diffusion_final.json"))
        model = _BoundDiffusion(net).model(model)

    recon = snn_mod.sample_batch(state, np.ones(state.spec.input_dim), m,
                                 np.random.default_rng(substream(eval_seed, 0)))
    truth_samples = truth.sample_params(np.random.default_rng(substream(eval_seed, 1)), m)
    recon_rep = truth.report_recon(recon)
    try:
        report = param_distribution_error(truth.report_truth(truth_samples), recon_rep,
                                          seed=substream(eval_seed, 2),
                                          cap=int(doc["eval"]["cap"]))
    except EvaluationError as exc:
        raise EvalFailure(str(exc)) from exc

    if data_dir is not None:
        obs = _load_obs(data_dir)
    else:
        obs = truth.simulate(data_seed, int(doc["data"]["n_trajectories"]), grid)
    n = obs.n
    idx = np.arange(n) % m
    try:
        pred = simulate_batch(model, obs.initial_states, recon[idx], obs.grid,
                              substream(eval_seed, 3))
    except (FloatingPointError, ConfigError) as exc:
        raise EvalFailure(f"simulation with reconstructed parameters failed: {exc}") from exc
    summary = ensemble_summary(obs, pred)

    metrics = report.to_dict()
    metrics["ensemble_w2"] = summary.w2
    if net is not None:
        sigma0 = float(doc["data"]["truth"].get("sigma0", 0.3))
        metrics["diffusion_relative_error"] = diffusion_relative_error(net, obs.values(), sigma0)
    _write_json(metrics, out / "metrics.json")
    write_matrix(recon_rep, out / "params_recon.csv")
    summary.write_csv(out / "ensemble.csv")
    return report


def _sweep_cell(args):
    doc, cell_dir = args
    cell = Path(cell_dir)
    try:
        run_simulate(doc, cell / "data")
        run_train(doc, cell / "data", cell / "train")
        rep = run_evaluate(doc, cell / "train" / "snn_final.json", cell / "eval",
                           data_dir=cell / "data")
    except TrainingAborted as exc:
        return {"status": "aborted", "message": str(exc)}
    except EvalFailure as exc:
        return {"status": "eval_error", "message": str(exc)}
    return {"status": "ok", "report": rep.to_dict()}


def max_workers(requested=None):
    """Worker count: ``requested`` (default 1) capped by ``LTW2_MAX_WORKERS``."""
    cap = os.environ.get("LTW2_MAX_WORKERS")
    n = 1 if requested is None else int(requested)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError as exc:
            raise ConfigError(f"LTW2_MAX_WORKERS must be an integer, got {cap!r}") from exc
    return max(1, n)


def run_sweep(doc, varies, out, workers=None):
    """Trains and evaluates every cell of the override grid; writes ``sweep.csv``.

    Returns:
        List of per-cell result dicts in grid order.
    """
    axes = [cfgmod.parse_vary(v) for v in varies]
    if not axes:
        raise ConfigError("sweep needs at least one --vary")
    out = _outdir(out)
    cells = []
    for k, combo in enumerate(itertools.product(*[vals for _, vals in axes])):
        cell_doc = doc
        for (key, _), value in zip(axes, combo):
            cell_doc = cfgmod.set_path(cell_doc, key, value)
        cfgmod.build_train_config(cell_doc)  # fail fast on invalid cells
        cells.append((combo, cell_doc, str(out / f"cell_{k:03d}")))
    n_workers = max_workers(workers)
    jobs = [(d, p) for _, d, p in cells]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    ell = max((len(r["report"]["mean_abs_err"]) for r in results if r["status"] == "ok"),
              default=0)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key for key, _ in axes] + ["status", "relative_error"]
                   + [f"mean_abs_err_{k}" for k in range(ell)]
                   + [f"var_abs_err_{k}" for k in range(ell)])
        for (combo, _, _), res in zip(cells, results):
            vals = [json.dumps(v) if not isinstance(v, str) else v for v in combo]
            if res["status"] == "ok":
                rep = res["report"]
                w.writerow(vals + ["ok", f"{rep['relative_error']:.17g}"]
                           + [f"{x:.17g}" for x in rep["mean_abs_err"]]
                           + [f"{x:.17g}" for x in rep["var_abs_err"]])
            else:
                w.writerow(vals + [res["status"], ""] + [""] * (2 * ell))
    return results


def build_parser():
    p = argparse.ArgumentParser(
        prog="ltw2", description="Reconstruct parameter distributions of ODE/SDE models "
        "from trajectory ensembles with a local time-decoupled squared W2 loss.",
        epilog="Exit codes: 0 success, 2 config/input error, 3 training aborted, "
        "4 evaluation error. LTW2_MAX_WORKERS caps sweep parallelism; LTW2_BACKEND "
        "selects the assignment kernels (auto, compiled, python).")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help="config JSON file or preset name (example1, example3, example4)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the data, train and eval seeds")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field by dot path (repeatable)")
        sp.add_argument("--out", required=True, help="output directory (created if absent)")

    sp = sub.add_parser("simulate", help="generate a ground-truth trajectory ensemble")
    common(sp)

    sp = sub.add_parser("train", help="train the stochastic network on observed data")
    common(sp)
    sp.add_argument("--loss", choices=sorted(LOSSES), default=None,
                    help="loss function (default: train.loss of the config)")
    sp.add_argument("--data", required=True, help="directory holding trajectories.csv")
    sp.add_argument("--wall-time", action="store_true",
                    help="record per-epoch wall time in train_log.csv (not reproducible)")

    sp = sub.add_parser("evaluate", help="score a trained network against the ground truth")
    common(sp)
    sp.add_argument("--snn", required=True, help="trained network JSON (snn_final.json)")
    sp.add_argument("--data", default=None,
                    help="reference trajectories directory (default: fresh simulation)")
    sp.add_argument("--diffusion", default=None,
                    help="diffusion network JSON for joint training runs "
                    "(default: diffusion_final.json beside --snn)")

    sp = sub.add_parser("sweep", help="train and evaluate over a grid of config overrides")
    common(sp)
    sp.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2,...",
                    help="dot-path key and comma-separated values (repeatable)")
    sp.add_argument("--workers", type=int, default=None,
                    help="parallel cells (capped by LTW2_MAX_WORKERS, default 1)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        doc = resolve_config(args.config, args.seed, args.set)
        if args.command == "simulate":
            batch = run_simulate(doc, args.out)
            print(f"wrote {batch.n} trajectories to {args.out}")
        elif args.command == "train":
            if args.wall_time:
                doc = cfgmod.set_path(doc, "train.record_wall_time", True)
            run_train(doc, args.data, args.out, args.loss)
            print(f"training finished; outputs in {args.out} (kernels: {BACKEND})")
        elif args.command == "evaluate":
            rep = run_evaluate(doc, args.snn, args.out, args.data, args.diffusion)
            print(f"relative_error {rep.relative_error:.6g}")
        else:
            results = run_sweep(doc, args.vary, args.out, args.workers)
            print(f"sweep of {len(results)} cells written to {args.out}")
            if any(r["status"] == "aborted" for r in results):
                return EXIT_ABORT
            if any(r["status"] != "ok" for r in results):
                return EXIT_EVAL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except EvalFailure as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
