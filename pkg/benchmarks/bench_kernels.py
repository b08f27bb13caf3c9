"""Compiled vs pure-Python assignment kernels.

Times a single dense assignment (``lsa``) and a batch of neighbourhood
solves (``group_plans``) on clouds shaped like the training workloads, and
checks that both backends return the same costs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from ltw2 import _core_py
from ltw2.losses import build_neighborhoods
from ltw2.transport import cost_matrix

try:
    from ltw2 import _core
except ImportError:  # extension not built
    _core = None


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def lsa_cases():
    rng = np.random.default_rng(0)
    for n, d in ((50, 1), (200, 2), (200, 8)):
        a = rng.normal(size=(n, d))
        b = a + 0.5 * rng.normal(size=(n, d))
        yield f"lsa n={n} d={d}", cost_matrix(a, b)


def group_cases():
    # Lotka-Volterra style: 200 anchors on the unit square, delta 0.4
    rng = np.random.default_rng(1)
    x0 = rng.uniform(1, 2, size=(200, 2))
    nb = build_neighborhoods(x0, 0.4)
    a = rng.normal(size=(200, 2))
    b = a + 0.3 * rng.normal(size=(200, 2))
    yield "group_plans N=200 d=2 delta=0.4", nb, a, b
    x0 = rng.normal(2, 0.1, size=(300, 1))
    nb = build_neighborhoods(x0, 0.1)
    a = rng.normal(size=(300, 1))
    yield "group_plans N=300 d=1 delta=0.1", nb, a, a + 0.2 * rng.normal(size=(300, 1))


def run(repeat):
    rows = []
    backends = [("python", _core_py)] + ([("compiled", _core)] if _core is not None else [])
    for name, c in lsa_cases():
        res = {}
        for label, mod in backends:
            t, (x, _, _) = _best(lambda: mod.lsa(c), repeat)
            res[label] = (t, float(c[np.arange(len(x)), x].sum()))
        rows.append((name, res))
    for name, nb, a, b in group_cases():
        res = {}
        for label, mod in backends:
            t, (cost, _) = _best(lambda: mod.group_plans(a, b, nb.indptr, nb.indices, nb.order,
                                                        False, True), repeat)
            res[label] = (t, float(np.sum(cost)))
        rows.append((name, res))
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is kept)")
    p.add_argument("--json", default=None, help="also write results to this file")
    args = p.parse_args()
    rows = run(args.repeat)
    print(f"{'case':40s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}")
    out = []
    for name, res in rows:
        tp, cp = res["python"]
        line = {"case": name, "python_ms": tp * 1e3}
        if "compiled" in res:
            tc, cc = res["compiled"]
            if abs(cp - cc) > 1e-9 * max(1.0, abs(cp)):
                raise SystemExit(f"{name}: backends disagree ({cp} vs {cc})")
            line.update(compiled_ms=tc * 1e3, speedup=tp / tc)
            print(f"{name:40s} {tp * 1e3:11.2f} {tc * 1e3:12.2f} {tp / tc:8.1f}")
        else:
            print(f"{name:40s} {tp * 1e3:11.2f} {'n/a':>12s} {'n/a':>8s}")
        out.append(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
