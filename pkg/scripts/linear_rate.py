"""FRSD linear-rate runs on the Huber and logistic benchmark instances.

Runs FRSD with alpha * beta = 0.05 until r(k) <= 1e-9 and fits log-linear
rates to the residual and to the three error components: consensus error
``||x - 1 x_hat||``, optimality error ``sqrt(n) ||x_hat - x*||`` and step
length ``||x(k) - x(k-1)||``, where ``x_hat = pi^T x``.

    python3 scripts/linear_rate.py
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from frsd.digraph import build_uniform_row_stochastic, cycle_with_chords, generate_strongly_connected, \
    stationary_distribution
from frsd.engine import SimulationConfig, fit_linear_rate, run, solve_centralized
from frsd.objectives import partition_dataset, synth_huber_problem, synth_libsvm_dataset
from frsd.theory import theta_diagnostics


def huber():
    return cycle_with_chords(10), synth_huber_problem(10, 10, 5, 2.0, seed=0), 0.02


def logistic():
    prob = partition_dataset(synth_libsvm_dataset(400, 10, seed=7), 30, 20, 11, lam=0.01, seed=0)
    return generate_strongly_connected(30, 0.1, seed=0), prob, 5e-4


CASES = {"huber": huber, "logistic": logistic}


def study(name):
    g, prob, alpha = CASES[name]()
    x_star = solve_centralized(prob).x_star
    xs = []
    cfg = SimulationConfig("frsd", g, prob, alpha, 0.05 / alpha, iterations=20_000, stop_residual=1e-9,
                           x_star=x_star)
    t0 = time.perf_counter()
    trace = run(cfg, lambda k, state: xs.append(state.x.copy()))
    seconds = time.perf_counter() - t0
    slope, r2 = fit_linear_rate(trace)
    pi = stationary_distribution(build_uniform_row_stochastic(g))
    k = np.arange(len(xs))
    components = {}
    for label, series in zip(("consensus", "optimality", "step"), theta_diagnostics(xs, pi, x_star)):
        ok = np.isfinite(series)
        c_slope, c_r2 = fit_linear_rate((k[ok], series[ok]))
        components[label] = {"slope": c_slope, "r_squared": c_r2}
    return {"alpha": alpha, "beta": 0.05 / alpha, "iterations_to_1e-9": trace.iterations_to(1e-9),
            "slope": slope, "r_squared": r2, "seconds": seconds, "components": components}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/linear_rate.json"))
    args = ap.parse_args(argv)
    results = {}
    for name in CASES:
        res = results[name] = study(name)
        print(f"{name}: r <= 1e-9 at k = {res['iterations_to_1e-9']}, slope {res['slope']:.4f}, "
              f"R^2 {res['r_squared']:.5f}, {res['seconds']:.1f} s")
        for label, c in res["components"].items():
            print(f"    {label:<10} slope {c['slope']:.4f}  R^2 {c['r_squared']:.4f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
