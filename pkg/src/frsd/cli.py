"""Command-line entry point: experiment suites, grid tuning, graph generation and analysis.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .digraph import (
    complete_digraph,
    cycle_with_chords,
    directed_cycle,
    generate_strongly_connected,
    read_graph,
    write_graph,
)
from .engine import SimulationConfig, Trace, fit_linear_rate, run, solve_centralized
from .errors import (
    AllDiverged,
    FRSDError,
    InsufficientData,
    OracleDidNotConverge,
    ParseError,
    SchemaError,
    UnknownAlgorithm,
)
from .objectives import (
    DEFAULT_LAMBDA,
    partition_dataset,
    read_libsvm,
    synth_huber_problem,
    synth_libsvm_dataset,
    synth_quadratic_problem,
)
from .protocols import ALGORITHM_NAMES, MOMENTUM
from .theory import analyze

log = logging.getLogger("frsd")

DEFAULT_ITERATIONS = 5000
DEFAULT_ALPHA_BETA = 0.05
THRESHOLDS = (1e-3, 1e-6, 1e-9)
DIVERGED = 1e3

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["problem", "graph", "algorithms", "seeds"],
    "additionalProperties": False,
    "properties": {
        "problem": {
            "type": "object",
            "required": ["kind", "n", "p"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["huber", "logistic", "quadratic"]},
                "n": {"type": "integer", "minimum": 1},
                "p": {"type": "integer", "minimum": 1},
                "m_per_node": {"type": "integer", "minimum": 1},
                "xi": {"type": "number", "exclusiveMinimum": 0},
                "lam": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "data": {"type": "string"},
                "rows": {"type": "integer", "minimum": 1},
                "sparsity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "graph": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["random", "cycle", "complete", "cycle_chords", "file"]},
                "phi": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "path": {"type": "string"},
            },
        },
        "algorithms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "label": {"type": "string"},
                    "alpha": {"type": "number", "exclusiveMinimum": 0},
                    "beta": {"type": "number", "minimum": 0},
                    "options": {"type": "object"},
                },
            },
        },
        "iterations": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "output_dir": {"type": "string"},
        "cadence": {"type": "integer", "minimum": 1},
        "oracle_tol": {"type": "number", "exclusiveMinimum": 0},
        "stop_residual": {"type": "number", "exclusiveMinimum": 0},
        "tuning": {
            "type": "object",
            "required": ["alphas"],
            "additionalProperties": False,
            "properties": {
                "alphas": {"type": "array", "minItems": 1,
                           "items": {"type": "number", "exclusiveMinimum": 0}},
                "betas": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
                "alpha_beta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "budget": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass
class RunEntry:
    name: str
    algorithm: str
    alpha: float
    beta: float
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentSuite:
    runs: list
    problem: dict
    graph: dict
    seeds: list
    output_dir: Path
    iterations: int = DEFAULT_ITERATIONS
    cadence: int = 1
    oracle_tol: float = 1e-12
    stop_residual: float | None = None
    tuning: dict | None = None
    threads: int = 1
    base_dir: Path = Path(".")


def _json_path(err) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _default_beta(algorithm, alpha):
    if algorithm in ("frsd", "frsd-cs"):
        return DEFAULT_ALPHA_BETA / alpha
    return 0.0


def suite_from_dict(raw, base_dir=".") -> ExperimentSuite:
    """Validate a configuration object and fill in defaults."""
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise SchemaError(_json_path(err), err.message)
    runs, seen = [], set()
    for idx, item in enumerate(raw["algorithms"]):
        name = item["name"]
        if name not in ALGORITHM_NAMES:
            raise UnknownAlgorithm(f"$.algorithms[{idx}].name: unknown algorithm {name!r}; "
                                   f"known: {', '.join(ALGORITHM_NAMES)}")
        label = item.get("label", name)
        if label in seen:
            raise SchemaError(f"$.algorithms[{idx}].label", f"duplicate run name {label!r}")
        seen.add(label)
        alpha = item.get("alpha", 0.01)
        beta = item.get("beta", _default_beta(name, alpha))
        runs.append(RunEntry(label, name, alpha, beta, dict(item.get("options", {}))))
    problem = dict(raw["problem"])
    problem.setdefault("lam", DEFAULT_LAMBDA)
    problem.setdefault("seed", 0)
    graph = dict(raw["graph"])
    if graph["kind"] == "random" and "phi" not in graph:
        raise SchemaError("$.graph.phi", "random graphs need phi")
    if graph["kind"] == "file" and "path" not in graph:
        raise SchemaError("$.graph.path", "file graphs need a path")
    return ExperimentSuite(
        runs=runs,
        problem=problem,
        graph=graph,
        seeds=list(raw["seeds"]),
        output_dir=Path(base_dir) / raw.get("output_dir", "out"),
        iterations=raw.get("iterations", DEFAULT_ITERATIONS),
        cadence=raw.get("cadence", 1),
        oracle_tol=raw.get("oracle_tol", 1e-12),
        stop_residual=raw.get("stop_residual"),
        tuning=raw.get("tuning"),
        base_dir=Path(base_dir),
    )


def parse_config(path) -> ExperimentSuite:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return suite_from_dict(raw, base_dir=path.parent)


def build_problem(cfg, base_dir=Path(".")):
    kind, n, p = cfg["kind"], cfg["n"], cfg["p"]
    m = cfg.get("m_per_node", 10)
    seed = cfg.get("seed", 0)
    if kind == "huber":
        return synth_huber_problem(n, m, p, cfg.get("xi", 1.0), seed)
    if kind == "quadratic":
        return synth_quadratic_problem(n, m, p, seed)
    if "data" in cfg:
        ds = read_libsvm(Path(base_dir) / cfg["data"])
    else:
        ds = synth_libsvm_dataset(cfg.get("rows", 10 * n * m), p - 1, seed, sparsity=cfg.get("sparsity", 0.0))
    return partition_dataset(ds, n, m, p, lam=cfg.get("lam", DEFAULT_LAMBDA), seed=seed)


def build_graph(cfg, n, seed, base_dir=Path(".")):
    kind = cfg["kind"]
    if kind == "random":
        return generate_strongly_connected(n, cfg["phi"], seed)
    if kind == "cycle":
        return directed_cycle(n)
    if kind == "complete":
        return complete_digraph(n)
    if kind == "cycle_chords":
        return cycle_with_chords(n)
    g = read_graph(Path(base_dir) / cfg["path"])
    if g.n != n:
        raise SchemaError("$.graph.path", f"graph has {g.n} nodes, problem has {n}")
    return g


def _run_summary(name, algorithm, seed, trace: Trace):
    try:
        slope, r2 = fit_linear_rate(trace)
    except InsufficientData:
        slope, r2 = None, None
    return {
        "name": name,
        "algorithm": algorithm,
        "seed": seed,
        "final_residual": trace.residual[-1],
        "diverged": trace.diverged,
        "iterations_to": {f"{t:.0e}": trace.iterations_to(t) for t in THRESHOLDS},
        "broadcast_to": {f"{t:.0e}": trace.broadcast_to(t) for t in THRESHOLDS},
        "slope": slope,
        "r_squared": r2,
    }


def _aggregate(traces):
    """Mean/min/max residual per recorded iteration over the runs' common prefix."""
    length = min(len(t) for t in traces)
    res = np.array([t.residual[:length] for t in traces])
    return {
        "k": traces[0].k[:length],
        "mean": res.mean(axis=0).tolist(),
        "min": res.min(axis=0).tolist(),
        "max": res.max(axis=0).tolist(),
    }


def run_suite(suite: ExperimentSuite, write=True):
    """Run every (configuration, seed) pair; write traces and ``summary.json``.

    Returns the summary dictionary.
    """
    problem = build_problem(suite.problem, suite.base_dir)
    oracle = solve_centralized(problem, suite.oracle_tol)
    jobs = [(entry, seed) for entry in suite.runs for seed in suite.seeds]

    def one(job):
        entry, seed = job
        g = build_graph(suite.graph, problem.n, seed, suite.base_dir)
        cfg = SimulationConfig(entry.algorithm, g, problem, entry.alpha, entry.beta,
                               iterations=suite.iterations, cadence=suite.cadence, seed=seed,
                               oracle_tol=suite.oracle_tol, x_star=oracle.x_star,
                               options=entry.options, stop_residual=suite.stop_residual,
                               divergence=math.inf)
        try:
            return run(cfg)
        except FRSDError as exc:
            raise FRSDError(f"run {entry.name} seed {seed}: {exc}") from exc

    if suite.threads > 1:
        with ThreadPoolExecutor(suite.threads) as pool:
            traces = list(pool.map(one, jobs))
    else:
        traces = [one(job) for job in jobs]

    if write:
        suite.output_dir.mkdir(parents=True, exist_ok=True)
        for (entry, seed), tr in zip(jobs, traces):
            tr.to_csv(suite.output_dir / f"{entry.name}_{seed}.csv")
    runs = [_run_summary(entry.name, entry.algorithm, seed, tr) for (entry, seed), tr in zip(jobs, traces)]
    aggregate = {}
    for entry in suite.runs:
        mine = [tr for (s, _), tr in zip(jobs, traces) if s.name == entry.name]
        aggregate[entry.name] = _aggregate(mine)
    summary = {"oracle": {"grad_norm": oracle.grad_norm, "iterations": oracle.iterations},
               "runs": runs, "aggregate": aggregate}
    if write:
        (suite.output_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


@dataclass
class TuneResult:
    alpha: float
    beta: float
    iterations: float | None
    final_residual: float
    table: list


def tune_grid(suite: ExperimentSuite, algorithm, alphas=None, betas=None, budget=None,
              target=1e-6) -> TuneResult:
    """Exhaustive grid search for the fewest mean iterations to ``r <= target``.

    Runs whose residual exceeds 1e3 count as diverged and are dropped. Points
    that never reach the target rank after all points that do. Ties go to the
    smaller final residual, then the smaller ``alpha``. ``betas=None`` uses
    ``beta = alpha_beta / alpha`` for FRSD and 0 for methods without momentum.
    """
    if algorithm not in ALGORITHM_NAMES:
        raise UnknownAlgorithm(f"unknown algorithm {algorithm!r}")
    tuning = suite.tuning or {}
    alphas = list(alphas if alphas is not None else tuning.get("alphas", []))
    betas = betas if betas is not None else tuning.get("betas")
    budget = budget or tuning.get("budget", suite.iterations)
    if not alphas:
        raise SchemaError("$.tuning.alphas", "empty alpha grid")
    problem = build_problem(suite.problem, suite.base_dir)
    oracle = solve_centralized(problem, suite.oracle_tol)
    graphs = [build_graph(suite.graph, problem.n, s, suite.base_dir) for s in suite.seeds]
    options = next((r.options for r in suite.runs if r.algorithm == algorithm), {})

    points = []
    for a in alphas:
        if betas is None:
            bs = [tuning.get("alpha_beta", DEFAULT_ALPHA_BETA) / a] if algorithm in ("frsd", "frsd-cs") \
                else [0.0]
        else:
            bs = list(betas) if algorithm in MOMENTUM else [0.0]
        points += [(a, b) for b in bs]

    table = []
    for a, b in points:
        its, finals, diverged = [], [], False
        for seed, g in zip(suite.seeds, graphs):
            cfg = SimulationConfig(algorithm, g, problem, a, b, iterations=budget,
                                   cadence=suite.cadence, seed=seed, x_star=oracle.x_star,
                                   options=options, stop_residual=target, divergence=DIVERGED)
            try:
                tr = run(cfg)
            except ValueError:
                diverged = True
                break
            if tr.diverged:
                diverged = True
                break
            hit = tr.iterations_to(target)
            its.append(math.inf if hit is None else hit)
            finals.append(tr.residual[-1])
        row = {"alpha": a, "beta": b, "diverged": diverged}
        if not diverged:
            mean_its = float(np.mean(its))
            row["iterations"] = mean_its if math.isfinite(mean_its) else None
            row["final_residual"] = float(np.mean(finals))
        table.append(row)
    ok = [r for r in table if not r["diverged"]]
    if not ok:
        raise AllDiverged(f"every grid point diverged for {algorithm}")
    best = min(ok, key=lambda r: (math.inf if r["iterations"] is None else r["iterations"],
                                  r["final_residual"], r["alpha"]))
    return TuneResult(best["alpha"], best["beta"], best["iterations"], best["final_residual"], table)


# -- argument handling


def _parser():
    ap = argparse.ArgumentParser(prog="frsd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", type=Path)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--cadence", type=int)

    p = sub.add_parser("run", help="run an experiment suite")
    p.add_argument("config", type=Path)
    common(p)

    p = sub.add_parser("tune", help="grid-search step sizes for one algorithm")
    p.add_argument("config", type=Path)
    p.add_argument("--algorithm", required=True)
    common(p)

    p = sub.add_parser("analyze", help="spectral report for FRSD on a graph file")
    p.add_argument("graph", type=Path)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--lipschitz", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.01)
    common(p)

    p = sub.add_parser("gen-graph", help="generate a strongly connected random digraph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    return ap


def _apply_flags(suite, args):
    if args.out_dir is not None:
        suite.output_dir = args.out_dir
    if args.cadence is not None:
        suite.cadence = args.cadence
    suite.threads = args.threads
    return suite


def _emit(text, out_dir, filename):
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / filename).write_text(text + "\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            suite = _apply_flags(parse_config(args.config), args)
            summary = run_suite(suite)
            for r in summary["runs"]:
                log.info("%s seed %s: final residual %.3e", r["name"], r["seed"], r["final_residual"])
            print(f"wrote {len(summary['runs'])} traces and summary.json to {suite.output_dir}")
        elif args.command == "tune":
            suite = _apply_flags(parse_config(args.config), args)
            res = tune_grid(suite, args.algorithm)
            _emit(json.dumps(asdict(res), indent=2), args.out_dir, f"tune_{args.algorithm}.json")
        elif args.command == "analyze":
            g = read_graph(args.graph)
            report = analyze(g, args.alpha, args.beta, L=args.lipschitz, mu=args.mu)
            _emit(report.to_json(), args.out_dir, "theory.json")
        else:
            g = generate_strongly_connected(args.n, args.phi, args.seed)
            write_graph(g, args.out)
            print(f"wrote {g.n} nodes, {g.num_edges} edges to {args.out}")
    except (SchemaError, UnknownAlgorithm, ParseError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OracleDidNotConverge as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 4
    except (FRSDError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
