"""Synchronous round-based simulator, centralised oracle and trace metrics."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .digraph import DiGraph, build_uniform_column_stochastic, build_uniform_row_stochastic
from .errors import (
    DegenerateEigenvalue,
    DegenerateStart,
    InsufficientData,
    OracleDidNotConverge,
    StepError,
)
from .objectives import ProblemInstance
from .protocols import (
    Algorithm,
    BatchContext,
    BatchInbox,
    HyperParams,
    NodeContext,
    NodeInbox,
    get_algorithm,
)

CSV_HEADER = ("k", "residual", "consensus_violation", "grad_norm", "cum_broadcast_scalars")
RATE_FLOOR = 1e-13


# -- centralised oracle


@dataclass
class OracleSolution:
    x_star: np.ndarray
    grad_norm: float
    iterations: int

    def stacked(self, n) -> np.ndarray:
        """``1_n kron x*`` as an ``(n, p)`` array."""
        return np.tile(self.x_star, (n, 1))


def solve_centralized(problem: ProblemInstance, tol=1e-12, max_iter=10**6) -> OracleSolution:
    """Gradient descent on the mean objective with Armijo backtracking from 0.

    Trial steps start at twice the last accepted one and halve until the
    sufficient-decrease test (constant 1e-4) holds. Steps at or below ``1/L``
    are accepted outright since they always decrease a smooth objective; near
    the optimum the decrease falls under the rounding error of ``f`` and the
    test alone would stall.
    """
    x = np.zeros(problem.dim)
    safe = 1.0 / problem.L
    t = safe
    f = problem.mean_value(x)
    g = problem.mean_grad(x)
    gn = float(np.linalg.norm(g))
    best = (gn, x.copy())
    for it in range(max_iter):
        if gn <= tol:
            return OracleSolution(x, gn, it)
        t = 2.0 * t
        gg = gn * gn
        while True:
            trial = x - t * g
            ft = problem.mean_value(trial)
            if t <= safe or ft <= f - 1e-4 * t * gg:
                break
            t *= 0.5
        x, f = trial, ft
        g = problem.mean_grad(x)
        gn = float(np.linalg.norm(g))
        if gn < best[0]:
            best = (gn, x.copy())
    if gn <= tol:
        return OracleSolution(x, gn, max_iter)
    raise OracleDidNotConverge(
        f"gradient norm {best[0]:.3e} > {tol:.1e} after {max_iter} iterations", best[1], best[0]
    )


# -- metrics


def _residual_scale(x0_stack, x_star_stack) -> float:
    den = float(np.linalg.norm(np.asarray(x0_stack, dtype=float) - x_star_stack))
    if den < 1e-300:
        raise DegenerateStart("x(0) coincides with the optimum")
    return den


def residual(x_stack, x_star_stack, x0_stack) -> float:
    """``||x - x*|| / ||x(0) - x*||`` over the stacked iterate."""
    den = _residual_scale(x0_stack, x_star_stack)
    return float(np.linalg.norm(np.asarray(x_stack, dtype=float) - x_star_stack) / den)


def _edge_index(graph: DiGraph):
    return np.array(sorted(graph.edges), dtype=int).reshape(-1, 2)


def _max_edge_gap(x, e) -> float:
    if len(e) == 0:
        return 0.0
    d = x[e[:, 0]] - x[e[:, 1]]
    return float(np.sqrt(np.max(np.einsum("ep,ep->e", d, d))))


def consensus_violation(x_stack, graph: DiGraph) -> float:
    """Largest Euclidean distance between the iterates at the two ends of an edge."""
    x = np.asarray(x_stack, dtype=float).reshape(graph.n, -1)
    return _max_edge_gap(x, _edge_index(graph))


@dataclass
class Trace:
    algorithm: str = ""
    k: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    consensus_violation: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    cum_broadcast: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    diverged: bool = False
    final_estimate: np.ndarray | None = None

    def append(self, k, r, cv, gn, cum, wall):
        self.k.append(int(k))
        self.residual.append(float(r))
        self.consensus_violation.append(float(cv))
        self.grad_norm.append(float(gn))
        self.cum_broadcast.append(int(cum))
        self.wall_clock.append(float(wall))

    def __len__(self):
        return len(self.k)

    def iterations_to(self, threshold):
        """First recorded ``k`` with ``r(k) <= threshold``, else None."""
        for k, r in zip(self.k, self.residual):
            if r <= threshold:
                return k
        return None

    def broadcast_to(self, threshold):
        for c, r in zip(self.cum_broadcast, self.residual):
            if r <= threshold:
                return c
        return None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in zip(self.k, self.residual, self.consensus_violation, self.grad_norm,
                           self.cum_broadcast):
                k, r, cv, gn, c = row
                w.writerow([k, f"{r:.17g}", f"{cv:.17g}", f"{gn:.17g}", c])

    @classmethod
    def from_csv(cls, path, algorithm=""):
        t = cls(algorithm=algorithm)
        with open(path, newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows)
            if tuple(header) != CSV_HEADER:
                raise ValueError(f"unexpected trace header {header}")
            for k, r, cv, gn, c in rows:
                t.append(int(k), float(r), float(cv), float(gn), int(c), float("nan"))
        return t


def fit_linear_rate(trace, tail_fraction=0.5):
    """Least-squares fit of ``ln r(k)`` against ``k`` over the trailing window.

    Points with ``r(k) < 1e-13`` are dropped first. Returns
    ``(slope, r_squared)``; a window on which the fit is exact (including a
    constant residual) has ``R^2 = 1``.
    """
    if isinstance(trace, Trace):
        ks, rs = np.asarray(trace.k, float), np.asarray(trace.residual, float)
    else:
        ks, rs = (np.asarray(a, float) for a in trace)
    keep = np.isfinite(rs) & (rs >= RATE_FLOOR)
    ks, rs = ks[keep], rs[keep]
    start = int(np.floor(len(ks) * (1.0 - tail_fraction)))
    ks, ys = ks[start:], np.log(rs[start:])
    if len(ks) < 10:
        raise InsufficientData(f"{len(ks)} usable points in the fit window, need 10")
    slope, icept = np.polyfit(ks, ys, 1)
    ss_res = float(np.sum((ys - (slope * ks + icept)) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot <= 1e-30 * max(1.0, float(np.sum(ys**2))):
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


# -- simulation


@dataclass
class SimulationConfig:
    """One simulated run.

    ``executor="batched"`` updates all nodes at once through stacked arrays;
    ``"message"`` runs every node separately against its own inbox of
    in-neighbour messages (optionally on ``threads`` workers). Both execute
    the same step code. The run stops early once ``r(k) <= stop_residual``
    or ``r(k) > divergence``.
    """

    algorithm: str
    graph: DiGraph
    problem: ProblemInstance
    alpha: float
    beta: float = 0.0
    iterations: int = 5000
    cadence: int = 1
    seed: int = 0
    oracle_tol: float = 1e-12
    x0: np.ndarray | None = None
    x_star: np.ndarray | None = None
    options: dict = field(default_factory=dict)
    executor: str = "batched"
    threads: int = 1
    stop_residual: float | None = None
    divergence: float = 1e3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        if self.executor not in ("batched", "message"):
            raise ValueError(f"unknown executor {self.executor!r}")
        if self.graph.n != self.problem.n:
            raise ValueError(f"graph has {self.graph.n} nodes, problem has {self.problem.n}")


def _weights(alg: Algorithm, graph):
    row = build_uniform_row_stochastic(graph).entries if "row" in alg.weights else None
    col = build_uniform_column_stochastic(graph).entries if "col" in alg.weights else None
    return row, col


SPARSE_FILL = 0.05


def _mixing_operator(w):
    """CSR copy of ``w`` when at most ``SPARSE_FILL`` of its entries are nonzero."""
    if w is None or np.count_nonzero(w) > SPARSE_FILL * w.size:
        return w
    return scipy.sparse.csr_array(w)


class _Batched:
    def __init__(self, alg, problem, row, col, x0, hp):
        self.alg, self.hp = alg, hp
        self.row, self.col = _mixing_operator(row), _mixing_operator(col)
        self.ctx = BatchContext(problem.n, problem.grad_stack)
        self.state, self.bc = alg.init(self.ctx, x0, hp)

    def round(self, k):
        size = 0
        for phase in range(self.alg.phases):
            size += self.bc.size
            inbox = BatchInbox(self.bc, self.row, self.col)
            try:
                self.state, self.bc = self.alg.step(self.ctx, self.state, inbox, self.hp, phase)
            except DegenerateEigenvalue as exc:
                raise StepError(k, exc.nodes[0] if exc.nodes else None, exc) from exc
            except Exception as exc:
                raise StepError(k, None, exc) from exc
        return size

    def estimate(self):
        return self.alg.estimate(self.state)


class _Messages:
    def __init__(self, alg, problem, graph, row, col, x0, hp, threads):
        self.alg, self.hp, self.n = alg, hp, problem.n
        self.senders = [sorted(graph.closed_in_neighbors(i)) for i in range(self.n)]
        self.rows = [None if row is None else {j: float(row[i, j]) for j in s}
                     for i, s in enumerate(self.senders)]
        self.cols = [None if col is None else {j: float(col[i, j]) for j in s}
                     for i, s in enumerate(self.senders)]
        self.ctxs = [NodeContext(i, self.n, problem.locals[i].grad) for i in range(self.n)]
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None
        out = [alg.init(self.ctxs[i], x0[i], hp) for i in range(self.n)]
        self.states = [s for s, _ in out]
        self.bcs = [b for _, b in out]

    def _node(self, i, k, phase, snapshot):
        inbox = NodeInbox({j: snapshot[j] for j in self.senders[i]}, self.rows[i], self.cols[i])
        try:
            return self.alg.step(self.ctxs[i], self.states[i], inbox, self.hp, phase)
        except Exception as exc:
            raise StepError(k, i, exc) from exc

    def round(self, k):
        size = 0
        for phase in range(self.alg.phases):
            snapshot = tuple(self.bcs)
            sizes = {b.size for b in snapshot}
            if len(sizes) != 1:
                raise StepError(k, None, f"nodes broadcast different payload sizes {sorted(sizes)}")
            size += sizes.pop()
            nodes = range(self.n)
            if self.pool is None:
                out = [self._node(i, k, phase, snapshot) for i in nodes]
            else:
                out = list(self.pool.map(lambda i: self._node(i, k, phase, snapshot), nodes))
            self.states = [s for s, _ in out]
            self.bcs = [b for _, b in out]
        return size

    def estimate(self):
        return np.stack([self.alg.estimate(s).reshape(-1) for s in self.states])

    @property
    def state(self):
        return self.states

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run(config: SimulationConfig, observer=None) -> Trace:
    """Simulate ``config.iterations`` synchronous rounds and record metrics.

    Every round, each node's inbox holds the previous round's broadcasts of
    its closed in-neighbourhood. ``observer(k, state)`` is called after
    initialisation (``k = 0``) and after every round; ``state`` is the stacked
    ``NodeState`` for the batched executor and a list of per-node states
    otherwise.
    """
    problem, graph = config.problem, config.graph
    n, p = problem.n, problem.dim
    alg = get_algorithm(config.algorithm, **config.options)
    hp = HyperParams(config.alpha, config.beta)
    alg.check(hp)
    row, col = _weights(alg, graph)
    x0 = np.zeros((n, p)) if config.x0 is None else np.array(config.x0, dtype=float).reshape(n, p)
    if config.x_star is None:
        x_star = solve_centralized(problem, config.oracle_tol).x_star
    else:
        x_star = np.asarray(config.x_star, dtype=float)
    xs = np.tile(x_star, (n, 1))

    if config.executor == "batched":
        sim = _Batched(alg, problem, row, col, x0, hp)
    else:
        sim = _Messages(alg, problem, graph, row, col, x0, hp, config.threads)
    trace = Trace(algorithm=alg.name)
    t0 = time.perf_counter()
    scale = _residual_scale(sim.estimate(), xs)
    edges = _edge_index(graph)

    def record(k, cum):
        est = sim.estimate()
        if not np.all(np.isfinite(est)):
            trace.append(k, np.inf, np.inf, np.inf, cum, time.perf_counter() - t0)
            trace.diverged = True
            return False
        diff = est - xs
        r = float(np.sqrt(np.vdot(diff, diff))) / scale
        mean_grad = problem.grad_stack(est).sum(axis=0) / n
        gn = float(np.sqrt(mean_grad @ mean_grad))
        trace.append(k, r, _max_edge_gap(est, edges), gn, cum, time.perf_counter() - t0)
        if r > config.divergence:
            trace.diverged = True
            return False
        return config.stop_residual is None or r > config.stop_residual

    # diverging runs overflow on the way to being flagged
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            if observer is not None:
                observer(0, sim.state)
            going = record(0, 0)
            cum = 0
            for k in range(1, config.iterations + 1):
                if not going:
                    break
                cum += sim.round(k - 1)
                if observer is not None:
                    observer(k, sim.state)
                if k % config.cadence == 0 or k == config.iterations:
                    going = record(k, cum)
                elif not np.all(np.isfinite(sim.estimate())):
                    going = record(k, cum)
        finally:
            if hasattr(sim, "close"):
                sim.close()
    trace.final_estimate = sim.estimate()
    return trace
