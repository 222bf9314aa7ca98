"""Directed communication graphs and the stochastic weight matrices built on them.

Nodes are indexed ``0..n-1``. An edge ``(j, i)`` means node ``j`` can send to
node ``i``. Self-loops are never stored; every node implicitly hears itself,
so the closed in-neighbourhood of ``i`` is ``{j : (j, i) in edges} | {i}``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InfeasibleDensity, NonConvergence, ParseError

STATIONARY_STEP_TOL = 1e-13
STATIONARY_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class DiGraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a graph needs at least one node")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise ValueError(f"edge {(j, i)} out of range for n={self.n}")
            if j == i:
                raise ValueError(f"self-loop {(j, i)} must not be stored")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "DiGraph":
        return cls(n, frozenset(edges))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def in_neighbors(self, i: int) -> list[int]:
        """In-neighbours of ``i``, excluding ``i`` itself, sorted."""
        return sorted(j for j, t in self.edges if t == i)

    def out_neighbors(self, j: int) -> list[int]:
        return sorted(t for s, t in self.edges if s == j)

    def closed_in_neighbors(self, i: int) -> list[int]:
        return sorted(set(self.in_neighbors(i)) | {i})

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 matrix with ``A[i, j] = 1`` iff ``(j, i)`` is an edge."""
        a = np.zeros((self.n, self.n))
        for j, i in self.edges:
            a[i, j] = 1.0
        return a

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)


def directed_cycle(n: int) -> DiGraph:
    return DiGraph(n, frozenset((i, (i + 1) % n) for i in range(n) if n > 1))


def complete_digraph(n: int) -> DiGraph:
    return DiGraph(n, frozenset((j, i) for j in range(n) for i in range(n) if i != j))


def cycle_with_chords(n: int, stride: int = 3, every: int = 2) -> DiGraph:
    """Directed cycle ``0 -> 1 -> ... -> 0`` plus chords ``i -> i + stride``
    from every ``every``-th node."""
    edges = set(directed_cycle(n).edges)
    for i in range(0, n, every):
        t = (i + stride) % n
        if t != i:
            edges.add((i, t))
    return DiGraph(n, frozenset(edges))


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    kind: str  # "row" or "column"
    entries: np.ndarray
    graph: DiGraph

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    pi: np.ndarray


def build_uniform_row_stochastic(g: DiGraph) -> MixingMatrix:
    """``r_ij = 1 / |N_i^in|`` on the closed in-neighbourhood, zero elsewhere."""
    a = g.adjacency() + np.eye(g.n)
    r = a / a.sum(axis=1, keepdims=True)
    r.setflags(write=False)
    return MixingMatrix("row", r, g)


def build_uniform_column_stochastic(g: DiGraph) -> MixingMatrix:
    """``b_ij = 1 / (outdeg(j) + 1)`` for ``i`` in ``j``'s closed out-neighbourhood."""
    a = g.adjacency() + np.eye(g.n)
    b = a / a.sum(axis=0, keepdims=True)
    b.setflags(write=False)
    return MixingMatrix("column", b, g)


def metropolis_weights(g: DiGraph) -> np.ndarray:
    """Symmetric doubly stochastic weights for an undirected (symmetric) graph."""
    if not g.is_symmetric():
        raise ValueError("Metropolis weights need a symmetric edge set")
    deg = g.adjacency().sum(axis=1)
    w = np.zeros((g.n, g.n))
    for j, i in g.edges:
        w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return w


def _power_iteration_cap(n: int) -> int:
    return int(math.ceil(100 * n * math.log(1.0 / STATIONARY_STEP_TOL)))


def stationary_distribution(m: MixingMatrix | np.ndarray) -> StationaryDistribution:
    """Left Perron vector of a row-stochastic matrix by power iteration on ``R^T``."""
    r = m.entries if isinstance(m, MixingMatrix) else np.asarray(m, dtype=float)
    n = r.shape[0]
    rt = r.T
    pi = np.full(n, 1.0 / n)
    for _ in range(_power_iteration_cap(n)):
        nxt = rt @ pi
        nxt /= nxt.sum()
        step = np.max(np.abs(nxt - pi))
        pi = nxt
        if step <= STATIONARY_STEP_TOL:
            break
    else:
        raise NonConvergence("stationary distribution power iteration hit its cap")
    if np.min(pi) <= 0.0 or np.max(np.abs(pi @ r - pi)) > STATIONARY_RESIDUAL_TOL:
        raise NonConvergence("stationary distribution is not positive / not stationary")
    pi.setflags(write=False)
    return StationaryDistribution(pi)


def spectral_gap(
    m: MixingMatrix | np.ndarray,
    pi: StationaryDistribution | np.ndarray | None = None,
    tol: float = 1e-13,
    block: int = 8,
) -> float:
    """Spectral radius of ``R - 1 pi^T``.

    Subspace (block power) iteration with Rayleigh-Ritz on the complement of
    the consensus direction. Blocks handle complex-conjugate and other
    equal-modulus eigenvalue groups that defeat single-vector power iteration.
    """
    r = m.entries if isinstance(m, MixingMatrix) else np.asarray(m, dtype=float)
    n = r.shape[0]
    if pi is None:
        pi = stationary_distribution(r)
    pi = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi)
    if n == 1:
        return 0.0
    a = r - np.outer(np.ones(n), pi)
    scale = max(np.linalg.norm(a, ord=np.inf), 1e-300)
    s = min(n - 1, block)
    rng = np.random.default_rng(12345)
    q = rng.standard_normal((n, s))
    q -= np.outer(np.ones(n), pi @ q)
    q, _ = np.linalg.qr(q)

    est_prev = np.inf
    stable = 0
    for _ in range(_power_iteration_cap(n)):
        z = a @ q
        # keep iterates in the invariant complement {x : pi^T x = 0}
        z -= np.outer(np.ones(n), pi @ z)
        if np.linalg.norm(z) <= 1e-14 * scale:
            return 0.0
        ritz = np.linalg.eigvals(q.T @ z)
        est = float(np.max(np.abs(ritz)))
        q, _ = np.linalg.qr(z)
        if abs(est - est_prev) <= tol * max(est, 1e-300) or est <= 1e-14:
            stable += 1
            if stable >= 3:
                return est if est > 1e-14 else 0.0
        else:
            stable = 0
        est_prev = est
    raise NonConvergence("spectral radius iteration hit its cap")


def is_strongly_connected(g: DiGraph) -> bool:
    """Forward and backward reachability from node 0 both cover the graph."""
    out_adj = [[] for _ in range(g.n)]
    in_adj = [[] for _ in range(g.n)]
    for j, i in g.edges:
        out_adj[j].append(i)
        in_adj[i].append(j)

    def reach(adj):
        seen = [False] * g.n
        seen[0] = True
        todo = deque([0])
        count = 1
        while todo:
            u = todo.popleft()
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    count += 1
                    todo.append(w)
        return count

    return reach(out_adj) == g.n and reach(in_adj) == g.n


def edge_budget(n: int, phi: float) -> int:
    """``ceil(phi * n * (n - 1))`` with ``phi`` read as the decimal it prints as."""
    return math.ceil(Fraction(repr(float(phi))) * n * (n - 1))


def _contract_to_cycle_tree(n: int, rng: np.random.Generator) -> set:
    """Merge nodes into one strongly connected component via random cycles.

    Each pass draws a uniform permutation of the current components, wires the
    non-fixed ones into a directed cycle in permutation order and collapses
    them into one super-node. Endpoints inside a super-node are drawn
    uniformly from its members.
    """
    comps = [[i] for i in range(n)]
    edges = set()
    while len(comps) > 1:
        c = len(comps)
        perm = rng.permutation(c)
        moved = [int(perm[i]) for i in range(c) if perm[i] != i]
        if not moved:
            continue
        for a, b in zip(moved, moved[1:] + moved[:1]):
            ca, cb = comps[a], comps[b]
            src = ca[rng.integers(len(ca))] if len(ca) > 1 else ca[0]
            dst = cb[rng.integers(len(cb))] if len(cb) > 1 else cb[0]
            edges.add((src, dst))
        moved_set = set(moved)
        merged = [u for idx in moved for u in comps[idx]]
        comps = [comps[i] for i in range(c) if i not in moved_set] + [merged]
    return edges


def generate_strongly_connected(n: int, phi: float, seed: int) -> DiGraph:
    """Random strongly connected digraph with exactly ``ceil(phi n (n-1))`` edges."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 < phi <= 1.0:
        raise ValueError("phi must lie in (0, 1]")
    if n == 1:
        return DiGraph(1)
    budget = edge_budget(n, phi)
    if budget < n:
        raise InfeasibleDensity(
            f"ceil(phi*n*(n-1)) = {budget} < n = {n}: too few edges for strong connectivity"
        )
    rng = np.random.default_rng(seed)
    while True:
        edges = _contract_to_cycle_tree(n, rng)
        if len(edges) <= budget:
            break
    absent = [(j, i) for j in range(n) for i in range(n) if i != j and (j, i) not in edges]
    extra = budget - len(edges)
    if extra:
        picks = rng.choice(len(absent), size=extra, replace=False)
        edges.update(absent[k] for k in sorted(picks))
    return DiGraph(n, frozenset(edges))


# -- plain text serialisation: "n m" then m lines "j i", 1-based, j -> i


def format_graph(g: DiGraph) -> str:
    lines = [f"{g.n} {g.num_edges}"]
    lines += [f"{j + 1} {i + 1}" for j, i in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> DiGraph:
    rows = [(no, ln.split()) for no, ln in enumerate(text.splitlines(), 1) if ln.strip()]
    if not rows:
        raise ParseError(1, "empty graph file")
    no, head = rows[0]
    try:
        n, m = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ParseError(no, "expected header 'n m'") from None
    if len(head) != 2 or n < 1 or m < 0:
        raise ParseError(no, "expected header 'n m'")
    if len(rows) - 1 != m:
        raise ParseError(no, f"header announces {m} edges, found {len(rows) - 1}")
    edges = set()
    for no, parts in rows[1:]:
        try:
            j, i = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise ParseError(no, "expected edge 'j i'") from None
        if len(parts) != 2 or not (1 <= j <= n and 1 <= i <= n) or i == j:
            raise ParseError(no, f"invalid edge {' '.join(parts)}")
        if (j - 1, i - 1) in edges:
            raise ParseError(no, f"duplicate edge {j} {i}")
        edges.add((j - 1, i - 1))
    return DiGraph(n, frozenset(edges))


def write_graph(g: DiGraph, path) -> None:
    Path(path).write_text(format_graph(g))


def read_graph(path) -> DiGraph:
    return parse_graph(Path(path).read_text())
