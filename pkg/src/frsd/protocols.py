"""Node-local state machines for FRSD and the baseline methods.

Every algorithm is written once, in node-local form: a step reads the node's
own state plus weighted mixes of what its in-neighbours broadcast last
round, and returns the new state together with the next broadcast.

The same step code runs in two settings:

* one node at a time (``NodeContext`` / ``NodeInbox``): vectors have shape
  ``(p,)``, the inbox holds the actual messages keyed by sender;
* all nodes at once (``BatchContext`` / ``BatchInbox``): vectors are stacked
  into ``(n, p)`` arrays and a mix is a product with the weight matrix,
  whose support is exactly the closed in-neighbourhoods.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from functools import partial
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateEigenvalue, MissingWeights, UnknownAlgorithm

EIGEN_FLOOR = 1e-12


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass
class NodeState:
    """Union of the per-node variables; each algorithm uses a subset.

    ``g_prev`` holds the local gradient at the current iterate (divided by
    the eigenvector estimate for row-stochastic trackers), so it never has
    to be recomputed from a stored previous iterate.
    """

    x: np.ndarray
    y: np.ndarray | None = None
    v: np.ndarray | None = None
    s: np.ndarray | None = None
    s_prev: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    g_prev: np.ndarray | None = None
    k: int = 0

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "k"
                and getattr(self, f.name) is not None}


@dataclass(frozen=True, eq=False)
class Broadcast:
    fields: dict
    size: int

    @property
    def payload(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.fields.values()])

    def __getitem__(self, key):
        return self.fields[key]


# -- execution contexts


class NodeContext:
    batched = False

    def __init__(self, i: int, n: int, grad: Callable):
        self.i = i
        self.n = n
        self.grad = grad

    def own(self, v):
        return v[self.i]

    def unit(self):
        e = np.zeros(self.n)
        e[self.i] = 1.0
        return e

    def push_weight(self):
        return np.ones(1)

    def check_floor(self, d, what):
        if not d >= EIGEN_FLOOR:
            raise DegenerateEigenvalue(f"{what} = {float(d):.3e} below {EIGEN_FLOOR}", (self.i,))

    def broadcast(self, **fields):
        return Broadcast(fields, sum(np.size(v) for v in fields.values()))


class BatchContext:
    batched = True

    def __init__(self, n: int, grad: Callable):
        self.n = n
        self.grad = grad

    def own(self, v):
        return np.diagonal(v)[:, None]

    def unit(self):
        return np.eye(self.n)

    def push_weight(self):
        return np.ones((self.n, 1))

    def check_floor(self, d, what):
        bad = np.flatnonzero(~(np.ravel(d) >= EIGEN_FLOOR))
        if bad.size:
            raise DegenerateEigenvalue(f"{what} below {EIGEN_FLOOR} at nodes {bad.tolist()}", bad)

    def broadcast(self, **fields):
        return Broadcast(fields, sum(v.shape[1] for v in fields.values()))


class NodeInbox:
    """Snapshot of the messages one node received, with its weight rows.

    ``row`` / ``col`` map sender index to ``r_ij`` / ``b_ij``.
    """

    def __init__(self, messages: Mapping[int, Broadcast], row=None, col=None):
        self.messages = messages
        self.row = row
        self.col = col

    def mix(self, name, kind="row"):
        w = self.row if kind == "row" else self.col
        if w is None:
            raise MissingWeights(f"{kind}-stochastic weights required")
        acc = None
        for j in sorted(w):
            if j not in self.messages:
                raise KeyError(f"no message from in-neighbour {j}")
            term = w[j] * self.messages[j][name]
            acc = term if acc is None else acc + term
        return acc


class BatchInbox:
    def __init__(self, broadcast: Broadcast, row=None, col=None):
        self.fields = broadcast.fields
        self.row = row
        self.col = col

    def mix(self, name, kind="row"):
        w = self.row if kind == "row" else self.col
        if w is None:
            raise MissingWeights(f"{kind}-stochastic weights required")
        return w @ self.fields[name]


# -- algorithms


class Algorithm:
    name = ""
    weights = ("row",)
    phases = 1
    comm = None  # nominal broadcast scalars per iteration: callable (n, p)
    memory = None  # nominal stored scalars: callable (n, p)
    stored = ()  # (field, unit) with unit in {"p", "n", "1"}

    def check(self, hp: HyperParams):
        pass

    def init(self, ctx, x0, hp):
        raise NotImplementedError

    def step(self, ctx, state, inbox, hp, phase=0):
        raise NotImplementedError

    def estimate(self, state):
        return state.x

    def stored_size(self, n, p):
        unit = {"p": p, "n": n, "1": 1}
        return sum(unit[u] for _, u in self.stored)


class FRSD(Algorithm):
    """Row-stochastic method with implicit gradient tracking.

    ``corrected`` selects the corrected-step variant (FRSD-CS), which scales
    the whole descent direction by the local eigenvector entry. With
    ``debias=False`` the gradient is not divided by that entry; this is only
    meaningful for doubly stochastic weights.
    """

    comm = staticmethod(lambda n, p: p + n)
    memory = staticmethod(lambda n, p: 2 * p + n)
    stored = (("x", "p"), ("y", "p"), ("v", "n"))

    def __init__(self, corrected=False, debias=True):
        if corrected and not debias:
            raise ValueError("the corrected step needs the eigenvector estimate")
        self.corrected = corrected
        self.debias = debias
        self.name = "frsd-cs" if corrected else "frsd"

    def check(self, hp):
        if not hp.alpha * hp.beta < 1:
            raise ValueError("FRSD requires alpha * beta < 1")

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        st = NodeState(x=x0, y=np.zeros_like(x0), v=ctx.unit())
        return st, ctx.broadcast(x=st.x, v=st.v)

    def step(self, ctx, state, inbox, hp, phase=0):
        mix_x = inbox.mix("x")
        mix_v = inbox.mix("v")
        # y(k) = y(k-1) + beta (x(k) - sum_j r_ij x_j(k)), skipped at k = 0
        y = state.y if state.k == 0 else state.y + hp.beta * (state.x - mix_x)
        d = ctx.own(state.v)
        ctx.check_floor(d, "[v_i]_i")
        g = ctx.grad(state.x)
        if self.corrected:
            x = mix_x - hp.alpha * d * (y + g / d)
        elif self.debias:
            x = mix_x - hp.alpha * (g / d + y)
        else:
            x = mix_x - hp.alpha * (g + y)
        st = NodeState(x=x, y=y, v=mix_v, k=state.k + 1)
        return st, ctx.broadcast(x=x, v=mix_v)


class XiRow(Algorithm):
    name = "xi-row"
    comm = staticmethod(lambda n, p: 2 * p + n)
    memory = staticmethod(lambda n, p: 3 * p + n)
    stored = (("x", "p"), ("y", "p"), ("v", "n"), ("g_prev", "p"))

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        v = ctx.unit()
        g = ctx.grad(x0) / ctx.own(v)
        st = NodeState(x=x0, y=g.copy(), v=v, g_prev=g)
        return st, ctx.broadcast(x=st.x, y=st.y, v=v)

    def step(self, ctx, state, inbox, hp, phase=0):
        x = inbox.mix("x") - hp.alpha * state.y
        v = inbox.mix("v")
        d = ctx.own(v)
        ctx.check_floor(d, "[v_i]_i")
        g = ctx.grad(x) / d
        y = inbox.mix("y") + g - state.g_prev
        st = NodeState(x=x, y=y, v=v, g_prev=g, k=state.k + 1)
        return st, ctx.broadcast(x=x, y=y, v=v)


class Frozen(Algorithm):
    """Row-stochastic tracking with Nesterov extrapolation on ``s``.

    ``heavy_ball`` adds the ``beta (s(k) - s(k-1))`` term of D-DNGT.
    """

    comm = staticmethod(lambda n, p: 2 * p + n)

    def __init__(self, heavy_ball=False):
        self.heavy_ball = heavy_ball
        self.name = "d-dngt" if heavy_ball else "frozen"
        if heavy_ball:
            self.memory = lambda n, p: 5 * p + n
            self.stored = (("x", "p"), ("y", "p"), ("s", "p"), ("s_prev", "p"),
                           ("v", "n"), ("g_prev", "p"))
        else:
            self.memory = lambda n, p: 4 * p + n
            self.stored = (("x", "p"), ("y", "p"), ("s", "p"), ("v", "n"), ("g_prev", "p"))

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        v = ctx.unit()
        g = ctx.grad(x0) / ctx.own(v)
        st = NodeState(x=x0, y=g.copy(), v=v, s=x0.copy(), g_prev=g,
                       s_prev=x0.copy() if self.heavy_ball else None)
        return st, ctx.broadcast(x=st.x, y=st.y, v=v)

    def step(self, ctx, state, inbox, hp, phase=0):
        s = inbox.mix("x") - hp.alpha * state.y
        if self.heavy_ball:
            s = s + hp.beta * (state.s - state.s_prev)
        x = s + hp.beta * (s - state.s)
        v = inbox.mix("v")
        d = ctx.own(v)
        ctx.check_floor(d, "[v_i]_i")
        g = ctx.grad(x) / d
        y = inbox.mix("y") + g - state.g_prev
        st = NodeState(x=x, y=y, v=v, s=s, g_prev=g, k=state.k + 1,
                       s_prev=state.s if self.heavy_ball else None)
        return st, ctx.broadcast(x=x, y=y, v=v)


class AB(Algorithm):
    """Row weights on ``x``, column weights on the tracker.

    Default is the adapt-then-combine tracker
    ``y_i(k+1) = sum_j b_ij (y_j(k) + grad f_j(x_j(k+1)) - grad f_j(x_j(k)))``.
    A node ships ``x_j(k+1)`` together with its adapted tracker, and the
    receivers combine it at the start of the next round.
    ``combine_then_adapt`` instead uses ``sum_j b_ij y_j(k) + (local gradient
    difference)``. ``momentum`` enables the heavy-ball term of ABm.
    """

    weights = ("row", "col")
    comm = staticmethod(lambda n, p: 2 * p)
    memory = staticmethod(lambda n, p: 3 * p)

    def __init__(self, momentum=False, combine_then_adapt=False):
        self.momentum = momentum
        self.cta = combine_then_adapt
        self.name = "abm" if momentum else "ab"
        self.stored = (("x", "p"), ("y", "p"), ("g_prev", "p"))
        if momentum:
            self.stored += (("x_prev", "p"),)

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        g = ctx.grad(x0)
        st = NodeState(x=x0, y=g.copy(), g_prev=g, x_prev=x0.copy() if self.momentum else None)
        second = st.y if self.cta else np.zeros_like(x0)
        return st, ctx.broadcast(x=st.x, w=second)

    def step(self, ctx, state, inbox, hp, phase=0):
        if self.cta or state.k == 0:
            y = state.y
        else:
            y = inbox.mix("w", "col")
        x = inbox.mix("x") - hp.alpha * y
        if self.momentum:
            x = x + hp.beta * (state.x - state.x_prev)
        g = ctx.grad(x)
        if self.cta:
            y_next = inbox.mix("w", "col") + g - state.g_prev
            st = NodeState(x=x, y=y_next, g_prev=g, k=state.k + 1,
                           x_prev=state.x if self.momentum else None)
            return st, ctx.broadcast(x=x, w=y_next)
        w = y + g - state.g_prev
        st = NodeState(x=x, y=y, g_prev=g, k=state.k + 1,
                       x_prev=state.x if self.momentum else None)
        return st, ctx.broadcast(x=x, w=w)


class ABN(Algorithm):
    name = "abn"
    weights = ("row", "col")
    comm = staticmethod(lambda n, p: 2 * p)
    memory = staticmethod(lambda n, p: 4 * p)
    stored = (("x", "p"), ("y", "p"), ("s", "p"), ("g_prev", "p"))

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        g = ctx.grad(x0)
        st = NodeState(x=x0, y=g.copy(), s=x0.copy(), g_prev=g)
        return st, ctx.broadcast(x=st.x, y=st.y)

    def step(self, ctx, state, inbox, hp, phase=0):
        s = inbox.mix("x") - hp.alpha * state.y
        x = s + hp.beta * (s - state.s)
        g = ctx.grad(x)
        y = inbox.mix("y", "col") + g - state.g_prev
        st = NodeState(x=x, y=y, s=s, g_prev=g, k=state.k + 1)
        return st, ctx.broadcast(x=x, y=y)


class PushPull(Algorithm):
    """``x_i(k+1) = sum_j r_ij (x_j(k) - alpha y_j(k))`` with the AB tracker.

    The row mix needs the neighbours' current trackers and the column mix
    needs their new iterates, so an iteration is two exchanges of ``p``
    scalars: phase 0 delivers ``x - alpha y``, phase 1 the adapted tracker.
    """

    name = "push-pull"
    weights = ("row", "col")
    phases = 2
    comm = staticmethod(lambda n, p: 2 * p)
    memory = staticmethod(lambda n, p: 3 * p)
    stored = (("x", "p"), ("y", "p"), ("g_prev", "p"))

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        g = ctx.grad(x0)
        st = NodeState(x=x0, y=g.copy(), g_prev=g)
        return st, ctx.broadcast(u=x0 - hp.alpha * st.y)

    def step(self, ctx, state, inbox, hp, phase=0):
        if phase == 0:
            x = inbox.mix("u")
            g = ctx.grad(x)
            w = state.y + g - state.g_prev
            return replace(state, x=x, g_prev=g), ctx.broadcast(w=w)
        y = inbox.mix("w", "col")
        st = replace(state, y=y, k=state.k + 1)
        return st, ctx.broadcast(u=state.x - hp.alpha * y)


class PushDIGing(Algorithm):
    name = "push-diging"
    weights = ("col",)
    comm = staticmethod(lambda n, p: 2 * p + 1)
    memory = staticmethod(lambda n, p: 3 * p + 1)
    stored = (("x", "p"), ("y", "p"), ("v", "1"), ("g_prev", "p"))

    def init(self, ctx, x0, hp):
        x0 = np.array(x0, dtype=float)
        v = ctx.push_weight()
        g = ctx.grad(x0 / v)
        st = NodeState(x=x0, y=g.copy(), v=v, g_prev=g)
        return st, ctx.broadcast(x=st.x, y=st.y, v=v)

    def step(self, ctx, state, inbox, hp, phase=0):
        v = inbox.mix("v", "col")
        ctx.check_floor(v, "push-sum weight")
        x = inbox.mix("x", "col") - hp.alpha * inbox.mix("y", "col")
        g = ctx.grad(x / v)
        y = inbox.mix("y", "col") + g - state.g_prev
        st = NodeState(x=x, y=y, v=v, g_prev=g, k=state.k + 1)
        return st, ctx.broadcast(x=x, y=y, v=v)

    def estimate(self, state):
        return state.x / state.v


ALGORITHM_NAMES = ("frsd", "frsd-cs", "xi-row", "frozen", "d-dngt",
                   "ab", "abm", "abn", "push-pull", "push-diging")

_FACTORIES = {
    "frsd": lambda **kw: FRSD(corrected=False, **kw),
    "frsd-cs": lambda **kw: FRSD(corrected=True, **kw),
    "xi-row": XiRow,
    "frozen": lambda: Frozen(heavy_ball=False),
    "d-dngt": lambda: Frozen(heavy_ball=True),
    "ab": lambda **kw: AB(momentum=False, **kw),
    "abm": lambda **kw: AB(momentum=True, **kw),
    "abn": ABN,
    "push-pull": PushPull,
    "push-diging": PushDIGing,
}

# methods with a momentum parameter; beta is ignored by the others
MOMENTUM = ("frsd", "frsd-cs", "frozen", "d-dngt", "abm", "abn")


def get_algorithm(name, **options) -> Algorithm:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise UnknownAlgorithm(f"unknown algorithm {name!r}; known: {', '.join(ALGORITHM_NAMES)}") from None
    return factory(**options)


def comm_size(algorithm, n, p) -> int:
    """Scalars one node broadcasts per iteration."""
    return int(get_algorithm(algorithm).comm(n, p))


def memory_size(algorithm, n, p) -> int:
    """Scalars one node stores."""
    return int(get_algorithm(algorithm).memory(n, p))


def stored_size(algorithm, n, p) -> int:
    """Scalars held in this implementation's ``NodeState`` (excluding the round counter)."""
    return int(get_algorithm(algorithm).stored_size(n, p))


# -- single-node entry points


def _row_dict(weights, i):
    if weights is None:
        return None
    w = weights.entries if hasattr(weights, "entries") else np.asarray(weights)
    row = w[i]
    return {int(j): float(row[j]) for j in np.flatnonzero(row)}


def node_inbox(messages, i, row=None, col=None) -> NodeInbox:
    """Inbox for node ``i`` from full weight matrices (only row ``i`` is read)."""
    return NodeInbox(messages, _row_dict(row, i), _row_dict(col, i))


def node_init(algorithm, i, n, x0, grad, hp, **options):
    alg = algorithm if isinstance(algorithm, Algorithm) else get_algorithm(algorithm, **options)
    alg.check(hp)
    return alg.init(NodeContext(i, n, grad), x0, hp)


def node_step(algorithm, i, n, state, inbox, grad, hp, phase=0, **options):
    alg = algorithm if isinstance(algorithm, Algorithm) else get_algorithm(algorithm, **options)
    alg.check(hp)
    return alg.step(NodeContext(i, n, grad), state, inbox, hp, phase)


def frsd_init(i, x0, n) -> NodeState:
    """``x = x0``, ``y = 0``, ``v = e_i`` for the 1-based node label ``i``."""
    if not 1 <= i <= n:
        raise ValueError(f"node label {i} outside 1..{n}")
    x0 = np.array(x0, dtype=float)
    e = np.zeros(n)
    e[i - 1] = 1.0
    return NodeState(x=x0, y=np.zeros_like(x0), v=e)


frsd_step = partial(node_step, "frsd")
frsd_cs_step = partial(node_step, "frsd-cs")
xi_row_step = partial(node_step, "xi-row")
frozen_step = partial(node_step, "frozen")
ddngt_step = partial(node_step, "d-dngt")
ab_step = partial(node_step, "ab")
abm_step = partial(node_step, "abm")
abn_step = partial(node_step, "abn")
push_pull_step = partial(node_step, "push-pull")
push_diging_step = partial(node_step, "push-diging")
