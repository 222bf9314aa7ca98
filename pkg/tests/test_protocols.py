import numpy as np
import pytest
from hypothesis import given, strategies as st

from frsd.digraph import (
    DiGraph,
    build_uniform_column_stochastic,
    build_uniform_row_stochastic,
    directed_cycle,
    generate_strongly_connected,
)
from frsd.errors import DegenerateEigenvalue, MissingWeights, UnknownAlgorithm
from frsd.objectives import LocalObjective, ProblemInstance, synth_quadratic_problem
from frsd.protocols import (
    ALGORITHM_NAMES,
    MOMENTUM,
    HyperParams,
    NodeContext,
    NodeState,
    comm_size,
    frsd_init,
    frsd_step,
    get_algorithm,
    memory_size,
    node_inbox,
    node_init,
    node_step,
    stored_size,
)
from frsd.theory import dense_iterates

TABLE_COMM = {
    "frsd": lambda n, p: p + n, "frsd-cs": lambda n, p: p + n,
    "xi-row": lambda n, p: 2 * p + n, "frozen": lambda n, p: 2 * p + n, "d-dngt": lambda n, p: 2 * p + n,
    "push-diging": lambda n, p: 2 * p + 1,
    "ab": lambda n, p: 2 * p, "abm": lambda n, p: 2 * p, "abn": lambda n, p: 2 * p,
    "push-pull": lambda n, p: 2 * p,
}
TABLE_MEMORY = {
    "frsd": lambda n, p: 2 * p + n, "frsd-cs": lambda n, p: 2 * p + n,
    "xi-row": lambda n, p: 3 * p + n, "frozen": lambda n, p: 4 * p + n, "d-dngt": lambda n, p: 5 * p + n,
    "ab": lambda n, p: 3 * p, "abm": lambda n, p: 3 * p, "push-pull": lambda n, p: 3 * p,
    "abn": lambda n, p: 4 * p, "push-diging": lambda n, p: 3 * p + 1,
}


def run_nodes(name, g, problem, x0, hp, rounds, order=None, **options):
    """Drive every node through its own inbox; ``order`` permutes the update sequence."""
    n = g.n
    alg = get_algorithm(name, **options)
    row = build_uniform_row_stochastic(g).entries
    col = build_uniform_column_stochastic(g).entries
    out = [node_init(alg, i, n, x0[i], problem.locals[i].grad, hp) for i in range(n)]
    states, bcs = [s for s, _ in out], [b for _, b in out]
    history = [np.stack([alg.estimate(s).reshape(-1) for s in states])]
    sizes = []
    for _ in range(rounds):
        size = 0
        for phase in range(alg.phases):
            snapshot = list(bcs)
            size += snapshot[0].size
            assert all(b.payload.size == snapshot[0].size for b in snapshot)
            new = [None] * n
            for i in (order if order is not None else range(n)):
                msgs = {j: snapshot[j] for j in g.closed_in_neighbors(i)}
                new[i] = node_step(alg, i, n, states[i], node_inbox(msgs, i, row, col),
                                   problem.locals[i].grad, hp, phase)
            states, bcs = [s for s, _ in new], [b for _, b in new]
        sizes.append(size)
        history.append(np.stack([alg.estimate(s).reshape(-1) for s in states]))
    return np.array(history), sizes


def beta_for(name):
    return {"frsd": 2.0, "frsd-cs": 2.0}.get(name, 0.2 if name in MOMENTUM else 0.0)


@pytest.mark.parametrize("name", ALGORITHM_NAMES)
def test_table_sizes(name):
    for n, p in [(1, 1), (10, 5), (25, 301), (100, 10**6)]:
        assert comm_size(name, n, p) == TABLE_COMM[name](n, p)
        assert memory_size(name, n, p) == TABLE_MEMORY[name](n, p)


def test_table_examples():
    assert comm_size("frsd", 10, 5) == 15
    assert comm_size("xi-row", 10, 5) == 20
    assert comm_size("push-diging", 10, 5) == 11
    assert comm_size("ab", 10, 5) == 10
    assert memory_size("frsd", 100, 10**6) == 2 * 10**6 + 100
    assert comm_size("frozen", 25, 301) == 627
    assert comm_size("frsd", 25, 301) == 326


@pytest.mark.parametrize("name", ALGORITHM_NAMES)
def test_stored_size(name):
    # ABm keeps x(k-1) for the momentum term on top of the AB state
    extra = 5 if name == "abm" else 0
    assert stored_size(name, 10, 5) == memory_size(name, 10, 5) + extra


def test_unknown_algorithm():
    with pytest.raises(UnknownAlgorithm):
        get_algorithm("gossip-x")
    with pytest.raises(UnknownAlgorithm):
        comm_size("gossip-x", 3, 3)


def test_hyperparameter_checks():
    with pytest.raises(ValueError):
        HyperParams(alpha=0.0)
    with pytest.raises(ValueError):
        HyperParams(alpha=0.1, beta=-1)
    with pytest.raises(ValueError):
        get_algorithm("frsd").check(HyperParams(0.5, 2.0))


def test_frsd_init_examples():
    st_ = frsd_init(2, np.zeros(4), 3)
    np.testing.assert_array_equal(st_.v, [0, 1, 0])
    np.testing.assert_array_equal(st_.x, np.zeros(4))
    np.testing.assert_array_equal(st_.y, np.zeros(4))
    with pytest.raises(ValueError):
        frsd_init(0, np.zeros(2), 3)


def test_frsd_single_node_step():
    f = LocalObjective("quadratic", np.eye(1), np.zeros(1))
    hp = HyperParams(0.1, 7.0)
    state, bc = node_init("frsd", 0, 1, np.array([1.0]), f.grad, hp)
    for _ in range(2):
        state, bc = frsd_step(0, 1, state, node_inbox({0: bc}, 0, np.eye(1)), f.grad, hp)
        np.testing.assert_array_equal(state.y, [0.0])
    assert state.x[0] == pytest.approx(0.81, abs=1e-15)


def test_frsd_consensus_leaves_y_unchanged():
    g = directed_cycle(3)
    row = build_uniform_row_stochastic(g).entries
    f = LocalObjective("quadratic", np.eye(2), np.ones(2))
    x = np.array([0.3, -0.2])
    states = [NodeState(x=x.copy(), y=np.array([0.1 * i, 1.0]), v=row[i].copy(), k=3) for i in range(3)]
    msgs = {j: NodeContext(j, 3, f.grad).broadcast(x=x, v=row[j]) for j in range(3)}
    for i in range(3):
        new, _ = frsd_step(i, 3, states[i], node_inbox(msgs, i, row), f.grad, HyperParams(0.1, 0.5))
        np.testing.assert_allclose(new.y, states[i].y, atol=1e-16)


def test_frsd_fixed_point_with_identical_locals():
    g = generate_strongly_connected(6, 0.3, seed=2)
    f = LocalObjective("quadratic", np.eye(3), np.array([1.0, -2.0, 0.5]))
    prob = ProblemInstance([f] * 6)
    x0 = np.tile(f.targets, (6, 1))
    hist, _ = run_nodes("frsd", g, prob, x0, HyperParams(0.1, 0.5), 30)
    np.testing.assert_allclose(hist, np.broadcast_to(x0, hist.shape), atol=1e-15)


@pytest.mark.parametrize("name", ALGORITHM_NAMES)
def test_three_cycle_against_dense_oracle(name):
    g = directed_cycle(3)
    prob = synth_quadratic_problem(3, 4, 2, seed=5)
    x0 = np.random.default_rng(1).standard_normal((3, 2))
    hp = HyperParams(0.1, beta_for(name))
    hist, _ = run_nodes(name, g, prob, x0, hp, 5)
    dense = dense_iterates(name, prob, x0, 5, hp.alpha, hp.beta,
                           R=build_uniform_row_stochastic(g).entries,
                           B=build_uniform_column_stochastic(g).entries)
    np.testing.assert_allclose(hist, dense, rtol=0, atol=1e-12)


def test_abm_combine_then_adapt_against_dense_oracle():
    g = directed_cycle(4)
    prob = synth_quadratic_problem(4, 4, 2, seed=6)
    x0 = np.random.default_rng(2).standard_normal((4, 2))
    hp = HyperParams(0.1, 0.3)
    hist, _ = run_nodes("abm", g, prob, x0, hp, 8, combine_then_adapt=True)
    dense = dense_iterates("abm", prob, x0, 8, 0.1, 0.3, R=build_uniform_row_stochastic(g).entries,
                           B=build_uniform_column_stochastic(g).entries, combine_then_adapt=True)
    np.testing.assert_allclose(hist, dense, atol=1e-12)
    default, _ = run_nodes("abm", g, prob, x0, hp, 8)
    assert np.max(np.abs(default - hist)) > 1e-6


@pytest.mark.parametrize("name", ALGORITHM_NAMES)
def test_payload_size_every_round(name):
    g = generate_strongly_connected(5, 0.4, seed=1)
    prob = synth_quadratic_problem(5, 3, 4, seed=0)
    _, sizes = run_nodes(name, g, prob, np.zeros((5, 4)), HyperParams(0.05, beta_for(name)), 6)
    assert sizes == [comm_size(name, 5, 4)] * 6


@pytest.mark.parametrize("name", ALGORITHM_NAMES)
def test_single_node_is_gradient_descent(name):
    f = LocalObjective("quadratic", np.array([[1.0, 0.5], [0.0, 2.0]]), np.array([1.0, -1.0]))
    prob = ProblemInstance([f])
    alpha = 0.1
    hist, _ = run_nodes(name, DiGraph(1), prob, np.array([[3.0, -2.0]]),
                        HyperParams(alpha, 0.0 if name in MOMENTUM else 0.0), 50)
    x = np.array([3.0, -2.0])
    for k in range(51):
        np.testing.assert_allclose(hist[k, 0], x, rtol=0, atol=1e-14)
        x = x - alpha * f.grad(x)


@given(st.permutations(range(6)))
def test_update_order_is_irrelevant(order):
    g = generate_strongly_connected(6, 0.3, seed=4)
    prob = synth_quadratic_problem(6, 3, 2, seed=2)
    x0 = np.arange(12.0).reshape(6, 2) / 10
    hp = HyperParams(0.05, 1.0)
    base, _ = run_nodes("frsd", g, prob, x0, hp, 4)
    perm, _ = run_nodes("frsd", g, prob, x0, hp, 4, order=list(order))
    np.testing.assert_array_equal(base, perm)


def test_degenerate_eigenvector_entry():
    f = LocalObjective("quadratic", np.eye(1), np.zeros(1))
    hp = HyperParams(0.1, 1.0)
    alg = get_algorithm("frsd")
    state = NodeState(x=np.ones(1), y=np.zeros(1), v=np.array([1e-13, 1.0]), k=1)
    other = NodeState(x=np.ones(1), y=np.zeros(1), v=np.array([1e-13, 1.0]), k=1)
    msgs = {0: NodeContext(0, 2, f.grad).broadcast(x=state.x, v=state.v),
            1: NodeContext(1, 2, f.grad).broadcast(x=other.x, v=other.v)}
    with pytest.raises(DegenerateEigenvalue) as exc:
        alg.step(NodeContext(0, 2, f.grad), state, node_inbox(msgs, 0, np.full((2, 2), 0.5)), hp)
    assert exc.value.nodes == (0,)


def test_missing_column_weights():
    g = directed_cycle(3)
    prob = synth_quadratic_problem(3, 2, 2, seed=0)
    hp = HyperParams(0.1)
    out = [node_init("push-diging", i, 3, np.zeros(2), prob.locals[i].grad, hp) for i in range(3)]
    msgs = {j: out[j][1] for j in range(3)}
    row = build_uniform_row_stochastic(g).entries
    with pytest.raises(MissingWeights):
        node_step("push-diging", 0, 3, out[0][0], node_inbox(msgs, 0, row=row), prob.locals[0].grad, hp)
