import numpy as np
import pytest
from hypothesis import given, strategies as st

from frsd.errors import DimensionError, DimensionMismatch, LabelError, ParseError
from frsd.objectives import (
    Dataset,
    LocalObjective,
    ProblemInstance,
    format_libsvm,
    huber_grad,
    huber_value,
    parse_libsvm,
    partition_dataset,
    read_libsvm,
    synth_huber_problem,
    synth_libsvm_dataset,
    synth_quadratic_problem,
)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_huber_examples():
    assert huber_value(0, 2) == 0 and huber_grad(0, 2) == 0
    assert huber_value(3, 2) == 4 and huber_grad(3, 2) == 2
    assert huber_value(-3, 2) == 4 and huber_grad(-3, 2) == -2
    assert huber_value(2, 2) == 2


@given(st.floats(0.1, 4.0))
def test_huber_continuous_at_knee(xi):
    for s in (1, -1):
        a, b = s * (xi - 1e-9), s * (xi + 1e-9)
        assert abs(huber_value(a, xi) - huber_value(b, xi)) <= 1e-8
        assert abs(huber_grad(a, xi) - huber_grad(b, xi)) <= 1e-8


def test_logistic_single_row():
    m = np.array([[1.0, 2.0, -1.0]])
    f = LocalObjective("logistic", m, [1.0])
    assert f.value(np.zeros(3)) == pytest.approx(np.log(2))
    np.testing.assert_allclose(f.grad(np.zeros(3)), -m[0] / 2)


def test_quadratic_identity_gradient(rng):
    f = LocalObjective("quadratic", np.eye(4), np.zeros(4))
    x = rng.standard_normal(4)
    np.testing.assert_allclose(f.grad(x), x)


@pytest.mark.parametrize("kind", ["huber", "logistic", "quadratic"])
def test_gradient_finite_differences(kind, rng):
    m = rng.standard_normal((12, 5))
    if kind == "logistic":
        f = LocalObjective(kind, m, rng.choice([-1.0, 1.0], 12), lam=0.01)
    else:
        f = LocalObjective(kind, m, rng.standard_normal(12), xi=1.5)
    checked = 0
    while checked < 100:
        x = rng.standard_normal(5)
        if kind == "huber" and np.min(np.abs(np.abs(m @ x - f.targets) - f.xi)) < 1e-3:
            continue
        g = f.grad(x)
        fd = central_diff(f.value, x)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-8)
        checked += 1


def test_logistic_is_overflow_safe():
    f = LocalObjective("logistic", np.array([[1.0]]), [1.0], lam=0.0)
    for z in (1e4, -1e4):
        with np.errstate(over="raise", invalid="raise"):
            v = f.value(np.array([z]))
            g = f.grad(np.array([z]))
        assert np.isfinite(v) and np.all(np.isfinite(g))
    assert f.value(np.array([-1e4])) == pytest.approx(1e4)


@given(st.integers(0, 10_000))
def test_logistic_strong_convexity(seed):
    rng = np.random.default_rng(seed)
    lam = 0.01
    f = LocalObjective("logistic", rng.standard_normal((6, 3)), rng.choice([-1.0, 1.0], 6), lam=lam)
    x, z = rng.standard_normal(3), rng.standard_normal(3)
    lower = f.value(x) + f.grad(x) @ (z - x) + 0.5 * lam * np.sum((z - x) ** 2)
    assert f.value(z) >= lower - 1e-12


@given(st.integers(0, 10_000))
def test_gradient_lipschitz_probe(seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((8, 4))
    for f in (LocalObjective("huber", m, rng.standard_normal(8), xi=0.7),
              LocalObjective("logistic", m, rng.choice([-1.0, 1.0], 8), lam=0.1),
              LocalObjective("quadratic", m, rng.standard_normal(8))):
        x, z = rng.standard_normal(4), rng.standard_normal(4)
        assert np.linalg.norm(f.grad(x) - f.grad(z)) <= f.lipschitz * np.linalg.norm(x - z) * (1 + 1e-12)


def test_lipschitz_and_strong_convexity_constants(rng):
    m = rng.standard_normal((10, 3))
    s = np.linalg.svd(m, compute_uv=False)
    assert LocalObjective("huber", m, np.zeros(10)).lipschitz == pytest.approx(s[0] ** 2)
    assert LocalObjective("logistic", m, np.ones(10), lam=0.2).lipschitz == pytest.approx(s[0] ** 2 / 4 + 0.2)
    q = LocalObjective("quadratic", m, np.zeros(10))
    assert q.strong_convexity == pytest.approx(s[-1] ** 2)
    assert LocalObjective("huber", m, np.zeros(10)).strong_convexity == 0


def test_objective_validation():
    with pytest.raises(DimensionMismatch):
        LocalObjective("quadratic", np.eye(3), np.zeros(2))
    with pytest.raises(ValueError):
        LocalObjective("logistic", np.eye(2), [1.0, 0.5])
    with pytest.raises(ValueError):
        LocalObjective("huber", np.eye(2), [0, 0], xi=0)
    with pytest.raises(ValueError):
        LocalObjective("hinge", np.eye(2), [0, 0])
    with pytest.raises(DimensionMismatch):
        LocalObjective("quadratic", np.eye(3), np.zeros(3)).grad(np.zeros(2))
    with pytest.raises(DimensionMismatch):
        ProblemInstance([LocalObjective("quadratic", np.eye(2), np.zeros(2)),
                         LocalObjective("quadratic", np.eye(3), np.zeros(3))])


def test_synth_huber_problem():
    p = synth_huber_problem(10, 10, 5, 2.0, seed=3)
    assert p.n == 10 and p.dim == 5
    for f in p.locals:
        assert np.linalg.norm(f.features, 2) == pytest.approx(1.0, abs=1e-10)
        assert f.xi == 2.0
    # power iteration on M^T M as an independent check of L
    f = p.locals[0]
    v = np.ones(5)
    for _ in range(2000):
        v = f.features.T @ (f.features @ v)
        v /= np.linalg.norm(v)
    assert v @ f.features.T @ f.features @ v == pytest.approx(1.0, abs=1e-10)
    assert p.L == pytest.approx(1.0, abs=1e-10)
    q = synth_huber_problem(10, 10, 5, 2.0, seed=3)
    for a, b in zip(p.locals, q.locals):
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.targets, b.targets)


@pytest.mark.parametrize("make", [
    lambda: synth_huber_problem(6, 7, 3, 1.0, seed=1),
    lambda: synth_quadratic_problem(6, 7, 3, seed=1),
    lambda: partition_dataset(synth_libsvm_dataset(50, 4, seed=2), 6, 7, 5, seed=1),
])
def test_grad_stack_matches_per_node(make, rng):
    p = make()
    xs = rng.standard_normal((p.n, p.dim))
    expected = np.stack([f.grad(x) for f, x in zip(p.locals, xs)])
    np.testing.assert_allclose(p.grad_stack(xs), expected, rtol=1e-13, atol=1e-14)
    x = rng.standard_normal(p.dim)
    np.testing.assert_allclose(p.total_grad(x), sum(f.grad(x) for f in p.locals), rtol=1e-13)
    assert p.mean_value(x) == pytest.approx(p.total_value(x) / p.n)


def test_grad_stack_heterogeneous_rows():
    p = ProblemInstance([LocalObjective("quadratic", np.eye(2), np.ones(2)),
                         LocalObjective("quadratic", np.ones((3, 2)), np.zeros(3))])
    xs = np.array([[1.0, 2.0], [0.5, -1.0]])
    np.testing.assert_allclose(p.grad_stack(xs), [[0.0, 1.0], [-1.5, -1.5]])


def test_parse_libsvm_examples():
    ds = parse_libsvm("+1 1:0.5 3:-2")
    assert ds.rows == [({1: 0.5, 3: -2.0}, 1)]
    assert len(parse_libsvm("")) == 0
    ds = parse_libsvm("1 2:1.0\n-1 1:3")
    assert len(ds) == 2 and ds.max_index == 2
    assert parse_libsvm("0 1:1  # comment\n\n").rows == [({1: 1.0}, -1)]


@pytest.mark.parametrize("text, err, line", [
    ("2 1:1", LabelError, 1),
    ("+1 1:1\nabc 1:1", ParseError, 2),
    ("+1 0:1", ParseError, 1),
    ("+1 2:1 1:1", ParseError, 1),
    ("+1 2:1 2:3", ParseError, 1),
    ("+1 x:1", ParseError, 1),
    ("+1 3", ParseError, 1),
])
def test_parse_libsvm_errors(text, err, line):
    with pytest.raises(err) as exc:
        parse_libsvm(text)
    assert exc.value.line_no == line


@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 1000), st.floats(0, 0.8))
def test_libsvm_round_trip(rows, features, seed, sparsity):
    ds = synth_libsvm_dataset(rows, features, seed, sparsity=sparsity)
    assert parse_libsvm(format_libsvm(ds)).rows == ds.rows


def test_read_libsvm(tmp_path):
    (tmp_path / "d.txt").write_text("+1 1:0.25\n-1 2:1\n")
    assert len(read_libsvm(tmp_path / "d.txt")) == 2


def test_synth_dataset_range():
    ds = synth_libsvm_dataset(200, 6, seed=0)
    vals = [v for f, _ in ds.rows for v in f.values()]
    assert min(vals) >= -1 and max(vals) <= 1
    assert {y for _, y in ds.rows} == {-1, 1}


def test_partition_shapes_and_determinism():
    ds = synth_libsvm_dataset(300, 14, seed=4)
    p = partition_dataset(ds, 50, 10, 15, seed=9)
    assert p.n == 50
    for f in p.locals:
        assert f.features.shape == (10, 15)
        np.testing.assert_array_equal(f.features[:, -1], 1.0)
        assert f.lam == 0.01
    q = partition_dataset(ds, 50, 10, 15, seed=9)
    for a, b in zip(p.locals, q.locals):
        np.testing.assert_array_equal(a.features, b.features)
    big = partition_dataset(synth_libsvm_dataset(500, 300, seed=1, sparsity=0.9), 25, 400, 301)
    assert big.locals[0].features.shape == (400, 301)


def test_partition_errors():
    with pytest.raises(DimensionError):
        partition_dataset(Dataset([]), 3, 2, 4)
    with pytest.raises(DimensionError):
        partition_dataset(parse_libsvm("+1 4:1"), 3, 2, 4)
