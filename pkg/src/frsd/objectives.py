"""Local cost functions, LIBSVM ingestion and synthetic problem generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DimensionMismatch, LabelError, ParseError

DEFAULT_LAMBDA = 0.01


def huber_value(z, xi):
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    return np.where(a <= xi, 0.5 * z * z, xi * (a - 0.5 * xi))


def huber_grad(z, xi):
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) <= xi, z, xi * np.sign(z))


@dataclass(frozen=True, eq=False)
class LocalObjective:
    """One node's private loss ``f_i``.

    kind is ``"huber"`` (parameter ``xi``), ``"logistic"`` (parameter ``lam``,
    targets in {-1, +1}) or ``"quadratic"``.
    """

    kind: str
    features: np.ndarray
    targets: np.ndarray
    xi: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.features, dtype=float))
        b = np.asarray(self.targets, dtype=float).reshape(-1)
        if m.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"{m.shape[0]} rows but {b.shape[0]} targets")
        if self.kind not in ("huber", "logistic", "quadratic"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "huber" and not self.xi > 0:
            raise ValueError("huber needs xi > 0")
        if self.kind == "logistic":
            if not np.all(np.isin(b, (-1.0, 1.0))):
                raise ValueError("logistic targets must be -1 or +1")
            if self.lam < 0:
                raise ValueError("lambda must be nonnegative")
        m.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "features", m)
        object.__setattr__(self, "targets", b)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def _spectral_sq(self) -> float:
        return float(np.linalg.norm(self.features, 2) ** 2)

    @property
    def lipschitz(self) -> float:
        if self.kind == "logistic":
            return self._spectral_sq / 4.0 + self.lam
        return self._spectral_sq

    @property
    def strong_convexity(self) -> float:
        if self.kind == "logistic":
            return self.lam
        if self.kind == "quadratic":
            return float(max(np.linalg.eigvalsh(self.features.T @ self.features)[0], 0.0))
        return 0.0

    def value(self, x) -> float:
        return local_value(self, x)

    def grad(self, x) -> np.ndarray:
        return local_grad(self, x)


def _check_dim(obj, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.dim,):
        raise DimensionMismatch(f"expected a vector of length {obj.dim}, got shape {x.shape}")
    return x


def local_value(obj: LocalObjective, x) -> float:
    x = _check_dim(obj, x)
    z = obj.features @ x
    if obj.kind == "huber":
        return float(np.sum(huber_value(z - obj.targets, obj.xi)))
    if obj.kind == "quadratic":
        r = z - obj.targets
        return float(0.5 * r @ r)
    # softplus(-b z) = log(1 + exp(-b z)) without overflow
    return float(np.sum(np.logaddexp(0.0, -obj.targets * z)) + 0.5 * obj.lam * x @ x)


def local_grad(obj: LocalObjective, x) -> np.ndarray:
    x = _check_dim(obj, x)
    z = obj.features @ x
    if obj.kind == "huber":
        return obj.features.T @ huber_grad(z - obj.targets, obj.xi)
    if obj.kind == "quadratic":
        return obj.features.T @ (z - obj.targets)
    b = obj.targets
    return obj.features.T @ (-b * expit(-b * z)) + obj.lam * x


@dataclass(eq=False)
class ProblemInstance:
    """``n`` local objectives sharing the decision dimension ``p``."""

    locals: list
    dim: int = field(init=False)

    def __post_init__(self):
        if not self.locals:
            raise ValueError("a problem needs at least one local objective")
        dims = {obj.dim for obj in self.locals}
        if len(dims) != 1:
            raise DimensionMismatch(f"local objectives disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()

    @property
    def n(self) -> int:
        return len(self.locals)

    @cached_property
    def L(self) -> float:
        return max(obj.lipschitz for obj in self.locals)

    @cached_property
    def mu(self) -> float:
        return min(obj.strong_convexity for obj in self.locals)

    @cached_property
    def _stacked(self):
        """Batched (n, m, p) data when every node has the same kind and row count."""
        first = self.locals[0]
        same = all(
            o.kind == first.kind
            and o.features.shape == first.features.shape
            and o.xi == first.xi
            and o.lam == first.lam
            for o in self.locals
        )
        if not same:
            return None
        m = np.stack([o.features for o in self.locals])
        b = np.stack([o.targets for o in self.locals])
        return m, b

    def grad_stack(self, xs) -> np.ndarray:
        """Row ``i`` is ``grad f_i(xs[i])``."""
        xs = np.asarray(xs, dtype=float)
        if xs.shape != (self.n, self.dim):
            raise DimensionMismatch(f"expected shape {(self.n, self.dim)}, got {xs.shape}")
        st = self._stacked
        if st is None:
            return np.stack([obj.grad(x) for obj, x in zip(self.locals, xs)])
        m, b = st
        first = self.locals[0]
        z = np.matmul(m, xs[:, :, None])[..., 0]
        if first.kind == "huber":
            g = huber_grad(z - b, first.xi)
        elif first.kind == "quadratic":
            g = z - b
        else:
            g = -b * expit(-b * z)
        out = np.matmul(g[:, None, :], m)[:, 0, :]
        if first.kind == "logistic":
            out += first.lam * xs
        return out

    def total_value(self, x) -> float:
        """``sum_i f_i(x)`` at a common point."""
        return float(sum(obj.value(x) for obj in self.locals))

    def total_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.grad_stack(np.broadcast_to(x, (self.n, self.dim))).sum(axis=0)

    def mean_value(self, x) -> float:
        return self.total_value(x) / self.n

    def mean_grad(self, x) -> np.ndarray:
        return self.total_grad(x) / self.n


def synth_huber_problem(n, m_per_node, p, xi, seed, noise=0.1) -> ProblemInstance:
    """Gaussian regression data with every ``M_i`` rescaled to spectral norm 1."""
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(p)
    locals_ = []
    for _ in range(n):
        m = rng.standard_normal((m_per_node, p))
        m /= np.linalg.norm(m, 2)
        b = m @ x_true + noise * rng.standard_normal(m_per_node)
        locals_.append(LocalObjective("huber", m, b, xi=xi))
    return ProblemInstance(locals_)


def synth_quadratic_problem(n, m_per_node, p, seed) -> ProblemInstance:
    rng = np.random.default_rng(seed)
    locals_ = []
    for _ in range(n):
        m = rng.standard_normal((m_per_node, p)) / np.sqrt(m_per_node)
        b = rng.standard_normal(m_per_node)
        locals_.append(LocalObjective("quadratic", m, b))
    return ProblemInstance(locals_)


# -- LIBSVM data


@dataclass(eq=False)
class Dataset:
    rows: list = field(default_factory=list)  # (dict index -> value, label +-1)

    @property
    def max_index(self) -> int:
        return max((max(f) for f, _ in self.rows if f), default=0)

    def __len__(self):
        return len(self.rows)


_LABELS = {-1.0: -1, 0.0: -1, 1.0: 1}


def parse_libsvm(text: str) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines; 0/1 labels become -1/+1."""
    rows = []
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, *items = line.split()
        try:
            raw = float(head)
        except ValueError:
            raise ParseError(no, f"bad label {head!r}") from None
        if raw not in _LABELS:
            raise LabelError(no, f"label {head!r} is not one of -1, 0, +1")
        feats = {}
        last = 0
        for item in items:
            idx, sep, val = item.partition(":")
            try:
                k, v = int(idx), float(val)
            except ValueError:
                raise ParseError(no, f"bad feature {item!r}") from None
            if not sep or k < 1:
                raise ParseError(no, f"bad feature {item!r}")
            if k <= last:
                raise ParseError(no, f"feature indices must increase strictly ({k} after {last})")
            feats[k] = v
            last = k
        rows.append((feats, _LABELS[raw]))
    return Dataset(rows)


def read_libsvm(path) -> Dataset:
    with open(path) as fh:
        return parse_libsvm(fh.read())


def format_libsvm(ds: Dataset) -> str:
    out = []
    for feats, label in ds.rows:
        body = " ".join(f"{k}:{v!r}" for k, v in sorted(feats.items()))
        out.append(f"{label:+d} {body}".rstrip())
    return "\n".join(out) + ("\n" if out else "")


def synth_libsvm_dataset(rows, features, seed, sparsity=0.0, flip=0.1) -> Dataset:
    """Scaled-feature binary classification data shaped like the LIBSVM '-scale' sets.

    Features lie in [-1, 1]; labels come from a random linear rule with a
    fraction ``flip`` of them flipped so the classes are not separable.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(features)
    x = rng.uniform(-1.0, 1.0, size=(rows, features))
    if sparsity > 0:
        x[rng.random(x.shape) < sparsity] = 0.0
    y = np.where(x @ w + 0.1 * rng.standard_normal(rows) >= 0, 1, -1)
    y[rng.random(rows) < flip] *= -1
    data = []
    for xr, yr in zip(x, y):
        data.append(({k + 1: float(v) for k, v in enumerate(xr) if v != 0.0}, int(yr)))
    return Dataset(data)


def partition_dataset(ds: Dataset, n, m_per_node, p, lam=DEFAULT_LAMBDA, seed=0) -> ProblemInstance:
    """Each node draws ``m_per_node`` rows with replacement; last column is the intercept."""
    if len(ds) == 0:
        raise DimensionError("cannot partition an empty dataset")
    if p < ds.max_index + 1:
        raise DimensionError(f"p = {p} too small for max feature index {ds.max_index} plus intercept")
    rng = np.random.default_rng(seed)
    dense = np.zeros((len(ds), p))
    labels = np.empty(len(ds))
    for r, (feats, label) in enumerate(ds.rows):
        for k, v in feats.items():
            dense[r, k - 1] = v
        labels[r] = label
    dense[:, -1] = 1.0
    locals_ = []
    for _ in range(n):
        pick = rng.integers(0, len(ds), size=m_per_node)
        locals_.append(LocalObjective("logistic", dense[pick], labels[pick], lam=lam))
    return ProblemInstance(locals_)
