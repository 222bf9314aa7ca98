"""Checkable pieces of the convergence analysis and dense reference recursions.

The ``dense_*`` functions run each method in stacked matrix form, ``X`` of
shape ``(n, p)`` with row ``i`` the iterate of node ``i`` (so ``R @ X`` is
``(R kron I_p) x``). They are written independently of :mod:`frsd.protocols`
and serve as oracles for it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .digraph import (
    DiGraph,
    build_uniform_row_stochastic,
    spectral_gap,
    stationary_distribution,
)
from .errors import DomainError, NotDoublyStochastic


def _grads(problem, xs):
    return np.array([f.grad(x) for f, x in zip(problem.locals, xs)])


def _inv_diag(v):
    return (1.0 / np.diag(v))[:, None]


def lazy_chain(r_bar, alpha_beta):
    """``(1 - ab) I + ab R``."""
    if not 0.0 < alpha_beta < 1.0:
        raise DomainError("alpha*beta must lie in (0, 1)")
    r_bar = np.asarray(r_bar, dtype=float)
    return (1.0 - alpha_beta) * np.eye(r_bar.shape[0]) + alpha_beta * r_bar


def eta(alpha, n, L, mu):
    """Contraction factor ``max(|1 - n L alpha|, |1 - n mu alpha|)`` of a centralised
    gradient step on the sum of the local costs."""
    if not L >= mu > 0:
        raise DomainError("need L >= mu > 0")
    if not 0.0 < alpha < 2.0 / (n * L):
        raise DomainError(f"alpha = {alpha} outside (0, 2/(nL)) = (0, {2.0 / (n * L)})")
    return max(abs(1.0 - n * L * alpha), abs(1.0 - n * mu * alpha))


def mixing_time(r_bar, pi, tol=None, cap=100_000):
    """First ``k`` with ``max |R^k - 1 pi^T| <= tol`` (default ``min(pi) / 2``).

    Past this round every diagonal entry ``[R^k]_ii`` is at least ``min(pi) / 2``.
    """
    r_bar = np.asarray(r_bar, dtype=float)
    pi = np.asarray(pi)
    tol = np.min(pi) / 2 if tol is None else tol
    limit = np.outer(np.ones(len(pi)), pi)
    p = np.eye(len(pi))
    for k in range(cap):
        if np.max(np.abs(p - limit)) <= tol:
            return k
        p = r_bar @ p
    raise DomainError("chain did not mix within the cap")


def power_decay_check(r_bar, pi, K=400, rho=None, floor=1e-8):
    """Check that ``d_k = ||R^k - 1 pi^T||_2`` decays geometrically at rate ``rho``.

    Returns ``(passed, tail_ratio)``. ``d_k`` is computed until it drops below
    ``floor * d_0`` or ``k = K``; below about 1e-11 the values only reflect
    the rounding error in ``pi``. The tail ratio is the per-step decay of a
    log-linear fit over the computed terms after the first quarter; a long
    window averages out the beats of complex eigenvalue pairs. With ``c``
    fitted to ``d_0..d_5``, ``c (rho + 0.02)^k`` dominates ``d_k`` from some
    ``k`` on exactly when the tail ratio is below ``rho + 0.02``.
    """
    r_bar = np.asarray(r_bar, dtype=float)
    pi = np.asarray(pi.pi if hasattr(pi, "pi") else pi)
    n = r_bar.shape[0]
    if rho is None:
        rho = spectral_gap(r_bar, pi)
    limit = np.outer(np.ones(n), pi)
    p = np.eye(n)
    d = [np.linalg.norm(p - limit, 2)]
    d0 = max(d[0], 1e-300)
    for _ in range(K):
        p = r_bar @ p
        d.append(np.linalg.norm(p - limit, 2))
        if d[-1] < floor * d0:
            break
    d = np.array(d)
    ks = np.arange(len(d))
    usable = np.flatnonzero((ks >= 1) & (d >= floor * d0))
    if usable.size < 2:
        return True, 0.0
    tail = usable[usable.size // 4:]
    if tail.size < 2:
        tail = usable[-2:]
    ratio = float(np.exp(np.polyfit(tail, np.log(d[tail]), 1)[0]))
    rate = min(rho + 0.02, 1.0)
    return bool(ratio < rate), ratio


# -- dense reference recursions


def dense_iterates(algorithm, problem, x0, K, alpha, beta=0.0, R=None, B=None,
                   combine_then_adapt=False, debias=True):
    """Iterates ``x(0..K)`` (``z`` for push-sum) of the named method, shape ``(K+1, n, p)``."""
    X = np.array(x0, dtype=float)
    n = X.shape[0]
    R = None if R is None else np.asarray(R, dtype=float)
    B = None if B is None else np.asarray(B, dtype=float)
    out = [X.copy()]
    a, b = alpha, beta

    if algorithm in ("frsd", "frsd-cs"):
        Y = np.zeros_like(X)
        V = np.eye(n)
        for _ in range(K):
            G = _grads(problem, X)
            if algorithm == "frsd-cs":
                X1 = R @ X - a * np.diag(V)[:, None] * (Y + _inv_diag(V) * G)
            elif debias:
                X1 = R @ X - a * (Y + _inv_diag(V) * G)
            else:
                X1 = R @ X - a * (Y + G)
            Y = Y + b * (X1 - R @ X1)
            V = R @ V
            X = X1
            out.append(X.copy())

    elif algorithm in ("xi-row", "frozen", "d-dngt"):
        V = np.eye(n)
        G = _grads(problem, X)
        Y = G.copy()
        S = X.copy()
        S_old = X.copy()
        for _ in range(K):
            if algorithm == "xi-row":
                X1 = R @ X - a * Y
            else:
                S1 = R @ X - a * Y
                if algorithm == "d-dngt":
                    S1 = S1 + b * (S - S_old)
                X1 = S1 + b * (S1 - S)
                S_old, S = S, S1
            V1 = R @ V
            G1 = _grads(problem, X1)
            Y = R @ Y + _inv_diag(V1) * G1 - _inv_diag(V) * G
            X, V, G = X1, V1, G1
            out.append(X.copy())

    elif algorithm in ("ab", "abm", "abn", "push-pull"):
        G = _grads(problem, X)
        Y = G.copy()
        X_old = X.copy()
        S = X.copy()
        mom = b if algorithm in ("abm", "abn") else 0.0
        for _ in range(K):
            if algorithm == "push-pull":
                X1 = R @ (X - a * Y)
            elif algorithm == "abn":
                S1 = R @ X - a * Y
                X1 = S1 + mom * (S1 - S)
                S = S1
            else:
                X1 = R @ X - a * Y + mom * (X - X_old)
            G1 = _grads(problem, X1)
            if algorithm == "abn" or (algorithm == "abm" and combine_then_adapt):
                Y = B @ Y + G1 - G
            else:
                Y = B @ (Y + G1 - G)
            X_old, X, G = X, X1, G1
            out.append(X.copy())

    elif algorithm == "push-diging":
        v = np.ones((n, 1))
        Z = X / v
        G = _grads(problem, Z)
        Y = G.copy()
        for _ in range(K):
            v1 = B @ v
            X1 = B @ (X - a * Y)
            Z1 = X1 / v1
            G1 = _grads(problem, Z1)
            Y = B @ Y + G1 - G
            X, v, Z, G = X1, v1, Z1, G1
            out.append(Z.copy())
    else:
        raise ValueError(f"no dense recursion for {algorithm!r}")
    return np.array(out)


def frsd_x_only_oracle(r_bar, problem, alpha, beta, x0, K, form="direct"):
    """FRSD through its two-step recursion in ``x`` alone.

    ``x(0)`` and ``x(1)`` come from the three-variable form; afterwards

        x(k+2) = ((1+ab) R + (1-ab) I) x(k+1) - R x(k)
                 - alpha (Vt^-1(k+1) grad(k+1) - Vt^-1(k) grad(k)).

    ``form="delta"`` uses the equivalent split ``2R x(k+1) - R^2 x(k) + Delta_c(k)``
    with ``c = alpha * beta``.
    """
    R = np.asarray(r_bar, dtype=float)
    n = R.shape[0]
    I = np.eye(n)
    c = alpha * beta
    if not c < 1:
        raise DomainError("alpha*beta must be < 1")
    X0 = np.array(x0, dtype=float)
    V0 = I
    G0 = _inv_diag(V0) * _grads(problem, X0)
    X1 = R @ X0 - alpha * G0
    V1 = R @ V0
    xs = [X0, X1]
    prev, cur, Vc, Gp = X0, X1, V1, G0
    for _ in range(K - 1):
        Gc = _inv_diag(Vc) * _grads(problem, cur)
        if form == "direct":
            nxt = ((1 + c) * R + (1 - c) * I) @ cur - R @ prev - alpha * (Gc - Gp)
        else:
            delta = (1 - c) * (I - R) @ cur - R @ (I - R) @ prev
            nxt = 2 * R @ cur - R @ R @ prev + delta - alpha * (Gc - Gp)
        xs.append(nxt)
        prev, cur, Gp = cur, nxt, Gc
        Vc = R @ Vc
    return np.array(xs[: K + 1])


def primal_dual_equivalence_oracle(W, problem, alpha, beta, x0, K, scaled=False):
    """Compare FRSD (weights ``W``) with the primal-dual method with approximate
    averaging at momentum ``theta = 1/(alpha beta)``.

    Returns ``(frsd_iterates, primal_dual_iterates, max_abs_deviation)``. With
    ``scaled=False`` both use the plain local gradient; ``scaled=True`` divides
    it by ``[W^k]_ii`` in both.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if (np.max(np.abs(W - W.T)) > 1e-12 or np.max(np.abs(W.sum(axis=1) - 1)) > 1e-12
            or np.min(W) < 0):
        raise NotDoublyStochastic("W must be symmetric, nonnegative, with unit row sums")
    theta = 1.0 / (alpha * beta)
    I = np.eye(n)

    X = np.array(x0, dtype=float)
    Y = np.zeros_like(X)
    V = I.copy()
    frsd = [X.copy()]
    for _ in range(K):
        G = _grads(problem, X)
        if scaled:
            G = _inv_diag(V) * G
        X = W @ X - alpha * (Y + G)
        Y = Y + beta * (I - W) @ X
        V = W @ V
        frsd.append(X.copy())

    X = np.array(x0, dtype=float)
    Y = np.zeros_like(X)
    V = I.copy()
    pd = [X.copy()]
    for k in range(K):
        if k > 0:
            Y = Y + beta * (I - W) @ X
        G = _grads(problem, X)
        if scaled:
            G = _inv_diag(V) * G
        X = X - alpha * (G + Y + theta * beta * (I - W) @ X)
        V = W @ V
        pd.append(X.copy())

    frsd, pd = np.array(frsd), np.array(pd)
    return frsd, pd, float(np.max(np.abs(frsd - pd)))


def theta_diagnostics(xs, pi, x_star):
    """Per-iteration consensus error, averaged-iterate error and step length.

    ``xs`` has shape ``(K+1, n, p)``; the average is ``x_hat(k) = pi^T X(k)``.
    """
    xs = np.asarray(xs)
    pi = np.asarray(pi.pi if hasattr(pi, "pi") else pi)
    xhat = np.einsum("i,kip->kp", pi, xs)
    consensus = np.linalg.norm(xs - xhat[:, None, :], axis=(1, 2))
    n = xs.shape[1]
    optimality = np.sqrt(n) * np.linalg.norm(xhat - np.asarray(x_star), axis=1)
    steps = np.r_[np.nan, np.linalg.norm(np.diff(xs, axis=0), axis=(1, 2))]
    return consensus, optimality, steps


@dataclass
class TheoryReport:
    sigma_R_surrogate: float
    sigma_C_surrogate: float
    eta: float | None
    alpha_ceiling: float
    decay_ok: bool
    decay_ratio: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def analyze(g: DiGraph, alpha, beta, L=1.0, mu=0.01, K=400) -> TheoryReport:
    """Spectral surrogates and step-size diagnostics for FRSD on ``g``."""
    rm = build_uniform_row_stochastic(g)
    pi = stationary_distribution(rm)
    sigma_r = spectral_gap(rm, pi)
    c_bar = lazy_chain(rm.entries, alpha * beta)
    sigma_c = spectral_gap(c_bar, pi)
    try:
        e = eta(alpha, g.n, L, mu)
    except DomainError:
        e = None
    ok, ratio = power_decay_check(rm.entries, pi, K=K, rho=sigma_r)
    return TheoryReport(sigma_r, sigma_c, e, 1.0 / (g.n * L), ok, ratio)
