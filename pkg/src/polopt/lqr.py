"""Linear-quadratic regulator with linear gains a = -K s.

Notation follows the usual LQR conventions:

    A_K = A - B K
    P   = Q + K^T R K + γ A_K^T P A_K          (value matrix)
    S   = W + γ A_K S A_K^T                    (state covariance)
    U   = R + γ B^T P B
    G   = U K - γ B^T P A

The average setup is γ = 1 throughout.  The curvature / gradient use the
ν-weighted second moment of the state, ``M = Σ_k γ^k E[s_k s_k^T]``.  With
the initial covariance equal to W this is S/(1-γ) for the discounted setup;
for the average setup it is S itself.
"""
from __future__ import annotations

import contextlib
import functools
import json
from dataclasses import dataclass

import numpy as np

from .errors import SingularCovariance, UnstableGains, ValidationError
from .mdp import Setup

STABILITY_MARGIN = 1e-10
KRONECKER_MAX_DIM = 30

# Off only for mutation testing: drops γ from U and G.
GAMMA_CORRECTION = True


@contextlib.contextmanager
def gamma_correction_disabled():
    global GAMMA_CORRECTION
    saved, GAMMA_CORRECTION = GAMMA_CORRECTION, False
    try:
        yield
    finally:
        GAMMA_CORRECTION = saved


def _sym(x):
    return 0.5 * (x + x.T)


def _as_matrix(x, name):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class LqrProblem:
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    q: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.a, "a")
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        b = _as_matrix(b, "b")
        w, q, r = (_as_matrix(x, n) for x, n in ((self.w, "w"), (self.q, "q"), (self.r, "r")))
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValidationError(f"a must be square, got {a.shape}")
        if b.shape[0] != n:
            raise ValidationError(f"b must have {n} rows, got {b.shape}")
        m = b.shape[1]
        for x, name, d in ((w, "w", n), (q, "q", n), (r, "r", m)):
            if x.shape != (d, d):
                raise ValidationError(f"{name} must be {d}x{d}, got {x.shape}")
            if np.abs(x - x.T).max() > 1e-10:
                raise ValidationError(f"{name} is not symmetric")
        for x, name in ((w, "w"), (q, "q")):
            if np.linalg.eigvalsh(_sym(x)).min() < -1e-10:
                raise ValidationError(f"{name} is not positive semidefinite")
        if np.linalg.eigvalsh(_sym(r)).min() <= 1e-12:
            raise ValidationError("r is not positive definite")
        for name, x in zip("abwqr", (a, b, w, q, r)):
            x.setflags(write=False)
            object.__setattr__(self, name, x)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    def closed_loop(self, k):
        return self.a - self.b @ np.asarray(k, dtype=float).reshape(self.m, self.n)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in "abwqr"}


def problem_from_dict(d):
    missing = [k for k in "abwqr" if k not in d]
    if missing:
        raise ValidationError(f"missing fields {missing}")
    return LqrProblem(d["a"], d["b"], d["w"], d["q"], d["r"])


def load_problem(path):
    with open(path) as f:
        return problem_from_dict(json.load(f))


def default_problem(alpha=1.0):
    """Two-state, one-input test system used in the figures; ``alpha`` scales A."""
    return LqrProblem(
        alpha * np.array([[0.9, 0.1], [0.0, 1.1]]),
        np.array([[0.0], [1.0]]),
        np.eye(2),
        np.eye(2),
        np.eye(1),
    )


@dataclass(frozen=True, eq=False)
class LqrSolution:
    p: np.ndarray
    s: np.ndarray
    u: np.ndarray
    g: np.ndarray
    moment: np.ndarray
    objective: float
    setup: Setup


def _gamma(setup):
    return 1.0 if setup.is_average else setup.gamma


def spectral_radius(x):
    return float(np.abs(np.linalg.eigvals(x)).max())


def is_stable(problem, k, setup):
    ak = problem.closed_loop(k)
    if not np.all(np.isfinite(ak)):
        return False
    return np.sqrt(_gamma(setup)) * spectral_radius(ak) < 1 - STABILITY_MARGIN


def lyapunov(a, c, tol=1e-12, max_iter=1_000_000):
    """Solve X = C + a X a^T (a assumed contractive)."""
    n = a.shape[0]
    if n <= KRONECKER_MAX_DIM:
        kron = (a[:, None, :, None] * a[None, :, None, :]).reshape(n * n, n * n)
        x = np.linalg.solve(np.eye(n * n) - kron, c.reshape(-1)).reshape(n, n)
        return _sym(x)
    x = np.array(c, dtype=float)
    for _ in range(max_iter):
        nxt = c + a @ x @ a.T
        if np.abs(nxt - x).max() <= tol * max(1.0, np.abs(nxt).max()):
            return _sym(nxt)
        x = nxt
    raise UnstableGains("Lyapunov iteration did not converge")


def solve(problem, k, setup, sigma0=None):
    k = np.asarray(k, dtype=float).reshape(problem.m, problem.n)
    if sigma0 is None:
        return _solve_cached(problem, k.tobytes(), setup, GAMMA_CORRECTION)
    return _solve(problem, k, setup, sigma0)


@functools.lru_cache(maxsize=4096)
def _solve_cached(problem, k_bytes, setup, gamma_correction):
    k = np.frombuffer(k_bytes).reshape(problem.m, problem.n)
    sol = _solve(problem, k, setup, None)
    for x in (sol.p, sol.s, sol.u, sol.g, sol.moment):
        x.setflags(write=False)
    return sol


def _solve(problem, k, setup, sigma0):
    if not is_stable(problem, k, setup):
        raise UnstableGains(f"gains {k.ravel().tolist()} are not stabilizing for {setup}", k)
    gamma = _gamma(setup)
    sg = np.sqrt(gamma)
    a, b, w = problem.a, problem.b, problem.w
    ak = problem.closed_loop(k)
    cost = problem.q + k.T @ problem.r @ k
    p = lyapunov(sg * ak.T, cost)
    s = lyapunov(sg * ak, w)
    gc = gamma if GAMMA_CORRECTION else 1.0
    u = problem.r + gc * b.T @ p @ b
    g = u @ k - gc * b.T @ p @ a
    if setup.is_average:
        moment = s
        objective = float(np.trace(p @ w))
    else:
        sig0 = w if sigma0 is None else np.asarray(sigma0, dtype=float)
        if sigma0 is None:
            moment = s / (1 - gamma)
        else:
            moment = lyapunov(sg * ak, sig0 + gamma / (1 - gamma) * w)
        objective = float(np.trace(p @ sig0) + gamma / (1 - gamma) * np.trace(p @ w))
    return LqrSolution(p, s, u, g, moment, objective, setup)


def objective(problem, k, setup):
    return solve(problem, k, setup).objective


def gradient(problem, k, setup):
    sol = solve(problem, k, setup)
    return 2.0 * sol.g @ sol.moment


def curvature(problem, k, setup):
    return solve(problem, k, setup).moment


def natural_gradient(problem, k, setup):
    sol = solve(problem, k, setup)
    if np.linalg.cond(sol.moment) > 1e12:
        raise SingularCovariance("state second moment is singular; w must be positive definite")
    return 2.0 * sol.g


def policy_iteration_gain(problem, k, setup):
    """Per-state advantage minimizer: K' = U^{-1} γ B^T P A."""
    sol = solve(problem, k, setup)
    gamma = _gamma(setup)
    return np.linalg.solve(sol.u, gamma * problem.b.T @ sol.p @ problem.a)


def riccati_iterates(problem, setup, k0, tol=1e-12, max_iter=10_000):
    """Policy iteration on gains; returns the list of iterates (k0 first)."""
    ks = [np.asarray(k0, dtype=float).reshape(problem.m, problem.n)]
    for _ in range(max_iter):
        nxt = policy_iteration_gain(problem, ks[-1], setup)
        if not is_stable(problem, nxt, setup):
            raise UnstableGains(f"iterate {len(ks)} is not stabilizing", nxt)
        ks.append(nxt)
        if np.abs(nxt - ks[-2]).max() < tol:
            break
    return ks


def riccati_fixed_point(problem, setup, k0=None, tol=1e-12, max_iter=10_000):
    if k0 is None:
        k0 = np.zeros((problem.m, problem.n))
    return riccati_iterates(problem, setup, k0, tol, max_iter)[-1]


def performance_difference_lqr(problem, k_old, k_new, setup):
    """(linear, quadratic, total) terms of J(K') - J(K) with the K' state moment."""
    k_old = np.asarray(k_old, dtype=float).reshape(problem.m, problem.n)
    k_new = np.asarray(k_new, dtype=float).reshape(problem.m, problem.n)
    old = solve(problem, k_old, setup)
    new = solve(problem, k_new, setup)
    d = k_new - k_old
    lin = 2.0 * float(np.trace(d.T @ old.g @ new.moment))
    quad = float(np.trace(d.T @ old.u @ d @ new.moment))
    return lin, quad, lin + quad


def deterministic_trust_region_step(problem, k, setup, rho):
    """K + δ with δ minimizing the linear cost model over tr(δ M δ^T) <= 2ρ.

    The minimizer points along -2G, i.e. the natural-gradient direction.
    Where G vanishes (relative to the terms it is built from) the step is zero.
    """
    if not rho > 0:
        raise ValidationError("rho must be positive")
    k = np.asarray(k, dtype=float).reshape(problem.m, problem.n)
    sol = solve(problem, k, setup)
    uk = sol.u @ k
    # G = UK - γB^T P A; compare it with the two terms that cancel at the optimum
    scale = max(1.0, np.linalg.norm(uk), np.linalg.norm(uk - sol.g))
    if np.linalg.norm(sol.g) <= 1e-10 * scale:
        return k.copy()
    ng = 2.0 * sol.g
    quad = float(np.trace(ng @ sol.moment @ ng.T))
    delta = -np.sqrt(2.0 * rho / quad) * ng
    used = float(np.trace(delta @ sol.moment @ delta.T))
    assert abs(used - 2.0 * rho) <= 1e-8 * max(1.0, 2.0 * rho), used
    return k + delta


# -- simulation -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LqrTrajectory:
    states: np.ndarray  # (T+1, n)
    actions: np.ndarray  # (T, m)
    costs: np.ndarray  # (T,)
    seed: int


def _gaussian(rng, cov, size):
    n = cov.shape[0]
    vals, vecs = np.linalg.eigh(_sym(cov))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return rng.standard_normal((size, n)) @ root.T


def simulate(problem, k, horizon, seed, sigma0=None, x0=None):
    """Sample s_{k+1} = A s_k + B a_k + w_k under a_k = -K s_k."""
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    k = np.asarray(k, dtype=float).reshape(problem.m, problem.n)
    rng = np.random.default_rng(seed)
    sig0 = problem.w if sigma0 is None else np.asarray(sigma0, dtype=float)
    x = np.array(x0, dtype=float) if x0 is not None else _gaussian(rng, sig0, 1)[0]
    noise = _gaussian(rng, problem.w, horizon)
    ak_t = problem.closed_loop(k).T
    states = np.empty((horizon + 1, problem.n))
    states[0] = x
    for t in range(horizon):
        x = x @ ak_t + noise[t]
        states[t + 1] = x
    xs = states[:-1]
    actions = -xs @ k.T
    costs = (np.einsum("ti,ij,tj->t", xs, problem.q, xs)
             + np.einsum("ti,ij,tj->t", actions, problem.r, actions))
    return LqrTrajectory(states, actions, costs, seed)
