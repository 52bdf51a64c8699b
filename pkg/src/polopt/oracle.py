"""Independent checks: finite differences, enumeration, truncated series, bias studies.

Nothing here reuses the linear-solve paths it is meant to check, except where
a study explicitly needs an exact target (documented per function).
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from . import lqr
from .errors import NonFiniteValue, TooLarge, UnstableGains
from .mdp import DeterministicTablePolicy, Setup, score_table, value_functions
from .measures import mean_and_se, rollouts, stationary_measure, time_estimates, truncation_horizon
from .optimizers import policy_gradient

MATCHES_EXACT = "MatchesExact"
MATCHES_MIXED = "MatchesMixed"
INCONCLUSIVE = "Inconclusive"


def finite_difference(f, theta, h=None):
    """Central differences of a scalar function, one coordinate at a time."""
    theta = np.asarray(theta, dtype=float)
    flat = theta.reshape(-1)
    if h is None:
        h = 1e-5 * max(1.0, float(np.abs(flat).max(initial=0.0)))
    grad = np.empty(flat.size)
    for i in range(flat.size):
        e = np.zeros(flat.size)
        e[i] = h
        fp = f((flat + e).reshape(theta.shape))
        fm = f((flat - e).reshape(theta.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteValue(f"non-finite evaluation along coordinate {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(theta.shape)


def finite_difference_hessian(f, theta, h=1e-4):
    """Central second differences; exact up to rounding for quadratics."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    n = theta.size
    H = np.empty((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        for j in range(i, n):
            H[i, j] = H[j, i] = (f(theta + eye[i] + eye[j]) - f(theta + eye[i] - eye[j])
                                 - f(theta - eye[i] + eye[j]) + f(theta - eye[i] - eye[j])) / (4 * h * h)
    return H


def neumann_values(P, r, gamma, n_terms):
    """Σ_{k<n} γ^k P^k r by repeated multiplication."""
    v = np.zeros_like(r, dtype=float)
    term = np.array(r, dtype=float)
    for _ in range(n_terms):
        v += term
        term = gamma * (P @ term)
    return v


def discounted_visits(P, rho0, gamma, n_terms):
    """Σ_{k<n} γ^k ρ0^T P^k."""
    nu = np.zeros_like(rho0, dtype=float)
    row = np.array(rho0, dtype=float)
    for _ in range(n_terms):
        nu += row
        row = gamma * (row @ P)
    return nu


def power_stationary(P, steps=20000):
    """A row of P^steps via repeated squaring."""
    e = bin(steps)[2:]
    M = np.eye(P.shape[0])
    for bit in e:
        M = M @ M
        if bit == "1":
            M = M @ P
    return M[0]


def lqr_moment_series(problem, k, gamma, n_steps, sigma0=None):
    """Exact moment propagation: (Σ_k γ^k E[s s^T], Σ_k γ^k E[cost_k]) over n_steps."""
    ak = problem.closed_loop(k)
    k = np.asarray(k, dtype=float).reshape(problem.m, problem.n)
    cov = problem.w if sigma0 is None else np.asarray(sigma0, dtype=float)
    stage = problem.q + k.T @ problem.r @ k
    moment = np.zeros_like(cov)
    total = 0.0
    weight = 1.0
    for _ in range(n_steps):
        moment += weight * cov
        total += weight * float(np.trace(stage @ cov))
        cov = ak @ cov @ ak.T + problem.w
        weight *= gamma
    return moment, total


def lqr_covariance_limit(problem, k, tol=1e-15, max_steps=100_000):
    """Stationary state covariance by propagating Σ <- A_K Σ A_K^T + W."""
    ak = problem.closed_loop(k)
    cov = np.array(problem.w, dtype=float)
    for _ in range(max_steps):
        nxt = ak @ cov @ ak.T + problem.w
        if np.abs(nxt - cov).max() <= tol * max(1.0, np.abs(nxt).max()):
            return nxt
        cov = nxt
    raise UnstableGains("covariance propagation did not settle", k)


def dare_gain(problem, setup):
    """Optimal gain from scipy's discrete algebraic Riccati solver (√γ-scaled system)."""
    gamma = 1.0 if setup.is_average else setup.gamma
    sg = np.sqrt(gamma)
    p = scipy.linalg.solve_discrete_are(sg * problem.a, sg * problem.b, problem.q, problem.r)
    u = problem.r + gamma * problem.b.T @ p @ problem.b
    return np.linalg.solve(u, gamma * problem.b.T @ p @ problem.a)


def random_lqr_problem(seed, n=None, m=None):
    """Random controllable-ish system with open-loop spectral radius in [0.5, 1.3]."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4)) if n is None else n
    m = int(rng.integers(1, n)) if m is None else m
    a = rng.standard_normal((n, n))
    a *= rng.uniform(0.5, 1.3) / lqr.spectral_radius(a)
    b = rng.standard_normal((n, m))
    lw = rng.standard_normal((n, n))
    lq = rng.standard_normal((n, n))
    lr = rng.standard_normal((m, m))
    return lqr.LqrProblem(a, b, lw @ lw.T + 0.5 * np.eye(n), lq @ lq.T + 0.1 * np.eye(n),
                          lr @ lr.T + 0.5 * np.eye(m))


def random_stable_gains(problem, rng, scale=0.2, max_tries=1000):
    """Perturb the average-optimal gain K* until ρ(A_K) < (1 + ρ(A_K*)) / 2.

    Such gains are stabilizing for every setup.  The perturbation shrinks
    by half after every 100 misses.
    """
    base = dare_gain(problem, Setup.average())
    radius = 0.5 * (1.0 + lqr.spectral_radius(problem.closed_loop(base)))
    for i in range(max_tries):
        k = base + scale * 0.5 ** (i // 100) * rng.standard_normal(base.shape)
        if lqr.spectral_radius(problem.closed_loop(k)) < radius:
            return k
    raise UnstableGains("no stable perturbation found", base)


def enumerate_deterministic_optimum(mdp, setup, max_policies=4096):
    """Best deterministic policy by exhaustive search (ties: lexicographically first)."""
    count = mdp.n_actions ** mdp.n_states
    if count > max_policies:
        raise TooLarge(f"{count} deterministic policies exceed the limit of {max_policies}")
    best, best_j = None, -np.inf
    for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        pol = DeterministicTablePolicy(np.array(acts), mdp.n_actions)
        j = value_functions(mdp, pol, setup).objective
        if j > best_j + 1e-12 * max(1.0, abs(best_j) if np.isfinite(best_j) else 1.0):
            best, best_j = pol, j
    return best, best_j


# -- bias study ---------------------------------------------------------------------


@dataclass
class BiasReport:
    estimator_mean: np.ndarray
    exact_target: np.ndarray
    mixed_target: np.ndarray
    standard_error: np.ndarray
    n_samples: int
    verdict: str

    def to_dict(self):
        d = asdict(self)
        for key in ("estimator_mean", "exact_target", "mixed_target", "standard_error"):
            d[key] = np.asarray(d[key]).tolist()
        return d


def verdict(mean, exact, mixed, se):
    z_exact = np.abs(mean - exact) / se
    z_mixed = np.abs(mean - mixed) / se
    if np.all(z_exact < 3):
        return MATCHES_EXACT
    if np.all(z_mixed < 3) and np.any(z_exact > 5):
        return MATCHES_MIXED
    return INCONCLUSIVE


def _report(samples, exact, mixed):
    mean, se = mean_and_se(samples)
    se = np.maximum(se, 1e-300)
    return BiasReport(mean, exact, mixed, se, len(samples), verdict(mean, exact, mixed, se))


def estimator_bias_study(mdp, policy, gamma, n_paths=1000, horizon=2000, seed=0):
    """Correct (γ^k-weighted) vs hybrid (plain path average) gradient estimators.

    Both read the same trajectories.  Each report states its targets on the
    estimator's own scale: the discounted sum targets ∇J_γ (measure mass
    1/(1-γ)); the path average targets (1-γ)∇J_γ (mass 1).  The mixed target
    is Σ ν_μ π ∇log π Q_γ on the matching scale.
    """
    setup = Setup.discounted(gamma)
    horizon = max(horizon, truncation_horizon(gamma))
    trajs = rollouts(mdp, policy, horizon, seed, n_paths)
    q = value_functions(mdp, policy, setup).q
    g = q[:, :, None] * score_table(policy)

    exact = policy_gradient(mdp, policy, setup).grad
    nu_mu = stationary_measure(mdp, policy).weights
    mixed = np.einsum("sa,sap->p", nu_mu[:, None] * policy.probs * q, score_table(policy))

    correct = time_estimates(trajs, g, setup)
    hybrid = time_estimates(trajs, g, Setup.average())
    return {
        "correct": _report(correct, exact, mixed / (1 - gamma)),
        "hybrid": _report(hybrid, (1 - gamma) * exact, mixed),
    }


def abel_limit_study(mdp, policy, gamma_grid=(0.9, 0.99, 0.999, 0.9999)):
    """Rows of (γ, (1-γ)J_γ, J_μ, gap)."""
    j_mu = value_functions(mdp, policy, Setup.average()).objective
    rows = []
    for gamma in gamma_grid:
        scaled = (1 - gamma) * value_functions(mdp, policy, Setup.discounted(gamma)).objective
        rows.append((gamma, scaled, j_mu, abs(scaled - j_mu)))
    return rows


def write_rows_csv(header, rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
