"""LQR experiments: update-direction fields, optimality-gap runs, α×γ sweeps.

All directions are descent directions for the cost (negated updates), so an
arrow points where the method would move K.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import incorrect, lqr
from .errors import UnstableGains
from .mdp import Setup

FIELD_METHODS = (
    "policy_iteration_direction",
    "grad_J_mu",
    "npg_mu",
    "grad_J_gamma",
    "npg_gamma",
    "hybrid_gradient",
    "hybrid_npg",
    "hybrid_npg_hybrid_grad",
)
CORRECT_MU = ("policy_iteration_direction", "grad_J_mu", "npg_mu")
CORRECT_GAMMA = ("grad_J_gamma", "npg_gamma")
HYBRID = ("hybrid_gradient", "hybrid_npg", "hybrid_npg_hybrid_grad")

# Not stated for the figures; chosen to bracket both optima and the
# average-setup stability boundary of the default system.
DEFAULT_GRID = (-1.0, 1.5, -0.5, 2.5, 21)
DEFAULT_GAMMA = 0.7
STEP_SIZES = tuple(m * 10.0 ** e for e in (-4, -3, -2) for m in (1, 2, 5)) + (0.1,)
FIELD_HEADER = ["method", "i", "j", "k0", "k1", "dk0", "dk1", "raw_dk0", "raw_dk1", "magnitude", "stable"]


def direction(problem, k, method, gamma):
    """Raw descent direction of ``method`` at gains ``k`` (may raise UnstableGains)."""
    D, M = Setup.discounted(gamma), Setup.average()
    if method == "policy_iteration_direction":
        return lqr.policy_iteration_gain(problem, k, M) - k
    if method == "grad_J_mu":
        return -lqr.gradient(problem, k, M)
    if method == "npg_mu":
        return -lqr.natural_gradient(problem, k, M)
    if method == "grad_J_gamma":
        return -lqr.gradient(problem, k, D)
    if method == "npg_gamma":
        return -lqr.natural_gradient(problem, k, D)
    # the hybrids read S_μ, so they need average-setup stability as well
    if not lqr.is_stable(problem, k, M):
        raise UnstableGains("hybrid estimators need a stationary state distribution", k)
    if method == "hybrid_gradient":
        return -incorrect.lqr_hybrid_gradient(problem, k, gamma)
    if method == "hybrid_npg":
        return -incorrect.lqr_hybrid_natural_gradient(problem, k, gamma)
    if method == "hybrid_npg_hybrid_grad":
        return -incorrect.lqr_hybrid_natural_hybrid_gradient(problem, k, gamma)
    raise ValueError(f"unknown method {method!r}")


def grid_points(grid):
    k0_min, k0_max, k1_min, k1_max, steps = grid
    k0s = np.linspace(k0_min, k0_max, int(steps))
    k1s = np.linspace(k1_min, k1_max, int(steps))
    return [(i, j, k0s[i], k1s[j]) for i in range(int(steps)) for j in range(int(steps))]


def vector_field(problem, gamma=DEFAULT_GAMMA, grid=DEFAULT_GRID, methods=FIELD_METHODS):
    """Rows (method, i, j, k0, k1, dk0, dk1, raw_dk0, raw_dk1, magnitude, stable).

    Arrows are unit-normalized per row; unstable points carry NaN.  Rows are
    ordered by (method, grid index).
    """
    if problem.m != 1 or problem.n != 2:
        raise ValueError("vector fields need a 1x2 gain")
    nan = float("nan")
    rows = []
    for method in methods:
        for i, j, k0, k1 in grid_points(grid):
            k = np.array([[k0, k1]])
            try:
                d = direction(problem, k, method, gamma).ravel()
            except UnstableGains:
                rows.append([method, i, j, k0, k1, nan, nan, nan, nan, nan, 0])
                continue
            mag = float(np.hypot(*d))
            unit = d / mag if mag > 0 else np.zeros(2)
            rows.append([method, i, j, k0, k1, unit[0], unit[1], d[0], d[1], mag, 1])
    return rows


def angle_deg(u, v):
    c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def _by_point(rows, method):
    return {(r[1], r[2]): r for r in rows if r[0] == method}


def deviation_fraction(rows, method_a, method_b, threshold_deg=1.0):
    """Fraction of points where both are defined and their arrows differ by > threshold."""
    a, b = _by_point(rows, method_a), _by_point(rows, method_b)
    both = [p for p in a if a[p][10] and b[p][10]]
    if not both:
        return float("nan"), 0
    hits = sum(angle_deg(a[p][7:9], b[p][7:9]) > threshold_deg for p in both)
    return hits / len(both), len(both)


def mean_cosine(rows, method_a="grad_J_gamma", method_b="grad_J_mu"):
    a, b = _by_point(rows, method_a), _by_point(rows, method_b)
    cos = [float(np.dot(a[p][5:7], b[p][5:7])) for p in a if a[p][10] and b[p][10]]
    return (float(np.mean(cos)) if cos else float("nan")), len(cos)


# -- optimality gap -------------------------------------------------------------------


GAP_METHODS = ("gradient", "npg", "hybrid_gradient", "hybrid_npg", "hybrid_npg_hybrid_grad")


def _gap_direction(problem, k, method, setup, gamma):
    if method == "gradient":
        return lqr.gradient(problem, k, setup)
    if method == "npg":
        return lqr.natural_gradient(problem, k, setup)
    return -direction(problem, k, method, gamma)


@dataclass
class GapRun:
    setup: str
    method: str
    step_size: float
    gaps: list
    gains: list
    status: str  # converged | stalled | max_iters | diverged


def run_gap(problem, method, setup, step, k0, j_star, gamma=DEFAULT_GAMMA, max_iters=500, tol=1e-12):
    """Iterate K <- K - step·d until gap < tol, the iterates stop moving
    ("stalled": a fixed point of the rule that is not the optimum), the gap
    grows tenfold ("diverged"), or ``max_iters`` runs out."""
    k = np.asarray(k0, dtype=float).reshape(problem.m, problem.n)
    gap0 = lqr.objective(problem, k, setup) - j_star
    gaps, gains = [gap0], [k]
    status = "max_iters"
    for _ in range(max_iters):
        if gaps[-1] < tol:
            status = "converged"
            break
        try:
            move = step * _gap_direction(problem, k, method, setup, gamma)
            if np.abs(move).max() < tol:
                status = "stalled"
                break
            k = k - move
            gap = lqr.objective(problem, k, setup) - j_star
        except UnstableGains:
            status = "diverged"
            break
        if not np.isfinite(gap) or gap > 10 * max(gap0, 1e-12):
            status = "diverged"
            break
        gaps.append(gap)
        gains.append(k)
    else:
        if gaps[-1] < tol:
            status = "converged"
    return GapRun(str(setup), method, step, gaps, gains, status)


def _rank(run):
    if run.status == "diverged":
        return (3, math.inf, math.inf)
    if run.status == "converged":
        return (0, len(run.gaps), run.gaps[-1])
    if run.status == "stalled":
        return (1, len(run.gaps), run.gaps[-1])
    return (2, run.gaps[-1], len(run.gaps))


def tuned_gap(problem, method, setup, k0, j_star, gamma=DEFAULT_GAMMA, max_iters=500, step_sizes=STEP_SIZES):
    """Fastest non-divergent run over the step-size grid (first wins ties)."""
    runs = [run_gap(problem, method, setup, s, k0, j_star, gamma, max_iters) for s in step_sizes]
    return min(runs, key=_rank)


def gap_experiment(problem, gamma=DEFAULT_GAMMA, k0=(0.1, 0.8), max_iters=500, methods=GAP_METHODS,
                   step_sizes=STEP_SIZES):
    """Tuned runs for every (setup, method); J* from gain policy iteration."""
    k0 = np.asarray(k0, dtype=float).reshape(problem.m, problem.n)
    runs = []
    for setup in (Setup.discounted(gamma), Setup.average()):
        k_star = lqr.riccati_fixed_point(problem, setup, k0)
        j_star = lqr.objective(problem, k_star, setup)
        for method in methods:
            run = tuned_gap(problem, method, setup, k0, j_star, gamma, max_iters, step_sizes)
            run.j_star = j_star
            runs.append(run)
    return runs


GAP_HEADER = ["setup", "method", "step_size", "iteration", "k0", "k1", "objective_gap", "j_star", "status"]


def gap_rows(runs):
    nan = float("nan")
    rows = []
    for run in runs:
        head = [run.setup, run.method, run.step_size]
        for it, (gap, k) in enumerate(zip(run.gaps, run.gains)):
            rows.append(head + [it, *np.ravel(k)[:2], gap, run.j_star, "running"])
        if run.status == "diverged":
            rows.append(head + [len(run.gaps), nan, nan, nan, run.j_star, "diverged"])
        else:
            rows[-1][-1] = run.status
    return rows


# -- α × γ sweep ------------------------------------------------------------------------


def sweep(alphas, gammas, grid=DEFAULT_GRID):
    """Per-cell vector fields and mean cos(∇J_γ, ∇J_μ) over jointly stable points."""
    fields, summary = [], []
    for alpha in alphas:
        problem = lqr.default_problem(alpha)
        for gamma in gammas:
            rows = vector_field(problem, gamma, grid)
            cos, n = mean_cosine(rows)
            fields.append((alpha, gamma, rows))
            summary.append([alpha, gamma, cos, n])
    return fields, summary
