"""Acceptance suite: one named check per property, grouped by prefix.

Each check raises :class:`CheckFailed` with the first violated invariant, or
returns a one-line summary of what it measured.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import experiments, lqr, oracle
from .mdp import Setup, SoftmaxPolicy, objective, random_mdp, score_table, value_functions
from .measures import measure_for, mean_and_se, rollouts, space_average, time_estimates, truncation_horizon
from .optimizers import kl_metric, performance_difference, policy_curvature, policy_gradient, policy_iteration

TOTAL_BUDGET = 600.0


class CheckFailed(AssertionError):
    pass


def require(ok, message):
    if not ok:
        raise CheckFailed(message)


def base_seed():
    return int(os.environ.get("POLOPT_SEED", "0"))


SETUPS = (Setup.discounted(0.9), Setup.average())


# -- tabular ------------------------------------------------------------------------


def check_performance_difference():
    worst = 0.0
    seed = base_seed()
    for i in range(100):
        mdp = random_mdp(4, 3, seed + i)
        old = SoftmaxPolicy.random(4, 3, seed + 1000 + i)
        new = SoftmaxPolicy.random(4, 3, seed + 2000 + i)
        for setup in SETUPS:
            lhs = performance_difference(mdp, new, old, setup)
            rhs = objective(mdp, new, setup) - objective(mdp, old, setup)
            err = abs(lhs - rhs)
            require(err < 1e-9, f"instance {i} {setup}: |formula - ΔJ| = {err:.3e}")
            worst = max(worst, err)
    return f"200 cases, max error {worst:.1e}"


def _ergodicity_case(mdp, policy, setup, seed):
    """Largest componentwise |time mean - space average| / SE per test function."""
    nu = measure_for(mdp, policy, setup)
    vals = value_functions(mdp, policy, setup)
    horizon = 100_000 if setup.is_average else truncation_horizon(setup.gamma)
    trajs = rollouts(mdp, policy, horizon, seed, 200)
    out = {}
    for name, f in (("R", mdp.reward), ("score*Q", vals.q[:, :, None] * score_table(policy))):
        mean, se = mean_and_se(time_estimates(trajs, f, setup))
        out[f"{setup} f={name}"] = float(np.max(np.abs(mean - space_average(nu, policy, f)) / se))
    return out


def check_ergodicity():
    # the 3-state chain (seed 6); discounted rollouts from seed batch 7
    seed = base_seed()
    mdp = random_mdp(3, 2, seed + 6)
    policy = SoftmaxPolicy.random(3, 2, seed + 6)
    z = _ergodicity_case(mdp, policy, Setup.discounted(0.7), seed + 7)
    z.update(_ergodicity_case(mdp, policy, Setup.average(), seed + 6))
    summary = ", ".join(f"{k}: {v:.2f}" for k, v in z.items())
    bad = [k for k, v in z.items() if not v < 3]
    require(not bad, f"time/space mismatch >= 3 SE for {', '.join(bad)} ({summary})")
    return f"200 paths per setup, deviations in SE: {summary}"


def check_tabular_gradient():
    seed = base_seed()
    worst = 0.0
    for i in range(50):
        mdp = random_mdp(4, 3, seed + 100 + i)
        policy = SoftmaxPolicy.random(4, 3, seed + 200 + i)
        theta = policy.theta.reshape(-1)
        for setup in SETUPS:
            g = policy_gradient(mdp, policy, setup).grad
            fd = oracle.finite_difference(lambda th: objective(mdp, policy.with_theta(th), setup), theta, 1e-5)
            rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
            require(rel < 1e-5, f"instance {i} {setup}: relative error {rel:.2e}")
            worst = max(worst, rel)
    return f"100 cases, max relative error {worst:.1e}"


def check_lqr_gradient():
    seed = base_seed()
    worst = 0.0
    for i in range(50):
        problem = oracle.random_lqr_problem(seed + 300 + i)
        k = oracle.random_stable_gains(problem, np.random.default_rng(seed + 300 + i))
        for setup in (Setup.discounted(0.7), Setup.average()):
            g = lqr.gradient(problem, k, setup)
            fd = oracle.finite_difference(lambda kk: lqr.objective(problem, kk, setup), k)
            rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
            require(rel < 1e-5, f"instance {i} {setup}: relative error {rel:.2e}")
            worst = max(worst, rel)
    return f"100 cases, max relative error {worst:.1e}"


def check_kl_curvature():
    seed = base_seed()
    worst = 0.0
    for i in range(5):
        mdp = random_mdp(5, 3, seed + 11 + i)
        policy = SoftmaxPolicy.random(5, 3, seed + 11 + i)
        direction = np.random.default_rng(seed + 11 + i).standard_normal(policy.n_params)
        direction /= np.linalg.norm(direction)
        for setup in SETUPS:
            W = policy_curvature(mdp, policy, setup).curvature
            errs = []
            for size in (1e-2, 1e-3, 1e-4):
                d = size * direction
                kl = kl_metric(mdp, policy.with_theta(policy.theta.reshape(-1) + d), policy, setup)
                errs.append(abs(kl / (0.5 * d @ W @ d) - 1))
            require(errs[-1] < 1e-3, f"instance {i} {setup}: ratio off by {errs[-1]:.2e} at |δ|=1e-4")
            # the ratio error is O(|δ|): each tenfold shrink should cut it ~10x
            require(all(a > 5 * b for a, b in zip(errs, errs[1:])),
                    f"instance {i} {setup}: no second-order convergence, errors {errs}")
            worst = max(worst, errs[-1])
    return f"10 cases, |KL/(½δᵀWδ) - 1| <= {worst:.1e} at |δ|=1e-4"


def check_lqr_curvature():
    seed = base_seed()
    worst = 0.0
    for i in range(10):
        problem = lqr.default_problem() if i == 0 else oracle.random_lqr_problem(seed + 400 + i)
        k = oracle.random_stable_gains(problem, np.random.default_rng(seed + 400 + i))
        for setup in (Setup.discounted(0.7), Setup.average()):
            if setup.is_average:
                moment = oracle.lqr_covariance_limit(problem, k)
            else:
                moment = oracle.lqr_moment_series(problem, k, setup.gamma, 200)[0]

            def metric(delta):
                d = delta.reshape(problem.m, problem.n)
                return float(np.trace(d @ moment @ d.T))

            half_hessian = 0.5 * oracle.finite_difference_hessian(metric, np.zeros(problem.m * problem.n), h=1.0)
            expected = np.kron(np.eye(problem.m), lqr.curvature(problem, k, setup))
            rel = np.abs(half_hessian - expected).max() / np.abs(expected).max()
            require(rel < 1e-10, f"instance {i} {setup}: curvature vs metric Hessian {rel:.2e}")
            worst = max(worst, rel)
    return f"20 cases, max relative error {worst:.1e}"


def check_limits():
    seed = base_seed()
    worst_j = worst_a = 0.0
    for i in range(20):
        mdp = random_mdp(5, 3, seed + i)
        policy = SoftmaxPolicy.random(5, 3, seed + i)
        rows = oracle.abel_limit_study(mdp, policy)
        j_mu = rows[0][2]
        gap = rows[-1][3] / max(1.0, abs(j_mu))
        require(gap < 1e-3, f"MDP {i}: Abel gap {gap:.2e} at γ=0.9999")
        avg = value_functions(mdp, policy, Setup.average()).adv
        disc = value_functions(mdp, policy, Setup.discounted(0.9999)).adv
        adv_gap = np.abs(disc - avg).max() / max(1.0, np.abs(avg).max())
        require(adv_gap < 1e-2, f"MDP {i}: advantage gap {adv_gap:.2e} at γ=0.9999")
        worst_j, worst_a = max(worst_j, gap), max(worst_a, adv_gap)
    return f"20 MDPs, Abel gap <= {worst_j:.1e}, advantage gap <= {worst_a:.1e}"


def check_bias_study():
    mdp = random_mdp(5, 3, 21)
    policy = SoftmaxPolicy.random(5, 3, 21)
    study = oracle.estimator_bias_study(mdp, policy, 0.7, n_paths=1000, horizon=2000, seed=21)
    require(study["correct"].verdict == oracle.MATCHES_EXACT,
            f"correct estimator verdict {study['correct'].verdict}")
    require(study["hybrid"].verdict == oracle.MATCHES_MIXED,
            f"hybrid estimator verdict {study['hybrid'].verdict}")
    h = study["hybrid"]
    z = np.max(np.abs(h.estimator_mean - h.exact_target) / h.standard_error)
    return f"correct={study['correct'].verdict}, hybrid={h.verdict} ({z:.0f} SE from exact)"


def check_policy_iteration():
    seed = base_seed()
    for i in range(20):
        mdp = random_mdp(3 + i % 3, 2 + i % 2, seed + 20 + i)
        for setup in SETUPS:
            policies, objs = policy_iteration(mdp, setup)
            require(all(b >= a - 1e-10 * max(1.0, abs(a)) for a, b in zip(objs, objs[1:])),
                    f"MDP {i} {setup}: objective decreased along iterates {objs}")
            best, best_j = oracle.enumerate_deterministic_optimum(mdp, setup)
            require(abs(objs[-1] - best_j) <= 1e-10 * max(1.0, abs(best_j)),
                    f"MDP {i} {setup}: PI {objs[-1]!r} vs enumeration {best_j!r}")
    return "20 MDPs x 2 setups match enumeration, monotone"


# -- LQR ------------------------------------------------------------------------------


def _difference_pairs(seed):
    cases = []
    for i in range(50):
        problem = lqr.default_problem() if i < 10 else oracle.random_lqr_problem(seed + 500 + i)
        rng = np.random.default_rng(seed + 18 + i)
        cases.append((problem, oracle.random_stable_gains(problem, rng, 0.3),
                      oracle.random_stable_gains(problem, rng, 0.3)))
    return cases


def difference_errors(setups=(Setup.discounted(0.7), Setup.average())):
    """Max |linear + quadratic - ΔJ| per setup over the 50 stable pairs."""
    out = {}
    for setup in setups:
        worst = 0.0
        for problem, k_old, k_new in _difference_pairs(base_seed()):
            total = lqr.performance_difference_lqr(problem, k_old, k_new, setup)[2]
            diff = lqr.objective(problem, k_new, setup) - lqr.objective(problem, k_old, setup)
            worst = max(worst, abs(total - diff) / max(1.0, abs(diff)))
        out[str(setup)] = worst
    return out


def check_lqr_difference():
    errs = difference_errors()
    for setup, err in errs.items():
        require(err < 1e-8, f"{setup}: linear+quadratic vs ΔJ off by {err:.2e}")
    return ", ".join(f"{s}: {e:.1e}" for s, e in errs.items())


def check_gamma_mutation():
    with lqr.gamma_correction_disabled():
        errs = difference_errors((Setup.discounted(0.7),))
    err = errs["discounted(0.7)"]
    require(err > 1e-6, f"dropping γ from U and G went unnoticed (error {err:.2e})")
    return f"without the γ correction the identity is off by {err:.2e}"


def check_riccati():
    seed = base_seed()
    for i in range(6):
        problem = lqr.default_problem() if i == 0 else oracle.random_lqr_problem(seed + 600 + i)
        k0 = oracle.random_stable_gains(problem, np.random.default_rng(seed + 600 + i), 0.3)
        for setup in (Setup.discounted(0.7), Setup.average()):
            ks = lqr.riccati_iterates(problem, setup, k0)
            costs = [lqr.objective(problem, k, setup) for k in ks]
            require(all(b <= a + 1e-10 * abs(a) for a, b in zip(costs, costs[1:])),
                    f"problem {i} {setup}: cost increased along iterates")
            err = np.abs(ks[-1] - oracle.dare_gain(problem, setup)).max()
            require(err < 1e-8, f"problem {i} {setup}: fixed point off the Riccati solution by {err:.2e}")
            gnorm = np.linalg.norm(lqr.gradient(problem, ks[-1], setup))
            require(gnorm < 1e-8, f"problem {i} {setup}: gradient {gnorm:.2e} at fixed point")
    return "6 problems x 2 setups match the Riccati solution, monotone"


def check_vector_field():
    problem = lqr.default_problem()
    gamma = experiments.DEFAULT_GAMMA
    k0 = np.array([[0.1, 0.8]])
    k_mu = lqr.riccati_fixed_point(problem, Setup.average(), k0)
    k_gamma = lqr.riccati_fixed_point(problem, Setup.discounted(gamma), k0)
    for method in experiments.CORRECT_MU + experiments.CORRECT_GAMMA:
        k_star = k_mu if method in experiments.CORRECT_MU else k_gamma
        mag = np.linalg.norm(experiments.direction(problem, k_star, method, gamma))
        require(mag < 1e-6, f"{method} has magnitude {mag:.2e} at its optimum")
    rows = experiments.vector_field(problem, gamma)
    pairs = [("hybrid_gradient", "grad_J_gamma"), ("hybrid_npg", "npg_gamma"),
             ("hybrid_gradient", "grad_J_mu"), ("hybrid_npg", "npg_mu"),
             ("hybrid_npg_hybrid_grad", "npg_mu")]
    parts = []
    for hybrid, correct in pairs:
        frac, n = experiments.deviation_fraction(rows, hybrid, correct)
        require(n > 0 and frac >= 0.2, f"{hybrid} vs {correct}: only {frac:.0%} of {n} points deviate")
        parts.append(f"{hybrid}/{correct} {frac:.0%}")
    return "; ".join(parts)


def check_gap():
    problem = lqr.default_problem()
    runs = experiments.gap_experiment(problem)
    for run in runs:
        final = run.gaps[-1]
        if run.method in ("gradient", "npg"):
            require(run.status != "diverged" and final < 1e-8,
                    f"{run.setup} {run.method}: final gap {final:.2e} ({run.status})")
        elif run.setup == "average":
            require(final > 1e-3 * run.j_star,
                    f"average {run.method}: reached gap {final:.2e} <= 1e-3 J*")
    plateau = min(r.gaps[-1] for r in runs if r.setup == "average" and r.method.startswith("hybrid"))
    return f"correct runs converge; average hybrids plateau at >= {plateau:.3f}"


def check_sweep():
    _, summary = experiments.sweep((0.3, 1.0), (0.7, 0.99))
    cos = {(a, g): c for a, g, c, _ in summary}
    for g in (0.7, 0.99):
        require(cos[(0.3, g)] > 0.99, f"α=0.3 γ={g}: mean cosine {cos[(0.3, g)]:.4f}")
    require(cos[(1.0, 0.7)] < cos[(0.3, 0.7)],
            f"α=1 γ=0.7 cosine {cos[(1.0, 0.7)]:.4f} not below α=0.3 ({cos[(0.3, 0.7)]:.4f})")
    return ", ".join(f"α={a} γ={g}: {c:.4f}" for (a, g), c in sorted(cos.items()))


@dataclass(frozen=True)
class Check:
    name: str
    criterion: int
    fn: object
    budget: float | None = None


CHECKS = (
    Check("tabular.performance_difference", 1, check_performance_difference, 30.0),
    Check("measures.ergodicity", 2, check_ergodicity, 120.0),
    Check("tabular.gradient_fd", 3, check_tabular_gradient, 60.0),
    Check("lqr.gradient_fd", 3, check_lqr_gradient, 60.0),
    Check("tabular.curvature_kl", 4, check_kl_curvature),
    Check("lqr.curvature_metric", 4, check_lqr_curvature),
    Check("tabular.limits", 5, check_limits),
    Check("tabular.bias_study", 6, check_bias_study, 180.0),
    Check("lqr.performance_difference", 7, check_lqr_difference),
    Check("lqr.gamma_correction_mutation", 7, check_gamma_mutation),
    Check("lqr.vector_field", 8, check_vector_field),
    Check("lqr.optimality_gap", 9, check_gap),
    Check("lqr.sweep", 10, check_sweep),
    Check("tabular.policy_iteration", 11, check_policy_iteration),
    Check("lqr.policy_iteration", 11, check_riccati),
)


@dataclass
class Result:
    name: str
    criterion: int
    passed: bool
    detail: str
    seconds: float

    def to_dict(self):
        return dict(self.__dict__)


def select(name_filter=None):
    if not name_filter:
        return list(CHECKS)
    if name_filter.isdigit():
        return [c for c in CHECKS if c.criterion == int(name_filter)]
    return [c for c in CHECKS if c.name == name_filter or c.name.startswith(name_filter + ".")]


def run_check(check):
    start = time.perf_counter()
    try:
        detail, passed = check.fn(), True
    except CheckFailed as exc:
        detail, passed = str(exc), False
    except Exception as exc:  # a crash is a failure, reported with its type
        detail, passed = f"{type(exc).__name__}: {exc}", False
    seconds = time.perf_counter() - start
    if passed and check.budget is not None and seconds > check.budget:
        detail, passed = f"took {seconds:.1f}s, budget {check.budget:.0f}s", False
    return Result(check.name, check.criterion, passed, detail, seconds)


def run(name_filter=None, out=print):
    checks = select(name_filter)
    results = []
    for check in checks:
        res = run_check(check)
        results.append(res)
        out(f"{'PASS' if res.passed else 'FAIL'}  c{res.criterion:<2d} {res.name:<32s} {res.seconds:7.1f}s  {res.detail}")
    return results

