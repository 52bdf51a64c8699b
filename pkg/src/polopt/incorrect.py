"""Deliberately wrong estimators, kept apart from the correct-path API.

They mix the stationary measure ν_μ with discounted quantities:

* hybrid gradient              Σ_k ∇log π(a_k|s_k) Q_γ(s_k, a_k), no γ^k weights
* hybrid natural gradient      W_μ^† ∇J_γ
* hybrid natural hybrid grad.  W_μ^† (hybrid gradient)

Nothing in :mod:`polopt.optimizers` imports this module.
"""
import numpy as np

from . import lqr
from .mdp import Setup, score_table, value_functions
from .measures import mean_and_se, stationary_measure, time_estimates
from .optimizers import PINV_RCOND, GradientReport, _curvature


def hybrid_gradient(trajectories, policy, values_gamma):
    """Path average of score × Q_γ without discounting.

    Normalized by the path length, so the mean converges to
    Σ_s ν_μ(s) Σ_a π(a|s) ∇log π(a|s) Q_γ(s, a).
    """
    if values_gamma.setup.is_average:
        raise ValueError("hybrid_gradient expects discounted values")
    g = values_gamma.q[:, :, None] * score_table(policy)
    samples = time_estimates(trajectories, g, Setup.average())
    mean, se = mean_and_se(samples)
    return GradientReport(mean, values_gamma.setup, "monte_carlo_hybrid", stderr=se)


def hybrid_gradient_exact(mdp, policy, gamma):
    """The mixed-measure limit of :func:`hybrid_gradient`."""
    q = value_functions(mdp, policy, Setup.discounted(gamma)).q
    nu = stationary_measure(mdp, policy).weights
    return np.einsum("sa,sap->p", nu[:, None] * policy.probs * q, score_table(policy))


def stationary_curvature(mdp, policy):
    return _curvature(stationary_measure(mdp, policy).weights, policy)


def hybrid_natural_gradient(grad, mdp, policy):
    """W_μ^† grad.  Feed ∇J_γ for the hybrid NPG, a hybrid gradient for the double mistake."""
    W = stationary_curvature(mdp, policy)
    return np.linalg.pinv(W, rcond=PINV_RCOND, hermitian=True) @ np.ravel(grad)


# -- LQR counterparts (deterministic linear gains) -----------------------------
#
# Undiscounted path sums weight states by the stationary covariance S_μ, so
# the hybrid gradient is 2 G_γ S_μ and W_μ = S_μ.


def lqr_hybrid_gradient(problem, k, gamma):
    disc = lqr.solve(problem, k, Setup.discounted(gamma))
    avg = lqr.solve(problem, k, Setup.average())
    return 2.0 * disc.g @ avg.s


def lqr_hybrid_natural_gradient(problem, k, gamma):
    avg = lqr.solve(problem, k, Setup.average())
    return np.linalg.solve(avg.s, lqr.gradient(problem, k, Setup.discounted(gamma)).T).T


def lqr_hybrid_natural_hybrid_gradient(problem, k, gamma):
    avg = lqr.solve(problem, k, Setup.average())
    return np.linalg.solve(avg.s, lqr_hybrid_gradient(problem, k, gamma).T).T
