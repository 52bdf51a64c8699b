"""Policy improvement rules for tabular policies.

Every quantity here pairs ν_• with the value function of the *same* setup:
discounted quantities use ν_γ (mass 1/(1-γ)) and Q_γ, average quantities use
the stationary ν_μ and Q_μ.  Mixed pairings live in :mod:`polopt.incorrect`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGradient, UnsupportedAction, ValidationError
from .mdp import DeterministicTablePolicy, Setup, score_table, value_functions
from .measures import measure_for

PINV_RCOND = 1e-10
DEFAULT_DAMPING = 1e-8


@dataclass(frozen=True, eq=False)
class GradientReport:
    grad: np.ndarray
    setup: Setup
    method: str = "exact"
    curvature: np.ndarray | None = None
    stderr: np.ndarray | None = None

    def __post_init__(self):
        W = self.curvature
        if W is not None:
            if np.abs(W - W.T).max() > 1e-10:
                raise ValidationError("curvature is not symmetric")
            if np.linalg.eigvalsh(W).min() < -1e-8:
                raise ValidationError("curvature is not positive semidefinite")

    def to_dict(self):
        d = {"method": self.method, "setup": str(self.setup), "grad": np.ravel(self.grad).tolist()}
        if self.curvature is not None:
            d["curvature"] = np.ravel(self.curvature).tolist()
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        grad = np.asarray(d["grad"], dtype=float)
        W = d.get("curvature")
        if W is not None:
            W = np.asarray(W, dtype=float).reshape(grad.size, grad.size)
        return cls(grad, Setup.parse(d["setup"]), d["method"], W)


@dataclass(frozen=True)
class TrustRegionConfig:
    rho: float = 0.01
    damping: float = DEFAULT_DAMPING
    eta: float = 0.1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValidationError("rho must be positive")
        if not self.damping >= 0:
            raise ValidationError("damping must be nonnegative")
        if not self.eta > 0:
            raise ValidationError("eta must be positive")


def performance_difference(mdp, pi_new, pi_old, setup):
    """Σ_s ν^{π'}(s) Σ_a π'(a|s) A^π(s, a): equals J(π') - J(π)."""
    adv = value_functions(mdp, pi_old, setup).adv
    nu = measure_for(mdp, pi_new, setup).weights
    return float(np.sum(nu[:, None] * pi_new.probs * adv))


def approx_performance_difference(mdp, pi_new, pi_old, setup):
    """Same as above with ν and the action distribution taken from π (ratio form)."""
    adv = value_functions(mdp, pi_old, setup).adv
    nu = measure_for(mdp, pi_old, setup).weights
    return float(np.sum(nu[:, None] * pi_new.probs * adv))


def _greedy(adv, tol=1e-12):
    scale = max(1.0, float(np.abs(adv).max()))
    best = adv.max(axis=1, keepdims=True)
    # lowest index among (near-)maximizers
    return np.argmax(adv >= best - tol * scale, axis=1)


def policy_iteration_step(mdp, policy, setup):
    adv = value_functions(mdp, policy, setup).adv
    return DeterministicTablePolicy(_greedy(adv), mdp.n_actions)


def policy_iteration(mdp, setup, policy=None, max_iter=None):
    """Iterate greedy improvement until the policy repeats.

    Returns the list of visited policies and their objectives.
    """
    if policy is None:
        policy = DeterministicTablePolicy(np.zeros(mdp.n_states, dtype=int), mdp.n_actions)
    if max_iter is None:
        max_iter = mdp.n_actions ** mdp.n_states
    policies = [policy]
    objectives = [value_functions(mdp, policy, setup).objective]
    for _ in range(max_iter):
        new = policy_iteration_step(mdp, policies[-1], setup)
        if new == policies[-1]:
            break
        policies.append(new)
        objectives.append(value_functions(mdp, new, setup).objective)
    return policies, objectives


def policy_gradient(mdp, policy, setup):
    q = value_functions(mdp, policy, setup).q
    nu = measure_for(mdp, policy, setup).weights
    weight = nu[:, None] * policy.probs * q
    grad = np.einsum("sa,sap->p", weight, score_table(policy))
    return GradientReport(grad, setup)


def _curvature(nu, policy):
    scores = score_table(policy)
    w = nu[:, None] * policy.probs
    W = np.einsum("sa,sap,saq->pq", w, scores, scores)
    return 0.5 * (W + W.T)


def policy_curvature(mdp, policy, setup):
    vals = value_functions(mdp, policy, setup)
    nu = measure_for(mdp, policy, setup).weights
    scores = score_table(policy)
    grad = np.einsum("sa,sap->p", nu[:, None] * policy.probs * vals.q, scores)
    return GradientReport(grad, setup, curvature=_curvature(nu, policy))


def kl_metric(mdp, pi_new, pi_old, setup):
    """Σ_s ν^{π_old}(s) KL(π_new(.|s) || π_old(.|s))."""
    p, q = pi_new.probs, pi_old.probs
    bad = np.argwhere((q == 0) & (p > 0))
    if len(bad):
        s, a = bad[0]
        raise UnsupportedAction(f"old policy gives zero probability to action {a} in state {s}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    nu = measure_for(mdp, pi_old, setup).weights
    return float(nu @ terms.sum(axis=1))


def _pinv(W, damping):
    return np.linalg.pinv(W + damping * np.eye(W.shape[0]), rcond=PINV_RCOND, hermitian=True)


def natural_gradient_step(report, config):
    """η (W + damping·I)^† g."""
    g = np.ravel(report.grad)
    return config.eta * _pinv(report.curvature, config.damping) @ g


def trust_region_step(report, config):
    """Maximizer of δ^T g subject to δ^T W δ <= 2ρ (closed-form KKT solution)."""
    g = np.ravel(report.grad)
    x = _pinv(report.curvature, config.damping) @ g
    denom = float(g @ x)
    if denom <= 1e-14:
        raise DegenerateGradient(f"g^T W^+ g = {denom:.3e}")
    step = np.sqrt(2.0 * config.rho / denom) * x
    used = float(step @ report.curvature @ step)
    assert used <= 2.0 * config.rho * (1 + 1e-6), used
    return step


# -- PPO-clip -------------------------------------------------------------------


def _clip_terms(pi_new, pi_old, adv, epsilon):
    r = pi_new.probs / pi_old.probs
    unclipped = r * adv
    clipped = np.clip(r, 1 - epsilon, 1 + epsilon) * adv
    return r, unclipped, clipped


def ppo_clip_surrogate(mdp, pi_new, pi_old, setup, epsilon):
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    adv = value_functions(mdp, pi_old, setup).adv
    nu = measure_for(mdp, pi_old, setup).weights
    _, unclipped, clipped = _clip_terms(pi_new, pi_old, adv, epsilon)
    return float(np.sum(nu[:, None] * pi_old.probs * np.minimum(unclipped, clipped)))


def _ppo_surrogate_grad(pi_new, pi_old, adv, nu, epsilon):
    r, unclipped, clipped = _clip_terms(pi_new, pi_old, adv, epsilon)
    # the min picks the flat clipped branch only when the ratio left the band
    # in the direction the advantage rewards
    live = unclipped <= clipped
    coef = nu[:, None] * pi_old.probs * np.where(live, adv * r, 0.0)
    return np.einsum("sa,sap->p", coef, score_table(pi_new))


def ppo(mdp, policy, setup, epsilon=0.2, n_outer=50, n_inner=20, lr=0.1):
    """PPO-clip with exact full-batch inner gradient ascent.

    Returns the list of policies at each re-anchoring (including the start).
    """
    policies = [policy]
    for _ in range(n_outer):
        old = policies[-1]
        vals = value_functions(mdp, old, setup)
        nu = measure_for(mdp, old, setup).weights
        theta = old.theta.reshape(-1).copy()
        for _ in range(n_inner):
            g = _ppo_surrogate_grad(old.with_theta(theta), old, vals.adv, nu, epsilon)
            theta = theta + lr * g
        policies.append(old.with_theta(theta))
    return policies


# -- first/second order loops (used by the demo) ----------------------------------


def gradient_ascent(mdp, policy, setup, step, n_iter):
    policies = [policy]
    for _ in range(n_iter):
        g = policy_gradient(mdp, policies[-1], setup).grad
        policies.append(policies[-1].with_theta(policies[-1].theta.reshape(-1) + step * g))
    return policies


def natural_gradient_ascent(mdp, policy, setup, config, n_iter, trust_region=False):
    rule = trust_region_step if trust_region else natural_gradient_step
    policies = [policy]
    for _ in range(n_iter):
        report = policy_curvature(mdp, policies[-1], setup)
        try:
            d = rule(report, config)
        except DegenerateGradient:
            break
        policies.append(policies[-1].with_theta(policies[-1].theta.reshape(-1) + d))
    return policies
