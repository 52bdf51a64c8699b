"""Finite MDPs, tabular policies and exact value computation.

Both setups reduce to dense linear solves:

    discounted   (I - γ P^π) V = R^π
    average      (I - P^π + 1 ν^T) V = R^π - J·1,   J = ν^T R^π

where ν is the stationary distribution of P^π.  The total-reward setup is
the discounted one with γ = 1 on an MDP made absorbing by :func:`terminalize`.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NonErgodicChain, SingularSystem, ValidationError

PROB_TOL = 1e-12
RESIDUAL_TOL = 1e-10


def _frozen(x, dtype=float):
    a = np.array(x, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Setup:
    """Discounted(gamma) when ``gamma`` is set, long-run average otherwise."""

    gamma: float | None = None

    def __post_init__(self):
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")

    @classmethod
    def discounted(cls, gamma):
        return cls(float(gamma))

    @classmethod
    def average(cls):
        return cls(None)

    @property
    def is_average(self):
        return self.gamma is None

    @property
    def kind(self):
        return "average" if self.is_average else "discounted"

    def __str__(self):
        return "average" if self.is_average else f"discounted({self.gamma:g})"

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text == "average":
            return cls.average()
        if text.startswith("discounted(") and text.endswith(")"):
            return cls.discounted(float(text[len("discounted("):-1]))
        raise ValidationError(f"cannot parse setup {text!r}")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray  # (S, A, S')
    reward: np.ndarray  # (S, A)
    rho0: np.ndarray  # (S,)
    terminal: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "rho0", _frozen(self.rho0))
        problem = check_mdp(self.transition, self.reward, self.rho0, self.terminal)
        if problem:
            raise ValidationError(problem)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def to_dict(self):
        d = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "rho0": self.rho0.tolist(),
        }
        if self.terminal is not None:
            d["terminal"] = self.terminal
        return d


def check_mdp(transition, reward, rho0, terminal=None):
    """Return a description of the first violated invariant, or None."""
    if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
        return f"transition must have shape (S, A, S), got {transition.shape}"
    S, A, _ = transition.shape
    if S < 1 or A < 1:
        return "need at least one state and one action"
    if reward.shape != (S, A):
        return f"reward must have shape ({S}, {A}), got {reward.shape}"
    if rho0.shape != (S,):
        return f"rho0 must have shape ({S},), got {rho0.shape}"
    for arr, name in ((transition, "transition"), (reward, "reward"), (rho0, "rho0")):
        if not np.all(np.isfinite(arr)):
            idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            return f"{name}{list(idx)} is not finite"
    neg = np.argwhere(transition < 0)
    if len(neg):
        s, a, t = (int(i) for i in neg[0])
        return f"transition[{s}][{a}][{t}] = {transition[s, a, t]} is negative"
    sums = transition.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > PROB_TOL)
    if len(bad):
        s, a = (int(i) for i in bad[0])
        return f"transition[{s}][{a}] sums to {float(sums[s, a])!r}, not 1"
    neg = np.flatnonzero(rho0 < 0)
    if len(neg):
        return f"rho0[{int(neg[0])}] = {rho0[neg[0]]} is negative"
    if abs(rho0.sum() - 1.0) > PROB_TOL:
        return f"rho0 sums to {float(rho0.sum())!r}, not 1"
    if terminal is not None:
        if not 0 <= terminal < S:
            return f"terminal state {terminal} out of range"
        if not np.all(transition[terminal, :, terminal] == 1.0):
            return f"terminal state {terminal} is not absorbing"
        if np.any(reward[terminal] != 0.0):
            return f"terminal state {terminal} has nonzero reward"
    return None


def mdp_from_dict(d):
    try:
        transition = np.asarray(d["transition"], dtype=float)
        reward = np.asarray(d["reward"], dtype=float)
        rho0 = np.asarray(d["rho0"], dtype=float)
    except KeyError as e:
        raise ValidationError(f"missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise ValidationError(f"malformed array: {e}") from None
    for key, axis in (("n_states", 0), ("n_actions", 1)):
        if key in d and transition.ndim == 3 and d[key] != transition.shape[axis]:
            raise ValidationError(f"{key}={d[key]} but transition has {transition.shape[axis]}")
    return TabularMdp(transition, reward, rho0, d.get("terminal"))


def load_mdp(path):
    with open(path) as f:
        return mdp_from_dict(json.load(f))


def save_mdp(mdp, path):
    with open(path, "w") as f:
        json.dump(mdp.to_dict(), f, indent=1)


def random_mdp(n_states, n_actions, seed, reward_scale=1.0):
    """Dense random MDP: Dirichlet(1) rows, normal rewards, Dirichlet ρ0."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = reward_scale * rng.standard_normal((n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P, R, rho0)


def random_episodic_mdp(n_states, n_actions, seed, p_end=0.2):
    """Random MDP whose last state is an absorbing zero-reward terminal.

    Every non-terminal (s, a) moves to the terminal with probability at
    least ``p_end``, so every policy terminates in finite expected time.
    """
    rng = np.random.default_rng(seed)
    n = n_states - 1
    P = np.zeros((n_states, n_actions, n_states))
    P[:n, :, :n] = (1 - p_end) * rng.dirichlet(np.ones(n), size=(n, n_actions))
    P[:n, :, n] = p_end
    P[n, :, n] = 1.0
    R = rng.standard_normal((n_states, n_actions))
    rho0 = np.zeros(n_states)
    rho0[:n] = rng.dirichlet(np.ones(n))
    return terminalize(TabularMdp(P, R, rho0), n)


def terminalize(mdp, terminal_state):
    """Copy of ``mdp`` where ``terminal_state`` self-loops with zero reward."""
    if not 0 <= terminal_state < mdp.n_states:
        raise ValidationError(f"terminal state {terminal_state} out of range")
    P = np.array(mdp.transition)
    R = np.array(mdp.reward)
    P[terminal_state] = 0.0
    P[terminal_state, :, terminal_state] = 1.0
    R[terminal_state] = 0.0
    return TabularMdp(P, R, mdp.rho0, terminal_state)


# -- policies ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    theta: np.ndarray  # (S, A) logits
    probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = _frozen(self.theta)
        if theta.ndim != 2:
            raise ValidationError(f"theta must be (S, A), got shape {theta.shape}")
        z = theta - theta.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def random(cls, n_states, n_actions, seed, scale=1.0):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((n_states, n_actions)))

    @property
    def n_params(self):
        return self.theta.size

    def with_theta(self, theta):
        return SoftmaxPolicy(np.reshape(theta, self.theta.shape))


@dataclass(frozen=True, eq=False)
class DeterministicTablePolicy:
    actions: np.ndarray  # (S,) action index per state
    n_actions: int
    probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        actions = _frozen(self.actions, dtype=np.int64)
        if actions.ndim != 1:
            raise ValidationError("actions must be a vector over states")
        bad = np.flatnonzero((actions < 0) | (actions >= self.n_actions))
        if len(bad):
            raise ValidationError(
                f"action {actions[bad[0]]} for state {bad[0]} out of range [0, {self.n_actions})")
        p = np.zeros((len(actions), self.n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "probs", _frozen(p))

    def __eq__(self, other):
        return (isinstance(other, DeterministicTablePolicy)
                and self.n_actions == other.n_actions
                and np.array_equal(self.actions, other.actions))

    def __hash__(self):
        return hash((self.n_actions, self.actions.tobytes()))

    def action_of(self, s):
        return int(self.actions[s])


def grad_log_pi(policy, s, a):
    """Score of the softmax policy, flattened row-major over (state, action)."""
    S, A = policy.theta.shape
    g = np.zeros((S, A))
    g[s] = -policy.probs[s]
    g[s, a] += 1.0
    return g.reshape(-1)


def score_table(policy):
    """All scores at once: ``out[s, a]`` is ``grad_log_pi(policy, s, a)``."""
    S, A = policy.theta.shape
    out = np.zeros((S, A, S, A))
    for s in range(S):
        out[s, :, s, :] = np.eye(A) - policy.probs[s]
    return out.reshape(S, A, S * A)


# -- value functions ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValueBundle:
    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray
    objective: float
    setup: Setup


def induced_chain(mdp, policy):
    """State transition matrix P^π and per-state reward R^π."""
    pi = policy.probs
    P = np.einsum("sa,sat->st", pi, mdp.transition)
    r = np.einsum("sa,sa->s", pi, mdp.reward)
    return P, r


def is_ergodic(P):
    """Lazy-chain test: ((P + I)/2)^(4n) strictly positive.

    This certifies irreducibility; periodic chains pass, and their
    stationary distribution and bias are still unique.
    """
    n = P.shape[0]
    M = np.linalg.matrix_power(0.5 * (P + np.eye(n)), 4 * n)
    return bool(np.all(M > 1e-12))


def _solve(M, b):
    try:
        with warnings.catch_warnings():
            # exact singularity is reported below as SingularSystem
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(M, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(str(e)) from None
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-13 * max(1.0, np.abs(M).max()):
        raise SingularSystem("linear system is numerically singular")
    x = linalg.lu_solve(lu, b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("linear solve produced non-finite values")
    return x


def stationary_distribution(P):
    """Solve ν^T (P - I) = 0, Σν = 1 with one balance row replaced by Σν = 1."""
    if not is_ergodic(P):
        raise NonErgodicChain("induced chain is not irreducible")
    n = P.shape[0]
    M = P.T - np.eye(n)
    M[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    nu = _solve(M, b)
    return np.clip(nu, 0.0, None) / np.clip(nu, 0.0, None).sum()


def _check_total(mdp, setup):
    if not setup.is_average and setup.gamma == 1.0 and mdp.terminal is None:
        raise ValidationError("gamma = 1 requires an absorbing terminal state (see terminalize)")


def discounted_values(mdp, P, r, gamma):
    n = mdp.n_states
    M = np.eye(n) - gamma * P
    rhs = np.array(r)
    if mdp.terminal is not None:
        # pins V(terminal) = 0; needed for γ = 1 where the row is all zero
        M[mdp.terminal] = 0.0
        M[mdp.terminal, mdp.terminal] = 1.0
        rhs[mdp.terminal] = 0.0
    return _solve(M, rhs)


def value_functions(mdp, policy, setup):
    _check_total(mdp, setup)
    P, r = induced_chain(mdp, policy)
    if setup.is_average:
        nu = stationary_distribution(P)
        gain = float(nu @ r)
        n = mdp.n_states
        v = _solve(np.eye(n) - P + np.outer(np.ones(n), nu), r - gain)
        q = mdp.reward - gain + mdp.transition @ v
        objective = gain
    else:
        v = discounted_values(mdp, P, r, setup.gamma)
        q = mdp.reward + setup.gamma * (mdp.transition @ v)
        objective = float(mdp.rho0 @ v)
    adv = q - v[:, None]
    return ValueBundle(_frozen(v), _frozen(q), _frozen(adv), objective, setup)


def objective(mdp, policy, setup):
    return value_functions(mdp, policy, setup).objective


def bellman_residual(mdp, policy, bundle):
    P, r = induced_chain(mdp, policy)
    if bundle.setup.is_average:
        res = bundle.v + bundle.objective - r - P @ bundle.v
    else:
        res = bundle.v - r - bundle.setup.gamma * P @ bundle.v
    return float(np.abs(res).max())
