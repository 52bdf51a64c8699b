"""Averaging measures, space averages, rollouts and time-based estimates.

``space_average`` integrates a function of (s, a) against ν_μ or ν_γ;
``time_estimate`` aggregates the same function along sampled paths.  The two
agree in expectation, which is what the ergodicity checks exercise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, ValidationError
from .mdp import Setup, _check_total, _frozen, _solve, induced_chain, stationary_distribution

TRUNCATION_EPS = 1e-8
_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class Measure:
    weights: np.ndarray
    kind: str  # "stationary" or "discounted"
    gamma: float | None = None
    rho0: np.ndarray | None = None

    @property
    def mass(self):
        return float(self.weights.sum())


def stationary_measure(mdp, policy):
    P, _ = induced_chain(mdp, policy)
    return Measure(_frozen(stationary_distribution(P)), "stationary")


def discounted_measure(mdp, policy, gamma, rho0=None):
    """Solve (I - γ P^T) ν = ρ0.

    With γ = 1 the MDP must be terminalized; the terminal state then carries
    no mass (it would be infinite, and the terminal reward is zero anyway).
    """
    rho0 = mdp.rho0 if rho0 is None else np.asarray(rho0, dtype=float)
    if gamma <= 0 or gamma > 1:
        raise ValidationError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        _check_total(mdp, Setup(1.0))
    P, _ = induced_chain(mdp, policy)
    n = mdp.n_states
    M = np.eye(n) - gamma * P.T
    rhs = np.array(rho0)
    if gamma == 1.0:
        t = mdp.terminal
        M[t] = 0.0
        M[:, t] = 0.0
        M[t, t] = 1.0
        rhs[t] = 0.0
    nu = _solve(M, rhs)
    return Measure(_frozen(nu), "discounted", float(gamma), _frozen(rho0))


def measure_for(mdp, policy, setup):
    """ν_• matching ``setup``: stationary for average, ν_γ from ρ0 otherwise."""
    if setup.is_average:
        return stationary_measure(mdp, policy)
    return discounted_measure(mdp, policy, setup.gamma)


def _table(f, n_states, n_actions):
    if callable(f):
        return np.array([[f(s, a) for a in range(n_actions)] for s in range(n_states)], dtype=float)
    return np.asarray(f, dtype=float)


def space_average(measure, policy, f):
    """Σ_s ν(s) Σ_a π(a|s) f(s, a).

    ``f`` is a callable of (s, a) or an array whose leading axes are (S, A);
    trailing axes are carried through (vector-valued integrands).
    """
    pi = policy.probs
    table = _table(f, *pi.shape)
    return np.tensordot(measure.weights[:, None] * pi, table, axes=([0, 1], [0, 1]))


# -- sampling ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T+1,) or shorter when truncated at a terminal
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    seed: int
    horizon: int
    index: int = 0

    def __len__(self):
        return len(self.actions)


def stream(seed, index=0):
    """Counter-based generator for trajectory ``index`` of batch ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _pick(cum, u):
    # cum: (..., n) cumulative probabilities; u: (...) uniforms in [0, 1)
    idx = (cum <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def rollouts(mdp, policy, horizon, seed, n_paths, start=0):
    """Trajectories ``start .. start+n_paths-1`` of batch ``seed``.

    Path i consumes only its own stream, so the batch equals the
    corresponding single :func:`rollout` calls, bit for bit.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    cum_pi = np.cumsum(policy.probs, axis=1)
    cum_p = np.cumsum(mdp.transition, axis=2)
    cum_rho = np.cumsum(mdp.rho0)
    gens = [stream(seed, start + i) for i in range(n_paths)]
    s = _pick(cum_rho, np.array([g.random() for g in gens]))
    states = np.empty((n_paths, horizon + 1), dtype=np.int64)
    actions = np.empty((n_paths, horizon), dtype=np.int64)
    states[:, 0] = s
    for k0 in range(0, horizon, _CHUNK):
        c = min(_CHUNK, horizon - k0)
        u = np.stack([g.random((c, 2)) for g in gens])
        for j in range(c):
            a = _pick(cum_pi[s], u[:, j, 0])
            s = _pick(cum_p[s, a], u[:, j, 1])
            actions[:, k0 + j] = a
            states[:, k0 + j + 1] = s
    rewards = mdp.reward[states[:, :-1], actions]
    out = []
    for i in range(n_paths):
        st, ac, rw = states[i], actions[i], rewards[i]
        if mdp.terminal is not None:
            hit = np.flatnonzero(st == mdp.terminal)
            if len(hit):
                end = hit[0]
                st, ac, rw = st[:end + 1], ac[:end], rw[:end]
        out.append(Trajectory(st, ac, rw, seed, horizon, start + i))
    return out


def rollout(mdp, policy, horizon, seed, index=0):
    return rollouts(mdp, policy, horizon, seed, 1, start=index)[0]


def truncation_horizon(gamma, eps=TRUNCATION_EPS):
    """Smallest T with γ^T <= ε(1-γ): truncation bias below ε·max|g|."""
    return int(math.ceil(math.log(eps * (1 - gamma)) / math.log(gamma)))


# -- time-based estimates -----------------------------------------------------


def _weights(n, setup):
    if setup.is_average:
        return np.full(n, 1.0 / n) if n else np.zeros(0)
    return setup.gamma ** np.arange(n)


def _per_path(traj, g, setup):
    n = len(traj.actions)
    w = _weights(n, setup)
    s, a = traj.states[:n], traj.actions
    if callable(g):
        pairs, inv = np.unique(np.stack([s, a]), axis=1, return_inverse=True)
        wsum = np.bincount(inv.reshape(-1), weights=w, minlength=pairs.shape[1])
        vals = [np.asarray(g(int(ps), int(pa)), dtype=float) for ps, pa in pairs.T]
        return sum(ws * v for ws, v in zip(wsum, vals))
    table = np.asarray(g, dtype=float)
    S, A = table.shape[:2]
    counts = np.bincount(s * A + a, weights=w, minlength=S * A).reshape(S, A)
    return np.tensordot(counts, table, axes=([0, 1], [0, 1]))


def time_estimates(trajectories, g, setup):
    """Per-trajectory time aggregates, stacked along axis 0.

    Discounted: Σ_k γ^k g(s_k, a_k).  Average: the mean of g over the
    path's (s_k, a_k) pairs.  ``g`` is a callable or an (S, A, ...) table.
    """
    if not trajectories:
        raise EmptyBatch("no trajectories")
    return np.stack([_per_path(t, g, setup) for t in trajectories])


def time_estimate(trajectories, g, setup):
    return time_estimates(trajectories, g, setup).mean(axis=0)


def mean_and_se(samples):
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(samples.shape[1:], np.inf)
    return samples.mean(axis=0), se


def write_trajectories_csv(trajectories, path):
    batch = len(trajectories) > 1
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow((["traj_id"] if batch else []) + ["k", "s", "a", "r"])
        for t in trajectories:
            for k, (s, a, r) in enumerate(zip(t.states, t.actions, t.rewards)):
                w.writerow(([t.index] if batch else []) + [k, int(s), int(a), repr(float(r))])
