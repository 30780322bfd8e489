"""Finite discrete-time mean field games.

A game couples per-step transition and reward kernels to the population
state distribution.  This module holds the game/policy/flow types, the
forward evolution of the mean field, exact policy evaluation by occupancy
propagation, seeded trajectory sampling, and the exploitability metric.

All types are immutable after construction and safe to share across
threads; the operations are pure functions of their inputs.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, ValidationError

PROB_ATOL = 1e-12          # stochasticity tolerance at construction probes
LAZY_ROW_ATOL = 1e-9       # cheap per-step row-sum re-check during evolution


def _as_distribution(vec, what):
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigError(f"{what} must be a 1-d probability vector")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} has non-finite entries")
    if arr.min() < -PROB_ATOL or abs(arr.sum() - 1.0) > PROB_ATOL:
        raise ConfigError(f"{what} is not a probability vector (sum={arr.sum()!r})")
    return arr


@dataclass(frozen=True)
class FiniteMFG:
    """Finite-state, finite-action mean field game over times 0..horizon.

    ``transition(n, s, a, mu)`` returns the next-state distribution and
    ``reward(n, s, a, mu)`` the immediate reward, where ``mu`` is the
    population state distribution at step ``n`` (read-only vector; any
    non-local interaction is the responsibility of the closures).

    ``transition_tensor(n, mu) -> (S, A, S)`` and
    ``reward_matrix(n, mu) -> (S, A)`` are optional vectorized
    implementations; the defaults loop over the scalar closures.
    ``transition_mu_free`` marks dynamics that ignore ``mu`` so solvers may
    cache the transition tensors across mean fields.
    """

    n_states: int
    n_actions: int
    horizon: int
    mu0: np.ndarray
    transition: Callable
    reward: Callable
    transition_tensor: Optional[Callable] = None
    reward_matrix: Optional[Callable] = None
    transition_mu_free: bool = False
    meta: dict = field(default_factory=dict)
    validate: bool = True

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1 or self.horizon < 0:
            raise ConfigError("n_states, n_actions must be >= 1 and horizon >= 0")
        object.__setattr__(self, "mu0", _as_distribution(self.mu0, "mu0"))
        if self.mu0.shape[0] != self.n_states:
            raise ConfigError("mu0 length does not match n_states")
        if self.validate:
            self._probe_kernels()

    # -- kernel materialization -------------------------------------------

    def transition_kernel(self, n, mu):
        """Full (S, A, S) transition tensor at step n under mean field mu."""
        if self.transition_tensor is not None:
            return np.asarray(self.transition_tensor(n, mu), dtype=np.float64)
        out = np.empty((self.n_states, self.n_actions, self.n_states))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                out[s, a] = self.transition(n, s, a, mu)
        return out

    def reward_kernel(self, n, mu):
        """Full (S, A) reward matrix at step n under mean field mu."""
        if self.reward_matrix is not None:
            return np.asarray(self.reward_matrix(n, mu), dtype=np.float64)
        out = np.empty((self.n_states, self.n_actions))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                out[s, a] = self.reward(n, s, a, mu)
        return out

    def _probe_kernels(self):
        """Probe the kernels on a small grid of (n, mu) inputs.

        Catches non-stochastic rows and non-finite rewards at construction;
        evolution re-checks row sums lazily.
        """
        probes = [np.full(self.n_states, 1.0 / self.n_states), self.mu0]
        vertex = np.zeros(self.n_states)
        vertex[0] = 1.0
        probes.append(vertex)
        for n in (0, self.horizon):
            for mu in probes:
                p = self.transition_kernel(n, mu)
                _check_rows(p, n, atol=PROB_ATOL)
                r = self.reward_kernel(n, mu)
                if not np.all(np.isfinite(r)):
                    s, a = np.argwhere(~np.isfinite(r))[0]
                    raise ValidationError(
                        f"reward is not finite at (n={n}, s={s}, a={a})")


def _check_rows(p, n, atol):
    sums = p.sum(axis=-1)
    bad = np.abs(sums - 1.0) > atol
    if p.min() < -PROB_ATOL:
        bad |= p.min(axis=-1) < -PROB_ATOL
    if bad.any():
        s, a = np.argwhere(bad)[0]
        raise ValidationError(
            f"transition row is not a distribution at (n={n}, s={s}, a={a}): "
            f"sum={sums[s, a]!r}")


@dataclass(frozen=True)
class Policy:
    """Time-indexed stochastic action kernel, probs[n, s] over actions."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigError("policy probs must have shape (horizon+1, S, A)")
        sums = arr.sum(axis=-1)
        if arr.min() < -PROB_ATOL or np.abs(sums - 1.0).max() > PROB_ATOL:
            raise ConfigError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls, game):
        shape = (game.horizon + 1, game.n_states, game.n_actions)
        return cls(np.full(shape, 1.0 / game.n_actions))

    @classmethod
    def pure(cls, game, action_table):
        """Deterministic policy from an integer table (horizon+1, S)."""
        table = np.asarray(action_table)
        probs = np.zeros((game.horizon + 1, game.n_states, game.n_actions))
        for n in range(game.horizon + 1):
            probs[n, np.arange(game.n_states), table[n]] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class MeanFieldFlow:
    """Population state distribution per time step, dist[n] over states."""

    dist: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.dist, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigError("flow dist must have shape (horizon+1, S)")
        object.__setattr__(self, "dist", arr)

    def write_csv(self, path):
        """One row per time step: n, then the state probabilities."""
        n_states = self.dist.shape[1]
        header = "n," + ",".join(f"s{i}" for i in range(n_states))
        write_csv_rows(path, header,
                       ([n] + list(row) for n, row in enumerate(self.dist)))


@dataclass(frozen=True)
class Trajectory:
    """One sampled agent path with the uniform variates that produced it.

    ``action_draws[n]`` sampled the action at step n; ``state_draws[0]``
    sampled the initial state and ``state_draws[n]`` (n >= 1) the transition
    into step n.  All arrays have length horizon + 1.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    state_draws: np.ndarray
    action_draws: np.ndarray

    def total_reward(self):
        return float(self.rewards.sum())


def _check_policy(game, policy):
    want = (game.horizon + 1, game.n_states, game.n_actions)
    if policy.probs.shape != want:
        raise ConfigError(
            f"policy shape {policy.probs.shape} does not match game {want}")


def _check_flow(game, mf):
    want = (game.horizon + 1, game.n_states)
    if mf.dist.shape != want:
        raise ConfigError(f"flow shape {mf.dist.shape} does not match game {want}")


# -- operations -------------------------------------------------------------

def evolve_mean_field(game, policy):
    """Forward mean-field recursion induced when everyone plays ``policy``.

    dist[0] = mu0 and dist[n+1](s) = sum_{s', a} dist[n](s') pi_n(a|s')
    P_n(s', a, dist[n])(s).
    """
    _check_policy(game, policy)
    dist = np.empty((game.horizon + 1, game.n_states))
    dist[0] = game.mu0
    for n in range(game.horizon):
        p = game.transition_kernel(n, dist[n])
        _check_rows(p, n, atol=LAZY_ROW_ATOL)
        dist[n + 1] = np.einsum("s,sa,sap->p", dist[n], policy.probs[n], p)
    return MeanFieldFlow(dist)


def evaluate_policy(game, policy, mf):
    """Exact J(pi; mu): occupancy propagation of one tagged agent under a
    frozen external mean field (no sampling)."""
    _check_policy(game, policy)
    _check_flow(game, mf)
    occ = game.mu0
    total = 0.0
    for n in range(game.horizon + 1):
        r = game.reward_kernel(n, mf.dist[n])
        total += float(np.einsum("s,sa,sa->", occ, policy.probs[n], r))
        if n < game.horizon:
            p = game.transition_kernel(n, mf.dist[n])
            occ = np.einsum("s,sa,sap->p", occ, policy.probs[n], p)
    return total


def materialize_tables(game, mf):
    """Freeze the game against a mean-field flow into dense arrays.

    Returns (trans, rew): trans[n] is the (S, A, S) tensor at step n for
    n < horizon, rew[n] the (S, A) rewards for n <= horizon.  Solver loops
    use these to avoid re-evaluating the model closures.
    """
    _check_flow(game, mf)
    trans = np.empty((game.horizon, game.n_states, game.n_actions, game.n_states))
    rew = np.empty((game.horizon + 1, game.n_states, game.n_actions))
    for n in range(game.horizon + 1):
        rew[n] = game.reward_kernel(n, mf.dist[n])
        if n < game.horizon:
            trans[n] = game.transition_kernel(n, mf.dist[n])
            _check_rows(trans[n], n, atol=LAZY_ROW_ATOL)
    return trans, rew


def sample_trajectories(game, policy, mf, n_trajectories, rng_seed, tables=None):
    """Batch trajectory simulation; returns (states, actions, rewards,
    state_draws, action_draws) arrays of shape (B, horizon+1)."""
    _check_policy(game, policy)
    trans, rew = tables if tables is not None else materialize_tables(game, mf)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    u_init = rng.random(n_trajectories)
    u_steps = rng.random((n_trajectories, game.horizon + 1, 2))
    states, actions, rewards = kernels.sample_batch(
        np.cumsum(game.mu0), np.cumsum(policy.probs, axis=-1),
        np.ascontiguousarray(np.cumsum(trans, axis=-1)), rew, u_init, u_steps)
    state_draws = np.concatenate([u_init[:, None], u_steps[:, :-1, 1]], axis=1)
    return states, actions, rewards, state_draws, u_steps[:, :, 0]


def sample_trajectory(game, policy, mf, rng_seed):
    """One seeded trajectory: s0 ~ mu0, a_n ~ pi_n(s_n),
    s_{n+1} ~ P_n(s_n, a_n, mu_n), r_n = r_n(s_n, a_n, mu_n)."""
    states, actions, rewards, eps, us = sample_trajectories(
        game, policy, mf, 1, rng_seed)
    return Trajectory(states[0], actions[0], rewards[0], eps[0], us[0])


def exploitability(game, policy):
    """Best-response gap phi(pi) = max_pi' J(pi'; mu^pi) - J(pi; mu^pi).

    Zero (within tolerance) exactly when (pi, mu^pi) satisfies the
    mean-field Nash fixed-point conditions.  The max is computed by exact
    backward induction so the metric is deterministic.
    """
    from .best_response import exact_br

    mf = evolve_mean_field(game, policy)
    tables = materialize_tables(game, mf)
    q, _ = exact_br(game, mf, tables=tables)
    best = float(game.mu0 @ q.values[0].max(axis=1))
    return best - _evaluate_with_tables(game, policy, tables)


def _evaluate_with_tables(game, policy, tables):
    trans, rew = tables
    occ = game.mu0
    total = 0.0
    for n in range(game.horizon + 1):
        total += float(np.einsum("s,sa,sa->", occ, policy.probs[n], rew[n]))
        if n < game.horizon:
            occ = np.einsum("s,sa,sap->p", occ, policy.probs[n], trans[n])
    return total


# -- CSV plumbing ------------------------------------------------------------

def format_float(x):
    """Shortest round-trip decimal form; deterministic for identical bits."""
    return repr(float(x))


def write_csv_rows(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(
                format_float(v) if isinstance(v, float) or isinstance(v, np.floating)
                else str(v) for v in row) + "\n")
