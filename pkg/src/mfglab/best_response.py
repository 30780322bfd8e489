"""Best responses against a frozen mean field.

Three routes: exact backward induction on the optimal Q-table, tabular
Q-learning with epsilon-greedy exploration, and stochastic gradient ascent
on a tabular-softmax policy using the score-function (likelihood-ratio)
estimator with reward-to-go weighting.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (MeanFieldFlow, Policy, _check_flow, materialize_tables,
                   write_csv_rows)
from .errors import ConfigError, DivergenceError

ARGMAX_ATOL = 1e-10   # Q-values within this of the row max count as ties


@dataclass(frozen=True)
class QFunction:
    """State-action value table, values[n, s, a]."""

    values: np.ndarray

    def write_csv(self, path):
        h1, n_states, n_actions = self.values.shape
        write_csv_rows(path, "n,s,a,value",
                       ((n, s, a, self.values[n, s, a])
                        for n in range(h1)
                        for s in range(n_states)
                        for a in range(n_actions)))


@dataclass(frozen=True)
class SoftPolicyParams:
    """Tabular logits (horizon+1, S, A) parameterizing a row-softmax policy."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.logits, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ConfigError("policy logits must be finite")
        object.__setattr__(self, "logits", arr)

    def policy(self):
        return Policy(softmax_rows(self.logits))

    @classmethod
    def zeros(cls, game):
        return cls(np.zeros((game.horizon + 1, game.n_states, game.n_actions)))


def softmax_rows(values):
    """Row-wise softmax over the last axis, guarded by max subtraction."""
    z = values - values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def greedy_policy(q_values, ties="uniform"):
    """Policy supported on the argmax set of each Q row.

    ``ties='uniform'`` splits mass equally over entries within
    ``ARGMAX_ATOL`` of the row max (reflection/permutation equivariant);
    ``ties='first'`` puts all mass on the lowest maximizing index.
    """
    probs = np.zeros_like(q_values)
    if ties == "first":
        idx = q_values.argmax(axis=-1)
        grid = np.ix_(*[np.arange(d) for d in q_values.shape[:-1]])
        probs[grid + (idx,)] = 1.0
    else:
        top = q_values.max(axis=-1, keepdims=True)
        mask = q_values >= top - ARGMAX_ATOL
        probs = mask / mask.sum(axis=-1, keepdims=True)
    return Policy(probs)


def exact_br(game, mf, tables=None, ties="uniform"):
    """Optimal Q by backward induction and a greedy policy.

    Q_N(s, a) = r_N(s, a, mu_N) and
    Q_n(s, a) = r_n(s, a, mu_n) + E_{s' ~ P_n(s, a, mu_n)}[max_a' Q_{n+1}(s', a')].
    """
    _check_flow(game, mf)
    trans, rew = tables if tables is not None else materialize_tables(game, mf)
    q = np.empty_like(rew)
    q[game.horizon] = rew[game.horizon]
    for n in range(game.horizon - 1, -1, -1):
        v_next = q[n + 1].max(axis=-1)
        q[n] = rew[n] + trans[n] @ v_next
    return QFunction(q), greedy_policy(q, ties=ties)


def _schedule_array(value, n, what):
    """Normalize a schedule spec (float/array/callable) to an array."""
    if value is None:
        raise ConfigError(f"{what} schedule is required")
    if callable(value):
        arr = np.array([float(value(k)) for k in range(n)])
    else:
        arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()
    if not np.all(np.isfinite(arr)) or arr.min() < 0:
        raise ConfigError(f"{what} schedule must be finite and non-negative")
    return arr


def q_learning_br(game, mf, episodes, learning_rate=None, epsilon=0.1,
                  rng_seed=0, tables=None):
    """Tabular Q-learning against the frozen mean field ``mf``.

    ``learning_rate=None`` selects the 1/(1 + visits(n, s, a)) step size;
    a float, array or callable gives a per-episode rate.  ``epsilon`` is a
    constant, per-episode array, or callable in [0, 1].  Returns the learned
    table and its greedy policy (lowest-index tie break, for determinism).
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    eps = _schedule_array(epsilon, episodes, "epsilon")
    if eps.max() > 1.0:
        raise ConfigError("epsilon schedule must stay within [0, 1]")
    if learning_rate is None:
        lr_mode, lr = 0, np.zeros(episodes)
    else:
        lr_mode, lr = 1, _schedule_array(learning_rate, episodes, "learning rate")
    trans, rew = tables if tables is not None else materialize_tables(game, mf)
    q = np.zeros_like(rew)
    visits = np.zeros(rew.shape, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    u_init = rng.random(episodes)
    u_steps = rng.random((episodes, game.horizon + 1, 3))
    kernels.q_learning_episodes(
        q, visits, np.cumsum(game.mu0),
        np.ascontiguousarray(np.cumsum(trans, axis=-1)), rew,
        eps, lr_mode, lr, u_init, u_steps)
    return QFunction(q), greedy_policy(q, ties="first")


def policy_gradient_estimate(game, mf, params, batch_size, rng_seed, tables=None):
    """Score-function estimate of the ascent direction for J(pi_theta; mu).

    Averages, over sampled trajectories, sum_n G_n * grad log pi(a_n | s_n)
    with reward-to-go G_n = sum_{m >= n} r_m; unbiased for the exact
    gradient of J in the logits.
    """
    from .core import sample_trajectories

    trans_rew = tables if tables is not None else materialize_tables(game, mf)
    policy = params.policy()
    states, actions, rewards, _, _ = sample_trajectories(
        game, policy, mf, batch_size, rng_seed, tables=trans_rew)
    to_go = np.cumsum(rewards[:, ::-1], axis=1)[:, ::-1]
    grad = np.zeros_like(params.logits)
    h1 = game.horizon + 1
    steps = np.broadcast_to(np.arange(h1), states.shape)
    np.add.at(grad, (steps.ravel(), states.ravel(), actions.ravel()),
              to_go.ravel())
    probs_visited = policy.probs[steps.ravel(), states.ravel()]
    weighted = probs_visited * to_go.ravel()[:, None]
    np.subtract.at(grad, (steps.ravel(), states.ravel()), weighted)
    return grad / batch_size


def policy_gradient_br(game, mf, params0, iterations, learning_rate,
                       batch_size, rng_seed=0):
    """K steps of stochastic gradient ascent on J(pi_theta; mu).

    ``learning_rate`` may be a float, array, or callable of the iteration.
    Raises DivergenceError naming the iteration if a gradient goes
    non-finite.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    beta = _schedule_array(learning_rate, iterations, "learning rate")
    tables = materialize_tables(game, mf)
    logits = np.array(SoftPolicyParams(np.asarray(params0.logits)).logits)
    seeds = np.random.SeedSequence(rng_seed).generate_state(iterations)
    for k in range(iterations):
        grad = policy_gradient_estimate(
            game, mf, SoftPolicyParams(logits), batch_size, int(seeds[k]),
            tables=tables)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite policy gradient at iteration {k}")
        logits = logits + beta[k] * grad
    return SoftPolicyParams(logits)
