"""Equilibrium iteration schemes over (policy, mean field) pairs.

Plain fixed-point iteration, fictitious play (best responses against the
running average of past induced mean fields), and online mirror descent
(softmax of the accumulated policy-evaluation Q).  Each solver emits an
exploitability trace computed with the exact best response, whichever
method produces the iterates.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .best_response import (SoftPolicyParams, exact_br, policy_gradient_br,
                            q_learning_br, softmax_rows)
from .core import (MeanFieldFlow, Policy, _evaluate_with_tables,
                   evolve_mean_field, materialize_tables, write_csv_rows)
from .errors import ConfigError

EXPLOITABILITY_TOL = 1e-6   # default early-stop threshold


@dataclass(frozen=True)
class SolverTrace:
    """Per-iteration record of an equilibrium solver run."""

    iterations: np.ndarray
    exploitability: np.ndarray
    seconds: np.ndarray
    final_policy: Policy
    final_flow: MeanFieldFlow
    converged: bool
    exploitability_avg: Optional[np.ndarray] = None

    def write_csv(self, path, include_seconds=True):
        """Columns k, exploitability[, exploitability_avg][, seconds]."""
        cols = ["k", "exploitability"]
        series = [self.iterations, self.exploitability]
        if self.exploitability_avg is not None:
            cols.append("exploitability_avg")
            series.append(self.exploitability_avg)
        if include_seconds:
            cols.append("seconds")
            series.append(self.seconds)
        write_csv_rows(path, ",".join(cols), zip(*series))


@dataclass
class OmdState:
    """Accumulated policy-evaluation Q and the softmax temperature."""

    cumulative_q: np.ndarray
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")

    def policy(self):
        return Policy(softmax_rows(self.cumulative_q / self.temperature))


def policy_evaluation_q(game, policy, tables):
    """Q-table of ``policy`` under the frozen mean field behind ``tables``.

    Evaluation analogue of the optimality recursion, with the expectation
    over a' ~ pi_{n+1} in place of the max.
    """
    trans, rew = tables
    q = np.empty_like(rew)
    q[game.horizon] = rew[game.horizon]
    for n in range(game.horizon - 1, -1, -1):
        v_next = np.einsum("sa,sa->s", policy.probs[n + 1], q[n + 1])
        q[n] = rew[n] + trans[n] @ v_next
    return q


def mixture_policy(policies, flows):
    """State-conditional action kernel of a population that splits evenly
    across ``policies``, weighting each policy by its own state occupancy."""
    if len(policies) != len(flows) or not policies:
        raise ConfigError("need equally many policies and flows")
    num = np.zeros_like(policies[0].probs)
    den = np.zeros(flows[0].dist.shape)
    for pol, flow in zip(policies, flows):
        num += flow.dist[:, :, None] * pol.probs
        den += flow.dist
    probs = np.where(den[:, :, None] > 0, num / np.maximum(den[:, :, None], 1e-300),
                     1.0 / num.shape[-1])
    return Policy(probs / probs.sum(axis=-1, keepdims=True))


def average_flows(flows):
    """Arithmetic mean of mean-field flows."""
    return MeanFieldFlow(np.mean(np.stack([f.dist for f in flows]), axis=0))


def nash_gap(game, policy, flow=None):
    """Two-condition equilibrium check: (best-response gap, flow gap).

    The first is the exploitability of ``policy`` against its induced mean
    field, the second sup |flow - induced flow| when a candidate ``flow``
    is supplied (0.0 otherwise).
    """
    induced = evolve_mean_field(game, policy)
    tables = materialize_tables(game, induced)
    q, _ = exact_br(game, induced, tables=tables)
    best = float(game.mu0 @ q.values[0].max(axis=1))
    br_gap = best - _evaluate_with_tables(game, policy, tables)
    flow_gap = 0.0
    if flow is not None:
        flow_gap = float(np.abs(flow.dist - induced.dist).max())
    return br_gap, flow_gap


def _compute_br(game, mf, br, tables, rng_seed):
    """Dispatch a best-response method spec against the frozen ``mf``."""
    method = br.get("method", "exact")
    if method == "exact":
        _, pol = exact_br(game, mf, tables=tables)
        return pol
    if method == "q_learning":
        _, pol = q_learning_br(
            game, mf, episodes=br.get("episodes", 10_000),
            learning_rate=br.get("learning_rate"),
            epsilon=br.get("epsilon", 0.1), rng_seed=rng_seed, tables=tables)
        return pol
    if method == "policy_gradient":
        params = policy_gradient_br(
            game, mf, SoftPolicyParams.zeros(game),
            iterations=br.get("iterations", 200),
            learning_rate=br.get("learning_rate", 0.1),
            batch_size=br.get("batch_size", 64), rng_seed=rng_seed)
        return params.policy()
    raise ConfigError(f"unknown best-response method {method!r}")


def exact_br_tables(game, tables):
    """Optimal Q by backward induction directly on materialized tables."""
    trans, rew = tables
    q = np.empty_like(rew)
    q[game.horizon] = rew[game.horizon]
    for n in range(game.horizon - 1, -1, -1):
        q[n] = rew[n] + trans[n] @ q[n + 1].max(axis=-1)
    return q


def _exploitability_at(game, policy, tables):
    """phi(policy) where ``tables`` freeze the flow induced by ``policy``."""
    q = exact_br_tables(game, tables)
    best = float(game.mu0 @ q[0].max(axis=1))
    return best - _evaluate_with_tables(game, policy, tables)


def fixed_point_solve(game, iterations, br=None, damping=0.0, tol=EXPLOITABILITY_TOL,
                      flow_tol=1e-9, rng_seed=0):
    """Alternate mean-field updates and best responses.

    Per iteration: mu^{k+1} is the flow induced by pi^k (optionally damped
    toward the previous flow), then pi^{k+1} best-responds to mu^{k+1}.
    The trace records the exploitability of each iterate's policy; the run
    stops early once it falls below ``tol``.  ``converged`` reflects the
    successive-flow sup-distance falling below ``flow_tol``.
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    br = br or {"method": "exact"}
    seeds = np.random.SeedSequence(rng_seed).generate_state(iterations)
    mu = evolve_mean_field(game, Policy.uniform(game))
    tables = materialize_tables(game, mu)
    policy = _compute_br(game, mu, br, tables, int(seeds[0]))
    ks, phis, secs = [], [], []
    flow_gap = np.inf
    for k in range(1, iterations + 1):
        t0 = time.perf_counter()
        new_mu = evolve_mean_field(game, policy)
        if damping > 0.0:
            new_mu = MeanFieldFlow((1.0 - damping) * mu.dist + damping * new_mu.dist)
        flow_gap = float(np.abs(new_mu.dist - mu.dist).max())
        mu = new_mu
        tables = materialize_tables(game, mu)
        phi = _exploitability_at(game, policy, tables)
        policy = _compute_br(game, mu, br, tables, int(seeds[k - 1]))
        ks.append(k)
        phis.append(phi)
        secs.append(time.perf_counter() - t0)
        if phi < tol:
            break
    return SolverTrace(np.array(ks), np.array(phis), np.array(secs),
                       policy, mu,
                       converged=bool(flow_gap < flow_tol or phis[-1] < tol))


def fictitious_play_solve(game, iterations, br=None, tol=EXPLOITABILITY_TOL,
                          rng_seed=0):
    """Best-respond to the running average of past induced mean fields.

    The trace carries two exploitability columns: the iteration's best
    response, and the uniform mixture over the best responses so far
    (occupancy-weighted average policy).
    """
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    br = br or {"method": "exact"}
    seeds = np.random.SeedSequence(rng_seed).generate_state(iterations)
    uniform_flow = evolve_mean_field(game, Policy.uniform(game))
    flows = [uniform_flow]
    avg_flow = uniform_flow
    br_policies, br_flows = [], []
    ks, phis, phis_avg, secs = [], [], [], []
    policy = Policy.uniform(game)
    for k in range(1, iterations + 1):
        t0 = time.perf_counter()
        tables_avg = materialize_tables(game, avg_flow)
        policy = _compute_br(game, avg_flow, br, tables_avg, int(seeds[k - 1]))
        flow_k = evolve_mean_field(game, policy)
        br_policies.append(policy)
        br_flows.append(flow_k)
        flows.append(flow_k)
        avg_flow = average_flows(flows)
        tables_k = materialize_tables(game, flow_k)
        phi = _exploitability_at(game, policy, tables_k)
        avg_policy = mixture_policy(br_policies, br_flows)
        avg_policy_flow = evolve_mean_field(game, avg_policy)
        phi_avg = _exploitability_at(
            game, avg_policy, materialize_tables(game, avg_policy_flow))
        ks.append(k)
        phis.append(phi)
        phis_avg.append(phi_avg)
        secs.append(time.perf_counter() - t0)
        if phi_avg < tol:
            break
    final_policy = mixture_policy(br_policies, br_flows)
    final_flow = evolve_mean_field(game, final_policy)
    return SolverTrace(np.array(ks), np.array(phis), np.array(secs),
                       final_policy, final_flow,
                       converged=bool(phis_avg[-1] < tol or phis[-1] < tol),
                       exploitability_avg=np.array(phis_avg))


def omd_solve(game, iterations, temperature, tol=EXPLOITABILITY_TOL):
    """Online mirror descent: accumulate policy-evaluation Q-tables and set
    the next policy to their temperature-scaled row softmax."""
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    state = OmdState(np.zeros((game.horizon + 1, game.n_states, game.n_actions)),
                     temperature)
    policy = state.policy()
    ks, phis, secs = [], [], []
    mu = evolve_mean_field(game, policy)
    for k in range(1, iterations + 1):
        t0 = time.perf_counter()
        mu = evolve_mean_field(game, policy)
        tables = materialize_tables(game, mu)
        phi = _exploitability_at(game, policy, tables)
        state.cumulative_q += policy_evaluation_q(game, policy, tables)
        policy = state.policy()
        ks.append(k)
        phis.append(phi)
        secs.append(time.perf_counter() - t0)
        if phi < tol:
            break
    return SolverTrace(np.array(ks), np.array(phis), np.array(secs),
                       policy, mu, converged=bool(phis[-1] < tol))
