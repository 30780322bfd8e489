"""Hot inner loops of the discrete-time engine.

Both kernels consume pre-drawn uniform variates and materialized kernel
tables (cumulative transition rows, reward tables), so they are plain
deterministic array programs.  They are compiled with numba unless
``MFGLAB_NO_NUMBA`` is set; the interpreted fallback runs the identical
function body, so outputs are bit-for-bit equal on both paths (see
``benchmarks/bench_kernels.py`` for the speed comparison).
"""

import numpy as np

from ._accel import jit_kernel


@jit_kernel
def _pick(cum, u):
    # first index whose cumulative mass exceeds u; falls through to the last
    # index so rows summing to 1 - eps cannot yield an out-of-range state
    for j in range(cum.shape[0]):
        if u < cum[j]:
            return j
    return cum.shape[0] - 1


@jit_kernel
def sample_batch(mu0_cum, pol_cum, trans_cum, rew, u_init, u_steps):
    """Simulate a batch of trajectories against a frozen mean field.

    mu0_cum : (S,) cumulative initial distribution
    pol_cum : (N+1, S, A) cumulative policy rows
    trans_cum : (N, S, A, S) cumulative transition rows, step n -> n+1
    rew : (N+1, S, A) rewards
    u_init : (B,) uniforms selecting the initial state
    u_steps : (B, N+1, 2) uniforms; [:, n, 0] picks the action at step n,
        [:, n, 1] picks the transition out of step n (unused at the horizon)
    """
    n_traj = u_init.shape[0]
    n_steps = pol_cum.shape[0]
    states = np.empty((n_traj, n_steps), np.int64)
    actions = np.empty((n_traj, n_steps), np.int64)
    rewards = np.empty((n_traj, n_steps), np.float64)
    for b in range(n_traj):
        s = _pick(mu0_cum, u_init[b])
        for n in range(n_steps):
            states[b, n] = s
            a = _pick(pol_cum[n, s], u_steps[b, n, 0])
            actions[b, n] = a
            rewards[b, n] = rew[n, s, a]
            if n < n_steps - 1:
                s = _pick(trans_cum[n, s, a], u_steps[b, n, 1])
    return states, actions, rewards


@jit_kernel
def q_learning_episodes(q, visits, mu0_cum, trans_cum, rew,
                        eps_by_ep, lr_mode, lr_by_ep, u_init, u_steps):
    """Finite-horizon tabular Q-learning with epsilon-greedy exploration.

    Updates ``q`` (N+1, S, A) and ``visits`` in place.  ``lr_mode`` 0 uses
    the 1/(1 + prior visits) step size, 1 uses ``lr_by_ep`` per episode.
    ``u_steps`` is (E, N+1, 3): explore coin, exploratory action, transition.
    Greedy ties break toward the lowest action index.
    """
    n_eps = u_init.shape[0]
    n_steps = q.shape[0]
    n_actions = q.shape[2]
    for e in range(n_eps):
        s = _pick(mu0_cum, u_init[e])
        for n in range(n_steps):
            if u_steps[e, n, 0] < eps_by_ep[e]:
                a = int(u_steps[e, n, 1] * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            else:
                a = 0
                best = q[n, s, 0]
                for j in range(1, n_actions):
                    if q[n, s, j] > best:
                        best = q[n, s, j]
                        a = j
            target = rew[n, s, a]
            s2 = -1
            if n < n_steps - 1:
                s2 = _pick(trans_cum[n, s, a], u_steps[e, n, 2])
                best_next = q[n + 1, s2, 0]
                for j in range(1, n_actions):
                    if q[n + 1, s2, j] > best_next:
                        best_next = q[n + 1, s2, j]
                target = target + best_next
            visits[n, s, a] += 1
            if lr_mode == 0:
                alpha = 1.0 / visits[n, s, a]
            else:
                alpha = lr_by_ep[e]
            q[n, s, a] += alpha * (target - q[n, s, a])
            if n < n_steps - 1:
                s = s2
