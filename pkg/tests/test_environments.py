import numpy as np
import pytest

from mfglab import (Policy, evaluate_policy, evolve_mean_field,
                    exploitability, fictitious_play_solve)
from mfglab.best_response import exact_br
from mfglab.environments import (CROWD_ACTIONS, CYBER_STATES, DI, DS, UI, US,
                                 CrowdConfig, CyberParams, FOUR_ROOM_9X9,
                                 RoutingNetwork, braess_diamond, build_braess,
                                 build_crowd, build_cyber, build_environment,
                                 cyber_generator, destination_mass,
                                 matrix_exponential, parse_grid_layout)
from mfglab.errors import ConfigError, ValidationError

RIGHT = CROWD_ACTIONS.index("right")


# -- matrix exponential -------------------------------------------------------

def taylor_reference(m, squarings=20, order=30):
    """Brute-force Taylor series with heavy scaling, independent of the
    production Horner/squaring path."""
    scaled = np.asarray(m, dtype=float) / (2.0 ** squarings)
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for k in range(1, order + 1):
        term = term @ scaled / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def test_expm_zero_is_identity():
    np.testing.assert_array_equal(matrix_exponential(np.zeros((3, 3))),
                                  np.eye(3))


def test_expm_diagonal_closed_form():
    out = matrix_exponential(np.diag([1.0, -1.0]))
    np.testing.assert_allclose(np.diag(out), [np.e, 1.0 / np.e], atol=1e-12)
    assert abs(out[0, 1]) == 0.0 and abs(out[1, 0]) == 0.0


def test_expm_matches_taylor_oracle_on_random_generators():
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(10):
        q = rng.random((4, 4)) * 2.0
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        got = matrix_exponential(q)
        ref = taylor_reference(q)
        assert np.abs(got - ref).max() <= 1e-10


def test_expm_rejects_bad_input():
    with pytest.raises(ValidationError):
        matrix_exponential(np.ones((2, 3)))
    with pytest.raises(ValidationError):
        matrix_exponential(np.array([[np.nan, 0.0], [0.0, 0.0]]))


# -- crowd --------------------------------------------------------------------

def test_single_cell_grid_self_loops():
    cfg = CrowdConfig(width=1, height=1, noise_p=0.3, horizon=4)
    game = build_crowd(cfg)
    flow = evolve_mean_field(game, Policy.uniform(game))
    np.testing.assert_allclose(flow.dist, 1.0, atol=1e-12)


def test_noise_free_move_is_deterministic():
    cfg = CrowdConfig(width=3, height=3, noise_p=0.0, horizon=1)
    game = build_crowd(cfg)
    center = game.meta["cells"].index((1, 1))
    right_cell = game.meta["cells"].index((1, 2))
    row = game.transition(0, center, RIGHT, game.mu0)
    assert row[right_cell] == 1.0 and row.sum() == 1.0


def test_wall_and_boundary_resolve_to_stay():
    cfg = CrowdConfig(width=2, height=1, noise_p=0.0, horizon=1,
                      walls={(0, 1)})
    game = build_crowd(cfg)
    row = game.transition(0, 0, RIGHT, game.mu0)
    assert row[0] == 1.0


def test_four_room_rows_stochastic_and_flow_normalized():
    cfg = CrowdConfig.from_layout(FOUR_ROOM_9X9, noise_p=0.2, horizon=15)
    game = build_crowd(cfg)
    assert game.n_states == 68
    vertex = np.zeros(game.n_states)
    vertex[0] = 1.0
    for mu in (game.mu0, vertex):
        tensor = game.transition_kernel(0, mu)
        np.testing.assert_allclose(tensor.sum(axis=-1), 1.0, atol=1e-12)
        assert tensor.min() >= 0.0
    flow = evolve_mean_field(game, Policy.uniform(game))
    np.testing.assert_allclose(flow.dist.sum(axis=1), 1.0, atol=1e-10)


def test_initial_mass_on_wall_rejected():
    cfg = CrowdConfig(width=3, height=3, noise_p=0.1, horizon=2,
                      walls={(1, 1)}, init=(1, 1))
    with pytest.raises(ValidationError):
        build_crowd(cfg)


def test_congestion_and_kernel_rewards():
    kernel = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25],
                       [0.0, 0.25, 0.0]])
    cfg = CrowdConfig(width=3, height=3, noise_p=0.1, horizon=1,
                      reward_kind="congestion", kernel=kernel)
    game = build_crowd(cfg)
    stay = CROWD_ACTIONS.index("stay")
    center = game.meta["cells"].index((1, 1))
    mu = game.mu0
    assert game.reward(0, center, stay, mu) == 0.0
    assert game.reward(0, center, RIGHT, mu) < 0.0


def mirror_layout(lines):
    return tuple(line[::-1] for line in lines)


def test_reflection_symmetry_of_equilibrium_flow():
    # asymmetric start in a symmetric maze; p = 0.5 keeps the arithmetic
    # in exact binary fractions so mirrored builds agree bit-for-bit
    width = len(FOUR_ROOM_9X9[0])
    cfg = CrowdConfig.from_layout(FOUR_ROOM_9X9, noise_p=0.5, horizon=8,
                                  init=(1, 1))
    cfg_m = CrowdConfig.from_layout(mirror_layout(FOUR_ROOM_9X9), noise_p=0.5,
                                    horizon=8, init=(1, width - 2))
    game, game_m = build_crowd(cfg), build_crowd(cfg_m)
    tr = fictitious_play_solve(game, iterations=5, tol=-1.0)
    tr_m = fictitious_play_solve(game_m, iterations=5, tol=-1.0)
    cells = game.meta["cells"]
    index_m = {cell: i for i, cell in enumerate(game_m.meta["cells"])}
    perm = [index_m[(r, width - 1 - c)] for r, c in cells]
    np.testing.assert_allclose(tr.final_flow.dist,
                               tr_m.final_flow.dist[:, perm], atol=1e-9)
    np.testing.assert_allclose(tr.exploitability, tr_m.exploitability,
                               atol=1e-9)


# -- routing ------------------------------------------------------------------

def test_single_destination_network_is_trivial():
    net = RoutingNetwork(links=("D",), successors={"D": ("D",)},
                         destination="D", congestion={"D": (0.0, 0.0)},
                         dt=1.0, horizon=3, origin={"D": 1.0})
    game = build_braess(net)
    policy = Policy.uniform(game)
    flow = evolve_mean_field(game, policy)
    assert evaluate_policy(game, policy, flow) == 0.0
    assert abs(exploitability(game, policy)) <= 1e-12


def bfs_hops(net, start, dest):
    from collections import deque

    seen = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in net.successors[cur]:
            if nxt not in seen:
                seen[nxt] = seen[cur] + 1
                queue.append(nxt)
    return seen[dest]


def test_zero_congestion_value_is_negative_hop_count():
    net = RoutingNetwork(
        links=("O", "OA", "OB", "AB", "AD", "BD", "D"),
        successors={"O": ("OA", "OB"), "OA": ("AD", "AB"), "OB": ("BD",),
                    "AB": ("BD",), "AD": ("D",), "BD": ("D",), "D": ("D",)},
        destination="D",
        congestion={name: (0.0, 0.0)
                    for name in ("O", "OA", "OB", "AB", "AD", "BD", "D")},
        dt=1.0, horizon=6, origin={"O": 1.0})
    game = build_braess(net)
    flow = evolve_mean_field(game, Policy.uniform(game))
    q, _ = exact_br(game, flow)
    best = float(game.mu0 @ q.values[0].max(axis=1))
    assert abs(best - (-bfs_hops(net, "O", "D"))) < 1e-12


def test_braess_diamond_absorbs_all_mass():
    game = build_braess(braess_diamond(horizon=20))
    rng = np.random.Generator(np.random.PCG64(1))
    for _ in range(3):
        probs = rng.dirichlet(np.ones(game.n_actions),
                              size=(game.horizon + 1, game.n_states))
        flow = evolve_mean_field(game, Policy(probs))
        mass = destination_mass(game, flow)
        assert np.all(np.diff(mass) >= -1e-12)   # absorbing
        assert abs(mass[-1] - 1.0) <= 1e-10


def test_illegal_actions_fall_back_and_count():
    game = build_braess(braess_diamond(horizon=5))
    n_waits = game.meta["wait_levels"]
    before = game.meta["diagnostics"]["illegal_actions"]
    links = game.meta["links"]
    state_o = links.index("O") * n_waits
    row = game.transition(0, state_o, links.index("D"), game.mu0)  # illegal
    assert game.meta["diagnostics"]["illegal_actions"] == before + 1
    target = links.index("OA")  # lowest-indexed successor of O
    assert row.reshape(len(links), n_waits)[target].sum() == 1.0


def test_routing_network_validation():
    with pytest.raises(ConfigError):
        RoutingNetwork(links=("A", "D"), successors={"A": ("D",), "D": ("A",)},
                       destination="D", congestion={}, dt=1.0, horizon=3,
                       origin={"A": 1.0})  # destination not absorbing
    with pytest.raises(ConfigError):
        RoutingNetwork(links=("A", "D"), successors={"A": (), "D": ("D",)},
                       destination="D", congestion={}, dt=1.0, horizon=3,
                       origin={"A": 1.0})  # no successor


# -- cyber --------------------------------------------------------------------

def base_params(**kw):
    fields = dict(rho=0.0, q_rec_d=0.0, q_rec_u=0.0, v_h=0.0, q_inf_d=0.0,
                  q_inf_u=0.0, beta_dd=0.0, beta_ud=0.0, beta_uu=0.0,
                  beta_du=0.0, k_d=0.3, k_i=1.0, dt=0.5, horizon=4)
    fields.update(kw)
    return CyberParams(**fields)


def test_zero_rates_give_identity_kernel():
    game = build_cyber(base_params())
    tensor = game.transition_kernel(0, game.mu0)
    for a in range(2):
        np.testing.assert_allclose(tensor[:, a, :], np.eye(4), atol=1e-15)


def test_recovery_only_matches_two_state_closed_form():
    p = base_params(q_rec_u=0.8)
    mu = np.zeros(4)
    mu[US] = 1.0
    game = build_cyber(p)
    row = game.transition(0, UI, 0, mu)
    expected = 1.0 - np.exp(-p.dt * p.q_rec_u)
    assert abs(row[US] - expected) <= 1e-12
    assert abs(row[UI] - np.exp(-p.dt * p.q_rec_u)) <= 1e-12
    np.testing.assert_allclose(game.transition(0, DS, 0, mu),
                               np.eye(4)[DS], atol=1e-15)


def generic_params():
    return base_params(rho=0.6, q_rec_d=0.4, q_rec_u=0.3, v_h=0.5,
                       q_inf_d=0.3, q_inf_u=0.7, beta_dd=0.2, beta_ud=0.3,
                       beta_uu=0.6, beta_du=0.4)


def test_generic_rates_rows_stochastic():
    p = generic_params()
    game = build_cyber(p)
    rng = np.random.Generator(np.random.PCG64(2))
    for _ in range(5):
        mu = rng.dirichlet(np.ones(4))
        tensor = game.transition_kernel(0, mu)
        np.testing.assert_allclose(tensor.sum(axis=-1), 1.0, atol=1e-10)
        assert tensor.min() >= -1e-12


def test_semigroup_property():
    p = generic_params()
    rng = np.random.Generator(np.random.PCG64(3))
    mu = rng.dirichlet(np.ones(4))
    for a in (0, 1):
        q = cyber_generator(p, a, mu)
        lhs = matrix_exponential(0.7 * q)
        rhs = matrix_exponential(0.3 * q) @ matrix_exponential(0.4 * q)
        assert np.abs(lhs - rhs).max() <= 1e-9


def test_reward_structure():
    game = build_cyber(base_params())
    mu = game.mu0
    assert game.reward(0, DS, 0, mu) == -0.3
    assert game.reward(0, DI, 1, mu) == -1.3
    assert game.reward(0, US, 0, mu) == 0.0
    assert game.reward(0, UI, 1, mu) == -1.0


# -- declarative construction -------------------------------------------------

def test_build_environment_dispatch():
    crowd = build_environment({"kind": "crowd", "layout": "four_room_9x9",
                               "noise_p": 0.2, "horizon": 15})
    assert crowd.n_states == 68
    routing = build_environment({"kind": "routing", "network": "braess_diamond",
                                 "horizon": 20})
    assert routing.n_actions == 7
    toy = build_environment({"kind": "toy_chain", "n_states": 4, "horizon": 2})
    assert toy.n_actions == 1
    with pytest.raises(ConfigError):
        build_environment({"kind": "nope"})


def test_parse_grid_layout_target():
    height, width, walls, target = parse_grid_layout(["..#", ".T."])
    assert (height, width) == (2, 3)
    assert (0, 2) in walls and target == (1, 1)
