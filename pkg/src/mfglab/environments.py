"""Benchmark environments for the discrete engine.

Three model families: grid-world crowd motion with movement noise and
crowd-aversion/target/congestion rewards, link-based traffic routing with
congestion-dependent waiting times (Braess diamond built in), and a
four-state cybersecurity model whose step kernel is the matrix exponential
of a rate matrix.  Environments can also be assembled from declarative
JSON-style dictionaries (grid layouts as ASCII maps, networks as edge
lists).
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import FiniteMFG
from .errors import ConfigError, ValidationError

# -- matrix exponential -------------------------------------------------------

_TAYLOR_ORDER = 16
_SCALE_TARGET = 0.25


def matrix_exponential(m):
    """exp(M) by scaling-and-squaring with a truncated Taylor series.

    The argument is scaled by a power of two until its infinity norm is at
    most 0.25, a Horner-form Taylor polynomial of order 16 is applied (whose
    remainder is then far below machine precision), and the result is
    repeatedly squared.  Exact for M = 0.
    """
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError("matrix_exponential expects a square matrix")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix_exponential requires finite entries")
    dim = arr.shape[0]
    norm = float(np.abs(arr).sum(axis=1).max())
    squarings = 0
    if norm > _SCALE_TARGET:
        squarings = int(np.ceil(np.log2(norm / _SCALE_TARGET)))
    scaled = arr / (2.0 ** squarings)
    eye = np.eye(dim)
    out = eye.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        out = eye + (scaled @ out) / k
    for _ in range(squarings):
        out = out @ out
    return out


# -- crowd motion -------------------------------------------------------------

CROWD_ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
_NOISE_DIRS = _MOVES[:4]

FOUR_ROOM_9X9 = (
    "....#....",
    "....#....",
    ".........",
    "....#....",
    "##.###.##",
    "....#....",
    ".........",
    "....#....",
    "....#....",
)


def parse_grid_layout(lines):
    """ASCII map: '#' wall, '.' free, 'T' target (free).  Returns
    (height, width, walls, target)."""
    height = len(lines)
    if height == 0:
        raise ConfigError("empty grid layout")
    width = len(lines[0])
    walls = set()
    target = None
    for r, line in enumerate(lines):
        if len(line) != width:
            raise ConfigError("ragged grid layout")
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
            elif ch == "T":
                target = (r, c)
            elif ch != ".":
                raise ConfigError(f"unknown layout character {ch!r}")
    return height, width, frozenset(walls), target


@dataclass(frozen=True)
class CrowdConfig:
    """Grid-world crowd model: movement noise, walls, one of three reward
    couplings.  ``init`` places the initial mass: "uniform" over free
    cells, a (row, col) cell, or a {cell: weight} mapping."""

    width: int
    height: int
    noise_p: float
    horizon: int
    walls: frozenset = frozenset()
    reward_kind: str = "crowd_aversion"
    target: Optional[tuple] = None
    kernel: Optional[np.ndarray] = None
    init: object = "uniform"

    def __post_init__(self):
        if not (0.0 <= self.noise_p <= 1.0):
            raise ConfigError("noise_p must lie in [0, 1]")
        if self.width < 1 or self.height < 1 or self.horizon < 0:
            raise ConfigError("bad grid dimensions or horizon")
        if self.reward_kind not in ("crowd_aversion", "target", "congestion"):
            raise ConfigError(f"unknown reward_kind {self.reward_kind!r}")
        if self.reward_kind == "target" and self.target is None:
            raise ConfigError("target reward needs a target cell")
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ConfigError("kernel must be 2-d with odd side lengths")
            object.__setattr__(self, "kernel", k)

    @classmethod
    def from_layout(cls, lines, noise_p, horizon, **kw):
        height, width, walls, target = parse_grid_layout(lines)
        if target is not None:
            kw.setdefault("target", target)
        return cls(width=width, height=height, noise_p=noise_p,
                   horizon=horizon, walls=walls, **kw)


def _crowd_cells(cfg):
    cells = [(r, c) for r in range(cfg.height) for c in range(cfg.width)
             if (r, c) not in cfg.walls]
    if not cells:
        raise ConfigError("grid has no free cells")
    return cells, {cell: i for i, cell in enumerate(cells)}


def _crowd_mu0(cfg, cells, index):
    if isinstance(cfg.init, str):
        if cfg.init != "uniform":
            raise ConfigError(f"unknown init spec {cfg.init!r}")
        return np.full(len(cells), 1.0 / len(cells))
    mu0 = np.zeros(len(cells))
    if isinstance(cfg.init, dict):
        items = [(tuple(k), float(v)) for k, v in cfg.init.items()]
    else:
        items = [(tuple(cfg.init), 1.0)]
    for cell, weight in items:
        if cell in cfg.walls:
            raise ValidationError(f"initial mass on wall cell {cell}")
        if cell not in index:
            raise ConfigError(f"initial cell {cell} outside the grid")
        mu0[index[cell]] = weight
    total = mu0.sum()
    if total <= 0:
        raise ConfigError("initial distribution has no mass")
    return mu0 / total


def _convolve_grid(grid, kernel):
    """'Same'-size 2-d convolution with zero padding (small kernels)."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(grid, ((ph, ph), (pw, pw)))
    out = np.zeros_like(grid)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + grid.shape[0],
                                         j:j + grid.shape[1]]
    return out


def build_crowd(cfg):
    """Grid-world FiniteMFG.

    The intended move ``s + a`` resolves to staying when it hits a wall or
    the boundary; movement noise then keeps the post-action cell with
    probability 1 - p and tries each of the four directions with p/4, noise
    moves into walls again resolving to staying.
    """
    cells, index = _crowd_cells(cfg)
    n_states = len(cells)
    mu0 = _crowd_mu0(cfg, cells, index)

    def resolve(cell, move):
        cand = (cell[0] + move[0], cell[1] + move[1])
        if (0 <= cand[0] < cfg.height and 0 <= cand[1] < cfg.width
                and cand not in cfg.walls):
            return cand
        return cell

    trans = np.zeros((n_states, len(_MOVES), n_states))
    for s, cell in enumerate(cells):
        for a, move in enumerate(_MOVES):
            dest = resolve(cell, move)
            trans[s, a, index[dest]] += 1.0 - cfg.noise_p
            for noise in _NOISE_DIRS:
                trans[s, a, index[resolve(dest, noise)]] += cfg.noise_p / 4.0

    move_len = np.array([1.0, 1.0, 1.0, 1.0, 0.0])
    if cfg.reward_kind == "target":
        dist = np.array([abs(r - cfg.target[0]) + abs(c - cfg.target[1])
                         for r, c in cells])

    def density(mu):
        if cfg.kernel is None:
            return mu
        grid = np.zeros((cfg.height, cfg.width))
        for i, (r, c) in enumerate(cells):
            grid[r, c] = mu[i]
        smoothed = _convolve_grid(grid, cfg.kernel)
        return np.array([smoothed[r, c] for r, c in cells])

    def reward_matrix(n, mu):
        if cfg.reward_kind == "target":
            return np.tile(-dist[:, None], (1, len(_MOVES)))
        dens = density(np.asarray(mu))
        if cfg.reward_kind == "crowd_aversion":
            return np.tile(-dens[:, None], (1, len(_MOVES)))
        return -dens[:, None] * move_len[None, :]

    def transition(n, s, a, mu):
        return trans[s, a]

    def reward(n, s, a, mu):
        return float(reward_matrix(n, mu)[s, a])

    meta = {"kind": "crowd", "shape": (cfg.height, cfg.width),
            "cells": cells, "actions": CROWD_ACTIONS,
            "labels": [f"{r}_{c}" for r, c in cells]}
    return FiniteMFG(n_states, len(_MOVES), cfg.horizon, mu0, transition,
                     reward, transition_tensor=lambda n, mu: trans,
                     reward_matrix=reward_matrix, transition_mu_free=True,
                     meta=meta)


def flow_to_grids(game, flow):
    """Expand a crowd flow into (horizon+1, height, width) grids."""
    height, width = game.meta["shape"]
    cells = game.meta["cells"]
    grids = np.zeros((flow.dist.shape[0], height, width))
    for i, (r, c) in enumerate(cells):
        grids[:, r, c] = flow.dist[:, i]
    return grids


# -- traffic routing ----------------------------------------------------------

@dataclass(frozen=True)
class RoutingNetwork:
    """Directed link network for routing games.

    States are (link, waiting time) pairs; the congestion function maps the
    entered link and its current occupancy in [0, 1] to a waiting time.
    ``congestion`` is {link: (c0, c1)} for the affine default
    c(link, m) = c0 + c1 * m, or a callable(link_name, mass) -> float.
    """

    links: tuple
    successors: dict
    destination: str
    congestion: object
    dt: float
    horizon: int
    origin: dict

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(set(self.links)) != len(self.links):
            raise ConfigError("duplicate link names")
        if self.destination not in self.links:
            raise ConfigError("destination must be a link")
        if self.dt <= 0 or self.horizon < 0:
            raise ConfigError("dt must be positive and horizon >= 0")
        for link in self.links:
            succ = self.successors.get(link, ())
            if len(succ) < 1:
                raise ConfigError(f"link {link!r} has no successors")
            for nxt in succ:
                if nxt not in self.links:
                    raise ConfigError(f"successor {nxt!r} of {link!r} unknown")
        if self.destination not in self.successors[self.destination]:
            raise ConfigError("destination link must be absorbing")
        total = sum(self.origin.values())
        if abs(total - 1.0) > 1e-12:
            raise ConfigError("origin distribution must sum to 1")
        for link in self.origin:
            if link not in self.links:
                raise ConfigError(f"origin link {link!r} unknown")

    def waiting_time(self, link_name, mass):
        if callable(self.congestion):
            value = float(self.congestion(link_name, mass))
        else:
            c0, c1 = self.congestion.get(link_name, (0.0, 0.0))
            value = float(c0) + float(c1) * mass
        if value < 0:
            raise ValidationError(
                f"congestion of {link_name!r} is negative at mass {mass}")
        return value


def braess_diamond(horizon=20, dt=1.0):
    """Five-edge Braess diamond with an entry and an absorbing exit link.

    Edge constants mirror the shipped routing config; they are placeholders
    in the classic shape (two congestible outer edges, two constant edges,
    one fast cross link).
    """
    return RoutingNetwork(
        links=("O", "OA", "OB", "AB", "AD", "BD", "D"),
        successors={"O": ("OA", "OB"), "OA": ("AD", "AB"), "OB": ("BD",),
                    "AB": ("BD",), "AD": ("D",), "BD": ("D",), "D": ("D",)},
        destination="D",
        congestion={"O": (0.0, 0.0), "OA": (1.0, 2.0), "OB": (3.0, 0.0),
                    "AB": (0.25, 0.0), "AD": (3.0, 0.0), "BD": (1.0, 2.0),
                    "D": (0.0, 0.0)},
        dt=dt, horizon=horizon, origin={"O": 1.0})


def build_braess(net):
    """Routing FiniteMFG over states (link, waiting time).

    While w > dt the waiting time just decays and the action is ignored;
    once w <= dt the agent enters the chosen successor, whose new waiting
    time is the congestion value at the successor's current total mass,
    quantized to the dt grid by ceiling.  Illegal actions map to the
    lowest-indexed legal successor (counted in meta diagnostics).  Reward
    is -1 whenever the current link is not the destination.
    """
    n_links = len(net.links)
    n_waits = net.horizon + 1
    n_states = n_links * n_waits
    link_index = {name: i for i, name in enumerate(net.links)}
    succ_sets = [frozenset(link_index[s] for s in net.successors[name])
                 for name in net.links]
    fallback = [min(s) for s in succ_sets]
    dest = link_index[net.destination]
    diagnostics = {"illegal_actions": 0}

    def state_of(link, wait):
        return link * n_waits + wait

    mu0 = np.zeros(n_states)
    for name, mass in net.origin.items():
        mu0[state_of(link_index[name], 0)] = mass

    def quantized_wait(link, mass):
        w = net.waiting_time(net.links[link], mass)
        steps = int(math.ceil(w / net.dt - 1e-12))
        return min(max(steps, 0), net.horizon)

    def link_mass(mu):
        return np.asarray(mu).reshape(n_links, n_waits).sum(axis=1)

    def next_state(link, wait, action, mass):
        if wait >= 2:
            return state_of(link, wait - 1)
        if action in succ_sets[link]:
            target = action
        else:
            diagnostics["illegal_actions"] += 1
            target = fallback[link]
        return state_of(target, quantized_wait(target, mass[target]))

    def transition(n, s, a, mu):
        out = np.zeros(n_states)
        out[next_state(s // n_waits, s % n_waits, a, link_mass(mu))] = 1.0
        return out

    def transition_tensor(n, mu):
        mass = link_mass(mu)
        entry_state = [state_of(t, quantized_wait(t, mass[t]))
                       for t in range(n_links)]
        out = np.zeros((n_states, n_links, n_states))
        for link in range(n_links):
            for wait in range(n_waits):
                s = state_of(link, wait)
                if wait >= 2:
                    out[s, :, state_of(link, wait - 1)] = 1.0
                    continue
                for a in range(n_links):
                    target = a if a in succ_sets[link] else fallback[link]
                    out[s, a, entry_state[target]] = 1.0
        return out

    not_dest = np.ones(n_states)
    for w in range(n_waits):
        not_dest[state_of(dest, w)] = 0.0
    reward_all = np.tile(-not_dest[:, None], (1, n_links))

    def reward(n, s, a, mu):
        return float(-not_dest[s])

    meta = {"kind": "routing", "links": list(net.links),
            "wait_levels": n_waits, "destination": dest,
            "diagnostics": diagnostics,
            "labels": [f"{name}_w{w}" for name in net.links
                       for w in range(n_waits)]}
    return FiniteMFG(n_states, n_links, net.horizon, mu0, transition, reward,
                     transition_tensor=transition_tensor,
                     reward_matrix=lambda n, mu: reward_all, meta=meta)


def destination_mass(game, flow):
    """Total mass on the destination link per time step."""
    n_waits = game.meta["wait_levels"]
    dest = game.meta["destination"]
    return flow.dist[:, dest * n_waits:(dest + 1) * n_waits].sum(axis=1)


# -- cybersecurity ------------------------------------------------------------

CYBER_STATES = ("DS", "DI", "US", "UI")
DS, DI, US, UI = 0, 1, 2, 3


@dataclass(frozen=True)
class CyberParams:
    """Rates and costs of the four-state protection/infection model."""

    rho: float
    q_rec_d: float
    q_rec_u: float
    v_h: float
    q_inf_d: float
    q_inf_u: float
    beta_dd: float
    beta_ud: float
    beta_uu: float
    beta_du: float
    k_d: float
    k_i: float
    dt: float
    horizon: int
    mu0: object = None

    def __post_init__(self):
        rates = (self.rho, self.q_rec_d, self.q_rec_u, self.v_h,
                 self.q_inf_d, self.q_inf_u, self.beta_dd, self.beta_ud,
                 self.beta_uu, self.beta_du, self.k_d, self.k_i)
        if any(r < 0 for r in rates):
            raise ConfigError("rates and costs must be non-negative")
        if self.dt <= 0 or self.horizon < 0:
            raise ConfigError("dt must be positive and horizon >= 0")
        mu0 = np.full(4, 0.25) if self.mu0 is None else np.asarray(self.mu0,
                                                                   dtype=float)
        object.__setattr__(self, "mu0", mu0)


def cyber_generator(p, a, mu):
    """4x4 transition-rate matrix in state order (DS, DI, US, UI).

    Infection rates combine the exogenous attack with the defended and
    undefended infected shares; the action toggles protection at rate
    rho * a; diagonals make rows sum to zero.
    """
    switch = p.rho * float(a)
    q = np.zeros((4, 4))
    q[DS, DI] = p.v_h * p.q_inf_d + p.beta_dd * mu[DI] + p.beta_ud * mu[UI]
    q[DS, US] = switch
    q[DI, DS] = p.q_rec_d
    q[DI, UI] = switch
    q[US, DS] = switch
    q[US, UI] = p.v_h * p.q_inf_u + p.beta_uu * mu[UI] + p.beta_du * mu[DI]
    q[UI, DI] = switch
    q[UI, US] = p.q_rec_u
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def build_cyber(p):
    """Cybersecurity FiniteMFG: P = exp(dt * Q(a, mu)); the reward charges
    k_d while defended and k_i while infected."""
    rew_vec = -np.array([p.k_d, p.k_d + p.k_i, 0.0, p.k_i])
    reward_all = np.tile(rew_vec[:, None], (1, 2))

    def step_matrices(mu):
        return [matrix_exponential(p.dt * cyber_generator(p, a, mu))
                for a in (0, 1)]

    def transition(n, s, a, mu):
        return step_matrices(mu)[a][s]

    def transition_tensor(n, mu):
        mats = step_matrices(mu)
        out = np.empty((4, 2, 4))
        out[:, 0, :] = mats[0]
        out[:, 1, :] = mats[1]
        return out

    def reward(n, s, a, mu):
        return float(rew_vec[s])

    meta = {"kind": "cyber", "labels": list(CYBER_STATES)}
    return FiniteMFG(4, 2, p.horizon, p.mu0, transition, reward,
                     transition_tensor=transition_tensor,
                     reward_matrix=lambda n, mu: reward_all, meta=meta)


# -- declarative construction -------------------------------------------------

def _toy_chain(spec):
    n_states = int(spec.get("n_states", 3))
    horizon = int(spec.get("horizon", 3))

    def transition(n, s, a, mu):
        out = np.zeros(n_states)
        out[(s + 1) % n_states] = 1.0
        return out

    def reward(n, s, a, mu):
        return -float(mu[s])

    return FiniteMFG(n_states, 1, horizon, np.full(n_states, 1.0 / n_states),
                     transition, reward, transition_mu_free=True,
                     meta={"kind": "toy_chain",
                           "labels": [str(i) for i in range(n_states)]})


def build_environment(spec):
    """Build a FiniteMFG from a declarative config block (kind tag plus
    parameters; grid layouts as ASCII maps, networks as edge lists)."""
    kind = spec.get("kind")
    if kind == "crowd":
        layout = spec.get("layout")
        if layout == "four_room_9x9":
            layout = FOUR_ROOM_9X9
        if layout is None:
            raise ConfigError("crowd environment needs a layout")
        init = spec.get("init", {"kind": "uniform"})
        if isinstance(init, dict):
            if init.get("kind") == "uniform":
                init_arg = "uniform"
            elif init.get("kind") == "cell":
                init_arg = tuple(init["cell"])
            elif init.get("kind") == "weights":
                init_arg = {tuple(cell): w for cell, w in init["cells"]}
            else:
                raise ConfigError(f"unknown init kind {init.get('kind')!r}")
        else:
            init_arg = init
        kernel = spec.get("kernel")
        cfg = CrowdConfig.from_layout(
            list(layout), noise_p=float(spec["noise_p"]),
            horizon=int(spec["horizon"]),
            reward_kind=spec.get("reward_kind", "crowd_aversion"),
            kernel=None if kernel is None else np.asarray(kernel),
            init=init_arg,
            **({"target": tuple(spec["target"])} if "target" in spec else {}))
        return build_crowd(cfg)
    if kind == "routing":
        if spec.get("network") == "braess_diamond":
            net = braess_diamond(horizon=int(spec.get("horizon", 20)),
                                 dt=float(spec.get("dt", 1.0)))
        else:
            net = RoutingNetwork(
                links=tuple(spec["links"]),
                successors={k: tuple(v) for k, v in spec["successors"].items()},
                destination=spec["destination"],
                congestion={k: tuple(v) for k, v in spec["congestion"].items()},
                dt=float(spec.get("dt", 1.0)), horizon=int(spec["horizon"]),
                origin=dict(spec["origin"]))
        return build_braess(net)
    if kind == "cyber":
        fields = ("rho", "q_rec_d", "q_rec_u", "v_h", "q_inf_d", "q_inf_u",
                  "beta_dd", "beta_ud", "beta_uu", "beta_du", "k_d", "k_i",
                  "dt", "horizon")
        params = CyberParams(**{f: spec[f] for f in fields},
                             mu0=spec.get("mu0"))
        return build_cyber(params)
    if kind == "toy_chain":
        return _toy_chain(spec)
    raise ConfigError(f"unknown environment kind {kind!r}")
