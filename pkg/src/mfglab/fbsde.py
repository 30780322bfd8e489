"""Continuous-time MFG solving via the coupled forward-backward SDE system.

The state follows dX = b(t, X, alpha, mu) dt + sigma dW with the control
alpha chosen as the Hamiltonian minimizer of the adjoint value Y, and Y is
shot forward from a learned initial map with a learned diffusion
coefficient so that Y_T matches the terminal-condition gradient.  The
population enters through a finite list of registered statistics of the
particle cloud (means of model-declared feature maps), which keeps the
chain rule through the empirical measure well-defined.

Two training schemes: the iterative scheme alternates a forward particle
pass (with the adjoint frozen from the previous round) against inner
descent on the terminal loss, and the simultaneous scheme regenerates the
fully coupled particle system every descent step, differentiating through
the states and the statistics as well.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DivergenceError, UnsupportedModelError
from .nets import Mlp, make_optimizer

_FD_STEP = 1e-6


@dataclass(frozen=True)
class Stat:
    """Registered population statistic: the mean of ``phi`` over particles.

    ``dphi`` is the derivative of the feature map, used when gradients flow
    through the empirical measure.
    """

    name: str
    phi: Callable
    dphi: Callable


@dataclass(frozen=True)
class ModelPartials:
    """Optional analytic partial derivatives of the model callables.

    Any entry left as None is replaced by a central finite difference of
    the corresponding model function (step 1e-6), which is exact to
    rounding for the affine benchmark models.  ``*_stats`` entries return
    an array of shape (n_stats, n_particles).
    """

    drift_x: Optional[Callable] = None
    drift_alpha: Optional[Callable] = None
    drift_stats: Optional[Callable] = None
    hx_x: Optional[Callable] = None
    hx_alpha: Optional[Callable] = None
    hx_y: Optional[Callable] = None
    hx_stats: Optional[Callable] = None
    alpha_x: Optional[Callable] = None
    alpha_y: Optional[Callable] = None
    alpha_stats: Optional[Callable] = None
    dg_x: Optional[Callable] = None
    dg_stats: Optional[Callable] = None


@dataclass(frozen=True)
class ContinuousMFG:
    """Continuous-time mean field game in one state dimension.

    ``drift``, ``running_cost`` take (t, x, alpha, stats); ``terminal_cost``
    and ``terminal_cost_gradient`` take (x, stats);
    ``hamiltonian_x_gradient`` takes (t, x, alpha, stats, y) and
    ``alpha_hat`` (t, x, stats, y), all vectorized over particle arrays.
    ``stats`` is the vector of registered statistics standing in for the
    empirical measure.
    """

    sigma: float
    horizon: float
    drift: Callable
    running_cost: Callable
    terminal_cost: Callable
    terminal_cost_gradient: Callable
    hamiltonian_x_gradient: Callable
    alpha_hat: Callable
    initial_sampler: Callable
    statistics: tuple = ()
    partials: ModelPartials = field(default_factory=ModelPartials)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")

    def hamiltonian(self, t, x, alpha, stats, y):
        return self.drift(t, x, alpha, stats) * y \
            + self.running_cost(t, x, alpha, stats)

    def stats_of(self, x):
        if not self.statistics:
            return np.zeros(0)
        return np.array([np.mean(st.phi(x)) for st in self.statistics])

    def stats_dphi(self, x):
        return np.array([st.dphi(x) * np.ones_like(x)
                         for st in self.statistics])

    # -- partial-derivative accessors (finite-difference fallbacks) --------

    def _fd_pair(self, fn, args, idx):
        plus = list(args)
        minus = list(args)
        plus[idx] = args[idx] + _FD_STEP
        minus[idx] = args[idx] - _FD_STEP
        return (fn(*plus) - fn(*minus)) / (2 * _FD_STEP)

    def _fd_stats(self, fn, args, idx):
        base = args[idx]
        rows = []
        for r in range(len(self.statistics)):
            plus = list(args)
            minus = list(args)
            shift = np.zeros_like(base)
            shift[r] = _FD_STEP
            plus[idx] = base + shift
            minus[idx] = base - shift
            rows.append((fn(*plus) - fn(*minus)) / (2 * _FD_STEP))
        return np.array(rows)

    def drift_x(self, t, x, alpha, stats):
        if self.partials.drift_x:
            return self.partials.drift_x(t, x, alpha, stats)
        return self._fd_pair(self.drift, (t, x, alpha, stats), 1)

    def drift_alpha(self, t, x, alpha, stats):
        if self.partials.drift_alpha:
            return self.partials.drift_alpha(t, x, alpha, stats)
        return self._fd_pair(self.drift, (t, x, alpha, stats), 2)

    def drift_stats(self, t, x, alpha, stats):
        if self.partials.drift_stats:
            return self.partials.drift_stats(t, x, alpha, stats)
        return self._fd_stats(self.drift, (t, x, alpha, stats), 3)

    def hx_x(self, t, x, alpha, stats, y):
        if self.partials.hx_x:
            return self.partials.hx_x(t, x, alpha, stats, y)
        return self._fd_pair(self.hamiltonian_x_gradient,
                             (t, x, alpha, stats, y), 1)

    def hx_alpha(self, t, x, alpha, stats, y):
        if self.partials.hx_alpha:
            return self.partials.hx_alpha(t, x, alpha, stats, y)
        return self._fd_pair(self.hamiltonian_x_gradient,
                             (t, x, alpha, stats, y), 2)

    def hx_y(self, t, x, alpha, stats, y):
        if self.partials.hx_y:
            return self.partials.hx_y(t, x, alpha, stats, y)
        return self._fd_pair(self.hamiltonian_x_gradient,
                             (t, x, alpha, stats, y), 4)

    def hx_stats(self, t, x, alpha, stats, y):
        if self.partials.hx_stats:
            return self.partials.hx_stats(t, x, alpha, stats, y)
        return self._fd_stats(self.hamiltonian_x_gradient,
                              (t, x, alpha, stats, y), 3)

    def alpha_x(self, t, x, stats, y):
        if self.partials.alpha_x:
            return self.partials.alpha_x(t, x, stats, y)
        return self._fd_pair(self.alpha_hat, (t, x, stats, y), 1)

    def alpha_y(self, t, x, stats, y):
        if self.partials.alpha_y:
            return self.partials.alpha_y(t, x, stats, y)
        return self._fd_pair(self.alpha_hat, (t, x, stats, y), 3)

    def alpha_stats(self, t, x, stats, y):
        if self.partials.alpha_stats:
            return self.partials.alpha_stats(t, x, stats, y)
        return self._fd_stats(self.alpha_hat, (t, x, stats, y), 2)

    def dg_x(self, x, stats):
        if self.partials.dg_x:
            return self.partials.dg_x(x, stats)
        return self._fd_pair(self.terminal_cost_gradient, (x, stats), 0)

    def dg_stats(self, x, stats):
        if self.partials.dg_stats:
            return self.partials.dg_stats(x, stats)
        return self._fd_stats(self.terminal_cost_gradient, (x, stats), 1)


def check_hamiltonian_minimality(model, t, x, stats, y,
                                 deltas=(1e-3, 1e-2), slack=1e-12):
    """Probe that alpha_hat minimizes the Hamiltonian at the given points."""
    alpha = model.alpha_hat(t, x, stats, y)
    base = model.hamiltonian(t, x, alpha, stats, y)
    for delta in deltas:
        for sign in (1.0, -1.0):
            shifted = model.hamiltonian(t, x, alpha + sign * delta, stats, y)
            if np.any(base > shifted + slack):
                return False
    return True


@dataclass(frozen=True)
class ParticleBatch:
    """Coupled particle trajectories on the uniform time grid.

    ``x``/``y`` have shape (N, n_steps + 1), ``z``/``dw`` (N, n_steps);
    ``stats`` holds the registered statistics per time step.
    """

    times: np.ndarray
    x: np.ndarray
    y: Optional[np.ndarray]
    z: Optional[np.ndarray]
    dw: np.ndarray
    stats: np.ndarray

    @property
    def n_particles(self):
        return self.x.shape[0]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def write_snapshot_csv(self, path, step):
        from .core import write_csv_rows

        y = self.y if self.y is not None else np.full_like(self.x, np.nan)
        write_csv_rows(path, "t,i,x,y",
                       ((self.times[step], i, self.x[i, step], y[i, step])
                        for i in range(self.n_particles)))


@dataclass(frozen=True)
class ShootingControls:
    """Learned initial-value and diffusion maps of the shot adjoint.

    ``y0_net`` maps the initial state to Y_0; ``z_net`` maps (t / T, x) to
    Z_t (time normalized to [0, 1] for conditioning).
    """

    y0_net: Mlp
    z_net: Mlp
    horizon: float

    def y0(self, x):
        return self.y0_net.forward(np.asarray(x)[:, None])[:, 0]

    def z(self, t, x):
        arr = np.asarray(x)
        inp = np.stack([np.full_like(arr, t / self.horizon), arr], axis=1)
        return self.z_net.forward(inp)[:, 0]

    @classmethod
    def create(cls, horizon, widths=(32, 32), rng_seed=0, zero_output=True):
        return cls(Mlp.create((1, *widths, 1), rng_seed=rng_seed,
                              zero_output=zero_output),
                   Mlp.create((2, *widths, 1), rng_seed=rng_seed + 1,
                              zero_output=zero_output),
                   horizon)


def _time_grid(model, dt):
    n_steps = int(round(model.horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - model.horizon) > 1e-9:
        raise ConfigError("dt must divide the horizon into whole steps")
    return n_steps, np.linspace(0.0, model.horizon, n_steps + 1)


def simulate_forward(model, n_particles, dt, rng_seed, y_frozen=None):
    """Euler particle pass of the state equation.

    ``y_frozen`` supplies the adjoint values entering the control (frozen
    from the previous iterate); all zeros when omitted.  The empirical
    statistics are recomputed per step from the current cloud.
    """
    if n_particles < 1:
        raise ConfigError("need at least one particle")
    n_steps, times = _time_grid(model, dt)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    x = np.empty((n_particles, n_steps + 1))
    x[:, 0] = model.initial_sampler(rng, n_particles)
    dw = rng.normal(0.0, np.sqrt(dt), size=(n_particles, n_steps))
    if y_frozen is None:
        y_frozen = np.zeros((n_particles, n_steps + 1))
    stats = np.zeros((n_steps + 1, len(model.statistics)))
    for n in range(n_steps):
        stats[n] = model.stats_of(x[:, n])
        alpha = model.alpha_hat(times[n], x[:, n], stats[n], y_frozen[:, n])
        x[:, n + 1] = x[:, n] + dt * model.drift(times[n], x[:, n], alpha,
                                                 stats[n]) \
            + model.sigma * dw[:, n]
        if not np.all(np.isfinite(x[:, n + 1])):
            i = int(np.argwhere(~np.isfinite(x[:, n + 1]))[0])
            raise DivergenceError(f"non-finite state at particle {i}, step {n + 1}")
    stats[n_steps] = model.stats_of(x[:, n_steps])
    return ParticleBatch(times, x, None, None, dw, stats)


def simulate_backward_given_x(model, batch, controls):
    """Shoot the adjoint forward along frozen states, reusing the batch's
    recorded noise; the control inside the driver uses the current Y."""
    n_steps = batch.dw.shape[1]
    dt = batch.dt
    y = np.empty_like(batch.x)
    z = np.empty_like(batch.dw)
    y[:, 0] = controls.y0(batch.x[:, 0])
    for n in range(n_steps):
        z[:, n] = controls.z(batch.times[n], batch.x[:, n])
        alpha = model.alpha_hat(batch.times[n], batch.x[:, n], batch.stats[n],
                                y[:, n])
        hx = model.hamiltonian_x_gradient(batch.times[n], batch.x[:, n],
                                          alpha, batch.stats[n], y[:, n])
        y[:, n + 1] = y[:, n] - dt * hx + z[:, n] * batch.dw[:, n]
        if not np.all(np.isfinite(y[:, n + 1])):
            i = int(np.argwhere(~np.isfinite(y[:, n + 1]))[0])
            raise DivergenceError(f"non-finite adjoint at particle {i}, step {n + 1}")
    return replace(batch, y=y, z=z)


def shooting_loss_y(batch, model):
    """(1/N) sum_i (Y_T^i - dg(X_T^i, mu_T^N))^2."""
    target = model.terminal_cost_gradient(batch.x[:, -1], batch.stats[-1])
    return float(np.mean((batch.y[:, -1] - target) ** 2))


# -- iterative scheme ---------------------------------------------------------

def _z_inputs(batch, horizon):
    n_particles, n_plus_1 = batch.x.shape
    n_steps = n_plus_1 - 1
    t_col = np.repeat(batch.times[:n_steps] / horizon, n_particles)
    x_col = batch.x[:, :n_steps].T.ravel()
    return np.stack([t_col, x_col], axis=1)


def _inner_gradient(model, batch, controls):
    """Loss gradient for (y0_net, z_net) with states and statistics frozen."""
    shot = simulate_backward_given_x(model, batch, controls)
    n_particles = batch.n_particles
    n_steps = batch.dw.shape[1]
    dt = batch.dt
    target = model.terminal_cost_gradient(batch.x[:, -1], batch.stats[-1])
    err = (2.0 / n_particles) * (shot.y[:, -1] - target)
    rho = np.empty((n_steps + 1, n_particles))
    rho[n_steps] = err
    for n in range(n_steps - 1, -1, -1):
        t, xs, ys = batch.times[n], batch.x[:, n], shot.y[:, n]
        alpha = model.alpha_hat(t, xs, batch.stats[n], ys)
        dy = model.hx_alpha(t, xs, alpha, batch.stats[n], ys) \
            * model.alpha_y(t, xs, batch.stats[n], ys) \
            + model.hx_y(t, xs, alpha, batch.stats[n], ys)
        rho[n] = rho[n + 1] * (1.0 - dt * dy)
    z_upstream = (rho[1:] * batch.dw.T).ravel()
    grad_z = controls.z_net.grad_params(_z_inputs(batch, controls.horizon),
                                        z_upstream[:, None])
    grad_y0 = controls.y0_net.grad_params(batch.x[:, 0][:, None],
                                          rho[0][:, None])
    loss = float(np.mean((shot.y[:, -1] - target) ** 2))
    return loss, grad_y0, grad_z, shot


def iterative_solve(model, outer_iterations, sgd_steps=200, n_particles=2000,
                    dt=None, rng_seed=0, optimizer="adam", learning_rate=1e-2,
                    net_widths=(32, 32), divergence_threshold=1e6):
    """Alternate forward particle passes with descent on the terminal loss.

    Each round resamples the population with the adjoint frozen at the
    previous round's trajectories (zeros initially), then takes
    ``sgd_steps`` descent steps on the shooting loss with the states
    frozen.  Returns (controls, final batch, per-round loss trace).
    """
    if outer_iterations < 1 or sgd_steps < 1:
        raise ConfigError("iteration counts must be >= 1")
    dt = model.horizon / 50 if dt is None else dt
    controls = ShootingControls.create(model.horizon, net_widths,
                                       rng_seed=rng_seed)
    opt_y0 = make_optimizer(optimizer, learning_rate)
    opt_z = make_optimizer(optimizer, learning_rate)
    seeds = np.random.SeedSequence(rng_seed).generate_state(outer_iterations)
    y_frozen = None
    trace = []
    batch = None
    for k in range(outer_iterations):
        batch = simulate_forward(model, n_particles, dt, int(seeds[k]),
                                 y_frozen=y_frozen)
        loss = np.inf
        for _ in range(sgd_steps):
            loss, g_y0, g_z, shot = _inner_gradient(model, batch, controls)
            if loss > divergence_threshold:
                err = DivergenceError(
                    f"iterative shooting diverged at round {k} (loss {loss:.3e})")
                err.trace = np.array(trace + [loss])
                raise err
            controls = replace(
                controls,
                y0_net=controls.y0_net.with_params(
                    opt_y0.step(controls.y0_net.params, g_y0)),
                z_net=controls.z_net.with_params(
                    opt_z.step(controls.z_net.params, g_z)))
        batch = simulate_backward_given_x(model, batch, controls)
        y_frozen = batch.y
        trace.append(shooting_loss_y(batch, model))
    return controls, batch, np.array(trace)


# -- simultaneous scheme ------------------------------------------------------

def _simulate_coupled(model, controls, n_particles, dt, rng_seed):
    """Advance X and Y together: the control uses the current adjoint and
    the empirical statistics of the current cloud."""
    n_steps, times = _time_grid(model, dt)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    x = np.empty((n_particles, n_steps + 1))
    y = np.empty((n_particles, n_steps + 1))
    z = np.empty((n_particles, n_steps))
    alphas = np.empty((n_particles, n_steps))
    x[:, 0] = model.initial_sampler(rng, n_particles)
    y[:, 0] = controls.y0(x[:, 0])
    dw = rng.normal(0.0, np.sqrt(dt), size=(n_particles, n_steps))
    stats = np.zeros((n_steps + 1, len(model.statistics)))
    for n in range(n_steps):
        stats[n] = model.stats_of(x[:, n])
        z[:, n] = controls.z(times[n], x[:, n])
        alphas[:, n] = model.alpha_hat(times[n], x[:, n], stats[n], y[:, n])
        x[:, n + 1] = x[:, n] + dt * model.drift(times[n], x[:, n],
                                                 alphas[:, n], stats[n]) \
            + model.sigma * dw[:, n]
        hx = model.hamiltonian_x_gradient(times[n], x[:, n], alphas[:, n],
                                          stats[n], y[:, n])
        y[:, n + 1] = y[:, n] - dt * hx + z[:, n] * dw[:, n]
        if not (np.all(np.isfinite(x[:, n + 1]))
                and np.all(np.isfinite(y[:, n + 1]))):
            raise DivergenceError(f"non-finite particle state at step {n + 1}")
    stats[n_steps] = model.stats_of(x[:, n_steps])
    return ParticleBatch(times, x, y, z, dw, stats), alphas


def _coupled_gradient(model, controls, batch, alphas):
    """Full pathwise gradient of the terminal loss: adjoints flow through
    the states, the adjoint process, and the registered statistics."""
    n_particles = batch.n_particles
    n_steps = batch.dw.shape[1]
    dt = batch.dt
    x, y, stats, times = batch.x, batch.y, batch.stats, batch.times
    dphi = model.stats_dphi(x[:, -1]) if model.statistics else None
    target = model.terminal_cost_gradient(x[:, -1], stats[-1])
    err = (2.0 / n_particles) * (y[:, -1] - target)
    loss = float(np.mean((y[:, -1] - target) ** 2))
    rho = err
    lam = -err * model.dg_x(x[:, -1], stats[-1])
    if model.statistics:
        tau = -(model.dg_stats(x[:, -1], stats[-1]) @ err)
        lam = lam + (tau[:, None] * dphi).sum(axis=0) / n_particles
    z_up = np.empty((n_steps, n_particles))
    rho0 = None
    # z-net input partials (dZ/dx) for the whole trajectory in one batch
    inputs = _z_inputs(batch, controls.horizon)
    _, jac, _, _ = controls.z_net.value_and_partials(inputs, order=1)
    zx_all = jac[:, 0, 1].reshape(n_steps, n_particles)
    for n in range(n_steps - 1, -1, -1):
        t, xs, ys, al, st = times[n], x[:, n], y[:, n], alphas[:, n], stats[n]
        z_up[n] = rho * batch.dw[:, n]
        a_y = model.alpha_y(t, xs, st, ys)
        a_x = model.alpha_x(t, xs, st, ys)
        b_a = model.drift_alpha(t, xs, al, st)
        b_x = model.drift_x(t, xs, al, st)
        h_a = model.hx_alpha(t, xs, al, st, ys)
        h_x = model.hx_x(t, xs, al, st, ys)
        h_y = model.hx_y(t, xs, al, st, ys)
        new_rho = rho * (1.0 - dt * (h_a * a_y + h_y)) + lam * dt * b_a * a_y
        new_lam = lam * (1.0 + dt * (b_x + b_a * a_x)) \
            - rho * dt * (h_x + h_a * a_x) + rho * batch.dw[:, n] * zx_all[n]
        if model.statistics:
            b_s = model.drift_stats(t, xs, al, st)
            h_s = model.hx_stats(t, xs, al, st, ys)
            a_s = model.alpha_stats(t, xs, st, ys)
            tau = dt * ((b_s + b_a * a_s) @ lam - (h_s + h_a * a_s) @ rho)
            new_lam = new_lam + (tau[:, None]
                                 * model.stats_dphi(xs)).sum(axis=0) / n_particles
        rho, lam = new_rho, new_lam
    rho0 = rho
    grad_z = controls.z_net.grad_params(inputs, z_up.ravel()[:, None])
    grad_y0 = controls.y0_net.grad_params(x[:, 0][:, None], rho0[:, None])
    return loss, grad_y0, grad_z


def simultaneous_solve(model, sgd_steps=5000, n_particles=2000, dt=None,
                       rng_seed=0, optimizer="adam", learning_rate=1e-2,
                       net_widths=(32, 32), divergence_threshold=1e6):
    """Descend the terminal loss on freshly regenerated coupled batches.

    Every step simulates the full interacting system under the current
    controls and differentiates the terminal mismatch through the states
    and the empirical statistics.  Returns (controls, loss trace).
    """
    if sgd_steps < 1:
        raise ConfigError("sgd_steps must be >= 1")
    dt = model.horizon / 50 if dt is None else dt
    controls = ShootingControls.create(model.horizon, net_widths,
                                       rng_seed=rng_seed)
    opt_y0 = make_optimizer(optimizer, learning_rate)
    opt_z = make_optimizer(optimizer, learning_rate)
    seeds = np.random.SeedSequence(rng_seed + 1).generate_state(sgd_steps)
    trace = np.empty(sgd_steps)
    for k in range(sgd_steps):
        batch, alphas = _simulate_coupled(model, controls, n_particles, dt,
                                          int(seeds[k]))
        loss, g_y0, g_z = _coupled_gradient(model, controls, batch, alphas)
        trace[k] = loss
        if loss > divergence_threshold:
            err = DivergenceError(
                f"simultaneous shooting diverged at step {k} (loss {loss:.3e})")
            err.trace = trace[:k + 1]
            raise err
        controls = replace(
            controls,
            y0_net=controls.y0_net.with_params(
                opt_y0.step(controls.y0_net.params, g_y0)),
            z_net=controls.z_net.with_params(
                opt_z.step(controls.z_net.params, g_z)))
    return controls, trace


# -- linear-quadratic project-value benchmark ----------------------------------

@dataclass(frozen=True)
class LqProjectModel:
    """Effort-vs-project-value model with quadratic utility.

    U(x) = curvature x^2 + slope x + offset (concave: curvature <= 0).
    Effort costs half its square, the project value drifts with the
    population's average value, and utility is earned on the running value
    and the terminal value.
    """

    curvature: float
    slope: float
    offset: float = 0.0
    sigma: float = 0.3
    horizon: float = 0.5
    mu0_mean: float = 0.5
    mu0_std: float = 0.5

    def __post_init__(self):
        if self.curvature > 0:
            raise UnsupportedModelError("utility must be concave")
        if self.sigma <= 0 or self.mu0_std <= 0:
            raise ConfigError("sigma and mu0_std must be positive")

    def u_prime(self, x):
        return 2.0 * self.curvature * x + self.slope

    def to_continuous(self):
        two_c = 2.0 * self.curvature

        def drift(t, x, alpha, stats):
            return alpha + stats[0]

        def running_cost(t, x, alpha, stats):
            return 0.5 * alpha ** 2 - (self.curvature * x ** 2
                                       + self.slope * x + self.offset)

        def terminal_cost(x, stats):
            return -(self.curvature * x ** 2 + self.slope * x + self.offset)

        partials = ModelPartials(
            drift_x=lambda t, x, a, s: np.zeros_like(x),
            drift_alpha=lambda t, x, a, s: np.ones_like(x),
            drift_stats=lambda t, x, a, s: np.ones((1, np.size(x))),
            hx_x=lambda t, x, a, s, y: np.full_like(x, -two_c),
            hx_alpha=lambda t, x, a, s, y: np.zeros_like(x),
            hx_y=lambda t, x, a, s, y: np.zeros_like(x),
            hx_stats=lambda t, x, a, s, y: np.zeros((1, np.size(x))),
            alpha_x=lambda t, x, s, y: np.zeros_like(x),
            alpha_y=lambda t, x, s, y: -np.ones_like(x),
            alpha_stats=lambda t, x, s, y: np.zeros((1, np.size(x))),
            dg_x=lambda x, s: np.full_like(x, -two_c),
            dg_stats=lambda x, s: np.zeros((1, np.size(x))))
        return ContinuousMFG(
            sigma=self.sigma, horizon=self.horizon, drift=drift,
            running_cost=running_cost, terminal_cost=terminal_cost,
            terminal_cost_gradient=lambda x, stats: -self.u_prime(x),
            hamiltonian_x_gradient=lambda t, x, a, stats, y: -self.u_prime(x),
            alpha_hat=lambda t, x, stats, y: -y,
            initial_sampler=lambda rng, n: rng.normal(self.mu0_mean,
                                                      self.mu0_std, size=n),
            statistics=(Stat("mean", lambda x: x,
                             lambda x: np.ones_like(x)),),
            partials=partials)


@dataclass(frozen=True)
class LqAnsatzPath:
    """Backward-integrated coefficient paths of the affine adjoint ansatz
    Y_t = A_t X_t + B_t Xbar_t + C_t, plus the induced mean path."""

    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mean: np.ndarray

    def y0(self, x):
        return self.a[0] * np.asarray(x) + self.b[0] * self.mean[0] + self.c[0]

    def y_at(self, step, x):
        return self.a[step] * np.asarray(x) + self.b[step] * self.mean[step] \
            + self.c[step]


def _lq_odes(model):
    u2, u1 = model.curvature, model.slope

    def rhs(v):
        a, b, c = v
        return np.array([2.0 * u2 + a * a,
                         2.0 * a * b + b * b - a - b,
                         u1 + (a + b) * c])

    terminal = np.array([-2.0 * u2, 0.0, -u1])
    return rhs, terminal


def lq_ansatz_oracle(model, dt_fine=1e-3):
    """Coefficient paths of the affine ansatz by matched-coefficient ODEs.

    Substituting Y = A X + B Xbar + C into the adjoint system and matching
    the X, Xbar and constant terms yields a terminal-value Riccati system,
    integrated backward with classical RK4; the induced mean path follows
    by integrating the averaged state drift forward.
    """
    if not isinstance(model, LqProjectModel):
        raise UnsupportedModelError("ansatz oracle needs the quadratic model")
    n_steps = int(round(model.horizon / dt_fine))
    if n_steps < 2 or abs(n_steps * dt_fine - model.horizon) > 1e-9:
        raise ConfigError("dt_fine must divide the horizon")
    rhs, terminal = _lq_odes(model)
    coef = np.empty((n_steps + 1, 3))
    coef[n_steps] = terminal
    h = dt_fine
    for i in range(n_steps, 0, -1):
        v = coef[i]
        k1 = rhs(v)
        k2 = rhs(v - 0.5 * h * k1)
        k3 = rhs(v - 0.5 * h * k2)
        k4 = rhs(v - h * k3)
        coef[i - 1] = v - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    a, b, c = coef[:, 0], coef[:, 1], coef[:, 2]
    mean = np.empty(n_steps + 1)
    mean[0] = model.mu0_mean

    def mean_rhs(i, frac, m):
        # linear interpolation of the coefficients inside the RK4 stage
        ai = (1 - frac) * a[i] + frac * a[min(i + 1, n_steps)]
        bi = (1 - frac) * b[i] + frac * b[min(i + 1, n_steps)]
        ci = (1 - frac) * c[i] + frac * c[min(i + 1, n_steps)]
        return (1.0 - ai - bi) * m - ci

    for i in range(n_steps):
        m = mean[i]
        k1 = mean_rhs(i, 0.0, m)
        k2 = mean_rhs(i, 0.5, m + 0.5 * h * k1)
        k3 = mean_rhs(i, 0.5, m + 0.5 * h * k2)
        k4 = mean_rhs(i, 1.0, m + h * k3)
        mean[i + 1] = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    return LqAnsatzPath(times, a, b, c, mean)


def ansatz_residuals(path, model):
    """Sup-norm residuals of the matched ODEs along the integrated paths,
    via 4th-order central differences on the interior grid."""
    rhs, _ = _lq_odes(model)
    h = float(path.times[1] - path.times[0])
    series = np.stack([path.a, path.b, path.c], axis=1)
    deriv = (series[:-4] - 8 * series[1:-3] + 8 * series[3:-1]
             - series[4:]) / (12 * h)
    expected = np.array([rhs(v) for v in series[2:-2]])
    return float(np.abs(deriv - expected).max())


def probe_grid(model, n_points=101, half_width_sds=3.0):
    """Evaluation grid centered on the initial mean."""
    lo = model.mu0_mean - half_width_sds * model.mu0_std
    hi = model.mu0_mean + half_width_sds * model.mu0_std
    return np.linspace(lo, hi, n_points)
