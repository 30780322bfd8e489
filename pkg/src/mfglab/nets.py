"""Self-contained differentiable multilayer perceptron.

The network is a plain feed-forward stack (linear output layer, smooth
hidden activation) over a flat parameter vector.  Beyond evaluation it
provides:

- exact parameter-gradients of weighted outputs (reverse mode);
- exact first and second input-partials (forward propagation of the
  Jacobian/Hessian through the layers);
- reverse mode *through the input-partials*: parameter-gradients of any
  scalar built from (value, first partials, second partials), which is what
  the PDE-residual training needs.

Everything is float64 and deterministic: identical seeds give identical
initial parameters, and batch reductions use fixed-order matmuls.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DivergenceError


def _tanh_derivs(z):
    t = np.tanh(z)
    d1 = 1.0 - t * t
    d2 = -2.0 * t * d1
    d3 = d1 * (4.0 * t * t - 2.0 * d1)
    return t, d1, d2, d3


def _identity_derivs(z):
    one = np.ones_like(z)
    zero = np.zeros_like(z)
    return z, one, zero, zero


ACTIVATIONS = {"tanh": _tanh_derivs, "identity": _identity_derivs}


def _apply_weight(w, arr):
    """Contract a (dout, din) weight with arr (B, din, ...) over din."""
    moved = np.moveaxis(arr, 1, -1)
    out = moved @ w.T
    return np.moveaxis(out, -1, 1)


@dataclass(frozen=True)
class Mlp:
    """Feed-forward network with tanh (default) hidden units, linear output."""

    widths: tuple
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("need at least input and output widths")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        arr = np.asarray(self.params, dtype=np.float64)
        if arr.shape != (self.n_params,):
            raise ConfigError(
                f"params must be a flat vector of length {self.n_params}")
        object.__setattr__(self, "params", arr)

    @property
    def n_params(self):
        return sum(din * dout + dout
                   for din, dout in zip(self.widths[:-1], self.widths[1:]))

    @classmethod
    def create(cls, widths, rng_seed, activation="tanh", zero_output=False):
        """Weights ~ N(0, 1/fan_in), zero biases; optionally zero the
        output layer so the network starts as the constant 0."""
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        chunks = []
        n_layers = len(widths) - 1
        for i, (din, dout) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.normal(0.0, np.sqrt(1.0 / din), size=(dout, din))
            if zero_output and i == n_layers - 1:
                w[:] = 0.0
            chunks.append(w.ravel())
            chunks.append(np.zeros(dout))
        return cls(tuple(widths), np.concatenate(chunks), activation)

    def layers(self, params=None):
        """Views of (W, b) per layer into the flat parameter vector."""
        vec = self.params if params is None else params
        out = []
        pos = 0
        for din, dout in zip(self.widths[:-1], self.widths[1:]):
            w = vec[pos:pos + din * dout].reshape(dout, din)
            pos += din * dout
            b = vec[pos:pos + dout]
            pos += dout
            out.append((w, b))
        return out

    def with_params(self, params):
        return Mlp(self.widths, params, self.activation)

    # -- evaluation and derivatives ---------------------------------------

    def _as_batch(self, x):
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.shape[1] != self.widths[0]:
            raise ConfigError(
                f"input width {arr.shape[1]} does not match {self.widths[0]}")
        return arr, single

    def forward(self, x):
        arr, single = self._as_batch(x)
        act = ACTIVATIONS[self.activation]
        a = arr
        n_layers = len(self.widths) - 1
        for i, (w, b) in enumerate(self.layers()):
            z = a @ w.T + b
            a = z if i == n_layers - 1 else act(z)[0]
        return a[0] if single else a

    def __call__(self, x):
        return self.forward(x)

    def value_and_partials(self, x, order=2):
        """Forward pass carrying input-Jacobians and input-Hessians.

        Returns (value, J, H, cache): value (B, out), J (B, out, d),
        H (B, out, d, d) (J/H are None below the requested order).  The
        cache feeds :meth:`backprop`.
        """
        arr, single = self._as_batch(x)
        if single:
            raise ConfigError("value_and_partials expects a batch (B, d) input")
        act = ACTIVATIONS[self.activation]
        n_batch, dim = arr.shape
        a = arr
        jac = None
        hess = None
        if order >= 1:
            jac = np.broadcast_to(np.eye(dim), (n_batch, dim, dim)).copy()
        if order >= 2:
            hess = np.zeros((n_batch, dim, dim, dim))
        cache = {"order": order, "x": arr, "stages": []}
        n_layers = len(self.widths) - 1
        for i, (w, b) in enumerate(self.layers()):
            stage = {"a_prev": a, "j_prev": jac, "h_prev": hess}
            z = a @ w.T + b
            jz = _apply_weight(w, jac) if order >= 1 else None
            hz = _apply_weight(w, hess) if order >= 2 else None
            if i == n_layers - 1:
                a, jac, hess = z, jz, hz
            else:
                t, d1, d2, d3 = act(z)
                stage.update(d1=d1, d2=d2, d3=d3, jz=jz, hz=hz)
                a = t
                if order >= 1:
                    jac = d1[:, :, None] * jz
                if order >= 2:
                    hess = (d1[:, :, None, None] * hz
                            + d2[:, :, None, None]
                            * jz[:, :, :, None] * jz[:, :, None, :])
            cache["stages"].append(stage)
        return a, jac, hess, cache

    def backprop(self, cache, value_bar=None, jac_bar=None, hess_bar=None):
        """Parameter gradient of sum_b [value_bar . value + jac_bar . J +
        hess_bar . H] given a cache from :meth:`value_and_partials`."""
        stages = cache["stages"]
        order = cache["order"]
        n_batch = cache["x"].shape[0]
        out_w = self.widths[-1]
        abar = value_bar
        if abar is None:
            abar = np.zeros((n_batch, out_w))
        jbar = jac_bar
        hbar = hess_bar
        grad = np.zeros_like(self.params)
        grads = self.layers(grad)
        layer_params = self.layers()
        n_layers = len(self.widths) - 1
        for i in range(n_layers - 1, -1, -1):
            w, _ = layer_params[i]
            gw, gb = grads[i]
            stage = stages[i]
            if i < n_layers - 1:
                d1, d2, d3 = stage["d1"], stage["d2"], stage["d3"]
                jz, hz = stage["jz"], stage["hz"]
                zbar = d1 * abar
                jzbar = None
                hzbar = None
                if order >= 1 and jbar is not None:
                    zbar = zbar + d2 * np.einsum("bui,bui->bu", jbar, jz)
                    jzbar = d1[:, :, None] * jbar
                if order >= 2 and hbar is not None:
                    zbar = zbar + d2 * np.einsum("buij,buij->bu", hbar, hz)
                    zbar = zbar + d3 * np.einsum(
                        "buij,bui,buj->bu", hbar, jz, jz)
                    hsym = hbar + np.swapaxes(hbar, -1, -2)
                    extra = d2[:, :, None] * np.einsum("buij,buj->bui", hsym, jz)
                    jzbar = extra if jzbar is None else jzbar + extra
                    hzbar = d1[:, :, None, None] * hbar
            else:
                zbar, jzbar, hzbar = abar, jbar, hbar
            a_prev, j_prev, h_prev = stage["a_prev"], stage["j_prev"], stage["h_prev"]
            gw += zbar.T @ a_prev
            gb += zbar.sum(axis=0)
            abar = zbar @ w
            if jzbar is not None:
                gw += np.einsum("bui,bvi->uv", jzbar, j_prev)
                jbar = np.einsum("bui,uv->bvi", jzbar, w)
            else:
                jbar = None
            if hzbar is not None:
                gw += np.einsum("buij,bvij->uv", hzbar, h_prev)
                hbar = np.einsum("buij,uv->bvij", hzbar, w)
            else:
                hbar = None
        return grad

    def grad_params(self, x, upstream):
        """Exact d(sum_b upstream_b . output_b)/d(theta)."""
        arr, single = self._as_batch(x)
        up = np.asarray(upstream, dtype=np.float64)
        if single:
            up = up[None, :] if up.ndim == 1 else up.reshape(1, -1)
        if up.ndim == 1:
            up = up[:, None]
        _, _, _, cache = self.value_and_partials(arr, order=0)
        return self.backprop(cache, value_bar=up)

    def input_partials(self, x):
        """Exact first and second partials of the outputs in the inputs.

        For a single input returns J (out, d) and H (out, d, d); batched
        inputs get a leading batch axis.
        """
        arr, single = self._as_batch(x)
        _, jac, hess, _ = self.value_and_partials(arr, order=2)
        if single:
            return jac[0], hess[0]
        return jac, hess


# -- scalar output transforms -------------------------------------------------

def softplus_vjh(value, jac=None, hess=None):
    """(value, J, H) of softplus applied to a scalar-output net.

    Works on squeezed arrays: value (B,), jac (B, d), hess (B, d, d).
    Also returns the sigmoid factor needed by :func:`softplus_reverse`.
    """
    sig = _sigmoid(value)
    out = np.logaddexp(0.0, value)
    out_j = sig[:, None] * jac if jac is not None else None
    out_h = None
    if hess is not None:
        dsig = sig * (1.0 - sig)
        out_h = (sig[:, None, None] * hess
                 + dsig[:, None, None] * jac[:, :, None] * jac[:, None, :])
    return out, out_j, out_h, sig


def softplus_reverse(sig, jac, hess, value_bar=None, jac_bar=None, hess_bar=None):
    """Map upstream adjoints of softplus(net) onto adjoints of the raw net.

    ``jac``/``hess`` are the raw net's input partials (needed whenever
    derivative adjoints are present).
    """
    dsig = sig * (1.0 - sig)
    vbar = np.zeros_like(sig)
    jbar = None
    hbar = None
    if value_bar is not None:
        vbar = vbar + sig * value_bar
    if jac_bar is not None:
        vbar = vbar + dsig * np.einsum("bi,bi->b", jac_bar, jac)
        jbar = sig[:, None] * jac_bar
    if hess_bar is not None:
        d2sig = dsig * (1.0 - 2.0 * sig)
        vbar = vbar + d2sig * np.einsum("bij,bi,bj->b", hess_bar, jac, jac)
        vbar = vbar + dsig * np.einsum("bij,bij->b", hess_bar, hess)
        sym = hess_bar + np.swapaxes(hess_bar, -1, -2)
        extra = dsig[:, None] * np.einsum("bij,bj->bi", sym, jac)
        jbar = extra if jbar is None else jbar + extra
        hbar = sig[:, None, None] * hess_bar
    return vbar, jbar, hbar


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- optimizers ---------------------------------------------------------------

def _check_grad(grad):
    if not np.all(np.isfinite(grad)):
        finite = grad[np.isfinite(grad)]
        norm = float(np.linalg.norm(finite)) if finite.size else float("nan")
        raise DivergenceError(
            f"non-finite gradient ({np.size(grad) - finite.size} bad entries, "
            f"finite-part norm {norm:.3e})")


class Sgd:
    """Plain gradient step theta - beta_k * g with a per-step rate."""

    def __init__(self, learning_rate):
        self.learning_rate = learning_rate
        self.k = 0

    def _rate(self):
        lr = self.learning_rate
        return float(lr(self.k)) if callable(lr) else float(lr)

    def step(self, params, grad):
        _check_grad(grad)
        out = params - self._rate() * grad
        self.k += 1
        return out


class Adam:
    """Adam with the usual (0.9, 0.999, 1e-8) moment defaults."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.k = 0
        self.m = None
        self.v = None

    def step(self, params, grad):
        _check_grad(grad)
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        lr = self.learning_rate
        rate = float(lr(self.k)) if callable(lr) else float(lr)
        self.k += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.k)
        vhat = self.v / (1.0 - self.beta2 ** self.k)
        return params - rate * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(kind, learning_rate):
    if kind == "sgd":
        return Sgd(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ConfigError(f"unknown optimizer kind {kind!r}")
