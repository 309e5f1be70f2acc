"""Minimal feed-forward network machinery: MLPs with analytic gradients,
the Adam optimizer, and the diagonal-Gaussian KL divergence.

Everything is plain numpy.  Networks are lists of (weight, bias) pairs; a
forward pass is affine + activation per layer with the output layer using
its own activation.  Gradients are exact backpropagation through that
fixed topology, matched against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("linear", "sigmoid")


@dataclass
class Mlp:
    """Multi-layer perceptron with explicit parameters.

    weights[i] has shape (layer_dims[i], layer_dims[i+1]); biases[i] has
    shape (layer_dims[i+1],).
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]


@dataclass
class MlpGrads:
    """Per-parameter gradients mirroring an Mlp's weights and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


def mlp_init(
    layer_dims: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "linear",
) -> Mlp:
    """Fresh MLP with He-style scaling for relu (variance 2/fan_in) or
    Xavier scaling for tanh (variance 1/fan_in); biases start at zero."""
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigurationError(f"need >= 2 positive layer dims, got {layer_dims}")
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ConfigurationError(f"unknown hidden activation {hidden_activation!r}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigurationError(f"unknown output activation {output_activation!r}")
    gain = 2.0 if hidden_activation == "relu" else 1.0
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        std = np.sqrt(gain / fan_in)
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return Mlp(list(layer_dims), weights, biases, hidden_activation, output_activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z  # linear


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _layer_kinds(m: Mlp) -> list[str]:
    n_layers = len(m.weights)
    return [m.hidden_activation] * (n_layers - 1) + [m.output_activation]


def _forward_cached(m: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    cache = []
    a = x
    for w, b, kind in zip(m.weights, m.biases, _layer_kinds(m)):
        z = a @ w + b
        a_next = _activate(z, kind)
        cache.append((a, z, a_next, kind))
        a = a_next
    return a, cache


def mlp_forward(m: Mlp, x) -> np.ndarray:
    """Batch forward pass; x has shape (batch, layer_dims[0])."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.d_in:
        raise DimensionError(f"input must be (batch, {m.d_in}), got {x.shape}")
    out, _ = _forward_cached(m, x)
    return out


def mlp_backprop(m: Mlp, x, upstream_grad) -> tuple[MlpGrads, np.ndarray]:
    """Exact gradients of the forward map.

    ``upstream_grad`` is dLoss/dOutput with the output's shape; returns the
    parameter gradients and dLoss/dInput.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    out, cache = _forward_cached(m, x)
    if upstream.shape != out.shape:
        raise DimensionError(
            f"upstream gradient shape {upstream.shape} != output shape {out.shape}"
        )
    d_weights = [None] * len(m.weights)
    d_biases = [None] * len(m.biases)
    g = upstream
    for i in range(len(m.weights) - 1, -1, -1):
        a_in, z, a_out, kind = cache[i]
        gz = g * _activate_grad(z, a_out, kind)
        d_weights[i] = a_in.T @ gz
        d_biases[i] = gz.sum(axis=0)
        g = gz @ m.weights[i].T
    return MlpGrads(d_weights, d_biases), g


def mlp_params(m: Mlp) -> list[np.ndarray]:
    """Flat parameter list (weights then biases, layer by layer)."""
    out = []
    for w, b in zip(m.weights, m.biases):
        out.append(w)
        out.append(b)
    return out


def mlp_grads_list(g: MlpGrads) -> list[np.ndarray]:
    """Gradient list aligned with ``mlp_params`` ordering."""
    out = []
    for dw, db in zip(g.weights, g.biases):
        out.append(dw)
        out.append(db)
    return out


def mlp_set_params(m: Mlp, params: list[np.ndarray]) -> None:
    """Write a parameter list (in ``mlp_params`` order) back into the net."""
    if len(params) != 2 * len(m.weights):
        raise DimensionError("parameter list length mismatch")
    for i in range(len(m.weights)):
        m.weights[i] = params[2 * i]
        m.biases[i] = params[2 * i + 1]


def zero_grads_like(params: list[np.ndarray]) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def add_grads(acc: list[np.ndarray], extra: list[np.ndarray]) -> list[np.ndarray]:
    return [a + e for a, e in zip(acc, extra)]


def scale_grads(grads: list[np.ndarray], s: float) -> list[np.ndarray]:
    return [g * s for g in grads]


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; step counts completed updates."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_init(
    params: list[np.ndarray],
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step=0,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {p.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m_t = b1 * m + (1.0 - b1) * g
        v_t = b2 * v + (1.0 - b2) * g * g
        m_hat = m_t / (1.0 - b1**t)
        v_hat = v_t / (1.0 - b2**t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m_t)
        new_v.append(v_t)
    new_state = AdamState(
        lr=state.lr,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
        step=t,
        first_moment=new_m,
        second_moment=new_v,
    )
    return new_p, new_state


def gaussian_kl(mu, logvar) -> float:
    """KL divergence of N(mu, diag(exp(logvar))) from the standard normal.

    Equals 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar), elementwise over the
    vector; always >= 0 with equality iff mu = 0 and logvar = 0.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    logvar = np.asarray(logvar, dtype=np.float64).ravel()
    if mu.shape != logvar.shape:
        raise DimensionError("mu and logvar must have the same length")
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


def iter_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays for one epoch: fresh shuffle, last partial batch kept."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def finite_difference_grads(loss_fn, params: list[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of ``loss_fn()`` wrt every coordinate.

    ``loss_fn`` must read the arrays in ``params`` by reference; entries are
    perturbed in place and restored.  Independent of backprop by
    construction.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            up = loss_fn()
            flat_p[j] = orig - h
            down = loss_fn()
            flat_p[j] = orig
            flat_g[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_grad_error(
    analytic: list[np.ndarray], numeric: list[np.ndarray], floor: float = 1.0
) -> float:
    """Worst per-coordinate |a - n| / max(floor, |a|, |n|) across all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst
