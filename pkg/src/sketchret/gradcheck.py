"""Self-contained verification harness: every trainable loss is checked
against central finite differences, and both closed-form fits are checked
for stationarity, on small fixed-seed instances.

Used by the ``gradcheck`` CLI command and by the test suite; ``corrupt``
deliberately breaks one named check so the harness itself can be tested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import (
    EmbeddingPair,
    embedding_loss_and_grads,
    eszsl_objective,
    fit_eszsl,
    fit_sae,
    sae_objective,
)
from .generative import (
    GenerativeConfig,
    caae_losses_and_grads,
    cvae_loss_and_grads,
    init_caae,
    init_cvae,
)
from .linalg import make_rng
from .nn import finite_difference_grads, max_relative_grad_error, mlp_init, mlp_params

GRAD_TOL = 1e-4
STATIONARITY_TOL = 1e-6

CHECK_NAMES = (
    "siamese-v1",
    "siamese-v2",
    "triplet",
    "cvae-bound",
    "sketch-reconstructibility",
    "caae-encoder-decoder",
    "caae-discriminator",
    "eszsl-stationarity",
    "sae-stationarity",
)


@dataclass
class CheckRow:
    name: str
    max_error: float
    tolerance: float
    passed: bool


def _corrupt_grads(grads: list[np.ndarray]) -> list[np.ndarray]:
    bad = [g.copy() for g in grads]
    bad[0].flat[0] += 1.0
    return bad


def _embedding_check(name: str, loss_kind: str, seed: int, corrupt: str | None) -> CheckRow:
    rng = make_rng(seed)
    sketch_net = mlp_init([4, 5, 5, 3], rng)
    image_net = mlp_init([6, 5, 5, 3], rng)
    pair = EmbeddingPair(sketch_net, image_net, 3, 1.0)
    s = rng.standard_normal((3, 4))
    xp = rng.standard_normal((3, 6))
    xn = rng.standard_normal((3, 6))
    _, grads = embedding_loss_and_grads(pair, s, xp, xn, loss_kind, 1.0)
    analytic = grads["sketch_net"] + grads["image_net"]
    if corrupt == name:
        analytic = _corrupt_grads(analytic)
    params = mlp_params(sketch_net) + mlp_params(image_net)

    def loss_fn():
        return embedding_loss_and_grads(pair, s, xp, xn, loss_kind, 1.0)[0]

    numeric = finite_difference_grads(loss_fn, params)
    err = max_relative_grad_error(analytic, numeric)
    return CheckRow(name, err, GRAD_TOL, err <= GRAD_TOL)


def _cvae_check(name: str, lambda_recons: float, seed: int, corrupt: str | None) -> CheckRow:
    cfg = GenerativeConfig(
        d_img=6, d_sketch=4, d_latent=3, hidden_width=6, lambda_recons=lambda_recons
    )
    rng = make_rng(seed)
    model = init_cvae(cfg, rng)
    s = rng.standard_normal((3, 4))
    x = rng.standard_normal((3, 6))
    noise_seed = seed + 1

    _, grads = cvae_loss_and_grads(model, (s, x), make_rng(noise_seed))
    analytic = grads["encoder"] + grads["decoder"] + grads["regressor"]
    if corrupt == name:
        analytic = _corrupt_grads(analytic)
    params = (
        mlp_params(model.encoder) + mlp_params(model.decoder) + mlp_params(model.regressor)
    )

    def loss_fn():
        return cvae_loss_and_grads(model, (s, x), make_rng(noise_seed))[0].total

    numeric = finite_difference_grads(loss_fn, params)
    err = max_relative_grad_error(analytic, numeric)
    return CheckRow(name, err, GRAD_TOL, err <= GRAD_TOL)


def _caae_check(name: str, which: str, seed: int, corrupt: str | None) -> CheckRow:
    cfg = GenerativeConfig(
        d_img=6, d_sketch=4, d_latent=3, hidden_width=6, disc_hidden_width=5,
        lambda_recons=0.5,
    )
    rng = make_rng(seed)
    model = init_caae(cfg, rng)
    s = rng.standard_normal((3, 4))
    x = rng.standard_normal((3, 6))
    noise_seed = seed + 2

    _, g_gen, g_disc = caae_losses_and_grads(model, (s, x), make_rng(noise_seed))
    picked = g_gen if which == "enc_dec" else g_disc
    analytic = (
        picked["encoder"] + picked["decoder"] + picked["regressor"] + picked["discriminator"]
    )
    if corrupt == name:
        analytic = _corrupt_grads(analytic)
    params = (
        mlp_params(model.encoder)
        + mlp_params(model.decoder)
        + mlp_params(model.regressor)
        + mlp_params(model.discriminator)
    )

    def loss_fn():
        parts, _, _ = caae_losses_and_grads(model, (s, x), make_rng(noise_seed))
        return parts.enc_dec_loss if which == "enc_dec" else parts.disc_loss

    numeric = finite_difference_grads(loss_fn, params)
    err = max_relative_grad_error(analytic, numeric)
    return CheckRow(name, err, GRAD_TOL, err <= GRAD_TOL)


def _stationarity_check(name: str, method: str, seed: int, corrupt: str | None) -> CheckRow:
    rng = make_rng(seed)
    x_s = rng.standard_normal((30, 5))
    x_i = rng.standard_normal((30, 4))
    if method == "eszsl":
        fitted = fit_eszsl(x_s, x_i, gamma=0.5, lam=0.3)

        def objective(w):
            return eszsl_objective(w, x_s, x_i, 0.5, 0.3)

    else:
        fitted = fit_sae(x_s, x_i, lam=0.4)

        def objective(w):
            return sae_objective(w, x_s, x_i, 0.4)

    w = fitted.w.copy()
    if corrupt == name:
        w += 0.05
    grad_at_w = finite_difference_grads(lambda: objective(w), [w])[0]
    w0 = np.zeros_like(w)
    grad_at_zero = finite_difference_grads(lambda: objective(w0), [w0])[0]
    rel = float(np.linalg.norm(grad_at_w) / max(np.linalg.norm(grad_at_zero), 1e-12))
    return CheckRow(name, rel, STATIONARITY_TOL, rel <= STATIONARITY_TOL)


def run_gradcheck(seed: int = 0, corrupt: str | None = None) -> list[CheckRow]:
    """Run every analytic-vs-numeric check; one row per loss or fit."""
    return [
        _embedding_check("siamese-v1", "siamese1", seed, corrupt),
        _embedding_check("siamese-v2", "siamese2", seed, corrupt),
        _embedding_check("triplet", "triplet_coarse", seed, corrupt),
        _cvae_check("cvae-bound", 0.0, seed, corrupt),
        _cvae_check("sketch-reconstructibility", 0.7, seed, corrupt),
        _caae_check("caae-encoder-decoder", "enc_dec", seed, corrupt),
        _caae_check("caae-discriminator", "disc", seed, corrupt),
        _stationarity_check("eszsl-stationarity", "eszsl", seed, corrupt),
        _stationarity_check("sae-stationarity", "sae", seed, corrupt),
    ]
