"""Conditional generative models over image features given sketch features.

Two models share one interface: a conditional VAE (Gaussian encoder with
reparameterized sampling, KL against the standard normal prior) and a
conditional adversarial autoencoder (deterministic encoder whose latent
distribution is matched to the prior by a discriminator).  Both carry a
sketch-reconstructibility regularizer: a single linear map must recover the
sketch features from the generated image features, weighted by
``lambda_recons``.

All losses expose exact analytic gradients; the test suite holds them to
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import PairedDataset
from .errors import ConfigurationError, DimensionError, DivergenceError
from .linalg import make_rng
from .nn import (
    AdamState,
    Mlp,
    adam_init,
    adam_step,
    iter_minibatches,
    mlp_backprop,
    mlp_forward,
    mlp_grads_list,
    mlp_init,
    mlp_params,
    mlp_set_params,
)

LOGVAR_CLAMP = 10.0
DISC_OUTPUT_CLAMP = 1e-7


@dataclass
class GenerativeConfig:
    """Architecture hyperparameters shared by the CVAE and CAAE."""

    d_img: int
    d_sketch: int
    d_latent: int = 64
    hidden_width: int | None = None  # default max(256, 2 * d_latent)
    n_hidden: int = 2
    disc_hidden_width: int = 64
    lambda_recons: float = 0.1
    hidden_activation: str = "relu"

    def __post_init__(self):
        if min(self.d_img, self.d_sketch, self.d_latent) < 1:
            raise ConfigurationError("model dimensions must be >= 1")
        if self.lambda_recons < 0:
            raise ConfigurationError("lambda_recons must be >= 0")

    @property
    def width(self) -> int:
        return self.hidden_width if self.hidden_width else max(256, 2 * self.d_latent)


@dataclass
class TrainConfig:
    """Optimization settings; the seed is mandatory and governs everything
    random (init, shuffles, latent draws)."""

    seed: int
    epochs: int = 25
    iterations: int = 6000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    disc_iters_per_gen: int = 32
    nonsaturating: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.disc_iters_per_gen < 1:
            raise ConfigurationError("disc_iters_per_gen must be >= 1")


@dataclass
class CvaeModel:
    encoder: Mlp  # (d_img + d_sketch) -> 2 * d_latent, as mu || logvar
    decoder: Mlp  # (d_latent + d_sketch) -> d_img
    regressor: Mlp  # one linear layer, d_img -> d_sketch
    lambda_recons: float
    d_latent: int

    @property
    def d_img(self) -> int:
        return self.decoder.d_out

    @property
    def d_sketch(self) -> int:
        return self.regressor.d_out


@dataclass
class CaaeModel:
    encoder: Mlp  # (d_img + d_sketch) -> d_latent, deterministic
    decoder: Mlp  # (d_latent + d_sketch) -> d_img
    discriminator: Mlp  # d_latent -> 1, sigmoid output
    regressor: Mlp
    lambda_recons: float
    d_latent: int

    @property
    def d_img(self) -> int:
        return self.decoder.d_out

    @property
    def d_sketch(self) -> int:
        return self.regressor.d_out


def init_cvae(cfg: GenerativeConfig, rng: np.random.Generator) -> CvaeModel:
    w = cfg.width
    hidden = [w] * cfg.n_hidden
    act = cfg.hidden_activation
    encoder = mlp_init([cfg.d_img + cfg.d_sketch, *hidden, 2 * cfg.d_latent], rng, act)
    decoder = mlp_init([cfg.d_latent + cfg.d_sketch, *hidden, cfg.d_img], rng, act)
    regressor = mlp_init([cfg.d_img, cfg.d_sketch], rng)
    return CvaeModel(encoder, decoder, regressor, cfg.lambda_recons, cfg.d_latent)


def init_caae(cfg: GenerativeConfig, rng: np.random.Generator) -> CaaeModel:
    w = cfg.width
    hidden = [w] * cfg.n_hidden
    act = cfg.hidden_activation
    encoder = mlp_init([cfg.d_img + cfg.d_sketch, *hidden, cfg.d_latent], rng, act)
    decoder = mlp_init([cfg.d_latent + cfg.d_sketch, *hidden, cfg.d_img], rng, act)
    disc_dims = [cfg.d_latent, cfg.disc_hidden_width, cfg.disc_hidden_width, 1]
    discriminator = mlp_init(disc_dims, rng, act, output_activation="sigmoid")
    regressor = mlp_init([cfg.d_img, cfg.d_sketch], rng)
    return CaaeModel(
        encoder, decoder, discriminator, regressor, cfg.lambda_recons, cfg.d_latent
    )


def _check_batch(sketch: np.ndarray, image: np.ndarray, d_sketch: int, d_img: int):
    if sketch.ndim != 2 or image.ndim != 2 or sketch.shape[0] != image.shape[0]:
        raise DimensionError("batch must be two row-aligned matrices")
    if sketch.shape[0] == 0:
        raise DimensionError("batch must be nonempty")
    if sketch.shape[1] != d_sketch or image.shape[1] != d_img:
        raise DimensionError(
            f"batch dims ({sketch.shape[1]}, {image.shape[1]}) do not match "
            f"model dims ({d_sketch}, {d_img})"
        )


@dataclass
class CvaeLossParts:
    total: float
    kl: float
    recon: float
    sketch_recon: float


def _sketch_recon_path(
    regressor: Mlp, x_hat: np.ndarray, sketch: np.ndarray, lam: float, b: int
) -> tuple[float, list[np.ndarray], np.ndarray]:
    """Regularizer value plus d(lam * value)/d(params, x_hat)."""
    residual = mlp_forward(regressor, x_hat) - sketch
    value = float((residual**2).sum() / b)
    grads, d_xhat = mlp_backprop(regressor, x_hat, (2.0 * lam / b) * residual)
    return value, mlp_grads_list(grads), d_xhat


def cvae_loss_and_grads(
    model: CvaeModel, batch: tuple[np.ndarray, np.ndarray], rng: np.random.Generator
) -> tuple[CvaeLossParts, dict[str, list[np.ndarray]]]:
    """Loss components and exact gradients for one reparameterized sample.

    total = mean KL(q(z|x_img, x_sketch) || N(0, I))
          + mean ||x_hat - x_img||^2
          + lambda * mean ||regressor(x_hat) - x_sketch||^2
    """
    sketch = np.asarray(batch[0], dtype=np.float64)
    image = np.asarray(batch[1], dtype=np.float64)
    _check_batch(sketch, image, model.d_sketch, model.d_img)
    b = sketch.shape[0]
    L = model.d_latent
    lam = model.lambda_recons

    enc_in = np.hstack([image, sketch])
    enc_out = mlp_forward(model.encoder, enc_in)
    mu = enc_out[:, :L]
    logvar_raw = enc_out[:, L:]
    logvar = np.clip(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    clamp_mask = (np.abs(logvar_raw) < LOGVAR_CLAMP).astype(np.float64)

    kl = float(0.5 * (mu * mu + np.exp(logvar) - 1.0 - logvar).sum() / b)

    eps = rng.standard_normal((b, L))
    std = np.exp(0.5 * logvar)
    z = mu + std * eps

    dec_in = np.hstack([z, sketch])
    x_hat = mlp_forward(model.decoder, dec_in)
    recon = float(((x_hat - image) ** 2).sum() / b)

    sketch_recon, reg_grads, d_xhat_reg = _sketch_recon_path(
        model.regressor, x_hat, sketch, lam, b
    )
    total = kl + recon + lam * sketch_recon

    d_xhat = (2.0 / b) * (x_hat - image) + d_xhat_reg
    dec_grads, d_dec_in = mlp_backprop(model.decoder, dec_in, d_xhat)
    dz = d_dec_in[:, :L]

    d_mu = dz + mu / b
    d_logvar = (dz * (0.5 * std * eps) + 0.5 * (np.exp(logvar) - 1.0) / b) * clamp_mask
    enc_grads, _ = mlp_backprop(model.encoder, enc_in, np.hstack([d_mu, d_logvar]))

    grads = {
        "encoder": mlp_grads_list(enc_grads),
        "decoder": mlp_grads_list(dec_grads),
        "regressor": reg_grads,
    }
    return CvaeLossParts(total, kl, recon, sketch_recon), grads


def cvae_loss(
    model: CvaeModel, batch: tuple[np.ndarray, np.ndarray], rng: np.random.Generator
) -> CvaeLossParts:
    parts, _ = cvae_loss_and_grads(model, batch, rng)
    return parts


def _generate(decoder: Mlp, d_latent: int, sketch, n: int, rng) -> np.ndarray:
    sketch = np.asarray(sketch, dtype=np.float64).ravel()
    if n < 1:
        raise DimensionError("n must be >= 1")
    z = rng.standard_normal((n, d_latent))
    # decode one row at a time: BLAS kernels differ by batch shape, and the
    # first rows must be bit-identical whatever n is (stream prefix rule)
    rows = [
        mlp_forward(decoder, np.hstack([z[i], sketch])[None, :])[0] for i in range(n)
    ]
    return np.vstack(rows)


def cvae_generate(model: CvaeModel, sketch, n: int, rng: np.random.Generator) -> np.ndarray:
    """n image-feature samples for one sketch; rows decode z ~ N(0, I)."""
    return _generate(model.decoder, model.d_latent, sketch, n, rng)


def caae_generate(model: CaaeModel, sketch, n: int, rng: np.random.Generator) -> np.ndarray:
    """Identical contract to ``cvae_generate`` on the adversarial decoder."""
    return _generate(model.decoder, model.d_latent, sketch, n, rng)


@dataclass
class CaaeLossParts:
    enc_dec_loss: float
    disc_loss: float
    recon: float
    sketch_recon: float
    disc_accuracy: float


def caae_losses_and_grads(
    model: CaaeModel,
    batch: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    nonsaturating: bool = False,
) -> tuple[CaaeLossParts, dict[str, list[np.ndarray]], dict[str, list[np.ndarray]]]:
    """Both adversarial-autoencoder losses with gradients for every network.

    enc_dec_loss = mean ||x_hat - x_img||^2
                 + mean log(1 - D(E(x_img || x_sketch)))   (saturating form)
                 + lambda * mean ||regressor(x_hat) - x_sketch||^2
    disc_loss    = -[ mean log D(z_prior) + mean log(1 - D(E(...))) ]

    Discriminator outputs are clamped away from {0, 1} before the logs.
    Returns (parts, grads of enc_dec_loss, grads of disc_loss), each grads
    dict keyed by network name so finite-difference checks can cover every
    parameter of both losses.
    """
    sketch = np.asarray(batch[0], dtype=np.float64)
    image = np.asarray(batch[1], dtype=np.float64)
    _check_batch(sketch, image, model.d_sketch, model.d_img)
    b = sketch.shape[0]
    L = model.d_latent
    lam = model.lambda_recons
    lo, hi = DISC_OUTPUT_CLAMP, 1.0 - DISC_OUTPUT_CLAMP

    enc_in = np.hstack([image, sketch])
    z_enc = mlp_forward(model.encoder, enc_in)
    dec_in = np.hstack([z_enc, sketch])
    x_hat = mlp_forward(model.decoder, dec_in)
    recon = float(((x_hat - image) ** 2).sum() / b)

    d_enc_raw = mlp_forward(model.discriminator, z_enc)
    d_enc = np.clip(d_enc_raw, lo, hi)
    mask_enc = ((d_enc_raw > lo) & (d_enc_raw < hi)).astype(np.float64)

    z_prior = rng.standard_normal((b, L))
    d_prior_raw = mlp_forward(model.discriminator, z_prior)
    d_prior = np.clip(d_prior_raw, lo, hi)
    mask_prior = ((d_prior_raw > lo) & (d_prior_raw < hi)).astype(np.float64)

    if nonsaturating:
        adv_g = float(-np.log(d_enc).sum() / b)
        d_adv_wrt_denc = (-1.0 / d_enc) / b * mask_enc
    else:
        adv_g = float(np.log1p(-d_enc).sum() / b)
        d_adv_wrt_denc = (-1.0 / (1.0 - d_enc)) / b * mask_enc

    sketch_recon, reg_grads, d_xhat_reg = _sketch_recon_path(
        model.regressor, x_hat, sketch, lam, b
    )
    enc_dec_loss = recon + adv_g + lam * sketch_recon
    disc_loss = float(-(np.log(d_prior).sum() + np.log1p(-d_enc).sum()) / b)
    disc_accuracy = float(
        0.5 * (np.mean(d_prior_raw > 0.5) + np.mean(d_enc_raw <= 0.5))
    )

    # ---- gradients of enc_dec_loss
    d_xhat = (2.0 / b) * (x_hat - image) + d_xhat_reg
    dec_grads, d_dec_in = mlp_backprop(model.decoder, dec_in, d_xhat)
    dz_recon = d_dec_in[:, :L]
    disc_grads_g, dz_adv = mlp_backprop(model.discriminator, z_enc, d_adv_wrt_denc)
    enc_grads_g, _ = mlp_backprop(model.encoder, enc_in, dz_recon + dz_adv)
    grads_enc_dec = {
        "encoder": mlp_grads_list(enc_grads_g),
        "decoder": mlp_grads_list(dec_grads),
        "regressor": reg_grads,
        "discriminator": mlp_grads_list(disc_grads_g),
    }

    # ---- gradients of disc_loss
    up_prior = (-1.0 / d_prior) / b * mask_prior
    up_enc = (1.0 / (1.0 - d_enc)) / b * mask_enc
    disc_grads_a, _ = mlp_backprop(model.discriminator, z_prior, up_prior)
    disc_grads_b, dz_disc = mlp_backprop(model.discriminator, z_enc, up_enc)
    enc_grads_d, _ = mlp_backprop(model.encoder, enc_in, dz_disc)
    grads_disc = {
        "encoder": mlp_grads_list(enc_grads_d),
        "decoder": [np.zeros_like(p) for p in mlp_params(model.decoder)],
        "regressor": [np.zeros_like(p) for p in mlp_params(model.regressor)],
        "discriminator": [
            a + b_
            for a, b_ in zip(mlp_grads_list(disc_grads_a), mlp_grads_list(disc_grads_b))
        ],
    }

    parts = CaaeLossParts(enc_dec_loss, disc_loss, recon, sketch_recon, disc_accuracy)
    return parts, grads_enc_dec, grads_disc


def caae_losses(
    model: CaaeModel,
    batch: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    nonsaturating: bool = False,
) -> tuple[float, float]:
    parts, _, _ = caae_losses_and_grads(model, batch, rng, nonsaturating)
    return parts.enc_dec_loss, parts.disc_loss


# ---------------------------------------------------------------------------
# training loops


def _dataset_arrays(dataset: PairedDataset) -> tuple[np.ndarray, np.ndarray]:
    if dataset.n_rows == 0:
        raise ConfigurationError("training dataset is empty")
    return dataset.sketch_features, dataset.image_features


def train_cvae(
    dataset: PairedDataset,
    model_cfg: GenerativeConfig,
    train_cfg: TrainConfig,
    batch_callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[CvaeModel, list[dict]]:
    """Adam-train a CVAE; returns the model and a per-epoch loss trace.

    ``batch_callback`` receives the row indices of every minibatch (used by
    tests to audit that no held-out class leaks into training).
    """
    sketches, images = _dataset_arrays(dataset)
    rng = make_rng(train_cfg.seed)
    model = init_cvae(model_cfg, rng)
    params = (
        mlp_params(model.encoder) + mlp_params(model.decoder) + mlp_params(model.regressor)
    )
    state = adam_init(
        params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon
    )
    n_enc = len(mlp_params(model.encoder))
    n_dec = len(mlp_params(model.decoder))
    trace = []
    for epoch in range(train_cfg.epochs):
        sums = np.zeros(4)
        rows = 0
        for idx in iter_minibatches(dataset.n_rows, train_cfg.batch_size, rng):
            if batch_callback is not None:
                batch_callback(idx)
            parts, grads = cvae_loss_and_grads(
                model, (sketches[idx], images[idx]), rng
            )
            if not np.isfinite(parts.total):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            flat = grads["encoder"] + grads["decoder"] + grads["regressor"]
            params, state = adam_step(params, flat, state)
            mlp_set_params(model.encoder, params[:n_enc])
            mlp_set_params(model.decoder, params[n_enc : n_enc + n_dec])
            mlp_set_params(model.regressor, params[n_enc + n_dec :])
            sums += len(idx) * np.array(
                [parts.total, parts.kl, parts.recon, parts.sketch_recon]
            )
            rows += len(idx)
        trace.append(
            {
                "epoch": epoch,
                "total": sums[0] / rows,
                "kl": sums[1] / rows,
                "recon": sums[2] / rows,
                "sketch_recon": sums[3] / rows,
            }
        )
    return model, trace


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        yield from iter_minibatches(n, batch_size, rng)


def train_caae(
    dataset: PairedDataset,
    model_cfg: GenerativeConfig,
    train_cfg: TrainConfig,
    batch_callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[CaaeModel, list[dict]]:
    """Alternating adversarial training: ``disc_iters_per_gen`` discriminator
    steps per encoder/decoder step, for ``iterations`` generator steps."""
    sketches, images = _dataset_arrays(dataset)
    rng = make_rng(train_cfg.seed)
    model = init_caae(model_cfg, rng)

    gen_params = (
        mlp_params(model.encoder) + mlp_params(model.decoder) + mlp_params(model.regressor)
    )
    disc_params = mlp_params(model.discriminator)
    gen_state = adam_init(
        gen_params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon
    )
    disc_state = adam_init(
        disc_params, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon
    )
    n_enc = len(mlp_params(model.encoder))
    n_dec = len(mlp_params(model.decoder))
    batches = _batch_stream(dataset.n_rows, train_cfg.batch_size, rng)
    trace = []
    for it in range(train_cfg.iterations):
        for _ in range(train_cfg.disc_iters_per_gen):
            idx = next(batches)
            if batch_callback is not None:
                batch_callback(idx)
            parts, _, grads_disc = caae_losses_and_grads(
                model, (sketches[idx], images[idx]), rng, train_cfg.nonsaturating
            )
            if not np.isfinite(parts.disc_loss):
                raise DivergenceError(f"non-finite discriminator loss at iteration {it}")
            disc_params, disc_state = adam_step(
                disc_params, grads_disc["discriminator"], disc_state
            )
            mlp_set_params(model.discriminator, disc_params)
        idx = next(batches)
        if batch_callback is not None:
            batch_callback(idx)
        parts, grads_g, _ = caae_losses_and_grads(
            model, (sketches[idx], images[idx]), rng, train_cfg.nonsaturating
        )
        if not np.isfinite(parts.enc_dec_loss):
            raise DivergenceError(f"non-finite encoder/decoder loss at iteration {it}")
        flat = grads_g["encoder"] + grads_g["decoder"] + grads_g["regressor"]
        gen_params, gen_state = adam_step(gen_params, flat, gen_state)
        mlp_set_params(model.encoder, gen_params[:n_enc])
        mlp_set_params(model.decoder, gen_params[n_enc : n_enc + n_dec])
        mlp_set_params(model.regressor, gen_params[n_enc + n_dec :])
        trace.append(
            {
                "iteration": it,
                "enc_dec_loss": parts.enc_dec_loss,
                "disc_loss": parts.disc_loss,
                "recon": parts.recon,
                "sketch_recon": parts.sketch_recon,
                "disc_accuracy": parts.disc_accuracy,
            }
        )
    return model, trace
