"""Comparison methods: direct regression, ESZSL and SAE closed forms,
siamese and triplet embedding networks, and the DSH loss as a diagnostic.

The two regularized closed forms are solved through the shared Sylvester
solver; their stationarity conditions are re-verified by finite-difference
oracles in the tests rather than trusted as derivations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .data import PairedDataset
from .errors import (
    CardinalityError,
    ConfigurationError,
    ConstraintError,
    DegenerateInputError,
    DimensionError,
    DivergenceError,
    SingularityError,
)
from .linalg import make_rng, solve_sylvester
from .nn import (
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

LOSS_KINDS = ("siamese1", "siamese2", "triplet_coarse", "triplet_fine")
NEGATIVE_STRATEGIES = ("coarse", "fine")

# modified-siamese constants: alpha = 2/Q, beta = 2Q, gamma = -2.77/Q
SIAMESE2_EXP_COEFF = 2.77


@dataclass
class LinearMap:
    """Sketch-to-image linear map plus how it was fitted."""

    w: np.ndarray  # (d_sketch, d_img)
    fit_meta: dict = field(default_factory=dict)

    def predict(self, sketches) -> np.ndarray:
        s = np.asarray(sketches, dtype=np.float64)
        if s.ndim == 1:
            return s @ self.w
        return s @ self.w


@dataclass
class EmbeddingPair:
    """Two-branch embedding networks mapping both modalities into a common
    space; ``margin_or_q`` is the margin (siamese-1, triplet) or the
    current distance upper bound Q (siamese-2)."""

    sketch_net: Mlp
    image_net: Mlp
    embed_dim: int
    margin_or_q: float

    def embed_sketches(self, sketches) -> np.ndarray:
        return mlp_forward(self.sketch_net, np.atleast_2d(np.asarray(sketches, float)))

    def embed_images(self, images) -> np.ndarray:
        return mlp_forward(self.image_net, np.atleast_2d(np.asarray(images, float)))


def _check_paired_rows(x_s: np.ndarray, x_i: np.ndarray):
    if x_s.ndim != 2 or x_i.ndim != 2:
        raise DimensionError("feature matrices must be 2-d")
    if x_s.shape[0] != x_i.shape[0]:
        raise DimensionError(
            f"row counts differ: {x_s.shape[0]} sketches vs {x_i.shape[0]} images"
        )


# ---------------------------------------------------------------------------
# closed-form fits


def fit_direct_regression(x_s, x_i, ridge: float = 0.0) -> LinearMap:
    """Ridge regression from sketch features to image features via the
    normal equations (X_s'X_s + ridge I) W = X_s'X_i."""
    x_s = np.asarray(x_s, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    _check_paired_rows(x_s, x_i)
    if ridge < 0:
        raise ConfigurationError("ridge must be >= 0")
    gram = x_s.T @ x_s + ridge * np.eye(x_s.shape[1])
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= 1e-12 * max(1.0, eigvals[-1]):
        raise SingularityError(
            "normal matrix is singular; pass a positive ridge to regularize"
        )
    w = np.linalg.solve(gram, x_s.T @ x_i)
    residual = float(((x_s @ w - x_i) ** 2).sum() + ridge * (w**2).sum())
    return LinearMap(w, {"method": "regression", "ridge": ridge, "loss": residual})


def eszsl_objective(w, x_s, x_i, gamma: float, lam: float) -> float:
    """Regularized bilinear objective; beta is tied to gamma * lam so the
    minimizer has a closed form."""
    beta = gamma * lam
    w = np.asarray(w, dtype=np.float64)
    return float(
        ((x_s @ w - x_i) ** 2).sum()
        + gamma * ((x_i @ w.T) ** 2).sum()
        + lam * ((x_s @ w) ** 2).sum()
        + beta * (w**2).sum()
    )


def fit_eszsl(x_s, x_i, gamma: float, lam: float) -> LinearMap:
    """Minimize the ESZSL objective; stationarity reduces to the Sylvester
    equation (1+lam) X_s'X_s W + W (gamma X_i'X_i + beta I) = X_s'X_i."""
    x_s = np.asarray(x_s, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    _check_paired_rows(x_s, x_i)
    if gamma < 0 or lam < 0:
        raise ConfigurationError("gamma and lam must be >= 0")
    beta = gamma * lam
    a = (1.0 + lam) * (x_s.T @ x_s)
    b = gamma * (x_i.T @ x_i) + beta * np.eye(x_i.shape[1])
    c = x_s.T @ x_i
    w = solve_sylvester(a, b, c)
    return LinearMap(
        w,
        {
            "method": "eszsl",
            "gamma": gamma,
            "lam": lam,
            "beta": beta,
            "loss": eszsl_objective(w, x_s, x_i, gamma, lam),
        },
    )


def sae_objective(w, x_s, x_i, lam: float) -> float:
    """Autoencoding objective: forward projection error plus weighted
    back-projection error ||X_i W' - X_s||^2."""
    w = np.asarray(w, dtype=np.float64)
    return float(((x_i - x_s @ w) ** 2).sum() + lam * ((x_i @ w.T - x_s) ** 2).sum())


def fit_sae(x_s, x_i, lam: float) -> LinearMap:
    """Minimize the SAE objective via X_s'X_s W + lam W X_i'X_i = (1+lam) X_s'X_i."""
    x_s = np.asarray(x_s, dtype=np.float64)
    x_i = np.asarray(x_i, dtype=np.float64)
    _check_paired_rows(x_s, x_i)
    if lam < 0:
        raise ConfigurationError("lam must be >= 0")
    a = x_s.T @ x_s
    b = lam * (x_i.T @ x_i)
    c = (1.0 + lam) * (x_s.T @ x_i)
    w = solve_sylvester(a, b, c)
    return LinearMap(
        w,
        {"method": "sae", "lam": lam, "loss": sae_objective(w, x_s, x_i, lam)},
    )


# ---------------------------------------------------------------------------
# pointwise embedding losses


def siamese_loss_v1(dist: float, same_class: bool, margin: float) -> float:
    """Contrastive loss: 0.5 d^2 for same-class pairs, 0.5 max(0, m - d)^2
    for different-class pairs."""
    if dist < 0:
        raise DegenerateInputError("distance must be >= 0")
    if margin <= 0:
        raise DegenerateInputError("margin must be > 0")
    if same_class:
        return 0.5 * dist * dist
    gap = max(0.0, margin - dist)
    return 0.5 * gap * gap


def siamese_loss_v2(dist: float, same_class: bool, q: float) -> float:
    """Modified contrastive loss (2/Q) d^2 vs 2Q exp(-2.77 d / Q)."""
    if dist < 0:
        raise DegenerateInputError("distance must be >= 0")
    if q <= 0:
        raise DegenerateInputError("Q must be > 0")
    if same_class:
        return (2.0 / q) * dist * dist
    return 2.0 * q * math.exp(-SIAMESE2_EXP_COEFF * dist / q)


def triplet_loss(d_pos: float, d_neg: float, margin: float) -> float:
    """Max-margin ranking loss max(0, margin + d_pos - d_neg)."""
    return max(0.0, margin + d_pos - d_neg)


# ---------------------------------------------------------------------------
# triplet sampling


def _class_complements(labels: list[str]) -> dict[str, np.ndarray]:
    arr = np.array(labels)
    return {c: np.flatnonzero(arr != c) for c in sorted(set(labels))}


def sample_triplets(
    dataset: PairedDataset, strategy: str, rng: np.random.Generator
) -> Iterator[tuple[int, int, int]]:
    """Infinite stream of (anchor, positive, negative) row indices.

    The positive is always the anchor's directly paired image.  ``coarse``
    draws negatives uniformly from other-class images; ``fine`` draws them
    uniformly from every image except the anchor's own pair (same-class
    negatives allowed).
    """
    if strategy not in NEGATIVE_STRATEGIES:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    n = dataset.n_rows
    if strategy == "coarse":
        if len(dataset.classes()) < 2:
            raise CardinalityError("coarse negatives need >= 2 classes")
        pools = _class_complements(dataset.labels)
        labels = dataset.labels

        def draw():
            a = int(rng.integers(n))
            pool = pools[labels[a]]
            return a, a, int(pool[rng.integers(pool.size)])

    else:
        if n < 2:
            raise CardinalityError("fine negatives need >= 2 images")

        def draw():
            a = int(rng.integers(n))
            j = int(rng.integers(n - 1))
            return a, a, j + 1 if j >= a else j

    while True:
        yield draw()


# ---------------------------------------------------------------------------
# batch embedding loss with gradients


def _row_norms(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff**2).sum(axis=1))


def embedding_loss_and_grads(
    pair: EmbeddingPair,
    sketches: np.ndarray,
    pos_images: np.ndarray,
    neg_images: np.ndarray,
    loss_kind: str,
    margin_or_q: float,
) -> tuple[float, dict[str, list[np.ndarray]]]:
    """Mean batch loss over (anchor, positive, negative) rows with exact
    gradients for both branch networks.

    Siamese variants score the anchor/positive rows as same-class pairs and
    the anchor/negative rows as different-class pairs (Euclidean distance);
    triplet uses squared Euclidean distances inside the ranking hinge.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")
    e_s = mlp_forward(pair.sketch_net, sketches)
    e_p = mlp_forward(pair.image_net, pos_images)
    e_n = mlp_forward(pair.image_net, neg_images)
    b = e_s.shape[0]
    m = margin_or_q
    diff_p = e_s - e_p
    diff_n = e_s - e_n

    if loss_kind.startswith("triplet"):
        d2_p = (diff_p**2).sum(axis=1)
        d2_n = (diff_n**2).sum(axis=1)
        per_row = np.maximum(0.0, m + d2_p - d2_n)
        active = (per_row > 0.0).astype(np.float64)[:, None]
        loss = float(per_row.mean())
        g_p = active * (-2.0 * diff_p) / b
        g_n = active * (2.0 * diff_n) / b
        g_s = active * (2.0 * diff_p - 2.0 * diff_n) / b
    else:
        d_p = np.maximum(_row_norms(diff_p), 1e-12)
        d_n = np.maximum(_row_norms(diff_n), 1e-12)
        if loss_kind == "siamese1":
            if m <= 0:
                raise DegenerateInputError("margin must be > 0")
            pos_terms = 0.5 * d_p**2
            gap = np.maximum(0.0, m - d_n)
            neg_terms = 0.5 * gap**2
            dpos_dd = d_p
            dneg_dd = -gap
        else:  # siamese2
            if m <= 0:
                raise DegenerateInputError("Q must be > 0")
            pos_terms = (2.0 / m) * d_p**2
            neg_terms = 2.0 * m * np.exp(-SIAMESE2_EXP_COEFF * d_n / m)
            dpos_dd = (4.0 / m) * d_p
            dneg_dd = -SIAMESE2_EXP_COEFF * 2.0 * np.exp(-SIAMESE2_EXP_COEFF * d_n / m)
        loss = float((pos_terms.sum() + neg_terms.sum()) / (2 * b))
        scale = 1.0 / (2 * b)
        g_via_p = (scale * dpos_dd / d_p)[:, None] * diff_p
        g_via_n = (scale * dneg_dd / d_n)[:, None] * diff_n
        g_s = g_via_p + g_via_n
        g_p = -g_via_p
        g_n = -g_via_n

    sk_grads, _ = mlp_backprop(pair.sketch_net, sketches, g_s)
    im_grads_p, _ = mlp_backprop(pair.image_net, pos_images, g_p)
    im_grads_n, _ = mlp_backprop(pair.image_net, neg_images, g_n)
    image_grads = [
        gp + gn
        for gp, gn in zip(mlp_grads_list(im_grads_p), mlp_grads_list(im_grads_n))
    ]
    return loss, {"sketch_net": mlp_grads_list(sk_grads), "image_net": image_grads}


# ---------------------------------------------------------------------------
# embedding training


@dataclass
class EmbedConfig:
    """Two-branch training settings; ``epochs=None`` resolves to 20 for the
    siamese losses and 80 for the triplet losses."""

    seed: int
    embed_dim: int = 64
    hidden_width: int = 128
    n_hidden: int = 2
    margin: float = 1.0
    epochs: int | None = None
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8


def _same_class_pools(labels: list[str]) -> dict[str, np.ndarray]:
    arr = np.array(labels)
    return {c: np.flatnonzero(arr == c) for c in sorted(set(labels))}


def train_embedding(
    dataset: PairedDataset,
    loss_kind: str,
    config: EmbedConfig,
    batch_callback: Callable[[np.ndarray], None] | None = None,
) -> tuple[EmbeddingPair, list[dict]]:
    """Adam-train a two-branch embedding on the chosen loss.

    Siamese variants pair each anchor sketch with one uniform same-class
    image and one uniform different-class image per epoch; triplet variants
    use the paired image as positive and draw negatives per their strategy.
    For siamese-2 the scale Q is re-estimated before every epoch as the
    maximum distance over the aligned sketch/image pairs.
    """
    if loss_kind not in LOSS_KINDS:
        raise ConfigurationError(f"unknown loss kind {loss_kind!r}")
    if dataset.n_rows == 0:
        raise ConfigurationError("training dataset is empty")
    n = dataset.n_rows
    labels = dataset.labels
    needs_two_classes = loss_kind in ("siamese1", "siamese2", "triplet_coarse")
    if needs_two_classes and len(set(labels)) < 2:
        raise CardinalityError(f"{loss_kind} needs >= 2 classes")
    if loss_kind == "triplet_fine" and n < 2:
        raise CardinalityError("triplet_fine needs >= 2 images")

    rng = make_rng(config.seed)
    hidden = [config.hidden_width] * config.n_hidden
    sketch_net = mlp_init([dataset.d_sketch, *hidden, config.embed_dim], rng)
    image_net = mlp_init([dataset.d_img, *hidden, config.embed_dim], rng)
    pair = EmbeddingPair(sketch_net, image_net, config.embed_dim, config.margin)

    params = mlp_params(sketch_net) + mlp_params(image_net)
    state = adam_init(params, config.lr, config.beta1, config.beta2, config.epsilon)
    n_sk = len(mlp_params(sketch_net))

    siamese = loss_kind in ("siamese1", "siamese2")
    epochs = config.epochs
    if epochs is None:
        epochs = 20 if siamese else 80
    same_pools = _same_class_pools(labels) if siamese else None
    other_pools = (
        _class_complements(labels)
        if loss_kind in ("siamese1", "siamese2", "triplet_coarse")
        else None
    )

    def draw_pos(a: int) -> int:
        if siamese:
            pool = same_pools[labels[a]]
            return int(pool[rng.integers(pool.size)])
        return a

    def draw_neg(a: int) -> int:
        if other_pools is not None:
            pool = other_pools[labels[a]]
            return int(pool[rng.integers(pool.size)])
        j = int(rng.integers(n - 1))  # fine: anything but the anchor's pair
        return j + 1 if j >= a else j

    trace = []
    for epoch in range(epochs):
        if loss_kind == "siamese2":
            d = _row_norms(
                pair.embed_sketches(dataset.sketch_features)
                - pair.embed_images(dataset.image_features)
            )
            pair.margin_or_q = max(float(d.max()), 1e-9)
        loss_sum = 0.0
        rows = 0
        for idx in iter_minibatches(n, config.batch_size, rng):
            if batch_callback is not None:
                batch_callback(idx)
            pos = np.array([draw_pos(int(a)) for a in idx])
            neg = np.array([draw_neg(int(a)) for a in idx])
            kind_arg = loss_kind if not loss_kind.startswith("triplet") else loss_kind
            loss, grads = embedding_loss_and_grads(
                pair,
                dataset.sketch_features[idx],
                dataset.image_features[pos],
                dataset.image_features[neg],
                kind_arg,
                pair.margin_or_q,
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite embedding loss at epoch {epoch}")
            params, state = adam_step(
                params, grads["sketch_net"] + grads["image_net"], state
            )
            mlp_set_params(sketch_net, params[:n_sk])
            mlp_set_params(image_net, params[n_sk:])
            loss_sum += loss * len(idx)
            rows += len(idx)
        trace.append(
            {"epoch": epoch, "loss": loss_sum / rows, "q": pair.margin_or_q}
        )
    return pair, trace


# ---------------------------------------------------------------------------
# DSH loss diagnostic


@dataclass
class DshLossInputs:
    """Inputs to the hashing loss; codes are +-1 matrices of shape
    (code_bits, n_items) and ``sim_scale`` defaults to the code length."""

    b_i: np.ndarray
    b_s: np.ndarray
    w_sim: np.ndarray
    phi_i: np.ndarray
    phi_s: np.ndarray
    d_basis: np.ndarray
    f_i_out: np.ndarray
    f_s_out: np.ndarray
    lam: float = 0.01
    gamma: float = 1e-5
    sim_scale: float | None = None


def dsh_loss_eval(inputs: DshLossInputs) -> tuple[float, float, float, float]:
    """Evaluate the hashing objective: cross-view code-agreement term,
    semantic-factorization term and quantization term.

    Returns (total, cross_view, semantic, quantization) with
    total = cross_view + lam * semantic + gamma * quantization.
    """
    b_i = np.asarray(inputs.b_i, dtype=np.float64)
    b_s = np.asarray(inputs.b_s, dtype=np.float64)
    for name, codes in (("b_i", b_i), ("b_s", b_s)):
        if not np.isin(codes, (-1.0, 1.0)).all():
            raise ConstraintError(f"{name} entries must all be -1 or +1")
    if b_i.shape[0] != b_s.shape[0]:
        raise DimensionError("code matrices must share the code length")
    m_bits, n1 = b_i.shape
    n2 = b_s.shape[1]
    w_sim = np.asarray(inputs.w_sim, dtype=np.float64)
    phi_i = np.asarray(inputs.phi_i, dtype=np.float64)
    phi_s = np.asarray(inputs.phi_s, dtype=np.float64)
    d_basis = np.asarray(inputs.d_basis, dtype=np.float64)
    f_i = np.asarray(inputs.f_i_out, dtype=np.float64)
    f_s = np.asarray(inputs.f_s_out, dtype=np.float64)
    if w_sim.shape != (n1, n2):
        raise DimensionError(f"w_sim must be {n1}x{n2}")
    if f_i.shape != b_i.shape or f_s.shape != b_s.shape:
        raise DimensionError("network outputs must mirror the code shapes")
    if d_basis.shape[1] != m_bits or phi_i.shape != (d_basis.shape[0], n1) or phi_s.shape != (d_basis.shape[0], n2):
        raise DimensionError("semantic embedding shapes are inconsistent")

    scale = float(inputs.sim_scale) if inputs.sim_scale is not None else float(m_bits)
    cross_view = float(((w_sim * scale - b_i.T @ b_s) ** 2).sum())
    semantic = float(
        ((phi_i - d_basis @ b_i) ** 2).sum() + ((phi_s - d_basis @ b_s) ** 2).sum()
    )
    quantization = float(((f_i - b_i) ** 2).sum() + ((f_s - b_s) ** 2).sum())
    total = cross_view + inputs.lam * semantic + inputs.gamma * quantization
    return total, cross_view, semantic, quantization
