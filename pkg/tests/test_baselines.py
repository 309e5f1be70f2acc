import itertools
import math

import numpy as np
import pytest

from sketchret.baselines import (
    DshLossInputs,
    EmbedConfig,
    EmbeddingPair,
    LinearMap,
    dsh_loss_eval,
    embedding_loss_and_grads,
    eszsl_objective,
    fit_direct_regression,
    fit_eszsl,
    fit_sae,
    sae_objective,
    sample_triplets,
    siamese_loss_v1,
    siamese_loss_v2,
    train_embedding,
    triplet_loss,
)
from sketchret.checkpoints import load_checkpoint, save_checkpoint
from sketchret.data import PairedDataset
from sketchret.errors import (
    CardinalityError,
    ConstraintError,
    DegenerateInputError,
    SingularityError,
)
from sketchret.linalg import make_rng
from sketchret.nn import finite_difference_grads, mlp_init


def random_pair_data(seed=0, n=50, d_s=6, d_i=4):
    rng = make_rng(seed)
    return rng.standard_normal((n, d_s)), rng.standard_normal((n, d_i))


# ---------------------------------------------------------------------------
# direct regression


def test_regression_square_invertible_exact():
    rng = make_rng(1)
    x_s = rng.standard_normal((4, 4))
    x_i = rng.standard_normal((4, 3))
    fit = fit_direct_regression(x_s, x_i)
    assert np.allclose(x_s @ fit.w, x_i, atol=1e-9)
    assert np.allclose(fit.w, np.linalg.solve(x_s, x_i), atol=1e-9)


def test_regression_identity_target():
    rng = make_rng(2)
    x_s = rng.standard_normal((20, 5))
    fit = fit_direct_regression(x_s, x_s)
    assert np.allclose(fit.w, np.eye(5), atol=1e-9)


def test_regression_stationarity():
    x_s, x_i = random_pair_data(3)
    ridge = 0.1
    fit = fit_direct_regression(x_s, x_i, ridge=ridge)
    grad = 2 * (x_s.T @ (x_s @ fit.w - x_i) + ridge * fit.w)
    scale = np.linalg.norm(2 * x_s.T @ x_i)
    assert np.linalg.norm(grad) <= 1e-8 * scale


def test_regression_singular_suggests_ridge():
    x_s = np.zeros((5, 3))
    x_s[:, 0] = 1.0  # rank-one design
    with pytest.raises(SingularityError, match="ridge"):
        fit_direct_regression(x_s, np.ones((5, 2)))


# ---------------------------------------------------------------------------
# ESZSL


def test_eszsl_reduces_to_least_squares():
    rng = make_rng(4)
    x_s = rng.standard_normal((4, 4))
    x_i = rng.standard_normal((4, 3))
    fit = fit_eszsl(x_s, x_i, gamma=0.0, lam=0.0)
    assert np.allclose(fit.w, np.linalg.solve(x_s, x_i), atol=1e-8)


def test_eszsl_huge_penalty_shrinks_w():
    x_s, x_i = random_pair_data(5)
    fit = fit_eszsl(x_s, x_i, gamma=1e6, lam=1e6)
    assert np.linalg.norm(fit.w) < 1e-3


def test_eszsl_stationarity_and_local_optimality():
    x_s, x_i = random_pair_data(6)
    gamma, lam = 0.5, 0.3
    fit = fit_eszsl(x_s, x_i, gamma, lam)
    w = fit.w.copy()
    grad = finite_difference_grads(lambda: eszsl_objective(w, x_s, x_i, gamma, lam), [w])[0]
    w0 = np.zeros_like(w)
    grad0 = finite_difference_grads(lambda: eszsl_objective(w0, x_s, x_i, gamma, lam), [w0])[0]
    assert np.linalg.norm(grad) <= 1e-6 * np.linalg.norm(grad0)
    value = eszsl_objective(fit.w, x_s, x_i, gamma, lam)
    rng = make_rng(7)
    for _ in range(100):
        delta = rng.standard_normal(fit.w.shape)
        delta *= 1e-2 / np.linalg.norm(delta)
        assert value <= eszsl_objective(fit.w + delta, x_s, x_i, gamma, lam)


# ---------------------------------------------------------------------------
# SAE


def test_sae_lambda_zero_is_least_squares():
    x_s, x_i = random_pair_data(8)
    fit = fit_sae(x_s, x_i, lam=0.0)
    lsq = np.linalg.solve(x_s.T @ x_s, x_s.T @ x_i)
    assert np.allclose(fit.w, lsq, atol=1e-8)


def test_sae_identity_is_global_minimum():
    rng = make_rng(9)
    x_s = rng.standard_normal((30, 5))
    fit = fit_sae(x_s, x_s, lam=0.7)
    assert np.allclose(fit.w, np.eye(5), atol=1e-8)
    assert sae_objective(fit.w, x_s, x_s, 0.7) == pytest.approx(0.0, abs=1e-12)


def test_sae_stationarity_and_local_optimality():
    x_s, x_i = random_pair_data(10)
    lam = 0.4
    fit = fit_sae(x_s, x_i, lam)
    w = fit.w.copy()
    grad = finite_difference_grads(lambda: sae_objective(w, x_s, x_i, lam), [w])[0]
    w0 = np.zeros_like(w)
    grad0 = finite_difference_grads(lambda: sae_objective(w0, x_s, x_i, lam), [w0])[0]
    assert np.linalg.norm(grad) <= 1e-6 * np.linalg.norm(grad0)
    value = sae_objective(fit.w, x_s, x_i, lam)
    rng = make_rng(11)
    for _ in range(100):
        delta = rng.standard_normal(fit.w.shape)
        delta *= 1e-2 / np.linalg.norm(delta)
        assert value <= sae_objective(fit.w + delta, x_s, x_i, lam)


# ---------------------------------------------------------------------------
# pointwise losses


def test_siamese_v1_examples():
    assert siamese_loss_v1(0.0, True, 1.0) == 0.0
    assert siamese_loss_v1(1.5, False, 1.0) == 0.0  # beyond margin
    assert siamese_loss_v1(0.5, False, 1.0) == pytest.approx(0.125, abs=1e-15)
    with pytest.raises(DegenerateInputError):
        siamese_loss_v1(-0.1, True, 1.0)


def test_siamese_v2_examples():
    assert siamese_loss_v2(0.0, True, 2.0) == 0.0
    assert siamese_loss_v2(0.0, False, 2.0) == pytest.approx(4.0, abs=1e-15)
    # frozen from an independent high-precision evaluation of 2 * exp(-2.77)
    assert siamese_loss_v2(1.0, False, 1.0) == pytest.approx(
        0.1253240094843063, abs=1e-12
    )
    with pytest.raises(DegenerateInputError):
        siamese_loss_v2(0.5, True, 0.0)


def test_triplet_examples():
    assert triplet_loss(0.0, 2.0, 1.0) == 0.0
    assert triplet_loss(0.7, 0.7, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert triplet_loss(0.3, 0.5, 1.0) == pytest.approx(0.8, abs=1e-15)


def test_losses_continuous_at_hinge():
    eps = 1e-10
    # siamese-1 hinge at dist = margin
    left = siamese_loss_v1(1.0 - eps, False, 1.0)
    right = siamese_loss_v1(1.0 + eps, False, 1.0)
    assert abs(left - right) <= 1e-9
    # triplet hinge at d_neg - d_pos = margin
    left = triplet_loss(0.5, 1.5 - eps, 1.0)
    right = triplet_loss(0.5, 1.5 + eps, 1.0)
    assert abs(left - right) <= 1e-9


def test_losses_nonnegative():
    rng = make_rng(12)
    for _ in range(100):
        d = float(rng.uniform(0, 3))
        q = float(rng.uniform(0.1, 3))
        same = bool(rng.integers(2))
        assert siamese_loss_v1(d, same, 1.0) >= 0.0
        assert siamese_loss_v2(d, same, q) >= 0.0
        assert triplet_loss(d, float(rng.uniform(0, 3)), 1.0) >= 0.0


# ---------------------------------------------------------------------------
# triplet sampling


def two_image_per_class_dataset(n_classes=5, seed=13):
    rng = make_rng(seed)
    labels = [f"c{i}" for i in range(n_classes) for _ in range(2)]
    n = len(labels)
    return PairedDataset(
        rng.standard_normal((n, 3)), rng.standard_normal((n, 4)), labels
    )


def test_sample_triplets_coarse_never_same_class():
    dataset = two_image_per_class_dataset()
    stream = sample_triplets(dataset, "coarse", make_rng(14))
    for a, p, neg in itertools.islice(stream, 10_000):
        assert p == a
        assert dataset.labels[neg] != dataset.labels[a]


def test_sample_triplets_fine_excludes_pair_but_not_class():
    dataset = two_image_per_class_dataset()
    stream = sample_triplets(dataset, "fine", make_rng(15))
    same_class_negatives = 0
    for a, p, neg in itertools.islice(stream, 10_000):
        assert neg != a  # never the paired image
        if dataset.labels[neg] == dataset.labels[a]:
            same_class_negatives += 1
    assert same_class_negatives > 0


def test_sample_triplets_deterministic():
    dataset = two_image_per_class_dataset()
    a = list(itertools.islice(sample_triplets(dataset, "coarse", make_rng(16)), 100))
    b = list(itertools.islice(sample_triplets(dataset, "coarse", make_rng(16)), 100))
    assert a == b


def test_sample_triplets_cardinality():
    rng = make_rng(17)
    one_class = PairedDataset(
        rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), ["x", "x", "x"]
    )
    with pytest.raises(CardinalityError):
        next(sample_triplets(one_class, "coarse", make_rng(0)))
    single = PairedDataset(
        rng.standard_normal((1, 2)), rng.standard_normal((1, 2)), ["x"]
    )
    with pytest.raises(CardinalityError):
        next(sample_triplets(single, "fine", make_rng(0)))


# ---------------------------------------------------------------------------
# batch loss vs pointwise losses


def test_batch_loss_matches_pointwise_sums():
    rng = make_rng(18)
    sketch_net = mlp_init([3, 5, 2], rng)
    image_net = mlp_init([4, 5, 2], rng)
    pair = EmbeddingPair(sketch_net, image_net, 2, 1.0)
    s = rng.standard_normal((6, 3))
    xp = rng.standard_normal((6, 4))
    xn = rng.standard_normal((6, 4))
    e_s = pair.embed_sketches(s)
    e_p = pair.embed_images(xp)
    e_n = pair.embed_images(xn)
    d_p = np.linalg.norm(e_s - e_p, axis=1)
    d_n = np.linalg.norm(e_s - e_n, axis=1)

    loss1, _ = embedding_loss_and_grads(pair, s, xp, xn, "siamese1", 1.0)
    expected1 = (
        sum(siamese_loss_v1(d, True, 1.0) for d in d_p)
        + sum(siamese_loss_v1(d, False, 1.0) for d in d_n)
    ) / 12
    assert loss1 == pytest.approx(expected1, rel=1e-12)

    loss2, _ = embedding_loss_and_grads(pair, s, xp, xn, "siamese2", 1.7)
    expected2 = (
        sum(siamese_loss_v2(d, True, 1.7) for d in d_p)
        + sum(siamese_loss_v2(d, False, 1.7) for d in d_n)
    ) / 12
    assert loss2 == pytest.approx(expected2, rel=1e-12)

    loss3, _ = embedding_loss_and_grads(pair, s, xp, xn, "triplet_coarse", 1.0)
    expected3 = np.mean([triplet_loss(dp**2, dn**2, 1.0) for dp, dn in zip(d_p, d_n)])
    assert loss3 == pytest.approx(expected3, rel=1e-12)


# ---------------------------------------------------------------------------
# embedding training


def separable_dataset(seed=19, per_class=30):
    rng = make_rng(seed)
    center_a = np.concatenate([np.full(2, 2.0), np.zeros(2)])
    center_b = -center_a
    sketches, images, labels = [], [], []
    for center, name in ((center_a, "a"), (center_b, "b")):
        sketches.append(center[:4] + 0.3 * rng.standard_normal((per_class, 4)))
        img_center = np.concatenate([center, center[:2]])
        images.append(img_center + 0.3 * rng.standard_normal((per_class, 6)))
        labels.extend([name] * per_class)
    return PairedDataset(np.vstack(sketches), np.vstack(images), labels)


def test_train_embedding_deterministic():
    dataset = separable_dataset()
    cfg = EmbedConfig(seed=20, embed_dim=4, hidden_width=8, epochs=2, batch_size=16)
    p1, t1 = train_embedding(dataset, "siamese1", cfg)
    p2, t2 = train_embedding(dataset, "siamese1", cfg)
    for a, b in zip(p1.sketch_net.weights, p2.sketch_net.weights):
        assert np.array_equal(a, b)
    assert t1 == t2


def test_train_embedding_siamese_separates_classes():
    dataset = separable_dataset()
    cfg = EmbedConfig(seed=21, embed_dim=4, hidden_width=16, epochs=15, batch_size=16, lr=2e-3)
    pair, _ = train_embedding(dataset, "siamese1", cfg)
    e_s = pair.embed_sketches(dataset.sketch_features)
    e_i = pair.embed_images(dataset.image_features)
    labels = np.array(dataset.labels)
    same, cross = [], []
    for i in range(dataset.n_rows):
        d = np.linalg.norm(e_s[i] - e_i, axis=1)
        same.append(d[labels == labels[i]].mean())
        cross.append(d[labels != labels[i]].mean())
    assert np.mean(same) < np.mean(cross)


def test_train_embedding_triplet_beats_chance_retrieval():
    from sketchret.retrieval import EvalConfig, evaluate_run

    dataset = separable_dataset(seed=22)
    cfg = EmbedConfig(seed=23, embed_dim=4, hidden_width=16, epochs=15, batch_size=16, lr=2e-3)
    pair, _ = train_embedding(dataset, "triplet_coarse", cfg)
    db_embedded = pair.embed_images(dataset.image_features)

    def gen(sketch, n, rng):
        return np.tile(pair.embed_sketches(sketch)[0], (n, 1))

    report = evaluate_run(
        dataset.sketch_features,
        dataset.labels,
        db_embedded,
        dataset.labels,
        gen,
        EvalConfig(seed=24, n_samples=1, k_clusters=1, cutoff=10),
    )
    assert report.mean_precision > 0.5  # chance for two balanced classes


@pytest.mark.parametrize("hidden,alpha", [("relu", 32.0), ("tanh", 37.5)])
def test_embedding_ranking_scale_invariant(hidden, alpha):
    # power-of-two scales are exact in float; generic scales need embeddings
    # without collinear degeneracies (tanh has no dead units)
    from sketchret.retrieval import QueryRepresentation, rank_top_k, score_database

    rng = make_rng(25)
    pair = EmbeddingPair(
        mlp_init([3, 5, 4], rng, hidden_activation=hidden),
        mlp_init([6, 5, 4], rng, hidden_activation=hidden),
        4,
        1.0,
    )
    sketches = rng.standard_normal((5, 3))
    images = rng.standard_normal((40, 6))
    e_s = pair.embed_sketches(sketches)
    e_i = pair.embed_images(images)

    def rankings(scale):
        out = []
        for row in e_s:
            rep = QueryRepresentation((scale * row)[None, :], "test", 1, 1)
            ranked = rank_top_k(score_database(rep, scale * e_i), cutoff=40)
            out.append(ranked.indices.tolist())
        return out

    assert rankings(1.0) == rankings(alpha)


def test_train_embedding_q_reestimated():
    dataset = separable_dataset(seed=26)
    cfg = EmbedConfig(seed=27, embed_dim=4, hidden_width=8, epochs=3, batch_size=16)
    pair, trace = train_embedding(dataset, "siamese2", cfg)
    assert all(row["q"] > 0 for row in trace)
    assert pair.margin_or_q > 0


# ---------------------------------------------------------------------------
# DSH loss


def dsh_fixture(seed=28, bits=4, n1=5, n2=6, e=3):
    rng = make_rng(seed)
    b_i = np.sign(rng.standard_normal((bits, n1)))
    b_s = np.sign(rng.standard_normal((bits, n2)))
    d_basis = rng.standard_normal((e, bits))
    return b_i, b_s, d_basis


def test_dsh_all_residuals_vanish():
    b_i, b_s, d_basis = dsh_fixture()
    inputs = DshLossInputs(
        b_i=b_i,
        b_s=b_s,
        w_sim=(b_i.T @ b_s) / b_i.shape[0],  # scale m cancels exactly
        phi_i=d_basis @ b_i,
        phi_s=d_basis @ b_s,
        d_basis=d_basis,
        f_i_out=b_i,
        f_s_out=b_s,
        lam=0.01,
        gamma=1e-5,
    )
    total, cross, semantic, quant = dsh_loss_eval(inputs)
    assert total == pytest.approx(0.0, abs=1e-18)
    assert cross == semantic == quant == 0.0


def test_dsh_lambda_gamma_zero():
    rng = make_rng(29)
    b_i, b_s, d_basis = dsh_fixture(29)
    inputs = DshLossInputs(
        b_i=b_i,
        b_s=b_s,
        w_sim=rng.standard_normal((5, 6)),
        phi_i=rng.standard_normal((3, 5)),
        phi_s=rng.standard_normal((3, 6)),
        d_basis=d_basis,
        f_i_out=rng.standard_normal((4, 5)),
        f_s_out=rng.standard_normal((4, 6)),
        lam=0.0,
        gamma=0.0,
    )
    total, cross, _, _ = dsh_loss_eval(inputs)
    assert total == cross


def test_dsh_bit_flip_increases_quantization():
    rng = make_rng(30)
    b_i, b_s, d_basis = dsh_fixture(30)
    common = dict(
        b_s=b_s,
        w_sim=rng.standard_normal((5, 6)),
        phi_i=rng.standard_normal((3, 5)),
        phi_s=rng.standard_normal((3, 6)),
        d_basis=d_basis,
        f_i_out=b_i.copy(),  # outputs pinned at the unflipped codes
        f_s_out=b_s,
    )
    _, _, _, quant_before = dsh_loss_eval(DshLossInputs(b_i=b_i, **common))
    flipped = b_i.copy()
    flipped[0, 0] = -flipped[0, 0]
    _, _, _, quant_after = dsh_loss_eval(DshLossInputs(b_i=flipped, **common))
    assert quant_after > quant_before


def test_dsh_rejects_nonbinary_codes():
    b_i, b_s, d_basis = dsh_fixture(31)
    bad = b_i.copy()
    bad[0, 0] = 0.5
    with pytest.raises(ConstraintError):
        dsh_loss_eval(
            DshLossInputs(
                b_i=bad,
                b_s=b_s,
                w_sim=np.zeros((5, 6)),
                phi_i=np.zeros((3, 5)),
                phi_s=np.zeros((3, 6)),
                d_basis=d_basis,
                f_i_out=b_i,
                f_s_out=b_s,
            )
        )


# ---------------------------------------------------------------------------
# checkpoint roundtrips for fitted artifacts


def test_linear_map_checkpoint_roundtrip(tmp_path):
    x_s, x_i = random_pair_data(32)
    fit = fit_eszsl(x_s, x_i, gamma=0.2, lam=0.1)
    path = tmp_path / "w.zsck"
    save_checkpoint(fit, path)
    loaded = load_checkpoint(path, expected_kind="linear_map")
    assert isinstance(loaded, LinearMap)
    assert np.array_equal(loaded.w, fit.w)
    assert loaded.fit_meta == fit.fit_meta


def test_embedding_checkpoint_roundtrip(tmp_path):
    dataset = separable_dataset(seed=33)
    cfg = EmbedConfig(seed=34, embed_dim=4, hidden_width=8, epochs=1, batch_size=16)
    pair, _ = train_embedding(dataset, "siamese2", cfg)
    path = tmp_path / "e.zsck"
    save_checkpoint(pair, path)
    loaded = load_checkpoint(path, expected_kind="embedding_pair")
    sketches = dataset.sketch_features[:3]
    assert np.array_equal(loaded.embed_sketches(sketches), pair.embed_sketches(sketches))
    assert loaded.margin_or_q == pair.margin_or_q
