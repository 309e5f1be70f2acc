"""Batch command-line entry points: synth, train, retrieve, eval, gradcheck.

Every command takes an explicit seed and writes plain files; identical
flags and seed produce byte-identical primary outputs.  Exit codes: 0 on
success, 1 on validation failures, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoints
from .baselines import (
    EmbeddingPair,
    EmbedConfig,
    LinearMap,
    fit_direct_regression,
    fit_eszsl,
    fit_sae,
    train_embedding,
)
from .data import (
    PairedDataset,
    ZeroShotSplit,
    load_features,
    load_feature_matrix,
    load_labels,
    load_manifest,
    save_features,
    save_labels,
    save_manifest,
    split_from_manifest,
    synth_generate,
    SyntheticConfig,
)
from .generative import (
    CaaeModel,
    CvaeModel,
    GenerativeConfig,
    TrainConfig,
    caae_generate,
    cvae_generate,
    train_caae,
    train_cvae,
)
from .gradcheck import run_gradcheck
from .retrieval import (
    EvalConfig,
    build_query_representation,
    evaluate_run,
    rank_top_k,
    render_ranked_list,
    score_database,
    write_report,
)

MODEL_KINDS = (
    "cvae",
    "caae",
    "siamese1",
    "siamese2",
    "triplet-coarse",
    "triplet-fine",
    "regression",
    "eszsl",
    "sae",
)

PAIRED_SKETCH = "paired_sketch.zsfv"
PAIRED_IMAGE = "paired_image.zsfv"
PAIRED_LABELS = "paired_labels.txt"
DB_FEATURES = "db_features.zsfv"
DB_LABELS = "db_labels.txt"
MANIFEST = "split_manifest.json"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; keep 2 for numerical
    # failures only
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_dataset_dir(data_dir: str) -> tuple[PairedDataset, ZeroShotSplit]:
    root = Path(data_dir)
    paired = PairedDataset(
        load_feature_matrix(root / PAIRED_SKETCH),
        load_feature_matrix(root / PAIRED_IMAGE),
        load_labels(root / PAIRED_LABELS),
    )
    db = load_features(root / DB_FEATURES, root / DB_LABELS)
    train_classes, test_classes = load_manifest(root / MANIFEST)
    split = split_from_manifest(paired, db, train_classes, test_classes)
    return paired, split


def _write_trace(trace: list[dict], path: Path) -> None:
    if not trace:
        return
    keys = list(trace[0].keys())
    lines = ["\t".join(keys)]
    for row in trace:
        lines.append("\t".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        n_classes_train=args.train_classes,
        n_classes_test=args.test_classes,
        d_img=args.d_img,
        d_sketch=args.d_sketch,
        pairs_per_class=args.pairs_per_class,
        db_per_class=args.db_per_class,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    paired, db, test_classes = synth_generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_features(paired.sketch_features, out / PAIRED_SKETCH)
    save_features(paired.image_features, out / PAIRED_IMAGE)
    save_labels(paired.labels, out / PAIRED_LABELS)
    save_features(db.features, out / DB_FEATURES)
    save_labels(db.labels, out / DB_LABELS)
    train_classes = sorted(paired.classes() - set(test_classes))
    save_manifest(train_classes, test_classes, out / MANIFEST)
    print(
        f"wrote {paired.n_rows} pairs, {db.n_rows} database rows, "
        f"{len(train_classes)}/{len(test_classes)} train/test classes to {out}"
    )
    return 0


def _train_model(args, split: ZeroShotSplit):
    s_tr = split.s_tr
    kind = args.model
    if kind in ("cvae", "caae"):
        model_cfg = GenerativeConfig(
            d_img=s_tr.d_img,
            d_sketch=s_tr.d_sketch,
            d_latent=args.latent_dim,
            hidden_width=args.hidden_width or None,
            lambda_recons=args.lambda_recons,
        )
        train_cfg = TrainConfig(
            seed=args.seed,
            epochs=args.epochs if args.epochs is not None else 25,
            iterations=args.iterations,
            batch_size=args.batch_size or (64 if kind == "cvae" else 128),
            lr=args.lr,
            beta1=args.beta1,
            beta2=args.beta2,
            disc_iters_per_gen=args.disc_iters,
            nonsaturating=args.nonsaturating,
        )
        if kind == "cvae":
            return train_cvae(s_tr, model_cfg, train_cfg)
        return train_caae(s_tr, model_cfg, train_cfg)
    if kind in ("siamese1", "siamese2", "triplet-coarse", "triplet-fine"):
        cfg = EmbedConfig(
            seed=args.seed,
            embed_dim=args.embed_dim,
            hidden_width=args.hidden_width or 128,
            margin=args.margin,
            epochs=args.epochs,
            batch_size=args.batch_size or 64,
            lr=args.lr,
            beta1=args.beta1,
            beta2=args.beta2,
        )
        return train_embedding(s_tr, kind.replace("-", "_"), cfg)
    x_s, x_i = s_tr.sketch_features, s_tr.image_features
    if kind == "regression":
        return fit_direct_regression(x_s, x_i, ridge=args.ridge), []
    if kind == "eszsl":
        return fit_eszsl(x_s, x_i, gamma=args.gamma, lam=args.lam), []
    if kind == "sae":
        return fit_sae(x_s, x_i, lam=args.lam), []
    raise ValueError(f"unknown model kind {kind!r}")


def cmd_train(args) -> int:
    _, split = _load_dataset_dir(args.data)
    model, trace = _train_model(args, split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoints.save_checkpoint(model, out)
    if trace:
        _write_trace(trace, out.with_suffix(out.suffix + ".trace.tsv"))
        last = trace[-1]
        loss_key = "total" if "total" in last else ("enc_dec_loss" if "enc_dec_loss" in last else "loss")
        print(f"trained {args.model} on {split.s_tr.n_rows} pairs; final {loss_key}={last[loss_key]:.6g}")
    else:
        print(f"fitted {args.model} on {split.s_tr.n_rows} pairs; loss={model.fit_meta.get('loss', float('nan')):.6g}")
    print(f"checkpoint: {out}")
    return 0


def _score_plan(model, db_features: np.ndarray, args):
    """Choose per-kind scoring: which matrix to rank over, how to produce
    query-side samples, and how many samples/clusters."""
    if isinstance(model, CvaeModel):
        gen = lambda sketch, n, rng: cvae_generate(model, sketch, n, rng)
        return db_features, gen, args.n_samples, args.k_clusters, "cvae"
    if isinstance(model, CaaeModel):
        gen = lambda sketch, n, rng: caae_generate(model, sketch, n, rng)
        return db_features, gen, args.n_samples, args.k_clusters, "caae"
    if isinstance(model, LinearMap):
        gen = lambda sketch, n, rng: np.tile(model.predict(sketch), (n, 1))
        return db_features, gen, 1, 1, "linear_map"
    if isinstance(model, EmbeddingPair):
        db_embedded = model.embed_images(db_features)

        def gen(sketch, n, rng):
            return np.tile(model.embed_sketches(sketch)[0], (n, 1))

        return db_embedded, gen, 1, 1, "embedding_pair"
    raise ValueError(f"cannot retrieve with model type {type(model).__name__}")


def cmd_retrieve(args) -> int:
    _, split = _load_dataset_dir(args.data)
    model = checkpoints.load_checkpoint(args.checkpoint)
    matrix, gen, n_samples, k_clusters, kind = _score_plan(model, split.d_te.features, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    queries = split.s_te.sketch_features
    for qi in range(queries.shape[0]):
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(qi,)))
        rep = build_query_representation(
            gen, queries[qi], n_samples, k_clusters, rng, source=kind
        )
        ranked = rank_top_k(score_database(rep, matrix), args.cutoff, query_id=qi)
        (out / f"query_{qi:05d}.tsv").write_text(
            render_ranked_list(ranked), encoding="utf-8"
        )
    print(f"wrote {queries.shape[0]} ranked lists to {out}")
    return 0


def cmd_eval(args) -> int:
    _, split = _load_dataset_dir(args.data)
    model = checkpoints.load_checkpoint(args.checkpoint)
    matrix, gen, n_samples, k_clusters, kind = _score_plan(model, split.d_te.features, args)
    cfg = EvalConfig(
        seed=args.seed,
        n_samples=n_samples,
        k_clusters=k_clusters,
        cutoff=args.cutoff,
        workers=args.workers,
        model_id=kind,
    )
    report = evaluate_run(
        split.s_te.sketch_features,
        split.s_te.labels,
        matrix,
        split.d_te.labels,
        gen,
        cfg,
    )
    write_report(report, args.out)
    print(
        f"evaluated {len(report.query_ids)} queries: "
        f"precision@{report.cutoff}={report.mean_precision:.4f} "
        f"mAP@{report.cutoff}={report.mean_ap:.4f}"
    )
    print(f"report: {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(seed=args.seed)
    width = max(len(r.name) for r in rows)
    failures = 0
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_error={r.max_error:.3e}  tol={r.tolerance:.1e}  {status}")
        failures += 0 if r.passed else 1
    if failures:
        print(f"{failures} check(s) failed", file=sys.stderr)
        return 2
    print(f"all {len(rows)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sketchret", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train-classes", type=int, default=12)
    p.add_argument("--test-classes", type=int, default=4)
    p.add_argument("--d-img", type=int, default=32)
    p.add_argument("--d-sketch", type=int, default=16)
    p.add_argument("--pairs-per-class", type=int, default=50)
    p.add_argument("--db-per-class", type=int, default=60)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train or fit a model on the train split")
    p.add_argument("--data", required=True, help="dataset directory from synth (or same layout)")
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--iterations", type=int, default=6000)
    p.add_argument("--batch-size", type=int, default=0, help="0 = per-model default")
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--beta1", type=float, default=0.5)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--disc-iters", type=int, default=32)
    p.add_argument("--nonsaturating", action="store_true")
    p.add_argument("--latent-dim", type=int, default=64)
    p.add_argument("--hidden-width", type=int, default=0, help="0 = per-model default")
    p.add_argument("--lambda-recons", type=float, default=0.1)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrieve", help="write per-query ranked lists")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-samples", type=int, default=200)
    p.add_argument("--k-clusters", type=int, default=5)
    p.add_argument("--cutoff", type=int, default=200)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="write a precision/mAP report over the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-samples", type=int, default=200)
    p.add_argument("--k-clusters", type=int, default=5)
    p.add_argument("--cutoff", type=int, default=200)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the analytic-gradient verification table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
