"""Query-side retrieval: stochastic generation, clustering into a compact
query representation, cosine ranking against the database, and the
Precision@K / mAP@K evaluation harness.

A query is answered by generating ``n_samples`` candidate image features
for the sketch, clustering them into ``k_clusters`` centroids, and scoring
every database row by its best cosine similarity to any centroid (higher
is closer).  Ties in the ranking break by ascending database index so runs
are reproducible across platforms and thread counts.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CardinalityError, ConfigurationError, DimensionError
from .linalg import kmeans

logger = logging.getLogger(__name__)

DEFAULT_N_SAMPLES = 200
DEFAULT_K_CLUSTERS = 5
DEFAULT_CUTOFF = 200


@dataclass
class QueryRepresentation:
    """K cluster centroids standing in for one query sketch."""

    centroids: np.ndarray  # (k, d_img)
    source: str
    n_samples: int
    k_clusters: int
    seed: int | None = None


@dataclass
class RankedList:
    """Top-ranked database indices for one query, scores nonincreasing."""

    query_id: int
    indices: np.ndarray
    scores: np.ndarray


@dataclass
class EvalConfig:
    """Evaluation settings echoed verbatim into every report."""

    seed: int
    n_samples: int = DEFAULT_N_SAMPLES
    k_clusters: int = DEFAULT_K_CLUSTERS
    cutoff: int = DEFAULT_CUTOFF
    workers: int = 0  # 0 or 1 = serial
    model_id: str = ""

    def to_dict(self) -> dict:
        # workers is an execution detail that must not alter the report
        return {
            "seed": self.seed,
            "n_samples": self.n_samples,
            "k_clusters": self.k_clusters,
            "cutoff": self.cutoff,
            "model_id": self.model_id,
        }


@dataclass
class MetricsReport:
    """Per-query and aggregate retrieval quality at one cutoff."""

    cutoff: int
    query_ids: list[int]
    query_classes: list[str]
    precision_at_k: list[float]
    ap_at_k: list[float]
    mean_precision: float
    mean_ap: float
    seed: int
    config_echo: dict = field(default_factory=dict)


def build_query_representation(
    generator,
    sketch,
    n: int = DEFAULT_N_SAMPLES,
    k: int = DEFAULT_K_CLUSTERS,
    rng: np.random.Generator | None = None,
    source: str = "",
) -> QueryRepresentation:
    """Generate n candidate image features for the sketch and cluster them.

    ``generator`` is any callable (sketch, n, rng) -> (n, d_img) matrix.
    """
    if rng is None:
        raise ConfigurationError("an explicit rng is required")
    if n < k:
        raise CardinalityError(f"need n >= k, got n={n}, k={k}")
    samples = np.asarray(generator(sketch, n, rng), dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] != n:
        raise DimensionError(f"generator must return an {n}-row matrix")
    centroids = kmeans(samples, k, rng)
    return QueryRepresentation(centroids, source, n, k)


def score_database(q: QueryRepresentation, db_features) -> np.ndarray:
    """Best cosine similarity of each database row to any centroid.

    Zero-norm database rows score -inf (ranked last); zero-norm centroids
    are skipped.  Both conditions are counted into a warning log line.
    """
    db = np.asarray(db_features, dtype=np.float64)
    cents = np.asarray(q.centroids, dtype=np.float64)
    if db.ndim != 2 or cents.ndim != 2 or db.shape[1] != cents.shape[1]:
        raise DimensionError(
            f"database dim {db.shape} incompatible with centroids {cents.shape}"
        )
    db_norms = np.linalg.norm(db, axis=1)
    cent_norms = np.linalg.norm(cents, axis=1)
    dead_rows = db_norms == 0.0
    dead_cents = cent_norms == 0.0
    if dead_rows.any() or dead_cents.any():
        logger.warning(
            "score_database: %d zero-norm database rows, %d zero-norm centroids",
            int(dead_rows.sum()),
            int(dead_cents.sum()),
        )
    if dead_cents.all():
        return np.full(db.shape[0], -np.inf)
    db_unit = np.divide(db, np.where(dead_rows, 1.0, db_norms)[:, None])
    cent_unit = cents[~dead_cents] / cent_norms[~dead_cents][:, None]
    scores = (db_unit @ cent_unit.T).max(axis=1)
    scores[dead_rows] = -np.inf
    return scores


def rank_top_k(scores, cutoff: int = DEFAULT_CUTOFF, query_id: int = 0) -> RankedList:
    """Indices of the ``cutoff`` highest scores, ties by ascending index."""
    if cutoff < 1:
        raise ConfigurationError("cutoff must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))[:cutoff]
    return RankedList(query_id, order, scores[order])


def precision_at_k(ranked_labels, query_label, k: int) -> float:
    """Fraction of the top-k retrieved items sharing the query class.

    A ranking shorter than k still divides by k.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    top = list(ranked_labels)[: min(k, len(ranked_labels))]
    return sum(1 for lbl in top if lbl == query_label) / k


def average_precision_at_k(
    ranked_labels, query_label, k: int, total_relevant: int
) -> float:
    """AP at cutoff k, normalized by min(total_relevant, k).

    AP = sum over relevant ranks i <= k of Precision@i, divided by
    min(R, k); zero when no relevant item exists or k = 0 relevant slots.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    if total_relevant < 0:
        raise ConfigurationError("total_relevant must be >= 0")
    denom = min(total_relevant, k)
    if denom == 0:
        return 0.0
    hits = 0
    score = 0.0
    for i, lbl in enumerate(list(ranked_labels)[:k], start=1):
        if lbl == query_label:
            hits += 1
            score += hits / i
    return score / denom


def _evaluate_one(
    qi: int,
    sketch: np.ndarray,
    query_label: str,
    db_features: np.ndarray,
    db_labels: list[str],
    generator,
    cfg: EvalConfig,
) -> tuple[float, float]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(qi,)))
    rep = build_query_representation(
        generator, sketch, cfg.n_samples, cfg.k_clusters, rng, cfg.model_id
    )
    scores = score_database(rep, db_features)
    ranked = rank_top_k(scores, cfg.cutoff, query_id=qi)
    ranked_labels = [db_labels[i] for i in ranked.indices]
    total_relevant = sum(1 for lbl in db_labels if lbl == query_label)
    return (
        precision_at_k(ranked_labels, query_label, cfg.cutoff),
        average_precision_at_k(ranked_labels, query_label, cfg.cutoff, total_relevant),
    )


def evaluate_run(
    query_sketches,
    query_labels: list[str],
    db_features,
    db_labels: list[str],
    generator,
    cfg: EvalConfig,
) -> MetricsReport:
    """Build -> score -> rank -> metrics for every query sketch.

    Deterministic for a fixed (generator, data, seed): each query gets its
    own spawned random stream, and the report is assembled in query order
    regardless of ``cfg.workers``.
    """
    queries = np.asarray(query_sketches, dtype=np.float64)
    db = np.asarray(db_features, dtype=np.float64)
    if db.ndim != 2 or db.shape[0] == 0:
        raise ConfigurationError("database is empty")
    if len(db_labels) != db.shape[0]:
        raise DimensionError("database labels misaligned with rows")
    if queries.ndim != 2 or queries.shape[0] == 0:
        raise ConfigurationError("query set is empty")
    if len(query_labels) != queries.shape[0]:
        raise DimensionError("query labels misaligned with rows")

    def work(qi: int) -> tuple[float, float]:
        return _evaluate_one(
            qi, queries[qi], query_labels[qi], db, db_labels, generator, cfg
        )

    n_q = queries.shape[0]
    if cfg.workers and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, range(n_q)))
    else:
        results = [work(qi) for qi in range(n_q)]

    precisions = [r[0] for r in results]
    aps = [r[1] for r in results]
    return MetricsReport(
        cutoff=cfg.cutoff,
        query_ids=list(range(n_q)),
        query_classes=list(query_labels),
        precision_at_k=precisions,
        ap_at_k=aps,
        mean_precision=sum(precisions) / n_q,
        mean_ap=sum(aps) / n_q,
        seed=cfg.seed,
        config_echo=cfg.to_dict(),
    )


# ---------------------------------------------------------------------------
# report serialization


def render_report(report: MetricsReport) -> str:
    """Fixed-format text report: one tab-separated record per query plus an
    aggregate footer; identical inputs render byte-identical text."""
    lines = [
        "# sketchret metrics v1",
        f"# seed: {report.seed}",
        f"# cutoff: {report.cutoff}",
        "# config: " + json.dumps(report.config_echo, sort_keys=True, separators=(",", ":")),
        "query_id\tclass\tprecision_at_k\tap_at_k",
    ]
    for qi, cls, p, ap in zip(
        report.query_ids, report.query_classes, report.precision_at_k, report.ap_at_k
    ):
        lines.append(f"{qi}\t{cls}\t{p!r}\t{ap!r}")
    lines.append(f"# queries: {len(report.query_ids)}")
    lines.append(f"# mean_precision_at_k: {report.mean_precision!r}")
    lines.append(f"# mean_ap_at_k: {report.mean_ap!r}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(render_report(report), encoding="utf-8")


def render_ranked_list(ranked: RankedList) -> str:
    """Tab-separated ranking: rank, database index, score."""
    lines = ["rank\tdb_index\tscore"]
    for rank, (idx, score) in enumerate(zip(ranked.indices, ranked.scores), start=1):
        lines.append(f"{rank}\t{int(idx)}\t{float(score)!r}")
    return "\n".join(lines) + "\n"
