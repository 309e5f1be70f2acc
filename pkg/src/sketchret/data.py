"""Feature-file ingestion, zero-shot split construction, and the synthetic
desk-scale benchmark.

On-disk formats (all little-endian):

* Feature file: magic ``ZSFV`` | u32 version (=1) | u64 rows | u64 cols |
  rows*cols float32 payload, row-major.  Values are promoted to float64 in
  memory and truncated back to float32 on save, so a save/load cycle of
  float32 data is bit-exact (signed zeros included).
* Label file: UTF-8 text, one nonempty class name per line, line i labels
  row i of the matching feature file.
* Split manifest: JSON object with ``train_classes`` and ``test_classes``
  string lists.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DataConsistencyError,
    FormatError,
)
from .linalg import make_rng

FEATURE_MAGIC = b"ZSFV"
FEATURE_VERSION = 1

ROLE_SKETCH = "sketch"
ROLE_IMAGE = "image"
ROLE_DATABASE = "database"
_ROLES = (ROLE_SKETCH, ROLE_IMAGE, ROLE_DATABASE)


@dataclass
class FeatureStore:
    """Row-aligned feature matrix and class labels."""

    features: np.ndarray  # (n, d) float64
    labels: list[str]
    role: str = ROLE_DATABASE

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataConsistencyError("features must be a 2-d matrix")
        if len(self.labels) != self.features.shape[0]:
            raise DataConsistencyError(
                f"{len(self.labels)} labels for {self.features.shape[0]} rows"
            )
        if any(not lbl for lbl in self.labels):
            raise DataConsistencyError("class names must be nonempty")
        if self.role not in _ROLES:
            raise ConfigurationError(f"unknown role {self.role!r}")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> set[str]:
        return set(self.labels)

    def subset(self, mask: np.ndarray) -> "FeatureStore":
        idx = np.flatnonzero(mask)
        return FeatureStore(
            self.features[idx].copy(),
            [self.labels[i] for i in idx],
            self.role,
        )


@dataclass
class PairedDataset:
    """Sketch/image feature pairs; row i of both matrices is one instance."""

    sketch_features: np.ndarray
    image_features: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.sketch_features = np.asarray(self.sketch_features, dtype=np.float64)
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        if self.sketch_features.ndim != 2 or self.image_features.ndim != 2:
            raise DataConsistencyError("paired features must be 2-d matrices")
        n = self.sketch_features.shape[0]
        if self.image_features.shape[0] != n or len(self.labels) != n:
            raise DataConsistencyError(
                "sketches, images and labels must have equal row counts"
            )
        if any(not lbl for lbl in self.labels):
            raise DataConsistencyError("class names must be nonempty")

    @property
    def n_rows(self) -> int:
        return self.sketch_features.shape[0]

    @property
    def d_sketch(self) -> int:
        return self.sketch_features.shape[1]

    @property
    def d_img(self) -> int:
        return self.image_features.shape[1]

    def classes(self) -> set[str]:
        return set(self.labels)

    def subset(self, mask: np.ndarray) -> "PairedDataset":
        idx = np.flatnonzero(mask)
        return PairedDataset(
            self.sketch_features[idx].copy(),
            self.image_features[idx].copy(),
            [self.labels[i] for i in idx],
        )


# ---------------------------------------------------------------------------
# feature / label files


def save_features(features: np.ndarray, path) -> None:
    """Write a feature matrix in the binary ZSFV format (float32 payload)."""
    arr = np.ascontiguousarray(np.asarray(features), dtype=np.float32)
    if arr.ndim != 2:
        raise DataConsistencyError("features must be a 2-d matrix")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def load_feature_matrix(path) -> np.ndarray:
    """Read a ZSFV feature file into a float64 matrix."""
    blob = Path(path).read_bytes()
    if len(blob) < 24:
        raise FormatError(f"{path}: truncated feature file")
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature-file version {version}")
    rows, cols = struct.unpack_from("<QQ", blob, 8)
    expected = 24 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload size {len(blob) - 24} does not match "
            f"{rows}x{cols} float32 values"
        )
    payload = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=24)
    matrix = payload.astype(np.float64).reshape(rows, cols)
    bad = ~np.isfinite(matrix)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise DataConsistencyError(f"{path}: non-finite value at row {row}")
    return matrix


def save_labels(labels: list[str], path) -> None:
    Path(path).write_text("".join(f"{lbl}\n" for lbl in labels), encoding="utf-8")


def load_labels(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    labels = text.splitlines()
    if any(not lbl for lbl in labels):
        raise DataConsistencyError(f"{path}: empty class name")
    return labels


def load_features(feature_path, label_path, role: str = ROLE_DATABASE) -> FeatureStore:
    """Load and cross-validate a feature file plus its label file."""
    matrix = load_feature_matrix(feature_path)
    labels = load_labels(label_path)
    if len(labels) != matrix.shape[0]:
        raise DataConsistencyError(
            f"{label_path}: {len(labels)} labels for {matrix.shape[0]} feature rows"
        )
    return FeatureStore(matrix, labels, role)


# ---------------------------------------------------------------------------
# split manifest


def save_manifest(train_classes: list[str], test_classes: list[str], path) -> None:
    doc = {"train_classes": list(train_classes), "test_classes": list(test_classes)}
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(path) -> tuple[list[str], list[str]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    for key in ("train_classes", "test_classes"):
        if key not in doc or not isinstance(doc[key], list):
            raise FormatError(f"{path}: manifest missing list field {key!r}")
        if any(not isinstance(c, str) or not c for c in doc[key]):
            raise FormatError(f"{path}: {key} must contain nonempty strings")
    return list(doc["train_classes"]), list(doc["test_classes"])


# ---------------------------------------------------------------------------
# zero-shot split


@dataclass
class ZeroShotSplit:
    """Disjoint class partition with the derived paired/database subsets."""

    train_classes: list[str]
    test_classes: list[str]
    s_tr: PairedDataset
    s_te: PairedDataset
    d_tr: FeatureStore
    d_te: FeatureStore

    def summary(self) -> dict:
        return {
            "train_classes": len(self.train_classes),
            "test_classes": len(self.test_classes),
            "train_sketches": self.s_tr.n_rows,
            "test_sketches": self.s_te.n_rows,
            "db_train": self.d_tr.n_rows,
            "db_test": self.d_te.n_rows,
        }

    def verify(self) -> None:
        """Assert the zero-shot invariants (disjointness, no leakage)."""
        train, test = set(self.train_classes), set(self.test_classes)
        if train & test:
            raise ConfigurationError(f"train/test classes overlap: {sorted(train & test)}")
        if not set(self.s_tr.labels) <= train:
            raise ConfigurationError("training pairs contain non-train classes")
        if not set(self.s_te.labels) <= test:
            raise ConfigurationError("test pairs contain non-test classes")
        if not set(self.d_te.labels) <= test:
            raise ConfigurationError("test database contains non-test classes")
        if not set(self.d_tr.labels) <= train:
            raise ConfigurationError("train database contains non-train classes")


def _partition(
    paired: PairedDataset,
    db: FeatureStore,
    train_classes: set[str],
    test_classes: set[str],
) -> ZeroShotSplit:
    paired_labels = np.array(paired.labels)
    db_labels = np.array(db.labels)
    in_test_pairs = np.isin(paired_labels, sorted(test_classes))
    in_test_db = np.isin(db_labels, sorted(test_classes))
    split = ZeroShotSplit(
        train_classes=sorted(train_classes),
        test_classes=sorted(test_classes),
        s_tr=paired.subset(~in_test_pairs),
        s_te=paired.subset(in_test_pairs),
        d_tr=db.subset(~in_test_db),
        d_te=db.subset(in_test_db),
    )
    split.verify()
    return split


def make_zero_shot_split(
    paired: PairedDataset, db: FeatureStore, test_classes
) -> ZeroShotSplit:
    """Partition paired data and database by withholding ``test_classes``.

    Train classes are all remaining observed classes; no test-class row is
    reachable from any training-visible set.
    """
    test = set(test_classes)
    observed = paired.classes() | db.classes()
    unknown = test - observed
    if unknown:
        raise ConfigurationError(f"unknown test classes: {sorted(unknown)}")
    train = observed - test
    if not train or not test:
        raise ConfigurationError("both class sides of the split must be nonempty")
    return _partition(paired, db, train, test)


def split_from_manifest(
    paired: PairedDataset, db: FeatureStore, train_classes, test_classes
) -> ZeroShotSplit:
    """Build a split from an explicit manifest, rejecting any overlap."""
    train, test = set(train_classes), set(test_classes)
    overlap = train & test
    if overlap:
        raise ConfigurationError(
            f"train/test classes overlap: {sorted(overlap)}"
        )
    if not train or not test:
        raise ConfigurationError("both class sides of the split must be nonempty")
    observed = paired.classes() | db.classes()
    unknown = (train | test) - observed
    if unknown:
        raise ConfigurationError(f"manifest names unobserved classes: {sorted(unknown)}")
    unassigned = observed - (train | test)
    if unassigned:
        raise ConfigurationError(
            f"observed classes missing from manifest: {sorted(unassigned)}"
        )
    return _partition(paired, db, train, test)


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass
class SyntheticConfig:
    """Desk-scale surrogate dataset: Gaussian class prototypes in image
    space, sketches obtained through one global noisy projection shared by
    all classes (so the sketch/image relation transfers to unseen classes)."""

    n_classes_train: int = 12
    n_classes_test: int = 4
    d_img: int = 32
    d_sketch: int = 16
    pairs_per_class: int = 50
    db_per_class: int = 60
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.n_classes_train,
            self.n_classes_test,
            self.d_img,
            self.d_sketch,
            self.pairs_per_class,
            self.db_per_class,
        )
        if any(c < 1 for c in counts):
            raise ConfigurationError("all synthetic counts must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")


def synth_generate(cfg: SyntheticConfig) -> tuple[PairedDataset, FeatureStore, list[str]]:
    """Generate (paired data, image database, suggested test classes).

    Draw order is fixed (prototypes, projection, per-class pairs, per-class
    database rows) so identical seeds give identical datasets.
    """
    rng = make_rng(cfg.seed)
    n_classes = cfg.n_classes_train + cfg.n_classes_test
    width = max(2, len(str(n_classes - 1)))
    names = [f"class_{i:0{width}d}" for i in range(n_classes)]

    prototypes = rng.standard_normal((n_classes, cfg.d_img))
    # one global sketch projection; scaled so sketch entries stay O(1)
    projection = rng.standard_normal((cfg.d_img, cfg.d_sketch)) / np.sqrt(cfg.d_img)

    sigma = cfg.noise_sigma
    sketches, images, labels = [], [], []
    for c, name in enumerate(names):
        eps_img = rng.standard_normal((cfg.pairs_per_class, cfg.d_img)) * sigma
        eps_proj = rng.standard_normal((cfg.pairs_per_class, cfg.d_img)) * sigma
        eps_sketch = rng.standard_normal((cfg.pairs_per_class, cfg.d_sketch)) * sigma
        images.append(prototypes[c] + eps_img)
        sketches.append((prototypes[c] + eps_proj) @ projection + eps_sketch)
        labels.extend([name] * cfg.pairs_per_class)
    paired = PairedDataset(np.vstack(sketches), np.vstack(images), labels)

    db_rows, db_labels = [], []
    for c, name in enumerate(names):
        eps = rng.standard_normal((cfg.db_per_class, cfg.d_img)) * sigma
        db_rows.append(prototypes[c] + eps)
        db_labels.extend([name] * cfg.db_per_class)
    db = FeatureStore(np.vstack(db_rows), db_labels, ROLE_DATABASE)

    return paired, db, names[cfg.n_classes_train:]
