import json
import struct

import numpy as np
import pytest

from sketchret.checkpoints import load_checkpoint, save_checkpoint
from sketchret.data import (
    FeatureStore,
    PairedDataset,
    SyntheticConfig,
    load_feature_matrix,
    load_features,
    load_labels,
    load_manifest,
    make_zero_shot_split,
    save_features,
    save_labels,
    save_manifest,
    split_from_manifest,
    synth_generate,
)
from sketchret.errors import (
    CheckpointKindError,
    ChecksumError,
    ConfigurationError,
    DataConsistencyError,
    FormatError,
)
from sketchret.generative import GenerativeConfig, cvae_generate, init_caae, init_cvae
from sketchret.linalg import make_rng


# ---------------------------------------------------------------------------
# feature files


def test_feature_file_roundtrip_bit_exact(tmp_path):
    values = np.array(
        [[1.5, -0.0], [3.25, -7.125], [100.0, 0.15625]], dtype=np.float32
    ).astype(np.float64)
    path = tmp_path / "f.zsfv"
    save_features(values, path)
    loaded = load_feature_matrix(path)
    assert np.array_equal(loaded, values)
    assert np.signbit(loaded[0, 1])  # signed zero preserved
    save_features(loaded, tmp_path / "g.zsfv")
    assert (tmp_path / "f.zsfv").read_bytes() == (tmp_path / "g.zsfv").read_bytes()


def test_feature_file_matches_format_spec(tmp_path):
    values = [[1.5, -0.0], [3.25, -7.125], [100.0, 0.15625]]
    path = tmp_path / "f.zsfv"
    save_features(np.array(values), path)
    expected = (
        b"ZSFV"
        + struct.pack("<I", 1)
        + struct.pack("<QQ", 3, 2)
        + struct.pack("<6f", 1.5, -0.0, 3.25, -7.125, 100.0, 0.15625)
    )
    assert path.read_bytes() == expected
    assert np.array_equal(load_feature_matrix(path), np.array(values))


def test_feature_file_truncated(tmp_path):
    path = tmp_path / "f.zsfv"
    save_features(np.ones((3, 2)), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_feature_matrix(path)


def test_feature_file_bad_magic_and_version(tmp_path):
    path = tmp_path / "f.zsfv"
    save_features(np.ones((1, 1)), path)
    blob = bytearray(path.read_bytes())
    bad = tmp_path / "bad.zsfv"
    bad.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(FormatError, match="magic"):
        load_feature_matrix(bad)
    blob[4:8] = struct.pack("<I", 9)
    bad.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_feature_matrix(bad)


def test_feature_file_nonfinite_rejected(tmp_path):
    path = tmp_path / "f.zsfv"
    with open(path, "wb") as fh:
        fh.write(b"ZSFV" + struct.pack("<I", 1) + struct.pack("<QQ", 2, 1))
        fh.write(struct.pack("<2f", 1.0, float("inf")))
    with pytest.raises(DataConsistencyError, match="row 1"):
        load_feature_matrix(path)


def test_labels_roundtrip_and_validation(tmp_path):
    path = tmp_path / "labels.txt"
    save_labels(["cat", "dog", "câble"], path)
    assert load_labels(path) == ["cat", "dog", "câble"]
    path.write_text("cat\n\ndog\n", encoding="utf-8")
    with pytest.raises(DataConsistencyError):
        load_labels(path)


def test_load_features_label_count_mismatch(tmp_path):
    save_features(np.ones((3, 2)), tmp_path / "f.zsfv")
    save_labels(["a", "b"], tmp_path / "l.txt")
    with pytest.raises(DataConsistencyError):
        load_features(tmp_path / "f.zsfv", tmp_path / "l.txt")


# ---------------------------------------------------------------------------
# manifest


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "m.json"
    save_manifest(["a", "b"], ["c"], path)
    assert load_manifest(path) == (["a", "b"], ["c"])


def test_manifest_rejects_bad_documents(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(FormatError):
        load_manifest(path)
    path.write_text(json.dumps({"train_classes": ["a"]}), encoding="utf-8")
    with pytest.raises(FormatError):
        load_manifest(path)
    path.write_text(
        json.dumps({"train_classes": ["a"], "test_classes": [""]}), encoding="utf-8"
    )
    with pytest.raises(FormatError):
        load_manifest(path)


# ---------------------------------------------------------------------------
# zero-shot split


def toy_paired(labels, d_sketch=3, d_img=4, seed=0):
    rng = make_rng(seed)
    n = len(labels)
    return PairedDataset(
        rng.standard_normal((n, d_sketch)), rng.standard_normal((n, d_img)), list(labels)
    )


def toy_db(labels, d_img=4, seed=1):
    rng = make_rng(seed)
    return FeatureStore(rng.standard_normal((len(labels), d_img)), list(labels))


def test_split_all_but_one_class():
    paired = toy_paired(["a", "a", "b", "c"])
    db = toy_db(["a", "b", "c"])
    split = make_zero_shot_split(paired, db, {"b", "c"})
    assert split.train_classes == ["a"]
    assert set(split.s_tr.labels) == {"a"}
    assert split.s_tr.n_rows == 2


def test_split_disjointness_random_trials():
    rng = make_rng(2)
    classes = [f"c{i}" for i in range(8)]
    labels = [classes[int(rng.integers(8))] for _ in range(60)]
    paired = toy_paired(labels)
    db = toy_db(labels)
    for trial in range(10):
        pick = rng.choice(8, size=3, replace=False)
        test_classes = {classes[i] for i in pick}
        split = make_zero_shot_split(paired, db, test_classes)
        assert not (set(split.train_classes) & set(split.test_classes))
        assert not (set(split.d_te.labels) & set(split.train_classes))


def test_split_reference_class_counts():
    # manifest-style dry run with the reference 104/21 partition sizes
    classes = [f"class_{i:03d}" for i in range(125)]
    paired = toy_paired(classes)
    db = toy_db(classes)
    split = split_from_manifest(paired, db, classes[:104], classes[104:])
    summary = split.summary()
    assert summary["train_classes"] == 104
    assert summary["test_classes"] == 21


def test_split_errors():
    paired = toy_paired(["a", "b"])
    db = toy_db(["a", "b"])
    with pytest.raises(ConfigurationError, match="unknown"):
        make_zero_shot_split(paired, db, {"zzz"})
    with pytest.raises(ConfigurationError):
        make_zero_shot_split(paired, db, {"a", "b"})  # empty train side


def test_split_from_manifest_overlap_named():
    paired = toy_paired(["a", "b", "c"])
    db = toy_db(["a", "b", "c"])
    with pytest.raises(ConfigurationError, match="'b'"):
        split_from_manifest(paired, db, ["a", "b"], ["b", "c"])
    with pytest.raises(ConfigurationError, match="missing"):
        split_from_manifest(paired, db, ["a"], ["b"])


# ---------------------------------------------------------------------------
# synthetic benchmark


def test_synth_sigma_zero_collapses_to_prototypes():
    cfg = SyntheticConfig(
        n_classes_train=2, n_classes_test=1, d_img=5, d_sketch=3,
        pairs_per_class=4, db_per_class=2, noise_sigma=0.0, seed=3,
    )
    paired, db, _ = synth_generate(cfg)
    for cls in set(paired.labels):
        rows = paired.image_features[np.array(paired.labels) == cls]
        assert np.all(rows == rows[0])


def test_synth_deterministic():
    cfg = SyntheticConfig(seed=4, pairs_per_class=3, db_per_class=2)
    a_paired, a_db, a_test = synth_generate(cfg)
    b_paired, b_db, b_test = synth_generate(cfg)
    assert np.array_equal(a_paired.sketch_features, b_paired.sketch_features)
    assert np.array_equal(a_db.features, b_db.features)
    assert a_test == b_test


def test_synth_nearest_prototype_classification():
    cfg = SyntheticConfig(
        n_classes_train=6, n_classes_test=2, d_img=32, d_sketch=16,
        pairs_per_class=25, db_per_class=2, noise_sigma=0.05, seed=5,
    )
    paired, _, _ = synth_generate(cfg)
    classes = sorted(set(paired.labels))
    prototypes = np.array(
        [
            paired.image_features[np.array(paired.labels) == c].mean(axis=0)
            for c in classes
        ]
    )
    d2 = ((paired.image_features[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=2)
    predicted = [classes[i] for i in d2.argmin(axis=1)]
    correct = sum(p == t for p, t in zip(predicted, paired.labels))
    assert correct / len(predicted) >= 0.99


def test_synth_config_validation():
    with pytest.raises(ConfigurationError):
        SyntheticConfig(n_classes_train=0)
    with pytest.raises(ConfigurationError):
        SyntheticConfig(noise_sigma=-0.1)


# ---------------------------------------------------------------------------
# checkpoints


def small_cvae(seed=6):
    cfg = GenerativeConfig(d_img=5, d_sketch=3, d_latent=2, hidden_width=4)
    return init_cvae(cfg, make_rng(seed))


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    model = small_cvae()
    p1, p2 = tmp_path / "a.zsck", tmp_path / "b.zsck"
    save_checkpoint(model, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_roundtrip_preserves_generation(tmp_path):
    model = small_cvae()
    path = tmp_path / "m.zsck"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, expected_kind="cvae")
    sketch = make_rng(7).standard_normal(3)
    a = cvae_generate(model, sketch, 4, make_rng(8))
    b = cvae_generate(loaded, sketch, 4, make_rng(8))
    assert np.array_equal(a, b)


def test_checkpoint_wrong_kind(tmp_path):
    cfg = GenerativeConfig(d_img=5, d_sketch=3, d_latent=2, hidden_width=4)
    model = init_caae(cfg, make_rng(9))
    path = tmp_path / "m.zsck"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointKindError):
        load_checkpoint(path, expected_kind="cvae")


def test_checkpoint_corrupted_payload(tmp_path):
    model = small_cvae()
    path = tmp_path / "m.zsck"
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[-9] ^= 0xFF  # last payload byte, just before the checksum
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    model = small_cvae()
    path = tmp_path / "m.zsck"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:20])
    with pytest.raises(FormatError):
        load_checkpoint(path)
