"""Binary model checkpoints.

Layout (little-endian): magic ``ZSCK`` | u32 version (=1) | u32 kind length
+ kind tag UTF-8 | u32 header length + canonical JSON header | u64 value
count | float64 payload | 8-byte BLAKE2b checksum of the payload bytes.

The JSON header carries shapes and hyperparameters; the payload carries
every parameter array back to back, so a save/load/save cycle is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .baselines import EmbeddingPair, LinearMap
from .errors import CheckpointKindError, ChecksumError, FormatError
from .generative import CaaeModel, CvaeModel
from .nn import Mlp, mlp_params

CHECKPOINT_MAGIC = b"ZSCK"
CHECKPOINT_VERSION = 1

KIND_CVAE = "cvae"
KIND_CAAE = "caae"
KIND_LINEAR = "linear_map"
KIND_EMBEDDING = "embedding_pair"


def _mlp_header(m: Mlp) -> dict:
    return {
        "layer_dims": list(m.layer_dims),
        "hidden_activation": m.hidden_activation,
        "output_activation": m.output_activation,
    }


def _mlp_from_header(header: dict, arrays: list[np.ndarray]) -> Mlp:
    dims = list(header["layer_dims"])
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(arrays[pos].reshape(fan_in, fan_out))
        biases.append(arrays[pos + 1].reshape(fan_out))
        pos += 2
    return Mlp(dims, weights, biases, header["hidden_activation"], header["output_activation"])


def _mlp_array_count(header: dict) -> int:
    return 2 * (len(header["layer_dims"]) - 1)


def write_checkpoint(path, kind: str, header: dict, arrays: list[np.ndarray]) -> None:
    shapes = [list(a.shape) for a in arrays]
    full_header = dict(header)
    full_header["array_shapes"] = shapes
    header_bytes = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode()
    kind_bytes = kind.encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(kind_bytes)))
        fh.write(kind_bytes)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(payload) // 8))
        fh.write(payload)
        fh.write(digest)


def read_checkpoint(path) -> tuple[str, dict, list[np.ndarray]]:
    blob = Path(path).read_bytes()

    def take(offset: int, size: int) -> bytes:
        if offset + size > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        return blob[offset : offset + size]

    if take(0, 4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", take(4, 4))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (kind_len,) = struct.unpack("<I", take(8, 4))
    kind = take(12, kind_len).decode()
    pos = 12 + kind_len
    (header_len,) = struct.unpack("<I", take(pos, 4))
    pos += 4
    try:
        header = json.loads(take(pos, header_len).decode())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid checkpoint header: {exc}") from exc
    pos += header_len
    (count,) = struct.unpack("<Q", take(pos, 8))
    pos += 8
    payload = take(pos, count * 8)
    pos += count * 8
    digest = take(pos, 8)
    if pos + 8 != len(blob):
        raise FormatError(f"{path}: trailing bytes after checksum")
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    arrays = []
    offset = 0
    for shape in header.get("array_shapes", []):
        size = int(np.prod(shape)) if shape else 1
        arrays.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    if offset != flat.size:
        raise FormatError(f"{path}: payload size disagrees with array shapes")
    return kind, header, arrays


def save_checkpoint(model, path) -> None:
    """Serialize any supported model (CVAE, CAAE, linear map, embedding pair)."""
    if isinstance(model, CvaeModel):
        header = {
            "encoder": _mlp_header(model.encoder),
            "decoder": _mlp_header(model.decoder),
            "regressor": _mlp_header(model.regressor),
            "lambda_recons": model.lambda_recons,
            "d_latent": model.d_latent,
        }
        arrays = (
            mlp_params(model.encoder)
            + mlp_params(model.decoder)
            + mlp_params(model.regressor)
        )
        write_checkpoint(path, KIND_CVAE, header, arrays)
    elif isinstance(model, CaaeModel):
        header = {
            "encoder": _mlp_header(model.encoder),
            "decoder": _mlp_header(model.decoder),
            "discriminator": _mlp_header(model.discriminator),
            "regressor": _mlp_header(model.regressor),
            "lambda_recons": model.lambda_recons,
            "d_latent": model.d_latent,
        }
        arrays = (
            mlp_params(model.encoder)
            + mlp_params(model.decoder)
            + mlp_params(model.discriminator)
            + mlp_params(model.regressor)
        )
        write_checkpoint(path, KIND_CAAE, header, arrays)
    elif isinstance(model, LinearMap):
        write_checkpoint(path, KIND_LINEAR, {"fit_meta": model.fit_meta}, [model.w])
    elif isinstance(model, EmbeddingPair):
        header = {
            "sketch_net": _mlp_header(model.sketch_net),
            "image_net": _mlp_header(model.image_net),
            "embed_dim": model.embed_dim,
            "margin_or_q": model.margin_or_q,
        }
        arrays = mlp_params(model.sketch_net) + mlp_params(model.image_net)
        write_checkpoint(path, KIND_EMBEDDING, header, arrays)
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")


def load_checkpoint(path, expected_kind: str | None = None):
    """Load a checkpoint back into its model object.

    ``expected_kind`` guards against feeding one model kind into a consumer
    expecting another.
    """
    kind, header, arrays = read_checkpoint(path)
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointKindError(
            f"{path}: holds a {kind!r} checkpoint, expected {expected_kind!r}"
        )
    if kind == KIND_CVAE:
        n_enc = _mlp_array_count(header["encoder"])
        n_dec = _mlp_array_count(header["decoder"])
        return CvaeModel(
            encoder=_mlp_from_header(header["encoder"], arrays[:n_enc]),
            decoder=_mlp_from_header(header["decoder"], arrays[n_enc : n_enc + n_dec]),
            regressor=_mlp_from_header(header["regressor"], arrays[n_enc + n_dec :]),
            lambda_recons=float(header["lambda_recons"]),
            d_latent=int(header["d_latent"]),
        )
    if kind == KIND_CAAE:
        n_enc = _mlp_array_count(header["encoder"])
        n_dec = _mlp_array_count(header["decoder"])
        n_disc = _mlp_array_count(header["discriminator"])
        a, b = n_enc, n_enc + n_dec
        c = b + n_disc
        return CaaeModel(
            encoder=_mlp_from_header(header["encoder"], arrays[:a]),
            decoder=_mlp_from_header(header["decoder"], arrays[a:b]),
            discriminator=_mlp_from_header(header["discriminator"], arrays[b:c]),
            regressor=_mlp_from_header(header["regressor"], arrays[c:]),
            lambda_recons=float(header["lambda_recons"]),
            d_latent=int(header["d_latent"]),
        )
    if kind == KIND_LINEAR:
        return LinearMap(arrays[0], dict(header.get("fit_meta", {})))
    if kind == KIND_EMBEDDING:
        n_sk = _mlp_array_count(header["sketch_net"])
        return EmbeddingPair(
            sketch_net=_mlp_from_header(header["sketch_net"], arrays[:n_sk]),
            image_net=_mlp_from_header(header["image_net"], arrays[n_sk:]),
            embed_dim=int(header["embed_dim"]),
            margin_or_q=float(header["margin_or_q"]),
        )
    raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
