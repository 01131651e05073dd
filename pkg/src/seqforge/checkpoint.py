"""Single-file binary container for checkpoints and preprocessed datasets.

Layout: 8-byte magic ``SEQFORGE``, a little-endian uint32 header length, a
UTF-8 JSON header, then each parameter's raw little-endian IEEE-754 values
concatenated in manifest order. Datasets reuse the same envelope with
``"kind": "dataset"`` and carry their examples inside the header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
import numpy as np

from .data import Example, ParallelDataset, VocabBundle
from .errors import (
    BadMagicError,
    CheckpointError,
    ManifestMismatchError,
    TruncatedFileError,
    UnknownVersionError,
)
from .model import ModelConfig, ModelParams, model_config_from_dict, shape_manifest
from .tensor import Tensor
from .trainer import TrainConfig, TrainState, train_config_from_dict

MAGIC = b"SEQFORGE"
VERSION = "1"

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


def _write_envelope(path: str, header: dict, payload: bytes) -> None:
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def _read_envelope(path: str, expect_kind: str):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC):
        raise TruncatedFileError(f"{path}: shorter than the magic header")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a SEQFORGE container")
    if len(data) < len(MAGIC) + 4:
        raise TruncatedFileError(f"{path}: missing header length")
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + header_len:
        raise TruncatedFileError(f"{path}: header cut short")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    version = header.get("version")
    if version != VERSION:
        raise UnknownVersionError(f"{path}: unknown format version {version!r}")
    kind = header.get("kind")
    if kind != expect_kind:
        raise CheckpointError(f"{path}: kind {kind!r}, expected {expect_kind!r}")
    return header, data[start + header_len :]


def save_checkpoint(
    path: str,
    params: ModelParams,
    train_config: TrainConfig,
    train_state: TrainState,
    vocabs: VocabBundle,
) -> None:
    dtype_name = str(params.dtype)
    header = {
        "version": VERSION,
        "kind": "checkpoint",
        "dtype": dtype_name,
        "model_config": model_config_to_dict(params.config),
        "train_config": train_config.__dict__.copy(),
        "train_state": train_state.to_json(),
        "vocabs": vocabs.to_json(),
        "manifest": [
            {"name": name, "shape": list(shape)} for name, shape in params.manifest
        ],
    }
    code = _DTYPE_CODES[dtype_name]
    payload = b"".join(
        params[name].data.astype(code).tobytes() for name, _ in params.manifest
    )
    _write_envelope(path, header, payload)


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    model_config: ModelConfig
    train_config: TrainConfig
    train_state: TrainState
    vocabs: VocabBundle


def load_checkpoint(path: str) -> LoadedCheckpoint:
    header, payload = _read_envelope(path, "checkpoint")
    config = model_config_from_dict(header["model_config"])
    dtype_name = header.get("dtype", "float32")
    if dtype_name not in _DTYPE_CODES:
        raise CheckpointError(f"{path}: unsupported dtype {dtype_name!r}")
    code = _DTYPE_CODES[dtype_name]
    itemsize = np.dtype(code).itemsize

    stored = [(m["name"], tuple(m["shape"])) for m in header["manifest"]]
    expected = shape_manifest(config)
    if stored != expected:
        raise ManifestMismatchError(
            f"{path}: stored manifest does not match the model configuration"
        )
    need = sum(int(np.prod(s)) for _, s in expected) * itemsize
    if len(payload) < need:
        raise TruncatedFileError(
            f"{path}: payload holds {len(payload)} bytes, manifest needs {need}"
        )
    if len(payload) > need:
        raise CheckpointError(f"{path}: {len(payload) - need} trailing bytes")

    tensors = {}
    offset = 0
    for name, shape in expected:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=code, count=count, offset=offset)
        tensors[name] = Tensor(arr.reshape(shape).copy(), requires_grad=True)
        offset += count * itemsize
    return LoadedCheckpoint(
        params=ModelParams(config, tensors),
        model_config=config,
        train_config=train_config_from_dict(header["train_config"]),
        train_state=TrainState.from_json(header["train_state"]),
        vocabs=VocabBundle.from_json(header["vocabs"]),
    )


def model_config_to_dict(config: ModelConfig) -> dict:
    out = config.__dict__.copy()
    out["feat_vocab_sizes"] = list(config.feat_vocab_sizes)
    return out


def _example_to_json(e: Example) -> list:
    return [e.src_ids, e.src_feat_ids, e.tgt_ids]


def _example_from_json(obj: list) -> Example:
    return Example(src_ids=obj[0], src_feat_ids=obj[1], tgt_ids=obj[2])


def save_dataset(path: str, dataset: ParallelDataset) -> None:
    header = {
        "version": VERSION,
        "kind": "dataset",
        "vocabs": dataset.vocabs.to_json(),
        "train": [_example_to_json(e) for e in dataset.train],
        "valid": [_example_to_json(e) for e in dataset.valid],
    }
    _write_envelope(path, header, b"")


def load_dataset(path: str) -> ParallelDataset:
    header, payload = _read_envelope(path, "dataset")
    if payload:
        raise CheckpointError(f"{path}: dataset container has {len(payload)} stray bytes")
    return ParallelDataset(
        vocabs=VocabBundle.from_json(header["vocabs"]),
        train=[_example_from_json(e) for e in header["train"]],
        valid=[_example_from_json(e) for e in header["valid"]],
    )
