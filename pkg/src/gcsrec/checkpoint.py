"""Versioned binary checkpoint format for model parameters.

Layout (all little-endian):

    line 1: ``GCSR1`` magic
    line 2: JSON header with the format version, the model config block,
            vocabulary sizes, the array manifest (name + shape, in file
            order), and the sha256 of the payload
    then:   the named arrays' raw float64 buffers, concatenated in
            manifest order

The payload hash is verified on load, and the stored model config is
validated against the array shapes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import numpy as np

from .autodiff import Tensor
from .config import ModelConfig
from .model import ModelParams

MAGIC = b"GCSR1\n"


def save_params(path: str, params: ModelParams) -> None:
    manifest = [{"name": n, "shape": list(t.shape)} for n, t in params.named()]
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes()
                       for _, t in params.named())
    header = {
        "version": 1,
        "model": asdict(params.cfg),
        "item_count": params.item_count,
        "user_count": params.user_count,
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_params(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload checksum mismatch")

    cfg = ModelConfig(**header["model"])
    arrays: dict[str, Tensor] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        buf = payload[offset:offset + size]
        if len(buf) != size:
            raise ValueError(f"{path}: truncated payload at array {entry['name']}")
        arrays[entry["name"]] = Tensor(
            np.frombuffer(buf, dtype="<f8").reshape(shape).copy(), name=entry["name"])
        offset += size
    if offset != len(payload):
        raise ValueError(f"{path}: trailing bytes in payload")

    params = ModelParams(arrays, cfg, header["item_count"], header["user_count"])
    expected = (params.item_count + 1, cfg.dim)
    if params.item_emb.shape != expected:
        raise ValueError(f"{path}: item table shape {params.item_emb.shape} "
                         f"does not match config {expected}")
    return params


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
