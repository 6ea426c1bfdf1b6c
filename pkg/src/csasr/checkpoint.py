"""Binary checkpoint format.

Layout: ``b"CSASR"`` + one version byte, a little-endian uint32 header
length, a UTF-8 JSON header holding the configs and the ordered
tensor table, then every tensor's raw little-endian samples in header
order: parameters first, then Adam first and second moments.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig, config_from_dict

MAGIC = b"CSASR"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    epoch: int = 0
    iteration: int = 0
    rng_state: dict | None = None
    best_psnr: float | None = None
    format_version: int = FORMAT_VERSION


def encode(ckpt: Checkpoint) -> bytes:
    table = []
    blobs = []
    for section, arrays in (("param", ckpt.params), ("m", ckpt.adam_m), ("v", ckpt.adam_v)):
        for name, arr in arrays.items():
            dtype = np.dtype(arr.dtype).name
            if dtype not in _DTYPES:
                raise CheckpointFormatError(f"{name}: unsupported dtype {dtype}")
            table.append({"name": name, "section": section, "shape": list(arr.shape), "dtype": dtype})
            blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = {
        "model_config": dataclasses.asdict(ckpt.model_config),
        "train_config": dataclasses.asdict(ckpt.train_config),
        "adam_t": ckpt.adam_t,
        "epoch": ckpt.epoch,
        "iteration": ckpt.iteration,
        "rng_state": ckpt.rng_state,
        "best_psnr": ckpt.best_psnr,
        "tensors": table,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(raw)) + raw + b"".join(blobs)


def decode(buf: bytes, expected: dict[str, tuple[int, ...]] | None = None) -> Checkpoint:
    if len(buf) < len(MAGIC) + 5:
        raise CheckpointTruncatedError(f"checkpoint is {len(buf)} bytes, shorter than its preamble")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    version = buf[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC) + 1)
    start = len(MAGIC) + 5
    if len(buf) < start + hlen:
        raise CheckpointTruncatedError("checkpoint header is truncated")
    header = json.loads(buf[start:start + hlen].decode("utf-8"))
    offset = start + hlen
    sections: dict[str, dict[str, np.ndarray]] = {"param": {}, "m": {}, "v": {}}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if len(buf) < offset + nbytes:
            raise CheckpointTruncatedError(f"tensor {entry['name']!r} is truncated")
        arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(shape)
        sections[entry["section"]][entry["name"]] = arr.astype(entry["dtype"])
        offset += nbytes
    if offset != len(buf):
        raise CheckpointFormatError(f"{len(buf) - offset} trailing bytes after the last tensor")
    if expected is not None:
        found = {k: v.shape for k, v in sections["param"].items()}
        if found != {k: tuple(v) for k, v in expected.items()}:
            want = sorted((k, tuple(v)) for k, v in expected.items())
            have = sorted(found.items())
            raise CheckpointShapeError(
                "checkpoint parameters do not match the model config\n"
                f"  config expects: {want}\n  checkpoint has: {have}"
            )
    return Checkpoint(
        model_config=config_from_dict(ModelConfig, header["model_config"]),
        train_config=config_from_dict(TrainConfig, header["train_config"]),
        params=sections["param"],
        adam_m=sections["m"],
        adam_v=sections["v"],
        adam_t=header["adam_t"],
        epoch=header["epoch"],
        iteration=header["iteration"],
        rng_state=header["rng_state"],
        best_psnr=header["best_psnr"],
        format_version=version,
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected: dict[str, tuple[int, ...]] | None = None) -> Checkpoint:
    return decode(Path(path).read_bytes(), expected)
