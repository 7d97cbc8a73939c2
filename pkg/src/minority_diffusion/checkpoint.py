"""Versioned binary checkpoints for the MLP noise predictor.

Layout: 8-byte magic, uint32-LE header length, UTF-8 JSON header, then the
flattened parameters as little-endian float64 in layer order (W1, b1, W2, ...).
The header records layer sizes, the schedule fingerprint and the training
seed; loading validates all three so a checkpoint cannot silently be reused
with a different diffusion process.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .models import MlpEpsModel
from .schedule import NoiseSchedule

MAGIC = b"EPSMLP\x00\x01"
FORMAT_VERSION = 1


def save_checkpoint(model: MlpEpsModel, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "dim": model.dim,
        "hidden": list(model.hidden),
        "emb_dim": model.emb_dim,
        "layer_sizes": model.layer_sizes,
        "schedule_fingerprint": model.sched.fingerprint(),
        "train_seed": model.seed,
        "step_count": model.step_count,
    }
    flat = np.concatenate([p.ravel() for p in model.parameters()])
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_checkpoint(path, sched: NoiseSchedule) -> MlpEpsModel:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        header = json.loads(raw[off : off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    off += hlen
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint version {header.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    if header["schedule_fingerprint"] != sched.fingerprint():
        raise CheckpointError(
            "checkpoint was trained against a different noise schedule "
            f"({header['schedule_fingerprint'][:12]}... != {sched.fingerprint()[:12]}...)"
        )
    model = MlpEpsModel(
        sched,
        dim=header["dim"],
        hidden=tuple(header["hidden"]),
        emb_dim=header["emb_dim"],
        seed=header["train_seed"],
    )
    model.step_count = header.get("step_count", 0)
    flat = np.frombuffer(raw[off:], dtype="<f8")
    expected = sum(p.size for p in model.parameters())
    if flat.size != expected:
        raise CheckpointError(
            f"truncated checkpoint: {flat.size} parameters, expected {expected}"
        )
    pos = 0
    for p in model.parameters():
        p[...] = flat[pos : pos + p.size].reshape(p.shape)
        pos += p.size
    return model
