"""Versioned, checksummed checkpoint container.

Layout: magic `UDSRCKPT`, u32 format version, 32-byte SHA-256 of the
payload, then the pickled state dict. The state carries parameter arrays
by group, optimizer state, update counter, stage id, and the codebook
fingerprint (K, seed); loading refuses mismatched fingerprints.
"""

from __future__ import annotations

import hashlib
import pickle
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigMismatchError, CorruptFileError, VersionError

MAGIC = b"UDSRCKPT"
FORMAT_VERSION = 1


def model_state(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_model_state(model: torch.nn.Module, state: dict[str, np.ndarray]) -> None:
    model.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in state.items()})


def state_checksum(state: dict) -> str:
    """SHA-256 over all array content in sorted key order."""
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode())
        value = state[key]
        if isinstance(value, dict):
            h.update(state_checksum(value).encode())
        elif isinstance(value, np.ndarray):
            h.update(str(value.dtype).encode())
            h.update(str(value.shape).encode())
            h.update(np.ascontiguousarray(value).tobytes())
        else:
            h.update(repr(value).encode())
    return h.hexdigest()


def save_checkpoint(state: dict, path: str | Path) -> Path:
    path = Path(path)
    payload = pickle.dumps(state, protocol=4)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(digest)
        f.write(payload)
    return path


def load_checkpoint(
    path: str | Path, expected_codebook_fingerprint: tuple[int, int] | None = None
) -> dict:
    path = Path(path)
    blob = path.read_bytes()
    header = len(MAGIC) + 4 + 32
    if len(blob) < header or blob[: len(MAGIC)] != MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    digest = blob[len(MAGIC) + 4 : header]
    payload = blob[header:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptFileError(f"{path}: checksum mismatch (truncated or corrupted)")
    state = pickle.loads(payload)
    if expected_codebook_fingerprint is not None:
        got = tuple(state.get("codebook_fingerprint", ()))
        if got != tuple(expected_codebook_fingerprint):
            raise ConfigMismatchError(
                f"{path}: checkpoint codebook fingerprint {got} != "
                f"expected {tuple(expected_codebook_fingerprint)}"
            )
    return state
