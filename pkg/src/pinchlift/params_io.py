"""Binary policy parameters and trainer checkpoints.

Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON header,
then the payload as little-endian float64. The header carries a sha256 over
the header (without that field) plus the payload, so truncation or bit rot is
caught on load.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .policy import ACTION_DIM, OBS_DIM, OBS_VERSION, n_policy_params

MAGIC_PARAMS = b"PLPARAM1"
MAGIC_CHECKPOINT = b"PLCHKPT1"


class CorruptFileError(ValueError):
    pass


def _digest(header: dict, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
    h.update(payload)
    return h.hexdigest()


def _write(path, magic, header: dict, arr: np.ndarray):
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    header = dict(header)
    header["sha256"] = _digest(header, payload)
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(payload)
    os.replace(tmp, path)   # a crash never leaves a half-written file under the real name


def _read(path, magic):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CorruptFileError(f"{path}: cannot read ({e.strerror})") from None
    if blob[:8] != magic:
        raise CorruptFileError(f"{path}: bad magic, not a {magic.decode()} file")
    if len(blob) < 12:
        raise CorruptFileError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptFileError(f"{path}: unreadable header") from None
    payload = blob[12 + n:]
    want = header.pop("sha256", None)
    if want is None or _digest(header, payload) != want:
        raise CorruptFileError(f"{path}: checksum mismatch")
    if len(payload) % 8:
        raise CorruptFileError(f"{path}: payload is not a float64 array")
    return header, np.frombuffer(payload, dtype="<f8").astype(float)


def write_params(path, theta, hidden: int = 64, n_layers: int = 2, seed: int = 0,
                 iteration: int = 0, config_hash: str = ""):
    theta = np.asarray(theta, float).ravel()
    if theta.size != n_policy_params(hidden, n_layers):
        raise ValueError("parameter count does not match the declared network")
    header = {"obs_dim": OBS_DIM, "action_dim": ACTION_DIM, "hidden": int(hidden),
              "n_layers": int(n_layers), "n_params": int(theta.size), "seed": int(seed),
              "iteration": int(iteration), "obs_version": OBS_VERSION, "config_hash": config_hash}
    _write(path, MAGIC_PARAMS, header, theta)


def read_params(path) -> tuple:
    """``(theta, header)``; refuses files built for another observation layout."""
    header, theta = _read(path, MAGIC_PARAMS)
    if header.get("obs_version") != OBS_VERSION or header.get("obs_dim") != OBS_DIM:
        raise CorruptFileError(f"{path}: observation version {header.get('obs_version')} "
                               f"does not match this build ({OBS_VERSION})")
    if theta.size != header.get("n_params") or \
            theta.size != n_policy_params(header["hidden"], header["n_layers"]):
        raise CorruptFileError(f"{path}: parameter count disagrees with header")
    return theta, header


def write_checkpoint(path, theta, adam_m, adam_v, adam_t: int, meta: dict):
    """``meta`` holds the JSON-able trainer position (stage, generation, history)."""
    theta = np.asarray(theta, float).ravel()
    header = dict(meta)
    header.update({"n": int(theta.size), "adam_t": int(adam_t), "obs_version": OBS_VERSION})
    _write(path, MAGIC_CHECKPOINT, header, np.concatenate([theta, np.ravel(adam_m), np.ravel(adam_v)]))


def read_checkpoint(path) -> tuple:
    """``(theta, adam_m, adam_v, header)``."""
    header, arr = _read(path, MAGIC_CHECKPOINT)
    n = header.get("n")
    if not isinstance(n, int) or arr.size != 3 * n:
        raise CorruptFileError(f"{path}: payload size disagrees with header")
    if header.get("obs_version") != OBS_VERSION:
        raise CorruptFileError(f"{path}: observation version mismatch")
    return arr[:n].copy(), arr[n:2 * n].copy(), arr[2 * n:].copy(), header
