"""Bit-exact model checkpoints.

A checkpoint is a single JSON file: format version, model kind, the
generating config, the dataset manifest hash, and every parameter array as
base64-encoded little-endian float64 bytes with an explicit shape. Loading
a checkpoint restores arrays bit-for-bit; a version mismatch is refused.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fusion import FusionNetParams
from .lstm import GATE_NAMES, LstmLayerParams, LstmStack

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str  # lstm-spatial | lstm-motion | fusion
    config: dict
    manifest_hash: str
    params: dict[str, np.ndarray]


def _encode_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(obj: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(x) for x in obj["shape"])
        if obj["dtype"] != "<f8":
            raise DataError(f"parameter {name!r}: unsupported dtype {obj['dtype']!r}")
        raw = base64.b64decode(obj["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"parameter {name!r}: malformed checkpoint entry ({exc})") from exc
    expected = 8 * int(np.prod(shape)) if shape else 8
    if len(raw) != expected:
        raise DataError(f"parameter {name!r}: payload size {len(raw)} != expected {expected}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path: str, kind: str, named_params, config: dict,
                    manifest_hash: str) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "manifest_hash": manifest_hash,
        "params": {name: _encode_array(arr) for name, arr in named_params},
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path!r}: invalid checkpoint JSON at line {exc.lineno}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"{path!r}: checkpoint format version {version!r} not supported "
            f"(this build reads version {FORMAT_VERSION})")
    try:
        params = {name: _decode_array(obj, name) for name, obj in doc["params"].items()}
        return Checkpoint(kind=str(doc["kind"]), config=dict(doc["config"]),
                          manifest_hash=str(doc["manifest_hash"]), params=params)
    except KeyError as exc:
        raise DataError(f"{path!r}: checkpoint missing field {exc}") from exc


def lstm_from_params(params: dict[str, np.ndarray]) -> LstmStack:
    """Rebuild a stack from checkpoint arrays (names as in named_parameters)."""
    n_layers = 0
    while f"layers.{n_layers}.w_xi" in params:
        n_layers += 1
    if n_layers == 0 or "head.w" not in params:
        raise DataError("checkpoint does not contain an LSTM parameter set")
    layers = []
    for idx in range(n_layers):
        arrays = {name: params[f"layers.{idx}.{name}"] for name in GATE_NAMES}
        layers.append(LstmLayerParams(**arrays))
    return LstmStack(layers=layers, w_head=params["head.w"], b_head=params["head.b"])


def fusion_from_params(params: dict[str, np.ndarray], hidden: str = "relu") -> FusionNetParams:
    try:
        return FusionNetParams(
            w_spatial=params["branch.spatial.w"], b_spatial=params["branch.spatial.b"],
            w_motion=params["branch.motion.w"], b_motion=params["branch.motion.b"],
            w_audio=params["branch.audio.w"], b_audio=params["branch.audio.b"],
            w_fuse=params["fuse.w"], b_fuse=params["fuse.b"],
            w_head=params["head.w"], b_head=params["head.b"],
            hidden=hidden)
    except KeyError as exc:
        raise DataError(f"checkpoint missing fusion parameter {exc}") from exc
