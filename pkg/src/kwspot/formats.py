"""Binary artifact formats (all little-endian).

KWFE  feature dump: magic, u32 version, u32 rows, u32 cols, f32 row-major
      payload; a JSON sidecar (same path + ".json") carries kind/hop/source.
KWTE  template: magic, u32 version, u32 L, u32 D, f32 row-major frames,
      then a JSON trailer {keyword, source_duration_s, frame_hop_s}.
KWEM  embedder model: magic, u32 version, u32 D_emb, u32 N_kw, u32 N_pos,
      u32 N_cluster, f64 scale, f32 weights (64 x D_emb), f32 bias (D_emb),
      f32 centers row-major, then a JSON trailer (label space, N_pos, config).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1
FEATURE_MAGIC = b"KWFE"
TEMPLATE_MAGIC = b"KWTE"
MODEL_MAGIC = b"KWEM"


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _check_magic(fh, magic: bytes, path) -> int:
    got = _read_exact(fh, 4, "magic")
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return version


def write_feature_dump(path: str | Path, matrix: np.ndarray, sidecar: dict) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    rows, cols = matrix.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, rows, cols))
        fh.write(matrix.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_feature_dump(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        _check_magic(fh, FEATURE_MAGIC, path)
        rows, cols = struct.unpack("<II", _read_exact(fh, 8, "shape"))
        payload = _read_exact(fh, 4 * rows * cols, "payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return matrix, sidecar


def write_template_file(path: str | Path, frames: np.ndarray, keyword: str,
                        source_duration_s: float, frame_hop_s: float) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    rows, cols = frames.shape
    trailer = {"keyword": keyword, "source_duration_s": source_duration_s,
               "frame_hop_s": frame_hop_s}
    with open(path, "wb") as fh:
        fh.write(TEMPLATE_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, rows, cols))
        fh.write(frames.tobytes())
        fh.write(json.dumps(trailer, sort_keys=True).encode("utf-8"))


def read_template_file(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        _check_magic(fh, TEMPLATE_MAGIC, path)
        rows, cols = struct.unpack("<II", _read_exact(fh, 8, "shape"))
        payload = _read_exact(fh, 4 * rows * cols, "payload")
        trailer_raw = fh.read()
    frames = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    try:
        trailer = json.loads(trailer_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON trailer: {exc}") from exc
    for key in ("keyword", "source_duration_s", "frame_hop_s"):
        if key not in trailer:
            raise FormatError(f"{path}: trailer lacks {key!r}")
    return frames, trailer


def write_model_file(path: str | Path, weight: np.ndarray, bias: np.ndarray,
                     centers: np.ndarray, scale: float, trailer: dict) -> None:
    weight = np.ascontiguousarray(weight, dtype="<f4")
    bias = np.ascontiguousarray(bias, dtype="<f4")
    centers = np.ascontiguousarray(centers, dtype="<f4")
    n_cluster, n_kw, n_pos, d_emb = centers.shape
    if weight.shape != (64, d_emb) or bias.shape != (d_emb,):
        raise FormatError(f"weight/bias shapes {weight.shape}/{bias.shape} do not "
                          f"match D_emb={d_emb}")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIIII", FORMAT_VERSION, d_emb, n_kw, n_pos, n_cluster))
        fh.write(struct.pack("<d", float(scale)))
        fh.write(weight.tobytes())
        fh.write(bias.tobytes())
        fh.write(centers.tobytes())
        fh.write(json.dumps(trailer, sort_keys=True).encode("utf-8"))


def read_model_file(path: str | Path):
    path = Path(path)
    with open(path, "rb") as fh:
        _check_magic(fh, MODEL_MAGIC, path)
        d_emb, n_kw, n_pos, n_cluster = struct.unpack("<IIII", _read_exact(fh, 16, "dims"))
        (scale,) = struct.unpack("<d", _read_exact(fh, 8, "scale"))
        weight = np.frombuffer(_read_exact(fh, 4 * 64 * d_emb, "weights"),
                               dtype="<f4").reshape(64, d_emb)
        bias = np.frombuffer(_read_exact(fh, 4 * d_emb, "bias"), dtype="<f4")
        n_centers = n_cluster * n_kw * n_pos * d_emb
        centers = np.frombuffer(_read_exact(fh, 4 * n_centers, "centers"),
                                dtype="<f4").reshape(n_cluster, n_kw, n_pos, d_emb)
        trailer_raw = fh.read()
    try:
        trailer = json.loads(trailer_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON trailer: {exc}") from exc
    return (weight.astype(np.float64), bias.astype(np.float64),
            centers.astype(np.float64), float(scale), trailer)
