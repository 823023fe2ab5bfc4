"""On-disk containers: f32 named arrays with JSON sidecars, WAV audio, JSON helpers."""

from __future__ import annotations

import hashlib
import json
import os
import wave
from pathlib import Path

import numpy as np

from .errors import DataError as DataFormatError

PathLike = str | os.PathLike


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_array(path: PathLike, array: np.ndarray, name: str | None = None, extra: dict | None = None) -> Path:
    """Write ``array`` as raw little-endian f32 plus a ``<file>.json`` sidecar.

    The sidecar holds ``{name, dtype: "f32", shape}`` plus any ``extra`` keys.
    ``path`` should end in ``.f32``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(data.tobytes())
    meta = {"name": name or path.stem, "dtype": "f32", "shape": list(data.shape)}
    if extra:
        meta.update(extra)
    _sidecar(path).write_text(json.dumps(meta, sort_keys=True))
    return path


def load_array(path: PathLike) -> np.ndarray:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise DataFormatError(f"missing sidecar {side}")
    meta = json.loads(side.read_text())
    if meta.get("dtype") != "f32":
        raise DataFormatError(f"{side}: unsupported dtype {meta.get('dtype')!r}")
    shape = tuple(int(s) for s in meta["shape"])
    raw = path.read_bytes()
    if len(raw) != 4 * int(np.prod(shape, dtype=np.int64)):
        raise DataFormatError(f"{path}: {len(raw)} bytes does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def array_meta(path: PathLike) -> dict:
    return json.loads(_sidecar(Path(path)).read_text())


def write_wav(path: PathLike, samples: np.ndarray, sample_rate: int) -> Path:
    """16-bit PCM mono."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32767.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.astype("<i2").tobytes())
    return path


def read_wav(path: PathLike) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise DataFormatError(f"{path}: only 16-bit PCM is supported")
        n_ch = w.getnchannels()
        sr = w.getframerate()
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32767.0
    if n_ch > 1:
        pcm = pcm.reshape(-1, n_ch).mean(axis=1)
    return pcm, sr


def write_json(path: PathLike, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: PathLike):
    return json.loads(Path(path).read_text())


def file_sha256(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
