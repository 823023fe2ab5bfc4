"""Style pivots: time-averaged continuous latents, and offset <-> latent composition."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError
from .io import array_meta, load_array, save_array

STREAMS = ("motion", "wrinkle")


@dataclass
class StylePivot:
    vector: np.ndarray  # (h*w*d,)
    stream: str
    identity: str = ""
    frames: int = 0
    codec_hash: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("pivot must be finite")

    def save(self, path) -> Path:
        return save_array(path, self.vector, name=f"pivot_{self.stream}", extra={
            "stream": self.stream, "identity": self.identity, "frames": int(self.frames),
            "codec_hash": self.codec_hash,
        })

    @classmethod
    def load(cls, path, expect_stream: str | None = None, codec_hash: str | None = None) -> "StylePivot":
        meta = array_meta(path)
        pivot = cls(load_array(path).astype(np.float64), meta["stream"], meta.get("identity", ""),
                    int(meta.get("frames", 0)), meta.get("codec_hash", ""))
        if expect_stream is not None and pivot.stream != expect_stream:
            raise CheckpointMismatchError(f"{path}: expected a {expect_stream} pivot, got {pivot.stream}")
        if codec_hash is not None and pivot.codec_hash != codec_hash:
            raise CheckpointMismatchError(
                f"{path}: pivot was computed with codec {pivot.codec_hash}, not {codec_hash}")
        return pivot


def _flat(latents) -> np.ndarray:
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim == 1:
        z = z[None]
    return z.reshape(z.shape[0], -1)


def compute_pivot(latents, stream: str = "motion", identity: str = "", codec_hash: str = "") -> StylePivot:
    """Arithmetic mean over time of pre-quantization latents ``(T, ...)``."""
    z = _flat(latents)
    if z.shape[0] == 0:
        raise ValueError("cannot compute a pivot from an empty sequence")
    return StylePivot(z.mean(axis=0), stream, identity, z.shape[0], codec_hash)


def to_offsets(latents, pivot) -> np.ndarray:
    z = _flat(latents)
    p = np.asarray(getattr(pivot, "vector", pivot), dtype=np.float64).reshape(-1)
    if z.shape[1] != p.size:
        raise ValueError(f"latent dim {z.shape[1]} != pivot dim {p.size}")
    return z - p


def from_offsets(offsets, pivot) -> np.ndarray:
    dz = _flat(offsets)
    p = np.asarray(getattr(pivot, "vector", pivot), dtype=np.float64).reshape(-1)
    if dz.shape[1] != p.size:
        raise ValueError(f"offset dim {dz.shape[1]} != pivot dim {p.size}")
    return dz + p
