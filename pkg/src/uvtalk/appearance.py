"""Wrinkle maps: sigmoid-squashed per-channel ratio of a texture frame to the neutral texture."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError
from .io import load_array, save_array

EPSILON = 1e-3
CLAMP_DELTA = 1e-4


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"resolution mismatch: {a.shape} vs {b.shape}")
    if a.ndim < 3 or a.shape[-1] != 3:
        raise ValueError("expected (..., H, W, 3) arrays")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def wrinkle_encode(texture: np.ndarray, neutral: np.ndarray, epsilon: float = EPSILON) -> np.ndarray:
    """``sigmoid(texture / max(neutral, epsilon))``; accepts single frames or stacks."""
    texture = np.asarray(texture, dtype=np.float64)
    neutral = np.broadcast_to(np.asarray(neutral, dtype=np.float64), texture.shape)
    _check_pair(texture, neutral)
    return sigmoid(texture / np.maximum(neutral, epsilon))


def wrinkle_apply(
    wrinkle: np.ndarray,
    neutral: np.ndarray,
    epsilon: float = EPSILON,
    delta: float = CLAMP_DELTA,
) -> np.ndarray:
    wrinkle = np.asarray(wrinkle, dtype=np.float64)
    neutral = np.broadcast_to(np.asarray(neutral, dtype=np.float64), wrinkle.shape)
    _check_pair(wrinkle, neutral)
    ratio = logit(np.clip(wrinkle, delta, 1.0 - delta))
    return np.clip(ratio * np.maximum(neutral, epsilon), 0.0, 1.0)


def save_texture(path, rgb: np.ndarray, name: str | None = None) -> Path:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ValueError("texture frames are H x W x 3")
    return save_array(path, rgb, name=name)


def load_texture(path) -> np.ndarray:
    rgb = load_array(path)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise DataError(f"{path}: texture frames are H x W x 3, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)) or rgb.min() < 0 or rgb.max() > 1:
        raise DataError(f"{path}: texture values must be finite and within [0, 1]")
    return rgb
