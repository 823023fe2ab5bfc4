"""Codebook nearest-neighbour quantization (numpy reference and torch module with straight-through)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class Codebook:
    entries: np.ndarray  # (C, d)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValueError("codebook needs at least 2 entries of shape (C, d)")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("codebook entries must be finite")

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass
class LatentGrid:
    values: np.ndarray  # (h, w, d)
    quantized: bool = False
    indices: np.ndarray | None = None  # (h, w) when quantized

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.quantized != (self.indices is not None):
            raise ValueError("indices are present iff the grid is quantized")


def nearest_indices(vectors: np.ndarray, entries: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the L2-nearest entry for every row of ``vectors``; ties go to the lowest index."""
    vectors = np.asarray(vectors, dtype=np.float64)
    out = np.empty(vectors.shape[0], dtype=np.int64)
    for s in range(0, vectors.shape[0], chunk):
        diff = vectors[s : s + chunk, None, :] - entries[None, :, :]
        out[s : s + chunk] = np.argmin(np.einsum("ncd,ncd->nc", diff, diff), axis=1)
    return out


def quantize(latent: LatentGrid, codebook: Codebook) -> LatentGrid:
    if latent.quantized:
        raise ValueError("latent is already quantized")
    if latent.values.shape[-1] != codebook.dim:
        raise ValueError(f"latent dim {latent.values.shape[-1]} != codebook dim {codebook.dim}")
    h, w, d = latent.values.shape
    idx = nearest_indices(latent.values.reshape(-1, d), codebook.entries).reshape(h, w)
    return LatentGrid(codebook.entries[idx].copy(), quantized=True, indices=idx)


class VectorQuantizer(nn.Module):
    """Loss-based VQ layer: nearest entry lookup, codebook + commitment terms, straight-through gradient."""

    def __init__(self, size: int, dim: int, beta: float = 0.25):
        super().__init__()
        self.size, self.dim, self.beta = size, dim, beta
        self.embedding = nn.Embedding(size, dim)
        nn.init.uniform_(self.embedding.weight, -1.0 / size, 1.0 / size)

    def indices(self, z: torch.Tensor) -> torch.Tensor:
        """``z`` is ``(B, d, h, w)``; returns ``(B, h, w)`` indices."""
        flat = z.permute(0, 2, 3, 1).reshape(-1, self.dim)
        w = self.embedding.weight
        d2 = (flat.pow(2).sum(1, keepdim=True) - 2.0 * flat @ w.t() + w.pow(2).sum(1)[None, :])
        return d2.argmin(dim=1).view(z.shape[0], z.shape[2], z.shape[3])

    def lookup(self, idx: torch.Tensor) -> torch.Tensor:
        return self.embedding(idx).permute(0, 3, 1, 2).contiguous()

    def forward(self, z: torch.Tensor):
        idx = self.indices(z)
        z_q = self.lookup(idx)
        code_loss = (z.detach() - z_q).pow(2).mean() + self.beta * (z - z_q.detach()).pow(2).mean()
        z_st = straight_through(z, z_q)
        return z_st, code_loss, idx


def straight_through(z: torch.Tensor, z_q: torch.Tensor) -> torch.Tensor:
    """Forward value ``z_q``, gradient w.r.t. ``z`` of the identity."""
    return z + (z_q - z).detach()
