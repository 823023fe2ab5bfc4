"""Noise schedules and the closed-form forward (noising) process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class NoiseSchedule:
    kind: str
    alphas_bar: np.ndarray  # (N + 1,), alphas_bar[0] == 1

    def __post_init__(self):
        ab = np.asarray(self.alphas_bar, dtype=np.float64)
        self.alphas_bar = ab
        if ab[0] != 1.0:
            raise ValueError("alphas_bar[0] must be 1")
        if not np.all(np.diff(ab) < 0) or ab[-1] <= 0:
            raise ValueError("alphas_bar must be strictly decreasing within (0, 1]")
        if ab[-1] >= 0.05:
            raise ValueError(f"alphas_bar[N] = {ab[-1]:.4f} leaves too much signal (must be < 0.05)")

    @property
    def N(self) -> int:
        return self.alphas_bar.size - 1

    @property
    def betas(self) -> np.ndarray:
        """``betas[n - 1]`` is the step-``n`` variance, ``n = 1..N``."""
        return 1.0 - self.alphas_bar[1:] / self.alphas_bar[:-1]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alphas_bar": self.alphas_bar.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(d["kind"], np.asarray(d["alphas_bar"], dtype=np.float64))


def make_schedule(N: int, kind: str = "cosine", beta_start: float | None = None,
                  beta_end: float | None = None, cosine_offset: float = 0.008) -> NoiseSchedule:
    """Cosine (offset ``s = 0.008``, betas clipped at 0.999) or linear-beta schedule.

    Linear endpoints default to the 1000-step values ``(1e-4, 0.02)`` rescaled by
    ``1000 / N`` so short schedules still end near pure noise.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if kind == "linear":
        scale = 1000.0 / N
        lo = beta_start if beta_start is not None else min(scale * 1e-4, 0.999)
        hi = beta_end if beta_end is not None else min(scale * 0.02, 0.999)
        betas = np.linspace(lo, hi, N)
    elif kind == "cosine":
        t = np.arange(N + 1) / N
        f = np.cos((t + cosine_offset) / (1.0 + cosine_offset) * np.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alphas_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(kind, alphas_bar)


def q_sample(x0, n, noise, schedule: NoiseSchedule):
    """``sqrt(ab[n]) * x0 + sqrt(1 - ab[n]) * noise``; ``n`` is a scalar or one step per leading row.

    Works on numpy arrays and torch tensors alike.
    """
    if tuple(np.shape(x0)) != tuple(np.shape(noise)):
        raise ValueError(f"noise shape {tuple(np.shape(noise))} != sample shape {tuple(np.shape(x0))}")
    n_arr = np.asarray(n.cpu() if isinstance(n, torch.Tensor) else n)
    if np.any(n_arr < 0) or np.any(n_arr > schedule.N):
        raise ValueError(f"diffusion step outside [0, {schedule.N}]")
    ab = schedule.alphas_bar[n_arr]
    if n_arr.ndim:
        ab = ab.reshape(ab.shape + (1,) * (np.ndim(x0) - ab.ndim))
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if isinstance(x0, torch.Tensor):
        a = torch.as_tensor(a, dtype=x0.dtype)
        b = torch.as_tensor(b, dtype=x0.dtype)
    return a * x0 + b * noise
