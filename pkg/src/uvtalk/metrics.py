"""Motion and texture evaluation metrics, plus temporal dynamics statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 99.0


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    return pred, ref


def _mask(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        idx = mask.astype(np.int64)
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
    if mask.shape != (n,):
        raise ValueError(f"mask must cover {n} vertices")
    if not mask.any():
        raise ValueError("mask selects no vertices")
    return mask


def lve(pred, ref, lip_mask) -> float:
    """Mean over frames of the maximal lip-vertex L2 error (mm)."""
    pred, ref = _pair(pred, ref)
    m = _mask(lip_mask, pred.shape[1])
    err = np.linalg.norm(pred[:, m] - ref[:, m], axis=-1)
    return float(err.max(axis=1).mean())


def mve(pred, ref, reduction: str = "mean") -> float:
    """Full-face vertex error (mm); ``reduction`` over vertices is ``mean`` (primary) or ``max``."""
    pred, ref = _pair(pred, ref)
    err = np.linalg.norm(pred - ref, axis=-1)
    per_frame = err.mean(axis=1) if reduction == "mean" else err.max(axis=1)
    return float(per_frame.mean())


def fdd(pred, ref, upper_mask, absolute: bool = False) -> float:
    """Mean over upper-face vertices of std_t|pred| - std_t|ref| (population std, signed)."""
    pred, ref = _pair(pred, ref)
    if pred.shape[0] < 2:
        raise ValueError("FDD needs at least two frames")
    m = _mask(upper_mask, pred.shape[1])
    sp = np.linalg.norm(pred[:, m], axis=-1).std(axis=0)
    sr = np.linalg.norm(ref[:, m], axis=-1).std(axis=0)
    d = sp - sr
    return float(np.abs(d).mean() if absolute else d.mean())


def psnr(pred_frames, ref_frames, cap: float = PSNR_CAP_DB) -> tuple[float, bool]:
    """Frame-averaged ``10 log10(1 / MSE)`` for [0, 1] images; returns ``(value, capped)``."""
    pred, ref = _pair(pred_frames, ref_frames)
    if pred.ndim == 3:
        pred, ref = pred[None], ref[None]
    mse = ((pred - ref) ** 2).reshape(pred.shape[0], -1).mean(axis=1)
    capped = mse == 0
    vals = np.where(capped, cap, 10.0 * np.log10(1.0 / np.where(capped, 1.0, mse)))
    return float(np.minimum(vals, cap).mean()), bool(capped.any())


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _ssim_single(x: np.ndarray, y: np.ndarray, data_range: float, k1: float, k2: float, win: np.ndarray) -> float:
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    pad = win.size // 2

    def filt(img):
        out = correlate1d(img, win, axis=0, mode="reflect")
        out = correlate1d(out, win, axis=1, mode="reflect")
        return out[pad:-pad, pad:-pad] if min(img.shape[:2]) > 2 * pad else out

    vals = []
    for ch in range(x.shape[-1]):
        a, b = x[..., ch], y[..., ch]
        mu_a, mu_b = filt(a), filt(b)
        saa = filt(a * a) - mu_a ** 2
        sbb = filt(b * b) - mu_b ** 2
        sab = filt(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


def ssim(pred_frames, ref_frames, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Gaussian-window (11x11, sigma 1.5) SSIM averaged over channels, then frames."""
    pred, ref = _pair(pred_frames, ref_frames)
    if pred.ndim == 3:
        pred, ref = pred[None], ref[None]
    win = _gaussian_window()
    return float(np.mean([_ssim_single(p, r, data_range, k1, k2, win) for p, r in zip(pred, ref)]))


def temporal_dynamics(sequence) -> np.ndarray:
    """Per element (vertex or pixel), mean over t of ||x_{t+1} - x_t|| over the trailing channel axis."""
    x = np.asarray(sequence, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("temporal dynamics need at least two frames")
    return np.linalg.norm(np.diff(x, axis=0), axis=-1).mean(axis=0)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / den) if den > 0 else 0.0


@dataclass
class MetricReport:
    lve_mm: float = 0.0
    mve_mm: float = 0.0
    mve_max_mm: float = 0.0
    fdd_mm: float = 0.0
    fdd_abs_mm: float = 0.0
    psnr_db: float | None = None
    psnr_capped: bool = False
    ssim: float | None = None
    perceptual: float | None = None
    perceptual_backend: str | None = None
    per_sequence: list[dict] = field(default_factory=list)
    variants: dict = field(default_factory=lambda: {
        "mve": "mean over vertices (max variant in mve_max_mm)",
        "fdd": "signed, population std (absolute variant in fdd_abs_mm)",
        "psnr_cap_db": PSNR_CAP_DB,
    })


def evaluate_pairs(pairs: list[dict], lip_mask, upper_mask, perceptual=None) -> MetricReport:
    """Aggregate metrics over sequences.

    Each pair dict has ``name``, ``pred_motion``/``ref_motion`` ``(T, n, 3)`` and
    optionally ``pred_texture``/``ref_texture`` ``(T, H, W, 3)`` in [0, 1].
    Sequences are reported in the given order; aggregates are plain means.
    """
    rows = []
    for p in pairs:
        T = min(len(p["pred_motion"]), len(p["ref_motion"]))
        pm, rm = p["pred_motion"][:T], p["ref_motion"][:T]
        row = {
            "name": p["name"], "frames": int(T),
            "lve_mm": lve(pm, rm, lip_mask), "mve_mm": mve(pm, rm), "mve_max_mm": mve(pm, rm, "max"),
            "fdd_mm": fdd(pm, rm, upper_mask) if T >= 2 else 0.0,
            "fdd_abs_mm": fdd(pm, rm, upper_mask, absolute=True) if T >= 2 else 0.0,
        }
        if p.get("pred_texture") is not None and p.get("ref_texture") is not None:
            pt, rt = p["pred_texture"][:T], p["ref_texture"][:T]
            row["psnr_db"], row["psnr_capped"] = psnr(pt, rt)
            row["ssim"] = ssim(pt, rt)
            if perceptual is not None:
                row["perceptual"] = float(perceptual(pt, rt))
        rows.append(row)
    rep = MetricReport(per_sequence=rows)
    if rows:
        for key in ("lve_mm", "mve_mm", "mve_max_mm", "fdd_mm", "fdd_abs_mm"):
            setattr(rep, key, float(np.mean([r[key] for r in rows])))
        tex = [r for r in rows if "psnr_db" in r]
        if tex:
            rep.psnr_db = float(np.mean([r["psnr_db"] for r in tex]))
            rep.psnr_capped = any(r["psnr_capped"] for r in tex)
            rep.ssim = float(np.mean([r["ssim"] for r in tex]))
            if perceptual is not None:
                rep.perceptual = float(np.mean([r["perceptual"] for r in tex]))
                rep.perceptual_backend = getattr(perceptual, "backend", type(perceptual).__name__)
    return rep
