"""Per-frame audio features: a log-mel filterbank backend, external dumps, and frame alignment."""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .io import array_meta, load_array, read_wav


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @classmethod
    def from_wav(cls, path) -> "AudioClip":
        samples, sr = read_wav(path)
        return cls(samples, sr)


@dataclass
class AudioFeatureSequence:
    features: np.ndarray  # (L, d_a)
    frame_rate: float


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``, peak weight 1 at each centre."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_band_centers(n_mels: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = sample_rate / 2.0 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


class LogMelBackend:
    """80-band log-mel filterbank over 25 ms Hann windows.

    ``hop_ms`` must give a feature rate of at least the video frame rate; the
    default 10 ms (100 Hz) covers anything up to 100 fps.
    """

    name = "logmel"

    def __init__(self, sample_rate: int = 16000, n_mels: int = 80, win_ms: float = 25.0,
                 hop_ms: float = 10.0, n_fft: int = 512, floor: float = 1e-10):
        self.sample_rate = int(sample_rate)
        self.n_mels = n_mels
        self.win = int(round(win_ms * sample_rate / 1000.0))
        self.hop = int(round(hop_ms * sample_rate / 1000.0))
        self.n_fft = max(n_fft, self.win)
        self.floor = floor
        self.window = np.hanning(self.win + 1)[:-1]
        self.filters = mel_filterbank(n_mels, self.n_fft, self.sample_rate)

    @property
    def dim(self) -> int:
        return self.n_mels

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def __call__(self, clip: AudioClip) -> AudioFeatureSequence:
        x = clip.samples
        if clip.sample_rate != self.sample_rate:
            g = gcd(int(clip.sample_rate), self.sample_rate)
            x = resample_poly(x, self.sample_rate // g, int(clip.sample_rate) // g)
        if x.size < self.win:
            x = np.pad(x, (0, self.win - x.size))
        n_frames = 1 + (x.size - self.win) // self.hop
        idx = np.arange(self.win)[None, :] + self.hop * np.arange(n_frames)[:, None]
        frames = x[idx] * self.window
        power = np.abs(np.fft.rfft(frames, n=self.n_fft, axis=1)) ** 2
        mel = power @ self.filters.T
        return AudioFeatureSequence(np.log(np.maximum(mel, self.floor)), self.frame_rate)


class NamedArrayBackend:
    """Features precomputed offline (e.g. by a pretrained speech encoder) and dumped as f32 named arrays.

    The sidecar must carry ``frame_rate``; the clip argument is only used for validation.
    """

    name = "named-array"

    def __init__(self, path):
        self.path = path
        self.features = load_array(path).astype(np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"{path}: feature dump must be (L, d)")
        meta = array_meta(path)
        if "frame_rate" not in meta:
            raise ValueError(f"{path}: sidecar lacks frame_rate")
        self._frame_rate = float(meta["frame_rate"])

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def frame_rate(self) -> float:
        return self._frame_rate

    def __call__(self, clip: AudioClip | None = None) -> AudioFeatureSequence:
        return AudioFeatureSequence(self.features.copy(), self._frame_rate)


def extract_features(clip: AudioClip, backend=None) -> AudioFeatureSequence:
    if clip.samples.size == 0:
        raise ValueError("empty audio clip")
    backend = backend or LogMelBackend()
    return backend(clip)


def align_features(features, T: int) -> np.ndarray:
    """Linearly resample a feature sequence onto ``T`` uniformly spaced frames.

    The first and last rows are kept exactly (``T == 1`` keeps the first row).
    """
    feats = features.features if isinstance(features, AudioFeatureSequence) else features
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    L = feats.shape[0]
    if L < 1 or T < 1:
        raise ValueError("need at least one feature row and T >= 1")
    if L == T:
        return feats.copy()
    if L == 1:
        return np.repeat(feats, T, axis=0)
    pos = np.linspace(0.0, L - 1, T)
    lo = np.minimum(np.floor(pos).astype(int), L - 2)
    frac = (pos - lo)[:, None]
    out = (1.0 - frac) * feats[lo] + frac * feats[lo + 1]
    out[0] = feats[0]
    if T > 1:
        out[-1] = feats[-1]
    return out
