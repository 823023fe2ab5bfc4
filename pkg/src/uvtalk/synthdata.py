"""Synthetic audio / motion / wrinkle corpus with a known generating oracle.

The rig is a procedural face-like grid with a planar UV chart. Speech is a
sequence of pseudo-phonemes (id 0 is silence); each phoneme drives a fixed
smooth lip-region deformation basis and renders as two sinusoids. Identities
differ in motion amplitude, an upper-face idiosyncrasy field, an optional
blink, and wrinkle gain / pattern.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .appearance import logit, sigmoid
from .errors import ConfigurationError, DataError
from .geometry import MeshTopology, raster_plan, read_topology, write_topology
from .io import load_array, read_json, save_array, write_json, write_wav

log = logging.getLogger(__name__)

SILENCE = 0
# Two tones per speech phoneme (ids 1..8), chosen to fall in distinct log-mel bands.
PHONEME_TONES_HZ = np.array([
    [310.0, 2300.0], [420.0, 1150.0], [530.0, 2700.0], [660.0, 1500.0],
    [780.0, 3300.0], [350.0, 1850.0], [480.0, 3000.0], [610.0, 1300.0],
])
WRINKLE_TINT = np.array([1.0, 0.85, 0.7])


# --------------------------------------------------------------------------- rig


def make_face_topology(nx: int = 22, ny: int = 23) -> MeshTopology:
    """Open grid over the UV square [0.05, 0.95]^2, bulged into a face-like shell.

    ``v`` grows downward: forehead at small ``v``, mouth around ``v = 0.75``.
    """
    us = np.linspace(0.05, 0.95, nx)
    vs = np.linspace(0.05, 0.95, ny)
    U, V = np.meshgrid(us, vs)
    uv = np.stack([U.ravel(), V.ravel()], axis=1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    x = (uv[:, 0] - 0.5) * 150.0
    y = (0.5 - uv[:, 1]) * 190.0
    z = 40.0 * np.cos(np.pi * (uv[:, 0] - 0.5)) * np.cos(0.8 * np.pi * (uv[:, 1] - 0.5))
    lip = ((uv[:, 0] - 0.5) / 0.17) ** 2 + ((uv[:, 1] - 0.75) / 0.09) ** 2 <= 1.0
    upper = uv[:, 1] < 0.42
    return MeshTopology(
        vertex_count=len(uv),
        faces=np.asarray(faces),
        uv_coords=uv,
        lip_mask=lip,
        upper_face_mask=upper,
        neutral=np.stack([x, y, z], axis=1),
    )


def _bump(uv: np.ndarray, center, radius: float) -> np.ndarray:
    r = np.linalg.norm((uv - np.asarray(center)) / radius, axis=-1)
    return np.where(r < 1.0, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0)


def _smooth_field(rng: np.random.Generator, uv: np.ndarray, n_terms: int = 4, max_freq: float = 2.0) -> np.ndarray:
    """Low-frequency random field in roughly [-1, 1]."""
    out = np.zeros(uv.shape[:-1])
    for _ in range(n_terms):
        k = rng.uniform(-max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(np.pi * (uv @ k) + phase)
    return out / n_terms


@dataclass
class Rig:
    """Shared (identity-independent) fixtures of the synthetic face."""

    topology: MeshTopology
    bases: np.ndarray  # (K, n, 3) mm, unit-amplitude articulation per speech phoneme
    blink_field: np.ndarray  # (n, 3) mm
    wrinkle_region: np.ndarray  # (R, R) in [0, 1]
    resolution: int

    @property
    def n_phonemes(self) -> int:
        return self.bases.shape[0]


def make_rig(n_phonemes: int = 8, resolution: int = 64, seed: int = 0, topology: MeshTopology | None = None) -> Rig:
    topology = topology or make_face_topology()
    rng = np.random.default_rng([seed, 0x716])
    uv = topology.uv_coords
    lip_idx = np.flatnonzero(topology.lip_mask)
    centers = rng.choice(lip_idx, size=n_phonemes, replace=n_phonemes > lip_idx.size)
    bases = np.zeros((n_phonemes, topology.vertex_count, 3))
    for k, c in enumerate(centers):
        amp = rng.uniform(2.0, 5.0)
        d = np.array([rng.uniform(-0.4, 0.4), rng.uniform(-1.0, 1.0), rng.uniform(-0.6, 0.6)])
        d /= np.linalg.norm(d)
        radius = rng.uniform(0.10, 0.16)
        bases[k] = amp * _bump(uv, uv[c], radius)[:, None] * d[None, :]
    bases[:, ~topology.lip_mask & (uv[:, 1] < 0.55)] = 0.0
    eye = _bump(uv, (0.33, 0.33), 0.08) + _bump(uv, (0.67, 0.33), 0.08)
    blink = np.zeros((topology.vertex_count, 3))
    blink[:, 1] = -3.0 * eye
    blink[~topology.upper_face_mask] = 0.0
    R = resolution
    cc = (np.arange(R) + 0.5) / R
    grid = np.stack(np.meshgrid(cc, cc), axis=-1)
    region = np.clip(
        _bump(grid, (0.5, 0.75), 0.32) + 0.6 * _bump(grid, (0.32, 0.6), 0.15) + 0.6 * _bump(grid, (0.68, 0.6), 0.15),
        0.0, 1.0,
    )
    return Rig(topology, bases, blink, region, R)


# --------------------------------------------------------------------------- identities / tracks


@dataclass
class IdentityStyle:
    label: str
    alpha: float
    idiosyncrasy: np.ndarray  # (n, 3) mm, nonzero only on the upper face
    blink_period: float | None  # frames
    wrinkle_gain: float
    wrinkle_pattern: np.ndarray  # (R, R) in [0, 1]

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.wrinkle_gain < 0:
            raise ValueError("wrinkle gain must be non-negative")

    def summary(self) -> dict:
        return {"alpha": float(self.alpha), "wrinkle_gain": float(self.wrinkle_gain),
                "blink_period": None if self.blink_period is None else float(self.blink_period)}


def sample_identity_styles(rig: Rig, n: int, seed: int) -> list[IdentityStyle]:
    """Amplitudes and gains are spread on fixed grids (then shuffled) so every pair is distinguishable."""
    rng = np.random.default_rng([seed, 0x1D])
    alphas = rng.permutation(np.linspace(0.6, 1.6, n))
    gains = rng.permutation(np.geomspace(0.1, 0.5, n))
    topo = rig.topology
    R = rig.resolution
    cc = (np.arange(R) + 0.5) / R
    grid = np.stack(np.meshgrid(cc, cc), axis=-1)
    styles = []
    for i in range(n):
        idio = np.stack([_smooth_field(rng, topo.uv_coords) for _ in range(3)], axis=1) * 1.5
        idio[~topo.upper_face_mask] = 0.0
        period = None if rng.uniform() < 0.3 else float(rng.integers(60, 121))
        pattern = rig.wrinkle_region * (0.7 + 0.3 * 0.5 * (1.0 + _smooth_field(rng, grid, n_terms=3, max_freq=3.0)))
        styles.append(IdentityStyle(f"id{i:02d}", float(alphas[i]), idio, period, float(gains[i]),
                                    np.clip(pattern, 0.0, 1.0)))
    return styles


@dataclass
class PhonemeTrack:
    segments: list[tuple[int, int]]  # (phoneme id, duration in frames)
    n_symbols: int = 9  # silence + 8 speech phonemes

    def __post_init__(self):
        self.segments = [(int(p), int(d)) for p, d in self.segments]
        for p, d in self.segments:
            if d < 1:
                raise ValueError("phoneme durations must be >= 1")
            if not 0 <= p < self.n_symbols:
                raise ValueError(f"phoneme id {p} outside [0, {self.n_symbols})")
        if not self.segments:
            raise ValueError("empty phoneme track")

    @property
    def frames(self) -> int:
        return sum(d for _, d in self.segments)

    def ids_per_frame(self) -> np.ndarray:
        return np.concatenate([np.full(d, p, dtype=np.int64) for p, d in self.segments])

    def to_json(self) -> dict:
        return {"segments": [list(s) for s in self.segments], "n_symbols": self.n_symbols}

    @classmethod
    def from_json(cls, obj) -> "PhonemeTrack":
        return cls([tuple(s) for s in obj["segments"]], obj.get("n_symbols", 9))


def random_track(rng: np.random.Generator, frames: int, n_symbols: int = 9) -> PhonemeTrack:
    segments = []
    total = 0
    while total < frames:
        if rng.uniform() < 0.12:
            p, d = SILENCE, int(rng.integers(5, 16))
        else:
            p, d = int(rng.integers(1, n_symbols)), int(rng.integers(4, 11))
        d = min(d, frames - total)
        segments.append((p, d))
        total += d
    return PhonemeTrack(segments, n_symbols)


def activations(track: PhonemeTrack, crossfade: int = 2) -> np.ndarray:
    """Per-frame speech-phoneme weights ``(T, n_symbols - 1)``.

    One-hot ids smoothed by a raised-cosine kernel of ``2 * crossfade + 1`` taps,
    so neighbouring phonemes crossfade with half-cosine ramps and frames farther
    than ``crossfade`` from a boundary hold a weight of exactly one.
    """
    ids = track.ids_per_frame()
    T = ids.size
    onehot = np.zeros((T, track.n_symbols))
    onehot[np.arange(T), ids] = 1.0
    L = 2 * crossfade + 1
    kernel = np.sin(np.pi * (np.arange(L) + 0.5) / L) ** 2
    kernel /= kernel.sum()
    padded = np.pad(onehot, ((crossfade, crossfade), (0, 0)), mode="edge")
    out = np.stack([np.convolve(padded[:, k], kernel, mode="valid") for k in range(track.n_symbols)], axis=1)
    steady = np.ones(T, dtype=bool)
    for s in range(-crossfade, crossfade + 1):
        steady &= ids[np.clip(np.arange(T) + s, 0, T - 1)] == ids
    out[steady] = onehot[steady]
    return out[:, 1:]


def blink_signal(T: int, period: float | None, duration: int = 6) -> np.ndarray:
    sig = np.zeros(T)
    if period is None:
        return sig
    t = np.arange(T)
    phase = np.mod(t, period)
    inside = phase < duration
    sig[inside] = np.sin(np.pi * (phase[inside] + 0.5) / duration) ** 2
    return sig


# --------------------------------------------------------------------------- oracle


def oracle_motion(track: PhonemeTrack, style: IdentityStyle, rig: Rig) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(motion (T, n, 3), articulation (T, n, 3))``; articulation excludes amplitude and style terms."""
    w = activations(track)
    if w.shape[1] != rig.n_phonemes:
        raise ConfigurationError(f"track has {w.shape[1]} speech phonemes, rig has {rig.n_phonemes}")
    art = np.einsum("tk,knc->tnc", w, rig.bases)
    envelope = w.sum(axis=1)
    blink = blink_signal(track.frames, style.blink_period)
    motion = (style.alpha * art
              + blink[:, None, None] * rig.blink_field[None]
              + envelope[:, None, None] * style.idiosyncrasy[None])
    return motion, art


def oracle_animate(track: PhonemeTrack, style: IdentityStyle, rig: Rig, resolution: int | None = None):
    """Ground-truth ``(motion (T, n, 3) mm, wrinkle (T, R, R, 3) in (0, 1))`` for one track and identity.

    Wrinkle ratio is ``1 + gain * pattern * |articulation|`` rasterized to UV and
    tinted per channel; the articulation magnitude is taken before the identity
    amplitude so wrinkle gain and motion amplitude stay separately identifiable.
    """
    R = resolution or rig.resolution
    if R != style.wrinkle_pattern.shape[0]:
        raise ConfigurationError("wrinkle pattern resolution does not match requested resolution")
    motion, art = oracle_motion(track, style, rig)
    mag = np.linalg.norm(art, axis=-1, keepdims=True)
    mag_map = raster_plan(rig.topology, R).apply(mag)[..., 0]  # (T, R, R)
    ratio = 1.0 + style.wrinkle_gain * style.wrinkle_pattern[None, :, :, None] * mag_map[..., None] * WRINKLE_TINT
    return motion, sigmoid(ratio)


def motion_gain_estimate(motion: np.ndarray, articulation: np.ndarray, lip_mask: np.ndarray) -> float:
    """Least-squares amplitude ``a`` with lip motion ~= a * articulation (lip vertices carry no style field)."""
    m = np.asarray(motion, dtype=np.float64)[:, lip_mask]
    a = np.asarray(articulation, dtype=np.float64)[:, lip_mask]
    den = float((a * a).sum())
    return float((m * a).sum() / den) if den > 0 else 0.0


def wrinkle_gain_estimate(wrinkle: np.ndarray, articulation: np.ndarray, rig: Rig) -> float:
    """Dynamic wrinkle gain: least-squares ``c`` with logit(w) - 1 ~= c * region * |articulation| * tint."""
    R = wrinkle.shape[1]
    mag = np.linalg.norm(articulation, axis=-1, keepdims=True)
    basis = raster_plan(rig.topology, R).apply(mag)[..., 0][..., None] * rig.wrinkle_region[None, :, :, None]
    basis = basis * np.asarray(WRINKLE_TINT)
    y = logit(np.clip(wrinkle, 1e-4, 1 - 1e-4)) - 1.0
    den = float((basis * basis).sum())
    return float((y * basis).sum() / den) if den > 0 else 0.0


def synthesize_audio(track: PhonemeTrack, fps: float, sample_rate: int = 16000, crossfade_ms: float = 10.0,
                     amplitude: float = 0.3):
    """Two sinusoids per speech phoneme with raised-cosine crossfades; silence renders as zeros."""
    from .audio import AudioClip

    n = int(round(track.frames / fps * sample_rate))
    t = np.arange(n) / sample_rate
    ids = track.ids_per_frame()
    frame_of = np.minimum((t * fps).astype(np.int64), ids.size - 1)
    sample_ids = ids[frame_of]
    fade = max(1, int(round(crossfade_ms * sample_rate / 1000.0)))
    L = 2 * fade + 1
    kernel = np.sin(np.pi * (np.arange(L) + 0.5) / L) ** 2
    kernel /= kernel.sum()
    out = np.zeros(n)
    for p in range(1, track.n_symbols):
        gate = (sample_ids == p).astype(np.float64)
        if not gate.any():
            continue
        env = np.convolve(np.pad(gate, fade, mode="edge"), kernel, mode="valid")
        f1, f2 = PHONEME_TONES_HZ[(p - 1) % len(PHONEME_TONES_HZ)]
        out += env * amplitude * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t))
    return AudioClip(out, sample_rate)


# --------------------------------------------------------------------------- corpus


@dataclass
class CorpusConfig:
    identities: int = 6
    unseen_identities: int = 2
    seconds_per_identity: float = 30.0
    seconds_per_sequence: float = 5.0
    fps: float = 25.0
    n_phonemes: int = 8
    resolution: int = 64
    sample_rate: int = 16000
    val_per_identity: int = 1
    test_a_per_identity: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.identities < 4:
            raise ConfigurationError("need at least 4 identities to populate train/val/test-A/test-B")
        seen = self.identities - self.unseen_identities
        if self.unseen_identities < 1 or seen < 1:
            raise ConfigurationError("need at least one seen and one unseen identity")
        if self.sequences_per_identity < self.val_per_identity + self.test_a_per_identity + 1:
            raise ConfigurationError("not enough sequences per identity for train/val/test-A")

    @property
    def frames_per_sequence(self) -> int:
        return int(round(self.seconds_per_sequence * self.fps))

    @property
    def sequences_per_identity(self) -> int:
        return int(round(self.seconds_per_identity / self.seconds_per_sequence))


@dataclass
class DatasetManifest:
    root: Path
    topology_path: str
    sequences: list[dict]
    identities: dict
    motion_scale: float
    config: dict = field(default_factory=dict)

    def split(self, tag: str) -> list[dict]:
        return [s for s in self.sequences if s["split"] == tag]

    def identities_in(self, tag: str) -> set[str]:
        return {s["identity"] for s in self.split(tag)}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def check_invariants(self) -> None:
        train = self.identities_in("train")
        if not self.identities_in("test-A") <= train:
            raise DataError("test-A identities must be seen in training")
        if self.identities_in("test-B") & train:
            raise DataError("test-B identities must be unseen in training")

    def to_json(self) -> dict:
        return {"topology": self.topology_path, "sequences": self.sequences, "identities": self.identities,
                "motion_scale": self.motion_scale, "config": self.config}

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        obj = read_json(root / "manifest.json")
        m = cls(root, obj["topology"], obj["sequences"], obj["identities"], float(obj["motion_scale"]),
                obj.get("config", {}))
        m.check_invariants()
        return m

    def topology(self) -> MeshTopology:
        return read_topology(self.path(self.topology_path))

    def load_motion(self, seq: dict) -> np.ndarray:
        return load_array(self.path(seq["motion"]))

    def load_wrinkle(self, seq: dict) -> np.ndarray:
        return load_array(self.path(seq["wrinkle"]))

    def load_track(self, seq: dict) -> PhonemeTrack:
        return PhonemeTrack.from_json(read_json(self.path(seq["track"])))

    def load_rig(self) -> Rig:
        topo = self.topology()
        return Rig(topo, load_array(self.path("rig/bases.f32")).astype(np.float64),
                   load_array(self.path("rig/blink.f32")).astype(np.float64),
                   load_array(self.path("rig/wrinkle_region.f32")).astype(np.float64),
                   int(self.config["resolution"]))

    def load_style(self, label: str) -> IdentityStyle:
        info = self.identities[label]
        return IdentityStyle(label, info["alpha"], load_array(self.path(info["idiosyncrasy"])).astype(np.float64),
                             info["blink_period"], info["wrinkle_gain"],
                             load_array(self.path(info["wrinkle_pattern"])).astype(np.float64))


def generate_corpus(config: CorpusConfig, out_dir) -> DatasetManifest:
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = make_rig(config.n_phonemes, config.resolution, config.seed)
    write_topology(out / "topology.tt4d", rig.topology)
    save_array(out / "rig/bases.f32", rig.bases, name="bases")
    save_array(out / "rig/blink.f32", rig.blink_field, name="blink")
    save_array(out / "rig/wrinkle_region.f32", rig.wrinkle_region, name="wrinkle_region")
    # Reload so the oracle sees exactly the f32 fixtures that replay will see.
    rig = Rig(rig.topology, load_array(out / "rig/bases.f32").astype(np.float64),
              load_array(out / "rig/blink.f32").astype(np.float64),
              load_array(out / "rig/wrinkle_region.f32").astype(np.float64), rig.resolution)
    styles = sample_identity_styles(rig, config.identities, config.seed)
    n_seen = config.identities - config.unseen_identities
    identities = {}
    for i, st in enumerate(styles):
        save_array(out / f"styles/{st.label}_idiosyncrasy.f32", st.idiosyncrasy, name="idiosyncrasy")
        save_array(out / f"styles/{st.label}_pattern.f32", st.wrinkle_pattern, name="wrinkle_pattern")
        identities[st.label] = {
            **st.summary(),
            "idiosyncrasy": f"styles/{st.label}_idiosyncrasy.f32",
            "wrinkle_pattern": f"styles/{st.label}_pattern.f32",
            "seen": i < n_seen,
        }
    seq_ss = np.random.SeedSequence([config.seed, 0x5E9])
    children = seq_ss.spawn(config.identities * config.sequences_per_identity)
    sequences = []
    max_abs = 0.0
    T = config.frames_per_sequence
    for i, st in enumerate(identities):
        style = IdentityStyle(st, identities[st]["alpha"],
                              load_array(out / identities[st]["idiosyncrasy"]).astype(np.float64),
                              identities[st]["blink_period"], identities[st]["wrinkle_gain"],
                              load_array(out / identities[st]["wrinkle_pattern"]).astype(np.float64))
        for n in range(config.sequences_per_identity):
            rng = np.random.default_rng(children[i * config.sequences_per_identity + n])
            track = random_track(rng, T, config.n_phonemes + 1)
            motion, wrinkle = oracle_animate(track, style, rig, config.resolution)
            clip = synthesize_audio(track, config.fps, config.sample_rate)
            if i >= n_seen:
                split = "test-B"
            elif n >= config.sequences_per_identity - config.test_a_per_identity:
                split = "test-A"
            elif n >= config.sequences_per_identity - config.test_a_per_identity - config.val_per_identity:
                split = "val"
            else:
                split = "train"
            d = f"seq_{st}_{n}"
            write_wav(out / d / "audio.wav", clip.samples, clip.sample_rate)
            save_array(out / d / "motion.f32", motion, name="motion", extra={"fps": config.fps, "units": "mm"})
            save_array(out / d / "wrinkle.f32", wrinkle, name="wrinkle", extra={"fps": config.fps})
            write_json(out / d / "track.json", track.to_json())
            if split == "train":
                max_abs = max(max_abs, float(np.abs(motion).max()))
            sequences.append({
                "identity": st, "index": n, "fps": config.fps, "frames": T, "split": split,
                "audio": f"{d}/audio.wav", "motion": f"{d}/motion.f32",
                "wrinkle": f"{d}/wrinkle.f32", "track": f"{d}/track.json",
            })
            log.info("wrote %s (%s)", d, split)
    manifest = DatasetManifest(out, "topology.tt4d", sequences, identities, max_abs, asdict(config))
    manifest.check_invariants()
    write_json(out / "manifest.json", manifest.to_json())
    return manifest
