"""Mesh topology, UV-space motion maps and rigid alignment.

Conventions: a texel at (row r, col c) of an ``R x R`` map has its centre at
``u = (c + 0.5) / R``, ``v = (r + 0.5) / R``. Offsets are millimetres and are
never rescaled here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

TOPOLOGY_MAGIC = "TT4D-TOPO 1"


class DegenerateGeometryError(ValueError):
    """Point sets or UV charts without enough extent to define the requested result."""


@dataclass(frozen=True, eq=False)
class MeshTopology:
    vertex_count: int
    faces: np.ndarray  # (F, 3) int
    uv_coords: np.ndarray  # (n, 2) in [0, 1]
    lip_mask: np.ndarray  # (n,) bool
    upper_face_mask: np.ndarray  # (n,) bool
    neutral: np.ndarray | None = None  # (n, 3) mm, optional rest positions

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        uv = np.asarray(self.uv_coords, dtype=np.float64).reshape(-1, 2)
        lip = np.asarray(self.lip_mask, dtype=bool).reshape(-1)
        upper = np.asarray(self.upper_face_mask, dtype=bool).reshape(-1)
        n = int(self.vertex_count)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "uv_coords", uv)
        object.__setattr__(self, "lip_mask", lip)
        object.__setattr__(self, "upper_face_mask", upper)
        if self.neutral is not None:
            object.__setattr__(self, "neutral", np.asarray(self.neutral, dtype=np.float64).reshape(n, 3))
        if uv.shape[0] != n or lip.shape[0] != n or upper.shape[0] != n:
            raise ValueError("per-vertex arrays must have vertex_count rows")
        if faces.size and (faces.min() < 0 or faces.max() >= n):
            raise ValueError("face index out of range")
        if not np.all((uv >= 0.0) & (uv <= 1.0)):
            raise ValueError("uv_coords must lie in [0, 1]^2")
        if np.any(lip & upper):
            raise ValueError("lip_mask and upper_face_mask must be disjoint")
        if not np.any(np.abs(_signed_area2(uv[faces])) > 0):
            raise DegenerateGeometryError("topology has no UV triangle with nonzero area")

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.faces, self.uv_coords, self.lip_mask, self.upper_face_mask):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


@dataclass
class MotionMap:
    texels: np.ndarray  # (H, W, 3)
    coverage: np.ndarray  # (H, W) bool
    meta: dict = field(default_factory=dict)


def _signed_area2(tri: np.ndarray) -> np.ndarray:
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _owns_edge(d: np.ndarray) -> bool:
    # Half-open rule: exactly one of two opposite traversals of a shared edge owns it.
    return bool(d[1] < 0 or (d[1] == 0 and d[0] > 0))


class RasterPlan:
    """Texel -> (three vertex indices, barycentric weights) for one topology and resolution.

    Rasterization is linear in the per-vertex values, so the plan is computed once
    and applied to any number of frames.
    """

    def __init__(self, topology: MeshTopology, resolution: int):
        if resolution < 4:
            raise ValueError("resolution must be >= 4")
        self.resolution = R = int(resolution)
        self.vertex_count = topology.vertex_count
        tri_idx = np.full((R, R, 3), 0, dtype=np.int64)
        bary = np.zeros((R, R, 3), dtype=np.float64)
        coverage = np.zeros((R, R), dtype=bool)
        degenerate = 0
        pts = topology.uv_coords * R
        for face in topology.faces:
            tri = pts[face]
            area2 = _signed_area2(tri)
            if area2 == 0.0:
                degenerate += 1
                continue
            order = np.array([0, 1, 2]) if area2 > 0 else np.array([0, 2, 1])
            tri = tri[order]
            vidx = face[order]
            area2 = abs(area2)
            lo = np.floor(tri.min(axis=0) - 0.5).astype(int)
            hi = np.ceil(tri.max(axis=0) - 0.5).astype(int)
            c0, r0 = max(lo[0], 0), max(lo[1], 0)
            c1, r1 = min(hi[0], R - 1), min(hi[1], R - 1)
            if c1 < c0 or r1 < r0:
                continue
            cols = np.arange(c0, c1 + 1) + 0.5
            rows = np.arange(r0, r1 + 1) + 0.5
            px, py = np.meshgrid(cols, rows)
            inside = np.ones(px.shape, dtype=bool)
            lam = np.empty((3,) + px.shape)
            for k in range(3):
                a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
                d = b - a
                e = d[0] * (py - a[1]) - d[1] * (px - a[0])
                lam[k] = e / area2
                inside &= (e > 0) | ((e == 0) & _owns_edge(d))
            inside &= ~coverage[r0 : r1 + 1, c0 : c1 + 1]
            rr, cc = np.nonzero(inside)
            rr_abs, cc_abs = rr + r0, cc + c0
            coverage[rr_abs, cc_abs] = True
            tri_idx[rr_abs, cc_abs] = vidx
            bary[rr_abs, cc_abs] = lam[:, rr, cc].T
        self.coverage = coverage
        self.vertex_index = tri_idx
        self.weights = bary
        self.degenerate_triangles = degenerate

    def apply(self, values: np.ndarray) -> np.ndarray:
        """``values[..., n, C]`` -> ``[..., R, R, C]``; zero outside coverage."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-2] != self.vertex_count:
            raise ValueError(f"expected {self.vertex_count} vertices, got {values.shape[-2]}")
        gathered = values[..., self.vertex_index, :]  # [..., R, R, 3, C]
        out = np.einsum("...ijkc,ijk->...ijc", gathered, self.weights)
        out[..., ~self.coverage, :] = 0.0
        return out


@lru_cache(maxsize=16)
def _plan_cached(topology: MeshTopology, resolution: int) -> RasterPlan:
    return RasterPlan(topology, resolution)


def raster_plan(topology: MeshTopology, resolution: int) -> RasterPlan:
    return _plan_cached(topology, int(resolution))


def uv_rasterize(topology: MeshTopology, offsets: np.ndarray, resolution: int) -> MotionMap:
    """Barycentric rasterization of per-vertex offsets into an ``R x R x 3`` motion map."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (topology.vertex_count, 3):
        raise ValueError(f"offsets must have shape ({topology.vertex_count}, 3), got {offsets.shape}")
    plan = raster_plan(topology, resolution)
    return MotionMap(
        texels=plan.apply(offsets),
        coverage=plan.coverage.copy(),
        meta={"degenerate_triangles": plan.degenerate_triangles},
    )


class SamplePlan:
    """Per-vertex linear read-out weights from a map with a given coverage.

    Fully covered 2x2 footprints use plain bilinear weights. Partially covered
    footprints (chart borders, acute corners) fit a plane to the covered texel
    centres of the surrounding 4x4 block, falling back to renormalised bilinear
    weights (or the block mean) when those centres are collinear. Vertices with
    no covered texel in the 4x4 block read zero and are counted as uncovered.
    """

    def __init__(self, uv_coords: np.ndarray, coverage: np.ndarray):
        H, W = coverage.shape
        n = uv_coords.shape[0]
        idx = np.zeros((n, 16), dtype=np.int64)
        wts = np.zeros((n, 16), dtype=np.float64)
        uncovered = np.zeros(n, dtype=bool)
        flat_cov = coverage.reshape(-1)
        for v, (u, vv) in enumerate(uv_coords):
            x, y = u * W - 0.5, vv * H - 0.5
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            fx, fy = x - x0, y - y0
            foot = [(y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
                    (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)]
            cov = [0 <= r < H and 0 <= c < W and coverage[r, c] for r, c, _ in foot]
            if all(cov):
                for k, (r, c, w) in enumerate(foot):
                    idx[v, k], wts[v, k] = r * W + c, w
                continue
            rows, cols = [], []
            for r in range(y0 - 1, y0 + 3):
                for c in range(x0 - 1, x0 + 3):
                    if 0 <= r < H and 0 <= c < W and flat_cov[r * W + c]:
                        rows.append(r)
                        cols.append(c)
            if not rows:
                uncovered[v] = True
                continue
            A = np.stack([np.ones(len(rows)), np.asarray(cols, float), np.asarray(rows, float)], axis=1)
            if len(rows) >= 3 and np.linalg.matrix_rank(A) == 3:
                w = A @ np.linalg.solve(A.T @ A, np.array([1.0, x, y]))
                for k, (r, c) in enumerate(zip(rows, cols)):
                    idx[v, k], wts[v, k] = r * W + c, w[k]
            elif any(cov):
                total = sum(w for (_, _, w), ok in zip(foot, cov) if ok)
                k = 0
                for (r, c, w), ok in zip(foot, cov):
                    if ok:
                        idx[v, k] = r * W + c
                        wts[v, k] = w / total if total > 0 else 1.0 / sum(cov)
                        k += 1
            else:
                for k, (r, c) in enumerate(zip(rows, cols)):
                    idx[v, k], wts[v, k] = r * W + c, 1.0 / len(rows)
        self.shape = (H, W)
        self.index = idx
        self.weights = wts
        self.uncovered = uncovered

    def apply(self, maps: np.ndarray) -> np.ndarray:
        """``maps[..., H, W, C]`` -> ``[..., n, C]``."""
        maps = np.asarray(maps, dtype=np.float64)
        flat = maps.reshape(maps.shape[:-3] + (-1, maps.shape[-1]))
        gathered = flat[..., self.index, :]  # [..., n, 16, C]
        return np.einsum("...nkc,nk->...nc", gathered, self.weights)


@lru_cache(maxsize=16)
def _sample_plan_cached(topology: MeshTopology, coverage_bytes: bytes, shape: tuple[int, int]) -> SamplePlan:
    coverage = np.frombuffer(coverage_bytes, dtype=bool).reshape(shape)
    return SamplePlan(topology.uv_coords, coverage)


def sample_plan(topology: MeshTopology, coverage: np.ndarray) -> SamplePlan:
    coverage = np.ascontiguousarray(coverage, dtype=bool)
    return _sample_plan_cached(topology, coverage.tobytes(), coverage.shape)


def uv_sample(topology: MeshTopology, motion_map: MotionMap) -> tuple[np.ndarray, dict]:
    """Read per-vertex offsets back out of a motion map.

    Returns ``(offsets (n, 3), meta)`` where ``meta["uncovered_vertices"]`` counts
    vertices whose footprint has no covered texel (they receive zero).
    """
    texels = np.asarray(motion_map.texels)
    if texels.ndim != 3 or min(texels.shape[:2]) < 4:
        raise ValueError("map must be H x W x C with resolution >= 4")
    plan = sample_plan(topology, motion_map.coverage)
    return plan.apply(texels), {"uncovered_vertices": int(plan.uncovered.sum())}


def rigid_align(source: np.ndarray, template: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares rotation + translation taking ``source`` onto ``template`` (Kabsch).

    Reflections are excluded, so ``det(rotation) == +1``.
    """
    P = np.asarray(source, dtype=np.float64)
    Q = np.asarray(template, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise ValueError("source and template must both be (n, 3)")
    if P.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 points")
    p_mean, q_mean = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - p_mean, Q - q_mean
    for name, X in (("source", Pc), ("template", Qc)):
        s = np.linalg.svd(X, compute_uv=False)
        if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
            raise DegenerateGeometryError(f"{name} points are collinear or coincident")
    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    D = np.diag([1.0, 1.0, d])
    rotation = Vt.T @ D @ U.T
    translation = q_mean - rotation @ p_mean
    aligned = P @ rotation.T + translation
    return rotation, translation, aligned


def write_topology(path, topology: MeshTopology) -> Path:
    """Write the ``TT4D-TOPO 1`` text format (grammar in docs/formats.md)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [TOPOLOGY_MAGIC, f"vertices {topology.vertex_count}", f"faces {len(topology.faces)}"]
    lines += [f"f {a} {b} {c}" for a, b, c in topology.faces]
    lines.append(f"uv {topology.vertex_count}")
    lines += [f"vt {u!r} {v!r}" for u, v in topology.uv_coords.tolist()]
    lip = np.flatnonzero(topology.lip_mask)
    upper = np.flatnonzero(topology.upper_face_mask)
    lines.append(" ".join(["lip", str(len(lip))] + [str(i) for i in lip]))
    lines.append(" ".join(["upper", str(len(upper))] + [str(i) for i in upper]))
    if topology.neutral is not None:
        lines.append(f"neutral {topology.vertex_count}")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in topology.neutral.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_topology(path) -> MeshTopology:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != TOPOLOGY_MAGIC:
        raise ValueError(f"{path}: missing '{TOPOLOGY_MAGIC}' header")
    it = iter(lines[1:])

    def expect(key: str) -> list[str]:
        try:
            tok = next(it).split()
        except StopIteration:
            raise ValueError(f"{path}: unexpected end of file, expected '{key}'") from None
        if tok[0] != key:
            raise ValueError(f"{path}: expected '{key}', got '{tok[0]}'")
        return tok[1:]

    n = int(expect("vertices")[0])
    m = int(expect("faces")[0])
    faces = [[int(t) for t in expect("f")] for _ in range(m)]
    if int(expect("uv")[0]) != n:
        raise ValueError(f"{path}: uv count must equal vertex count")
    uv = [[float(t) for t in expect("vt")] for _ in range(n)]
    lip_tok = expect("lip")
    upper_tok = expect("upper")
    lip = np.zeros(n, dtype=bool)
    lip[[int(t) for t in lip_tok[1:]]] = True
    upper = np.zeros(n, dtype=bool)
    upper[[int(t) for t in upper_tok[1:]]] = True
    if int(lip_tok[0]) != lip.sum() or int(upper_tok[0]) != upper.sum():
        raise ValueError(f"{path}: mask counts do not match listed indices")
    neutral = None
    rest = next(it, None)
    if rest is not None:
        tok = rest.split()
        if tok[0] != "neutral" or int(tok[1]) != n:
            raise ValueError(f"{path}: unexpected trailing section '{tok[0]}'")
        neutral = [[float(t) for t in expect("v")] for _ in range(n)]
    return MeshTopology(
        vertex_count=n,
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        uv_coords=np.asarray(uv),
        lip_mask=lip,
        upper_face_mask=upper,
        neutral=None if neutral is None else np.asarray(neutral),
    )
