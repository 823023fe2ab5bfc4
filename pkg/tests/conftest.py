import numpy as np
import pytest

from uvtalk.geometry import MeshTopology
from uvtalk.synthdata import make_face_topology


@pytest.fixture(scope="session")
def face_topology() -> MeshTopology:
    return make_face_topology()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def single_triangle(uv, lip=(0,), upper=(1,)) -> MeshTopology:
    lip_mask = np.zeros(3, bool)
    lip_mask[list(lip)] = True
    upper_mask = np.zeros(3, bool)
    upper_mask[list(upper)] = True
    return MeshTopology(3, np.array([[0, 1, 2]]), np.asarray(uv, float), lip_mask, upper_mask)


def smooth_field(uv: np.ndarray, seed: int, freq: float = 0.2) -> np.ndarray:
    """Three plane waves of spatial frequency ``freq`` cycles per UV unit, one per channel."""
    r = np.random.default_rng(seed)
    k = r.normal(size=(3, 2))
    k = freq * k / np.linalg.norm(k, axis=1, keepdims=True)
    phase = r.uniform(0, 2 * np.pi, 3)
    return np.stack([np.sin(2 * np.pi * uv @ k[c] + phase[c]) for c in range(3)], axis=1)


# --------------------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, ok, detail)`` records one pass/fail line and fails the calling test when not ok."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
