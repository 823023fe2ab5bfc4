import numpy as np
import pytest

from uvtalk.errors import CheckpointMismatchError
from uvtalk.style import StylePivot, compute_pivot, from_offsets, to_offsets


def test_constant_sequence_pivot_is_the_constant(rng):
    z = rng.normal(size=(2, 2, 3))
    for T in (1, 5, 17):
        p = compute_pivot(np.broadcast_to(z, (T,) + z.shape))
        np.testing.assert_allclose(p.vector, z.reshape(-1), atol=1e-15)
        assert p.frames == T


def test_two_frame_mean():
    np.testing.assert_array_equal(compute_pivot(np.array([[1.0, 0.0], [3.0, 0.0]])).vector, [2.0, 0.0])


def test_pivot_is_permutation_invariant(rng):
    z = rng.normal(size=(12, 10))
    a = compute_pivot(z).vector
    b = compute_pivot(z[rng.permutation(12)]).vector
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        compute_pivot(np.zeros((0, 4)))


def test_offsets_round_trip_and_mean_centering(rng):
    z = rng.normal(size=(9, 4, 4, 2))
    p = compute_pivot(z, "wrinkle")
    dz = to_offsets(z, p)
    np.testing.assert_array_equal(from_offsets(dz, p), z.reshape(9, -1) - p.vector + p.vector)
    np.testing.assert_allclose(from_offsets(dz, p), z.reshape(9, -1), atol=1e-14)
    np.testing.assert_allclose(dz.mean(axis=0), 0, atol=1e-14)


def test_offset_dimension_mismatch(rng):
    p = compute_pivot(rng.normal(size=(3, 4)))
    with pytest.raises(ValueError):
        to_offsets(rng.normal(size=(3, 5)), p)
    with pytest.raises(ValueError):
        from_offsets(rng.normal(size=(3, 5)), p)


def test_pivot_validation():
    with pytest.raises(ValueError):
        StylePivot(np.zeros(3), "texture")
    with pytest.raises(ValueError):
        StylePivot(np.array([0.0, np.inf]), "motion")


def test_pivot_file_round_trip(tmp_path, rng):
    p = compute_pivot(rng.normal(size=(6, 8)), "motion", identity="id03", codec_hash="abc")
    path = p.save(tmp_path / "p.f32")
    back = StylePivot.load(path, expect_stream="motion", codec_hash="abc")
    np.testing.assert_allclose(back.vector, p.vector, rtol=1e-6)  # stored as f32
    assert (back.identity, back.frames, back.stream) == ("id03", 6, "motion")
    with pytest.raises(CheckpointMismatchError):
        StylePivot.load(path, expect_stream="wrinkle")
    with pytest.raises(CheckpointMismatchError):
        StylePivot.load(path, codec_hash="other")
