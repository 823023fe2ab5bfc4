import numpy as np
import pytest
from skimage.metrics import structural_similarity

from uvtalk.metrics import evaluate_pairs, fdd, lve, mve, pearson, psnr, ssim, temporal_dynamics

N = 12
LIP = np.zeros(N, bool)
LIP[:4] = True
UPPER = np.zeros(N, bool)
UPPER[6:] = True


def seq(rng, T=10):
    return rng.normal(size=(T, N, 3))


# --------------------------------------------------------------------------- motion


def test_lve_examples(rng):
    ref = seq(rng)
    assert lve(ref, ref, LIP) == 0.0
    d = np.array([0.3, -0.4, 1.2])  # |d| = 1.3
    pred = ref.copy()
    pred[:, LIP] += d
    assert lve(pred, ref, LIP) == pytest.approx(1.3, abs=1e-12)
    pred = ref.copy()
    pred[4, 2] += [3.0, 0.0, 0.0]
    assert lve(pred, ref, LIP) == pytest.approx(0.3, abs=1e-12)


def test_lve_ignores_non_lip_vertices(rng):
    ref = seq(rng)
    pred = ref.copy()
    pred[:, ~LIP] += 5.0
    assert lve(pred, ref, LIP) == 0.0
    assert lve(pred, ref, np.flatnonzero(LIP)) == 0.0  # index form


def test_mve_examples(rng):
    ref = seq(rng)
    assert mve(ref, ref) == 0.0
    assert mve(ref + [0.0, 0.6, 0.8], ref) == pytest.approx(1.0, abs=1e-12)
    pred = ref.copy()
    pred[:, : N // 2] += [0.0, 0.0, 2.0]
    assert mve(pred, ref) == pytest.approx(1.0, abs=1e-12)
    assert mve(pred, ref, "max") == pytest.approx(2.0, abs=1e-12)


def test_fdd_examples(rng):
    ref = seq(rng)
    assert fdd(ref, ref, UPPER) == 0.0
    static_a = np.broadcast_to(rng.normal(size=(N, 3)), (10, N, 3))
    static_b = np.broadcast_to(rng.normal(size=(N, 3)), (10, N, 3))
    assert fdd(static_a, static_b, UPPER) == pytest.approx(0.0, abs=1e-12)
    # ref norm = a*sin + offset over whole periods; pred static
    a, T = 0.7, 40
    t = np.arange(T)
    norm = 2.0 + a * np.sin(2 * np.pi * t / 20)
    r = np.zeros((T, N, 3))
    r[..., 0] = norm[:, None]
    p = np.broadcast_to(r[:1], r.shape)
    assert fdd(p, r, UPPER) == pytest.approx(-a / np.sqrt(2), abs=1e-12)
    with pytest.raises(ValueError):
        fdd(ref[:1], ref[:1], UPPER)


def test_fdd_is_antisymmetric(rng):
    a, b = seq(rng), seq(rng)
    assert fdd(a, b, UPPER) == pytest.approx(-fdd(b, a, UPPER), abs=1e-14)
    assert fdd(a, b, UPPER, absolute=True) >= abs(fdd(a, b, UPPER))


def test_motion_metrics_rotation_invariant(rng):
    from scipy.spatial.transform import Rotation
    a, b = seq(rng), seq(rng)
    R = Rotation.random(random_state=3).as_matrix()
    assert lve(a @ R.T, b @ R.T, LIP) == pytest.approx(lve(a, b, LIP), rel=1e-12)
    assert mve(a @ R.T, b @ R.T) == pytest.approx(mve(a, b), rel=1e-12)
    assert fdd(a @ R.T, b @ R.T, UPPER) == pytest.approx(fdd(a, b, UPPER), abs=1e-12)


def test_metric_argument_errors(rng):
    a = seq(rng)
    with pytest.raises(ValueError):
        lve(a, a[:5], LIP)
    with pytest.raises(ValueError):
        lve(a, a, np.zeros(N, bool))
    with pytest.raises(ValueError):
        mve(a, a[:, :5])


# --------------------------------------------------------------------------- texture


def test_psnr_examples():
    x = np.full((3, 8, 8, 3), 0.4)
    val, capped = psnr(x, x)
    assert capped and val == 99.0
    val, capped = psnr(x + 0.1, x)
    assert not capped and val == pytest.approx(20.0, abs=1e-9)


def test_ssim_identity(rng):
    img = rng.uniform(size=(2, 32, 32, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    assert ssim(np.full((24, 24, 3), 0.3), np.full((24, 24, 3), 0.3)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_reference_implementation(seed):
    r = np.random.default_rng(seed)
    a = r.uniform(size=(40, 40, 3))
    b = np.clip(a + r.normal(scale=0.1, size=a.shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, win_size=11)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)
    assert -1 <= ssim(a, b) <= 1


# --------------------------------------------------------------------------- dynamics


def test_temporal_dynamics_examples(rng):
    static = np.broadcast_to(rng.normal(size=(N, 3)), (6, N, 3))
    np.testing.assert_array_equal(temporal_dynamics(static), 0.0)
    d = 0.25
    alt = np.zeros((9, 5, 1))
    alt[::2], alt[1::2] = d, -d
    np.testing.assert_allclose(temporal_dynamics(alt), 2 * d)
    x = seq(rng)
    np.testing.assert_allclose(temporal_dynamics(x + 3.0), temporal_dynamics(x), atol=1e-12)
    img = rng.uniform(size=(5, 8, 8, 3))
    assert temporal_dynamics(img).shape == (8, 8)
    with pytest.raises(ValueError):
        temporal_dynamics(x[:1])


def test_pearson():
    a = np.arange(10.0)
    assert pearson(a, 2 * a + 1) == pytest.approx(1.0)
    assert pearson(a, -a) == pytest.approx(-1.0)
    assert pearson(a, np.ones(10)) == 0.0


def test_evaluate_pairs_report(rng):
    ref = seq(rng)
    tex = rng.uniform(size=(10, 16, 16, 3))
    rep = evaluate_pairs([{"name": "a", "pred_motion": ref, "ref_motion": ref, "pred_texture": tex,
                           "ref_texture": tex}], LIP, UPPER)
    assert rep.lve_mm == rep.mve_mm == rep.fdd_mm == 0.0
    assert rep.psnr_capped and rep.ssim == pytest.approx(1.0)
    assert rep.per_sequence[0]["name"] == "a"
    pred = ref + [0.0, 0.0, 1.0]
    rep = evaluate_pairs([{"name": "a", "pred_motion": pred, "ref_motion": ref},
                          {"name": "b", "pred_motion": ref, "ref_motion": ref}], LIP, UPPER)
    assert rep.mve_mm == pytest.approx(0.5) and rep.psnr_db is None
