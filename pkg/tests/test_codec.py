import numpy as np
import pytest
import torch
from torch import nn

from oracles import nearest_neighbour
from uvtalk.codec import (
    Codebook, Codec, CodecModel, LatentGrid, MapNormalizer, PatchDiscriminator, RandomFeaturePerceptual,
    VectorQuantizer, build_codec, codebook_utilization, codec_loss, quantize, straight_through, train_codec,
)
from uvtalk.config import CodecConfig
from uvtalk.errors import CheckpointMismatchError, ConfigurationError, ContractError, DataError

TINY = CodecConfig(resolution=16, channels=(8, 16), latent_dim=4, codebook_size=16, attention=False,
                   discriminator_warmup_steps=50, steps=60, batch_size=4, log_every=1000)


def tiny_maps(n=8, seed=0):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:16, 0:16] / 16.0
    maps = []
    for _ in range(n):
        a, b, c = r.uniform(-1, 1, 3)
        maps.append(np.stack([a * xx, b * yy, c * xx * yy], axis=-1))
    return np.asarray(maps)


# --------------------------------------------------------------------------- quantizer


def test_quantize_trivial_case():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
    q = quantize(LatentGrid(np.array([[[0.1, 0.2]]])), cb)
    assert q.quantized and q.indices[0, 0] == 0
    np.testing.assert_array_equal(q.values[0, 0], [0.0, 0.0])


def test_quantize_is_idempotent():
    cb = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
    q = quantize(LatentGrid(np.array([[[1.0, 1.0]]])), cb)
    assert q.indices[0, 0] == 1
    q2 = quantize(LatentGrid(q.values), cb)
    np.testing.assert_array_equal(q2.values, q.values)
    np.testing.assert_array_equal(q2.indices, q.indices)


def test_quantize_ties_go_to_lowest_index():
    cb = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))
    q = quantize(LatentGrid(np.zeros((1, 1, 2))), cb)
    assert q.indices[0, 0] == 0
    q = quantize(LatentGrid(np.array([[[1.0, 0.0]]])), cb)
    assert q.indices[0, 0] == 0


def test_quantize_matches_exhaustive_scan(rng):
    cb = Codebook(rng.normal(size=(128, 8)))
    z = rng.normal(size=(4, 4, 8))
    q = quantize(LatentGrid(z), cb)
    np.testing.assert_array_equal(q.indices.reshape(-1), nearest_neighbour(z.reshape(-1, 8), cb.entries))
    np.testing.assert_array_equal(q.values, cb.entries[q.indices])


def test_quantize_errors(rng):
    cb = Codebook(rng.normal(size=(4, 3)))
    with pytest.raises(ValueError):
        quantize(LatentGrid(rng.normal(size=(2, 2, 5))), cb)
    q = quantize(LatentGrid(rng.normal(size=(2, 2, 3))), cb)
    with pytest.raises(ValueError):
        quantize(q, cb)
    with pytest.raises(ValueError):
        Codebook(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        Codebook(np.array([[0.0, np.nan], [1.0, 1.0]]))


def test_torch_quantizer_matches_scan(rng):
    vq = VectorQuantizer(32, 6)
    with torch.no_grad():
        vq.embedding.weight.copy_(torch.from_numpy(rng.normal(size=(32, 6)).astype(np.float32)))
    z = torch.from_numpy(rng.normal(size=(3, 6, 4, 4)).astype(np.float32))
    idx = vq.indices(z).reshape(-1).numpy()
    flat = z.permute(0, 2, 3, 1).reshape(-1, 6).double().numpy()
    np.testing.assert_array_equal(idx, nearest_neighbour(flat, vq.embedding.weight.detach().double().numpy()))


def test_straight_through_gradient_equals_identity_gradient(rng):
    z = torch.tensor(rng.normal(size=(2, 4, 3, 3)), requires_grad=True)
    zq = torch.tensor(rng.normal(size=(2, 4, 3, 3)))
    w = torch.tensor(rng.normal(size=(2, 4, 3, 3)))
    (straight_through(z, zq) * w).sum().backward()
    g_st = z.grad.clone()
    z.grad = None
    (z * w).sum().backward()
    assert torch.max(torch.abs(g_st - z.grad)) < 1e-12
    np.testing.assert_allclose(straight_through(z, zq).detach().numpy(), zq.numpy(), atol=1e-12)


# --------------------------------------------------------------------------- losses


class _Identity2(nn.Module):
    def forward(self, x):
        return x


def test_code_term_hand_case():
    # 2x2 map, 2 channels, identity encoder/generator; codebook {(0,0), (1,1)}
    vq = VectorQuantizer(2, 2, beta=0.25)
    with torch.no_grad():
        vq.embedding.weight.copy_(torch.tensor([[0.0, 0.0], [1.0, 1.0]]))
    model = CodecModel(_Identity2(), vq, _Identity2())
    x = torch.tensor([[[[0.2, 0.9], [0.0, 0.6]], [[0.1, 1.0], [0.4, 0.7]]]])  # (1, 2, 2, 2)
    _, _, code, idx = model(x)
    # texel vectors (0.2,0.1)->e0, (0.9,1.0)->e1, (0.0,0.4)->e0, (0.6,0.7)->e1
    assert idx.reshape(-1).tolist() == [0, 1, 0, 1]
    sq = (0.2**2 + 0.1**2) + (0.1**2 + 0.0**2) + (0.0**2 + 0.4**2) + (0.4**2 + 0.3**2)
    assert float(code.detach()) == pytest.approx((1 + 0.25) * sq / 8, abs=1e-7)


def test_loss_total_is_weighted_sum(rng):
    torch.manual_seed(0)
    cfg = TINY
    model = build_codec(cfg)
    per = RandomFeaturePerceptual(seed=0)
    disc = PatchDiscriminator()
    batch = torch.from_numpy(tiny_maps(4).astype(np.float32)).permute(0, 3, 1, 2)
    for step in (0, cfg.discriminator_warmup_steps):
        lb = codec_loss(batch, model, step, cfg, per, disc)
        f = lb.floats()
        expect = f["rec"] + cfg.eta_per * f["per"] + cfg.eta_adv * f["adv"] + cfg.eta_code * f["code"]
        assert f["total"] == pytest.approx(expect, abs=1e-6)
    assert codec_loss(batch, model, 0, cfg, per, disc).floats()["adv"] == 0.0


def test_warmup_makes_total_independent_of_discriminator():
    torch.manual_seed(0)
    model = build_codec(TINY)
    batch = torch.from_numpy(tiny_maps(4).astype(np.float32)).permute(0, 3, 1, 2)
    a = codec_loss(batch, model, 10, TINY, None, PatchDiscriminator()).floats()["total"]
    torch.manual_seed(99)
    b = codec_loss(batch, model, 10, TINY, None, PatchDiscriminator()).floats()["total"]
    assert a == b


def test_perfect_reconstruction_has_zero_rec_and_per():
    model = CodecModel(_Identity2(), VectorQuantizer(2, 3), _Identity2())
    x = torch.rand(2, 3, 8, 8)
    per = RandomFeaturePerceptual(seed=0)
    assert float((x - x).abs().mean()) == 0.0
    assert float(per(x, x).max()) == 0.0


def test_perceptual_backend_is_frozen_and_seeded():
    a, b = RandomFeaturePerceptual(seed=3), RandomFeaturePerceptual(seed=3)
    assert all(not p.requires_grad for p in a.parameters())
    x, y = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
    assert torch.equal(a(x, y), b(x, y))
    assert a.backend == "random-conv"


# --------------------------------------------------------------------------- model / training


def test_shape_contract_and_divisibility():
    codec = Codec("wrinkle", CodecConfig(), MapNormalizer("wrinkle"))
    z = codec.encode(np.full((2, 64, 64, 3), 0.6))
    assert z.shape == (2, 4, 4, 8)
    q, idx = codec.quantize(z)
    assert idx.shape == (2, 4, 4)
    assert codec.decode(q).shape == (2, 64, 64, 3)
    with pytest.raises(ConfigurationError):
        build_codec(CodecConfig(resolution=40))


def test_eval_mode_is_deterministic(rng):
    torch.manual_seed(0)
    codec = Codec("motion", TINY, MapNormalizer("motion", 2.0))
    m = tiny_maps(3)
    np.testing.assert_array_equal(codec.encode(m), codec.encode(m))
    q, _ = codec.quantize(codec.encode(m))
    np.testing.assert_array_equal(codec.decode(q), codec.decode(q))


def test_decode_rejects_unquantized_grid():
    codec = Codec("motion", TINY, MapNormalizer("motion", 1.0))
    with pytest.raises(ContractError):
        codec.decode(LatentGrid(np.zeros((4, 4, 4))))


def test_normalizer_round_trip():
    for stream, scale in (("motion", 7.5), ("wrinkle", 1.0)):
        n = MapNormalizer(stream, scale)
        x = np.linspace(0.01, 0.99, 9)
        np.testing.assert_allclose(n.inverse(n.forward(x)), x)
    with pytest.raises(ValueError):
        MapNormalizer("motion", 0.0)


def test_training_reduces_loss_and_is_deterministic():
    maps = tiny_maps(8)
    cfg = CodecConfig(**{**TINY.__dict__, "steps": 200})
    a = train_codec(maps, "motion", cfg, normalization_scale=1.0)
    b = train_codec(maps, "motion", cfg, normalization_scale=1.0)
    first = np.mean([r["rec"] for r in a.loss_log[:10]])
    last = np.mean([r["rec"] for r in a.loss_log[-10:]])
    assert last < first
    np.testing.assert_array_equal(a.codebook.entries, b.codebook.entries)
    assert a.content_hash() == b.content_hash()
    assert 0 < codebook_utilization(a, maps) <= 1


def test_overfit_single_map():
    m = tiny_maps(1, seed=5)
    cfg = CodecConfig(**{**TINY.__dict__, "steps": 400, "eta_adv": 0.0, "batch_size": 1})
    codec = train_codec(m, "motion", cfg, normalization_scale=1.0)
    assert np.abs(codec.reconstruct(m) - m).mean() < 0.05


def test_checkpoint_round_trip(tmp_path):
    codec = train_codec(tiny_maps(8), "wrinkle", TINY)
    path = codec.save(tmp_path / "c.pt")
    back = Codec.load(path)
    assert back.content_hash() == codec.content_hash()
    assert back.step == TINY.steps and back.stream == "wrinkle"
    np.testing.assert_array_equal(back.codebook.entries, codec.codebook.entries)
    blob = torch.load(path, weights_only=False)
    assert {"config_hash", "step", "codebook_f32", "normalization_scale"} <= set(blob)
    blob["codebook_f32"] = np.zeros(blob["codebook_shape"], "<f4").tobytes()
    torch.save(blob, tmp_path / "tampered.pt")
    with pytest.raises(CheckpointMismatchError):
        Codec.load(tmp_path / "tampered.pt")
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        Codec.load(tmp_path / "junk.pt")


def test_motion_decode_is_zero_outside_coverage():
    cov = np.zeros((16, 16), bool)
    cov[4:12, 4:12] = True
    codec = Codec("motion", TINY, MapNormalizer("motion", 1.0), coverage=cov)
    out = codec.reconstruct(tiny_maps(2))
    assert np.all(out[:, ~cov] == 0)
