import dataclasses

import numpy as np
import pytest

from mdf import numcore as nc
from mdf.losses import SwdConfig, focal_loss, swd
from mdf.model import (EO, SAR, ArchConfig, ClassifierParams, Dense, EncoderParams, arch_preset,
                       classify, encode, forward, init_twin, predict_proba, transfer_encoder)
from mdf.numcore import Tensor

F64 = np.float64


def _encoder(unit_norm=False):
    w1 = np.array([[1.0, -1.0], [0.0, 2.0]])
    w2 = np.array([[1.0], [1.0]])
    return EncoderParams([Dense(w1, np.zeros(2)), Dense(w2, np.array([0.5]))], unit_norm)


def test_encode_by_hand():
    # h = relu([1, 1] @ w1) = relu([1, 1]) ; z = h @ w2 + 0.5 = 2.5
    out = encode(_encoder(), np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(out.latents, [[2.5]])
    # second input hits the rectifier: relu([2, -2]) = [2, 0] -> 2.5
    np.testing.assert_allclose(encode(_encoder(), np.array([[2.0, 0.0]])).latents, [[2.5]])


def test_latent_layer_is_not_rectified():
    out = encode(_encoder(), np.array([[-1.0, -1.0]])).latents
    # relu([-1, -1]) = 0, z = bias
    np.testing.assert_allclose(out, [[0.5]])
    enc = EncoderParams([Dense(np.array([[-1.0]]), np.zeros(1))], False)
    assert encode(enc, np.array([[3.0]])).latents[0, 0] == -3.0


def test_unit_norm_latents(rng):
    arch = ArchConfig(input_dim=6, hidden=(8,), latent_dim=4)
    twin = init_twin(arch, 0)
    z = encode(twin.eo_encoder, rng.standard_normal((5, 6)).astype(np.float32)).latents
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-5)


def test_classify_is_affine():
    head = ClassifierParams(np.array([[1.0, 2.0]]), np.array([0.0, -1.0]))
    np.testing.assert_allclose(classify(head, np.array([[3.0]])), [[3.0, 5.0]])


def test_positive_homogeneity_without_bias_or_norm(rng):
    arch = ArchConfig(input_dim=5, hidden=(7,), latent_dim=3, unit_norm=False)
    twin = init_twin(arch, 1)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    a = encode(twin.eo_encoder, x).latents
    b = encode(twin.eo_encoder, 3.0 * x).latents
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-5, atol=1e-6)   # biases start at zero


def test_input_validation():
    enc = _encoder()
    with pytest.raises(ValueError, match="width"):
        encode(enc, np.zeros((2, 3)))
    with pytest.raises(ValueError, match="empty"):
        encode(enc, np.zeros((0, 2)))
    with pytest.raises(nc.NonFiniteError):
        encode(enc, np.array([[np.nan, 0.0]]))


def test_init_is_seeded_and_he_scaled():
    arch = ArchConfig(input_dim=400, hidden=(300,), latent_dim=32)
    a, b = init_twin(arch, 7), init_twin(arch, 7)
    for x, y in zip(a.parameters(), b.parameters()):
        assert x.tobytes() == y.tobytes()
    w = a.eo_encoder.layers[0].weight
    assert w.std() == pytest.approx(np.sqrt(2 / 400), rel=0.05)
    assert not np.array_equal(a.eo_encoder.layers[0].weight, a.sar_encoder.layers[0].weight)
    assert np.all(a.eo_encoder.layers[0].bias == 0)


def test_init_different_seed_differs():
    arch = ArchConfig(input_dim=4, hidden=(4,), latent_dim=2, n_classes=3)
    assert not np.array_equal(init_twin(arch, 0).eo_head.weight, init_twin(arch, 1).eo_head.weight)


def test_shared_head_is_one_object():
    twin = init_twin(ArchConfig(input_dim=4, hidden=(4,), latent_dim=2, n_classes=3,
                                shared_head=True), 0)
    assert twin.sar_head is twin.eo_head
    assert len(twin.parameters()) == 4 + 2 + 4   # two encoders, one head
    rebuilt = twin.with_parameters(twin.parameters())
    assert rebuilt.sar_head is rebuilt.eo_head


def test_transfer_copies_only_the_encoder():
    arch = ArchConfig(input_dim=4, hidden=(5,), latent_dim=3, n_classes=3)
    src, dst = init_twin(arch, 0), init_twin(arch, 1)
    out = transfer_encoder(src.eo_encoder, dst, SAR)
    for a, b in zip(out.sar_encoder.arrays(), src.eo_encoder.arrays()):
        np.testing.assert_array_equal(a, b)
        assert a is not b
    for name in ("eo_encoder", "eo_head", "sar_head"):
        for a, b in zip(getattr(out, name).arrays(), getattr(dst, name).arrays()):
            np.testing.assert_array_equal(a, b)


def test_transfer_rejects_mismatched_arch():
    a = init_twin(ArchConfig(input_dim=4, hidden=(5,), latent_dim=3), 0)
    b = init_twin(ArchConfig(input_dim=4, hidden=(6,), latent_dim=3), 0)
    with pytest.raises(ValueError, match="mismatch"):
        transfer_encoder(a.eo_encoder, b, SAR)
    with pytest.raises(ValueError):
        transfer_encoder(a.eo_encoder, a, "ir")


def test_presets():
    assert arch_preset("wide").hidden == (256,)
    with pytest.raises(ValueError, match="unknown"):
        arch_preset("resnet")


def test_predict_proba_rows_sum_to_one(rng):
    twin = init_twin(ArchConfig(input_dim=6, hidden=(8,), latent_dim=4, n_classes=5), 2)
    p = predict_proba(twin, rng.standard_normal((9, 6)).astype(np.float32), EO)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)


@pytest.mark.parametrize("unit_norm", [False, True])
@pytest.mark.parametrize("trial", range(3))
def test_twin_forward_gradient_matches_finite_differences(trial, unit_norm):
    r = np.random.default_rng(trial)
    arch = ArchConfig(input_dim=4, hidden=(5,), latent_dim=3, n_classes=3, unit_norm=unit_norm)
    twin = init_twin(arch, trial)
    params = [p.astype(F64) + 0.05 * r.standard_normal(p.shape) for p in twin.parameters()]
    x_eo, x_sar = r.standard_normal((6, 4)), r.standard_normal((6, 4))
    y = r.integers(0, 3, 6)

    def loss(*leaves):
        m = twin.with_parameters(leaves)
        lat_e, log_e = forward(m, Tensor(x_eo), EO)
        lat_s, log_s = forward(m, Tensor(x_sar), SAR)
        return focal_loss(log_e, y) + focal_loss(log_s, y) + swd(lat_e, lat_s, SwdConfig(8, seed=1))

    analytic = nc.grad(loss, params, dtype=F64)
    numeric = nc.central_difference(lambda *p: float(loss(*[Tensor(a) for a in p]).data),
                                    params, step=1e-5)
    for a, n in zip(analytic, numeric):
        assert nc.relative_error(a, n).max() < 1e-4


@pytest.mark.parametrize("z", [1, 4, 32, 64])
def test_latent_size_sweep(z, rng):
    arch = ArchConfig(input_dim=6, hidden=(8,), latent_dim=z, n_classes=3)
    twin = init_twin(arch, 0)
    raw = init_twin(dataclasses.replace(arch, unit_norm=False), 0)
    x = rng.standard_normal((5, 6)).astype(np.float32)
    lat, logits = forward(twin, x, SAR)
    h, _ = forward(raw, x, SAR)
    assert lat.shape == (5, z) and logits.shape == (5, 3)
    # h / sqrt(|h|^2 + eps): exactly 1 only in the limit, so compare to the formula
    sq = np.sum(np.asarray(h, np.float64) ** 2, axis=1)
    np.testing.assert_allclose(np.linalg.norm(lat, axis=1), np.sqrt(sq / (sq + 1e-6)), rtol=1e-5)
