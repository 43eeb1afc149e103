import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exposure_aae.aae import (
    LAYER_ORDER, HyperParams, adversarial_terms, decode, discriminate, encode, init_params, sample_prior,
    total_loss,
)
from exposure_aae.errors import ConfigError, DimensionError
from exposure_aae.numerics import Tensor, check_gradients, ops


@pytest.fixture(scope="module")
def params():
    return init_params(seed=0)


def batch(n, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 8, 29))


@pytest.mark.parametrize("n", [1, 3])
def test_shapes(params, n):
    z = encode(params, batch(n))
    assert z.shape == (n, 1000)
    assert decode(params, z).shape == (n, 8, 29)
    assert discriminate(params, z).shape == (n, 1)


def test_latent_width_invariant(params):
    L = params.layers
    assert L["enc_fc"]["W"].shape[1] == L["dec_fc"]["W"].shape[0] == L["disc_fc1"]["W"].shape[0] == 1000
    assert tuple(params.layers) == LAYER_ORDER


def test_zero_weights_zero_latent_and_half_probability():
    p = init_params(zero=True)
    assert np.all(encode(p, np.zeros((2, 8, 29))).data == 0.0)
    z = np.random.default_rng(1).standard_normal((4, 1000))
    assert np.all(discriminate(p, z).data == 0.5)


@given(st.integers(0, 1000))
@settings(max_examples=5, deadline=None)
def test_output_ranges(seed):
    p = init_params(seed=seed % 7)
    x = np.random.default_rng(seed).uniform(-3, 3, (2, 8, 29))
    out = p.reconstruct(x).data
    assert np.all((out >= 0) & (out <= 1))
    d = discriminate(p, 5 * np.random.default_rng(seed).standard_normal((3, 1000))).data
    assert np.all((d > 0) & (d < 1))


@pytest.mark.parametrize("bad", [(2, 7, 29), (2, 8, 28), (8, 29)])
def test_encode_rejects_bad_shape(params, bad):
    with pytest.raises(DimensionError):
        encode(params, np.zeros(bad))


def test_decode_and_discriminate_reject_bad_width(params):
    with pytest.raises(DimensionError):
        decode(params, np.zeros((2, 999)))
    with pytest.raises(DimensionError):
        discriminate(params, np.zeros((2, 10)))


def test_encode_gradient_wrt_input_matches_finite_differences(params):
    proj = np.random.default_rng(2).standard_normal((1000, 1))

    def f(x):
        return ops.matmul(encode(params, x), Tensor(proj))

    err = check_gradients(f, [batch(1, 3)], step=1e-5)
    assert err < 1e-4


def test_reconstruct_gradient_wrt_decoder_weights():
    hp = HyperParams(latent_dim=6, lstm_hidden=4, conv1_channels=2, conv2_channels=2, disc_widths=(3, 2))
    p = init_params(hp, seed=4)
    z = np.random.default_rng(5).standard_normal((2, 6))
    W = p.layers["dec_tconv1"]["W"]

    def f(w):
        p.layers["dec_tconv1"]["W"] = w
        try:
            return ops.mul(decode(p, z), 1.0)
        finally:
            p.layers["dec_tconv1"]["W"] = W

    assert check_gradients(f, [W.data.copy()]) < 1e-4


def test_forward_deterministic(params):
    x = batch(2, 8)
    np.testing.assert_array_equal(params.reconstruct(x).data, params.reconstruct(x).data)
    again = init_params(seed=0)
    np.testing.assert_array_equal(again.reconstruct(x).data, params.reconstruct(x).data)


def test_sample_prior_reproducible_and_moments():
    a, b = sample_prior(3, seed=9), sample_prior(3, seed=9)
    np.testing.assert_array_equal(a.data, b.data)
    big = sample_prior(100_000, 1000, seed=0).data
    assert np.abs(big.mean(axis=0)).max() < 0.02
    assert np.abs(big.var(axis=0) - 1.0).max() < 0.05
    with pytest.raises(DimensionError):
        sample_prior(0)


def test_untrained_discriminator_near_chance(params):
    z_prior = sample_prior(256, seed=1)
    z_enc = encode(params, batch(256, 2))
    loss = adversarial_terms(discriminate(params, z_prior), discriminate(params, z_enc)).item()
    assert abs(loss - 2 * math.log(2)) < 0.15


def test_total_loss_examples():
    x = np.zeros((1, 2))
    xh = np.ones((1, 2)) * math.sqrt(0.5)
    half = Tensor(np.full((4, 1), 0.5))
    assert total_loss(x, xh, half, half, 0.0).item() == pytest.approx(0.5, abs=1e-15)
    assert total_loss(x, x, half, half, 1.0).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert total_loss(x, xh, half, half, 1.0).item() == pytest.approx(0.5 + 1.3863, abs=1e-4)


def test_sign_convention_swaps_roles():
    a, b = Tensor(np.array([[0.9]])), Tensor(np.array([[0.2]]))
    assert adversarial_terms(a, b, "paper").item() == pytest.approx(adversarial_terms(b, a).item())


@pytest.mark.parametrize("kw", [dict(n_features=28), dict(lambda_adv=-1.0), dict(latent_dim=0),
                                dict(adv_sign_convention="other"), dict(kernel_size=2)])
def test_hyperparams_validation(kw):
    with pytest.raises(ConfigError):
        HyperParams(**kw)


def test_init_seeded_and_metadata():
    a, b = init_params(seed=3), init_params(seed=3)
    for (na, ta), (nb, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert na == nb
        np.testing.assert_array_equal(ta.data, tb.data)
    W = a.layers["enc_fc"]["W"].data
    assert np.abs(W).max() <= math.sqrt(1 / 256)
    assert a.metadata["seed"] == 3 and a.metadata["hyperparams"]["latent_dim"] == 1000
