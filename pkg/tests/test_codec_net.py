#!/usr/bin/env python3
"""
Unit Tests for the compression networks
"Sleep! That's where I'm a Viking!" - Ralph Wiggum
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from codec_net import (
    CodecModel,
    codec_from_bytes,
    decode_image,
    encode_latent,
    hyper_forward,
    hyper_synthesis,
    load_codec,
    model_digest,
    save_codec,
    sigma_map,
)
from entropy_model import hyper_rate_bits, rate_bits
from errors import DimensionError, WeightFormatError
from models import CodecConfig
from tensor import Tensor, default_dtype, no_grad
from weights import serialize_weights


def images(n, h, w, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(n, 3, h, w)).astype(np.float32))


class TestRalphWiggumShapes:
    """
    Transform extents
    "I'm learnding!" - Ralph
    """

    def test_square_image_unpossible(self, tiny_model):
        """Test 32x32 gives a 2x2 latent and a 1x1 hyper-latent - That's unpossible!"""
        with no_grad():
            out = tiny_model(images(2, 32, 32), rng=0)
        assert out.z.shape == (2, 8, 2, 2)
        assert out.w.shape == (2, 8, 1, 1)
        assert out.x_hat.shape == (2, 3, 32, 32)
        assert out.latent_params.shape == (2, 8, 2, 2)
        assert out.hyper_params.shape == (2, 8, 1, 1)

    def test_rectangular_image_learnding(self, tiny_model):
        """Test 48x64 gives a 3x4 latent - I'm learnding!"""
        with no_grad():
            out = tiny_model(images(1, 48, 64))
        assert out.z.shape == (1, 8, 3, 4)
        assert out.w.shape == (1, 8, 1, 1)
        assert out.x_hat.shape == (1, 3, 48, 64)

    def test_hyper_forward_matches_latent_wookie(self, tiny_model):
        """Test hyper_forward crops the parameters to the latent - I bent my Wookie!"""
        with no_grad():
            z = encode_latent(images(1, 80, 48), tiny_model)
            w, params = hyper_forward(z, tiny_model)
        assert z.shape == (1, 8, 5, 3)
        assert w.shape == (1, 8, 1, 1)
        assert params.shape == z.shape

    @pytest.mark.parametrize("shape", [(1, 3, 20, 32), (1, 3, 32, 24), (1, 1, 32, 32), (3, 32, 32)])
    def test_encoder_rejects_bad_input_burning(self, tiny_model, shape):
        """Test channel and extent checks - It tastes like burning!"""
        with pytest.raises(DimensionError):
            encode_latent(Tensor(np.zeros(shape, dtype=np.float32)), tiny_model)

    def test_decoders_reject_bad_channels_viking(self, tiny_model):
        """Test the two decoders check their channel counts - Sleep! That's where I'm a Viking!"""
        with pytest.raises(DimensionError):
            decode_image(Tensor(np.zeros((1, 5, 2, 2), dtype=np.float32)), tiny_model)
        with pytest.raises(DimensionError):
            hyper_synthesis(Tensor(np.zeros((1, 5, 1, 1), dtype=np.float32)), tiny_model, (2, 2))


class TestRalphWiggumQuantizedPass:
    """
    Noise versus rounding
    "Go banana!" - Ralph
    """

    def test_eval_pass_rounds_banana(self, tiny_model):
        """Test rng=None rounds both latents - Go banana!"""
        with no_grad():
            out = tiny_model(images(1, 32, 32))
        np.testing.assert_array_equal(out.z_tilde.data, np.round(out.z_tilde.data))
        np.testing.assert_array_equal(out.w_tilde.data, np.round(out.w_tilde.data))

    def test_training_pass_adds_noise_idaho(self, tiny_model):
        """Test an rng adds bounded noise - I'm Idaho!"""
        with no_grad():
            out = tiny_model(images(1, 32, 32), rng=3)
        assert np.all(np.abs(out.z_tilde.data - out.z.data) < 0.5)
        assert np.all(np.abs(out.w_tilde.data - out.w.data) < 0.5)

    def test_sigma_floor_unpossible(self, tiny_model):
        """Test predicted scales never fall below sigma_min - That's unpossible!"""
        with no_grad():
            out = tiny_model(images(2, 32, 32, seed=1), rng=0)
        assert out.latent_params.sigma.data.min() >= tiny_model.config.sigma_min
        assert out.hyper_params.sigma.data.min() >= tiny_model.config.sigma_min

    def test_sigma_map_values_learnding(self):
        """Test the floor and the exp cap - I'm learnding!"""
        sigma = sigma_map(Tensor(np.array([-100.0, 0.0, 100.0])), 0.05).data
        np.testing.assert_allclose(sigma, [0.05, 1.0, np.exp(10.0)])

    def test_gradients_reach_every_network_wookie(self, grad_check):
        """Test rate and distortion gradients in double precision - I bent my Wookie!"""
        with default_dtype(np.float64):
            model = CodecModel(CodecConfig(latent_channels=3, hyper_channels=2), seed=2)
        x = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 16, 16)))

        def loss():
            out = model(x, rng=5)
            rate = rate_bits(out.z_tilde, out.latent_params) + hyper_rate_bits(out.w_tilde, out.hyper_params)
            return rate + ((out.x_hat - x) ** 2.0).mean() * 100.0

        checked = [
            model.encoder[0].weight,
            model.image_decoder[6].weight,
            model.hyper_decoder[4].bias,
            model.channel_prior.log_sigma,
        ]
        grad_check(loss, checked, samples=4)


class TestRalphWiggumCodecFiles:
    """
    Saving and loading
    "I choo-choo-choose you!" - Ralph
    """

    def test_save_load_round_trip_unpossible(self, tiny_model, tmp_path):
        """Test weights and config survive a round trip - That's unpossible!"""
        path = tmp_path / "tiny.nzwt"
        saved_id = save_codec(path, tiny_model)
        loaded, loaded_id = load_codec(path)
        assert saved_id == loaded_id == model_digest(tiny_model)
        assert model_digest(loaded) == loaded_id
        assert loaded.config.latent_channels == 8
        assert not loaded.training
        for name, array in tiny_model.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[name], array, err_msg=name)

    def test_digest_tracks_weights_learnding(self, tiny_config):
        """Test seeds decide the weights and so the id - I'm learnding!"""
        a = CodecModel(tiny_config.codec, seed=0)
        b = CodecModel(tiny_config.codec, seed=0)
        c = CodecModel(tiny_config.codec, seed=1)
        assert model_digest(a) == model_digest(b)
        assert model_digest(a) != model_digest(c)

    def test_missing_meta_burning(self, tiny_model):
        """Test a weight file without the meta section - It tastes like burning!"""
        with pytest.raises(WeightFormatError):
            codec_from_bytes(serialize_weights({"codec": tiny_model.state_dict()}))

    def test_weights_of_other_shape_viking(self, tiny_model, tiny_config):
        """Test loading weights into a wider config fails - Sleep! That's where I'm a Viking!"""
        wide = CodecModel(tiny_config.codec.model_copy(update={"latent_channels": 12}), seed=0)
        with pytest.raises(WeightFormatError):
            wide.load_state_dict(tiny_model.state_dict())
