"""
U-Net denoiser tests
"""

import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core_config import DiffSection
from errors import InvalidArgumentError
from unet_denoiser import DenoiserConfig, UNetDenoiser, denoiser_forward, sinusoidal_embedding
from tests.fixtures import small_denoiser_config, tiny_denoiser_config


class TestTimeEmbedding:

    def test_shape_and_range(self):
        emb = sinusoidal_embedding(torch.tensor([0, 3, 20]), 8)
        assert emb.shape == (3, 8)
        assert torch.all(emb.abs() <= 1.0)

    def test_t_zero_is_sin_zero_cos_one(self):
        emb = sinusoidal_embedding(torch.tensor([0]), 6)
        assert torch.allclose(emb[0, :3], torch.zeros(3, dtype=emb.dtype))
        assert torch.allclose(emb[0, 3:], torch.ones(3, dtype=emb.dtype))

    def test_distinct_timesteps_differ(self):
        emb = sinusoidal_embedding(torch.tensor([1, 2]), 8)
        assert not torch.allclose(emb[0], emb[1])


class TestUNet:

    def test_output_matches_input_shape(self):
        torch.manual_seed(0)
        model = UNetDenoiser(small_denoiser_config())
        z = torch.randn(3, 2, 4, 4)
        out = model(z, torch.randn_like(z), torch.tensor([1, 2, 3]))
        assert out.shape == z.shape

    def test_odd_spatial_sizes(self):
        torch.manual_seed(0)
        model = UNetDenoiser(small_denoiser_config(rows=5, cols=3))
        z = torch.randn(2, 2, 5, 3)
        assert model(z, z, 1).shape == z.shape

    def test_output_depends_on_time_and_estimate(self):
        torch.manual_seed(0)
        model = UNetDenoiser(tiny_denoiser_config()).eval()
        z = torch.randn(1, 2, 4, 4)
        h = torch.randn(1, 2, 4, 4)
        with torch.no_grad():
            base = model(z, h, 1)
            assert not torch.allclose(base, model(z, h, 4))
            assert not torch.allclose(base, model(z, torch.zeros_like(h), 1))

    def test_scalar_t_broadcasts(self):
        torch.manual_seed(0)
        model = UNetDenoiser(tiny_denoiser_config()).eval()
        z = torch.randn(2, 2, 4, 4)
        with torch.no_grad():
            assert torch.equal(model(z, z, 3), denoiser_forward(z, z, torch.tensor([3, 3]), model))
            assert torch.equal(denoiser_forward(z, z, 3, model), model(z, z, torch.tensor([3, 3])))

    def test_mismatched_inputs_raise(self):
        model = UNetDenoiser(tiny_denoiser_config())
        with pytest.raises(InvalidArgumentError):
            model(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 3), 1)
        with pytest.raises(InvalidArgumentError):
            model(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), 1)

    def test_group_norm_uses_eight_groups_when_divisible(self):
        model = UNetDenoiser(small_denoiser_config())
        assert model.down[0].norm2.num_groups == 8
        assert model.down[0].norm1.num_groups == 8
        assert UNetDenoiser(tiny_denoiser_config()).down[0].norm1.num_groups == 1


class TestDenoiserConfig:

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            DenoiserConfig(time_dim=7)
        with pytest.raises(InvalidArgumentError):
            DenoiserConfig(mults=[])

    def test_from_section_and_roundtrip(self):
        config = DenoiserConfig.from_section(DiffSection(base_channels=16, mults=[1, 2]), rows=8, cols=8)
        assert config.base_channels == 16 and config.rows == 8
        assert DenoiserConfig.from_dict(config.to_dict()) == config
