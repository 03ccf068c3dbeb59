"""
Stage-1 autoencoder tests: latent contract, SNR gating, MRL nesting, losses, gradients
"""

import math
import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from autoencoder import (
    AutoencoderConfig,
    CsiAutoencoder,
    MrlConfig,
    SnrGate,
    count_parameters,
    mrl_loss,
    mse_loss,
    pair_complex,
    snr_adapt,
    snr_input,
    unpair_complex,
)
from core_config import AeSection
from errors import InvalidArgumentError
from feedback_channel import ChannelConfig
from quantizer import QuantConfig
from tests.fixtures import finite_difference_check, tiny_ae_config


def _batch(n=3, rows=4, cols=4, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(n, 2, rows, cols, generator=g, dtype=dtype)


def _model(mrl_rates=None, k_active=4, seed=0):
    torch.manual_seed(seed)
    return CsiAutoencoder(tiny_ae_config(k_active=k_active, mrl_rates=mrl_rates)).double()


class TestLatentContract:

    def test_active_prefix_has_unit_power_and_suffix_is_zero(self):
        model = _model(k_active=3, mrl_rates=[1, 3, 4])
        latent = model.encode(_batch(), 5.0, k_active=3)
        s = latent.values
        assert s.shape == (3, 4)
        power = (s[:, :3].abs() ** 2).mean(dim=-1)
        assert torch.allclose(power, torch.ones_like(power), atol=1e-6)
        assert torch.all(s[:, 3:] == 0)

    def test_rate_outside_set_raises(self):
        model = _model(mrl_rates=[2, 4])
        with pytest.raises(InvalidArgumentError):
            model.encode(_batch(), 5.0, k_active=3)

    def test_wrong_csi_shape_raises(self):
        model = _model()
        with pytest.raises(InvalidArgumentError):
            model.encode(torch.zeros(2, 2, 5, 4, dtype=torch.float64), 5.0)

    def test_decode_shape_and_latent_check(self):
        model = _model()
        y = model.encode(_batch(), 5.0).values
        assert model.decode(y, 5.0).shape == (3, 2, 4, 4)
        with pytest.raises(InvalidArgumentError):
            model.decode(y[:, :3], 5.0)

    def test_complex_pairing_roundtrip(self):
        reals = torch.arange(8, dtype=torch.float64).reshape(1, 8)
        z = pair_complex(reals)
        assert z[0, 1] == complex(2, 3)
        assert torch.equal(unpair_complex(z), reals)


class TestMatryoshkaNesting:

    def test_prefix_identical_across_rates(self):
        model = _model(mrl_rates=[2, 4])
        H = _batch()
        short = model.encode(H, 10.0, k_active=2).values
        full = model.encode(H, 10.0, k_active=4).values
        assert torch.equal(short[:, :2], full[:, :2])
        assert torch.all(short[:, 2:] == 0)

    def test_masked_entries_carry_no_gradient(self):
        model = _model(mrl_rates=[2, 4])
        H = _batch()
        model.zero_grad()
        recon = model(H, 10.0, ChannelConfig(), k_active=2, generator=torch.Generator().manual_seed(0))
        mse_loss(H, recon).backward()
        # latent entries 2, 3 are the interleaved reals 4..7
        assert torch.all(model.encoder.dense.weight.grad[4:] == 0)
        assert torch.all(model.encoder.dense.bias.grad[4:] == 0)
        assert torch.all(model.decoder.dense.weight.grad[:, 4:] == 0)
        assert torch.any(model.encoder.dense.weight.grad[:4] != 0)

        def loss_fn():
            g = torch.Generator().manual_seed(0)
            return mse_loss(H, model(H, 10.0, ChannelConfig(), k_active=2, generator=g)).item()

        base = loss_fn()
        with torch.no_grad():
            model.encoder.dense.weight[5, 0] += 1e-3
            model.decoder.dense.weight[0, 6] += 1e-3
        assert loss_fn() == base

    def test_forward_all_rates_returns_one_reconstruction_per_rate(self):
        model = _model(mrl_rates=[2, 4])
        out = model.forward_all_rates(_batch(), math.inf, ChannelConfig())
        assert sorted(out) == [2, 4]
        for recon in out.values():
            assert recon.shape == (3, 2, 4, 4)

    def test_mrl_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            MrlConfig(True, [4, 2], [1.0, 1.0]).validate(4)
        with pytest.raises(InvalidArgumentError):
            MrlConfig(True, [2, 8], [1.0, 1.0]).validate(4)
        with pytest.raises(InvalidArgumentError):
            MrlConfig(True, [2, 4], [1.0]).validate(4)


class TestSnrAdaptation:

    def test_gate_input_is_scaled_and_capped(self):
        snr = snr_input(torch.tensor([10.0, math.inf]), 2, cap_db=40.0)
        assert snr.shape == (2, 1)
        assert snr[0, 0] == pytest.approx(1.0)
        assert snr[1, 0] == pytest.approx(4.0)

    def test_gates_lie_in_unit_interval(self):
        gate = SnrGate(6)
        g = gate.gates(torch.tensor([[-0.5], [3.0]]))
        assert g.shape == (2, 6)
        assert torch.all((g > 0) & (g < 1))

    def test_saturated_gates_pass_features_through(self):
        gate = SnrGate(4).double()
        with torch.no_grad():
            gate.fc2.weight.zero_()
            gate.fc2.bias.fill_(60.0)
        features = torch.randn(3, 4, 2, 2, dtype=torch.float64)
        for snr_db in (-5.0, 10.0, math.inf):
            assert torch.allclose(snr_adapt(features, snr_db, gate), features, atol=1e-15)

    def test_each_channel_scaled_by_its_gate(self):
        torch.manual_seed(0)
        gate = SnrGate(4).double()
        features = torch.randn(2, 4, 3, 3, dtype=torch.float64)
        snr_db = torch.tensor([0.0, 7.0], dtype=torch.float64)
        out = snr_adapt(features, snr_db, gate)
        g = gate.gates(snr_input(snr_db, 2, 40.0, dtype=torch.float64))
        for b in range(2):
            for c in range(4):
                assert torch.allclose(out[b, c], g[b, c] * features[b, c])

    def test_networks_gate_through_snr_adapt(self):
        model = _model()
        with torch.no_grad():
            for gate in list(model.encoder.gates) + list(model.decoder.gates):
                gate.fc2.weight.zero_()
                gate.fc2.bias.fill_(60.0)
        H = _batch()
        assert torch.allclose(model.encode(H, -5.0).values, model.encode(H, 30.0).values)
        y = model.encode(H, 10.0).values
        assert torch.allclose(model.decode(y, -5.0), model.decode(y, 30.0))

    def test_output_depends_on_snr(self):
        model = _model()
        H = _batch()
        a = model.encode(H, -5.0).values
        b = model.encode(H, 20.0).values
        assert not torch.allclose(a, b)

    def test_noiseless_sentinel_matches_cap(self):
        model = _model()
        H = _batch()
        assert torch.equal(model.encode(H, math.inf).values, model.encode(H, 40.0).values)


class TestQuantizedFeedback:

    def test_quantized_latent_uses_digital_link(self):
        model = _model()
        H = _batch()
        quant = QuantConfig(mu=50.0, bits=2, s_max=3.0)
        latent = model.encode(H, math.inf, quant=quant, straight_through=False)
        y = model.feedback(latent, ChannelConfig(), 0.0, digital=True)
        assert torch.equal(y, latent.values)
        # 2 bits -> at most 4 magnitudes per component
        assert len(torch.unique(latent.values.real)) <= 4


class TestLosses:

    def test_mse_is_per_sample_sum_averaged_over_batch(self):
        H = torch.zeros(2, 2, 2, 2)
        H_hat = torch.ones(2, 2, 2, 2)
        assert float(mse_loss(H, H_hat)) == pytest.approx(8.0)
        assert float(mse_loss(H[0], H_hat[0])) == pytest.approx(8.0)

    def test_mse_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            mse_loss(torch.zeros(1, 2, 2, 2), torch.zeros(1, 2, 2, 3))

    def test_mrl_loss_is_weighted_sum(self):
        H = torch.zeros(1, 2, 2, 2)
        recons = {2: torch.ones(1, 2, 2, 2), 4: 2 * torch.ones(1, 2, 2, 2)}
        mrl = MrlConfig(True, [2, 4], [1.0, 0.5])
        assert float(mrl_loss(H, recons, mrl)) == pytest.approx(8.0 + 0.5 * 32.0)
        with pytest.raises(InvalidArgumentError):
            mrl_loss(H, {2: recons[2]}, mrl)


class TestGradientFidelity:

    def test_mse_loss_gradients_match_finite_differences(self):
        model = _model()
        H = _batch()

        def loss_fn():
            g = torch.Generator().manual_seed(11)
            return mse_loss(H, model(H, 5.0, ChannelConfig(), generator=g))

        errors = finite_difference_check(model, loss_fn, n_samples=100)
        # one sample may straddle a ReLU kink
        assert np.mean(errors < 1e-3) >= 0.99

    def test_mrl_loss_gradients_match_finite_differences(self):
        model = _model(mrl_rates=[2, 4])
        H = _batch(seed=1)

        def loss_fn():
            g = torch.Generator().manual_seed(12)
            return mrl_loss(H, model.forward_all_rates(H, 0.0, ChannelConfig(), g), model.config.mrl)

        errors = finite_difference_check(model, loss_fn, n_samples=100, seed=1)
        assert np.mean(errors < 1e-3) >= 0.99


class TestConfig:

    def test_tiny_model_is_small(self):
        assert count_parameters(_model()) <= 5000

    def test_from_section_and_dict_roundtrip(self):
        section = AeSection(depth='TWO_LAYER', latent_k_max=8, k_active=8, n_res_blocks=2)
        config = AutoencoderConfig.from_section(section, rows=4, cols=4)
        assert config.encoder.layers == [(2, 7), (2, 7)]
        back = AutoencoderConfig.from_dict(config.to_dict())
        assert back == config
        assert back.rates == [8]

    def test_mismatched_latent_sizes(self):
        config = tiny_ae_config()
        config.decoder.latent_k_max = 8
        with pytest.raises(InvalidArgumentError):
            CsiAutoencoder(config)
