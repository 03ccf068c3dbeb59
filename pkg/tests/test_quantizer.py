"""
Quantizer tests: mu-law pair, mid-rise quantizer, straight-through latents, scale tracking
"""

import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import InvalidArgumentError, OutOfRangeError
from quantizer import (
    LatentScaleTracker,
    QuantConfig,
    clip_rate,
    compand,
    expand,
    feedback_bits,
    quantize_latent,
    quantize_uniform,
)


class TestCompanding:

    def test_expand_inverts_compand(self):
        x = np.linspace(-1.0, 1.0, 2001)
        for mu in (1.0, 50.0, 255.0):
            assert np.max(np.abs(expand(compand(x, mu), mu) - x)) < 1e-9

    def test_endpoints_and_odd_symmetry(self):
        assert compand(1.0, 50.0) == pytest.approx(1.0)
        assert compand(0.0, 50.0) == 0.0
        x = np.array([0.1, 0.4])
        np.testing.assert_allclose(compand(-x, 50.0), -compand(x, 50.0))

    def test_expands_resolution_near_zero(self):
        assert compand(0.01, 50.0) > 0.01

    def test_out_of_range_raises(self):
        with pytest.raises(OutOfRangeError):
            compand(1.5, 50.0)
        with pytest.raises(OutOfRangeError):
            expand(np.array([0.0, -1.2]), 50.0)
        with pytest.raises(OutOfRangeError):
            quantize_uniform(2.0, 4)


class TestUniformQuantizer:

    def test_error_at_most_half_step(self):
        y = np.linspace(-1.0, 1.0, 10001)
        for bits in (1, 2, 4, 6):
            _, y_hat = quantize_uniform(y, bits)
            step = 2.0 / 2 ** bits
            assert np.max(np.abs(y_hat - y)) <= step / 2 + 1e-12

    def test_level_count(self):
        y = np.random.default_rng(0).uniform(-1, 1, 50000)
        for bits in (1, 3, 4):
            code, y_hat = quantize_uniform(y, bits)
            assert len(np.unique(y_hat)) <= 2 ** bits
            assert code.min() >= 0 and code.max() <= 2 ** bits - 1

    def test_mid_rise_has_no_zero_level(self):
        code, y_hat = quantize_uniform(0.0, 2)
        assert y_hat == pytest.approx(0.25)
        assert code == 2

    def test_upper_endpoint_maps_to_top_level(self):
        code, y_hat = quantize_uniform(1.0, 3)
        assert code == 7
        assert y_hat == pytest.approx(1.0 - 0.125)

    def test_bad_bits(self):
        with pytest.raises(InvalidArgumentError):
            quantize_uniform(0.0, 0)
        with pytest.raises(InvalidArgumentError):
            QuantConfig(bits=0)

    def test_feedback_bits(self):
        assert feedback_bits(16, 4) == 128


class TestLatentQuantization:

    def _latent(self):
        g = torch.Generator().manual_seed(0)
        return torch.complex(torch.randn(4, 8, generator=g), torch.randn(4, 8, generator=g))

    def test_matches_numpy_pipeline(self):
        s = self._latent()
        config = QuantConfig(mu=50.0, bits=4, s_max=3.0)
        q = quantize_latent(s, config, straight_through=False)
        re = np.clip(s.real.numpy().astype(np.float64) / 3.0, -1, 1)
        _, y_hat = quantize_uniform(compand(re, 50.0), 4)
        np.testing.assert_allclose(q.real.numpy(), expand(y_hat, 50.0) * 3.0, rtol=1e-5, atol=1e-6)

    def test_straight_through_gradient_is_identity(self):
        s = self._latent().requires_grad_(True)
        q = quantize_latent(s, QuantConfig(s_max=2.0), straight_through=True)
        (q.real.sum() + 2 * q.imag.sum()).backward()
        assert torch.allclose(s.grad.real, torch.ones(4, 8))
        assert torch.allclose(s.grad.imag, 2 * torch.ones(4, 8))

    def test_sixteen_bits_is_nearly_lossless(self):
        g = torch.Generator().manual_seed(1)
        s = torch.complex(torch.randn(8, 32, generator=g, dtype=torch.float64),
                          torch.randn(8, 32, generator=g, dtype=torch.float64))
        s_max = float(torch.maximum(s.real.abs().max(), s.imag.abs().max()))
        q = quantize_latent(s, QuantConfig(mu=50.0, bits=16, s_max=s_max), straight_through=False)
        assert float((q - s).abs().max()) < 1e-3 * s_max

    def test_zero_latent_lands_on_smallest_level(self):
        s = torch.zeros(2, 8, dtype=torch.complex128)
        config = QuantConfig(mu=50.0, bits=4, s_max=2.0)
        q = quantize_latent(s, config, straight_through=False)
        # mid-rise: zero sits on the boundary and rounds up to +step/2
        smallest = expand(config.step / 2, 50.0) * 2.0
        assert torch.all(torch.isfinite(q.real)) and torch.all(torch.isfinite(q.imag))
        np.testing.assert_allclose(q.real.numpy(), smallest)
        np.testing.assert_allclose(q.imag.numpy(), smallest)
        assert smallest < 0.01 * 2.0

    def test_clipped_components_saturate(self):
        s = torch.tensor([[10.0 + 0j, -10.0 + 0j]])
        q = quantize_latent(s, QuantConfig(mu=50.0, bits=4, s_max=1.0), straight_through=False)
        assert float(q.real.abs().max()) <= 1.0
        assert clip_rate(s, 1.0) == pytest.approx(0.5)


class TestScaleTracker:

    def test_first_update_sets_batch_max(self):
        tracker = LatentScaleTracker(decay=0.99)
        s = torch.tensor([[0.5 + 2j, -3.0 + 0j]])
        assert tracker.update(s) == pytest.approx(3.0)

    def test_ema_and_freeze(self):
        tracker = LatentScaleTracker(decay=0.5, s_max=2.0)
        tracker.update(torch.tensor([[4.0 + 0j]]))
        assert tracker.value == pytest.approx(3.0)
        tracker.freeze()
        tracker.update(torch.tensor([[100.0 + 0j]]))
        assert tracker.value == pytest.approx(3.0)

    def test_active_prefix_only(self):
        tracker = LatentScaleTracker()
        tracker.update(torch.tensor([[1.0 + 0j, 9.0 + 0j]]), k_active=1)
        assert tracker.value == pytest.approx(1.0)

    def test_dict_roundtrip(self):
        tracker = LatentScaleTracker(decay=0.9, s_max=1.7)
        tracker.freeze()
        back = LatentScaleTracker.from_dict(tracker.to_dict())
        assert back.value == pytest.approx(1.7) and back.frozen
        assert back.config(50.0, 4).s_max == pytest.approx(1.7)

    def test_untrained_tracker_falls_back_to_unit_scale(self):
        assert LatentScaleTracker().value == 1.0
