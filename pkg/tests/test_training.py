"""
Training loop tests: determinism, resume, divergence guard, logged columns
"""

import copy
import math
import os
import sys

import numpy as np
import pandas as pd
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from autoencoder import pair_complex, unpair_complex
from core_config import OptimizerSection, QuantSection
from csi_data import channel_power
from data_normalization import CsiNormalizer
from errors import DivergenceError, InvalidArgumentError
from feedback_channel import ChannelConfig, CnrConfig
from residual_diffusion import TrainMode, make_schedule, train_denoiser
from tests.fixtures import small_dataset, tiny_ae_config, tiny_denoiser_config
from training import LossGuard, build_autoencoder, cosine_lr, train_autoencoder


@pytest.fixture(scope="module")
def data():
    dataset = small_dataset(n=24)
    values = np.asarray(dataset.values)
    return values, CsiNormalizer.fit(values), channel_power(values)


def _optim(iterations=4, lr=1e-3, lr_min=1e-5):
    return OptimizerSection(lr=lr, lr_min=lr_min, batch_size=8, iterations=iterations)


def _train_ae(data, iterations=4, **kwargs):
    values, stats, p_h = data
    config = kwargs.pop('config', tiny_ae_config())
    optim = kwargs.pop('optim', _optim(iterations))
    return train_autoencoder(values, config, ChannelConfig(), optim, seed=0,
                             stats=stats, p_h=p_h, **kwargs)


# ============================================================================
# Shared plumbing
# ============================================================================

class TestPlumbing:

    def test_cosine_lr_endpoints(self):
        assert cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
        assert cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
        assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx(0.5 * (1e-3 + 1e-5))
        assert cosine_lr(5, 0, 1e-3, 1e-5) == 1e-3

    def test_loss_guard_raises_with_recent_losses(self):
        guard = LossGuard(history=2)
        for i, v in enumerate([3.0, 2.0, 1.0]):
            guard.check(torch.tensor(v), i)
        with pytest.raises(DivergenceError) as exc:
            guard.check(torch.tensor(float('nan')), 3)
        diag = exc.value.diagnostics()
        assert diag['iteration'] == 3
        assert diag['recent_losses'] == [2.0, 1.0]

    def test_loss_guard_rejects_inf(self):
        with pytest.raises(DivergenceError):
            LossGuard().check(torch.tensor(math.inf), 0)


# ============================================================================
# Stage 1
# ============================================================================

class TestTrainAutoencoder:

    def test_log_columns_and_finite_loss(self, data):
        result = _train_ae(data)
        assert list(result.log['iteration']) == [0, 1, 2, 3]
        assert {'iteration', 'lr', 'loss'} <= set(result.log.columns)
        assert np.all(np.isfinite(result.log['loss']))
        assert result.state.iteration == 4
        assert not result.model.training

    def test_same_seed_same_log(self, data):
        a = _train_ae(data, cnr=CnrConfig(10.0))
        b = _train_ae(data, cnr=CnrConfig(10.0))
        pd.testing.assert_frame_equal(a.log, b.log)
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_mrl_logs_every_rate(self, data):
        result = _train_ae(data, config=tiny_ae_config(mrl_rates=[2, 4]))
        assert {'mse_k2', 'mse_k4'} <= set(result.log.columns)

    def test_quantized_training_tracks_scale(self, data):
        result = _train_ae(data, quant=QuantSection(enabled=True, bits=4))
        assert 'clip_rate' in result.log.columns
        assert result.log['clip_rate'].between(0.0, 1.0).all()
        assert result.tracker is not None and result.tracker.frozen
        assert result.tracker.value > 0
        assert result.state.tracker is not None

    def test_resume_continues_iteration_counter(self, data):
        first = _train_ae(data, iterations=2)
        resumed = _train_ae(data, optim=_optim(4), model=first.model, resume=first.state)
        assert list(resumed.log['iteration']) == [0, 1, 2, 3]
        assert resumed.state.iteration == 4

    def test_resume_matches_uninterrupted_run(self, data):
        # constant learning rate so the split run sees the same schedule
        straight = _train_ae(data, optim=_optim(4, lr=1e-3, lr_min=1e-3))
        first = _train_ae(data, optim=_optim(2, lr=1e-3, lr_min=1e-3))
        resumed = _train_ae(data, optim=_optim(4, lr=1e-3, lr_min=1e-3),
                            model=first.model, resume=first.state)
        pd.testing.assert_frame_equal(straight.log, resumed.log)
        for pa, pb in zip(straight.model.parameters(), resumed.model.parameters()):
            assert torch.allclose(pa, pb, atol=1e-7)

    def test_empty_training_set(self, data):
        _, stats, p_h = data
        with pytest.raises(InvalidArgumentError):
            train_autoencoder(np.zeros((0, 2, 4, 4), dtype=np.float32), tiny_ae_config(),
                              ChannelConfig(), _optim(), 0, stats, p_h)


class TestTrainedStage1:

    @pytest.fixture(scope="class")
    def trained(self, data):
        values, stats, p_h = data
        channel = ChannelConfig(train_snr_range_db=(30.0, 40.0))
        return train_autoencoder(values, tiny_ae_config(), channel, _optim(300, lr=3e-3, lr_min=1e-4),
                                 seed=0, stats=stats, p_h=p_h).model

    @staticmethod
    def _nmse_db(model, data):
        values, stats, _ = data
        H = torch.as_tensor(CsiNormalizer.apply(values.astype(np.float64), stats), dtype=torch.float32)
        with torch.no_grad():
            recon = model(H, math.inf, ChannelConfig())
        err = ((recon - H) ** 2).flatten(start_dim=1).sum(dim=1)
        ref = (H ** 2).flatten(start_dim=1).sum(dim=1)
        return 10 * math.log10(float((err / ref).mean()))

    def test_trained_beats_untrained_at_infinite_snr(self, data, trained):
        untrained = build_autoencoder(tiny_ae_config(), seed=0).eval()
        assert self._nmse_db(trained, data) < self._nmse_db(untrained, data)

    def test_decoder_is_locally_lipschitz(self, data, trained):
        model = copy.deepcopy(trained).double().eval()
        values, stats, _ = data
        H = torch.as_tensor(CsiNormalizer.apply(values[:1].astype(np.float64), stats))
        with torch.no_grad():
            reals = unpair_complex(model.encode(H, math.inf).values)[0]

        def decode(r):
            return model.decode(pair_complex(r.unsqueeze(0)), math.inf).flatten()

        def local_gain(r):
            jacobian = torch.autograd.functional.jacobian(decode, r)
            return float(torch.linalg.matrix_norm(jacobian, ord=2))

        lipschitz = local_gain(reals)
        assert math.isfinite(lipschitz) and lipschitz > 0

        base = decode(reals).detach()
        g = torch.Generator().manual_seed(0)
        for scale in (1e-5, 1e-6):
            for _ in range(10):
                delta = scale * torch.randn(reals.shape, generator=g, dtype=reals.dtype)
                with torch.no_grad():
                    change = float(torch.norm(decode(reals + delta) - base))
                # piecewise linear: a step across a ReLU kink sees the gain on either side
                bound = max(lipschitz, local_gain(reals + delta)) * float(torch.norm(delta))
                assert change <= bound * (1 + 1e-3)


# ============================================================================
# Stage 2
# ============================================================================

class TestTrainDenoiser:

    @pytest.fixture(scope="class")
    def autoencoder(self, data):
        return _train_ae(data, iterations=2).model

    def _run(self, data, autoencoder, mode, iterations=3, **kwargs):
        values, stats, p_h = data
        return train_denoiser(values, autoencoder, tiny_denoiser_config(), make_schedule(4),
                              ChannelConfig(), _optim(iterations), seed=1, stats=stats, p_h=p_h,
                              mode=mode, **kwargs)

    @pytest.mark.parametrize("mode", list(TrainMode))
    def test_modes_train_and_log_timesteps(self, data, autoencoder, mode):
        result = self._run(data, autoencoder, mode)
        assert len(result.log) == 3
        assert np.all(np.isfinite(result.log['loss']))
        if mode is TrainMode.SUPERVISED_UNET:
            assert (result.log['t_mean'] == 0.0).all()
        else:
            assert result.log['t_mean'].between(1.0, 4.0).all()

    def test_autoencoder_stays_frozen(self, data, autoencoder):
        before = [p.detach().clone() for p in autoencoder.parameters()]
        self._run(data, autoencoder, TrainMode.RESIDUAL_DIFFUSION)
        assert all(not p.requires_grad for p in autoencoder.parameters())
        for b, p in zip(before, autoencoder.parameters()):
            assert torch.equal(b, p)

    def test_same_seed_same_log(self, data, autoencoder):
        a = self._run(data, autoencoder, TrainMode.RESIDUAL_DIFFUSION)
        b = self._run(data, autoencoder, TrainMode.RESIDUAL_DIFFUSION)
        pd.testing.assert_frame_equal(a.log, b.log)

    def test_resume_continues(self, data, autoencoder):
        first = self._run(data, autoencoder, TrainMode.RESIDUAL_DIFFUSION, iterations=2)
        resumed = self._run(data, autoencoder, TrainMode.RESIDUAL_DIFFUSION, iterations=3,
                            model=first.model, resume=first.state)
        assert list(resumed.log['iteration']) == [0, 1, 2]
