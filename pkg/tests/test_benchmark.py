"""
Throughput benchmark tests
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from benchmark import bench_throughput, run_benchmark
from errors import InvalidArgumentError
from pipeline_api import RdJsccPipeline
from residual_diffusion import TrainMode
from tests.fixtures import small_dataset, tiny_bundle


@pytest.fixture(scope="module")
def dataset():
    return small_dataset(n=6)


def _run(dataset, steps=(2, 4), **bundle_kwargs):
    pipeline = RdJsccPipeline(tiny_bundle(dataset, **bundle_kwargs))
    return run_benchmark(pipeline, dataset.values, batch_size=16, n_repeats=2, warmup=1, steps=steps)


class TestBenchThroughput:

    def test_counts_calls_and_returns_rate(self):
        calls = []
        rate = bench_throughput(lambda: calls.append(1), batch_size=10, n_repeats=3, warmup=2)
        assert len(calls) == 5
        assert rate > 0

    def test_invalid_sizes(self):
        with pytest.raises(InvalidArgumentError):
            bench_throughput(lambda: None, batch_size=0)
        with pytest.raises(InvalidArgumentError):
            bench_throughput(lambda: None, batch_size=4, n_repeats=0)


class TestRunBenchmark:

    def test_reports_every_stage(self, dataset):
        report = _run(dataset)
        assert [s.stage for s in report.stages] == ['encoder', 'decoder', 'diffusion-2', 'diffusion-4']
        assert report.get('encoder').ratio_to_encoder == pytest.approx(1.0)
        assert all(s.samples_per_s > 0 for s in report.stages)
        assert report.step_ratio('diffusion-4', 'diffusion-2') > 0

    def test_frame_columns(self, dataset):
        frame = _run(dataset).to_frame()
        assert list(frame.columns) == ['stage', 'samples_per_s', 'batch_size', 'n_repeats', 'ratio_to_encoder']
        assert (frame['batch_size'] == 16).all()

    def test_steps_beyond_horizon_are_skipped(self, dataset):
        report = _run(dataset, steps=(2, 20))
        assert report.get('diffusion-20') is None
        assert report.step_ratio() is None

    def test_supervised_bundle_runs_any_step_count(self, dataset):
        report = _run(dataset, steps=(2, 20), mode=TrainMode.SUPERVISED_UNET)
        assert report.get('diffusion-20') is not None

    def test_stage1_only_bundle(self, dataset):
        report = _run(dataset, with_denoiser=False)
        assert [s.stage for s in report.stages] == ['encoder', 'decoder']

    def test_empty_input(self, dataset):
        pipeline = RdJsccPipeline(tiny_bundle(dataset))
        with pytest.raises(InvalidArgumentError):
            run_benchmark(pipeline, dataset.values[:0])
