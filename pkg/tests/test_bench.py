# -*- coding: utf-8 -*-
import pytest

from eae import config as configuration
from eae.bench import bench, incremental_speedup, latency_summary, synthetic_stream
from eae.errors import InvalidInputError

from .factories import small_scenario


class LatencySummaryTest(object):
    def test_percentiles(self):
        summary = latency_summary(range(1, 101))
        assert list(summary) == ['p50', 'p95', 'p99', 'mean']
        assert summary['p50'] == pytest.approx(50.5)
        assert summary['mean'] == pytest.approx(50.5)
        assert summary['p99'] <= 100

    def test_empty(self):
        assert latency_summary([]) == {'p50': 0.0, 'p95': 0.0, 'p99': 0.0, 'mean': 0.0}


class SyntheticStreamTest(object):
    def test_stream(self):
        stream = synthetic_stream(32, 24, 500, 1000, seed=2)
        assert len(stream) == 500
        assert stream.is_sorted()
        assert 1 <= int(stream.t.min()) and int(stream.t.max()) <= 1000
        assert stream == synthetic_stream(32, 24, 500, 1000, seed=2)


class IncrementalSpeedupTest(object):
    def test_report(self, model):
        report = incremental_speedup(model, nodes=300, insertions=5, events_per_insert=2)
        assert report['nodes'] == 310
        assert report['insertions'] == 5
        assert report['mean_recomputed_rows'] >= 2 * model.depth
        assert report['incremental_median_us'] > 0
        assert report['full_median_us'] > 0

    @pytest.mark.parametrize('kwargs', [{'nodes': 0}, {'insertions': 0}, {'events_per_insert': 0}])
    def test_sizes(self, model, kwargs):
        with pytest.raises(InvalidInputError):
            incremental_speedup(model, **kwargs)


class BenchTest(object):
    def test_report(self, model, scenario):
        cfg = dict(configuration.defaults()['bench'], synthetic_nodes=200, insertions=3)
        report = bench(model, scenario, cfg, threads=2)
        assert report['scenario'] == scenario.scenario_id
        assert report['threads'] == 2
        assert report['no_data'] is False
        assert report['events'] == len(scenario.events)
        assert report['frames'] == len(scenario.frames)
        assert report['events_per_s'] > 0
        assert report['flops_per_event'] == model.flops_per_event()
        assert [load['event_rate'] for load in report['worst_case_load']] == cfg['event_rates']
        assert report['worst_case_load'][1]['flops_per_s'] == 1e6 * model.flops_per_event()
        assert report['incremental']['nodes'] == 203

    def test_no_events(self, model):
        quiet = small_scenario(threshold=10.0)
        cfg = dict(configuration.defaults()['bench'], synthetic_nodes=50, insertions=1)
        report = bench(model, quiet, cfg)
        assert report['no_data'] is True
        assert report['events_per_s'] == 0.0
