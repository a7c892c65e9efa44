# -*- coding: utf-8 -*-
import numpy as np
import pytest

from eae.errors import ConfigError, InvalidInputError, InvariantError, ParseError, StateError
from eae.events import Event
from eae.graph import DirtySet, EventGraph, insert_event
from eae.model import HybridModel, load_feature_maps, save_feature_maps
from eae.pipeline import (FramePacket, ObjectState, RiskTimeline, fuse_node_features, gnn_forward, make_packets,
                          object_feature, read_scores, run_sequence, score_scenario, step, step_incremental,
                          window_graph)
from eae.scenario import PRESETS

from .factories import HEIGHT, WIDTH, small_config, small_scenario


def assert_same_scores(first, second, tolerance=1e-9):
    assert len(first.rows) == len(second.rows)
    for a, b in zip(first.rows, second.rows):
        assert (a['frame'], a['t_us']) == (b['frame'], b['t_us'])
        assert list(a['objects']) == list(b['objects'])
        for key in a['objects']:
            assert abs(a['objects'][key] - b['objects'][key]) <= tolerance
        assert abs(a['frame_score'] - b['frame_score']) <= tolerance


def busiest(packets):
    packet = max(packets, key=lambda p: len(p.events))
    assert len(packet.events) > 0
    return packet


class MakePacketsTest(object):
    def test_one_packet_per_frame(self, model, scenario):
        packets = make_packets(scenario, model)
        assert len(packets) == len(scenario.frames)
        assert [p.t_us for p in packets] == scenario.frames.timestamps
        assert sum(len(p.events) for p in packets) == len(scenario.events.window(packets[0].t_prev, packets[-1].t_us))
        for previous, packet in zip(packets, packets[1:]):
            assert packet.t_prev == previous.t_us

    def test_boxes(self, model, scenario):
        packets = make_packets(scenario, model)
        assert [len(p.boxes) for p in packets] == [len(scenario.tracks.frame(i)) for i in range(len(packets))]

    def test_feature_map_count(self, model, scenario):
        with pytest.raises(ConfigError):
            make_packets(scenario, model, fmaps=[])

    def test_sensor_mismatch(self, config, scenario):
        model = HybridModel.from_config(config, WIDTH * 2, HEIGHT * 2)
        with pytest.raises(ConfigError):
            make_packets(scenario, model)


class FramePacketTest(object):
    def test_event_outside_window(self, model, scenario):
        packet = busiest(make_packets(scenario, model))
        with pytest.raises(InvalidInputError):
            FramePacket(packet.index, packet.t_us, packet.t_us - 1, packet.events, packet.fmap, [],
                        packet.graph_cfg, packet.interval_us)

    def test_box_outside_sensor(self, model, scenario):
        packet = make_packets(scenario, model)[0]
        with pytest.raises(InvalidInputError):
            FramePacket(0, packet.t_us, packet.t_prev, packet.events, packet.fmap, [(1, (0, 0, WIDTH + 1, 4))],
                        packet.graph_cfg, packet.interval_us)

    def test_bbox_vector(self, model, scenario):
        packet = make_packets(scenario, model)[0]
        assert packet.bbox_vector((0, 0, WIDTH, HEIGHT)).tolist() == [0.5, 0.5, 1.0, 1.0]
        assert packet.normalized_box((8, 6, 16, 12)) == (0.25, 0.25, 0.5, 0.5)


class ObjectStateTest(object):
    def test_unknown_objects_start_at_zero(self):
        h_b, h_f = ObjectState(3).get(7)
        assert h_b.tolist() == h_f.tolist() == [0.0, 0.0, 0.0]

    def test_prune(self):
        state = ObjectState(2)
        state.update(1, np.ones(2), np.ones(2), 0)
        state.update(2, np.ones(2), np.ones(2), 4)
        state.prune(3, 3)
        assert 1 in state
        state.prune(4, 3)
        assert 1 not in state
        assert 2 in state

    def test_copy_is_independent(self):
        state = ObjectState(2)
        other = state.copy()
        other.update(1, np.ones(2), np.ones(2), 0)
        assert len(state) == 0


class RiskTimelineTest(object):
    def test_rows(self):
        timeline = RiskTimeline('s')
        row = timeline.append(0, 0, {2: 0.25, 10: 0.75}, 12.5)
        assert list(row['objects']) == ['2', '10']
        assert row['frame_score'] == 0.75
        timeline.append(1, 50000, {}, 0.0)
        assert timeline.frame_scores().tolist() == [0.75, 0.0]
        assert np.isnan(timeline.object_scores(2)[1])
        assert timeline.mean_infer_us() == 6.25

    def test_order(self):
        timeline = RiskTimeline('s')
        timeline.append(1, 50000, {}, 0.0)
        with pytest.raises(InvalidInputError):
            timeline.append(0, 0, {}, 0.0)

    def test_partial_rows(self):
        timeline = RiskTimeline('s')
        timeline.append(0, 25000, {1: 0.5}, 0.0, partial=True)
        timeline.append(0, 50000, {1: 0.5}, 0.0)
        assert len(timeline) == 1
        assert len(timeline.rows) == 2

    def test_jsonl(self, model, scenario):
        timeline = score_scenario(model, scenario)
        parsed = read_scores(timeline.to_jsonl())
        assert list(parsed) == [scenario.scenario_id]
        assert parsed[scenario.scenario_id].rows == timeline.rows

    def test_several_scenarios(self):
        first, second = RiskTimeline('a'), RiskTimeline('b')
        first.append(0, 0, {1: 0.1}, 0.0)
        second.append(0, 0, {1: 0.9}, 0.0)
        assert list(read_scores(first.to_jsonl() + '\n' + second.to_jsonl())) == ['a', 'b']

    def test_malformed(self):
        with pytest.raises(ParseError) as excinfo:
            read_scores('{"scenario": "s", "frame": 0}\n', path='scores.jsonl')
        assert 'line 1' in str(excinfo.value)
        assert 'scores.jsonl' in str(excinfo.value)

    def test_unordered_lines(self):
        timeline = RiskTimeline('s')
        timeline.append(0, 0, {}, 0.0)
        timeline.append(1, 50000, {}, 0.0)
        lines = timeline.to_jsonl().splitlines()
        with pytest.raises(ParseError):
            read_scores('\n'.join(reversed(lines)))


class BatchScoringTest(object):
    def test_scores_in_unit_interval(self, model, scenario):
        timeline = score_scenario(model, scenario)
        assert len(timeline) == len(scenario.frames)
        for row in timeline.rows:
            assert all(0 < score < 1 for score in row['objects'].values())
            assert row['frame_score'] == max(list(row['objects'].values()) or [0.0])
            assert row['infer_us'] > 0

    def test_zero_classifier(self, model, scenario):
        model.theta3.W[...] = 0
        model.theta3.b[...] = 0
        timeline = score_scenario(model, scenario)
        assert all(score == 0.5 for row in timeline.rows for score in row['objects'].values())

    def test_no_objects(self, model, scenario):
        packets = make_packets(scenario, model)
        for packet in packets:
            packet.boxes = []
        scores, state = step(model, ObjectState(model.hidden_dim), packets[0])
        assert scores == {}
        assert len(state) == 0
        timeline = run_sequence(model, packets)
        assert timeline.frame_scores().tolist() == [0.0] * len(packets)

    def test_prefix_causality(self, model, scenario):
        packets = make_packets(scenario, model)
        full = run_sequence(model, packets, clock='none')
        for k in (1, 4, len(packets) - 1):
            assert run_sequence(model, packets[:k], clock='none').rows == full.rows[:k]

    def test_step_matches_sequence(self, model, scenario):
        packets = make_packets(scenario, model)
        full = run_sequence(model, packets, clock='none')
        state = ObjectState(model.hidden_dim)
        for packet, row in zip(packets, full.rows):
            scores, state = step(model, state, packet)
            assert dict((str(k), v) for k, v in scores.items()) == dict(row['objects'])

    def test_recurrent_state_matters(self, model, scenario):
        packets = make_packets(scenario, model)
        full = run_sequence(model, packets, clock='none')
        alone = run_sequence(model, packets[5:], clock='none')
        assert alone.rows[1]['objects'] != full.rows[6]['objects']

    def test_gru_ablation_forgets(self, scenario):
        model = HybridModel.from_config(small_config(model={'ablate': ['gru']}), WIDTH, HEIGHT)
        packets = make_packets(scenario, model)
        full = run_sequence(model, packets, clock='none')
        alone = run_sequence(model, packets[5:], clock='none')
        assert alone.rows == full.rows[5:]

    @pytest.mark.parametrize('ablation', ['rgb', 'events', 'bbox', 'gru', 'attention'])
    def test_ablations_score(self, scenario, ablation):
        model = HybridModel.from_config(small_config(model={'ablate': [ablation]}), WIDTH, HEIGHT)
        timeline = score_scenario(model, scenario)
        assert all(0 < s < 1 for row in timeline.rows for s in row['objects'].values())

    def test_events_ablation_ignores_events(self, scenario):
        model = HybridModel.from_config(small_config(model={'ablate': ['events']}), WIDTH, HEIGHT)
        quiet = small_scenario(threshold=10.0)
        assert len(quiet.events) == 0
        assert_same_scores(score_scenario(model, scenario), score_scenario(model, quiet), 0)

    def test_pooled(self, scenario):
        model = HybridModel.from_config(small_config(model={'pool_grid': [4, 3, 2]}), WIDTH, HEIGHT)
        timeline = score_scenario(model, scenario)
        assert len(timeline) == len(scenario.frames)

    def test_precomputed_feature_maps(self, model, scenario, tmpdir):
        path = str(tmpdir.join('maps.hnw'))
        save_feature_maps(path, [model.extractor(grid) for _, grid in scenario.frames.frames])
        from_file = score_scenario(model, scenario, fmaps=load_feature_maps(path))
        extracted = score_scenario(model, scenario)
        assert_same_scores(from_file, extracted, 0)
        assert from_file.mean_infer_us() < extracted.mean_infer_us()

    def test_wall_clock(self, model, scenario):
        timeline = score_scenario(model, scenario, {'clock': 'wall'})
        assert all(row['infer_us'] >= 0 for row in timeline.rows)

    def test_packets_out_of_order(self, model, scenario):
        packets = make_packets(scenario, model)
        with pytest.raises(InvalidInputError):
            run_sequence(model, [packets[1], packets[0]])

    @pytest.mark.parametrize('kwargs', [{'mode': 'stream'}, {'clock': 'cpu'}, {'substeps': 0}])
    def test_invalid_options(self, model, scenario, kwargs):
        with pytest.raises(InvalidInputError):
            run_sequence(model, make_packets(scenario, model), **kwargs)


class IncrementalScoringTest(object):
    def test_matches_batch(self, model, scenario):
        batch = score_scenario(model, scenario, {'mode': 'batch'})
        incremental = score_scenario(model, scenario, {'mode': 'incremental'})
        assert_same_scores(batch, incremental)

    @pytest.mark.parametrize('seed', range(20))
    def test_matches_batch_on_random_streams(self, model, seed):
        scenario = small_scenario(PRESETS[seed % len(PRESETS)], seed=seed, noise_rate_hz=200.0 * (seed % 5))
        assert_same_scores(score_scenario(model, scenario, {'mode': 'batch'}),
                           score_scenario(model, scenario, {'mode': 'incremental'}))

    def test_matches_batch_on_normal_traffic(self, model, normal_scenario):
        assert_same_scores(score_scenario(model, normal_scenario, {'mode': 'batch'}),
                           score_scenario(model, normal_scenario, {'mode': 'incremental'}))

    def test_matches_batch_with_lookup_tables(self, scenario):
        model = HybridModel.from_config(small_config(model={'lut_bins': 32}), WIDTH, HEIGHT)
        assert_same_scores(score_scenario(model, scenario, {'mode': 'batch'}),
                           score_scenario(model, scenario, {'mode': 'incremental'}))

    def test_matches_batch_with_separate_stack(self, scenario):
        model = HybridModel.from_config(small_config(model={'share_gnn': False}), WIDTH, HEIGHT)
        assert_same_scores(score_scenario(model, scenario, {'mode': 'batch'}),
                           score_scenario(model, scenario, {'mode': 'incremental'}))

    def test_lookup_tables_approximate(self, scenario):
        exact = HybridModel.from_config(small_config(), WIDTH, HEIGHT)
        approximate = HybridModel.from_config(small_config(model={'lut_bins': 256}), WIDTH, HEIGHT)
        assert_same_scores(score_scenario(exact, scenario), score_scenario(approximate, scenario), 0.05)

    def test_substeps(self, model, scenario):
        batch = score_scenario(model, scenario)
        previews = score_scenario(model, scenario, {'mode': 'incremental', 'substeps': 3})
        assert len(previews) == len(batch)
        partial = [row for row in previews.rows if row.get('partial')]
        assert len(partial) == 2 * (len(batch) - 1)
        times = [row['t_us'] for row in previews.rows]
        assert times == sorted(times)
        final = RiskTimeline(rows=previews.frames)
        assert_same_scores(batch, final)

    def test_prefix_causality(self, model, scenario):
        packets = make_packets(scenario, model)
        full = run_sequence(model, packets, mode='incremental', clock='none')
        assert run_sequence(model, packets[:4], mode='incremental', clock='none').rows == full.rows[:4]


class StepIncrementalTest(object):
    def graph(self, model):
        return EventGraph(model.graph_cfg(500000))

    def test_activations_match_batch(self, model, scenario):
        packet = busiest(make_packets(scenario, model))
        reference = window_graph(packet.events, packet.graph_cfg, packet.t_prev, packet.interval_us)
        expected, _ = gnn_forward(model, model.layers, reference, reference.features)
        graph = EventGraph(packet.graph_cfg)
        computed = 0
        for event in packet.events:
            computed += step_incremental(model, graph, insert_event(graph, event, model.depth), reference.features)
        assert np.array_equal(graph.src, reference.src)
        assert computed >= model.depth * len(packet.events)
        n = graph.num_nodes
        assert np.abs(graph.activations[model.depth - 1][:n] - expected).max() <= 1e-9

    def test_empty_dirty_set(self, model):
        graph = self.graph(model)
        dirty = DirtySet.empty(model.depth, graph.version)
        assert step_incremental(model, graph, dirty, np.zeros((0, 2))) == 0
        assert graph.activations_version == graph.version

    def test_stale_cache(self, model):
        graph = self.graph(model)
        insert_event(graph, Event(3, 4, 100, 1), model.depth)
        dirty = insert_event(graph, Event(4, 4, 200, -1), model.depth)
        with pytest.raises(StateError):
            step_incremental(model, graph, dirty, np.zeros((2, 2)))

    def test_graph_moved_on(self, model):
        graph = self.graph(model)
        dirty = insert_event(graph, Event(3, 4, 100, 1), model.depth)
        insert_event(graph, Event(4, 4, 200, -1), model.depth)
        with pytest.raises(StateError):
            step_incremental(model, graph, dirty, np.zeros((2, 2)))

    def test_rows_outside_graph(self, model):
        graph = self.graph(model)
        dirty = insert_event(graph, Event(3, 4, 100, 1), model.depth)
        broken = DirtySet([[0, 5]] * model.depth, dirty.base_version, dirty.version)
        with pytest.raises(InvariantError):
            step_incremental(model, graph, broken, np.zeros((1, 2)))

    def test_depth_mismatch(self, model):
        graph = self.graph(model)
        dirty = insert_event(graph, Event(3, 4, 100, 1), model.depth + 1)
        with pytest.raises(InvalidInputError):
            step_incremental(model, graph, dirty, np.zeros((1, 2)))


class FusionTest(object):
    def test_fused_width(self, model, scenario):
        packet = busiest(make_packets(scenario, model))
        graph = window_graph(packet.events, packet.graph_cfg, packet.t_prev, packet.interval_us)
        activations, _ = gnn_forward(model, model.layers, graph, graph.features)
        fused = fuse_node_features(graph, packet.fmap, activations, model.fused_dim)
        assert fused.features.shape == (graph.num_nodes, model.fused_dim)
        assert np.array_equal(fused.features[:, :model.gnn_channels], activations)
        assert graph.features.shape[1] == 2

    def test_fused_width_mismatch(self, model, scenario):
        packet = busiest(make_packets(scenario, model))
        graph = window_graph(packet.events, packet.graph_cfg, packet.t_prev, packet.interval_us)
        with pytest.raises(ConfigError):
            fuse_node_features(graph, packet.fmap, expected_dim=model.fused_dim)

    def test_object_feature(self, model, scenario):
        packet = busiest(make_packets(scenario, model))
        graph = window_graph(packet.events, packet.graph_cfg, packet.t_prev, packet.interval_us)
        _, box = packet.boxes[0]
        feature = object_feature(graph, box, packet.fmap, model)
        assert feature.shape == (model.object_dim,)
        assert (feature >= 0).all()
