# -*- coding: utf-8 -*-
import numpy as np
import pytest

from eae.errors import ConfigError, InvalidInputError
from eae.events import Event, EventStream
from eae.graph import (DirtySet, EventGraph, GraphConfig, build_graph, crop_graph, dump_graph, edge_feature,
                       insert_event, insert_events, voxel_pool)
from eae.oracles import brute_force_edges
from eae.utils import rng_for


def random_stream(seed, count, width=32, height=24, duration=20000):
    rng = rng_for(seed, 77)
    return EventStream.from_arrays(width, height, rng.integers(0, width, size=count),
                                   rng.integers(0, height, size=count),
                                   rng.integers(0, duration, size=count),
                                   rng.choice(np.array([-1, 1], dtype=np.int8), size=count))


def config(radius=0.2, max_neighbors=4, width=32, height=24, duration=20000):
    return GraphConfig(width, height, radius=radius, max_neighbors=max_neighbors).resolve(duration)


def edge_list(graph):
    return [(int(s), int(d)) for s, d in zip(graph.src, graph.dst)]


class GraphConfigTest(object):
    def test_resolve(self):
        cfg = GraphConfig(32, 24).resolve(2000000)
        assert cfg.beta == pytest.approx(5e-7)
        assert cfg.resolve(10).beta == cfg.beta

    def test_from_config(self):
        cfg = GraphConfig.from_config({'radius': 0.05, 'beta': 1e-6, 'max_neighbors': 3}, 32, 24)
        assert cfg == GraphConfig(32, 24, 0.05, 1e-6, 3)

    @pytest.mark.parametrize('kwargs', [{'radius': 0}, {'beta': -1.0}, {'max_neighbors': 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            GraphConfig(32, 24, **kwargs)

    def test_unresolved(self):
        with pytest.raises(ConfigError):
            EventGraph(GraphConfig(32, 24))

    def test_bad_duration(self):
        with pytest.raises(InvalidInputError):
            GraphConfig(32, 24).resolve(0)


class EdgeFeatureTest(object):
    @pytest.mark.parametrize('pos_i,pos_j,expected', [
        ((0.3, 0.3), (0.3, 0.3), (0.5, 0.5)),
        ((0.0, 0.0), (1.0, 1.0), (1.0, 1.0)),
        ((0.2, 0.4), (0.4, 0.8), (0.6, 0.7)),
    ])
    def test_values(self, pos_i, pos_j, expected):
        assert edge_feature(pos_i, pos_j) == pytest.approx(expected, abs=1e-15)


class BuildGraphTest(object):
    def test_empty(self):
        graph = build_graph(EventStream(32, 24), config())
        assert graph.num_nodes == 0
        assert graph.num_edges == 0

    def test_same_pixel(self):
        events = EventStream.from_events(32, 24, [(5, 5, 100, 1), (5, 5, 200, -1)])
        graph = build_graph(events, config(radius=0.03))
        assert edge_list(graph) == [(0, 1)]
        assert graph.edge_attr[0].tolist() == [0.5, 0.5]

    def test_radius_inclusive(self):
        # 8 px apart on a 32 px wide sensor is exactly 0.25
        events = EventStream.from_events(32, 24, [(0, 0, 0, 1), (8, 0, 0, 1)])
        assert build_graph(events, config(radius=0.25)).num_edges == 1
        assert build_graph(events, config(radius=0.24)).num_edges == 0

    def test_causal(self):
        graph = build_graph(random_stream(1, 80), config())
        assert (graph.src < graph.dst).all()

    def test_degree_cap(self):
        graph = build_graph(random_stream(2, 150), config(radius=0.5, max_neighbors=3))
        assert graph.in_degree().max() <= 3

    @pytest.mark.parametrize('seed', range(100))
    def test_brute_force(self, seed):
        events = random_stream(seed, 1 + (37 * seed) % 200)
        cfg = config(max_neighbors=16)
        graph = build_graph(events, cfg)
        expected = brute_force_edges(events, cfg)
        assert edge_list(graph) == [(i, j) for i, j, _ in expected]
        for got, (_, _, feature) in zip(graph.edge_attr, expected):
            assert got.tolist() == pytest.approx(list(feature), abs=1e-15)

    def test_sensor_mismatch(self):
        with pytest.raises(ConfigError):
            build_graph(random_stream(0, 5), config(width=16))

    def test_in_edges(self):
        events = EventStream.from_events(32, 24, [(5, 5, 100, 1), (6, 5, 110, 1), (5, 6, 120, 1)])
        graph = build_graph(events, config())
        assert graph.src[graph.in_edges(2)].tolist() == [0, 1]
        assert graph.out_neighbors(0) == [1, 2]


class InsertEventTest(object):
    def test_into_empty(self):
        graph = EventGraph(config())
        dirty = insert_event(graph, Event(3, 3, 10, 1), depth=3)
        assert graph.num_nodes == 1
        assert graph.num_edges == 0
        assert [layer.tolist() for layer in dirty.layers] == [[0], [0], [0]]
        assert (dirty.base_version, dirty.version) == (0, 1)

    def test_isolated(self):
        graph = build_graph(EventStream.from_events(32, 24, [(0, 0, 0, 1), (1, 0, 10, 1)]), config(radius=0.1))
        dirty = insert_event(graph, Event(30, 20, 20, -1), depth=2)
        assert [layer.tolist() for layer in dirty.layers] == [[2], [2]]
        assert graph.num_edges == 1

    def test_batch_equivalence(self):
        events = random_stream(5, 100)
        cfg = config()
        graph = EventGraph(cfg)
        for event in events:
            insert_event(graph, event, depth=2)
        reference = build_graph(events, cfg)
        assert edge_list(graph) == edge_list(reference)
        assert np.array_equal(graph.edge_attr, reference.edge_attr)
        assert np.array_equal(graph.pos, reference.pos)
        assert graph.version == 100

    def test_batch_insert_expands(self):
        graph = EventGraph(config(radius=0.3))
        dirty = insert_events(graph, [Event(5, 5, 10, 1), Event(6, 5, 20, 1), Event(30, 20, 30, 1)], depth=2)
        assert dirty.layers[0].tolist() == [0, 1, 2]
        assert dirty.layers[1].tolist() == [0, 1, 2]
        assert len(dirty) == 6

    def test_out_of_order(self):
        graph = EventGraph(config())
        insert_event(graph, Event(1, 1, 100, 1), depth=1)
        with pytest.raises(InvalidInputError):
            insert_event(graph, Event(1, 1, 50, 1), depth=1)

    def test_out_of_bounds(self):
        with pytest.raises(InvalidInputError):
            insert_event(EventGraph(config()), Event(32, 0, 0, 1), depth=1)

    def test_depth(self):
        with pytest.raises(InvalidInputError):
            insert_event(EventGraph(config()), Event(1, 1, 0, 1), depth=0)


class DirtySetTest(object):
    def test_empty(self):
        dirty = DirtySet.empty(3, 7)
        assert not dirty
        assert dirty.depth == 3
        assert (dirty.base_version, dirty.version) == (7, 7)

    def test_sorted_unique(self):
        dirty = DirtySet([[3, 1, 3]], 0, 1)
        assert dirty.layers[0].tolist() == [1, 3]
        assert len(dirty) == 2


def voxel_oracle(graph, grid):
    nx, ny, nt = grid
    t = graph.t
    span = float(t[-1] - t[0])
    voxels = set()
    for (x, y), ti in zip(graph.pos[:, :2].tolist(), t.tolist()):
        rel = (ti - t[0]) / span if span > 0 else 0.0
        voxels.add((min(int(x * nx), nx - 1), min(int(y * ny), ny - 1), min(int(rel * nt), nt - 1)))
    return voxels


class VoxelPoolTest(object):
    def test_single_node(self):
        graph = build_graph(EventStream.from_events(32, 24, [(4, 5, 10, -1)]), config())
        pooled = voxel_pool(graph, (4, 4, 4))
        assert pooled.num_nodes == 1
        assert pooled.pixels.tolist() == [[4, 5]]
        assert pooled.t.tolist() == [10]
        assert pooled.features.tolist() == [[-1.0]]

    def test_total_pooling(self):
        graph = build_graph(random_stream(3, 40), config())
        pooled = voxel_pool(graph, (1, 1, 1))
        assert pooled.num_nodes == 1
        assert pooled.t[0] == graph.t.max()
        assert pooled.members[0].tolist() == list(range(40))
        assert pooled.features[0, 0] == graph.p.max()

    @pytest.mark.parametrize('seed', range(5))
    def test_histogram(self, seed):
        graph = build_graph(random_stream(seed, 50), config())
        pooled = voxel_pool(graph, (3, 2, 4))
        assert pooled.num_nodes == len(voxel_oracle(graph, (3, 2, 4)))
        assert sorted(np.concatenate(pooled.members).tolist()) == list(range(50))
        assert (np.diff(pooled.t) >= 0).all()

    def test_custom_features(self):
        graph = build_graph(EventStream.from_events(32, 24, [(4, 5, 10, 1), (4, 5, 20, 1)]), config())
        pooled = voxel_pool(graph, (1, 1, 1), features=np.array([[1.0, 5.0], [3.0, 2.0]]))
        assert pooled.features.tolist() == [[3.0, 5.0]]

    def test_empty(self):
        pooled = voxel_pool(build_graph(EventStream(32, 24), config()), (2, 2, 2))
        assert pooled.num_nodes == 0
        assert pooled.features.shape == (0, 1)

    def test_invalid_grid(self):
        with pytest.raises(InvalidInputError):
            voxel_pool(EventGraph(config()), (0, 1, 1))


class CropGraphTest(object):
    def test_full(self):
        graph = build_graph(random_stream(4, 60), config())
        cropped = crop_graph(graph, (0, 0, 32, 24))
        assert cropped.num_nodes == graph.num_nodes
        assert edge_list(cropped) == edge_list(graph)
        assert np.array_equal(cropped.edge_attr, graph.edge_attr)
        assert cropped.origin.tolist() == list(range(60))

    def test_no_nodes(self):
        events = EventStream.from_events(32, 24, [(1, 1, 10, 1), (2, 2, 20, 1)])
        cropped = crop_graph(build_graph(events, config()), (20, 20, 30, 24))
        assert cropped.num_nodes == 0
        assert cropped.num_edges == 0

    @pytest.mark.parametrize('seed', range(5))
    def test_membership(self, seed):
        graph = build_graph(random_stream(seed, 60), config())
        box, window = (5, 4, 20, 15), (3000, 15000)
        cropped = crop_graph(graph, box, window)
        expected = [i for i, ((x, y), t) in enumerate(zip(graph.pixels.tolist(), graph.t.tolist()))
                    if 5 <= x < 20 and 4 <= y < 15 and 3000 <= t < 15000]
        assert cropped.origin.tolist() == expected
        kept = set(expected)
        expected_edges = [(expected.index(s), expected.index(d)) for s, d in edge_list(graph)
                          if s in kept and d in kept]
        assert edge_list(cropped) == expected_edges
        assert cropped.in_degree().sum() == cropped.num_edges

    def test_crop_keeps_features(self):
        graph = build_graph(random_stream(0, 10), config())
        graph.features = np.arange(20, dtype=np.float64).reshape(10, 2)
        cropped = crop_graph(graph, (0, 0, 32, 24))
        assert np.array_equal(cropped.features, graph.features)


class DumpGraphTest(object):
    def test_dump(self):
        events = EventStream.from_events(32, 24, [(5, 5, 100, 1), (5, 5, 200, -1)])
        data = dump_graph(build_graph(events, config(radius=0.03)))
        assert data['config']['max_neighbors'] == 4
        assert [n['t_us'] for n in data['nodes']] == [100, 200]
        assert data['edges'] == [{'src': 0, 'dst': 1, 'feature': [0.5, 0.5]}]
