# -*- coding: utf-8 -*-
#
'''
Spatiotemporal event graphs.

Every event becomes a node at its normalized position ``(x / W, y / H)`` and scaled time ``beta * t``.
A node receives edges from earlier nodes lying within ``radius`` in that 3-D space, at most
``max_neighbors`` of them. Neighbors are found through a uniform spatial hash whose cells are
``radius`` wide, so appending a node only looks at the 27 surrounding cells.
'''
import logging
import math

from collections import namedtuple

import numpy as np

from .errors import ConfigError, InvalidInputError, StateError

log = logging.getLogger(__name__)

__all__ = ('GraphConfig', 'EventGraph', 'DirtySet', 'build_graph', 'edge_feature', 'insert_event',
           'insert_events', 'voxel_pool', 'crop_graph', 'dump_graph')

#: Offsets of the 27 hash cells around (and including) a cell
NEIGHBORHOOD = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]

_INITIAL_CAPACITY = 64


class GraphConfig(namedtuple('GraphConfig', 'width height radius beta max_neighbors')):
    '''
    Graph construction parameters.

    :param int width: sensor width in pixels
    :param int height: sensor height in pixels
    :param float radius: connection radius in normalized units
    :param float beta: timestamp scale per microsecond, ``None`` until :meth:`resolve` is called
    :param int max_neighbors: in-degree cap
    '''
    __slots__ = ()

    def __new__(cls, width, height, radius=0.03, beta=None, max_neighbors=16):
        if width < 1 or height < 1:
            raise InvalidInputError('Invalid sensor size {0}x{1}'.format(width, height))
        if not radius > 0:
            raise InvalidInputError('Graph radius must be strictly positive')
        if beta is not None and not beta > 0:
            raise InvalidInputError('Graph beta must be strictly positive')
        if max_neighbors < 1:
            raise InvalidInputError('max_neighbors must be at least 1')
        return super(GraphConfig, cls).__new__(cls, int(width), int(height), float(radius),
                                               None if beta is None else float(beta), int(max_neighbors))

    @classmethod
    def from_config(cls, section, width, height):
        '''Build from the ``graph`` configuration section'''
        return cls(width, height, section['radius'], section.get('beta'), section['max_neighbors'])

    def resolve(self, duration_us):
        '''Fill a missing ``beta`` so that ``duration_us`` maps onto [0, 1]'''
        if self.beta is not None:
            return self
        if duration_us <= 0:
            raise InvalidInputError('Cannot derive beta from a non-positive duration')
        return self._replace(beta=1.0 / float(duration_us))


def edge_feature(pos_i, pos_j):
    '''
    Edge feature between two normalized 2-D positions: ``(pos_j - pos_i) / 2 + 1/2``.

    Works on single positions as well as on arrays of positions (last axis of size 2).
    '''
    return 0.5 * (np.asarray(pos_j, dtype=np.float64) - np.asarray(pos_i, dtype=np.float64)) + 0.5


class DirtySet(object):
    '''
    Nodes whose cached activations became invalid after an insertion.

    ``layers[l]`` lists (sorted) the nodes to recompute when producing the output of layer ``l``.

    :param list layers: one index array per layer
    :param int base_version: graph version the cache must be at before applying this set
    :param int version: graph version after the insertion
    '''
    def __init__(self, layers, base_version, version):
        self.layers = [np.asarray(sorted(set(int(i) for i in layer)), dtype=np.int64) for layer in layers]
        self.base_version = base_version
        self.version = version

    @classmethod
    def empty(cls, depth, version):
        return cls([[] for _ in range(depth)], version, version)

    @property
    def depth(self):
        return len(self.layers)

    def __len__(self):
        return sum(len(layer) for layer in self.layers)

    def __bool__(self):
        return len(self) > 0

    def __repr__(self):
        sizes = [len(layer) for layer in self.layers]
        return 'DirtySet({0}, v{1}->v{2})'.format(sizes, self.base_version, self.version)


class EventGraph(object):
    '''
    A causal spatiotemporal graph of events.

    Node and edge storage grows in place. Edges are kept grouped by destination in node order,
    so ``indptr[j]:indptr[j + 1]`` are the incoming edges of node ``j``.

    :param GraphConfig cfg: a resolved configuration (``beta`` set)
    '''
    def __init__(self, cfg):
        if cfg.beta is None:
            raise ConfigError('Graph beta is unresolved, call GraphConfig.resolve first')
        self.cfg = cfg
        self.version = 0
        self.features = None
        self.members = None
        self.origin = None
        self.activations = {}
        self.activations_version = 0
        self._cells = {}
        self._out = []
        self._n = 0
        self._m = 0
        self._pos = np.zeros((_INITIAL_CAPACITY, 3))
        self._pix = np.zeros((_INITIAL_CAPACITY, 2), dtype=np.int64)
        self._t = np.zeros(_INITIAL_CAPACITY, dtype=np.int64)
        self._p = np.zeros(_INITIAL_CAPACITY, dtype=np.int8)
        self._indptr = np.zeros(_INITIAL_CAPACITY + 1, dtype=np.int64)
        self._src = np.zeros(_INITIAL_CAPACITY, dtype=np.int64)
        self._dst = np.zeros(_INITIAL_CAPACITY, dtype=np.int64)
        self._feat = np.zeros((_INITIAL_CAPACITY, 2))

    @property
    def num_nodes(self):
        return self._n

    @property
    def num_edges(self):
        return self._m

    def __len__(self):
        return self._n

    @property
    def pos(self):
        '''``(N, 3)`` normalized ``(x, y, t)`` coordinates'''
        return self._pos[:self._n]

    @property
    def pixels(self):
        '''``(N, 2)`` raw pixel ``(x, y)`` coordinates'''
        return self._pix[:self._n]

    @property
    def t(self):
        return self._t[:self._n]

    @property
    def p(self):
        return self._p[:self._n]

    @property
    def indptr(self):
        return self._indptr[:self._n + 1]

    @property
    def src(self):
        return self._src[:self._m]

    @property
    def dst(self):
        return self._dst[:self._m]

    @property
    def edge_attr(self):
        return self._feat[:self._m]

    def edges(self):
        '''The edge set as ``{(src, dst)}``'''
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def in_edges(self, node):
        '''Edge ids pointing to ``node``'''
        return np.arange(self._indptr[node], self._indptr[node + 1])

    def out_neighbors(self, node):
        return self._out[node]

    def in_degree(self):
        return np.diff(self.indptr)

    def node_features(self):
        '''Node features (pooled features when set, the polarity column otherwise)'''
        if self.features is not None:
            return self.features
        return self.p.astype(np.float64)[:, None]

    def _cell(self, pos):
        r = self.cfg.radius
        return (int(math.floor(pos[0] / r)), int(math.floor(pos[1] / r)), int(math.floor(pos[2] / r)))

    def _grow_nodes(self):
        capacity = len(self._t) * 2
        for name in ('_pos', '_pix', '_t', '_p'):
            old = getattr(self, name)
            new = np.zeros((capacity,) + old.shape[1:], dtype=old.dtype)
            new[:len(old)] = old
            setattr(self, name, new)
        indptr = np.zeros(capacity + 1, dtype=np.int64)
        indptr[:len(self._indptr)] = self._indptr
        self._indptr = indptr

    def _grow_edges(self, needed):
        capacity = len(self._src)
        while capacity < needed:
            capacity *= 2
        for name in ('_src', '_dst', '_feat'):
            old = getattr(self, name)
            new = np.zeros((capacity,) + old.shape[1:], dtype=old.dtype)
            new[:len(old)] = old
            setattr(self, name, new)

    def candidates(self, pos):
        '''Indices of existing nodes within ``radius`` (inclusive) of ``pos``'''
        cx, cy, ct = self._cell(pos)
        found = []
        for dx, dy, dt in NEIGHBORHOOD:
            found.extend(self._cells.get((cx + dx, cy + dy, ct + dt), ()))
        if not found:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        found = np.array(found, dtype=np.int64)
        d2 = squared_distances(self._pos[found], pos)
        keep = d2 <= self.cfg.radius * self.cfg.radius
        return found[keep], d2[keep]

    def append(self, x, y, t, p):
        '''
        Append a node and its incoming edges.

        :returns: the new node index
        :raises InvalidInputError: on an out-of-bounds coordinate or a timestamp older than the last node
        '''
        cfg = self.cfg
        if not (0 <= x < cfg.width and 0 <= y < cfg.height):
            raise InvalidInputError('Event ({0}, {1}) outside the {2}x{3} sensor'.format(x, y, cfg.width, cfg.height))
        if self._n and t < self._t[self._n - 1]:
            raise InvalidInputError('Event at {0}us is older than the last node ({1}us)'.format(
                t, self._t[self._n - 1]))
        pos = np.array([x / float(cfg.width), y / float(cfg.height), cfg.beta * t])
        neighbors, d2 = self.candidates(pos)
        if len(neighbors) > cfg.max_neighbors:
            # nearest first, then most recent, then lowest index
            order = np.lexsort((neighbors, -self._t[neighbors], d2))
            neighbors = neighbors[order[:cfg.max_neighbors]]
        neighbors = np.sort(neighbors)

        if self._n + 1 >= len(self._t):
            self._grow_nodes()
        j = self._n
        self._pos[j] = pos
        self._pix[j] = (x, y)
        self._t[j] = t
        self._p[j] = p
        count = len(neighbors)
        if self._m + count > len(self._src):
            self._grow_edges(self._m + count)
        edges = slice(self._m, self._m + count)
        self._src[edges] = neighbors
        self._dst[edges] = j
        self._feat[edges] = edge_feature(self._pos[neighbors, :2], pos[:2])
        self._m += count
        self._n += 1
        self._indptr[self._n] = self._m
        self._out.append([])
        for i in neighbors.tolist():
            self._out[i].append(j)
        self._cells.setdefault(self._cell(pos), []).append(j)
        self.version += 1
        return j

    def __repr__(self):
        return 'EventGraph(nodes={0}, edges={1}, v{2})'.format(self._n, self._m, self.version)


def squared_distances(points, pos):
    '''Squared euclidean distances between ``(N, 3)`` points and one 3-D position'''
    dx = points[:, 0] - pos[0]
    dy = points[:, 1] - pos[1]
    dt = points[:, 2] - pos[2]
    return dx * dx + dy * dy + dt * dt


def build_graph(events, cfg):
    '''
    Build the event graph of a time-ordered stream.

    :param EventStream events: the events
    :param GraphConfig cfg: a resolved graph configuration matching the sensor
    :rtype: EventGraph
    '''
    if (events.width, events.height) != (cfg.width, cfg.height):
        raise ConfigError('Stream is {0}x{1} but the graph is configured for {2}x{3}'.format(
            events.width, events.height, cfg.width, cfg.height))
    graph = EventGraph(cfg)
    for x, y, t, p in zip(events.x.tolist(), events.y.tolist(), events.t.tolist(), events.p.tolist()):
        graph.append(x, y, t, p)
    log.debug('Built %r', graph)
    return graph


def _expand(graph, seeds, depth):
    layers = []
    frontier = set(seeds)
    for _ in range(depth):
        layers.append(sorted(frontier))
        frontier = frontier.union(*(graph.out_neighbors(i) for i in frontier)) if frontier else frontier
    return layers


def insert_events(graph, events, depth):
    '''
    Append several events and return the combined dirty set.

    :param EventGraph graph: the graph to extend
    :param iterable events: :class:`~eae.events.Event` tuples in time order
    :param int depth: number of layers of the model reading the graph
    :rtype: DirtySet
    '''
    if depth < 1:
        raise InvalidInputError('depth must be at least 1')
    base = graph.version
    added = [graph.append(e.x, e.y, e.t, e.p) for e in events]
    return DirtySet(_expand(graph, added, depth), base, graph.version)


def insert_event(graph, event, depth):
    '''
    Append one event.

    Layer ``l`` of the returned dirty set holds the nodes within ``l`` hops downstream of the new node.
    Edges only point to later nodes, so a single insertion invalidates the new node alone.

    :rtype: DirtySet
    '''
    return insert_events(graph, [event], depth)


def _subgraph(graph, keep, features=None):
    keep = np.asarray(keep, dtype=np.int64)
    sub = EventGraph(graph.cfg)
    n = len(keep)
    remap = -np.ones(graph.num_nodes, dtype=np.int64)
    remap[keep] = np.arange(n)
    mask = (remap[graph.src] >= 0) & (remap[graph.dst] >= 0)
    src, dst = remap[graph.src[mask]], remap[graph.dst[mask]]
    capacity = max(_INITIAL_CAPACITY, n + 1)
    sub._pos = np.zeros((capacity, 3))
    sub._pix = np.zeros((capacity, 2), dtype=np.int64)
    sub._t = np.zeros(capacity, dtype=np.int64)
    sub._p = np.zeros(capacity, dtype=np.int8)
    sub._indptr = np.zeros(capacity + 1, dtype=np.int64)
    sub._pos[:n] = graph.pos[keep]
    sub._pix[:n] = graph.pixels[keep]
    sub._t[:n] = graph.t[keep]
    sub._p[:n] = graph.p[keep]
    sub._n = n
    m = len(src)
    sub._grow_edges(max(m, 1))
    # edges stay grouped by destination since keep is increasing
    sub._src[:m], sub._dst[:m], sub._feat[:m] = src, dst, graph.edge_attr[mask]
    sub._m = m
    sub._indptr[1:n + 1] = np.cumsum(np.bincount(dst, minlength=n))
    sub._out = [[] for _ in range(n)]
    for s, d in zip(src.tolist(), dst.tolist()):
        sub._out[s].append(d)
    for j in range(n):
        sub._cells.setdefault(sub._cell(sub._pos[j]), []).append(j)
    sub.version = n
    sub.origin = keep
    if features is not None:
        sub.features = np.asarray(features)[keep]
    return sub


def crop_graph(graph, bbox, time_window=None):
    '''
    Induced subgraph of the nodes inside a pixel rectangle and a time window.

    :param EventGraph graph: the source graph
    :param tuple bbox: ``(x_min, y_min, x_max, y_max)`` pixels, half-open on the max side
    :param tuple time_window: ``(t0, t1)`` microseconds, half-open on ``t1``; ``None`` keeps every node
    :returns: the subgraph; its ``origin`` attribute maps nodes back to ``graph``
    :rtype: EventGraph
    '''
    x0, y0, x1, y1 = bbox
    pix = graph.pixels
    inside = (pix[:, 0] >= x0) & (pix[:, 0] < x1) & (pix[:, 1] >= y0) & (pix[:, 1] < y1)
    if time_window is not None:
        t0, t1 = time_window
        inside &= (graph.t >= t0) & (graph.t < t1)
    return _subgraph(graph, np.flatnonzero(inside), graph.features)


def voxel_pool(graph, grid, features=None):
    '''
    Directional voxel pooling.

    Nodes are binned by normalized position and by their time relative to the graph's time span.
    Each non-empty voxel becomes one node carrying the feature-wise max of its members, placed at
    its most recent member. Pooled nodes keep the time order of those representatives and are
    reconnected with the same radius and degree rule.

    :param EventGraph graph: the graph to pool
    :param tuple grid: ``(nx, ny, nt)`` voxel counts
    :param features: ``(N, C)`` node features to pool, defaults to :meth:`EventGraph.node_features`
    :returns: the pooled graph with ``features`` and ``members`` (member indices per pooled node) set
    :rtype: EventGraph
    '''
    nx, ny, nt = (int(v) for v in grid)
    if min(nx, ny, nt) < 1:
        raise InvalidInputError('Voxel grid dimensions must be at least 1')
    features = graph.node_features() if features is None else np.asarray(features, dtype=np.float64)
    pooled = EventGraph(graph.cfg)
    n = graph.num_nodes
    if n == 0:
        pooled.features = np.zeros((0, features.shape[1]))
        pooled.members = []
        return pooled
    t = graph.t
    span = float(t[-1] - t[0])
    rel = (t - t[0]) / span if span > 0 else np.zeros(n)
    bx = np.minimum((graph.pos[:, 0] * nx).astype(np.int64), nx - 1)
    by = np.minimum((graph.pos[:, 1] * ny).astype(np.int64), ny - 1)
    bt = np.minimum((rel * nt).astype(np.int64), nt - 1)
    voxel = (bx * ny + by) * nt + bt
    groups = {}
    for i, v in enumerate(voxel.tolist()):
        groups.setdefault(v, []).append(i)
    # latest member (largest index among equal timestamps) represents the voxel
    representatives = sorted((members[-1], members) for members in groups.values())
    pooled_features = []
    pooled.members = []
    for rep, members in representatives:
        x, y = graph.pixels[rep]
        pooled.append(int(x), int(y), int(t[rep]), int(graph.p[rep]))
        pooled_features.append(features[members].max(axis=0))
        pooled.members.append(np.array(members, dtype=np.int64))
    pooled.features = np.array(pooled_features)
    log.debug('Pooled %d nodes into %d voxels', n, pooled.num_nodes)
    return pooled


def check_version(graph, dirty):
    '''Ensure a dirty set applies to the current activation cache'''
    if graph.activations_version != dirty.base_version:
        raise StateError('Stale activation cache: cache at version {0}, dirty set expects {1}'.format(
            graph.activations_version, dirty.base_version))


def dump_graph(graph):
    '''Debug representation of a graph (JSON compatible)'''
    return {
        'config': {
            'width': graph.cfg.width,
            'height': graph.cfg.height,
            'radius': graph.cfg.radius,
            'beta': graph.cfg.beta,
            'max_neighbors': graph.cfg.max_neighbors,
        },
        'nodes': [
            {'x': int(x), 'y': int(y), 't_us': int(t), 'p': int(p), 'pos': [float(v) for v in pos]}
            for (x, y), t, p, pos in zip(graph.pixels, graph.t, graph.p, graph.pos)
        ],
        'edges': [
            {'src': int(s), 'dst': int(d), 'feature': [float(v) for v in f]}
            for s, d, f in zip(graph.src, graph.dst, graph.edge_attr)
        ],
    }
