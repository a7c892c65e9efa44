# -*- coding: utf-8 -*-
#
'''
Scoring pipeline.

Each frame contributes a packet: the events of the inter-frame window ``(t_prev, t]``, an image
feature map and the object boxes. The window events form an event graph run through the spline
stack; node activations are fused with image features, read out per object, projected, fed to the
bounding box and fused feature GRUs and scored by the attention head.

Scoring runs in ``batch`` mode (one graph build per frame) or ``incremental`` mode (events inserted
one at a time with only their dirty nodes recomputed). Both produce the same scores.
'''
import copy
import io
import json
import logging
import time

from collections import OrderedDict

import numpy as np

from .errors import ConfigError, InvalidInputError, InvariantError, ParseError, StateError
from .graph import EventGraph, build_graph, check_version, crop_graph, insert_event, voxel_pool
from .model import NOMINAL_FLOPS, FeatureMap
from .nn import (attention_backward, attention_forward, basis_matrix, gru_backward, gru_forward,
                 linear_backward, linear_forward, lut_layer_forward, relu, relu_backward, softmax,
                 spline_layer_backward, spline_layer_forward)

log = logging.getLogger(__name__)

__all__ = ('FramePacket', 'ObjectState', 'RiskTimeline', 'make_packets', 'node_inputs', 'window_graph',
           'fuse_node_features', 'object_feature', 'step', 'step_incremental', 'run_sequence',
           'score_scenario', 'read_scores', 'MODES', 'CLOCKS')

MODES = ('batch', 'incremental')
CLOCKS = ('analytic', 'wall', 'none')


class FramePacket(object):
    '''
    The inputs of one scoring step.

    :param int index: frame index
    :param int t_us: frame timestamp, end of the event window
    :param int t_prev: start of the event window (excluded)
    :param EventStream events: the window events
    :param FeatureMap fmap: image features of the frame
    :param list boxes: ``(object_id, (x_min, y_min, x_max, y_max))`` pixel boxes, half-open
    :param GraphConfig graph_cfg: resolved graph configuration
    :param float interval_us: nominal frame interval, the time unit of node features
    :raises InvalidInputError: when an event falls outside the window or a box outside the sensor
    '''
    def __init__(self, index, t_us, t_prev, events, fmap, boxes, graph_cfg, interval_us, partial=False):
        self.index = int(index)
        self.t_us = int(t_us)
        self.t_prev = int(t_prev)
        self.events = events
        self.fmap = fmap
        self.boxes = sorted((int(oid), tuple(int(v) for v in box)) for oid, box in boxes)
        self.graph_cfg = graph_cfg
        self.interval_us = float(interval_us)
        self.partial = partial
        if len(events) and (int(events.t.min()) <= self.t_prev or int(events.t.max()) > self.t_us):
            raise InvalidInputError('Packet {0} holds events outside ({1}, {2}]'.format(index, t_prev, t_us))
        for oid, (x0, y0, x1, y1) in self.boxes:
            if not (0 <= x0 < x1 <= graph_cfg.width and 0 <= y0 < y1 <= graph_cfg.height):
                raise InvalidInputError('Box of object {0} outside the sensor in packet {1}'.format(oid, index))

    def bbox_vector(self, box):
        '''Normalized ``(center x, center y, width, height)`` of a pixel box'''
        x0, y0, x1, y1 = box
        w, h = float(self.graph_cfg.width), float(self.graph_cfg.height)
        return np.array([(x0 + x1) / 2.0 / w, (y0 + y1) / 2.0 / h, (x1 - x0) / w, (y1 - y0) / h])

    def normalized_box(self, box):
        x0, y0, x1, y1 = box
        w, h = float(self.graph_cfg.width), float(self.graph_cfg.height)
        return x0 / w, y0 / h, x1 / w, y1 / h


class ObjectState(object):
    '''
    Recurrent state per object: ``object_id -> (h_b, h_f, last seen frame)``.

    Unknown objects start from zero states.
    '''
    def __init__(self, hidden_dim):
        self.hidden_dim = hidden_dim
        self.objects = OrderedDict()

    def __len__(self):
        return len(self.objects)

    def __contains__(self, object_id):
        return object_id in self.objects

    def get(self, object_id):
        if object_id in self.objects:
            h_b, h_f, _ = self.objects[object_id]
            return h_b, h_f
        return np.zeros(self.hidden_dim), np.zeros(self.hidden_dim)

    def update(self, object_id, h_b, h_f, frame):
        self.objects[object_id] = (np.array(h_b), np.array(h_f), int(frame))

    def prune(self, frame, drop_after):
        '''Forget objects absent for more than ``drop_after`` frames'''
        for object_id in [oid for oid, (_, _, seen) in self.objects.items() if frame - seen > drop_after]:
            del self.objects[object_id]

    def copy(self):
        other = ObjectState(self.hidden_dim)
        other.objects = OrderedDict(self.objects)
        return other


class RiskTimeline(object):
    '''
    Scores of a scenario, one row per step.

    Rows are ``{frame, t_us, objects: {id: score}, frame_score, infer_us}`` dicts (plus
    ``partial: true`` for sub-frame previews), in timestamp order.
    '''
    def __init__(self, scenario=None, rows=None):
        self.scenario = scenario
        self.rows = list(rows or [])

    def append(self, frame, t_us, scores, infer_us, partial=False):
        if self.rows and t_us < self.rows[-1]['t_us']:
            raise InvalidInputError('Timeline rows must be in timestamp order')
        row = OrderedDict([
            ('frame', int(frame)),
            ('t_us', int(t_us)),
            ('objects', OrderedDict((str(oid), float(s)) for oid, s in sorted(scores.items()))),
            ('frame_score', float(max(scores.values())) if scores else 0.0),
            ('infer_us', float(infer_us)),
        ])
        if partial:
            row['partial'] = True
        self.rows.append(row)
        return row

    @property
    def frames(self):
        '''Full-frame rows (sub-frame previews excluded)'''
        return [row for row in self.rows if not row.get('partial')]

    def __len__(self):
        return len(self.frames)

    def frame_scores(self):
        return np.array([row['frame_score'] for row in self.frames], dtype=np.float64)

    def times(self):
        return np.array([row['t_us'] for row in self.frames], dtype=np.int64)

    def object_scores(self, object_id):
        '''Per frame score of one object (``nan`` where absent)'''
        key = str(object_id)
        return np.array([row['objects'].get(key, np.nan) for row in self.frames], dtype=np.float64)

    def mean_infer_us(self):
        frames = self.frames
        return float(np.mean([row['infer_us'] for row in frames])) if frames else 0.0

    def to_jsonl(self):
        lines = []
        for row in self.rows:
            data = OrderedDict([('scenario', self.scenario)])
            data.update(row)
            lines.append(json.dumps(data, sort_keys=True, allow_nan=False))
        return ''.join(line + '\n' for line in lines)


def read_scores(text, path=None):
    '''
    Parse a score stream (JSON lines) into timelines.

    :returns: an ordered ``{scenario: RiskTimeline}`` dict
    '''
    timelines = OrderedDict()
    for lineno, line in enumerate(io.StringIO(text), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line, object_pairs_hook=OrderedDict)
            scenario = row.pop('scenario')
            timeline = timelines.setdefault(scenario, RiskTimeline(scenario))
            timeline.append(row['frame'], row['t_us'], dict((k, v) for k, v in row['objects'].items()),
                            row['infer_us'], row.get('partial', False))
        except (ValueError, KeyError, TypeError, InvalidInputError) as e:
            raise ParseError('Invalid score line {0}: {1}'.format(lineno, e), path=path)
    return timelines


def node_inputs(graph, t_prev, interval_us):
    '''Node input features ``(polarity, (t - t_prev) / interval)``'''
    return np.stack([graph.p.astype(np.float64), (graph.t - t_prev) / float(interval_us)], axis=1)


def window_graph(events, cfg, t_prev, interval_us):
    '''Build the graph of a window with node input features attached'''
    graph = build_graph(events, cfg)
    graph.features = node_inputs(graph, t_prev, interval_us)
    return graph


def fuse_node_features(graph, fmap, activations=None, expected_dim=None):
    '''
    Append image features sampled at every node position.

    :param EventGraph graph: the graph
    :param FeatureMap fmap: image features
    :param activations: node features to extend, defaults to ``graph.node_features()``
    :param int expected_dim: the fused size the model expects
    :returns: a copy of ``graph`` whose ``features`` are ``[activations, fmap(x)]``
    :raises ConfigError: when the fused size differs from ``expected_dim``
    '''
    activations = graph.node_features() if activations is None else np.asarray(activations, dtype=np.float64)
    if expected_dim is not None and activations.shape[1] + fmap.channels != expected_dim:
        raise ConfigError('Fused node features would have {0} channels, the model expects {1}'.format(
            activations.shape[1] + fmap.channels, expected_dim))
    fused = copy.copy(graph)
    fused.features = np.hstack([activations, fmap.sample(graph.pos[:, :2])])
    return fused


class PreparedObject(object):
    '''Per object inputs of a frame, independent of the model parameters'''
    def __init__(self, object_id, bbox, rows, g, sub=None):
        self.object_id = object_id
        self.bbox = bbox
        self.rows = rows
        self.g = g
        self.sub = sub


class PreparedFrame(object):
    '''Parameter independent inputs of one frame (graph, node inputs, basis, samples, objects)'''
    def __init__(self, index, t_us, graph, x0, basis, samples, objects, extractor_flops=0, partial=False):
        self.index = index
        self.t_us = t_us
        self.graph = graph
        self.x0 = x0
        self.basis = basis
        self.samples = samples
        self.objects = objects
        self.extractor_flops = extractor_flops
        self.activations = None
        self.partial = partial
        self.labels = None


def _feature_map(model, fmap):
    if fmap.channels != model.feature_dim:
        raise ConfigError('Feature map has {0} channels, the model expects {1}'.format(
            fmap.channels, model.feature_dim))
    if not model.uses('rgb'):
        return FeatureMap(np.zeros_like(fmap.grid), source='zeros')
    return fmap


def _basis(model, graph):
    if graph.num_nodes == 0:
        return None
    return basis_matrix(graph.src, graph.dst, graph.edge_attr, graph.num_nodes, model.lattice)


def _crop_rows(graph, box):
    x0, y0, x1, y1 = box
    pix = graph.pixels
    return np.flatnonzero((pix[:, 0] >= x0) & (pix[:, 0] < x1) & (pix[:, 1] >= y0) & (pix[:, 1] < y1))


def prepare_frame(model, packet, graph=None, x0=None, boxes=None):
    '''
    Compute everything a frame needs besides the parameters.

    :param graph: an already built window graph (incremental mode), built from the packet otherwise
    :param boxes: boxes overriding the packet ones (sub-frame previews)
    :rtype: PreparedFrame
    '''
    if graph is None:
        graph = window_graph(packet.events, packet.graph_cfg, packet.t_prev, packet.interval_us)
        x0 = graph.features
        basis = _basis(model, graph)
    else:
        basis = None
    fmap = _feature_map(model, packet.fmap)
    samples = fmap.sample(graph.pos[:, :2]) if graph.num_nodes else np.zeros((0, fmap.channels))
    pooled = None
    if model.pool_grid and graph.num_nodes and model.share_gnn:
        pooled = voxel_pool(graph, model.pool_grid, features=np.zeros((graph.num_nodes, 1)))
    objects = []
    for object_id, box in (packet.boxes if boxes is None else boxes):
        bbox = packet.bbox_vector(box) if model.uses('bbox') else np.zeros(4)
        norm = packet.normalized_box(box)
        center = ((norm[0] + norm[2]) / 2.0, (norm[1] + norm[3]) / 2.0)
        g = np.concatenate([fmap.sample(center), fmap.box_average(norm)])
        sub = None
        if pooled is not None:
            selected = _crop_rows(pooled, box)
            rows = np.sort(np.concatenate([pooled.members[k] for k in selected])) if len(selected) \
                else np.zeros(0, dtype=np.int64)
        else:
            rows = _crop_rows(graph, box)
        if not model.share_gnn:
            cropped = crop_graph(graph, box)
            sub = (cropped, x0[cropped.origin], _basis(model, cropped), samples[cropped.origin])
        objects.append(PreparedObject(object_id, bbox, rows, g, sub))
    extractor_flops = model.extractor.flops(model.height, model.width) if packet.fmap.source == 'toy-extractor' else 0
    return PreparedFrame(packet.index, packet.t_us, graph, x0, basis, samples, objects, extractor_flops, packet.partial)


def gnn_forward(model, layers, graph, x0, basis=None, exact=False, keep=False):
    '''
    Run a spline stack over a graph.

    :param bool exact: ignore lookup tables
    :param bool keep: keep the caches needed by :func:`gnn_backward`
    :returns: ``(activations, caches)``
    '''
    if graph.num_nodes == 0:
        return np.zeros((0, model.gnn_channels)), []
    luts = None if exact else (model.luts if layers is model.layers else model.object_luts)
    if not luts and basis is None:
        basis = _basis(model, graph)
    a = x0
    caches = []
    for index, kernel in enumerate(layers):
        if luts:
            a = lut_layer_forward(a, graph.src, graph.dst, graph.edge_attr, luts[index])
        else:
            a, cache = spline_layer_forward(a, graph.src, graph.dst, graph.edge_attr, kernel, basis=basis)
            if keep:
                caches.append(cache)
    return a, caches


def gnn_backward(layers, prefix, dout, caches, grads):
    '''Accumulate the spline stack gradients of ``dout`` into ``grads``'''
    if not caches:
        return
    for index in reversed(range(len(layers))):
        dout, layer_grads = spline_layer_backward(dout, layers[index], caches[index])
        for name, grad in layer_grads.items():
            key = '{0}.{1}.{2}'.format(prefix, index, name)
            grads[key] = grads[key] + grad if key in grads else grad


def _readout(fused, rows):
    if len(rows) == 0:
        return np.zeros(fused.shape[1]), None
    block = fused[rows]
    arg = block.argmax(axis=0)
    return block[arg, np.arange(fused.shape[1])], rows[arg]


def object_feature(graph, bbox, fmap, model):
    '''
    The projected feature of one object.

    The event readout is the feature-wise max of the fused node features inside the box (zero when
    the box holds no event), concatenated with the feature map sampled at the box center and averaged
    over the box, then projected with ``ReLU(theta0 p)``.

    :param EventGraph graph: a window graph whose ``features`` are the node inputs
    :param tuple bbox: pixel box
    :param FeatureMap fmap: image features
    :rtype: numpy.ndarray
    '''
    x0 = graph.node_features()
    fmap = _feature_map(model, fmap)
    w, h = float(graph.cfg.width), float(graph.cfg.height)
    norm = (bbox[0] / w, bbox[1] / h, bbox[2] / w, bbox[3] / h)
    center = ((norm[0] + norm[2]) / 2.0, (norm[1] + norm[3]) / 2.0)
    g = np.concatenate([fmap.sample(center), fmap.box_average(norm)])
    o = np.zeros(model.fused_dim)
    if model.uses('events'):
        if model.share_gnn:
            activations, _ = gnn_forward(model, model.layers, graph, x0)
            fused = fuse_node_features(graph, fmap, activations, model.fused_dim).features
            o, _ = _readout(fused, _crop_rows(graph, bbox))
        else:
            cropped = crop_graph(graph, bbox)
            activations, _ = gnn_forward(model, model.object_layers, cropped, x0[cropped.origin])
            fused = fuse_node_features(cropped, fmap, activations, model.fused_dim).features
            o, _ = _readout(fused, np.arange(cropped.num_nodes))
    return relu(linear_forward(model.theta0, np.concatenate([o, g]))[0])


def head_forward(model, P, B, h_b, h_f):
    '''
    Object head over the ``n`` objects of a frame.

    :param P: ``(n, readout_dim)`` object features before projection
    :param B: ``(n, 4)`` box vectors
    :param h_b: ``(n, hidden)`` previous box states
    :param h_f: ``(n, hidden)`` previous fused states
    :returns: ``(probabilities, logits, new h_b, new h_f, cache)``
    '''
    pre, lin0 = linear_forward(model.theta0, P)
    f = relu(pre)
    hb, gru_b = gru_forward(model.gru_b, B, h_b)
    hf, gru_f = gru_forward(model.gru_f, f, h_f)
    if model.uses('attention'):
        _, wb, att_b = attention_forward(hb, model.att_b)
        _, wf, att_f = attention_forward(hf, model.att_f)
    else:
        wb, wf, att_b, att_f = hb, hf, None, None
    logits, lin3 = linear_forward(model.theta3, np.hstack([wb, wf]))
    return softmax(logits, axis=1), logits, hb, hf, (pre, lin0, gru_b, gru_f, att_b, att_f, lin3)


def head_backward(model, cache, dlogits, dhb, dhf):
    '''
    :param dlogits: gradient of the loss with respect to the logits
    :param dhb: gradient flowing back into the new box states from later frames
    :param dhf: same for the fused states
    :returns: ``(grads, dP, dh_b_prev, dh_f_prev)``
    '''
    pre, lin0, gru_b, gru_f, att_b, att_f, lin3 = cache
    grads = {}
    dhat, g = linear_backward(dlogits, model.theta3, lin3)
    grads.update(('theta3.' + k, v) for k, v in g.items())
    hidden = model.hidden_dim
    dwb, dwf = dhat[:, :hidden], dhat[:, hidden:]
    if model.uses('attention'):
        dwb, g = attention_backward(dwb, model.att_b, att_b)
        grads['att_b.w'] = g['w']
        dwf, g = attention_backward(dwf, model.att_f, att_f)
        grads['att_f.w'] = g['w']
    else:
        grads['att_b.w'] = np.zeros(hidden)
        grads['att_f.w'] = np.zeros(hidden)
    df, dh_f_prev, g = gru_backward(dwf + dhf, model.gru_f, gru_f)
    grads.update(('gru_f.' + k, v) for k, v in g.items())
    _, dh_b_prev, g = gru_backward(dwb + dhb, model.gru_b, gru_b)
    grads.update(('gru_b.' + k, v) for k, v in g.items())
    dP, g = linear_backward(relu_backward(df, pre), model.theta0, lin0)
    grads.update(('theta0.' + k, v) for k, v in g.items())
    return grads, dP, dh_b_prev, dh_f_prev


class FrameResult(object):
    '''Outputs of :func:`forward_frame` (plus the caches for training)'''
    def __init__(self, ids, scores, logits, state, flops, carried, cache=None):
        self.ids = ids
        self.scores = scores
        self.logits = logits
        self.state = state
        self.flops = flops
        self.carried = carried
        self.cache = cache


def forward_frame(model, frame, state, drop_after=30, exact=False, keep=False, commit=True):
    '''
    Score the objects of a prepared frame.

    :param ObjectState state: object states before the frame (left untouched)
    :param bool exact: ignore lookup tables
    :param bool keep: keep the caches needed for training
    :param bool commit: return the updated state (a preview returns the input state)
    :rtype: FrameResult
    '''
    state = state.copy()
    state.prune(frame.index, drop_after)
    graph = frame.graph
    gnn_caches = []
    flops = frame.extractor_flops + model.layer_flops(graph.num_nodes, graph.num_edges)
    if frame.activations is not None:
        activations = frame.activations
    else:
        activations, gnn_caches = gnn_forward(model, model.layers, graph, frame.x0, frame.basis, exact, keep)
    fused = np.hstack([activations, frame.samples]) if graph.num_nodes else np.zeros((0, model.fused_dim))
    ids = [obj.object_id for obj in frame.objects]
    n = len(ids)
    if n == 0:
        return FrameResult(ids, {}, np.zeros((0, 2)), state, flops, [])
    P = np.zeros((n, model.readout_dim))
    readouts = []
    for i, obj in enumerate(frame.objects):
        o, arg, sub_cache = np.zeros(model.fused_dim), None, None
        if model.uses('events'):
            if model.share_gnn:
                o, arg = _readout(fused, obj.rows)
            else:
                cropped, sub_x0, sub_basis, sub_samples = obj.sub
                sub_act, sub_caches = gnn_forward(model, model.object_layers, cropped, sub_x0, sub_basis, exact, keep)
                flops += model.layer_flops(cropped.num_nodes, cropped.num_edges)
                if cropped.num_nodes:
                    o, arg = _readout(np.hstack([sub_act, sub_samples]), np.arange(cropped.num_nodes))
                sub_cache = (cropped.num_nodes, sub_caches)
        P[i] = np.concatenate([o, obj.g])
        readouts.append((arg, sub_cache))
    B = np.stack([obj.bbox for obj in frame.objects])
    carried = [model.uses('gru') and oid in state for oid in ids]
    previous = [state.get(oid) if keep_state else (np.zeros(model.hidden_dim), np.zeros(model.hidden_dim))
                for oid, keep_state in zip(ids, carried)]
    h_b = np.stack([p[0] for p in previous])
    h_f = np.stack([p[1] for p in previous])
    probs, logits, hb, hf, head_cache = head_forward(model, P, B, h_b, h_f)
    flops += model.head_flops(n)
    scores = dict((oid, float(probs[i, 1])) for i, oid in enumerate(ids))
    if commit:
        for i, oid in enumerate(ids):
            state.update(oid, hb[i], hf[i], frame.index)
    cache = (gnn_caches, readouts, head_cache, graph.num_nodes) if keep else None
    return FrameResult(ids, scores, logits, state, flops, carried, cache)


def frame_backward(model, frame, result, dlogits, dhb, dhf, grads):
    '''
    Backpropagate one frame, accumulating parameter gradients into ``grads``.

    :returns: ``(dh_b_prev, dh_f_prev)`` for the objects of the frame
    '''
    if result.cache is None:
        raise StateError('frame backward called before a keeping forward')
    gnn_caches, readouts, head_cache, num_nodes = result.cache
    head_grads, dP, dh_b_prev, dh_f_prev = head_backward(model, head_cache, dlogits, dhb, dhf)
    for key, grad in head_grads.items():
        grads[key] = grads[key] + grad if key in grads else grad
    columns = np.arange(model.gnn_channels)
    if model.share_gnn:
        dA = np.zeros((num_nodes, model.gnn_channels))
        for i, (arg, _) in enumerate(readouts):
            if arg is not None:
                np.add.at(dA, (arg[:model.gnn_channels], columns), dP[i, :model.gnn_channels])
        gnn_backward(model.layers, 'gnn', dA, gnn_caches, grads)
    else:
        for i, (arg, sub_cache) in enumerate(readouts):
            if arg is None or sub_cache is None:
                continue
            sub_nodes, sub_caches = sub_cache
            dA = np.zeros((sub_nodes, model.gnn_channels))
            np.add.at(dA, (arg[:model.gnn_channels], columns), dP[i, :model.gnn_channels])
            gnn_backward(model.object_layers, 'object_gnn', dA, sub_caches, grads)
    return dh_b_prev, dh_f_prev


def make_packets(scenario, model, fmaps=None):
    '''
    Cut a scenario into per-frame packets.

    :param Scenario scenario: the scenario
    :param HybridModel model: the model (provides the feature extractor and graph settings)
    :param list fmaps: optional per-frame feature maps replacing the extractor
    :rtype: list
    '''
    frames = scenario.frames
    model.check_sensor(frames.width, frames.height)
    if fmaps is not None and len(fmaps) != len(frames):
        raise ConfigError('{0} feature maps for {1} frames'.format(len(fmaps), len(frames)))
    cfg = model.graph_cfg(scenario.duration_us)
    interval = 1e6 / frames.fps
    times = frames.timestamps
    packets = []
    for index, (t, grid) in enumerate(frames.frames):
        t_prev = times[index - 1] if index else int(t - round(interval))
        fmap = fmaps[index] if fmaps is not None else model.extractor(grid)
        boxes = [(oid, (x0, y0, x1, y1)) for oid, x0, y0, x1, y1 in scenario.tracks.frame(index)]
        packets.append(FramePacket(index, t, t_prev, scenario.events.window(t_prev, t), fmap, boxes, cfg, interval))
    return packets


def step(model, state, packet, drop_after=30):
    '''
    Score one packet in batch mode.

    :returns: ``({object_id: score}, updated state)``
    '''
    result = forward_frame(model, prepare_frame(model, packet), state, drop_after)
    return result.scores, result.state


def _rows_edges(graph, rows):
    starts = graph.indptr[rows]
    counts = graph.indptr[rows + 1] - starts
    total = int(counts.sum())
    if not total:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return offsets + np.arange(total)


def _ensure_rows(array, rows, channels):
    if array is None:
        array = np.zeros((max(64, rows), channels))
    elif array.shape[0] < rows:
        grown = np.zeros((max(rows, 2 * array.shape[0]), channels))
        grown[:array.shape[0]] = array
        array = grown
    return array


def step_incremental(model, graph, dirty, x0):
    '''
    Refresh the cached spline activations of ``graph`` after an insertion.

    Layer ``l`` recomputes only the nodes of ``dirty.layers[l]``; activations live in
    ``graph.activations[l]`` (rows beyond the node count are scratch space).

    :param x0: ``(N, 2)`` node inputs of every node of the graph
    :returns: the number of recomputed node rows
    :raises StateError: when the cache is not at the dirty set base version or the graph moved on
    :raises InvariantError: when the dirty set names nodes the graph does not have
    '''
    check_version(graph, dirty)
    if dirty.version != graph.version:
        raise StateError('Dirty set is for version {0}, the graph is at {1}'.format(dirty.version, graph.version))
    if dirty.depth != model.depth:
        raise InvalidInputError('Dirty set has {0} layers, the model {1}'.format(dirty.depth, model.depth))
    n = graph.num_nodes
    for rows in dirty.layers:
        if len(rows) and (rows[0] < 0 or rows[-1] >= n):
            raise InvariantError('Dirty set names nodes outside [0, {0})'.format(n))
    computed = 0
    previous = np.asarray(x0, dtype=np.float64)[:n]
    for index, kernel in enumerate(model.layers):
        current = _ensure_rows(graph.activations.get(index), n, kernel.out_channels)
        rows = dirty.layers[index]
        if len(rows):
            edges = _rows_edges(graph, rows)
            src, dst, attr = graph.src[edges], graph.dst[edges], graph.edge_attr[edges]
            if model.luts:
                current[rows] = lut_layer_forward(previous, src, dst, attr, model.luts[index], rows=rows)
            else:
                current[rows], _ = spline_layer_forward(previous, src, dst, attr, kernel, rows=rows)
            computed += len(rows)
        graph.activations[index] = current
        previous = current[:n]
    graph.activations_version = dirty.version
    return computed


def _clock_us(clock, started, flops):
    if clock == 'wall':
        return round((time.perf_counter() - started) * 1e6, 3)
    if clock == 'analytic':
        return round(flops / NOMINAL_FLOPS * 1e6, 3)
    return 0.0


def _incremental_frames(model, packet, substeps, last_boxes):
    '''Insert the packet events one by one, yielding sub-frame previews then the full frame'''
    graph = EventGraph(packet.graph_cfg)
    events = packet.events
    x0 = np.stack([events.p.astype(np.float64), (events.t.astype(np.int64) - packet.t_prev) / packet.interval_us],
                  axis=1) if len(events) else np.zeros((0, 2))
    bounds = [packet.t_prev + (k + 1) * (packet.t_us - packet.t_prev) / float(substeps) for k in range(substeps)]
    position = 0
    times = events.t.astype(np.int64)
    for k, bound in enumerate(bounds):
        final = k == substeps - 1
        while position < len(events) and (final or times[position] <= bound):
            dirty = insert_event(graph, events[position], model.depth)
            step_incremental(model, graph, dirty, x0)
            position += 1
        if not final and last_boxes is None:
            continue
        view = packet if final else FramePacket(packet.index, int(bound), packet.t_prev, events.window(
            packet.t_prev, int(bound)), packet.fmap, last_boxes, packet.graph_cfg, packet.interval_us, partial=True)
        frame = prepare_frame(model, view, graph=graph, x0=x0[:graph.num_nodes])
        n = graph.num_nodes
        frame.activations = graph.activations[model.depth - 1][:n] if n else np.zeros((0, model.gnn_channels))
        yield frame


def run_sequence(model, packets, mode='batch', clock='analytic', substeps=1, drop_after=30, state=None,
                 scenario=None):
    '''
    Score packets in time order.

    :param str mode: ``batch`` or ``incremental``
    :param str clock: ``analytic``, ``wall`` or ``none``, how ``infer_us`` is obtained
    :param int substeps: incremental mode only, emit ``substeps - 1`` sub-frame previews per frame
    :rtype: RiskTimeline
    :raises InvalidInputError: when packets are out of order
    '''
    if mode not in MODES:
        raise InvalidInputError('Unknown mode "{0}"'.format(mode))
    if clock not in CLOCKS:
        raise InvalidInputError('Unknown clock "{0}"'.format(clock))
    if substeps < 1:
        raise InvalidInputError('substeps must be at least 1')
    state = state.copy() if state is not None else ObjectState(model.hidden_dim)
    timeline = RiskTimeline(scenario)
    last_time = None
    last_boxes = None
    for packet in packets:
        if last_time is not None and packet.t_us <= last_time:
            raise InvalidInputError('Packet {0} at {1}us is not after {2}us'.format(
                packet.index, packet.t_us, last_time))
        last_time = packet.t_us
        started = time.perf_counter()
        if mode == 'batch':
            result = forward_frame(model, prepare_frame(model, packet), state, drop_after)
            state = result.state
            timeline.append(packet.index, packet.t_us, result.scores, _clock_us(clock, started, result.flops))
        else:
            for frame in _incremental_frames(model, packet, substeps, last_boxes):
                result = forward_frame(model, frame, state, drop_after, commit=not frame.partial)
                if frame.partial:
                    timeline.append(packet.index, frame.t_us, result.scores, _clock_us(clock, started, result.flops),
                                    partial=True)
                else:
                    state = result.state
                    timeline.append(packet.index, packet.t_us, result.scores, _clock_us(clock, started, result.flops))
        last_boxes = packet.boxes
    return timeline


def score_scenario(model, scenario, infer=None, fmaps=None):
    '''
    Score a scenario with the ``infer`` configuration section.

    :rtype: RiskTimeline
    '''
    infer = infer or {}
    return run_sequence(model, make_packets(scenario, model, fmaps), mode=infer.get('mode', 'batch'),
                        clock=infer.get('clock', 'analytic'), substeps=infer.get('substeps', 1),
                        drop_after=infer.get('drop_after', 30), scenario=scenario.scenario_id)
