# -*- coding: utf-8 -*-
#
'''
The hybrid network parameters.

A :class:`HybridModel` bundles the spline convolution stack over event graphs, the object feature
projection, the bounding box and fused feature GRUs, their attention vectors and the risk classifier.
Image features come from a fixed :class:`ToyExtractor` (or from precomputed :class:`FeatureMap` files).
'''
import logging

from collections import OrderedDict

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from .__about__ import __version__
from .errors import ConfigError, InvalidInputError, ManifestError
from .graph import GraphConfig
from .inputs import ABLATIONS
from .nn import AttentionParams, GRUParams, LinearParams, SplineKernel, spline_conv_lut
from .serialization import check_shapes, load_tensors, save_tensors
from .utils import rng_for

log = logging.getLogger(__name__)

__all__ = ('FeatureMap', 'ToyExtractor', 'HybridModel', 'save_model', 'load_model',
           'save_feature_maps', 'load_feature_maps', 'ABLATIONS', 'NOMINAL_FLOPS')

#: Floating point operations per second assumed by the analytic inference clock
NOMINAL_FLOPS = 1e9

#: Per-node input features: polarity and time offset within the frame window
NODE_INPUTS = 2
BBOX_DIM = 4


class FeatureMap(object):
    '''
    A dense ``(H', W', C)`` image feature grid over the normalized [0, 1]² frame extent.

    Grid cell ``(r, c)`` is sampled at the normalized point ``((c + 0.5) / W', (r + 0.5) / H')``.

    :param grid: the feature values
    :param str source: ``toy-extractor`` or ``file``
    '''
    def __init__(self, grid, source='toy-extractor'):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise InvalidInputError('Feature map must have shape (H, W, C) with H, W >= 1')
        if not np.isfinite(grid).all():
            raise InvalidInputError('Feature map holds non-finite values')
        self.grid = grid
        self.source = source

    @property
    def channels(self):
        return self.grid.shape[2]

    @classmethod
    def zeros(cls, height, width, channels):
        return cls(np.zeros((height, width, channels)), source='zeros')

    def sample(self, points):
        '''
        Bilinear samples at normalized ``(u, v)`` points, clamped at the borders.

        :param points: ``(N, 2)`` or ``(2,)`` normalized coordinates
        :returns: ``(N, C)`` (or ``(C,)``) features
        '''
        points = np.asarray(points, dtype=np.float64)
        single = points.ndim == 1
        points = points.reshape(-1, 2)
        h, w, _ = self.grid.shape
        gx = np.clip(points[:, 0] * w - 0.5, 0, w - 1)
        gy = np.clip(points[:, 1] * h - 0.5, 0, h - 1)
        x0 = np.minimum(np.floor(gx).astype(np.int64), max(w - 2, 0))
        y0 = np.minimum(np.floor(gy).astype(np.int64), max(h - 2, 0))
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (gx - x0)[:, None]
        fy = (gy - y0)[:, None]
        grid = self.grid
        out = ((1 - fx) * (1 - fy) * grid[y0, x0] + fx * (1 - fy) * grid[y0, x1]
               + (1 - fx) * fy * grid[y1, x0] + fx * fy * grid[y1, x1])
        return out[0] if single else out

    def box_average(self, box):
        '''
        Mean of the cells whose sample point lies inside a normalized ``(u0, v0, u1, v1)`` box
        (half-open), or the bilinear sample at the box center when no cell does.
        '''
        u0, v0, u1, v1 = box
        h, w, _ = self.grid.shape
        cu = (np.arange(w) + 0.5) / w
        cv = (np.arange(h) + 0.5) / h
        cols = np.flatnonzero((cu >= u0) & (cu < u1))
        rows = np.flatnonzero((cv >= v0) & (cv < v1))
        if len(cols) == 0 or len(rows) == 0:
            return self.sample(((u0 + u1) / 2.0, (v0 + v1) / 2.0))
        return self.grid[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].mean(axis=(0, 1))


def _conv3x3_stride2(x, weight, bias):
    # x: (H, W, C_in), weight: (C_out, C_in, 3, 3), zero padding 1
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(0, 1))[::2, ::2]
    return np.einsum('hwcij,ocij->hwo', windows, weight) + bias


class ToyExtractor(object):
    '''
    A fixed two-layer convolutional feature extractor (3x3 kernels, stride 2, ReLU) over
    intensities scaled to [0, 1].
    '''
    def __init__(self, conv1_weight, conv1_bias, conv2_weight, conv2_bias):
        self.conv1_weight = np.asarray(conv1_weight, dtype=np.float64)
        self.conv1_bias = np.asarray(conv1_bias, dtype=np.float64)
        self.conv2_weight = np.asarray(conv2_weight, dtype=np.float64)
        self.conv2_bias = np.asarray(conv2_bias, dtype=np.float64)

    @classmethod
    def init(cls, channels, rng):
        c1, c2 = channels
        bound1, bound2 = 1.0 / 3.0, 1.0 / np.sqrt(9.0 * c1)
        return cls(rng.uniform(-bound1, bound1, (c1, 1, 3, 3)), np.zeros(c1),
                   rng.uniform(-bound2, bound2, (c2, c1, 3, 3)), np.zeros(c2))

    @property
    def channels(self):
        return self.conv2_weight.shape[0]

    def parameters(self):
        return OrderedDict([('conv1.weight', self.conv1_weight), ('conv1.bias', self.conv1_bias),
                            ('conv2.weight', self.conv2_weight), ('conv2.bias', self.conv2_bias)])

    def output_shape(self, height, width):
        h, w = (height + 1) // 2, (width + 1) // 2
        return (h + 1) // 2, (w + 1) // 2, self.channels

    def __call__(self, frame):
        x = np.asarray(frame, dtype=np.float64)[:, :, None] / 255.0
        x = np.maximum(_conv3x3_stride2(x, self.conv1_weight, self.conv1_bias), 0.0)
        x = np.maximum(_conv3x3_stride2(x, self.conv2_weight, self.conv2_bias), 0.0)
        return FeatureMap(x)

    def flops(self, height, width):
        c1, c2 = self.conv1_weight.shape[0], self.channels
        h1, w1 = (height + 1) // 2, (width + 1) // 2
        h2, w2 = (h1 + 1) // 2, (w1 + 1) // 2
        return 2 * 9 * (h1 * w1 * c1 + h2 * w2 * c2 * c1)


class HybridModel(object):
    '''
    All parameters of the hybrid network.

    :param dict config: the ``model`` configuration section
    :param dict graph: the ``graph`` configuration section
    :param int width: sensor width
    :param int height: sensor height
    '''
    def __init__(self, config, graph, width, height, init=True):
        self.config = dict(config)
        self.graph_config = dict(graph)
        self.width = int(width)
        self.height = int(height)
        self.depth = int(config['depth'])
        if self.depth < 1:
            raise ConfigError('Model depth must be at least 1')
        self.gnn_channels = int(config['gnn_channels'])
        self.lattice = int(config['lattice'])
        self.object_dim = int(config['object_dim'])
        self.hidden_dim = int(config['hidden_dim'])
        self.share_gnn = bool(config.get('share_gnn', True))
        self.pool_grid = tuple(config['pool_grid']) if config.get('pool_grid') else None
        self.lut_bins = config.get('lut_bins')
        self.ablate = frozenset(config.get('ablate') or ())
        unknown = self.ablate - set(ABLATIONS)
        if unknown:
            raise ConfigError('Unknown ablations: {0}'.format(', '.join(sorted(unknown))))
        self.seed = int(config.get('seed', 0))
        feature_channels = tuple(config['feature_channels'])
        self.feature_dim = feature_channels[-1]
        rng = rng_for(self.seed)
        if init:
            self.extractor = ToyExtractor.init(feature_channels, rng)
            self.layers = self._stack(rng)
            self.object_layers = self._stack(rng) if not self.share_gnn else []
            self.theta0 = LinearParams.init(self.readout_dim, self.object_dim, rng)
            self.gru_b = GRUParams.init(BBOX_DIM, self.hidden_dim, rng)
            self.gru_f = GRUParams.init(self.object_dim, self.hidden_dim, rng)
            self.att_b = AttentionParams.init(self.hidden_dim, rng)
            self.att_f = AttentionParams.init(self.hidden_dim, rng)
            self.theta3 = LinearParams.init(2 * self.hidden_dim, 2, rng)
        else:
            c1, c2 = feature_channels
            self.extractor = ToyExtractor(np.zeros((c1, 1, 3, 3)), np.zeros(c1), np.zeros((c2, c1, 3, 3)), np.zeros(c2))
            self.layers = self._zero_stack()
            self.object_layers = self._zero_stack() if not self.share_gnn else []
            self.theta0 = LinearParams.zeros(self.readout_dim, self.object_dim)
            self.gru_b = GRUParams.zeros(BBOX_DIM, self.hidden_dim)
            self.gru_f = GRUParams.zeros(self.object_dim, self.hidden_dim)
            self.att_b = AttentionParams(np.zeros(self.hidden_dim))
            self.att_f = AttentionParams(np.zeros(self.hidden_dim))
            self.theta3 = LinearParams.zeros(2 * self.hidden_dim, 2)
        self.luts = None
        self.refresh_luts()

    def _channels(self):
        channels = [NODE_INPUTS] + [self.gnn_channels] * self.depth
        return list(zip(channels[:-1], channels[1:]))

    def _stack(self, rng):
        return [SplineKernel.init(c_in, c_out, self.lattice, rng) for c_in, c_out in self._channels()]

    def _zero_stack(self):
        return [SplineKernel.zeros(c_in, c_out, self.lattice) for c_in, c_out in self._channels()]

    @classmethod
    def from_config(cls, config, width, height):
        '''Build a freshly initialized model from a full configuration document'''
        return cls(config['model'], config['graph'], width, height)

    @property
    def fused_dim(self):
        '''Node feature size after image feature fusion'''
        return self.gnn_channels + self.feature_dim

    @property
    def readout_dim(self):
        '''Object feature size before projection: event readout, center sample and box average'''
        return self.fused_dim + 2 * self.feature_dim

    def uses(self, component):
        return component not in self.ablate

    def graph_cfg(self, duration_us):
        '''The resolved graph configuration for a scenario of ``duration_us``'''
        return GraphConfig.from_config(self.graph_config, self.width, self.height).resolve(duration_us)

    def refresh_luts(self):
        '''Recompute the lookup tables after the spline kernels changed'''
        if self.lut_bins:
            self.luts = [spline_conv_lut(kernel, self.lut_bins) for kernel in self.layers]
            self.object_luts = [spline_conv_lut(kernel, self.lut_bins) for kernel in self.object_layers]
        else:
            self.luts = self.object_luts = None

    def gnn_parameters(self):
        '''Spline layer parameters (optimized with AdamW)'''
        params = OrderedDict()
        for prefix, stack in (('gnn', self.layers), ('object_gnn', self.object_layers)):
            for index, kernel in enumerate(stack):
                for name, array in kernel.parameters().items():
                    params['{0}.{1}.{2}'.format(prefix, index, name)] = array
        return params

    def head_parameters(self):
        '''Projection, recurrent, attention and classifier parameters (optimized with Adam)'''
        params = OrderedDict()
        for prefix, module in (('theta0', self.theta0), ('gru_b', self.gru_b), ('gru_f', self.gru_f),
                               ('att_b', self.att_b), ('att_f', self.att_f), ('theta3', self.theta3)):
            for name, array in module.parameters().items():
                params['{0}.{1}'.format(prefix, name)] = array
        return params

    def parameters(self):
        '''Every tensor of the model, extractor included'''
        params = OrderedDict()
        params.update(self.gnn_parameters())
        params.update(self.head_parameters())
        for name, array in self.extractor.parameters().items():
            params['extractor.' + name] = array
        return params

    def metadata(self):
        return {
            'format': 'eae-model',
            'version': __version__,
            'width': self.width,
            'height': self.height,
            'model': self.config,
            'graph': self.graph_config,
        }

    def check_sensor(self, width, height):
        if (width, height) != (self.width, self.height):
            raise ConfigError('Model expects a {0}x{1} sensor, got {2}x{3}'.format(
                self.width, self.height, width, height))

    def layer_flops(self, nodes, edges):
        '''Analytic floating point operations of the spline stack over a graph'''
        total = 0
        for c_in, c_out in self._channels():
            total += edges * 4 * c_in * 2
            total += nodes * ((self.lattice ** 2 + 1) * c_in * c_out * 2 + c_out)
        return total

    def head_flops(self, objects):
        '''Analytic floating point operations of the per-frame object head'''
        h, f = self.hidden_dim, self.object_dim
        gru = lambda i: 3 * 2 * (i * h + h * h) + 10 * h  # noqa: E731
        per_object = 2 * self.readout_dim * f + gru(BBOX_DIM) + gru(f) + 2 * 2 * h + 2 * 2 * (2 * h) + 8 * h
        return objects * per_object

    def flops_per_event(self):
        '''Worst case operations triggered by one event: a full-degree node through the spline stack'''
        per_node = self.layer_flops(1, self.graph_config['max_neighbors'])
        if not self.share_gnn:
            per_node *= 2
        return per_node + 2 * self.fused_dim


def save_model(model, path):
    '''
    Write a model as an ``HNW1`` container.

    :returns: the container bytes
    '''
    return save_tensors(path, model.parameters(), model.metadata())


def load_model(path):
    '''
    Load a model written by :func:`save_model`.

    :raises eae.errors.ManifestError: when the tensors do not match the recorded configuration
    :raises eae.errors.ChecksumError: on corrupted data
    '''
    tensors, metadata = load_tensors(path)
    if metadata.get('format') != 'eae-model':
        raise ManifestError('{0} is not a model container'.format(path))
    try:
        model = HybridModel(metadata['model'], metadata['graph'], metadata['width'], metadata['height'], init=False)
    except (KeyError, TypeError) as e:
        raise ManifestError('Incomplete model metadata in {0}: {1}'.format(path, e))
    params = model.parameters()
    check_shapes(tensors, dict((name, array.shape) for name, array in params.items()))
    for name, array in params.items():
        array[...] = tensors[name]
    model.refresh_luts()
    log.debug('Loaded model from %s (%d tensors)', path, len(params))
    return model


def save_feature_maps(path, fmaps):
    '''Write one feature map per frame (``frame_NNNNN`` tensors)'''
    tensors = dict(('frame_{0:05d}'.format(i), fmap.grid) for i, fmap in enumerate(fmaps))
    return save_tensors(path, tensors, {'format': 'eae-feature-maps', 'frames': len(fmaps)})


def load_feature_maps(path):
    '''Read feature maps written by :func:`save_feature_maps`, in frame order'''
    tensors, metadata = load_tensors(path)
    count = int(metadata.get('frames', len(tensors)))
    try:
        return [FeatureMap(tensors['frame_{0:05d}'.format(i)], source='file') for i in range(count)]
    except KeyError as e:
        raise ManifestError('Missing feature map {0} in {1}'.format(e, path))
