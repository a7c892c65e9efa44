# -*- coding: utf-8 -*-
#
'''
Numeric layers with analytic gradients.

Every layer is a pair of functions: ``*_forward`` returns its output and a cache,
``*_backward`` takes the cache and the upstream gradient and returns the input gradients
and a ``{name: gradient}`` dict matching the layer parameters.
Arrays are float64 numpy arrays, feature rows are nodes or objects.
'''
import logging
import math
import threading

import numpy as np

from scipy import sparse
from scipy.special import expit

from .errors import InvalidInputError, StateError

log = logging.getLogger(__name__)

__all__ = ('as_tensor', 'SplineKernel', 'SplineLUT', 'GRUParams', 'AttentionParams', 'LinearParams',
           'spline_basis', 'basis_matrix', 'spline_conv_forward', 'spline_conv_backward',
           'spline_layer_forward', 'spline_layer_backward', 'spline_conv_lut', 'lut_forward', 'lut_layer_forward',
           'lut_error_bound',
           'gru_forward', 'gru_backward', 'attention_forward', 'attention_backward',
           'linear_forward', 'linear_backward', 'relu', 'relu_backward', 'softmax',
           'weighted_cross_entropy', 'weighted_cross_entropy_backward',
           'numerical_gradient', 'max_relative_error', 'clamp_count', 'reset_clamp_count')

_clamps = {'count': 0}
_clamps_lock = threading.Lock()


def clamp_count():
    '''Number of edge feature components clamped into [0, 1] by :func:`spline_basis`'''
    return _clamps['count']


def reset_clamp_count():
    with _clamps_lock:
        _clamps['count'] = 0


def as_tensor(values, shape=None, name='tensor'):
    '''
    Coerce to a finite float64 array.

    :raises InvalidInputError: on non-finite values or a shape mismatch
    '''
    array = np.asarray(values, dtype=np.float64)
    if shape is not None and array.shape != tuple(shape):
        raise InvalidInputError('{0} has shape {1}, expected {2}'.format(name, array.shape, tuple(shape)))
    if not np.isfinite(array).all():
        raise InvalidInputError('{0} holds non-finite values'.format(name))
    return array


def _require(cache, op):
    if cache is None:
        raise StateError('{0} backward called before forward'.format(op))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class SplineKernel(object):
    '''
    A degree-1 spline kernel.

    :param control: ``(k, k, C_in, C_out)`` control matrices over the [0, 1]² edge feature domain
    :param root: ``(C_in, C_out)`` self connection matrix
    '''
    def __init__(self, control, root):
        self.control = as_tensor(control, name='control')
        self.root = as_tensor(root, name='root')
        if self.control.ndim != 4 or self.control.shape[0] != self.control.shape[1]:
            raise InvalidInputError('Control grid must have shape (k, k, C_in, C_out)')
        if self.lattice < 2:
            raise InvalidInputError('Spline lattice needs k >= 2')
        if self.root.shape != self.control.shape[2:]:
            raise InvalidInputError('Root matrix shape {0} does not match control matrices {1}'.format(
                self.root.shape, self.control.shape[2:]))

    @property
    def lattice(self):
        return self.control.shape[0]

    @property
    def in_channels(self):
        return self.control.shape[2]

    @property
    def out_channels(self):
        return self.control.shape[3]

    @classmethod
    def init(cls, in_channels, out_channels, lattice, rng):
        return cls(_uniform(rng, in_channels, (lattice, lattice, in_channels, out_channels)),
                   _uniform(rng, in_channels, (in_channels, out_channels)))

    @classmethod
    def zeros(cls, in_channels, out_channels, lattice):
        return cls(np.zeros((lattice, lattice, in_channels, out_channels)), np.zeros((in_channels, out_channels)))

    def parameters(self):
        return {'control': self.control, 'root': self.root}

    def weight(self, e):
        '''The interpolated ``(C_in, C_out)`` matrix at edge feature ``e``'''
        index, weights = spline_basis(np.asarray(e, dtype=np.float64).reshape(1, 2), self.lattice)
        flat = self.control.reshape(-1, self.in_channels, self.out_channels)
        return np.tensordot(weights[0], flat[index[0]], axes=1)


def spline_basis(e, lattice):
    '''
    Bilinear basis weights over a ``lattice`` x ``lattice`` grid of control points.

    Out of range components are clamped into [0, 1] and counted (see :func:`clamp_count`).

    :param e: ``(2,)`` or ``(E, 2)`` edge features
    :returns: ``(index, weights)``, both ``(E, 4)``: flat control point indices (``ix * k + iy``)
        and their non-negative weights summing to one
    '''
    e = np.asarray(e, dtype=np.float64).reshape(-1, 2)
    clipped = np.clip(e, 0.0, 1.0)
    outside = int(np.count_nonzero(clipped != e))
    if outside:
        with _clamps_lock:
            _clamps['count'] += outside
        log.debug('Clamped %d edge feature components into [0, 1]', outside)
    k = int(lattice)
    s = clipped * (k - 1)
    i0 = np.minimum(np.floor(s).astype(np.int64), k - 2)
    frac = s - i0
    fx, fy = frac[:, 0], frac[:, 1]
    ix, iy = i0[:, 0], i0[:, 1]
    index = np.stack([ix * k + iy, (ix + 1) * k + iy, ix * k + iy + 1, (ix + 1) * k + iy + 1], axis=1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return index, weights


def basis_matrix(src, dst, edge_attr, num_nodes, lattice, rows=None):
    '''
    Sparse aggregation matrix ``S`` of shape ``(R * k², N)``.

    ``(S @ x)[r * k² + b]`` is the basis-``b`` weighted sum of the incoming neighbor features
    of row node ``r``. Rows are all nodes, or ``rows`` (sorted node indices) when given.
    '''
    k2 = int(lattice) ** 2
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if rows is None:
        n_rows, local = num_nodes, dst
        selected = slice(None)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        n_rows = len(rows)
        position = np.searchsorted(rows, dst)
        position = np.minimum(position, max(n_rows - 1, 0))
        selected = (rows[position] == dst) if n_rows else np.zeros(len(dst), dtype=bool)
        local = position[selected]
    src = src[selected]
    edge_attr = np.asarray(edge_attr, dtype=np.float64).reshape(-1, 2)[selected]
    index, weights = spline_basis(edge_attr, lattice)
    row_ids = (local[:, None] * k2 + index).ravel()
    col_ids = np.repeat(src, 4)
    return sparse.csr_matrix((weights.ravel(), (row_ids, col_ids)), shape=(n_rows * k2, num_nodes))


def spline_conv_forward(x, src, dst, edge_attr, kernel, basis=None, rows=None):
    '''
    Spline convolution ``f'_i = f_i W_c + sum_j f_j W(e_ji)`` over the incoming edges of each node.

    :param x: ``(N, C_in)`` node features
    :param SplineKernel kernel: the kernel
    :param basis: a precomputed :func:`basis_matrix` for the same edges and rows
    :param rows: compute only these (sorted) node rows
    :returns: ``(out, cache)`` with ``out`` of shape ``(R, C_out)``
    '''
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != kernel.in_channels:
        raise InvalidInputError('Node features of shape {0} do not match a {1}-channel kernel'.format(
            x.shape, kernel.in_channels))
    n = x.shape[0]
    k2 = kernel.lattice ** 2
    S = basis if basis is not None else basis_matrix(src, dst, edge_attr, n, kernel.lattice, rows)
    n_rows = S.shape[0] // k2
    B = np.asarray(S @ x).reshape(n_rows, k2 * kernel.in_channels)
    K = kernel.control.reshape(k2 * kernel.in_channels, kernel.out_channels)
    x_rows = x if rows is None else x[np.asarray(rows, dtype=np.int64)]
    out = x_rows @ kernel.root + B @ K
    return out, (x, S, B, rows)


def spline_conv_backward(dout, kernel, cache):
    '''
    :returns: ``(dx, {'control', 'root'})``
    '''
    _require(cache, 'spline_conv')
    x, S, B, rows = cache
    k2 = kernel.lattice ** 2
    K = kernel.control.reshape(k2 * kernel.in_channels, kernel.out_channels)
    x_rows = x if rows is None else x[np.asarray(rows, dtype=np.int64)]
    grads = {
        'control': (B.T @ dout).reshape(kernel.control.shape),
        'root': x_rows.T @ dout,
    }
    dB = (dout @ K.T).reshape(-1, kernel.in_channels)
    dx = np.asarray(S.T @ dB)
    if rows is None:
        dx += dout @ kernel.root.T
    else:
        dx[np.asarray(rows, dtype=np.int64)] += dout @ kernel.root.T
    return dx, grads


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def spline_layer_forward(x, src, dst, edge_attr, kernel, basis=None, rows=None):
    '''
    Residual spline layer: ``relu(conv(x)) + x`` (the residual only when ``C_in == C_out``).
    '''
    z, conv_cache = spline_conv_forward(x, src, dst, edge_attr, kernel, basis, rows)
    out = relu(z)
    if kernel.in_channels == kernel.out_channels:
        out = out + (x if rows is None else x[np.asarray(rows, dtype=np.int64)])
    return out, (z, conv_cache)


def spline_layer_backward(dout, kernel, cache):
    _require(cache, 'spline_layer')
    z, conv_cache = cache
    dx, grads = spline_conv_backward(relu_backward(dout, z), kernel, conv_cache)
    if kernel.in_channels == kernel.out_channels:
        rows = conv_cache[3]
        if rows is None:
            dx += dout
        else:
            dx[np.asarray(rows, dtype=np.int64)] += dout
    return dx, grads


class SplineLUT(object):
    '''Kernel matrices precomputed at the centers of a ``bins`` x ``bins`` grid'''
    def __init__(self, kernel, bins):
        if bins < 2:
            raise InvalidInputError('A lookup table needs at least 2 bins per dimension')
        self.kernel = kernel
        self.bins = int(bins)
        centers = (np.arange(self.bins) + 0.5) / self.bins
        grid = np.stack(np.meshgrid(centers, centers, indexing='ij'), axis=-1).reshape(-1, 2)
        index, weights = spline_basis(grid, kernel.lattice)
        flat = kernel.control.reshape(-1, kernel.in_channels, kernel.out_channels)
        tables = np.einsum('gb,gbio->gio', weights, flat[index])
        self.tables = tables.reshape(self.bins, self.bins, kernel.in_channels, kernel.out_channels)

    def lookup(self, edge_attr):
        '''Nearest-bin kernel matrices, ``(E, C_in, C_out)``'''
        e = np.clip(np.asarray(edge_attr, dtype=np.float64).reshape(-1, 2), 0.0, 1.0)
        b = np.minimum(np.floor(e * self.bins).astype(np.int64), self.bins - 1)
        return self.tables[b[:, 0], b[:, 1]]


def spline_conv_lut(kernel, bins):
    '''Precompute a lookup table for ``kernel``'''
    return SplineLUT(kernel, bins)


def lut_forward(x, src, dst, edge_attr, lut, rows=None):
    '''
    Spline convolution through nearest-bin lookup tables (inference only).

    :param rows: compute only these (sorted) node rows; ``dst`` must then only hold rows members
    '''
    x = np.asarray(x, dtype=np.float64)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if rows is None:
        out, local = x @ lut.kernel.root, dst
    else:
        rows = np.asarray(rows, dtype=np.int64)
        out, local = x[rows] @ lut.kernel.root, np.searchsorted(rows, dst)
    if len(src):
        messages = np.einsum('ei,eio->eo', x[src], lut.lookup(edge_attr))
        np.add.at(out, local, messages)
    return out


def lut_layer_forward(x, src, dst, edge_attr, lut, rows=None):
    '''Residual spline layer evaluated through a lookup table'''
    out = relu(lut_forward(x, src, dst, edge_attr, lut, rows))
    if lut.kernel.in_channels == lut.kernel.out_channels:
        out = out + (x if rows is None else x[np.asarray(rows, dtype=np.int64)])
    return out


def lut_error_bound(kernel, x, src, dst, bins):
    '''
    Elementwise error bound of :func:`lut_forward` against the exact convolution.

    ``L * sqrt(2) / (2 * bins)`` where ``L`` bounds how fast a node output moves with its
    edge features: the largest incoming ``L1`` feature mass times the kernel lattice slope
    ``(k - 1) * sqrt(2) * Dmax``, ``Dmax`` being the largest adjacent control point difference.
    '''
    control = kernel.control
    dmax = max(np.abs(np.diff(control, axis=0)).max(), np.abs(np.diff(control, axis=1)).max())
    x = np.asarray(x, dtype=np.float64)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if not len(dst):
        return 0.0
    mass = np.abs(x).sum(axis=1)
    incoming = np.bincount(dst, weights=mass[src], minlength=x.shape[0])
    lipschitz = incoming.max() * (kernel.lattice - 1) * math.sqrt(2) * dmax
    return float(lipschitz * math.sqrt(2) / (2 * bins))


def gru_forward(params, x, h):
    '''
    One GRU step: ``h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h)``.

    :param GRUParams params: the cell
    :param x: ``(N, input)`` inputs
    :param h: ``(N, hidden)`` previous states
    :returns: ``(h', cache)``
    '''
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if x.shape[1] != params.input_dim or h.shape[1] != params.hidden_dim or x.shape[0] != h.shape[0]:
        raise InvalidInputError('GRU input {0} / state {1} do not match a {2} -> {3} cell'.format(
            x.shape, h.shape, params.input_dim, params.hidden_dim))
    z = expit(x @ params.W_z.T + h @ params.U_z.T + params.b_z)
    r = expit(x @ params.W_r.T + h @ params.U_r.T + params.b_r)
    candidate = np.tanh(x @ params.W_h.T + (r * h) @ params.U_h.T + params.b_h)
    out = (1 - z) * h + z * candidate
    return out, (x, h, z, r, candidate)


def gru_backward(dout, params, cache):
    '''
    :returns: ``(dx, dh, grads)``
    '''
    _require(cache, 'gru')
    x, h, z, r, candidate = cache
    dz = dout * (candidate - h)
    dh = dout * (1 - z)
    da_h = dout * z * (1 - candidate ** 2)
    drh = da_h @ params.U_h
    dr = drh * h
    dh += drh * r
    da_r = dr * r * (1 - r)
    da_z = dz * z * (1 - z)
    dx = da_h @ params.W_h + da_r @ params.W_r + da_z @ params.W_z
    dh += da_r @ params.U_r + da_z @ params.U_z
    grads = {
        'W_z': da_z.T @ x, 'U_z': da_z.T @ h, 'b_z': da_z.sum(axis=0),
        'W_r': da_r.T @ x, 'U_r': da_r.T @ h, 'b_r': da_r.sum(axis=0),
        'W_h': da_h.T @ x, 'U_h': da_h.T @ (r * h), 'b_h': da_h.sum(axis=0),
    }
    return dx, dh, grads


class GRUParams(object):
    '''Gate matrices ``W_*`` ``(hidden, input)``, ``U_*`` ``(hidden, hidden)`` and biases ``b_*``'''
    NAMES = ('W_z', 'U_z', 'b_z', 'W_r', 'U_r', 'b_r', 'W_h', 'U_h', 'b_h')

    def __init__(self, **arrays):
        for name in self.NAMES:
            setattr(self, name, as_tensor(arrays[name], name=name))
        self.hidden_dim, self.input_dim = self.W_z.shape
        for gate in 'zrh':
            if getattr(self, 'W_' + gate).shape != (self.hidden_dim, self.input_dim) \
                    or getattr(self, 'U_' + gate).shape != (self.hidden_dim, self.hidden_dim) \
                    or getattr(self, 'b_' + gate).shape != (self.hidden_dim,):
                raise InvalidInputError('Inconsistent shapes for GRU gate {0}'.format(gate))

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        arrays = {}
        for gate in 'zrh':
            arrays['W_' + gate] = _uniform(rng, input_dim, (hidden_dim, input_dim))
            q, _ = np.linalg.qr(rng.standard_normal((hidden_dim, hidden_dim)))
            arrays['U_' + gate] = q
            arrays['b_' + gate] = np.zeros(hidden_dim)
        return cls(**arrays)

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        arrays = {}
        for gate in 'zrh':
            arrays['W_' + gate] = np.zeros((hidden_dim, input_dim))
            arrays['U_' + gate] = np.zeros((hidden_dim, hidden_dim))
            arrays['b_' + gate] = np.zeros(hidden_dim)
        return cls(**arrays)

    def parameters(self):
        return dict((name, getattr(self, name)) for name in self.NAMES)


class AttentionParams(object):
    '''Attention scoring vector ``w``'''
    def __init__(self, w):
        self.w = as_tensor(w, name='w')
        if self.w.ndim != 1:
            raise InvalidInputError('Attention vector must be one dimensional')

    @classmethod
    def init(cls, hidden_dim, rng):
        return cls(_uniform(rng, hidden_dim, (hidden_dim,)))

    def parameters(self):
        return {'w': self.w}


def attention_forward(H, params):
    '''
    Attention over object states: ``alpha = softmax(tanh(H w))`` and rows ``alpha_i * H_i``.

    :param H: ``(n, hidden)`` object states, possibly empty
    :returns: ``(alpha, weighted, cache)``
    '''
    H = np.asarray(H, dtype=np.float64).reshape(-1, params.w.shape[0])
    if H.shape[0] == 0:
        return np.zeros(0), np.zeros((0, params.w.shape[0])), (H, np.zeros(0), np.zeros(0))
    scores = np.tanh(H @ params.w)
    alpha = softmax(scores)
    return alpha, alpha[:, None] * H, (H, scores, alpha)


def attention_backward(dweighted, params, cache, dalpha=None):
    '''
    :returns: ``(dH, {'w'})``
    '''
    _require(cache, 'attention')
    H, scores, alpha = cache
    if H.shape[0] == 0:
        return np.zeros_like(H), {'w': np.zeros_like(params.w)}
    dweighted = np.asarray(dweighted, dtype=np.float64).reshape(H.shape)
    dH = alpha[:, None] * dweighted
    da = (dweighted * H).sum(axis=1)
    if dalpha is not None:
        da = da + dalpha
    ds = alpha * (da - np.dot(alpha, da))
    dpre = ds * (1 - scores ** 2)
    dH += np.outer(dpre, params.w)
    return dH, {'w': H.T @ dpre}


class LinearParams(object):
    '''Affine map ``y = x W^T + b`` with ``W`` of shape ``(out, in)``'''
    def __init__(self, W, b):
        self.W = as_tensor(W, name='W')
        self.b = as_tensor(b, name='b')
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise InvalidInputError('Inconsistent linear layer shapes {0} / {1}'.format(self.W.shape, self.b.shape))

    @classmethod
    def init(cls, in_dim, out_dim, rng):
        return cls(_uniform(rng, in_dim, (out_dim, in_dim)), _uniform(rng, in_dim, (out_dim,)))

    @classmethod
    def zeros(cls, in_dim, out_dim):
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    def parameters(self):
        return {'W': self.W, 'b': self.b}


def linear_forward(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W.shape[1]:
        raise InvalidInputError('Linear input of size {0}, expected {1}'.format(x.shape[-1], params.W.shape[1]))
    return x @ params.W.T + params.b, x


def linear_backward(dout, params, cache):
    '''
    :returns: ``(dx, {'W', 'b'})``
    '''
    _require(cache, 'linear')
    x = np.atleast_2d(cache)
    dout2 = np.atleast_2d(dout)
    dx = (dout2 @ params.W).reshape(np.shape(cache))
    return dx, {'W': dout2.T @ x, 'b': dout2.sum(axis=0)}


def softmax(logits, axis=-1):
    '''Numerically stable softmax'''
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise InvalidInputError('Non-finite logits')
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def weighted_cross_entropy(logits, labels, class_weights=(0.27, 1.0)):
    '''
    Class weighted cross-entropy summed over rows: ``-sum weight[label] * log p[label]``.

    :param logits: ``(N, classes)`` or ``(classes,)``
    :param labels: integer labels (one per row)
    :returns: ``(loss, cache)``
    '''
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.isfinite(logits).all():
        raise InvalidInputError('Non-finite logits')
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    weights = np.asarray(class_weights, dtype=np.float64)[labels]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    loss = float(-(weights * log_p[rows, labels]).sum())
    return loss, (np.exp(log_p), labels, weights)


def weighted_cross_entropy_backward(cache, dloss=1.0):
    '''Gradient of the loss with respect to the logits'''
    _require(cache, 'weighted_cross_entropy')
    probs, labels, weights = cache
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    return dloss * weights[:, None] * dlogits


def numerical_gradient(f, x, eps=1e-5):
    '''
    Central finite differences of a scalar function with respect to the array ``x`` (modified in place
    and restored).
    '''
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=['multi_index'], op_flags=['readwrite'])
    while not it.finished:
        index = it.multi_index
        original = x[index]
        x[index] = original + eps
        plus = f()
        x[index] = original - eps
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * eps)
        it.iternext()
    return grad


def max_relative_error(analytic, numeric, floor=1e-8):
    '''``max |a - n| / max(|a|, |n|, floor)``'''
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denominator = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denominator).max())
