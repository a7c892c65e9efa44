# -*- coding: utf-8 -*-
#
'''
Slow reference implementations.

Each function recomputes a result of the engine the most direct way possible (quadratic scans,
dense loops, scalar arithmetic). They back the test suite and the ``selftest`` command.
'''
import math

import numpy as np

from scipy.special import expit

from .errors import InvalidInputError

__all__ = ('brute_force_edges', 'crossing_counts', 'pairwise_auc', 'pairwise_average_precision',
           'dense_spline_conv', 'scalar_gru', 'bilinear_weight')


def brute_force_edges(events, cfg):
    '''
    Edge list of the event graph by a full quadratic scan.

    :returns: ``[(src, dst, (e0, e1))]`` sorted by ``(dst, src)``
    '''
    xs, ys, ts = events.x.tolist(), events.y.tolist(), events.t.tolist()
    pos = [(x / float(cfg.width), y / float(cfg.height), cfg.beta * t) for x, y, t in zip(xs, ys, ts)]
    r2 = cfg.radius * cfg.radius
    edges = []
    for j in range(len(pos)):
        found = []
        for i in range(j):
            d2 = sum((a - b) * (a - b) for a, b in zip(pos[i], pos[j]))
            if d2 <= r2:
                found.append((d2, -ts[i], i))
        found.sort()
        for _, _, i in sorted(found[:cfg.max_neighbors], key=lambda item: item[2]):
            feature = (0.5 * (pos[j][0] - pos[i][0]) + 0.5, 0.5 * (pos[j][1] - pos[i][1]) + 0.5)
            edges.append((i, j, feature))
    return edges


def crossing_counts(frames, threshold, linear=False):
    '''
    Events per pixel and polarity, tracking each pixel reference in a scalar loop.

    :returns: ``{(x, y, polarity): count}``
    '''
    counts = {}
    transform = (lambda v: float(v)) if linear else (lambda v: math.log1p(float(v)))
    first = frames.frames[0][1]
    for y in range(frames.height):
        for x in range(frames.width):
            reference = transform(first[y, x])
            for _, grid in frames.frames[1:]:
                level = transform(grid[y, x])
                if abs(level - reference) <= threshold:
                    continue
                sign = 1 if level > reference else -1
                crossed = int(math.floor(abs(level - reference) / threshold))
                reference += sign * crossed * threshold
                counts[(x, y, sign)] = counts.get((x, y, sign), 0) + crossed
    return counts


def pairwise_auc(scores, labels):
    '''ROC-AUC by comparing every positive with every negative'''
    positives = [s for s, l in zip(scores, labels) if l == 1]
    negatives = [s for s, l in zip(scores, labels) if l == 0]
    if not positives or not negatives:
        raise InvalidInputError('Pairwise AUC needs both classes')
    total = 0.0
    for p in positives:
        for n in negatives:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(positives) * len(negatives))


def pairwise_average_precision(scores, labels):
    '''Average precision as the mean, over positives, of the precision at their score'''
    scores, labels = list(scores), list(labels)
    positives = [i for i, l in enumerate(labels) if l == 1]
    if not positives:
        raise InvalidInputError('Pairwise average precision needs a positive')
    total = 0.0
    for i in positives:
        above = [j for j in range(len(scores)) if scores[j] >= scores[i]]
        total += float(sum(labels[j] for j in above)) / len(above)
    return total / len(positives)


def bilinear_weight(e, lattice, a, b):
    '''Weight of control point ``(a, b)`` for the edge feature ``e``'''
    weight = 1.0
    for value, index in zip(e, (a, b)):
        s = min(max(float(value), 0.0), 1.0) * (lattice - 1)
        weight *= max(0.0, 1.0 - abs(s - index))
    return weight


def dense_spline_conv(x, src, dst, edge_attr, kernel):
    '''Spline convolution with explicit loops over edges and control points'''
    x = np.asarray(x, dtype=np.float64)
    k = kernel.lattice
    out = x @ kernel.root
    for s, d, e in zip(src, dst, np.asarray(edge_attr, dtype=np.float64)):
        weight = np.zeros((kernel.in_channels, kernel.out_channels))
        for a in range(k):
            for b in range(k):
                weight += bilinear_weight(e, k, a, b) * kernel.control[a, b]
        out[d] += x[s] @ weight
    return out


def scalar_gru(params, x, h):
    '''One GRU step for a single object, one hidden unit at a time'''
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    z = [expit(params.W_z[u] @ x + params.U_z[u] @ h + params.b_z[u]) for u in range(params.hidden_dim)]
    r = np.array([expit(params.W_r[u] @ x + params.U_r[u] @ h + params.b_r[u]) for u in range(params.hidden_dim)])
    out = np.zeros(params.hidden_dim)
    for u in range(params.hidden_dim):
        candidate = math.tanh(params.W_h[u] @ x + params.U_h[u] @ (r * h) + params.b_h[u])
        out[u] = (1 - z[u]) * h[u] + z[u] * candidate
    return out
