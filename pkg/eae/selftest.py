# -*- coding: utf-8 -*-
#
'''
Reduced oracle suites run by the ``selftest`` command.

Each suite returns ``(passed, cases, detail)``; :func:`run_selftest` runs them all and reports
a JSON compatible summary.
'''
import logging
import time

from collections import OrderedDict

import numpy as np

from .events import EventStream, FrameSequence, frames_to_events
from .graph import GraphConfig, build_graph
from .metrics import average_precision, roc_auc
from .nn import (AttentionParams, GRUParams, LinearParams, SplineKernel, attention_backward, attention_forward,
                 gru_backward, gru_forward, linear_backward, linear_forward, lut_error_bound, lut_forward,
                 max_relative_error, numerical_gradient, softmax, spline_basis, spline_conv_forward,
                 spline_conv_backward, spline_conv_lut, spline_layer_forward, weighted_cross_entropy,
                 weighted_cross_entropy_backward)
from .oracles import brute_force_edges, crossing_counts, pairwise_auc, pairwise_average_precision
from .utils import rng_for

log = logging.getLogger(__name__)

__all__ = ('run_selftest', 'SUITES', 'random_stream', 'random_graph_inputs', 'GRADIENT_TOLERANCE')

#: Maximum relative error accepted by the gradient checks
GRADIENT_TOLERANCE = 1e-4

#: Denominator floor of the gradient relative errors
GRADIENT_FLOOR = 1e-8


def random_stream(rng, count, width=32, height=24, duration_us=20000):
    '''A random time ordered stream, timestamps possibly repeated'''
    return EventStream.from_arrays(width, height, rng.integers(0, width, size=count),
                                   rng.integers(0, height, size=count),
                                   rng.integers(0, duration_us, size=count),
                                   rng.choice(np.array([-1, 1], dtype=np.int8), size=count))


def random_graph_inputs(rng, nodes=8, edges=20, c_in=3, c_out=2, lattice=4):
    '''Random node features, causal edges, edge features and kernel'''
    dst = rng.integers(1, nodes, size=edges)
    src = np.array([rng.integers(0, d) for d in dst])
    order = np.argsort(dst, kind='mergesort')
    src, dst = src[order], dst[order]
    attr = rng.uniform(0.05, 0.95, size=(edges, 2))
    x = rng.standard_normal((nodes, c_in))
    kernel = SplineKernel(rng.standard_normal((lattice, lattice, c_in, c_out)), rng.standard_normal((c_in, c_out)))
    return x, src, dst, attr, kernel


def graph_suite(streams=100, size=200, max_neighbors=16):
    cases = 0
    for seed in range(streams):
        rng = rng_for(seed, 1)
        events = random_stream(rng, int(rng.integers(1, size + 1)))
        cfg = GraphConfig(events.width, events.height, radius=0.2, max_neighbors=max_neighbors).resolve(20000)
        graph = build_graph(events, cfg)
        expected = brute_force_edges(events, cfg)
        got = [(int(s), int(d), tuple(float(v) for v in f)) for s, d, f in zip(graph.src, graph.dst, graph.edge_attr)]
        if got != [(s, d, tuple(f)) for s, d, f in expected]:
            return False, cases, 'stream {0}: edges differ from the quadratic scan'.format(seed)
        cases += 1
    return True, cases, 'build_graph equals the quadratic scan'


def converter_suite(sequences=5):
    cases = 0
    for seed in range(sequences):
        rng = rng_for(seed, 2)
        grids = [rng.integers(0, 256, size=(6, 8)) for _ in range(4)]
        frames = FrameSequence(8, 6, [(k * 50000, g) for k, g in enumerate(grids)], 20.0)
        for linear, threshold in ((True, 25.5), (False, 0.2)):
            stream = frames_to_events(frames, threshold, linear=linear)
            got = {}
            for x, y, p in zip(stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
                got[(x, y, p)] = got.get((x, y, p), 0) + 1
            if got != crossing_counts(frames, threshold, linear=linear):
                return False, cases, 'sequence {0}: event counts differ from the crossing counter'.format(seed)
            cases += 1
    return True, cases, 'converter equals the per-pixel crossing counter'


def metrics_suite(instances=1000):
    cases = 0
    for seed in range(instances):
        rng = rng_for(seed, 3)
        n = int(rng.integers(2, 51))
        scores = np.round(rng.uniform(size=n), 1)
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        if abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)) > 1e-12:
            return False, cases, 'instance {0}: ROC-AUC differs from the pairwise oracle'.format(seed)
        if abs(average_precision(scores, labels) - pairwise_average_precision(scores, labels)) > 1e-12:
            return False, cases, 'instance {0}: AP differs from the rank scan oracle'.format(seed)
        cases += 1
    return True, cases, 'ROC-AUC and AP equal their quadratic oracles'


def _check(analytic, f, x):
    return max_relative_error(analytic, numerical_gradient(f, x), floor=GRADIENT_FLOOR)


def gradient_errors(seed):
    '''Worst relative gradient error of every learnable operation for one seed'''
    rng = rng_for(seed, 4)
    errors = OrderedDict()

    x, src, dst, attr, kernel = random_graph_inputs(rng)
    weights = rng.standard_normal((x.shape[0], kernel.out_channels))

    def conv_loss():
        return float((spline_conv_forward(x, src, dst, attr, kernel)[0] * weights).sum())
    _, cache = spline_conv_forward(x, src, dst, attr, kernel)
    dx, grads = spline_conv_backward(weights, kernel, cache)
    errors['spline_conv'] = max(_check(dx, conv_loss, x), _check(grads['control'], conv_loss, kernel.control),
                                _check(grads['root'], conv_loss, kernel.root))

    params = GRUParams.init(3, 4, rng)
    gx, gh = rng.standard_normal((2, 3)), rng.standard_normal((2, 4))
    gw = rng.standard_normal((2, 4))

    def gru_loss():
        return float((gru_forward(params, gx, gh)[0] * gw).sum())
    _, cache = gru_forward(params, gx, gh)
    dx, dh, grads = gru_backward(gw, params, cache)
    worst = max(_check(dx, gru_loss, gx), _check(dh, gru_loss, gh))
    for name in GRUParams.NAMES:
        worst = max(worst, _check(grads[name], gru_loss, getattr(params, name)))
    errors['gru'] = worst

    att = AttentionParams.init(4, rng)
    H = rng.standard_normal((3, 4))
    aw = rng.standard_normal((3, 4))

    def att_loss():
        return float((attention_forward(H, att)[1] * aw).sum())
    _, _, cache = attention_forward(H, att)
    dH, grads = attention_backward(aw, att, cache)
    errors['attention'] = max(_check(dH, att_loss, H), _check(grads['w'], att_loss, att.w))

    lin = LinearParams.init(5, 3, rng)
    lx = rng.standard_normal((4, 5))
    lw = rng.standard_normal((4, 3))

    def lin_loss():
        return float((linear_forward(lin, lx)[0] * lw).sum())
    dx, grads = linear_backward(lw, lin, lx)
    errors['linear'] = max(_check(dx, lin_loss, lx), _check(grads['W'], lin_loss, lin.W),
                           _check(grads['b'], lin_loss, lin.b))

    logits = rng.standard_normal((5, 2))
    labels = rng.integers(0, 2, size=5)

    def ce_loss():
        return weighted_cross_entropy(logits, labels)[0]
    _, cache = weighted_cross_entropy(logits, labels)
    errors['loss'] = _check(weighted_cross_entropy_backward(cache), ce_loss, logits)
    return errors


def gradient_suite(seeds=10):
    worst = OrderedDict()
    for seed in range(seeds):
        for name, error in gradient_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), error)
    failing = [name for name, error in worst.items() if error > GRADIENT_TOLERANCE]
    if failing:
        return False, seeds, 'gradient error above {0:g} for {1}'.format(GRADIENT_TOLERANCE, ', '.join(failing))
    return True, seeds * len(worst), 'worst relative error {0:.2e}'.format(max(worst.values()))


def lut_errors(seed=0, bins=(16, 32, 64, 128)):
    '''``({bins: max error}, bound at the middle resolution inputs)`` on a fixed random suite'''
    rng = rng_for(seed, 5)
    x, src, dst, attr, kernel = random_graph_inputs(rng, nodes=20, edges=60, c_in=3, c_out=3, lattice=5)
    exact, _ = spline_conv_forward(x, src, dst, attr, kernel)
    errors = OrderedDict()
    for b in bins:
        errors[b] = float(np.abs(lut_forward(x, src, dst, attr, spline_conv_lut(kernel, b)) - exact).max())
    return errors, (x, src, dst, kernel)


def lut_suite():
    errors, (x, src, dst, kernel) = lut_errors()
    values = list(errors.values())
    if any(finer > coarser for coarser, finer in zip(values, values[1:])):
        return False, len(values), 'lookup error grows with resolution: {0}'.format(values)
    bound = lut_error_bound(kernel, x, src, dst, 64)
    if not errors[64] <= bound:
        return False, len(values), 'error {0:.3g} at 64 bins exceeds the bound {1:.3g}'.format(errors[64], bound)
    return True, len(values), 'error at 64 bins {0:.3g} <= bound {1:.3g}'.format(errors[64], bound)


def normalization_suite(permutations=20):
    rng = rng_for(0, 6)
    probs = softmax(rng.standard_normal((50, 2)) * 10, axis=1)
    if np.abs(probs.sum(axis=1) - 1).max() > 1e-12:
        return False, 1, 'softmax rows do not sum to one'
    _, weights = spline_basis(rng.uniform(-0.2, 1.2, size=(200, 2)), 5)
    if np.abs(weights.sum(axis=1) - 1).max() > 1e-12 or (weights < 0).any():
        return False, 2, 'spline basis is not a partition of unity'
    att = AttentionParams.init(4, rng)
    H = rng.standard_normal((5, 4))
    _, weighted, _ = attention_forward(H, att)
    for _ in range(permutations):
        perm = rng.permutation(5)
        if np.abs(attention_forward(H[perm], att)[1] - weighted[perm]).max() > 1e-12:
            return False, 3, 'attention is not permutation equivariant'
    x, src, dst, attr, _ = random_graph_inputs(rng, c_in=3, c_out=3)
    out, _ = spline_layer_forward(x, src, dst, attr, SplineKernel.zeros(3, 3, 4))
    if not np.array_equal(out, x):
        return False, 4, 'zero initialized residual layer is not the identity'
    return True, 3 + permutations, 'softmax, spline basis, attention and residual identity hold'


SUITES = OrderedDict([
    ('graph', graph_suite),
    ('converter', converter_suite),
    ('metrics', metrics_suite),
    ('gradients', gradient_suite),
    ('lut', lut_suite),
    ('normalization', normalization_suite),
])


def run_selftest(suites=None):
    '''
    Run oracle suites.

    :param list suites: suite names, all of them by default
    :returns: ``(passed, summary)``
    '''
    summary = OrderedDict()
    passed = True
    for name in suites or SUITES:
        started = time.perf_counter()
        try:
            ok, cases, detail = SUITES[name]()
        except Exception as e:
            log.exception('Suite %s crashed', name)
            ok, cases, detail = False, 0, 'crashed: {0}'.format(e)
        summary[name] = OrderedDict([('passed', ok), ('cases', cases), ('detail', detail),
                                     ('seconds', round(time.perf_counter() - started, 3))])
        passed = passed and ok
        log.info('Suite %s: %s (%s)', name, 'ok' if ok else 'FAILED', detail)
    return passed, summary
