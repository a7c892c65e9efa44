# -*- coding: utf-8 -*-
#
'''
Latency and throughput measurements.

Scoring latencies are measured with the wall clock over a scenario. The incremental speedup
compares, on a large synthetic graph, the refresh of the nodes dirtied by one insertion against a
full recomputation of the spline stack. FLOPs figures come from the analytic operation counts.
'''
import logging
import time

from collections import OrderedDict

import numpy as np

from .errors import InvalidInputError
from .events import Event, EventStream
from .graph import DirtySet, build_graph, insert_events
from .pipeline import gnn_forward, make_packets, run_sequence, step_incremental
from .utils import rng_for

log = logging.getLogger(__name__)

__all__ = ('bench', 'latency_summary', 'incremental_speedup', 'synthetic_stream')

PERCENTILES = (50, 95, 99)


def latency_summary(values_us):
    '''Percentiles (and mean) of latencies in microseconds'''
    values = np.asarray(values_us, dtype=np.float64)
    if not len(values):
        values = np.zeros(1)
    summary = OrderedDict(('p{0}'.format(p), float(np.percentile(values, p))) for p in PERCENTILES)
    summary['mean'] = float(values.mean())
    return summary


def synthetic_stream(width, height, count, duration_us, seed=0):
    '''Uniformly scattered random events over ``duration_us``'''
    rng = rng_for(seed, 0xbe7c)
    t = np.sort(rng.integers(1, duration_us + 1, size=count))
    return EventStream.from_arrays(width, height, rng.integers(0, width, size=count),
                                   rng.integers(0, height, size=count), t,
                                   rng.choice(np.array([-1, 1], dtype=np.int8), size=count))


def incremental_speedup(model, nodes=10000, insertions=100, events_per_insert=1, seed=0):
    '''
    Median full recomputation time over median incremental refresh time.

    The graph is built from ``nodes`` synthetic events, then ``insertions`` batches of
    ``events_per_insert`` later events are inserted one batch at a time.

    :returns: a dict with both medians (microseconds), the speedup and the recomputed rows
    '''
    if nodes < 1 or insertions < 1 or events_per_insert < 1:
        raise InvalidInputError('Benchmark sizes must be at least 1')
    total = nodes + insertions * events_per_insert
    duration = 1000000
    stream = synthetic_stream(model.width, model.height, total, duration, seed)
    cfg = model.graph_cfg(duration)
    graph = build_graph(stream[:nodes], cfg)
    x0 = np.stack([stream.p.astype(np.float64), stream.t.astype(np.float64) / duration], axis=1)
    everything = [np.arange(nodes)] * model.depth
    step_incremental(model, graph, DirtySet(everything, 0, graph.version), x0)
    incremental, full, rows = [], [], []
    for k in range(insertions):
        lo = nodes + k * events_per_insert
        batch = [Event(*row) for row in zip(stream.x[lo:lo + events_per_insert].tolist(),
                                            stream.y[lo:lo + events_per_insert].tolist(),
                                            stream.t[lo:lo + events_per_insert].tolist(),
                                            stream.p[lo:lo + events_per_insert].tolist())]
        started = time.perf_counter()
        dirty = insert_events(graph, batch, model.depth)
        rows.append(step_incremental(model, graph, dirty, x0))
        incremental.append((time.perf_counter() - started) * 1e6)
        started = time.perf_counter()
        gnn_forward(model, model.layers, graph, x0[:graph.num_nodes])
        full.append((time.perf_counter() - started) * 1e6)
    inc, rec = float(np.median(incremental)), float(np.median(full))
    return OrderedDict([
        ('nodes', int(graph.num_nodes)),
        ('edges', int(graph.num_edges)),
        ('insertions', insertions),
        ('events_per_insert', events_per_insert),
        ('incremental_median_us', inc),
        ('full_median_us', rec),
        ('speedup', rec / inc if inc > 0 else None),
        ('mean_recomputed_rows', float(np.mean(rows))),
    ])


def bench(model, scenario, cfg, threads=1, seed=0):
    '''
    Benchmark a model on a scenario.

    :param dict cfg: the ``bench`` configuration section
    :rtype: dict
    '''
    packets = make_packets(scenario, model)
    events = len(scenario.events)
    started = time.perf_counter()
    timeline = run_sequence(model, packets, mode='batch', clock='wall', scenario=scenario.scenario_id)
    elapsed = time.perf_counter() - started
    latencies = [row['infer_us'] for row in timeline.frames]
    flops = model.flops_per_event()
    report = OrderedDict([
        ('scenario', scenario.scenario_id),
        ('threads', threads),
        ('no_data', events == 0),
        ('events', events),
        ('frames', len(packets)),
        ('events_per_s', events / elapsed if events and elapsed > 0 else 0.0),
        ('frame_latency_us', latency_summary(latencies)),
        ('flops_per_event', flops),
        ('worst_case_load', [OrderedDict([('event_rate', rate), ('flops_per_s', rate * flops)])
                             for rate in cfg['event_rates']]),
    ])
    report['incremental'] = incremental_speedup(model, cfg['synthetic_nodes'], cfg['insertions'],
                                                cfg['events_per_insert'], seed)
    log.info('Incremental speedup %.1fx on %d nodes', report['incremental']['speedup'] or 0,
             report['incremental']['nodes'])
    return report
