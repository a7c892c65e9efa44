# -*- coding: utf-8 -*-
#
'''
Evaluation metrics.

Scores are compared with labels at object granularity (one sample per object per frame) or
frame granularity (the frame score, the max over its objects). Times are microseconds in timelines
and labels, seconds in reported metrics.
'''
import logging

from collections import OrderedDict

import numpy as np

from scipy.stats import rankdata

from .errors import InvalidInputError, UndefinedMetricError
from .oracles import pairwise_auc, pairwise_average_precision

log = logging.getLogger(__name__)

__all__ = ('roc_auc', 'average_precision', 'roc_curve', 'pr_curve', 'auc_frame', 'detect', 'mtta',
           'mresponse', 'response_time', 'object_samples', 'frame_samples', 'evaluate', 'PENALTY')

#: Disclosure of the convention used for scenarios never detected at a threshold
PENALTY = 'undetected scenarios contribute (scenario end - occurrence) + inference time'


def _samples(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if scores.shape != labels.shape:
        raise InvalidInputError('{0} scores for {1} labels'.format(len(scores), len(labels)))
    if not np.isfinite(scores).all():
        raise InvalidInputError('Scores must be finite')
    if len(labels) and not np.isin(labels, (0, 1)).all():
        raise InvalidInputError('Labels must be 0 or 1')
    return scores, labels


def roc_auc(scores, labels):
    '''
    Area under the ROC curve, as the Mann-Whitney statistic with ties counted as half.

    :raises UndefinedMetricError: unless both classes are present
    '''
    scores, labels = _samples(scores, labels)
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if not positives or not negatives:
        raise UndefinedMetricError('ROC-AUC needs both classes ({0} positives, {1} negatives)'.format(
            positives, negatives))
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def _groups(scores, labels):
    '''Distinct thresholds in decreasing order with cumulative positives and counts'''
    order = np.argsort(-scores, kind='mergesort')
    scores, labels = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    return scores[last], np.cumsum(labels)[last], last + 1


def average_precision(scores, labels):
    '''
    Area under the step-interpolated precision-recall curve; equal scores form one group.

    :raises UndefinedMetricError: without positives
    '''
    scores, labels = _samples(scores, labels)
    positives = int(labels.sum())
    if not positives:
        raise UndefinedMetricError('Average precision needs at least one positive')
    _, true_positives, counts = _groups(scores, labels)
    gained = np.diff(np.r_[0, true_positives])
    return float((true_positives / counts * gained).sum() / positives)


def roc_curve(scores, labels):
    '''
    ROC points ``(threshold, fpr, tpr)``, starting from ``(inf, 0, 0)``.

    A point holds the rates of the ``score >= threshold`` decision.
    '''
    scores, labels = _samples(scores, labels)
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if not positives or not negatives:
        raise UndefinedMetricError('ROC curve needs both classes')
    thresholds, true_positives, counts = _groups(scores, labels)
    points = [(float('inf'), 0.0, 0.0)]
    points.extend((float(t), float(c - tp) / negatives, float(tp) / positives)
                  for t, tp, c in zip(thresholds, true_positives, counts))
    return points


def pr_curve(scores, labels):
    '''Precision-recall points ``(threshold, recall, precision)`` in decreasing threshold order'''
    scores, labels = _samples(scores, labels)
    positives = int(labels.sum())
    if not positives:
        raise UndefinedMetricError('PR curve needs at least one positive')
    thresholds, true_positives, counts = _groups(scores, labels)
    return [(float(t), float(tp) / positives, float(tp) / c) for t, tp, c in zip(thresholds, true_positives, counts)]


def detect(scores, threshold):
    '''
    Detections: 1 where the frame score strictly exceeds ``threshold``.

    :param scores: frame scores or a :class:`~eae.pipeline.RiskTimeline`
    :rtype: numpy.ndarray
    '''
    if not 0 < threshold < 1:
        raise InvalidInputError('Detection threshold must be in (0, 1), got {0}'.format(threshold))
    if hasattr(scores, 'frame_scores'):
        scores = scores.frame_scores()
    return (np.asarray(scores, dtype=np.float64) > threshold).astype(np.int64)


def response_time(delay_s, inference_s):
    '''Response time: detection delay plus model inference time'''
    return delay_s + inference_s


def _check_pairing(timelines, labels):
    if set(timelines) != set(labels):
        missing = sorted(set(labels) - set(timelines))
        extra = sorted(set(timelines) - set(labels))
        raise InvalidInputError('Scores and labels cover different scenarios (no scores for: {0}; no labels for: {1})'
                                .format(', '.join(missing) or '-', ', '.join(extra) or '-'))
    for scenario, timeline in timelines.items():
        if len(timeline) != len(labels[scenario].frame_labels):
            raise InvalidInputError('Scenario {0}: {1} scored frames for {2} labelled frames'.format(
                scenario, len(timeline), len(labels[scenario].frame_labels)))


def _times(timeline, fps=None):
    if fps:
        return np.array([row['frame'] for row in timeline.frames], dtype=np.float64) * 1e6 / fps
    return timeline.times().astype(np.float64)


def frame_samples(timelines, labels):
    '''Pooled ``(scores, labels)`` at frame granularity, scenarios in name order'''
    _check_pairing(timelines, labels)
    scores = [timelines[name].frame_scores() for name in sorted(timelines)]
    truth = [np.asarray(labels[name].frame_labels, dtype=np.int64) for name in sorted(timelines)]
    return (np.concatenate(scores) if scores else np.zeros(0)), (np.concatenate(truth) if truth else np.zeros(0))


def object_samples(timelines, labels):
    '''Pooled ``(scores, labels)`` at object granularity: every object present in every frame'''
    _check_pairing(timelines, labels)
    scores, truth = [], []
    for name in sorted(timelines):
        object_labels = labels[name].object_labels
        for row in timelines[name].frames:
            for key, score in row['objects'].items():
                series = object_labels.get(int(key), [])
                scores.append(score)
                truth.append(series[row['frame']] if row['frame'] < len(series) else 0)
    return np.array(scores, dtype=np.float64), np.array(truth, dtype=np.int64)


def auc_frame(timelines, labels):
    '''ROC-AUC of frame scores pooled over scenarios'''
    return roc_auc(*frame_samples(timelines, labels))


def _tta(timeline, label, threshold, fps=None):
    times = _times(timeline, fps)
    scores = timeline.object_scores(label.anomalous_object)
    before = (times <= label.accident_us) & (scores > threshold)
    if not before.any():
        return 0.0
    return max(label.accident_us - times[np.argmax(before)], 0.0) / 1e6


def _positives(labels):
    return [name for name in sorted(labels) if labels[name].accident_us is not None
            and labels[name].anomalous_object is not None]


def mtta(timelines, labels, threshold=0.5, fps=None):
    '''
    Mean time-to-accident in seconds.

    Per positive scenario: accident time minus the first time (up to the accident) the anomalous object's
    score exceeds ``threshold``, 0 when it never does.

    :raises UndefinedMetricError: without positive scenarios
    '''
    _check_pairing(timelines, labels)
    positives = _positives(labels)
    if not positives:
        raise UndefinedMetricError('mTTA needs at least one positive scenario')
    return float(np.mean([_tta(timelines[name], labels[name], threshold, fps) for name in positives]))


def _first_detection(timeline, onset_us, threshold, fps=None):
    times = _times(timeline, fps)
    hits = (times >= onset_us) & (timeline.frame_scores() > threshold)
    return float(times[np.argmax(hits)]) if hits.any() else None


def _inference_s(timeline, inference_s):
    return timeline.mean_infer_us() / 1e6 if inference_s is None else inference_s


def _scenario_response(timeline, label, threshold, inference_s=None, fps=None):
    end = float(_times(timeline, fps)[-1]) if len(timeline) else float(label.onset_us)
    first = _first_detection(timeline, label.onset_us, threshold, fps)
    delay = ((first if first is not None else end) - label.onset_us) / 1e6
    return response_time(max(delay, 0.0), _inference_s(timeline, inference_s)), first is not None


def mresponse(timelines, labels, thresholds, inference_s=None, fps=None):
    '''
    Mean response time in seconds, averaged over thresholds then over positive scenarios.

    For each threshold: the delay between the occurrence (label onset) and the first frame at or after
    it whose score exceeds the threshold, plus the mean per-frame inference time of the scenario
    (or ``inference_s``). Scenarios never detected contribute their remaining duration.

    :raises InvalidInputError: on an empty threshold list or a threshold outside (0, 1)
    :raises UndefinedMetricError: without positive scenarios
    '''
    thresholds = list(thresholds)
    if not thresholds:
        raise InvalidInputError('mResponse needs at least one threshold')
    if any(not 0 < t < 1 for t in thresholds):
        raise InvalidInputError('mResponse thresholds must be in (0, 1)')
    _check_pairing(timelines, labels)
    positives = [name for name in sorted(labels) if labels[name].onset_us is not None]
    if not positives:
        raise UndefinedMetricError('mResponse needs at least one positive scenario')
    per_threshold = [np.mean([_scenario_response(timelines[name], labels[name], t, inference_s, fps)[0]
                              for name in positives]) for t in thresholds]
    return float(np.mean(per_threshold))


def _metric(report, name, func, *args):
    try:
        value = func(*args)
    except UndefinedMetricError as e:
        log.warning('%s is undefined: %s', name, e)
        report['warnings'].append('{0}: {1}'.format(name, e))
        value = None
    report['metrics'][name] = value
    return value


def evaluate(timelines, labels, cfg):
    '''
    Build the evaluation report.

    :param dict timelines: ``{scenario: RiskTimeline}``
    :param dict labels: ``{scenario: LabelSet}``
    :param dict cfg: the ``eval`` configuration section
    :returns: ``(report, curves)`` where curves holds the ROC and PR points of the object level scores
    :raises InvalidInputError: when scores and labels do not pair up
    '''
    _check_pairing(timelines, labels)
    thresholds = list(cfg['thresholds'])
    fps = cfg.get('fps')
    report = OrderedDict([
        ('metrics', OrderedDict()),
        ('config', OrderedDict([('thresholds', thresholds), ('mtta_threshold', cfg['mtta_threshold']),
                                ('detect_threshold', cfg['detect_threshold']), ('fps', fps)])),
        ('penalty', PENALTY),
        ('warnings', []),
        ('oracle_checks', OrderedDict()),
        ('scenarios', []),
    ])
    scores, truth = object_samples(timelines, labels)
    frame_scores, frame_truth = frame_samples(timelines, labels)
    auc = _metric(report, 'auc', roc_auc, scores, truth)
    ap = _metric(report, 'ap', average_precision, scores, truth)
    _metric(report, 'auc_frame', roc_auc, frame_scores, frame_truth)
    _metric(report, 'ap_frame', average_precision, frame_scores, frame_truth)
    _metric(report, 'mtta_s', mtta, timelines, labels, cfg['mtta_threshold'], fps)
    _metric(report, 'mresponse_s', mresponse, timelines, labels, thresholds, None, fps)
    report['oracle_checks']['auc'] = None if auc is None else bool(abs(pairwise_auc(scores, truth) - auc) <= 1e-12)
    report['oracle_checks']['ap'] = None if ap is None else \
        bool(abs(pairwise_average_precision(scores, truth) - ap) <= 1e-12)

    detected = 0
    positives = _positives(labels)
    theta = cfg['detect_threshold']
    for name in sorted(timelines):
        timeline, label = timelines[name], labels[name]
        entry = OrderedDict([('scenario', name), ('positive', label.onset_us is not None),
                             ('onset_us', label.onset_us), ('accident_us', label.accident_us),
                             ('frames', len(timeline)), ('max_frame_score', float(timeline.frame_scores().max())
                                                         if len(timeline) else 0.0),
                             ('mean_infer_us', timeline.mean_infer_us())])
        if name in positives:
            tta = _tta(timeline, label, theta, fps)
            entry['tta_s'] = tta
            entry['detected_before_accident'] = tta > 0
            detected += tta > 0
            entry['response_s'] = OrderedDict(
                ('{0:g}'.format(t), _scenario_response(timeline, label, t, None, fps)[0]) for t in thresholds)
        report['scenarios'].append(entry)
    report['metrics']['detection_rate'] = float(detected) / len(positives) if positives else None
    report['counts'] = OrderedDict([('scenarios', len(timelines)), ('positive_scenarios', len(positives)),
                                    ('object_samples', int(len(scores))), ('frame_samples', int(len(frame_scores)))])
    curves = OrderedDict()
    if auc is not None:
        curves['roc'] = roc_curve(scores, truth)
    if ap is not None:
        curves['pr'] = pr_curve(scores, truth)
    return report, curves
