# -*- coding: utf-8 -*-
#
'''
Desk-scale training.

Every scenario is unrolled over all its frames: the forward pass keeps the caches of each frame,
the backward pass walks the frames in reverse carrying the recurrent state gradients per object.
The head (projection, GRUs, attention, classifier) is optimized with Adam and the spline layers
with AdamW; both learning rates are halved when the epoch loss plateaus.
'''
import logging

from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import InvalidInputError
from .optim import Adam, AdamW, ReduceOnPlateau
from .pipeline import ObjectState, forward_frame, frame_backward, make_packets, prepare_frame
from .nn import weighted_cross_entropy, weighted_cross_entropy_backward
from .utils import rng_for

log = logging.getLogger(__name__)

__all__ = ('LossPoint', 'PreparedScenario', 'prepare_scenario', 'scenario_gradients', 'train', 'loss_csv',
           'CSV_HEADER')

CSV_HEADER = 'epoch,step,loss,lr_head,lr_gnn'

#: One point of the loss curve
LossPoint = namedtuple('LossPoint', 'epoch step loss lr_head lr_gnn')


class PreparedScenario(object):
    '''Parameter independent frame inputs of a scenario, reused across epochs'''
    def __init__(self, scenario_id, frames):
        self.scenario_id = scenario_id
        self.frames = frames

    @property
    def terms(self):
        '''Number of labelled object-frames'''
        return sum(len(frame.objects) for frame in self.frames)


def prepare_scenario(model, scenario):
    '''
    Build the graphs, bases, samples and labels of every frame of a scenario.

    :rtype: PreparedScenario
    '''
    frames = []
    object_labels = scenario.labels.object_labels
    for packet in make_packets(scenario, model):
        frame = prepare_frame(model, packet)
        frame.labels = [object_labels.get(obj.object_id, [])[packet.index]
                        if packet.index < len(object_labels.get(obj.object_id, [])) else 0
                        for obj in frame.objects]
        frames.append(frame)
    return PreparedScenario(scenario.scenario_id, frames)


def scenario_gradients(model, prepared, class_weights=(0.27, 1.0), drop_after=30):
    '''
    Mean weighted cross-entropy of a scenario over its object-frames and its gradients.

    :returns: ``(loss, {name: gradient})``; a scenario without objects yields ``(0.0, {})``
    '''
    terms = prepared.terms
    if not terms:
        return 0.0, {}
    state = ObjectState(model.hidden_dim)
    results = []
    for frame in prepared.frames:
        result = forward_frame(model, frame, state, drop_after, exact=True, keep=True)
        state = result.state
        results.append(result)
    loss = 0.0
    grads = {}
    carry = {}
    zeros = np.zeros(model.hidden_dim)
    for frame, result in zip(reversed(prepared.frames), reversed(results)):
        if not result.ids:
            continue
        frame_loss, cache = weighted_cross_entropy(result.logits, frame.labels, class_weights)
        loss += frame_loss / terms
        dlogits = weighted_cross_entropy_backward(cache, 1.0 / terms)
        dhb = np.stack([carry.get(oid, (zeros, zeros))[0] for oid in result.ids])
        dhf = np.stack([carry.get(oid, (zeros, zeros))[1] for oid in result.ids])
        for oid in result.ids:
            carry.pop(oid, None)
        dh_b_prev, dh_f_prev = frame_backward(model, frame, result, dlogits, dhb, dhf, grads)
        for i, oid in enumerate(result.ids):
            # fresh zero states end the chain
            if result.carried[i]:
                carry[oid] = (dh_b_prev[i], dh_f_prev[i])
    return loss, grads


def _sum_gradients(results):
    total = {}
    for _, grads in results:
        for name, grad in grads.items():
            total[name] = total[name] + grad if name in total else grad.copy()
    return total


def train(model, scenarios, hyper, drop_after=30):
    '''
    Train ``model`` in place.

    :param HybridModel model: the model
    :param list scenarios: labelled :class:`~eae.scenario.Scenario` objects
    :param dict hyper: the ``train`` configuration section
    :returns: ``(model, loss curve)``, the curve being a list of :data:`LossPoint`
    :raises InvalidInputError: on an empty dataset
    '''
    if not scenarios:
        raise InvalidInputError('Cannot train on an empty dataset')
    threads = int(hyper.get('threads', 1))
    batch_size = int(hyper['batch_size'])
    max_steps = hyper.get('max_steps')
    class_weights = tuple(hyper['class_weights'])
    head = Adam(model.head_parameters(), lr=hyper['lr_head'])
    gnn = AdamW(model.gnn_parameters(), lr=hyper['lr_gnn'], weight_decay=hyper['weight_decay'])
    plateau = ReduceOnPlateau([head, gnn], factor=hyper['plateau_factor'], patience=hyper['plateau_patience'])
    curve = []
    step = 0
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as executor:
        prepared = list(executor.map(lambda scenario: prepare_scenario(model, scenario), scenarios))
        log.info('Prepared %d scenarios (%d object-frames)', len(prepared), sum(p.terms for p in prepared))
        for epoch in range(int(hyper['epochs'])):
            if max_steps is not None and step >= max_steps:
                break
            order = rng_for(hyper['seed'], epoch).permutation(len(prepared))
            losses = []
            for start in range(0, len(order), batch_size):
                if max_steps is not None and step >= max_steps:
                    break
                batch = [prepared[i] for i in order[start:start + batch_size]]
                results = list(executor.map(
                    lambda p: scenario_gradients(model, p, class_weights, drop_after), batch))
                loss = float(np.mean([r[0] for r in results]))
                grads = dict((name, grad / len(batch)) for name, grad in _sum_gradients(results).items())
                head.step(grads)
                gnn.step(grads)
                curve.append(LossPoint(epoch, step, loss, head.lr, gnn.lr))
                losses.append(loss)
                step += 1
            if losses:
                epoch_loss = float(np.mean(losses))
                log.info('Epoch %d: loss %.6f (lr head %.3g, gnn %.3g)', epoch, epoch_loss, head.lr, gnn.lr)
                plateau.step(epoch_loss)
    model.refresh_luts()
    return model, curve


def loss_csv(curve):
    '''Render a loss curve as CSV'''
    lines = [CSV_HEADER]
    for point in curve:
        lines.append('{0},{1},{2!r},{3!r},{4!r}'.format(point.epoch, point.step, float(point.loss),
                                                         float(point.lr_head), float(point.lr_gnn)))
    return '\n'.join(lines) + '\n'
