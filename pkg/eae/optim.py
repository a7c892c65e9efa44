# -*- coding: utf-8 -*-
#
'''
Adam, AdamW and a plateau learning rate schedule over ``{name: array}`` parameter dicts.

Parameters are updated in place.
'''
import logging

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

__all__ = ('AdamState', 'adam_step', 'adamw_step', 'Adam', 'AdamW', 'ReduceOnPlateau')


class AdamState(object):
    '''
    Moment accumulators and hyperparameters of an Adam optimizer.

    :param dict params: ``{name: array}`` parameters the state tracks
    '''
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr < 0:
            raise InvalidInputError('Learning rate must be non-negative')
        if weight_decay < 0:
            raise InvalidInputError('Weight decay must be non-negative')
        self.lr = float(lr)
        self.betas = tuple(float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step = 0
        self.exp_avg = dict((name, np.zeros_like(p)) for name, p in params.items())
        self.exp_avg_sq = dict((name, np.zeros_like(p)) for name, p in params.items())


def _update(params, grads, state, decoupled):
    for name in grads:
        if name not in params:
            raise InvalidInputError('Gradient for unknown parameter {0}'.format(name))
        if np.shape(grads[name]) != params[name].shape:
            raise InvalidInputError('Gradient shape {0} does not match parameter {1} {2}'.format(
                np.shape(grads[name]), name, params[name].shape))
    state.step += 1
    beta1, beta2 = state.betas
    bias_correction1 = 1 - beta1 ** state.step
    bias_correction2 = 1 - beta2 ** state.step
    step_size = state.lr / bias_correction1
    for name, p in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(p)
        if state.weight_decay:
            if decoupled:
                p *= 1 - state.lr * state.weight_decay
            else:
                grad = grad + state.weight_decay * p
        exp_avg, exp_avg_sq = state.exp_avg[name], state.exp_avg_sq[name]
        exp_avg *= beta1
        exp_avg += (1 - beta1) * grad
        exp_avg_sq *= beta2
        exp_avg_sq += (1 - beta2) * grad * grad
        denom = np.sqrt(exp_avg_sq) / np.sqrt(bias_correction2) + state.eps
        p -= step_size * exp_avg / denom
    return params


def adam_step(params, grads, state):
    '''One bias corrected Adam update (weight decay, if any, is added to the gradient)'''
    return _update(params, grads, state, decoupled=False)


def adamw_step(params, grads, state):
    '''One AdamW update: the weight decay shrinks parameters directly'''
    return _update(params, grads, state, decoupled=True)


class Adam(object):
    '''
    Stateful wrapper binding a parameter dict to its :class:`AdamState`.

    :param dict params: ``{name: array}`` parameters updated in place
    '''
    decoupled = False

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.state = AdamState(params, lr, betas, eps, weight_decay)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def step(self, grads):
        '''Apply ``grads`` (a ``{name: gradient}`` dict, missing names count as zero)'''
        grads = dict((name, g) for name, g in grads.items() if name in self.params)
        return _update(self.params, grads, self.state, self.decoupled)


class AdamW(Adam):
    '''Adam with decoupled weight decay'''
    decoupled = True

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super(AdamW, self).__init__(params, lr, betas, eps, weight_decay)


class ReduceOnPlateau(object):
    '''
    Multiply the learning rate of every optimizer by ``factor`` once the monitored loss has not
    improved (by a relative ``threshold``) for more than ``patience`` epochs.
    '''
    def __init__(self, optimizers, factor=0.5, patience=3, threshold=1e-4):
        if not 0 < factor < 1:
            raise InvalidInputError('Plateau factor must be in (0, 1)')
        self.optimizers = list(optimizers)
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = None
        self.bad_epochs = 0

    def step(self, loss):
        '''
        Record an epoch loss.

        :returns: ``True`` when the learning rates were reduced
        '''
        if self.best is None or loss < self.best * (1 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            for optimizer in self.optimizers:
                optimizer.lr = optimizer.lr * self.factor
            self.bad_epochs = 0
            log.info('Loss plateaued at %.6g, learning rates scaled by %g', self.best, self.factor)
            return True
        return False
