# -*- coding: utf-8 -*-
#
'''
Engine configuration.

A configuration is a single JSON document with one section per module.
User documents are merged over :data:`DEFAULTS`, validated against the ``config`` schema,
and command line flags override the result.
'''
import io
import json
import logging

from copy import deepcopy

from . import schemas
from .errors import ConfigError
from .utils import merge

log = logging.getLogger(__name__)

#: Default mResponse threshold grid
DEFAULT_THRESHOLDS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]

DEFAULTS = {
    'events': {
        'threshold': 0.2,
        'refractory_us': 0,
        'linear': False,
        'noise_rate_hz': 0.0,
    },
    'graph': {
        'radius': 0.03,
        'beta': None,
        'max_neighbors': 16,
    },
    'model': {
        'depth': 4,
        'gnn_channels': 8,
        'lattice': 5,
        'feature_channels': [4, 8],
        'object_dim': 16,
        'hidden_dim': 16,
        'share_gnn': True,
        'pool_grid': None,
        'lut_bins': None,
        'ablate': [],
        'seed': 0,
    },
    'infer': {
        'mode': 'batch',
        'clock': 'analytic',
        'substeps': 1,
        'drop_after': 30,
    },
    'train': {
        'epochs': 12,
        'batch_size': 8,
        'lr_head': 1e-3,
        'lr_gnn': 2e-4,
        'weight_decay': 0.01,
        'class_weights': [0.27, 1.0],
        'plateau_factor': 0.5,
        'plateau_patience': 3,
        'max_steps': None,
        'seed': 0,
        'threads': 1,
    },
    'eval': {
        'thresholds': DEFAULT_THRESHOLDS,
        'mtta_threshold': 0.5,
        'detect_threshold': 0.5,
        'fps': None,
    },
    'bench': {
        'insertions': 100,
        'events_per_insert': 1,
        'synthetic_nodes': 10000,
        'event_rates': [5.6e5, 1e6, 1e7],
    },
}


def defaults():
    '''A fresh copy of the default configuration'''
    return deepcopy(DEFAULTS)


def build(document=None, overrides=None):
    '''
    Merge a configuration document and overrides over the defaults and validate the result.

    :param dict document: a (partial) configuration document
    :param dict overrides: a (partial) document taking precedence, typically from flags
    :rtype: dict
    :raises eae.schemas.SchemaValidationError: when the merged document is invalid
    '''
    config = merge(defaults(), document or {})
    config = merge(config, overrides or {})
    schemas.validate(config, 'config')
    thresholds = config['eval']['thresholds']
    if any(not lo < hi for lo, hi in zip(thresholds, thresholds[1:])):
        raise ConfigError('eval.thresholds must be strictly increasing')
    return config


def load(path=None, overrides=None):
    '''
    Load a configuration file (or only the defaults when ``path`` is ``None``).

    :param str path: JSON document path
    :param dict overrides: values taking precedence over the file
    :rtype: dict
    '''
    document = {}
    if path:
        try:
            with io.open(path, encoding='utf8') as infile:
                document = json.load(infile)
        except ValueError as e:
            raise ConfigError('Unable to parse configuration {0}: {1}'.format(path, e))
        log.debug('Loaded configuration from %s', path)
    return build(document, overrides)
