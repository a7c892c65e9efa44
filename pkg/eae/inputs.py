# -*- coding: utf-8 -*-
#
"""
This module provide some helpers for command line and configuration value parsing.

You can define you own parser using the same pattern:

.. code-block:: python

    def my_type(value):
        if not condition:
            raise ValueError('This is not my type')
        return parse(value)

Every helper raises :class:`ValueError` with a readable message, which ``argparse``
reports as a usage error.
"""
import math

#: Components that can be disabled
ABLATIONS = ('rgb', 'events', 'bbox', 'gru', 'attention')


def _get_integer(value):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError('{0} is not a valid integer'.format(value))


def _get_float(value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValueError('{0} is not a valid number'.format(value))
    if not math.isfinite(value):
        raise ValueError('{0} is not a finite number'.format(value))
    return value


def natural(value, argument='argument'):
    '''Restrict input type to the natural numbers (0, 1, 2, 3...)'''
    value = _get_integer(value)
    if value < 0:
        msg = 'Invalid {arg}: {value}. {arg} must be a non-negative integer'
        raise ValueError(msg.format(arg=argument, value=value))
    return value


def positive(value, argument='argument'):
    '''Restrict input type to the positive integers (1, 2, 3...)'''
    value = _get_integer(value)
    if value < 1:
        msg = 'Invalid {arg}: {value}. {arg} must be a positive integer'
        raise ValueError(msg.format(arg=argument, value=value))
    return value


class int_range(object):
    '''Restrict input to an integer in a range (inclusive)'''
    def __init__(self, low, high, argument='argument'):
        self.low = low
        self.high = high
        self.argument = argument

    def __call__(self, value):
        value = _get_integer(value)
        if value < self.low or value > self.high:
            msg = 'Invalid {arg}: {val}. {arg} must be within the range {lo} - {hi}'
            raise ValueError(msg.format(arg=self.argument, val=value, lo=self.low, hi=self.high))
        return value


def positive_float(value, argument='argument'):
    '''Restrict input to finite reals strictly greater than zero'''
    value = _get_float(value)
    if value <= 0:
        msg = 'Invalid {arg}: {value}. {arg} must be strictly positive'
        raise ValueError(msg.format(arg=argument, value=value))
    return value


def non_negative_float(value, argument='argument'):
    '''Restrict input to finite reals greater or equal to zero'''
    value = _get_float(value)
    if value < 0:
        msg = 'Invalid {arg}: {value}. {arg} must be non-negative'
        raise ValueError(msg.format(arg=argument, value=value))
    return value


def unit_interval(value, argument='argument'):
    '''Restrict input to the open interval (0, 1)'''
    value = _get_float(value)
    if not 0 < value < 1:
        msg = 'Invalid {arg}: {value}. {arg} must lie strictly between 0 and 1'
        raise ValueError(msg.format(arg=argument, value=value))
    return value


def threshold_list(value, argument='thresholds'):
    '''
    Parse a comma separated list of thresholds.

    Thresholds must be strictly increasing and lie in (0, 1).

    Example::

        inputs.threshold_list('0.3,0.5,0.7') -> [0.3, 0.5, 0.7]

    :raises ValueError: if a threshold is invalid or the list is not increasing
    '''
    if isinstance(value, str):
        items = [v for v in (s.strip() for s in value.split(',')) if v]
    else:
        items = list(value)
    if not items:
        raise ValueError('Invalid {0}: at least one threshold is required'.format(argument))
    values = [unit_interval(v, argument) for v in items]
    for lo, hi in zip(values, values[1:]):
        if not lo < hi:
            raise ValueError('Invalid {0}: {1} must be strictly increasing'.format(argument, values))
    return values


def grid3(value, argument='grid'):
    '''
    Parse a voxel grid specification ``nx,ny,nt`` (or ``nxXnyXnt``) of positive integers.

    :rtype: tuple
    '''
    if isinstance(value, str):
        items = value.lower().replace('x', ',').split(',')
    else:
        items = list(value)
    if len(items) != 3:
        raise ValueError('Invalid {0}: {1}. Expected three dimensions'.format(argument, value))
    return tuple(positive(v, argument) for v in items)


def ablations(value, argument='ablate'):
    '''Parse a comma separated list of components to switch off'''
    if isinstance(value, str):
        items = [v.strip().lower() for v in value.split(',') if v.strip()]
    else:
        items = list(value)
    for item in items:
        if item not in ABLATIONS:
            msg = 'Invalid {arg}: {val}. Choose among {choices}'
            raise ValueError(msg.format(arg=argument, val=item, choices=', '.join(ABLATIONS)))
    return tuple(sorted(set(items)))


def boolean(value):
    '''
    Parse the string ``"true"`` or ``"false"`` as a boolean (case insensitive).

    Also accepts ``"1"`` and ``"0"`` as ``True``/``False`` (respectively).

    If the input comes from a JSON document, the type is already a native python boolean,
    and will be passed through without further parsing.

    :raises ValueError: if the boolean value is invalid
    '''
    if isinstance(value, bool):
        return value

    if value is None:
        raise ValueError('boolean type must be non-null')
    elif not value:
        return False
    value = str(value).lower()
    if value in ('true', '1', 'on',):
        return True
    if value in ('false', '0', 'off',):
        return False
    raise ValueError('Invalid literal for boolean(): {0}'.format(value))
