# -*- coding: utf-8 -*-
#
import hashlib
import io
import json
import os
import tempfile

from copy import deepcopy

import numpy as np


__all__ = ('merge', 'not_none', 'fnv1a64', 'atomic_write', 'dump_json', 'sha256_file', 'rng_for')

FNV_OFFSET = 0xcbf29ce484222325
FNV_PRIME = 0x100000001b3
_MASK64 = 0xffffffffffffffff


def merge(first, second, _recurse=0):
    """
    Recursively merges two dictionaries.

    Second dictionary values will take precedence over those from the first one.
    Nested dictionaries are merged too.

    :param dict first: The first dictionary
    :param dict second: The second dictionary
    :return: the resulting merged dictionary
    :rtype: dict
    """
    if not isinstance(second, dict):
        return second
    result = deepcopy(first)
    for key, value in second.items():
        if key in result and isinstance(result[key], dict):
            if _recurse > 10:  # Max 10 dicts deep
                result[key] = None
            else:
                result[key] = merge(result[key], value, _recurse=_recurse + 1)
        else:
            result[key] = deepcopy(value)
    return result


def not_none(data):
    '''
    Remove all keys where value is None

    :param dict data: A dictionary with potentially some values set to None
    :return: The same dictionary without the keys with values to ``None``
    :rtype: dict
    '''
    return dict((k, v) for k, v in data.items() if v is not None)


def fnv1a64(data):
    '''
    64-bit FNV-1a hash of a bytes-like object.

    :param bytes data: the payload
    :rtype: int
    '''
    h = FNV_OFFSET
    for byte in bytes(data):
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def atomic_write(path, data):
    '''
    Write bytes or text to ``path`` through a sibling temporary file and a rename.

    :param str path: destination file
    :param bytes|str data: payload, text is encoded as UTF-8
    '''
    if isinstance(data, str):
        data = data.encode('utf8')
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with io.open(fd, 'wb') as out:
            out.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(data, indent=2):
    '''Deterministic JSON rendering (sorted keys, trailing newline)'''
    return json.dumps(data, indent=indent, sort_keys=True, allow_nan=False) + '\n'


def sha256_file(path):
    '''Hex SHA-256 digest of a file'''
    digest = hashlib.sha256()
    with io.open(path, 'rb') as infile:
        for chunk in iter(lambda: infile.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def rng_for(seed, *salt):
    '''A numpy Generator derived from a seed and optional integer salt'''
    return np.random.default_rng([int(seed)] + [int(s) for s in salt])
