# -*- coding: utf-8 -*-
#
'''
The ``HNW1`` tensor container.

Layout (little-endian)::

    "HNW1" | u32 manifest length | JSON manifest | data section | u64 FNV-1a checksum of the data section

The manifest maps every tensor name to its ``shape``, ``dtype``, byte ``offset`` and ``nbytes``
within the data section, and carries a free ``metadata`` object. Tensors are stored in name order,
so equal contents always produce equal bytes.
'''
import io
import json
import logging
import struct

import numpy as np

from .errors import ChecksumError, ManifestError, MagicError, TruncatedRecordError
from .utils import atomic_write, fnv1a64

log = logging.getLogger(__name__)

__all__ = ('encode_tensors', 'decode_tensors', 'save_tensors', 'load_tensors')

MAGIC = b'HNW1'
LENGTH = struct.Struct('<I')
CHECKSUM = struct.Struct('<Q')

DTYPES = {
    'f': '<f8',
    'i': '<i8',
    'u': '<i8',
    'b': '|u1',
}


def _normalize(array):
    array = np.asarray(array)
    if array.dtype.kind not in DTYPES:
        raise ManifestError('Unsupported tensor dtype {0}'.format(array.dtype))
    return np.ascontiguousarray(array, dtype=np.dtype(DTYPES[array.dtype.kind]))


def encode_tensors(tensors, metadata=None):
    '''
    Serialize ``{name: array}`` into container bytes.

    :param dict tensors: named arrays (floats stored as float64, integers as int64)
    :param dict metadata: JSON compatible metadata
    :rtype: bytes
    '''
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        array = _normalize(tensors[name])
        raw = array.tobytes()
        entries[name] = {'shape': list(array.shape), 'dtype': array.dtype.str, 'offset': offset, 'nbytes': len(raw)}
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({'tensors': entries, 'metadata': metadata or {}},
                          sort_keys=True, separators=(',', ':'), allow_nan=False).encode('utf8')
    data = b''.join(chunks)
    return b''.join([MAGIC, LENGTH.pack(len(manifest)), manifest, data, CHECKSUM.pack(fnv1a64(data))])


def decode_tensors(payload, path=None, expected=None):
    '''
    Parse container bytes.

    :param bytes payload: the container
    :param str path: the source file, for error messages
    :param dict expected: optional ``{name: shape}`` the content must match exactly
    :returns: ``(tensors, metadata)``
    :raises MagicError: on a wrong magic
    :raises TruncatedRecordError: when the payload is shorter than announced
    :raises ManifestError: on a malformed manifest or one disagreeing with ``expected``
    :raises ChecksumError: when the data section does not match its checksum
    '''
    if payload[:4] != MAGIC:
        raise MagicError('Bad magic {0!r}, expected {1!r}'.format(bytes(payload[:4]), MAGIC), offset=0, path=path)
    if len(payload) < 8:
        raise TruncatedRecordError('Truncated header', offset=len(payload), path=path)
    length = LENGTH.unpack_from(payload, 4)[0]
    start = 8 + length
    if len(payload) < start + CHECKSUM.size:
        raise TruncatedRecordError('Container ends before its checksum', offset=len(payload), path=path)
    try:
        manifest = json.loads(bytes(payload[8:start]).decode('utf8'))
        entries = manifest['tensors']
        metadata = manifest.get('metadata', {})
    except (ValueError, KeyError, TypeError) as e:
        raise ManifestError('Malformed manifest{0}: {1}'.format(' in ' + path if path else '', e))
    data = bytes(payload[start:len(payload) - CHECKSUM.size])
    checksum = CHECKSUM.unpack_from(payload, len(payload) - CHECKSUM.size)[0]
    if fnv1a64(data) != checksum:
        raise ChecksumError('Checksum mismatch{0}'.format(' in ' + path if path else ''))
    tensors = {}
    for name, entry in entries.items():
        try:
            dtype = np.dtype(str(entry['dtype']))
            shape = tuple(int(d) for d in entry['shape'])
            offset, nbytes = int(entry['offset']), int(entry['nbytes'])
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError('Malformed entry for {0}: {1}'.format(name, e))
        if offset < 0 or offset + nbytes > len(data) or nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise ManifestError('Entry {0} does not fit the data section'.format(name))
        tensors[name] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset) \
            .reshape(shape).astype(dtype.newbyteorder('='))
    if expected is not None:
        check_shapes(tensors, expected)
    return tensors, metadata


def check_shapes(tensors, expected):
    '''
    :raises ManifestError: unless ``tensors`` holds exactly the ``expected`` names and shapes
    '''
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise ManifestError('Tensor names mismatch (missing: {0}, unexpected: {1})'.format(
            ', '.join(missing) or '-', ', '.join(extra) or '-'))
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise ManifestError('Tensor {0} has shape {1}, expected {2}'.format(
                name, tuple(tensors[name].shape), tuple(shape)))


def save_tensors(path, tensors, metadata=None):
    '''Write a container atomically'''
    payload = encode_tensors(tensors, metadata)
    atomic_write(path, payload)
    log.debug('Saved %d tensors (%d bytes) to %s', len(tensors), len(payload), path)
    return payload


def load_tensors(path, expected=None):
    '''Read a container written by :func:`save_tensors`'''
    with io.open(path, 'rb') as infile:
        return decode_tensors(infile.read(), path=path, expected=expected)
