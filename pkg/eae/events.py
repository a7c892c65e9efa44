# -*- coding: utf-8 -*-
#
'''
Event and frame data formats.

An :class:`EventStream` is an immutable, time ordered sequence of polarity events backed by a
numpy structured array. Streams are produced from grayscale frames by :func:`frames_to_events`,
stored in the little-endian ``EVT1`` container and merged with synthetic noise.
'''
import io
import json
import logging
import os
import struct

from collections import namedtuple

import numpy as np

from .errors import (InvalidInputError, ParseError, MagicError, TruncatedRecordError,
                     BoundsError, OrderError)
from .utils import atomic_write, rng_for

log = logging.getLogger(__name__)

__all__ = ('Event', 'EventStream', 'FrameSequence', 'frames_to_events', 'inject_noise',
           'read_events', 'write_events', 'read_frames', 'write_frames', 'EVENT_DTYPE')

MAGIC = b'EVT1'
HEADER = struct.Struct('<4sHHI')

#: On-disk record layout: u16 x, u16 y, i8 p, 1 pad byte, u64 t
RECORD_DTYPE = np.dtype({
    'names': ['x', 'y', 'p', 'pad', 't'],
    'formats': ['<u2', '<u2', 'i1', 'u1', '<u8'],
    'offsets': [0, 2, 4, 5, 6],
    'itemsize': 14,
})

#: In-memory layout
EVENT_DTYPE = np.dtype([('x', '<u2'), ('y', '<u2'), ('t', '<u8'), ('p', 'i1')])

Event = namedtuple('Event', 'x y t p')


class EventStream(object):
    '''
    An ordered sequence of events from a ``width`` x ``height`` sensor.

    :param int width: sensor width in pixels
    :param int height: sensor height in pixels
    :param array: a structured array with ``x``, ``y``, ``t`` and ``p`` fields
    :raises InvalidInputError: when a coordinate is out of bounds, a polarity is not
        ``-1``/``+1`` or timestamps decrease
    '''
    def __init__(self, width, height, array=None):
        if width < 1 or height < 1 or width > 0xffff or height > 0xffff:
            raise InvalidInputError('Invalid sensor size {0}x{1}'.format(width, height))
        self.width = int(width)
        self.height = int(height)
        if array is None:
            array = np.zeros(0, dtype=EVENT_DTYPE)
        data = np.empty(len(array), dtype=EVENT_DTYPE)
        for name in EVENT_DTYPE.names:
            data[name] = array[name]
        self._check(data)
        data.flags.writeable = False
        self._data = data

    def _check(self, data):
        if not len(data):
            return
        if (data['x'] >= self.width).any() or (data['y'] >= self.height).any():
            raise InvalidInputError('Event coordinate outside a {0}x{1} sensor'.format(self.width, self.height))
        if not np.isin(data['p'], (-1, 1)).all():
            raise InvalidInputError('Event polarity must be -1 or +1')
        if (np.diff(data['t'].astype(np.int64)) < 0).any():
            raise InvalidInputError('Event timestamps must be non-decreasing')

    @classmethod
    def from_events(cls, width, height, events):
        '''Build a stream from an iterable of :class:`Event` (or ``(x, y, t, p)`` tuples)'''
        events = list(events)
        data = np.zeros(len(events), dtype=EVENT_DTYPE)
        for i, (x, y, t, p) in enumerate(events):
            data[i] = (x, y, t, p)
        return cls(width, height, data)

    @classmethod
    def from_arrays(cls, width, height, x, y, t, p, sort=True):
        '''
        Build a stream from column arrays.

        :param bool sort: sort by ``(t, y, x)`` first (stable)
        '''
        data = np.zeros(len(t), dtype=EVENT_DTYPE)
        data['x'], data['y'], data['t'], data['p'] = x, y, t, p
        if sort and len(data):
            data = data[np.lexsort((data['x'], data['y'], data['t']))]
        return cls(width, height, data)

    @property
    def data(self):
        '''The read-only structured array'''
        return self._data

    @property
    def x(self):
        return self._data['x']

    @property
    def y(self):
        return self._data['y']

    @property
    def t(self):
        return self._data['t']

    @property
    def p(self):
        return self._data['p']

    def __len__(self):
        return len(self._data)

    def __iter__(self):
        for row in self._data:
            yield Event(int(row['x']), int(row['y']), int(row['t']), int(row['p']))

    def __getitem__(self, index):
        if isinstance(index, slice):
            return EventStream(self.width, self.height, self._data[index])
        row = self._data[index]
        return Event(int(row['x']), int(row['y']), int(row['t']), int(row['p']))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) \
            and len(self) == len(other) and bool((self._data == other._data).all())

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return 'EventStream({0}x{1}, {2} events)'.format(self.width, self.height, len(self))

    def window(self, t0, t1):
        '''
        The events with ``t0 < t <= t1``.

        ``t0`` may be ``None`` to include everything up to ``t1``.
        '''
        t = self._data['t']
        lo = 0 if t0 is None else int(np.searchsorted(t, t0, side='right'))
        hi = int(np.searchsorted(t, t1, side='right'))
        return EventStream(self.width, self.height, self._data[lo:hi])

    def is_sorted(self):
        '''Whether events follow the global ``(t, y, x)`` order'''
        if len(self) < 2:
            return True
        return _lex_non_decreasing((self.t.astype(np.int64), self.y.astype(np.int64), self.x.astype(np.int64)))

    def merge(self, other):
        '''A new stream holding the events of both streams in ``(t, y, x)`` order'''
        if (self.width, self.height) != (other.width, other.height):
            raise InvalidInputError('Cannot merge streams from different sensors')
        data = np.concatenate([self._data, other.data])
        order = np.lexsort((data['x'], data['y'], data['t']))
        return EventStream(self.width, self.height, data[order])


def _lex_non_decreasing(keys):
    t, y, x = keys
    dt, dy, dx = np.diff(t), np.diff(y), np.diff(x)
    ok = (dt > 0) | ((dt == 0) & ((dy > 0) | ((dy == 0) & (dx >= 0))))
    return bool(ok.all())


class FrameSequence(object):
    '''
    Timestamped grayscale frames.

    :param int width: frame width in pixels
    :param int height: frame height in pixels
    :param list frames: ``(timestamp_us, intensity grid)`` pairs, intensities in [0, 255]
    :param float fps: nominal frame rate
    :raises InvalidInputError: when dimensions differ, timestamps do not strictly increase
        or the timestamp deltas disagree with ``fps`` by more than 1%
    '''
    def __init__(self, width, height, frames, fps):
        self.width = int(width)
        self.height = int(height)
        self.fps = float(fps)
        if self.fps <= 0:
            raise InvalidInputError('fps must be strictly positive')
        self.frames = []
        for t, grid in frames:
            grid = np.asarray(grid)
            if grid.shape != (self.height, self.width):
                raise InvalidInputError('Frame at {0}us has shape {1}, expected {2}'.format(
                    t, grid.shape, (self.height, self.width)))
            if grid.size and (grid.min() < 0 or grid.max() > 255):
                raise InvalidInputError('Frame at {0}us has intensities outside [0, 255]'.format(t))
            grid = grid.copy()
            grid.flags.writeable = False
            self.frames.append((int(t), grid))
        times = np.array([t for t, _ in self.frames], dtype=np.int64)
        if len(times) > 1:
            deltas = np.diff(times)
            if (deltas <= 0).any():
                raise InvalidInputError('Frame timestamps must be strictly increasing')
            nominal = 1e6 / self.fps
            if (np.abs(deltas - nominal) > 0.01 * nominal).any():
                raise InvalidInputError('Frame timestamps disagree with {0} fps'.format(self.fps))

    def __len__(self):
        return len(self.frames)

    @property
    def timestamps(self):
        return [t for t, _ in self.frames]

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        if (self.width, self.height, self.fps, len(self)) != (other.width, other.height, other.fps, len(other)):
            return False
        return all(ta == tb and np.array_equal(a, b) for (ta, a), (tb, b) in zip(self.frames, other.frames))

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result


def _intensity(grid, linear):
    grid = np.asarray(grid, dtype=np.float64)
    return grid if linear else np.log1p(grid)


def frames_to_events(frames, threshold, refractory_us=0, linear=False):
    '''
    Convert a frame sequence into an event stream.

    Every pixel keeps a reference level. Between two frames, when the level moved strictly more
    than ``threshold`` away from the reference, one event is emitted per full threshold crossing,
    the reference advances by the crossed amount and crossing times are interpolated linearly
    between the frame timestamps.

    :param FrameSequence frames: at least two frames
    :param float threshold: contrast threshold C, in log(1 + L) units (or raw intensity with ``linear``)
    :param int refractory_us: minimum spacing between two events of a pixel (0 disables)
    :param bool linear: apply the threshold to raw intensity
    :rtype: EventStream
    :raises InvalidInputError: when the sequence is empty or too short or the threshold is not positive
    '''
    if frames is None or len(frames) == 0:
        raise InvalidInputError('Empty frame sequence')
    if len(frames) < 2:
        raise InvalidInputError('At least two frames are required to produce events')
    if not threshold > 0:
        raise InvalidInputError('Contrast threshold must be strictly positive')
    if refractory_us < 0:
        raise InvalidInputError('Refractory period must be non-negative')

    width = frames.width
    t_prev, first = frames.frames[0]
    reference = _intensity(first, linear).ravel().copy()
    previous = reference.copy()
    xs, ys, ts, ps = [], [], [], []

    for t_now, grid in frames.frames[1:]:
        current = _intensity(grid, linear).ravel()
        delta = current - reference
        magnitude = np.abs(delta)
        fired = np.flatnonzero(magnitude > threshold)
        if fired.size:
            counts = np.floor(magnitude[fired] / threshold).astype(np.int64)
            signs = np.sign(delta[fired])
            pixels = np.repeat(fired, counts)
            # k-th crossing of each fired pixel, k = 1..count
            starts = np.cumsum(counts) - counts
            ks = np.arange(counts.sum()) - np.repeat(starts, counts) + 1
            sign = np.repeat(signs, counts)
            levels = reference[pixels] + sign * ks * threshold
            span = current[pixels] - previous[pixels]
            with np.errstate(divide='ignore', invalid='ignore'):
                frac = np.where(span != 0, (levels - previous[pixels]) / span, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            times = t_prev + np.rint(frac * (t_now - t_prev)).astype(np.int64)
            xs.append(pixels % width)
            ys.append(pixels // width)
            ts.append(times)
            ps.append(sign.astype(np.int8))
            reference[fired] += signs * counts * threshold
        previous = current
        t_prev = t_now

    if xs:
        x, y, t, p = (np.concatenate(c) for c in (xs, ys, ts, ps))
    else:
        x = y = t = np.zeros(0, dtype=np.int64)
        p = np.zeros(0, dtype=np.int8)
    stream = EventStream.from_arrays(width, frames.height, x, y, t, p)
    if refractory_us > 0 and len(stream):
        stream = _apply_refractory(stream, refractory_us)
    log.debug('Converted %d frames into %d events (C=%g, linear=%s)', len(frames), len(stream), threshold, linear)
    return stream


def _apply_refractory(stream, refractory_us):
    last = {}
    keep = np.zeros(len(stream), dtype=bool)
    for i, (x, y, t) in enumerate(zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist())):
        previous = last.get((x, y))
        if previous is None or t - previous >= refractory_us:
            keep[i] = True
            last[(x, y)] = t
    return EventStream(stream.width, stream.height, stream.data[keep])


def inject_noise(stream, rate_hz, t_start, t_end, seed=0):
    '''
    Merge Poisson-timed, uniformly placed, random polarity noise events into a stream.

    :param EventStream stream: the clean stream
    :param float rate_hz: expected noise events per second over the whole sensor
    :param int t_start: noise window start (us)
    :param int t_end: noise window end (us)
    :param int seed: random seed
    :rtype: EventStream
    '''
    if rate_hz < 0:
        raise InvalidInputError('Noise rate must be non-negative')
    if rate_hz == 0 or t_end <= t_start:
        return stream
    rng = rng_for(seed, 0x4e015e)
    count = rng.poisson(rate_hz * (t_end - t_start) / 1e6)
    t = np.sort(rng.integers(t_start, t_end + 1, size=count))
    x = rng.integers(0, stream.width, size=count)
    y = rng.integers(0, stream.height, size=count)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=count)
    noise = EventStream.from_arrays(stream.width, stream.height, x, y, t, p)
    log.debug('Injected %d noise events', count)
    return stream.merge(noise)


def encode_events(stream):
    '''Serialize a stream to ``EVT1`` bytes'''
    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    for name in ('x', 'y', 'p', 't'):
        records[name] = stream.data[name]
    return HEADER.pack(MAGIC, stream.width, stream.height, len(stream)) + records.tobytes()


def decode_events(payload, path=None):
    '''
    Parse ``EVT1`` bytes.

    :raises MagicError: on a header magic mismatch
    :raises TruncatedRecordError: when the payload ends inside the header or a record
    :raises BoundsError: on an out-of-bounds coordinate
    :raises OrderError: on a decreasing timestamp
    :raises ParseError: on an invalid polarity or trailing bytes
    '''
    if len(payload) < 4 or payload[:4] != MAGIC:
        raise MagicError('Invalid magic {0!r}'.format(bytes(payload[:4])), offset=0, path=path)
    if len(payload) < HEADER.size:
        raise TruncatedRecordError('Truncated header', offset=len(payload), path=path)
    _, width, height, count = HEADER.unpack_from(payload)
    if width < 1 or height < 1:
        raise ParseError('Invalid sensor size {0}x{1}'.format(width, height), offset=4, path=path)
    body = len(payload) - HEADER.size
    complete = body // RECORD_DTYPE.itemsize
    if complete < count:
        offset = HEADER.size + complete * RECORD_DTYPE.itemsize
        raise TruncatedRecordError('Expected {0} records, found {1}'.format(count, complete),
                                   offset=offset, path=path)
    if body > count * RECORD_DTYPE.itemsize:
        offset = HEADER.size + count * RECORD_DTYPE.itemsize
        raise ParseError('Trailing bytes after the last record', offset=offset, path=path)
    records = np.frombuffer(payload, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)

    def offset_of(index):
        return HEADER.size + int(index) * RECORD_DTYPE.itemsize

    bad = np.flatnonzero((records['x'] >= width) | (records['y'] >= height))
    if bad.size:
        i = bad[0]
        raise BoundsError('Event ({0}, {1}) outside a {2}x{3} sensor'.format(
            records['x'][i], records['y'][i], width, height), offset=offset_of(i), path=path)
    bad = np.flatnonzero(~np.isin(records['p'], (-1, 1)))
    if bad.size:
        raise ParseError('Invalid polarity {0}'.format(records['p'][bad[0]]),
                         offset=offset_of(bad[0]) + 4, path=path)
    bad = np.flatnonzero(np.diff(records['t'].astype(np.int64)) < 0)
    if bad.size:
        i = bad[0] + 1
        raise OrderError('Timestamp {0} goes backwards'.format(records['t'][i]),
                         offset=offset_of(i) + 6, path=path)
    return EventStream(width, height, records)


def write_events(stream, path):
    '''Write a stream to an ``EVT1`` file'''
    atomic_write(path, encode_events(stream))


def read_events(path):
    '''Read an ``EVT1`` file'''
    with io.open(path, 'rb') as infile:
        payload = infile.read()
    return decode_events(payload, path=path)


def encode_pgm(grid):
    '''Binary PGM (P5) rendering of an 8-bit grid'''
    grid = np.asarray(grid)
    height, width = grid.shape
    header = 'P5\n{0} {1}\n255\n'.format(width, height).encode('ascii')
    return header + np.clip(np.rint(grid), 0, 255).astype(np.uint8).tobytes()


def decode_pgm(payload, path=None):
    '''Parse a binary PGM (P5) image with a maxval of at most 255'''
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(payload) and payload[pos:pos + 1].isspace():
            pos += 1
        if payload[pos:pos + 1] == b'#':
            while pos < len(payload) and payload[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(payload) and not payload[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedRecordError('Truncated PGM header', offset=pos, path=path)
        tokens.append(payload[start:pos])
    pos += 1
    if tokens[0] != b'P5':
        raise MagicError('Not a binary PGM file', offset=0, path=path)
    try:
        width, height, maxval = (int(v) for v in tokens[1:])
    except ValueError:
        raise ParseError('Invalid PGM header', offset=0, path=path)
    if maxval > 255:
        raise ParseError('Only 8-bit PGM files are supported', offset=0, path=path)
    if len(payload) - pos < width * height:
        raise TruncatedRecordError('Truncated PGM raster', offset=len(payload), path=path)
    raster = np.frombuffer(payload, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).copy()


def write_frames(frames, directory):
    '''
    Write frames as PGM files under ``directory/frames`` plus a ``frames.jsonl`` manifest.

    :returns: the manifest path
    '''
    os.makedirs(os.path.join(directory, 'frames'), exist_ok=True)
    lines = []
    for index, (t, grid) in enumerate(frames.frames):
        relpath = 'frames/frame_{0:05d}.pgm'.format(index)
        atomic_write(os.path.join(directory, relpath), encode_pgm(grid))
        lines.append(json.dumps({'path': relpath, 't_us': int(t)}, sort_keys=True))
    manifest = os.path.join(directory, 'frames.jsonl')
    atomic_write(manifest, '\n'.join(lines) + '\n')
    return manifest


def read_frames(directory, fps=None):
    '''
    Read frames written by :func:`write_frames`.

    :param float fps: nominal frame rate; inferred from the median timestamp delta when omitted
    :rtype: FrameSequence
    '''
    manifest = os.path.join(directory, 'frames.jsonl')
    entries = []
    with io.open(manifest, encoding='utf8') as infile:
        for lineno, line in enumerate(infile, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                entries.append((int(entry['t_us']), entry['path']))
            except (ValueError, KeyError, TypeError):
                raise ParseError('Invalid frame manifest line {0}'.format(lineno), path=manifest)
    if not entries:
        raise InvalidInputError('Empty frame sequence in {0}'.format(directory))
    frames = []
    for t, relpath in entries:
        path = os.path.join(directory, relpath)
        with io.open(path, 'rb') as infile:
            frames.append((t, decode_pgm(infile.read(), path=path)))
    height, width = frames[0][1].shape
    if fps is None:
        times = np.array([t for t, _ in frames], dtype=np.float64)
        fps = 1e6 / float(np.median(np.diff(times))) if len(times) > 1 else 1.0
    return FrameSequence(width, height, frames, fps)
