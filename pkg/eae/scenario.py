# -*- coding: utf-8 -*-
#
'''
Synthetic driving scenarios.

A :class:`ScenarioSpec` describes rectangles moving over a uniform background along waypoint
trajectories, with at most one anomalous object. :func:`synth_scenario` renders it into frames,
exact bounding box tracks and labels; presets model lane merges, rush-outs and oncoming vehicles.
'''
import csv
import io
import json
import logging
import os

import numpy as np

from . import schemas
from .errors import InvalidInputError, ParseError
from .events import FrameSequence, frames_to_events, inject_noise, read_events, read_frames, \
    write_events, write_frames
from .utils import atomic_write, dump_json, rng_for

log = logging.getLogger(__name__)

__all__ = ('ObjectTrack', 'Anomaly', 'ScenarioSpec', 'BBoxTracks', 'LabelSet', 'Scenario',
           'synth_scenario', 'preset', 'PRESETS', 'write_scenario', 'read_scenario', 'find_scenarios')

PRESETS = ('lane-merge', 'rush-out', 'oncoming', 'normal')
TRACKS_HEADER = ['frame_idx', 'object_id', 'x_min', 'y_min', 'x_max', 'y_max']


class ObjectTrack(object):
    '''
    A rectangle following a piecewise linear trajectory.

    :param int object_id: the object identifier
    :param int intensity: rendered intensity in [0, 255]
    :param list waypoints: ``{'t_us', 'x', 'y', 'w', 'h'}`` dicts (center and size in pixels),
        strictly increasing in time; the object is visible between the first and last waypoint
    '''
    def __init__(self, object_id, intensity, waypoints):
        self.object_id = int(object_id)
        self.intensity = int(intensity)
        self.waypoints = sorted((dict(w) for w in waypoints), key=lambda w: w['t_us'])
        if not self.waypoints:
            raise InvalidInputError('Object {0} has no waypoints'.format(object_id))
        if not 0 <= self.intensity <= 255:
            raise InvalidInputError('Object {0} intensity outside [0, 255]'.format(object_id))
        times = [w['t_us'] for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidInputError('Object {0} waypoint times must strictly increase'.format(object_id))
        if any(w['w'] <= 0 or w['h'] <= 0 for w in self.waypoints):
            raise InvalidInputError('Object {0} has a non-positive size'.format(object_id))

    def state_at(self, t):
        '''Interpolated ``(cx, cy, w, h)`` at ``t``, or ``None`` outside the trajectory'''
        first, last = self.waypoints[0], self.waypoints[-1]
        if t < first['t_us'] or t > last['t_us']:
            return None
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a['t_us'] <= t <= b['t_us']:
                r = (t - a['t_us']) / float(b['t_us'] - a['t_us'])
                return tuple(a[k] + r * (b[k] - a[k]) for k in ('x', 'y', 'w', 'h'))
        return tuple(first[k] for k in ('x', 'y', 'w', 'h'))

    def to_dict(self):
        return {'id': self.object_id, 'intensity': self.intensity, 'waypoints': self.waypoints}


class Anomaly(object):
    '''The anomalous object designation'''
    def __init__(self, object_id, onset_us, collision_us):
        self.object_id = int(object_id)
        self.onset_us = int(onset_us)
        self.collision_us = int(collision_us)

    def to_dict(self):
        return {'object_id': self.object_id, 'onset_us': self.onset_us, 'collision_us': self.collision_us}


class ScenarioSpec(object):
    '''
    A synthetic scenario description.

    :param int width: scene width in pixels
    :param int height: scene height in pixels
    :param int background: background intensity
    :param list objects: :class:`ObjectTrack` instances
    :param Anomaly anomaly: the anomaly designation or ``None``
    :param int duration_us: scenario duration
    :param float fps: frame rate
    :param int seed: the seed the spec was generated from
    :param str name: an optional label (the preset name)
    '''
    def __init__(self, width, height, background, objects, anomaly, duration_us, fps, seed=0, name=None):
        self.width = int(width)
        self.height = int(height)
        self.background = int(background)
        self.objects = list(objects)
        self.anomaly = anomaly
        self.duration_us = int(duration_us)
        self.fps = float(fps)
        self.seed = int(seed)
        self.name = name
        self.validate()

    def validate(self):
        if self.duration_us <= 0:
            raise InvalidInputError('Scenario duration must be strictly positive')
        if self.width < 1 or self.height < 1:
            raise InvalidInputError('Scenario size must be positive')
        if not 0 <= self.background <= 255:
            raise InvalidInputError('Background intensity outside [0, 255]')
        if self.fps <= 0:
            raise InvalidInputError('fps must be strictly positive')
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InvalidInputError('Object ids must be unique')
        if self.anomaly is not None:
            if self.anomaly.object_id not in ids:
                raise InvalidInputError('Anomalous object {0} is not in the scene'.format(self.anomaly.object_id))
            if not 0 <= self.anomaly.onset_us < self.anomaly.collision_us <= self.duration_us:
                raise InvalidInputError('Anomaly requires onset < collision <= duration')

    @property
    def frame_times(self):
        count = int(self.duration_us * self.fps // 1e6) + 1
        return [int(round(k * 1e6 / self.fps)) for k in range(count)]

    def to_dict(self):
        data = {
            'width': self.width,
            'height': self.height,
            'background': self.background,
            'objects': [o.to_dict() for o in self.objects],
            'anomaly': self.anomaly.to_dict() if self.anomaly else None,
            'duration_us': self.duration_us,
            'fps': self.fps,
            'seed': self.seed,
        }
        if self.name:
            data['name'] = self.name
        return data

    @classmethod
    def from_dict(cls, data):
        schemas.validate(data, 'scenario')
        objects = [ObjectTrack(o['id'], o['intensity'], o['waypoints']) for o in data['objects']]
        anomaly = data.get('anomaly')
        if anomaly:
            anomaly = Anomaly(anomaly['object_id'], anomaly['onset_us'], anomaly['collision_us'])
        return cls(data['width'], data['height'], data['background'], objects, anomaly or None,
                   data['duration_us'], data['fps'], data.get('seed', 0), data.get('name'))


class BBoxTracks(object):
    '''
    Per-frame bounding boxes in pixels, half-open on the max side.

    ``boxes[frame_idx]`` is a list of ``(object_id, x_min, y_min, x_max, y_max)``.
    '''
    def __init__(self, boxes=None):
        self.boxes = {}
        for frame_idx, rows in (boxes or {}).items():
            self.boxes[int(frame_idx)] = sorted(tuple(int(v) for v in row) for row in rows)

    def __len__(self):
        return sum(len(rows) for rows in self.boxes.values())

    def frame(self, frame_idx):
        return self.boxes.get(frame_idx, [])

    def __eq__(self, other):
        if not isinstance(other, BBoxTracks):
            return NotImplemented
        return {k: v for k, v in self.boxes.items() if v} == {k: v for k, v in other.boxes.items() if v}

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def to_csv(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(TRACKS_HEADER)
        for frame_idx in sorted(self.boxes):
            for object_id, x0, y0, x1, y1 in self.boxes[frame_idx]:
                writer.writerow([frame_idx, object_id, x0, y0, x1, y1])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text, path=None):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != TRACKS_HEADER:
            raise ParseError('Unexpected tracks header {0}'.format(header), path=path)
        boxes = {}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                frame_idx, object_id, x0, y0, x1, y1 = (int(v) for v in row)
            except ValueError:
                raise ParseError('Invalid tracks row at line {0}'.format(lineno), path=path)
            if x1 <= x0 or y1 <= y0:
                raise ParseError('Empty box at line {0}'.format(lineno), path=path)
            boxes.setdefault(frame_idx, []).append((object_id, x0, y0, x1, y1))
        return cls(boxes)


class LabelSet(object):
    '''
    Ground truth of a scenario.

    :param list frame_labels: per frame 0/1 anomaly labels
    :param dict object_labels: ``object_id -> per frame 0/1 risky labels``
    :param int onset_us: time of the first positive frame (``None`` without anomaly)
    :param int accident_us: collision time (``None`` without anomaly)
    :param int anomalous_object: the risky object id (``None`` without anomaly)
    :param list frame_times_us: frame timestamps
    '''
    def __init__(self, frame_labels, object_labels, onset_us=None, accident_us=None,
                 anomalous_object=None, frame_times_us=None):
        self.frame_labels = [int(v) for v in frame_labels]
        self.object_labels = dict((int(k), [int(v) for v in vs]) for k, vs in object_labels.items())
        self.onset_us = None if onset_us is None else int(onset_us)
        self.accident_us = None if accident_us is None else int(accident_us)
        self.anomalous_object = None if anomalous_object is None else int(anomalous_object)
        self.frame_times_us = [int(t) for t in (frame_times_us or [])]

    @property
    def positive(self):
        return self.onset_us is not None

    def to_dict(self):
        return {
            'onset_us': self.onset_us,
            'accident_us': self.accident_us,
            'anomalous_object': self.anomalous_object,
            'frame_times_us': self.frame_times_us,
            'frame_labels': self.frame_labels,
            'object_labels': dict((str(k), v) for k, v in sorted(self.object_labels.items())),
        }

    @classmethod
    def from_dict(cls, data):
        schemas.validate(data, 'labels')
        return cls(data['frame_labels'], data['object_labels'], data.get('onset_us'),
                   data.get('accident_us'), data.get('anomalous_object'), data.get('frame_times_us'))

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result


def _rasterize(spec, state):
    cx, cy, w, h = state
    x0 = int(round(cx - w / 2.0))
    y0 = int(round(cy - h / 2.0))
    x1 = x0 + max(1, int(round(w)))
    y1 = y0 + max(1, int(round(h)))
    x0, x1 = max(0, x0), min(spec.width, x1)
    y0, y1 = max(0, y0), min(spec.height, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def synth_scenario(spec):
    '''
    Render a scenario.

    Objects are painted in declaration order with nearest-pixel rectangles, so later objects
    occlude earlier ones. Boxes are the painted rectangles; an object is risky from the anomaly
    onset on, on every frame where it is visible.

    :param ScenarioSpec spec: the scenario
    :rtype: tuple
    :returns: ``(FrameSequence, BBoxTracks, LabelSet)``
    '''
    spec.validate()
    times = spec.frame_times
    frames = []
    boxes = {}
    object_labels = dict((o.object_id, [0] * len(times)) for o in spec.objects)
    frame_labels = [0] * len(times)
    anomaly = spec.anomaly
    for index, t in enumerate(times):
        grid = np.full((spec.height, spec.width), spec.background, dtype=np.uint8)
        for obj in spec.objects:
            state = obj.state_at(t)
            if state is None:
                continue
            rect = _rasterize(spec, state)
            if rect is None:
                continue
            x0, y0, x1, y1 = rect
            grid[y0:y1, x0:x1] = obj.intensity
            boxes.setdefault(index, []).append((obj.object_id, x0, y0, x1, y1))
            if anomaly is not None and obj.object_id == anomaly.object_id and t >= anomaly.onset_us:
                object_labels[obj.object_id][index] = 1
                frame_labels[index] = 1
        frames.append((t, grid))

    onset = accident = risky = None
    if anomaly is not None:
        risky = anomaly.object_id
        accident = anomaly.collision_us
        positives = [times[i] for i, v in enumerate(frame_labels) if v]
        onset = positives[0] if positives else None
        if onset is None:
            log.warning('Anomalous object %s is never visible after onset', risky)
    labels = LabelSet(frame_labels, object_labels, onset, accident if onset is not None else None,
                      risky if onset is not None else None, times)
    sequence = FrameSequence(spec.width, spec.height, frames, spec.fps)
    log.debug('Rendered scenario %s: %d frames, %d boxes', spec.name, len(frames), sum(len(b) for b in boxes.values()))
    return sequence, BBoxTracks(boxes), labels


def _waypoint(t, x, y, w, h):
    return {'t_us': int(t), 'x': float(x), 'y': float(y), 'w': float(w), 'h': float(h)}


def _normal_object(rng, object_id, width, height, duration_us, background):
    w = float(rng.uniform(6, 11))
    h = float(rng.uniform(5, 8))
    y = float(rng.uniform(0.25, 0.55) * height)
    x = float(rng.uniform(0.1, 0.9) * width)
    direction = -1.0 if x < width / 2.0 else 1.0
    vx = direction * float(rng.uniform(4, 12))
    vy = float(rng.uniform(-2, 2))
    seconds = duration_us / 1e6
    intensity = int(rng.integers(150, 230))
    return ObjectTrack(object_id, intensity, [
        _waypoint(0, x, y, w, h),
        _waypoint(duration_us, x + vx * seconds, y + vy * seconds, w, h),
    ])


def preset(name, seed=0, width=96, height=72, fps=20.0, duration_us=2000000):
    '''
    Build a preset scenario specification.

    ``lane-merge`` has a vehicle in the adjacent lane reversing its lateral velocity into the ego lane,
    ``rush-out`` an object suddenly rushing into view, ``oncoming`` a distant vehicle veering towards
    the camera and ``normal`` only background traffic. ``mix`` is handled by :func:`preset_for_index`.

    :param str name: preset name
    :param int seed: randomization seed
    :rtype: ScenarioSpec
    '''
    if name not in PRESETS:
        raise InvalidInputError('Unknown preset "{0}". Choose among {1}'.format(name, ', '.join(PRESETS)))
    rng = rng_for(seed, PRESETS.index(name))
    background = int(rng.integers(40, 80))
    objects = [_normal_object(rng, i + 1, width, height, duration_us, background)
               for i in range(int(rng.integers(1, 3)))]
    anomaly = None
    next_id = len(objects) + 1
    onset = int(rng.uniform(0.35, 0.5) * duration_us)
    collision = int(rng.uniform(0.85, 0.95) * duration_us)
    ego_x, ego_y = width / 2.0, height * 0.8
    intensity = int(rng.integers(170, 250))

    if name == 'lane-merge':
        side = 1.0 if rng.random() < 0.5 else -1.0
        x_start = ego_x + side * width * float(rng.uniform(0.22, 0.3))
        y = height * float(rng.uniform(0.5, 0.6))
        drift = side * float(rng.uniform(2, 5)) * onset / 1e6
        objects.append(ObjectTrack(next_id, intensity, [
            _waypoint(0, x_start, y, 10, 7),
            _waypoint(onset, x_start + drift, y, 10, 7),
            _waypoint(collision, ego_x, ego_y, 26, 18),
            _waypoint(duration_us, ego_x, ego_y + 2, 30, 20),
        ]))
    elif name == 'rush-out':
        side = 1.0 if rng.random() < 0.5 else -1.0
        x_hidden = ego_x + side * (width / 2.0 + 12)
        y = height * float(rng.uniform(0.55, 0.7))
        objects.append(ObjectTrack(next_id, intensity, [
            _waypoint(onset, x_hidden, y, 8, 12),
            _waypoint(collision, ego_x, ego_y, 16, 24),
            _waypoint(duration_us, ego_x, ego_y, 18, 26),
        ]))
    elif name == 'oncoming':
        x = ego_x + float(rng.uniform(-0.15, 0.15)) * width
        y = height * 0.3
        objects.append(ObjectTrack(next_id, intensity, [
            _waypoint(0, x - 6, y, 6, 4),
            _waypoint(onset, x, y + 2, 7, 5),
            _waypoint(collision, ego_x, ego_y, 28, 20),
            _waypoint(duration_us, ego_x, ego_y + 2, 32, 22),
        ]))
    if name != 'normal':
        anomaly = Anomaly(next_id, onset, collision)
    return ScenarioSpec(width, height, background, objects, anomaly, duration_us, fps, seed, name)


def preset_for_index(name, index, seed):
    '''The spec of the ``index``-th scenario of a generated set (``mix`` cycles the presets)'''
    if name == 'mix':
        name = PRESETS[index % len(PRESETS)]
    return preset(name, seed=seed + index)


class Scenario(object):
    '''A scenario loaded from (or about to be written to) a directory'''
    def __init__(self, spec, frames, events, tracks, labels, scenario_id=None):
        self.spec = spec
        self.frames = frames
        self.events = events
        self.tracks = tracks
        self.labels = labels
        self.scenario_id = scenario_id or spec.name or 'scenario'

    @property
    def duration_us(self):
        return self.spec.duration_us


def build_scenario(spec, threshold=0.2, refractory_us=0, linear=False, noise_rate_hz=0.0, scenario_id=None):
    '''Render a spec and convert its frames into events'''
    frames, tracks, labels = synth_scenario(spec)
    events = frames_to_events(frames, threshold, refractory_us=refractory_us, linear=linear)
    if noise_rate_hz:
        events = inject_noise(events, noise_rate_hz, frames.timestamps[0], frames.timestamps[-1], seed=spec.seed)
    return Scenario(spec, frames, events, tracks, labels, scenario_id)


def write_scenario(scenario, directory):
    '''
    Write a scenario directory: ``scenario.json``, ``frames/``, ``frames.jsonl``, ``events.evt``,
    ``tracks.csv`` and ``labels.json``.

    :returns: the list of written files
    '''
    os.makedirs(directory, exist_ok=True)
    written = []
    path = os.path.join(directory, 'scenario.json')
    atomic_write(path, dump_json(scenario.spec.to_dict()))
    written.append(path)
    manifest = write_frames(scenario.frames, directory)
    written.extend(os.path.join(directory, 'frames/frame_{0:05d}.pgm'.format(i)) for i in range(len(scenario.frames)))
    written.append(manifest)
    path = os.path.join(directory, 'events.evt')
    write_events(scenario.events, path)
    written.append(path)
    path = os.path.join(directory, 'tracks.csv')
    atomic_write(path, scenario.tracks.to_csv())
    written.append(path)
    path = os.path.join(directory, 'labels.json')
    atomic_write(path, dump_json(scenario.labels.to_dict()))
    written.append(path)
    return written


def read_scenario(directory):
    '''Load a scenario directory written by :func:`write_scenario`'''
    with io.open(os.path.join(directory, 'scenario.json'), encoding='utf8') as infile:
        spec = ScenarioSpec.from_dict(json.load(infile))
    frames = read_frames(directory, fps=spec.fps)
    events = read_events(os.path.join(directory, 'events.evt'))
    tracks_path = os.path.join(directory, 'tracks.csv')
    with io.open(tracks_path, encoding='utf8') as infile:
        tracks = BBoxTracks.from_csv(infile.read(), path=tracks_path)
    with io.open(os.path.join(directory, 'labels.json'), encoding='utf8') as infile:
        labels = LabelSet.from_dict(json.load(infile))
    return Scenario(spec, frames, events, tracks, labels, os.path.basename(os.path.normpath(directory)))


def find_scenarios(directory):
    '''
    Scenario directories under ``directory`` (itself when it is a scenario), sorted by name.

    :raises InvalidInputError: when no scenario is found
    '''
    if os.path.isfile(os.path.join(directory, 'scenario.json')):
        return [directory]
    found = sorted(os.path.join(directory, name) for name in os.listdir(directory)
                   if os.path.isfile(os.path.join(directory, name, 'scenario.json')))
    if not found:
        raise InvalidInputError('No scenario found under {0}'.format(directory))
    return found
