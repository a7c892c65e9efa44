# -*- coding: utf-8 -*-
import json
import os

import numpy as np
import pytest

from eae.errors import InvalidInputError, ParseError
from eae.schemas import SchemaValidationError
from eae.scenario import (PRESETS, Anomaly, BBoxTracks, LabelSet, ObjectTrack, ScenarioSpec, build_scenario,
                          find_scenarios, preset, preset_for_index, read_scenario, synth_scenario, write_scenario)

from .factories import HEIGHT, WIDTH, small_scenario


def waypoint(t, x, y, w=4, h=4):
    return {'t_us': t, 'x': x, 'y': y, 'w': w, 'h': h}


def simple_spec(anomaly=True):
    objects = [
        ObjectTrack(1, 200, [waypoint(0, 4, 4), waypoint(100000, 12, 4)]),
        ObjectTrack(2, 120, [waypoint(50000, 10, 10), waypoint(100000, 10, 10)]),
    ]
    return ScenarioSpec(16, 16, 50, objects, Anomaly(2, 50000, 100000) if anomaly else None, 100000, 20.0,
                        name='simple')


class ObjectTrackTest(object):
    def test_interpolation(self):
        track = ObjectTrack(1, 200, [waypoint(0, 0, 0), waypoint(100, 10, 20, 6, 8)])
        assert track.state_at(50) == (5.0, 10.0, 5.0, 6.0)
        assert track.state_at(-1) is None
        assert track.state_at(101) is None

    def test_unordered_waypoints_are_sorted(self):
        track = ObjectTrack(1, 200, [waypoint(100, 10, 0), waypoint(0, 0, 0)])
        assert track.state_at(0) == (0, 0, 4, 4)

    @pytest.mark.parametrize('waypoints,intensity', [
        ([], 200),
        ([waypoint(0, 0, 0)], 300),
        ([waypoint(0, 0, 0), waypoint(0, 1, 1)], 200),
        ([waypoint(0, 0, 0, w=0)], 200),
    ])
    def test_invalid(self, waypoints, intensity):
        with pytest.raises(InvalidInputError):
            ObjectTrack(1, intensity, waypoints)


class ScenarioSpecTest(object):
    def test_frame_times(self):
        assert simple_spec().frame_times == [0, 50000, 100000]

    def test_dict(self):
        spec = simple_spec()
        assert ScenarioSpec.from_dict(json.loads(json.dumps(spec.to_dict()))).to_dict() == spec.to_dict()

    def test_duplicate_ids(self):
        track = ObjectTrack(1, 200, [waypoint(0, 4, 4)])
        with pytest.raises(InvalidInputError):
            ScenarioSpec(16, 16, 50, [track, track], None, 100000, 20.0)

    def test_unknown_anomalous_object(self):
        with pytest.raises(InvalidInputError):
            ScenarioSpec(16, 16, 50, [], Anomaly(3, 0, 10), 100000, 20.0)

    def test_anomaly_order(self):
        track = ObjectTrack(1, 200, [waypoint(0, 4, 4)])
        with pytest.raises(InvalidInputError):
            ScenarioSpec(16, 16, 50, [track], Anomaly(1, 50, 50), 100000, 20.0)

    @pytest.mark.parametrize('kwargs', [{'duration_us': 0}, {'fps': 0}, {'background': 256}])
    def test_invalid(self, kwargs):
        values = dict(width=16, height=16, background=50, objects=[], anomaly=None, duration_us=1000, fps=20.0)
        values.update(kwargs)
        with pytest.raises(InvalidInputError):
            ScenarioSpec(**values)

    def test_schema(self):
        data = simple_spec().to_dict()
        del data['width']
        with pytest.raises(SchemaValidationError):
            ScenarioSpec.from_dict(data)


class SynthTest(object):
    def test_render(self):
        frames, tracks, labels = synth_scenario(simple_spec())
        assert len(frames) == 3
        first = frames.frames[0][1]
        assert first[2:6, 2:6].tolist() == [[200] * 4] * 4
        assert int(first[0, 0]) == 50
        assert tracks.frame(0) == [(1, 2, 2, 6, 6)]
        assert tracks.frame(1) == [(1, 6, 2, 10, 6), (2, 8, 8, 12, 12)]

    def test_labels(self):
        _, _, labels = synth_scenario(simple_spec())
        assert labels.frame_labels == [0, 1, 1]
        assert labels.object_labels == {1: [0, 0, 0], 2: [0, 1, 1]}
        assert (labels.onset_us, labels.accident_us, labels.anomalous_object) == (50000, 100000, 2)
        assert labels.frame_times_us == [0, 50000, 100000]

    def test_normal(self):
        _, _, labels = synth_scenario(simple_spec(anomaly=False))
        assert not labels.positive
        assert labels.frame_labels == [0, 0, 0]
        assert labels.anomalous_object is None

    def test_occlusion_order(self):
        objects = [ObjectTrack(1, 200, [waypoint(0, 8, 8, 8, 8)]), ObjectTrack(2, 100, [waypoint(0, 8, 8, 2, 2)])]
        frames, _, _ = synth_scenario(ScenarioSpec(16, 16, 0, objects, None, 1, 20.0))
        assert int(frames.frames[0][1][8, 8]) == 100

    def test_clipped_boxes(self):
        objects = [ObjectTrack(1, 200, [waypoint(0, 0, 0, 6, 6)])]
        _, tracks, _ = synth_scenario(ScenarioSpec(16, 16, 0, objects, None, 1, 20.0))
        assert tracks.frame(0) == [(1, 0, 0, 3, 3)]


class PresetTest(object):
    @pytest.mark.parametrize('name', PRESETS)
    def test_presets(self, name):
        spec = preset(name, seed=1)
        assert spec.name == name
        assert (spec.width, spec.height, spec.fps, spec.duration_us) == (96, 72, 20.0, 2000000)
        assert (spec.anomaly is None) == (name == 'normal')
        frames, tracks, labels = synth_scenario(spec)
        assert len(frames) == 41
        assert len(tracks) > 0
        assert labels.positive == (name != 'normal')

    def test_deterministic(self):
        assert preset('rush-out', seed=4).to_dict() == preset('rush-out', seed=4).to_dict()
        assert preset('rush-out', seed=4).to_dict() != preset('rush-out', seed=5).to_dict()

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            preset('tornado')

    def test_mix(self):
        names = [preset_for_index('mix', i, 0).name for i in range(5)]
        assert names == list(PRESETS) + [PRESETS[0]]
        assert preset_for_index('oncoming', 2, 10).seed == 12


class BuildScenarioTest(object):
    def test_events(self, scenario):
        assert len(scenario.events) > 0
        assert (scenario.events.width, scenario.events.height) == (WIDTH, HEIGHT)
        assert scenario.events.is_sorted()
        assert int(scenario.events.t.max()) <= scenario.frames.timestamps[-1]

    def test_threshold(self):
        assert len(small_scenario(threshold=0.4).events) < len(small_scenario(threshold=0.1).events)

    def test_noise(self):
        clean = small_scenario()
        noisy = small_scenario(noise_rate_hz=2000.0)
        assert len(noisy.events) > len(clean.events)

    def test_identifier(self):
        assert small_scenario().scenario_id == 'lane-merge'
        assert build_scenario(simple_spec(), scenario_id='x').scenario_id == 'x'


class TracksCsvTest(object):
    def test_csv(self):
        tracks = BBoxTracks({0: [(1, 0, 0, 4, 4)], 2: [(3, 1, 1, 2, 2), (1, 5, 5, 9, 9)]})
        text = tracks.to_csv()
        assert text.splitlines() == ['frame_idx,object_id,x_min,y_min,x_max,y_max', '0,1,0,0,4,4',
                                     '2,1,5,5,9,9', '2,3,1,1,2,2']
        assert BBoxTracks.from_csv(text) == tracks

    def test_header(self):
        with pytest.raises(ParseError):
            BBoxTracks.from_csv('frame,object\n0,1\n')

    def test_empty_box(self):
        with pytest.raises(ParseError) as excinfo:
            BBoxTracks.from_csv('frame_idx,object_id,x_min,y_min,x_max,y_max\n0,1,4,0,4,3\n', path='t.csv')
        assert 'line 2' in str(excinfo.value)

    def test_not_integers(self):
        with pytest.raises(ParseError):
            BBoxTracks.from_csv('frame_idx,object_id,x_min,y_min,x_max,y_max\n0,1,a,0,4,3\n')


class LabelSetTest(object):
    def test_dict(self):
        labels = LabelSet([0, 1], {3: [0, 1]}, 50000, 90000, 3, [0, 50000])
        assert LabelSet.from_dict(json.loads(json.dumps(labels.to_dict()))) == labels


class ScenarioDirectoryTest(object):
    def test_write_read(self, scenario, tmpdir):
        directory = str(tmpdir.join('merge-0'))
        written = write_scenario(scenario, directory)
        names = sorted(os.path.relpath(path, directory) for path in written)
        assert 'events.evt' in names
        assert 'labels.json' in names
        assert len([n for n in names if n.startswith('frames' + os.sep)]) == len(scenario.frames)
        loaded = read_scenario(directory)
        assert loaded.scenario_id == 'merge-0'
        assert loaded.events == scenario.events
        assert loaded.frames == scenario.frames
        assert loaded.tracks == scenario.tracks
        assert loaded.labels == scenario.labels
        assert loaded.spec.to_dict() == scenario.spec.to_dict()

    def test_rewrite_identical(self, scenario, tmpdir):
        first, second = tmpdir.join('a'), tmpdir.join('b')
        write_scenario(scenario, str(first))
        write_scenario(read_scenario(str(first)), str(second))
        for name in ('scenario.json', 'events.evt', 'tracks.csv', 'labels.json', 'frames.jsonl'):
            assert first.join(name).read_binary() == second.join(name).read_binary()

    def test_find(self, scenario, tmpdir):
        for name in ('b', 'a'):
            write_scenario(scenario, str(tmpdir.join(name)))
        tmpdir.mkdir('not-a-scenario')
        assert find_scenarios(str(tmpdir)) == [str(tmpdir.join('a')), str(tmpdir.join('b'))]
        assert find_scenarios(str(tmpdir.join('a'))) == [str(tmpdir.join('a'))]

    def test_find_nothing(self, tmpdir):
        with pytest.raises(InvalidInputError):
            find_scenarios(str(tmpdir))

    def test_frames_are_pgm(self, scenario, tmpdir):
        write_scenario(scenario, str(tmpdir))
        assert tmpdir.join('frames', 'frame_00000.pgm').read_binary().startswith(b'P5')
        assert np.array_equal(read_scenario(str(tmpdir)).frames.frames[0][1], scenario.frames.frames[0][1])
