# -*- coding: utf-8 -*-
import json
import logging

import pytest

from eae import cli, selftest
from eae import config as configuration
from eae.errors import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE
from eae.events import read_events
from eae.model import HybridModel, load_model, save_model
from eae.pipeline import read_scores
from eae.scenario import preset
from eae.utils import sha256_file

from .factories import HEIGHT, WIDTH


@pytest.fixture
def workspace(tmpdir):
    config = {
        'model': {'depth': 2, 'gnn_channels': 4, 'lattice': 3, 'feature_channels': [2, 3],
                  'object_dim': 4, 'hidden_dim': 4},
        'graph': {'radius': 0.15, 'max_neighbors': 6},
        'train': {'epochs': 1, 'batch_size': 1, 'max_steps': 2},
        'bench': {'synthetic_nodes': 100, 'insertions': 2},
    }
    tmpdir.join('config.json').write(json.dumps(config))
    spec = preset('lane-merge', seed=0, width=WIDTH, height=HEIGHT, duration_us=500000)
    tmpdir.join('spec.json').write(json.dumps(spec.to_dict()))
    return tmpdir


def eae(workspace, *args):
    return cli.main(['--config', str(workspace.join('config.json'))] + [str(a) for a in args])


def synth(workspace, name='scene'):
    assert eae(workspace, 'synth', '--spec', workspace.join('spec.json'), '--out', workspace.join(name)) == EXIT_OK
    return workspace.join(name)


def read_json(path):
    return json.loads(path.read())


class UsageTest(object):
    def test_no_command(self):
        assert cli.main([]) == EXIT_USAGE

    def test_unknown_command(self):
        assert cli.main(['fly']) == EXIT_USAGE

    @pytest.mark.parametrize('argv', [
        ['--threads', '0', 'selftest'],
        ['--seed', '-1', 'selftest'],
        ['synth', '--out', 'x', '--count', '0'],
        ['synth', '--out', 'x', '--preset', 'tornado'],
        ['synth', '--out', 'x', '--linear', 'maybe'],
        ['train', '--data', 'x', '--out', 'y', '--lut-bins', '1'],
        ['eval', '--scores', 'x', '--labels', 'y', '--out', 'z', '--thresholds', '0.5,0.2'],
        ['infer', '--model', 'm', '--scenario', 's', '--out', 'o', '--mode', 'eager'],
    ])
    def test_invalid_flags(self, argv):
        assert cli.main(argv) == EXIT_USAGE

    def test_missing_required(self):
        assert cli.main(['synth']) == EXIT_USAGE


class LoggingTest(object):
    def test_env_level(self, monkeypatch):
        monkeypatch.setenv(cli.LOG_ENV, 'error')
        assert cli.setup_logging() == logging.ERROR
        assert cli.setup_logging(1) == logging.INFO
        assert cli.setup_logging(2) == logging.DEBUG

    def test_unknown_level(self, monkeypatch):
        monkeypatch.setenv(cli.LOG_ENV, 'chatty')
        assert cli.setup_logging() == logging.WARNING

    def test_single_handler(self, monkeypatch):
        monkeypatch.delenv(cli.LOG_ENV, raising=False)
        cli.setup_logging()
        cli.setup_logging()
        handlers = [h for h in logging.getLogger().handlers if getattr(h, '_eae', False)]
        assert len(handlers) == 1


class SynthCommandTest(object):
    def test_spec(self, workspace):
        out = synth(workspace)
        for name in ('scenario.json', 'events.evt', 'tracks.csv', 'labels.json', 'frames.jsonl'):
            assert out.join(name).check(file=True)
        manifest = read_json(out.join('manifest.json'))
        assert manifest['command'] == 'synth'
        assert manifest['inputs'] == [str(workspace.join('spec.json')), str(workspace.join('config.json'))]
        assert manifest['config']['model']['depth'] == 2
        path = str(out.join('events.evt'))
        assert manifest['checksums'][path] == sha256_file(path)

    def test_deterministic(self, workspace):
        first, second = synth(workspace, 'a'), synth(workspace, 'b')
        for name in ('events.evt', 'tracks.csv', 'labels.json'):
            assert first.join(name).read_binary() == second.join(name).read_binary()

    def test_threshold_flag(self, workspace):
        coarse = workspace.join('coarse')
        assert eae(workspace, 'synth', '--spec', workspace.join('spec.json'), '--out', coarse,
                   '--threshold', '0.5') == EXIT_OK
        fine = synth(workspace, 'fine')
        assert len(read_events(str(coarse.join('events.evt')))) < len(read_events(str(fine.join('events.evt'))))
        assert read_json(coarse.join('manifest.json'))['config']['events']['threshold'] == 0.5

    def test_count(self, workspace):
        out = workspace.join('mix')
        assert eae(workspace, 'synth', '--preset', 'mix', '--count', '2', '--out', out) == EXIT_OK
        assert out.join('scenario_0000', 'scenario.json').check(file=True)
        assert read_json(out.join('scenario_0001', 'scenario.json'))['name'] == 'rush-out'
        assert out.join('manifest.json').check(file=True)

    def test_missing_spec(self, workspace):
        assert eae(workspace, 'synth', '--spec', workspace.join('nope.json'), '--out', workspace.join('x')) == EXIT_DATA

    def test_invalid_spec(self, workspace):
        workspace.join('bad.json').write(json.dumps({'width': 3}))
        assert eae(workspace, 'synth', '--spec', workspace.join('bad.json'), '--out', workspace.join('x')) == EXIT_DATA

    def test_unparsable_spec(self, workspace):
        workspace.join('bad.json').write('{')
        assert eae(workspace, 'synth', '--spec', workspace.join('bad.json'), '--out', workspace.join('x')) == EXIT_DATA


class ConfigTest(object):
    def test_missing_config(self, tmpdir):
        assert cli.main(['--config', str(tmpdir.join('none.json')), 'synth', '--out', str(tmpdir)]) == EXIT_DATA

    def test_invalid_config(self, tmpdir):
        tmpdir.join('config.json').write(json.dumps({'model': {'depth': 'deep'}}))
        assert cli.main(['--config', str(tmpdir.join('config.json')), 'synth', '--out', str(tmpdir)]) == EXIT_DATA


class ConvertCommandTest(object):
    def test_matches_synth(self, workspace):
        scene = synth(workspace)
        out = workspace.join('converted.evt')
        dump = workspace.join('graph.json')
        assert eae(workspace, 'convert', '--frames', scene, '--out', out, '--graph-dump', dump) == EXIT_OK
        assert out.read_binary() == scene.join('events.evt').read_binary()
        graph = read_json(dump)
        assert graph
        assert workspace.join('converted.evt.manifest.json').check(file=True)

    def test_missing_frames(self, workspace):
        assert eae(workspace, 'convert', '--frames', workspace.join('none'), '--out', workspace.join('o')) == EXIT_DATA


class WorkflowTest(object):
    def test_train_infer_eval_bench(self, workspace):
        scene = synth(workspace)
        model = workspace.join('model.bin')
        assert eae(workspace, 'train', '--data', scene, '--out', model, '--epochs', '2') == EXIT_OK
        assert load_model(str(model)).depth == 2
        curve = workspace.join('model.loss.csv').read().splitlines()
        assert curve[0] == 'epoch,step,loss,lr_head,lr_gnn'
        assert len(curve) == 3

        scores = workspace.join('scores.jsonl')
        assert eae(workspace, 'infer', '--model', model, '--scenario', scene, '--out', scores) == EXIT_OK
        timelines = read_scores(scores.read())
        assert list(timelines) == ['scene']
        assert len(timelines['scene']) == 11

        report = workspace.join('report.json')
        assert eae(workspace, 'eval', '--scores', scores, '--labels', scene, '--out', report) == EXIT_OK
        data = read_json(report)
        assert data['scores'] == str(scores)
        assert data['counts']['scenarios'] == 1
        assert data['scenarios'][0]['scenario'] == 'scene'

        bench_report = workspace.join('bench.json')
        assert eae(workspace, 'bench', '--model', model, '--scenario', scene, '--out', bench_report) == EXIT_OK
        data = read_json(bench_report)
        assert data['incremental']['nodes'] == 102
        assert data['frames'] == 11

    def test_zero_epochs_saves_initialization(self, workspace):
        scene = synth(workspace)
        model = workspace.join('model.bin')
        assert eae(workspace, 'train', '--data', scene, '--out', model, '--epochs', '0') == EXIT_OK
        config = configuration.load(str(workspace.join('config.json')), {'train': {'epochs': 0}})
        initial = save_model(HybridModel.from_config(config, WIDTH, HEIGHT), str(workspace.join('init.bin')))
        assert model.read_binary() == initial
        assert workspace.join('model.loss.csv').read() == 'epoch,step,loss,lr_head,lr_gnn\n'

    def test_same_seed_same_model(self, workspace):
        scene = synth(workspace)
        first, second = workspace.join('a.bin'), workspace.join('b.bin')
        for out in (first, second):
            assert eae(workspace, '--seed', '3', 'train', '--data', scene, '--out', out) == EXIT_OK
        assert first.read_binary() == second.read_binary()

    def test_infer_incremental_matches_batch(self, workspace):
        scene = synth(workspace)
        model = workspace.join('model.bin')
        assert eae(workspace, 'train', '--data', scene, '--out', model, '--max-steps', '0') == EXIT_OK
        batch, incremental = workspace.join('batch.jsonl'), workspace.join('incremental.jsonl')
        assert eae(workspace, 'infer', '--model', model, '--scenario', scene, '--out', batch) == EXIT_OK
        assert eae(workspace, 'infer', '--model', model, '--scenario', scene, '--out', incremental,
                   '--mode', 'incremental') == EXIT_OK
        first, second = read_scores(batch.read())['scene'], read_scores(incremental.read())['scene']
        for a, b in zip(first.frames, second.frames):
            assert a['objects'].keys() == b['objects'].keys()
            for key in a['objects']:
                assert a['objects'][key] == pytest.approx(b['objects'][key], abs=1e-9)

    def test_bench_stdout(self, workspace, capsys, monkeypatch):
        monkeypatch.chdir(str(workspace))
        scene = synth(workspace)
        model = workspace.join('model.bin')
        assert eae(workspace, 'train', '--data', scene, '--out', model, '--max-steps', '0') == EXIT_OK
        capsys.readouterr()
        assert eae(workspace, 'bench', '--model', model, '--scenario', scene, '--nodes', '50') == EXIT_OK
        assert json.loads(capsys.readouterr().out)['incremental']['nodes'] == 52
        manifest = read_json(workspace.join('bench.manifest.json'))
        assert manifest['command'] == 'bench'
        assert manifest['outputs'] == []
        assert manifest['inputs'] == [str(model), str(scene), str(workspace.join('config.json'))]

    def test_bench_out(self, workspace):
        scene = synth(workspace)
        model, out = workspace.join('model.bin'), workspace.join('bench.json')
        assert eae(workspace, 'train', '--data', scene, '--out', model, '--max-steps', '0') == EXIT_OK
        assert eae(workspace, 'bench', '--model', model, '--scenario', scene, '--out', out) == EXIT_OK
        manifest = read_json(workspace.join('bench.json.manifest.json'))
        assert manifest['checksums'] == {str(out): sha256_file(str(out))}

    def test_missing_model(self, workspace):
        scene = synth(workspace)
        assert eae(workspace, 'infer', '--model', workspace.join('none.bin'), '--scenario', scene,
                   '--out', workspace.join('s.jsonl')) == EXIT_DATA

    def test_empty_data(self, workspace):
        workspace.mkdir('empty')
        assert eae(workspace, 'train', '--data', workspace.join('empty'), '--out', workspace.join('m')) == EXIT_DATA


class SelftestCommandTest(object):
    def test_passes(self, tmpdir):
        out = tmpdir.join('selftest.json')
        assert cli.main(['selftest', '--suite', 'metrics', '--suite', 'normalization', '--out', str(out)]) == EXIT_OK
        data = read_json(out)
        assert data['passed'] is True
        assert list(data['suites']) == ['metrics', 'normalization']
        manifest = read_json(tmpdir.join('selftest.json.manifest.json'))
        assert manifest['command'] == 'selftest'
        assert manifest['outputs'] == [str(out)]

    def test_stdout_manifest(self, tmpdir, monkeypatch, capsys):
        monkeypatch.chdir(str(tmpdir))
        assert cli.main(['selftest', '--suite', 'normalization']) == EXIT_OK
        assert json.loads(capsys.readouterr().out)['passed'] is True
        manifest = read_json(tmpdir.join('selftest.manifest.json'))
        assert manifest['argv'] == ['selftest', '--suite', 'normalization']
        assert manifest['outputs'] == []

    def test_failure(self, monkeypatch, capsys):
        monkeypatch.setitem(selftest.SUITES, 'metrics', lambda: (False, 1, 'broken'))
        assert cli.main(['selftest', '--suite', 'metrics']) == EXIT_INTERNAL
        assert json.loads(capsys.readouterr().out)['passed'] is False


class ManifestTest(object):
    def test_replay(self, workspace):
        scene = synth(workspace)
        events = scene.join('events.evt').read_binary()
        scene.join('events.evt').remove()
        assert cli.main(['--manifest', str(scene.join('manifest.json'))]) == EXIT_OK
        assert scene.join('events.evt').read_binary() == events

    def test_unparsable(self, tmpdir):
        tmpdir.join('manifest.json').write('not json')
        assert cli.main(['--manifest', str(tmpdir.join('manifest.json'))]) == EXIT_DATA

    def test_invalid(self, tmpdir):
        tmpdir.join('manifest.json').write(json.dumps({'command': 'synth'}))
        assert cli.main(['--manifest', str(tmpdir.join('manifest.json'))]) == EXIT_DATA

    def test_paths(self, tmpdir):
        assert cli.manifest_path(str(tmpdir)) == str(tmpdir.join('manifest.json'))
        assert cli.manifest_path(str(tmpdir.join('scores.jsonl'))) == str(tmpdir.join('scores.jsonl.manifest.json'))
