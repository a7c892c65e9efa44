# -*- coding: utf-8 -*-
#
'''
Command line interface.

Every command writes its artifacts plus a run manifest (``*.manifest.json``, or ``manifest.json``
inside output directories) recording the argv, the effective configuration, the inputs, the outputs
with their SHA-256 and the timings. Reports printed to stdout get their manifest in the working
directory (``bench.manifest.json``, ``selftest.manifest.json``). ``eae --manifest PATH`` re-executes a
recorded run.
'''
import argparse
import io
import json
import logging
import os
import sys
import time

from datetime import datetime

import pytz

from . import config as configuration
from . import inputs, schemas
from .__about__ import __version__
from .bench import bench
from .errors import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, EngineError, InvalidInputError, exit_code
from .events import frames_to_events, inject_noise, read_frames, write_events
from .graph import GraphConfig, build_graph, dump_graph
from .metrics import evaluate
from .model import HybridModel, load_feature_maps, load_model, save_model
from .pipeline import MODES, CLOCKS, read_scores, score_scenario
from .scenario import (PRESETS, LabelSet, ScenarioSpec, build_scenario, find_scenarios, preset_for_index,
                       read_scenario, write_scenario)
from .selftest import SUITES, run_selftest
from .training import loss_csv, train
from .utils import atomic_write, dump_json, not_none, sha256_file

log = logging.getLogger(__name__)

__all__ = ('main', 'build_parser', 'setup_logging', 'manifest_path')

LOG_ENV = 'EAE_LOG'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


class SelftestFailure(Exception):
    pass


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    '''Report usage errors through an exception instead of exiting'''
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _typed(func, argument):
    def parse(value):
        return func(value, argument)
    parse.__name__ = argument
    return parse


def setup_logging(verbosity=0):
    '''
    Configure the root logger from ``EAE_LOG`` (default ``WARNING``), raised by ``-v`` flags.
    '''
    name = os.environ.get(LOG_ENV, 'WARNING').upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    if verbosity:
        level = min(level, logging.INFO if verbosity == 1 else logging.DEBUG)
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_eae', False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._eae = True
    root.addHandler(handler)
    root.setLevel(level)
    return level


def _event_flags(parser):
    parser.add_argument('--threshold', type=_typed(inputs.positive_float, 'threshold'),
                        help='contrast threshold')
    parser.add_argument('--refractory-us', type=_typed(inputs.natural, 'refractory-us'),
                        help='per pixel refractory period')
    parser.add_argument('--linear', type=inputs.boolean, metavar='BOOL', help='threshold raw intensities (true/false)')
    parser.add_argument('--noise-rate', type=_typed(inputs.non_negative_float, 'noise-rate'),
                        help='noise events per second')


def build_parser():
    parser = ArgumentParser(prog='eae', description='Event-assisted anomaly detection toolkit')
    parser.add_argument('--version', action='version', version='%(prog)s {0}'.format(__version__))
    parser.add_argument('--config', help='JSON configuration document')
    parser.add_argument('--seed', type=_typed(inputs.natural, 'seed'), help='random seed')
    parser.add_argument('--threads', type=_typed(inputs.positive, 'threads'), help='worker threads')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='more logs (repeatable)')
    parser.add_argument('--manifest', help='re-execute the run recorded in a manifest')
    commands = parser.add_subparsers(dest='command')

    synth = commands.add_parser('synth', help='generate synthetic scenarios')
    source = synth.add_mutually_exclusive_group()
    source.add_argument('--preset', choices=PRESETS + ('mix',), help='scenario preset')
    source.add_argument('--spec', help='scenario specification JSON')
    synth.add_argument('--count', type=_typed(inputs.positive, 'count'), default=1,
                       help='number of scenarios (one sub-directory each when above 1)')
    synth.add_argument('--out', required=True, help='output directory')
    _event_flags(synth)

    convert = commands.add_parser('convert', help='convert frames into events')
    convert.add_argument('--frames', required=True, help='frames directory')
    convert.add_argument('--fps', type=_typed(inputs.positive_float, 'fps'), help='nominal frame rate')
    convert.add_argument('--out', required=True, help='EVT1 output file')
    convert.add_argument('--graph-dump', help='write the event graph as JSON')
    _event_flags(convert)

    training = commands.add_parser('train', help='train a model')
    training.add_argument('--data', required=True, help='scenario directory (or directory of scenarios)')
    training.add_argument('--out', required=True, help='model output file')
    training.add_argument('--loss-csv', help='loss curve output (defaults beside the model)')
    training.add_argument('--epochs', type=_typed(inputs.natural, 'epochs'))
    training.add_argument('--batch-size', type=_typed(inputs.positive, 'batch-size'))
    training.add_argument('--max-steps', type=_typed(inputs.natural, 'max-steps'))
    training.add_argument('--lr-head', type=_typed(inputs.non_negative_float, 'lr-head'))
    training.add_argument('--lr-gnn', type=_typed(inputs.non_negative_float, 'lr-gnn'))
    training.add_argument('--ablate', type=_typed(inputs.ablations, 'ablate'), help='components to disable')
    training.add_argument('--no-share-gnn', dest='share_gnn', action='store_const', const=False,
                          help='separate spline layers for object extraction')
    training.add_argument('--pool-grid', type=_typed(inputs.grid3, 'pool-grid'), help='voxel pooled readout')
    training.add_argument('--lut-bins', type=inputs.int_range(2, 4096, 'lut-bins'),
                          help='inference lookup table resolution')

    infer = commands.add_parser('infer', help='score scenarios')
    infer.add_argument('--model', required=True, help='model file')
    infer.add_argument('--scenario', required=True, help='scenario directory (or directory of scenarios)')
    infer.add_argument('--out', required=True, help='scores output (JSON lines)')
    infer.add_argument('--mode', choices=MODES)
    infer.add_argument('--clock', choices=CLOCKS, help='how inference times are obtained')
    infer.add_argument('--substeps', type=_typed(inputs.positive, 'substeps'), help='sub-frame previews')
    infer.add_argument('--drop-after', type=_typed(inputs.positive, 'drop-after'))
    infer.add_argument('--feature-maps', help='precomputed feature maps (single scenario)')

    evaluation = commands.add_parser('eval', help='evaluate scores against labels')
    evaluation.add_argument('--scores', required=True, help='scores file')
    evaluation.add_argument('--labels', required=True, help='scenario directory (or directory of scenarios)')
    evaluation.add_argument('--out', required=True, help='report output (JSON)')
    evaluation.add_argument('--curves', help='curve CSV prefix (defaults to the report path)')
    evaluation.add_argument('--thresholds', type=_typed(inputs.threshold_list, 'thresholds'))
    evaluation.add_argument('--mtta-threshold', type=_typed(inputs.unit_interval, 'mtta-threshold'))
    evaluation.add_argument('--detect-threshold', type=_typed(inputs.unit_interval, 'detect-threshold'))
    evaluation.add_argument('--fps', type=_typed(inputs.positive_float, 'fps'))

    benchmark = commands.add_parser('bench', help='measure latency and throughput')
    benchmark.add_argument('--model', required=True, help='model file')
    benchmark.add_argument('--scenario', required=True, help='scenario directory')
    benchmark.add_argument('--out', help='report output (JSON), stdout by default')
    benchmark.add_argument('--events-per-insert', type=_typed(inputs.positive, 'events-per-insert'))
    benchmark.add_argument('--insertions', type=_typed(inputs.positive, 'insertions'))
    benchmark.add_argument('--nodes', type=_typed(inputs.positive, 'nodes'), help='synthetic graph size')

    selftest = commands.add_parser('selftest', help='run the oracle suites')
    selftest.add_argument('--suite', action='append', choices=list(SUITES), help='restrict to a suite')
    selftest.add_argument('--out', help='summary output (JSON), stdout by default')
    return parser


def _overrides(args):
    '''Configuration overrides from command line flags'''
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides = {
        'events': not_none({'threshold': get('threshold'), 'refractory_us': get('refractory_us'),
                            'linear': get('linear'), 'noise_rate_hz': get('noise_rate')}),
        'model': not_none({'ablate': list(get('ablate')) if get('ablate') is not None else None,
                           'share_gnn': get('share_gnn'), 'seed': get('seed'),
                           'pool_grid': list(get('pool_grid')) if get('pool_grid') else None,
                           'lut_bins': get('lut_bins')}),
        'train': not_none({'epochs': get('epochs'), 'batch_size': get('batch_size'), 'max_steps': get('max_steps'),
                           'lr_head': get('lr_head'), 'lr_gnn': get('lr_gnn'), 'seed': get('seed'),
                           'threads': get('threads')}),
        'infer': not_none({'mode': get('mode'), 'clock': get('clock'), 'substeps': get('substeps'),
                           'drop_after': get('drop_after')}),
        'eval': not_none({'thresholds': get('thresholds'), 'mtta_threshold': get('mtta_threshold'),
                          'detect_threshold': get('detect_threshold'),
                          'fps': get('fps') if args.command == 'eval' else None}),
        'bench': not_none({'events_per_insert': get('events_per_insert'), 'insertions': get('insertions'),
                           'synthetic_nodes': get('nodes')}),
    }
    return dict((k, v) for k, v in overrides.items() if v)


def manifest_path(output):
    '''Where the manifest of an output goes'''
    if os.path.isdir(output):
        return os.path.join(output, 'manifest.json')
    return output + '.manifest.json'


def cmd_synth(args, config, seed, threads):
    if args.spec:
        with io.open(args.spec, encoding='utf8') as infile:
            try:
                spec = ScenarioSpec.from_dict(json.load(infile))
            except ValueError as e:
                raise InvalidInputError('Unable to parse {0}: {1}'.format(args.spec, e))
        specs = [spec] * args.count
        inputs_ = [args.spec]
    else:
        name = args.preset or 'mix'
        specs = [preset_for_index(name, index, seed) for index in range(args.count)]
        inputs_ = []
    events = config['events']
    outputs = []
    for index, spec in enumerate(specs):
        directory = args.out if args.count == 1 else os.path.join(args.out, 'scenario_{0:04d}'.format(index))
        scenario = build_scenario(spec, events['threshold'], events['refractory_us'], events['linear'],
                                  events['noise_rate_hz'])
        outputs.extend(write_scenario(scenario, directory))
        log.info('Wrote scenario %s (%d frames, %d events)', directory, len(scenario.frames), len(scenario.events))
    return inputs_, outputs, args.out


def cmd_convert(args, config, seed, threads):
    frames = read_frames(args.frames, fps=args.fps)
    events = config['events']
    stream = frames_to_events(frames, events['threshold'], events['refractory_us'], events['linear'])
    if events['noise_rate_hz']:
        stream = inject_noise(stream, events['noise_rate_hz'], frames.timestamps[0], frames.timestamps[-1], seed)
    write_events(stream, args.out)
    outputs = [args.out]
    if args.graph_dump:
        duration = max(frames.timestamps[-1] - frames.timestamps[0], 1)
        cfg = GraphConfig.from_config(config['graph'], frames.width, frames.height).resolve(duration)
        atomic_write(args.graph_dump, dump_json(dump_graph(build_graph(stream, cfg))))
        outputs.append(args.graph_dump)
    return [os.path.join(args.frames, 'frames.jsonl')], outputs, args.out


def cmd_train(args, config, seed, threads):
    directories = find_scenarios(args.data)
    scenarios = [read_scenario(directory) for directory in directories]
    first = scenarios[0].frames
    model = HybridModel.from_config(config, first.width, first.height)
    model, curve = train(model, scenarios, config['train'], drop_after=config['infer']['drop_after'])
    save_model(model, args.out)
    loss_path = args.loss_csv or os.path.splitext(args.out)[0] + '.loss.csv'
    atomic_write(loss_path, loss_csv(curve))
    return directories, [args.out, loss_path], args.out


def _load_timelines(model, directories, config, feature_maps=None):
    if feature_maps and len(directories) != 1:
        raise InvalidInputError('--feature-maps applies to a single scenario')
    fmaps = load_feature_maps(feature_maps) if feature_maps else None
    timelines = []
    for directory in directories:
        scenario = read_scenario(directory)
        timelines.append(score_scenario(model, scenario, config['infer'], fmaps))
    return timelines


def cmd_infer(args, config, seed, threads):
    model = load_model(args.model)
    directories = find_scenarios(args.scenario)
    timelines = _load_timelines(model, directories, config, args.feature_maps)
    atomic_write(args.out, ''.join(timeline.to_jsonl() for timeline in timelines))
    inputs_ = [args.model] + directories + ([args.feature_maps] if args.feature_maps else [])
    return inputs_, [args.out], args.out


def _read_labels(directory):
    path = os.path.join(directory, 'labels.json')
    with io.open(path, encoding='utf8') as infile:
        try:
            return LabelSet.from_dict(json.load(infile))
        except ValueError as e:
            raise InvalidInputError('Unable to parse {0}: {1}'.format(path, e))


def _curve_csv(header, points):
    lines = [header] + [','.join(repr(float(v)) for v in point) for point in points]
    return '\n'.join(lines) + '\n'


def cmd_eval(args, config, seed, threads):
    with io.open(args.scores, encoding='utf8') as infile:
        timelines = read_scores(infile.read(), path=args.scores)
    directories = find_scenarios(args.labels)
    labels = dict((os.path.basename(os.path.normpath(d)), _read_labels(d)) for d in directories)
    report, curves = evaluate(timelines, labels, config['eval'])
    report['scores'] = args.scores
    atomic_write(args.out, dump_json(report))
    prefix = args.curves or os.path.splitext(args.out)[0]
    outputs = [args.out]
    for name, header in (('roc', 'threshold,fpr,tpr'), ('pr', 'threshold,recall,precision')):
        if name in curves:
            path = '{0}.{1}.csv'.format(prefix, name)
            atomic_write(path, _curve_csv(header, curves[name]))
            outputs.append(path)
    for warning in report['warnings']:
        log.warning(warning)
    return [args.scores] + directories, outputs, args.out


def _emit(data, out):
    if out:
        atomic_write(out, dump_json(data))
        return [out]
    sys.stdout.write(dump_json(data))
    return []


def _anchor(args):
    '''The manifest anchor of a report: its output file, or the command name in the working directory'''
    return args.out or os.path.join(os.getcwd(), args.command)


def cmd_bench(args, config, seed, threads):
    model = load_model(args.model)
    scenario = read_scenario(args.scenario)
    report = bench(model, scenario, config['bench'], threads=threads, seed=seed)
    return [args.model, args.scenario], _emit(report, args.out), _anchor(args)


def cmd_selftest(args, config, seed, threads):
    passed, summary = run_selftest(args.suite)
    outputs = _emit({'passed': passed, 'suites': summary}, args.out)
    if not passed:
        raise SelftestFailure('Self test failed: {0}'.format(
            ', '.join(name for name, suite in summary.items() if not suite['passed'])))
    return [], outputs, _anchor(args)


COMMANDS = {
    'synth': cmd_synth,
    'convert': cmd_convert,
    'train': cmd_train,
    'infer': cmd_infer,
    'eval': cmd_eval,
    'bench': cmd_bench,
    'selftest': cmd_selftest,
}


def write_manifest(command, argv, config, inputs_, outputs, anchor, seed, threads, timings):
    '''Write the run manifest beside ``anchor`` and return its path'''
    checksums = dict((path, sha256_file(path)) for path in outputs if os.path.isfile(path))
    manifest = {
        'command': command,
        'argv': list(argv),
        'config': config,
        'inputs': [str(p) for p in inputs_],
        'outputs': [str(p) for p in outputs],
        'checksums': checksums,
        'seed': seed,
        'threads': threads,
        'version': __version__,
        'created_at': datetime.now(pytz.utc).isoformat(),
        'timings': timings,
    }
    schemas.validate(manifest, 'manifest')
    path = manifest_path(anchor)
    atomic_write(path, dump_json(manifest))
    return path


def _replay(path):
    with io.open(path, encoding='utf8') as infile:
        try:
            manifest = json.load(infile)
        except ValueError as e:
            raise InvalidInputError('Unable to parse manifest {0}: {1}'.format(path, e))
    schemas.validate(manifest, 'manifest')
    return manifest['argv']


def run(argv):
    '''Parse ``argv`` and run the command; exceptions propagate'''
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    if args.manifest:
        log.info('Replaying %s', args.manifest)
        return run(_replay(args.manifest))
    if not args.command:
        raise UsageError('a command is required')
    config = configuration.load(args.config, _overrides(args))
    seed = args.seed if args.seed is not None else config['train']['seed']
    threads = args.threads or config['train']['threads']
    started = time.perf_counter()
    inputs_, outputs, anchor = COMMANDS[args.command](args, config, seed, threads)
    timings = {'total_s': round(time.perf_counter() - started, 6)}
    if args.config:
        inputs_ = inputs_ + [args.config]
    path = write_manifest(args.command, argv, config, inputs_, outputs, anchor, seed, threads, timings)
    log.info('Wrote manifest %s', path)
    return EXIT_OK


def main(argv=None):
    '''Console entry point, returns the process exit code'''
    argv = list(sys.argv[1:] if argv is None else argv)
    setup_logging()
    try:
        return run(argv)
    except UsageError as e:
        sys.stderr.write('eae: error: {0}\n'.format(e))
        return EXIT_USAGE
    except SelftestFailure as e:
        log.error('%s', e)
        return EXIT_INTERNAL
    except EngineError as e:
        log.error('%s', e)
        return exit_code(e)
    except (IOError, OSError) as e:
        log.error('%s', e)
        return EXIT_DATA
    except Exception:
        log.exception('Unexpected error')
        return EXIT_INTERNAL
