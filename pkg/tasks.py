# -*- coding: utf-8 -*-
import os
import sys

from datetime import datetime

from invoke import task

ROOT = os.path.dirname(__file__)

CLEAN_PATTERNS = [
    'build',
    'dist',
    'cover',
    'doc/_build',
    '**/*.pyc',
    '.tox',
    '**/__pycache__',
    '.benchmarks',
    'histograms',
    'reports',
    '*.egg-info',
]


def color(code):
    '''A simple ANSI color wrapper factory'''
    return lambda t: '\033[{0}{1}\033[0;m'.format(code, t)


green = color('1;32m')
red = color('1;31m')
cyan = color('1;36m')
purple = color('1;35m')


def say(prefix, text):
    print(' '.join((prefix, text)))
    sys.stdout.flush()


def header(text):
    say(cyan('>>'), text)


def info(text, *args, **kwargs):
    say(purple('>>>'), text.format(*args, **kwargs))


def success(text):
    say(green('>>'), text)


def error(text):
    say(red('✘'), text)


def build_args(*args):
    return ' '.join(str(a) for a in args if a)


@task
def clean(ctx):
    '''Cleanup all build artifacts'''
    header(clean.__doc__)
    with ctx.cd(ROOT):
        for pattern in CLEAN_PATTERNS:
            info('Removing {0}', pattern)
            ctx.run('rm -rf {0}'.format(pattern))


@task
def deps(ctx):
    '''Install or update development dependencies'''
    header(deps.__doc__)
    with ctx.cd(ROOT):
        ctx.run('pip install -e . -r requirements/develop.pip -r requirements/doc.pip', pty=True)


@task
def selftest(ctx, suite=None):
    '''Run the oracle suites'''
    header(selftest.__doc__)
    with ctx.cd(ROOT):
        ctx.run(build_args('python -m eae selftest', suite and '--suite {0}'.format(suite)), pty=True)


@task
def test(ctx, slow=False):
    '''Run tests suite'''
    header(test.__doc__)
    with ctx.cd(ROOT):
        ctx.run(build_args('pytest --benchmark-skip', '-m slow' if slow else '-m "not slow"'), pty=True)


@task
def benchmark(ctx, max_time=2, save=False, compare=False, histogram=False, profile=False):
    '''Run benchmarks'''
    header(benchmark.__doc__)
    histograms = 'histograms/{0:%Y%m%d-%H%M%S}'.format(datetime.now())
    with ctx.cd(ROOT):
        ctx.run(build_args(
            'pytest tests/benchmarks',
            '--benchmark-max-time={0}'.format(max_time),
            save and '--benchmark-autosave',
            compare and '--benchmark-compare',
            histogram and '--benchmark-histogram={0}'.format(histograms),
            profile and '--benchmark-cprofile=tottime',
        ), pty=True)


@task
def demo(ctx, train=16, test=8, seed=0, out='reports/demo'):
    '''Run a small synthetic experiment end to end'''
    header(demo.__doc__)
    steps = [
        ('Generating {0} training scenarios'.format(train),
         '--seed {0} synth --preset mix --count {1} --out {2}/train'.format(seed, train, out)),
        ('Generating {0} held-out scenarios'.format(test),
         '--seed {0} synth --preset mix --count {1} --out {2}/test'.format(seed + 1000, test, out)),
        ('Training', 'train --data {0}/train --out {0}/model.bin'.format(out)),
        ('Scoring', 'infer --model {0}/model.bin --scenario {0}/test --out {0}/scores.jsonl'.format(out)),
        ('Evaluating', 'eval --scores {0}/scores.jsonl --labels {0}/test --out {0}/report.json'.format(out)),
    ]
    with ctx.cd(ROOT):
        for title, args in steps:
            info(title)
            ctx.run('python -m eae {0}'.format(args), pty=True)
    success('Report written to {0}/report.json'.format(out))


@task
def cover(ctx, html=False):
    '''Run tests suite with coverage'''
    header(cover.__doc__)
    with ctx.cd(ROOT):
        ctx.run(build_args('pytest --benchmark-skip -m "not slow" --cov eae --cov-report term',
                           html and '--cov-report html'), pty=True)


@task
def tox(ctx):
    '''Run tests against Python versions'''
    header(tox.__doc__)
    ctx.run('tox', pty=True)


@task
def qa(ctx):
    '''Run a quality report'''
    header(qa.__doc__)
    failures = []
    with ctx.cd(ROOT):
        info('Python Static Analysis')
        if ctx.run('flake8 eae tests tasks.py', pty=True, warn=True).failed:
            failures.append('There is some lints to fix')
        info('Ensure PyPI can render README and CHANGELOG')
        if ctx.run('python setup.py check -r -s', pty=True, warn=True, hide=True).failed:
            failures.append('README and/or CHANGELOG is not renderable by PyPI')
    for failure in failures:
        error(failure)
    if failures:
        sys.exit(1)
    success('Quality check OK')


@task
def doc(ctx):
    '''Build the documentation'''
    header(doc.__doc__)
    with ctx.cd(os.path.join(ROOT, 'doc')):
        ctx.run('sphinx-build -b html . _build/html', pty=True)


@task
def dist(ctx):
    '''Package for distribution'''
    header(dist.__doc__)
    with ctx.cd(ROOT):
        ctx.run('python setup.py bdist_wheel', pty=True)


@task(clean, deps, test, selftest, doc, qa, dist, default=True)
def all(ctx):
    '''Run tests, reports and packaging'''
    pass
