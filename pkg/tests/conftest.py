# -*- coding: utf-8 -*-
import pytest

from eae.model import HybridModel

from .factories import HEIGHT, WIDTH, small_config, small_scenario


@pytest.fixture
def config():
    return small_config()


@pytest.fixture
def model(config):
    return HybridModel.from_config(config, WIDTH, HEIGHT)


@pytest.fixture
def scenario():
    return small_scenario()


@pytest.fixture
def normal_scenario():
    return small_scenario('normal', seed=3)


def pytest_collection_modifyitems(config, items):
    '''Slow acceptance runs only execute when explicitly selected with ``-m slow``'''
    if 'slow' in (config.getoption('-m') or ''):
        return
    skip = pytest.mark.skip(reason='slow acceptance run, select with -m slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
