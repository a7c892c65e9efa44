# -*- coding: utf-8 -*-
#
from . import config, inputs, metrics, oracles  # noqa
from .errors import (EngineError, InvalidInputError, ConfigError, ParseError, ChecksumError, ManifestError,
                     UndefinedMetricError, StateError, InvariantError)
from .events import Event, EventStream, FrameSequence, frames_to_events, read_events, write_events
from .graph import DirtySet, EventGraph, GraphConfig, build_graph, insert_event
from .model import HybridModel, load_model, save_model
from .pipeline import RiskTimeline, run_sequence, score_scenario
from .scenario import Scenario, ScenarioSpec, build_scenario, read_scenario, write_scenario
from .training import train
from .__about__ import __version__, __description__

__all__ = (
    '__version__',
    '__description__',
    'config',
    'inputs',
    'metrics',
    'oracles',
    'EngineError',
    'InvalidInputError',
    'ConfigError',
    'ParseError',
    'ChecksumError',
    'ManifestError',
    'UndefinedMetricError',
    'StateError',
    'InvariantError',
    'Event',
    'EventStream',
    'FrameSequence',
    'frames_to_events',
    'read_events',
    'write_events',
    'DirtySet',
    'EventGraph',
    'GraphConfig',
    'build_graph',
    'insert_event',
    'HybridModel',
    'load_model',
    'save_model',
    'RiskTimeline',
    'run_sequence',
    'score_scenario',
    'Scenario',
    'ScenarioSpec',
    'build_scenario',
    'read_scenario',
    'write_scenario',
    'train',
)
