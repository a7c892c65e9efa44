# -*- coding: utf-8 -*-
'''
This module give access to the JSON schemas of the engine documents
(configuration, scenario specifications, label sets and run manifests)
and allows to validate documents against them.
'''

import io
import json

from collections.abc import Mapping
from importlib import resources

from jsonschema import Draft4Validator

from eae import errors


class SchemaValidationError(errors.ValidationError):
    '''
    Raised when a document is not valid against its schema
    '''
    def __init__(self, msg, errors=None):
        super(SchemaValidationError, self).__init__(msg)
        self.errors = errors or []

    def __str__(self):
        msg = [self.msg]
        for error in sorted(self.errors, key=lambda e: [str(p) for p in e.path]):
            path = '.'.join(str(p) for p in error.path) or '<root>'
            msg.append('- {}: {}'.format(path, error.message))
            for suberror in sorted(error.context, key=lambda e: [str(p) for p in e.schema_path]):
                path = '.'.join(str(p) for p in suberror.schema_path)
                msg.append('  - {}: {}'.format(path, suberror.message))
        return '\n'.join(msg)


class LazySchema(Mapping):
    '''
    A thin wrapper around schema file lazy loading the data on first access

    :param filename str: The package relative json schema filename
    :param validator: The jsonschema validator class version
    '''
    def __init__(self, filename, validator=Draft4Validator):
        super(LazySchema, self).__init__()
        self.filename = filename
        self._schema = None
        self._validator = validator

    def _load(self):
        if not self._schema:
            source = resources.files(__name__).joinpath(self.filename)
            with io.open(str(source), encoding='utf8') as infile:
                self._schema = json.load(infile)

    def __getitem__(self, key):
        self._load()
        return self._schema.__getitem__(key)

    def __iter__(self):
        self._load()
        return self._schema.__iter__()

    def __len__(self):
        self._load()
        return self._schema.__len__()

    @property
    def validator(self):
        '''The jsonschema validator to validate against'''
        self._load()
        return self._validator(self._schema)


#: Engine configuration document
CONFIG = LazySchema('config.json')
#: Synthetic scenario specification
SCENARIO = LazySchema('scenario.json')
#: Label set of a scenario
LABELS = LazySchema('labels.json')
#: Run manifest written beside every command output
MANIFEST = LazySchema('manifest.json')

#: Map document kinds to their JSON schema
KINDS = {
    'config': CONFIG,
    'scenario': SCENARIO,
    'labels': LABELS,
    'manifest': MANIFEST,
}


def validate(data, kind):
    '''
    Validate a document against the schema of its kind.

    :param data dict: The document to validate
    :param kind str: One of ``config``, ``scenario``, ``labels``, ``manifest``
    :returns boolean: True if the document is valid
    :raises SchemaValidationError: when the document is invalid
    :raises eae.errors.InvalidInputError: when the kind is unknown
    '''
    if kind not in KINDS:
        raise errors.InvalidInputError('Unknown document kind "{}"'.format(kind))

    validator = KINDS[kind].validator

    validation_errors = list(validator.iter_errors(data))
    if validation_errors:
        raise SchemaValidationError('{} document validation failed'.format(kind),
                                    errors=validation_errors)
    return True
