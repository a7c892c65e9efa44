# -*- coding: utf-8 -*-
#
__all__ = (
    'EngineError',
    'InvalidInputError',
    'ConfigError',
    'ParseError',
    'MagicError',
    'TruncatedRecordError',
    'BoundsError',
    'OrderError',
    'ChecksumError',
    'ManifestError',
    'UndefinedMetricError',
    'StateError',
    'InvariantError',
    'ValidationError',
    'exit_code',
)

#: Process exit codes used by the command line
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class EngineError(Exception):
    """Base class for all engine errors"""
    def __init__(self, msg):
        super(EngineError, self).__init__(msg)
        self.msg = msg

    def __str__(self):
        return self.msg


class InvalidInputError(EngineError):
    """A value or a precondition was rejected."""
    pass


class ConfigError(InvalidInputError):
    """Configuration is incoherent or incompatible with a model."""
    pass


class ValidationError(EngineError):
    """An helper class for schema validation errors."""
    pass


class ParseError(EngineError):
    '''
    Raised when a binary or text file does not conform to its format.

    :param str msg: The error details
    :param int offset: The byte offset where the problem was found
    :param str path: The offending file, if known
    '''
    def __init__(self, msg, offset=None, path=None):
        super(ParseError, self).__init__(msg)
        self.offset = offset
        self.path = path

    def __str__(self):
        parts = [self.msg]
        if self.offset is not None:
            parts.append('at byte offset {0}'.format(self.offset))
        if self.path:
            parts.append('in {0}'.format(self.path))
        return ' '.join(parts)


class MagicError(ParseError):
    '''Raised when a file header magic does not match'''
    pass


class TruncatedRecordError(ParseError):
    '''Raised when a file ends in the middle of a record'''
    pass


class BoundsError(ParseError):
    '''Raised when a record holds an out-of-bounds coordinate'''
    pass


class OrderError(ParseError):
    '''Raised when event timestamps go backwards'''
    pass


class ChecksumError(EngineError):
    """Container data does not match its trailing checksum."""
    pass


class ManifestError(EngineError):
    """Container manifest is malformed or disagrees with the expected tensors."""
    pass


class UndefinedMetricError(EngineError):
    """A metric is mathematically undefined for the given input."""
    pass


class StateError(EngineError):
    """An operation was called out of sequence."""
    pass


class InvariantError(EngineError):
    """An internal invariant was violated."""
    pass


def exit_code(error):
    '''
    Map an exception to the command line exit code.

    :param Exception error: the raised exception
    :rtype: int
    '''
    if isinstance(error, InvariantError):
        return EXIT_INTERNAL
    if isinstance(error, EngineError):
        return EXIT_DATA
    return EXIT_INTERNAL
