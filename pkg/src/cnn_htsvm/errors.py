"""Exception hierarchy.

``DataError`` covers anything wrong with user-supplied data (corpora, frame
dumps, model files); the CLI maps it to exit code 2. ``ConfigError`` is a
usage problem and maps to exit code 1.
"""


class DataError(ValueError):
    pass


class CorpusFormatError(DataError):
    pass


class ContainerIntegrityError(DataError):
    pass


class ConfigError(ValueError):
    pass
