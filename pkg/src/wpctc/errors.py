"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3.
"""


class WpctcError(Exception):
    """Base class for toolkit errors."""


class ConfigError(WpctcError):
    """Invalid configuration or incompatible inputs."""


class DataError(WpctcError):
    """Malformed or unusable input data."""


class ParseError(DataError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class OOVError(DataError):
    def __init__(self, char, word):
        super().__init__(f"character {char!r} in word {word!r} is not in the wordpiece alphabet")
        self.char = char
        self.word = word
