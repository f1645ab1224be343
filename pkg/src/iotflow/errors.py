"""Exception hierarchy.

The three base classes map onto CLI exit codes: :class:`InputError` (2),
:class:`InvariantError` (3) and :class:`ConfigError` (4).
"""


class IoTFlowError(Exception):
    exit_code = 1


class InputError(IoTFlowError):
    exit_code = 2


class InvariantError(IoTFlowError):
    exit_code = 3


class ConfigError(IoTFlowError):
    exit_code = 4


class ParseError(InputError, ValueError):
    def __init__(self, field, reason, lineno=None):
        self.field = field
        self.reason = reason
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{field}: {reason}")


class MissingInput(InputError, FileNotFoundError):
    pass


class EmptySalt(ConfigError, ValueError):
    pass


class UnparsableDomain(InputError, ValueError):
    pass


class NoAnchor(InputError, LookupError):
    pass


class EmptyInput(InputError, ValueError):
    pass


class DomainCountZero(InvariantError, ValueError):
    pass


class HierarchyCycle(InvariantError):
    pass


class ChildNotSuperset(InvariantError):
    pass


class MissingDay(InputError, LookupError):
    pass


class WindowMismatch(InputError, ValueError):
    pass


class MissingPrefix(InputError, KeyError):
    pass


class MissingAsn(InputError, KeyError):
    pass


class UnknownLabel(InputError, KeyError):
    pass


class MergedLabelWarning(UserWarning):
    pass


class UnclassifiedDomainWarning(UserWarning):
    pass
