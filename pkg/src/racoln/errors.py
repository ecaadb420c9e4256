"""Error taxonomy shared by the library and the CLI (exit codes)."""


class RacolnError(Exception):
    """Base class for all library errors; ``exit_code`` drives CLI status."""

    exit_code = 1


class InvalidArgument(RacolnError):
    """A caller-supplied value violates an operation's precondition."""

    exit_code = 2


class DegenerateInput(RacolnError):
    """Structurally valid input on which the operation is undefined (e.g. all-masked)."""

    exit_code = 3


class InvalidState(RacolnError):
    """Operation invoked on an object or pipeline in the wrong state."""

    exit_code = 4


class CorpusError(RacolnError):
    """Unreadable, empty, or malformed corpus/reference file."""

    exit_code = 5
