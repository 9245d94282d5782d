"""Error taxonomy shared by all vimem modules.

Three top-level categories map onto the CLI exit codes: file-format
problems (exit 3), invariant violations (exit 4), and plain I/O failures
(OSError, exit 5). Usage errors are argparse's domain (exit 2).
"""


class VimemError(Exception):
    """Base class for all vimem-specific errors."""


class FormatError(VimemError):
    """A file does not conform to the VMEM/VGRD binary layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedError(FormatError):
    """Declared record count exceeds the available payload."""


class InvariantError(VimemError):
    """A domain-type invariant was violated (NaN payloads, bad ids, ...)."""


class DimensionMismatchError(InvariantError):
    """Vector dimensions of two operands disagree."""


class ZeroNormError(InvariantError):
    """Cosine similarity requested on a zero-norm vector."""


class UnlabeledError(InvariantError):
    """A labeled operation met the unlabeled sentinel."""


class GeometryError(InvariantError):
    """Requested stimulus geometry is infeasible (overlapping elements)."""
