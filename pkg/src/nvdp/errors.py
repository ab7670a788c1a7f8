"""Shared exception types.

The CLI maps these onto its stable exit codes (2 usage, 3 numerical
abort, 4 format error).
"""


class FormatError(Exception):
    """A binary file failed validation: bad magic, truncation, or an
    inconsistent header. The message carries a byte offset or record id
    where available."""


class NumericalAbort(Exception):
    """A numerical routine hit a non-finite intermediate it cannot
    recover from (e.g. diverged training loss)."""
