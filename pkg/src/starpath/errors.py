"""Exception types raised by starpath.

The CLI maps each family to an exit code (see ``constants``); library code
raises and never exits.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence


class StarpathError(Exception):
    """Base class for every starpath-specific failure."""


class DimensionMismatchError(StarpathError, ValueError):
    """Two vectors (or a vector and a problem) disagree on dimension."""

    def __init__(self, expected: int, got: int, what: str = "vector"):
        super().__init__(f"{what} dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class NumericError(StarpathError, ArithmeticError):
    """A forward pass produced non-finite values."""

    def __init__(self, layer: int, detail: str = "non-finite activations"):
        super().__init__(f"{detail} at layer {layer}")
        self.layer = layer


class IdxFormatError(StarpathError, ValueError):
    """An IDX file is malformed; ``offset`` is the byte where parsing failed."""

    def __init__(self, path: str, offset: int, detail: str):
        super().__init__(f"{path}: {detail} (byte offset {offset})")
        self.path = path
        self.offset = offset


class TraceFormatError(StarpathError, ValueError):
    """A trace file has a bad magic, is truncated, or is otherwise corrupt."""

    def __init__(self, detail: str, offset: Optional[int] = None):
        where = f" (byte offset {offset})" if offset is not None else ""
        super().__init__(f"{detail}{where}")
        self.offset = offset


class UnsupportedTraceVersionError(TraceFormatError):
    """The trace was written by a format version this build cannot read."""

    def __init__(self, version: int, supported: int):
        super().__init__(f"unsupported trace version {version} (this build reads {supported})", offset=4)
        self.version = version


class CoverageError(StarpathError, LookupError):
    """Iterates needed for a diagnostic were not recorded in the trace."""

    def __init__(self, missing: Sequence[int], what: str = "iterates"):
        missing = sorted(int(k) for k in missing)
        preview = ", ".join(str(k) for k in missing[:10])
        more = f", ... ({len(missing)} total)" if len(missing) > 10 else ""
        super().__init__(f"missing {what} at k = {preview}{more}")
        self.missing = missing


class ReplayMismatchError(StarpathError, ValueError):
    """Re-running an epoch from its opening checkpoint disagrees with the trace."""

    def __init__(self, k: int, detail: str):
        super().__init__(f"replay diverges from the trace at k = {k}: {detail}")
        self.k = k


class DivergenceError(StarpathError, RuntimeError):
    """SGD left the finite range; ``trace`` holds everything recorded before."""

    def __init__(self, k: int, detail: str, trace: Any = None):
        super().__init__(f"divergence at iteration {k}: {detail}")
        self.k = k
        self.trace = trace


class ConfigError(StarpathError, ValueError):
    """An experiment config could not be parsed or validated."""

    def __init__(self, field: str, detail: str):
        super().__init__(f"{field}: {detail}")
        self.field = field


class FingerprintMismatchError(StarpathError, ValueError):
    """A trace was recorded on a different problem than the one supplied."""

    def __init__(self, trace_fp: str, problem_fp: str):
        super().__init__(f"trace fingerprint {trace_fp} does not match problem {problem_fp}")
        self.trace_fp = trace_fp
        self.problem_fp = problem_fp


class MissingReportError(StarpathError, FileNotFoundError):
    """A report directory lacks a CSV that a chart needs."""

    def __init__(self, path: str):
        super().__init__(f"missing report input {path}")
        self.path = path
