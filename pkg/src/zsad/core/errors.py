from __future__ import annotations

from typing import Iterable, List

from zsad.core.constants import EXIT_ASSET_MISSING, EXIT_ERROR, EXIT_NUMERIC, EXIT_VALIDATION


class ZsadError(Exception):
    exit_code = EXIT_ERROR


class InputError(ZsadError):
    exit_code = EXIT_VALIDATION


class ParameterError(ZsadError):
    exit_code = EXIT_VALIDATION


class FormatError(ZsadError):
    exit_code = EXIT_VALIDATION


class DataError(ZsadError):
    exit_code = EXIT_VALIDATION


class ValidationError(ZsadError):
    """
    Collects every problem found in one pass instead of stopping at the first.
    """

    exit_code = EXIT_VALIDATION

    def __init__(self, issues: Iterable[str], subject: str = "validation") -> None:
        self.issues: List[str] = list(issues)
        lines = "\n".join(f"  - {i}" for i in self.issues)
        super().__init__(f"{subject} failed with {len(self.issues)} issue(s):\n{lines}")


class AssetError(ZsadError):
    exit_code = EXIT_ASSET_MISSING


class NumericError(ZsadError):
    """`log` holds the training log up to and including the failing step."""

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, log: Iterable[object] = ()) -> None:
        super().__init__(message)
        self.log: List[object] = list(log)
