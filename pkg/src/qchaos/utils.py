"""
Utility functions for qchaos.
Contains reusable helpers for number formatting, CSV output and hashing.
"""

import io
import csv
import hashlib
import logging
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """
    Format a float losslessly with 17 significant digits.

    Args:
        value: The number to format

    Returns:
        Text that parses back to the same double
    """
    return format(float(value), '.17g')


def format_energy(energy: float) -> str:
    """Shortest text for an energy value in file names (4.0 -> '4', 2.5 -> '2.5')."""
    text = repr(float(energy))
    return text[:-2] if text.endswith('.0') else text


def format_cell(value) -> str:
    if isinstance(value, bool) or isinstance(value, (int, str)):
        return str(value)
    return format_float(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """
    Render rows as CSV with a one-line header.

    Floats get 17 significant digits; ints, bools and strings are written as is.
    Line endings are always '\\n' so output bytes do not depend on the platform.

    Args:
        header: Column names
        rows: Row values

    Returns:
        CSV text
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def sha256_file(path) -> str:
    """Hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()
