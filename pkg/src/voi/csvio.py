"""Strict CSV reading and atomic file writing."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from pathlib import Path

from .errors import SchemaError


def read_table(path, columns, numeric=()):
    """Yield ``(lineno, row_dict)`` for a CSV whose header must equal ``columns``.

    Columns named in ``numeric`` are parsed as finite floats. Any violation
    raises :class:`SchemaError` pointing at the offending line.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(path, None, "file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(path, 1, "empty file")
        header = [h.strip() for h in header]
        if header != list(columns):
            raise SchemaError(path, 1, f"expected header {','.join(columns)}, got {','.join(header)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(columns):
                raise SchemaError(path, lineno, f"expected {len(columns)} fields, got {len(raw)}")
            row = {}
            for name, cell in zip(columns, raw):
                cell = cell.strip()
                if name in numeric:
                    try:
                        value = float(cell)
                    except ValueError:
                        raise SchemaError(path, lineno, f"column {name!r}: not a number: {cell!r}") from None
                    if not math.isfinite(value):
                        raise SchemaError(path, lineno, f"column {name!r}: non-finite value")
                    row[name] = value
                else:
                    if not cell:
                        raise SchemaError(path, lineno, f"column {name!r}: empty")
                    row[name] = cell
            rows.append((lineno, row))
    return rows


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
