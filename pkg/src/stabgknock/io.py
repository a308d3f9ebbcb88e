"""Dataset ingestion, key=value configs and versioned JSON result documents."""

import csv
from datetime import datetime, timezone
import hashlib
import json
import math
import platform

import numpy as np

from .errors import (
    MissingColumn,
    MissingValue,
    NonNumericCell,
    SchemaVersionError,
    ValidationError,
)
from .spline import DesignTriple

SCHEMA_VERSION = 1
MISSING_TOKENS = {"", "na", "nan", "null", "none"}


def load_dataset(path, response="y", covariate="u", columns=None):
    """Read a CSV with a header row into a :class:`DesignTriple`.

    Parameters
    ----------
    path : str or path-like
    response, covariate : str
        Names of the ``Y`` and ``U`` columns.
    columns : sequence of str, optional
        Design columns in order; by default every other column.

    Raises
    ------
    MissingColumn, MissingValue, NonNumericCell
        Rows are numbered from 1 after the header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    for name in (response, covariate):
        if name not in header:
            raise MissingColumn(name)
    if columns is None:
        columns = [h for h in header if h not in (response, covariate)]
    for name in columns:
        if name not in header:
            raise MissingColumn(name)
    if not columns:
        raise ValidationError("no design columns left after removing response and covariate")
    pos = {h: i for i, h in enumerate(header)}
    wanted = [response, covariate] + list(columns)
    data = np.empty((len(rows), len(wanted)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ValidationError(f"row {i} has {len(row)} fields, header has {len(header)}")
        for c, name in enumerate(wanted):
            cell = row[pos[name]].strip()
            if cell.lower() in MISSING_TOKENS:
                raise MissingValue(i, name)
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(i, name, cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(i, name, cell)
            data[i - 1, c] = v
    if data.shape[0] == 0:
        raise ValidationError(f"{path}: no data rows")
    return DesignTriple(X=data[:, 2:], U=data[:, 1], Y=data[:, 0], names=tuple(columns))


def save_dataset(d, path, response="y", covariate="u"):
    """Write a :class:`DesignTriple` as CSV; floats round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response, covariate, *d.names])
        for i in range(d.n):
            w.writerow([repr(float(d.Y[i])), repr(float(d.U[i]))]
                       + [repr(float(v)) for v in d.X[i]])
    return path


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_config(path):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValidationError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings inf, -inf, nan."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(doc):
    # json writes floats with repr, the shortest string that reads back exactly
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def result_document(command, body):
    doc = {"schema_version": SCHEMA_VERSION, "command": command}
    doc.update(body)
    return doc


def write_result(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(doc))
    return path


def read_result(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    return doc


def run_manifest(command, argv, config, seed, input_path=None):
    from . import __version__

    return dict(
        command=command,
        argv=list(argv),
        config=config,
        config_digest=hashlib.sha256(
            json.dumps(to_jsonable(config), sort_keys=True).encode()).hexdigest(),
        seed=seed,
        library_version=__version__,
        numpy_version=np.__version__,
        python_version=platform.python_version(),
        input_path=None if input_path is None else str(input_path),
        input_sha256=None if input_path is None else file_digest(input_path),
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
