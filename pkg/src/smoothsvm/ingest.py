"""Readers for labelled CSV and sparse libsvm files."""

import csv
import math

import numpy as np
import scipy.sparse as sp

from .exceptions import ParseError
from .smoothing import Dataset

FORMATS = ("csv", "sparse-libsvm")


def _label(token, line):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"label {token!r} is not a number", line) from None
    if v not in (-1.0, 1.0):
        raise ParseError(f"label {token!r} is not -1 or +1", line)
    return v


def _number(token, line, what):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not numeric", line) from None
    if not math.isfinite(v):
        raise ParseError(f"{what} {token!r} is not finite", line)
    return v


def read_csv(path):
    """Header row with a ``y`` column in {-1, +1}; every other column is a feature."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ParseError("file is empty", 1) from None
        if header.count("y") != 1:
            raise ParseError("header must contain exactly one column named 'y'", 1)
        yi = header.index("y")
        width = len(header)
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", line)
            labels.append(_label(row[yi].strip(), line))
            rows.append([_number(c.strip(), line, "cell") for k, c in enumerate(row) if k != yi])
    if not rows:
        raise ParseError("no data rows", 2)
    return Dataset(np.array(rows, dtype=float).reshape(len(rows), width - 1), np.array(labels))


def read_libsvm(path, p=None):
    """Lines ``label idx:val ...`` with 1-based, unique indices.

    ``p`` fixes the feature count; otherwise the largest index seen is used.
    Comments after ``#`` and blank lines are ignored.
    """
    labels, indptr, indices, values = [], [0], [], []
    max_idx = 0
    with open(path) as fh:
        for line, text in enumerate(fh, start=1):
            text = text.split("#", 1)[0].strip()
            if not text:
                continue
            tokens = text.split()
            labels.append(_label(tokens[0], line))
            seen = set()
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(f"feature {tok!r} is not idx:value", line)
                try:
                    idx = int(idx_s)
                except ValueError:
                    raise ParseError(f"index {idx_s!r} is not an integer", line) from None
                if idx < 1:
                    raise ParseError(f"index {idx} is not 1-based", line)
                if p is not None and idx > p:
                    raise ParseError(f"index {idx} exceeds p={p}", line)
                if idx in seen:
                    raise ParseError(f"duplicate index {idx}", line)
                seen.add(idx)
                indices.append(idx - 1)
                values.append(_number(val_s, line, "value"))
                max_idx = max(max_idx, idx)
            indptr.append(len(indices))
    if not labels:
        raise ParseError("no data rows", 1)
    ncol = p if p is not None else max_idx
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), ncol),
    )
    X.sort_indices()
    return Dataset(X, np.array(labels))


def ingest(path, fmt="csv", p=None):
    """Load ``path`` as a Dataset; ``fmt`` is ``"csv"`` or ``"sparse-libsvm"``."""
    if fmt == "csv":
        return read_csv(path)
    if fmt in ("sparse-libsvm", "libsvm"):
        return read_libsvm(path, p)
    raise ParseError(f"unknown format {fmt!r}; expected one of {FORMATS}")
