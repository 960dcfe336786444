"""Argument checks shared by the estimators and the command line."""

from __future__ import annotations

import numbers
from collections.abc import Iterable

from .molgraph import Graph
from .structio import ComplexRecord, validate_record


def check_records(X, require_truth: bool = False) -> list[ComplexRecord]:
    """Return ``X`` as a list of validated records.

    A single record is accepted and wrapped.  With ``require_truth`` every
    record must carry ligand coordinates and at least one residue, since
    training labels are derived from them.
    """
    if isinstance(X, ComplexRecord):
        X = [X]
    if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
        raise TypeError(f"expected ComplexRecord or an iterable of them, got {type(X).__name__}")
    records = list(X)
    for k, rec in enumerate(records):
        if not isinstance(rec, ComplexRecord):
            raise TypeError(f"item {k} is {type(rec).__name__}, not ComplexRecord")
        validate_record(rec)
        if require_truth and (rec.n_atoms == 0 or rec.n_residues == 0):
            raise ValueError(f"{rec.id}: training needs at least one atom and one residue")
    return records


def check_graphs(X) -> list[Graph]:
    if isinstance(X, (Graph, ComplexRecord)):
        X = [X]
    graphs = list(X)
    for k, g in enumerate(graphs):
        if not isinstance(g, (Graph, ComplexRecord)):
            raise TypeError(f"item {k} is {type(g).__name__}, not Graph or ComplexRecord")
    return graphs


def check_scalar(value, name: str, kind=numbers.Real, low=None, high=None,
                 low_inclusive: bool = True, allow_none: bool = False):
    if value is None and allow_none:
        return value
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {kind.__name__}, got {type(value).__name__}")
    if low is not None and (value < low if low_inclusive else value <= low):
        raise ValueError(f"{name} = {value} is below {'' if low_inclusive else 'or equal to '}{low}")
    if high is not None and value > high:
        raise ValueError(f"{name} = {value} exceeds {high}")
    return value


def check_choice(value, name: str, choices):
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
