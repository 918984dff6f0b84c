"""Shared report primitives: named bound checks and canonical JSON.

Every verification routine in this package returns machine-readable reports
built from plain dicts, lists, floats, and :class:`BoundCheck` entries.  The
canonical JSON form (sorted keys, no whitespace) is what the determinism
contract is stated against: identical inputs and seeds must reproduce the
canonical serialization byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

__all__ = ["BoundCheck", "to_jsonable", "canonical_json"]


@dataclass(frozen=True)
class BoundCheck:
    """One verified inequality: ``lhs <= rhs`` unless noted otherwise."""

    name: str
    lhs: float
    rhs: float
    holds: bool
    note: str = ""


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and dataclasses to JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    """Deterministic serialization used for byte-identical report comparison."""
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))
