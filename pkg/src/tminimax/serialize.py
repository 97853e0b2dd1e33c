"""File formats: matrix/assignment CSV, schedule JSON, table writers.

CSV matrices carry a ``unit,t1..tT`` header and 17-significant-digit
decimal floats, which round-trip float64 exactly.  JSON documents are
canonical (sorted keys, compact separators, shortest round-trip floats),
so identical inputs always produce identical bytes.  All writes go
through a temp file and rename, never a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Sequence

import numpy as np

from .core import (
    ArmId,
    AssignmentMatrix,
    Family,
    PotentialOutcomeSchedule,
    arm_from_label,
    pulse_arm,
)

__all__ = [
    "ParseError",
    "format_float",
    "canonical_json",
    "atomic_write_text",
    "matrix_to_csv",
    "read_matrix_csv",
    "write_matrix_csv",
    "assignment_to_csv",
    "read_assignment_csv",
    "write_assignment_csv",
    "assignment_to_json",
    "assignment_from_json",
    "schedule_to_json",
    "schedule_from_json",
    "write_schedule_csv",
    "read_schedule_csv",
    "rows_to_csv",
    "rows_to_json",
]


class ParseError(ValueError):
    """Malformed input file; the message carries file, line, and column."""


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(T: int) -> list[str]:
    return ["unit"] + [f"t{t}" for t in range(1, T + 1)]


def matrix_to_csv(values: np.ndarray, fmt=format_float) -> str:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {values.shape}")
    N, T = values.shape
    lines = [",".join(_header(T))]
    for i in range(N):
        lines.append(",".join([str(i + 1)] + [fmt(v) for v in values[i]]))
    return "\n".join(lines) + "\n"


def write_matrix_csv(path: str, values: np.ndarray) -> None:
    atomic_write_text(path, matrix_to_csv(values))


def _parse_csv_lines(path: str, text: str) -> tuple[int, list[list[str]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty input, expected a unit,t1..tT matrix")
    header = lines[0].split(",")
    if header[0] != "unit" or len(header) < 3:
        raise ParseError(f"{path}, line 1: expected header unit,t1..tT, got {lines[0]!r}")
    for j, name in enumerate(header[1:], start=1):
        if name != f"t{j}":
            raise ParseError(f"{path}, line 1, column {j + 1}: expected t{j}, got {name!r}")
    if len(lines) == 1:
        raise ParseError(f"{path}: no data rows")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(
                f"{path}, line {ln}: row has {len(cells)} cells, expected {len(header)}"
            )
        rows.append(cells)
    return len(header) - 1, rows


def read_matrix_csv(path: str) -> np.ndarray:
    """Read a unit,t1..tT float matrix; errors point at the offending
    line and column."""
    with open(path) as handle:
        text = handle.read()
    T, rows = _parse_csv_lines(path, text)
    out = np.empty((len(rows), T))
    for r, cells in enumerate(rows):
        ln = r + 2
        if cells[0] != str(r + 1):
            raise ParseError(f"{path}, line {ln}: expected unit {r + 1}, got {cells[0]!r}")
        for c, cell in enumerate(cells[1:], start=1):
            try:
                out[r, c - 1] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}, line {ln}, column {c + 1}: not a number: {cell!r}"
                ) from None
    return out


# ---------------------------------------------------------------------------
# Assignment matrices.  The CSV form stores the expanded 0/1 matrix; rows
# decode back to arms (all zeros, all ones, a single one, or a run of ones
# through the last period).
# ---------------------------------------------------------------------------


def assignment_to_csv(Z: AssignmentMatrix) -> str:
    return matrix_to_csv(Z.matrix, fmt=lambda v: str(int(v)))


def write_assignment_csv(path: str, Z: AssignmentMatrix) -> None:
    atomic_write_text(path, assignment_to_csv(Z))


def _decode_bits(bits: np.ndarray, where: str) -> tuple[ArmId | None, Family | None]:
    """Returns (arm with a placeholder family, family vote).  The vote is
    None when the pattern fits both families."""
    T = len(bits)
    ones = np.nonzero(bits)[0]
    if len(ones) == 0:
        return arm_from_label("always0"), None
    if len(ones) == T:
        return arm_from_label("always1"), None
    start = int(ones[0]) + 1
    if len(ones) == 1:
        if start < 2:
            raise ParseError(f"{where}: single treated period at t=1 is not a valid arm")
        return pulse_arm(start), None if start == T else Family.PULSE
    if np.array_equal(ones, np.arange(ones[0], T)) and start >= 2:
        return pulse_arm(start), Family.WEDGE
    raise ParseError(f"{where}: row pattern {bits.tolist()} is not a valid arm")


def read_assignment_csv(path: str, family: Family = Family.PULSE) -> AssignmentMatrix:
    """Decode an assignment matrix from its 0/1 CSV form.  The family is
    inferred from the row patterns when they pin it down; ``family``
    breaks the tie when every row is ambiguous."""
    with open(path) as handle:
        text = handle.read()
    T, rows = _parse_csv_lines(path, text)
    decoded = []
    votes = set()
    for r, cells in enumerate(rows):
        ln = r + 2
        try:
            bits = np.array([int(c) for c in cells[1:]])
        except ValueError:
            raise ParseError(f"{path}, line {ln}: assignment cells must be 0 or 1") from None
        if not np.isin(bits, (0, 1)).all():
            raise ParseError(f"{path}, line {ln}: assignment cells must be 0 or 1")
        arm, vote = _decode_bits(bits, f"{path}, line {ln}")
        decoded.append(arm)
        if vote is not None:
            votes.add(vote)
    if len(votes) > 1:
        raise ParseError(f"{path}: rows mix pulse and wedge patterns")
    chosen = votes.pop() if votes else family
    labels = [a.with_family(chosen) if a.t is not None else a for a in decoded]
    return AssignmentMatrix(labels, T)


def assignment_to_json(Z: AssignmentMatrix) -> str:
    return canonical_json({
        "t": Z.T,
        "family": Z.family.value,
        "labels": [a.label for a in Z.arm_labels],
    })


def assignment_from_json(text: str) -> AssignmentMatrix:
    doc = json.loads(text)
    family = Family(doc["family"])
    labels = [arm_from_label(lbl, family) for lbl in doc["labels"]]
    return AssignmentMatrix(labels, int(doc["t"]))


# ---------------------------------------------------------------------------
# Schedules.
# ---------------------------------------------------------------------------


def schedule_to_json(sched: PotentialOutcomeSchedule) -> str:
    """Single-document schedule serialization; floats round-trip exactly."""
    return canonical_json({
        "n": sched.N,
        "t": sched.T,
        "arms": {arm.label: sched.matrix(arm).tolist() for arm in sched.arms},
    })


def schedule_from_json(text: str) -> PotentialOutcomeSchedule:
    doc = json.loads(text)
    arms = {
        arm_from_label(label): np.array(matrix, dtype=float)
        for label, matrix in doc["arms"].items()
    }
    sched = PotentialOutcomeSchedule(arms)
    if (sched.N, sched.T) != (doc["n"], doc["t"]):
        raise ParseError(
            f"schedule document says N={doc['n']}, T={doc['t']} but matrices are "
            f"{sched.N} x {sched.T}"
        )
    return sched


def write_schedule_csv(directory: str, sched: PotentialOutcomeSchedule) -> list[str]:
    """One CSV per arm, named by arm label; returns the paths written."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for arm in sched.arms:
        path = os.path.join(directory, f"{arm.label}.csv")
        write_matrix_csv(path, sched.matrix(arm))
        paths.append(path)
    return paths


def read_schedule_csv(directory: str) -> PotentialOutcomeSchedule:
    files = sorted(f for f in os.listdir(directory) if f.endswith(".csv"))
    if not files:
        raise ParseError(f"{directory}: no arm CSV files found")
    arms = {}
    for name in files:
        arms[arm_from_label(name[:-4])] = read_matrix_csv(os.path.join(directory, name))
    return PotentialOutcomeSchedule(arms)


# ---------------------------------------------------------------------------
# Row tables (design / estimate / risk / simulate outputs).
# ---------------------------------------------------------------------------


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        raise ValueError("cannot write an empty table")
    fields = list(rows[0].keys())
    lines = [",".join(fields)]
    for row in rows:
        if list(row.keys()) != fields:
            raise ValueError("all table rows must share the same columns")
        lines.append(",".join(_format_cell(row[f]) for f in fields))
    return "\n".join(lines) + "\n"


def rows_to_json(rows: Sequence[dict]) -> str:
    return canonical_json(list(rows))
