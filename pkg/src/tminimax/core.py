"""Treatment arms, randomized assignments, and potential-outcome schedules.

A temporal experiment assigns each of N units one treatment pattern over T
periods.  Three kinds of pattern are used: always-control, always-treated,
and a pulse at a single period t in 2..T.  In the wedge variant a "pulse"
arm keeps treating from t through T instead of treating only at t; that
variant changes the assignment vector, never the arm's identity.

Unit indices are 0-based throughout; time indices are 1-based (t = 1..T),
matching the t1..tT column headers used by the CSV formats.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Family",
    "ArmKind",
    "ArmId",
    "ALWAYS_CONTROL",
    "ALWAYS_TREATED",
    "pulse_arm",
    "arm_from_label",
    "arms_for_horizon",
    "make_arm_vector",
    "Allocation",
    "RealAllocation",
    "AssignmentMatrix",
    "draw_assignment",
    "augmented_controls",
    "PotentialOutcomeSchedule",
    "ObservedOutcomes",
    "observe",
    "ScheduleValidation",
    "validate_schedule",
    "permute_units",
    "enumerate_assignments",
    "assignment_count",
]


class Family(enum.Enum):
    """How a pulse arm expands to an assignment vector."""

    PULSE = "pulse"
    WEDGE = "wedge"


class ArmKind(enum.Enum):
    ALWAYS_CONTROL = "always0"
    ALWAYS_TREATED = "always1"
    PULSE = "pulse"


@dataclass(frozen=True)
class ArmId:
    """One treatment arm.

    ``family`` only affects how the arm expands to an assignment vector, so
    it is excluded from equality and hashing: the wedge and pulse variants
    of the same arm index the same potential outcomes.
    """

    kind: ArmKind
    t: int | None = None
    family: Family = field(default=Family.PULSE, compare=False)

    def __post_init__(self) -> None:
        if self.kind is ArmKind.PULSE:
            if self.t is None or self.t < 2:
                raise ValueError(f"pulse arm requires a time index >= 2, got {self.t}")
        elif self.t is not None:
            raise ValueError(f"{self.kind.value} arm takes no time index")

    @property
    def label(self) -> str:
        """Stable string key: ``always0``, ``always1``, or ``pulse_<t>``."""
        if self.kind is ArmKind.PULSE:
            return f"pulse_{self.t}"
        return self.kind.value

    def with_family(self, family: Family) -> "ArmId":
        return ArmId(self.kind, self.t, family)

    def __repr__(self) -> str:  # keep error messages short
        if self.kind is ArmKind.PULSE and self.family is Family.WEDGE:
            return f"ArmId({self.label}, wedge)"
        return f"ArmId({self.label})"


ALWAYS_CONTROL = ArmId(ArmKind.ALWAYS_CONTROL)
ALWAYS_TREATED = ArmId(ArmKind.ALWAYS_TREATED)


def pulse_arm(t: int, family: Family = Family.PULSE) -> ArmId:
    return ArmId(ArmKind.PULSE, t, family)


def arm_from_label(label: str, family: Family = Family.PULSE) -> ArmId:
    """Inverse of :attr:`ArmId.label`."""
    if label == ArmKind.ALWAYS_CONTROL.value:
        return ALWAYS_CONTROL
    if label == ArmKind.ALWAYS_TREATED.value:
        return ALWAYS_TREATED
    if label.startswith("pulse_"):
        try:
            t = int(label[len("pulse_"):])
        except ValueError:
            raise ValueError(f"malformed arm label {label!r}") from None
        return pulse_arm(t, family)
    raise ValueError(f"unknown arm label {label!r}")


def _check_horizon(T: int) -> None:
    if T < 2:
        raise ValueError(f"horizon T must be >= 2, got {T}")


def arms_for_horizon(T: int, family: Family = Family.PULSE) -> tuple[ArmId, ...]:
    """All T+1 arms of a horizon-T design, in canonical order."""
    _check_horizon(T)
    return (ALWAYS_CONTROL, ALWAYS_TREATED) + tuple(
        pulse_arm(t, family) for t in range(2, T + 1)
    )


def make_arm_vector(arm: ArmId, T: int) -> np.ndarray:
    """Expand an arm to its length-T 0/1 assignment vector."""
    _check_horizon(T)
    bits = np.zeros(T, dtype=np.int8)
    if arm.kind is ArmKind.ALWAYS_TREATED:
        bits[:] = 1
    elif arm.kind is ArmKind.PULSE:
        if not 2 <= arm.t <= T:
            raise ValueError(f"pulse time {arm.t} outside 2..{T}")
        if arm.family is Family.WEDGE:
            bits[arm.t - 1:] = 1
        else:
            bits[arm.t - 1] = 1
    bits.flags.writeable = False
    return bits


def _arm_code(arm: ArmId) -> int:
    """Internal arm index: 0 control, 1 treated, t for the pulse at time t."""
    if arm.kind is ArmKind.ALWAYS_CONTROL:
        return 0
    if arm.kind is ArmKind.ALWAYS_TREATED:
        return 1
    return arm.t


def _arm_for_code(code: int, family: Family) -> ArmId:
    if code == 0:
        return ALWAYS_CONTROL
    if code == 1:
        return ALWAYS_TREATED
    return pulse_arm(code, family)


@dataclass(frozen=True)
class Allocation:
    """Integer unit counts per arm: ``ne[i]`` is the count for the pulse at
    time i+2.  Zero counts are tolerated so that weighted designs can drop
    an arm entirely; estimators fail loudly on any empty arm they need."""

    n0: int
    n1: int
    ne: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ne", tuple(int(v) for v in self.ne))
        object.__setattr__(self, "n0", int(self.n0))
        object.__setattr__(self, "n1", int(self.n1))
        if not self.ne:
            raise ValueError("allocation needs at least one pulse arm (T >= 2)")
        if min(self.counts) < 0:
            raise ValueError(f"negative arm count in {self.counts}")
        if self.N < 1:
            raise ValueError("allocation is empty")

    @property
    def counts(self) -> tuple[int, ...]:
        return (self.n0, self.n1) + self.ne

    @property
    def N(self) -> int:
        return self.n0 + self.n1 + sum(self.ne)

    @property
    def T(self) -> int:
        return len(self.ne) + 1

    def count(self, arm: ArmId) -> int:
        code = _arm_code(arm)
        if code > self.T:
            raise ValueError(f"{arm!r} does not fit horizon T={self.T}")
        return self.counts[_index_for_code(code)]

    def as_real(self) -> "RealAllocation":
        return RealAllocation(float(self.n0), float(self.n1), tuple(map(float, self.ne)))


@dataclass(frozen=True)
class RealAllocation:
    """Continuous-relaxation counterpart of :class:`Allocation`."""

    n0: float
    n1: float
    ne: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ne", tuple(float(v) for v in self.ne))
        object.__setattr__(self, "n0", float(self.n0))
        object.__setattr__(self, "n1", float(self.n1))
        if not self.ne:
            raise ValueError("allocation needs at least one pulse arm (T >= 2)")
        counts = self.counts
        if not all(np.isfinite(counts)):
            raise ValueError(f"non-finite arm count in {counts}")
        if min(counts) < 0.0:
            raise ValueError(f"negative arm count in {counts}")

    @property
    def counts(self) -> tuple[float, ...]:
        return (self.n0, self.n1) + self.ne

    @property
    def N(self) -> float:
        return self.n0 + self.n1 + sum(self.ne)

    @property
    def T(self) -> int:
        return len(self.ne) + 1


def _index_for_code(code: int) -> int:
    # counts tuples are laid out (n0, n1, ne_2, ..., ne_T); pulse code t sits
    # at position t because codes 2..T line up with the pulse times
    return code


class AssignmentMatrix:
    """One realized randomization: per-unit arm labels plus the expanded
    N x T 0/1 assignment matrix."""

    def __init__(self, arm_labels: Sequence[ArmId], T: int):
        _check_horizon(T)
        labels = tuple(arm_labels)
        if not labels:
            raise ValueError("assignment needs at least one unit")
        families = {a.family for a in labels if a.kind is ArmKind.PULSE}
        if len(families) > 1:
            raise ValueError("mixed pulse/wedge families in one assignment")
        self._labels = labels
        self._T = T
        self._family = families.pop() if families else Family.PULSE
        codes = np.fromiter((_arm_code(a) for a in labels), dtype=np.int64, count=len(labels))
        if codes.max(initial=0) > T:
            bad = labels[int(np.argmax(codes))]
            raise ValueError(f"{bad!r} does not fit horizon T={T}")
        codes.flags.writeable = False
        self._codes = codes
        matrix = np.zeros((len(labels), T), dtype=np.int8)
        for i, arm in enumerate(labels):
            matrix[i] = make_arm_vector(arm, T)
        matrix.flags.writeable = False
        self._matrix = matrix

    @property
    def arm_labels(self) -> tuple[ArmId, ...]:
        return self._labels

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def codes(self) -> np.ndarray:
        """Arm code per unit (0 control, 1 treated, t for pulse at t)."""
        return self._codes

    @property
    def N(self) -> int:
        return len(self._labels)

    @property
    def T(self) -> int:
        return self._T

    @property
    def family(self) -> Family:
        return self._family

    @property
    def allocation(self) -> Allocation:
        counts = np.bincount(self._codes, minlength=self._T + 1)
        return Allocation(int(counts[0]), int(counts[1]), tuple(int(c) for c in counts[2:]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AssignmentMatrix):
            return NotImplemented
        # same arms in a different family mean different realized patterns
        return (self._T, self._family) == (other._T, other._family) and (
            self._labels == other._labels
        )

    def __repr__(self) -> str:
        return f"AssignmentMatrix(N={self.N}, T={self.T}, family={self._family.value})"


def draw_assignment(alloc: Allocation, family: Family = Family.PULSE,
                    seed: int | np.random.SeedSequence = 0) -> AssignmentMatrix:
    """Draw one completely randomized assignment with the given arm counts.

    Uniform over all arrangements of the arm-label multiset (the label
    vector is Fisher-Yates shuffled with a seeded generator), and
    deterministic given the seed (a nonnegative integer or seed sequence).
    """
    codes = np.repeat(np.arange(alloc.T + 1), alloc.counts)
    rng = np.random.default_rng(seed)
    rng.shuffle(codes)
    labels = [_arm_for_code(int(c), family) for c in codes]
    return AssignmentMatrix(labels, alloc.T)


def augmented_controls(Z: AssignmentMatrix, t: int, k: int | None = None) -> frozenset[int]:
    """Units usable as controls at time t.

    Without ``k``: always-control units plus units whose pulse comes after
    t.  With ``k``: additionally units whose pulse happened at least k
    periods before t (their treatment effect is assumed worn off).
    """
    if not 2 <= t <= Z.T:
        raise ValueError(f"time index {t} outside 2..{Z.T}")
    if k is not None and k < 1:
        raise ValueError(f"carryover order k must be >= 1, got {k}")
    codes = Z.codes
    mask = (codes == 0) | (codes > t)
    if k is not None:
        mask |= (codes >= 2) & (codes <= t - k)
    return frozenset(int(i) for i in np.nonzero(mask)[0])


class PotentialOutcomeSchedule:
    """Fixed ground truth: one N x T outcome matrix per arm, all T+1 arms.

    Matrices are copied on construction and frozen; instances are safe to
    share across threads.
    """

    def __init__(self, arms: Mapping[ArmId, np.ndarray]):
        if ALWAYS_CONTROL not in arms:
            raise ValueError("schedule is missing the always-control arm")
        shape = np.asarray(arms[ALWAYS_CONTROL], dtype=float).shape
        if len(shape) != 2 or shape[0] < 1 or shape[1] < 2:
            raise ValueError(f"arm matrices must be N x T with T >= 2, got {shape}")
        N, T = shape
        expected = arms_for_horizon(T)
        missing = [a.label for a in expected if a not in arms]
        extra = [a.label for a in arms if a not in set(expected)]
        if missing or extra:
            raise ValueError(f"schedule arms mismatch: missing={missing} extra={extra}")
        stacked = np.empty((T + 1, N, T), dtype=float)
        for arm in expected:
            m = np.asarray(arms[arm], dtype=float)
            if m.shape != (N, T):
                raise ValueError(f"{arm!r} matrix has shape {m.shape}, expected {(N, T)}")
            stacked[_arm_code(arm)] = m
        stacked.flags.writeable = False
        self._stacked = stacked
        self._N = int(N)
        self._T = int(T)

    @property
    def N(self) -> int:
        return self._N

    @property
    def T(self) -> int:
        return self._T

    @property
    def arms(self) -> tuple[ArmId, ...]:
        return arms_for_horizon(self._T)

    def matrix(self, arm: ArmId) -> np.ndarray:
        code = _arm_code(arm)
        if code > self._T:
            raise KeyError(f"{arm!r} not in a horizon-{self._T} schedule")
        return self._stacked[code]

    def stacked(self) -> np.ndarray:
        """(T+1, N, T) array indexed by arm code; read-only view."""
        return self._stacked

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PotentialOutcomeSchedule):
            return NotImplemented
        return (self._N, self._T) == (other._N, other._T) and np.array_equal(
            self._stacked, other._stacked
        )

    def __repr__(self) -> str:
        return f"PotentialOutcomeSchedule(N={self._N}, T={self._T})"


@dataclass(frozen=True)
class ObservedOutcomes:
    """What the experimenter actually sees: one outcome per unit and period."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"observed outcomes must be N x T, got shape {v.shape}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


def observe(Z: AssignmentMatrix, sched: PotentialOutcomeSchedule) -> ObservedOutcomes:
    """Realize the experiment: row i is row i of the schedule matrix for
    unit i's arm."""
    if (Z.N, Z.T) != (sched.N, sched.T):
        raise ValueError(
            f"assignment is {Z.N} x {Z.T} but schedule is {sched.N} x {sched.T}"
        )
    values = sched.stacked()[Z.codes, np.arange(Z.N), :]
    return ObservedOutcomes(values)


@dataclass(frozen=True)
class ScheduleValidation:
    """Per-cell consistency report; empty ``violations`` means valid."""

    violations: tuple[tuple[ArmId, int, int], ...]  # (arm, unit, time)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_schedule(sched: PotentialOutcomeSchedule,
                      k: int | None = None) -> ScheduleValidation:
    """Check that pulse outcomes match control outcomes wherever the two
    assignments are indistinguishable.

    Before its pulse time a pulse unit's history equals always-control, so
    those columns must agree; with ``k``, columns at least k periods after
    the pulse must agree as well.
    """
    if k is not None and k < 1:
        raise ValueError(f"carryover order k must be >= 1, got {k}")
    control = sched.matrix(ALWAYS_CONTROL)
    violations: list[tuple[ArmId, int, int]] = []
    for tp in range(2, sched.T + 1):
        arm = pulse_arm(tp)
        m = sched.matrix(arm)
        cols = list(range(0, tp - 1))  # t < tp
        if k is not None:
            cols.extend(range(tp - 1 + k, sched.T))  # t >= tp + k
        for c in cols:
            bad = np.nonzero(m[:, c] != control[:, c])[0]
            violations.extend((arm, int(i), c + 1) for i in bad)
    return ScheduleValidation(tuple(violations))


def _check_permutation(perm: Sequence[int], N: int) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    if p.shape != (N,) or not np.array_equal(np.sort(p), np.arange(N)):
        raise ValueError(f"perm is not a bijection on 0..{N - 1}")
    return p


def permute_units(x, perm: Sequence[int]):
    """Reindex units: row i of the result is row perm[i] of the input.

    Accepts an :class:`AssignmentMatrix` or a
    :class:`PotentialOutcomeSchedule` (all arm matrices are permuted
    together) and returns the same type.
    """
    if isinstance(x, AssignmentMatrix):
        p = _check_permutation(perm, x.N)
        return AssignmentMatrix([x.arm_labels[i] for i in p], x.T)
    if isinstance(x, PotentialOutcomeSchedule):
        p = _check_permutation(perm, x.N)
        return PotentialOutcomeSchedule(
            {arm: x.matrix(arm)[p, :] for arm in x.arms}
        )
    raise TypeError(f"cannot permute {type(x).__name__}")


def _iter_code_arrangements(counts: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Distinct arrangements of the arm-code multiset, lexicographically."""
    remaining = list(counts)
    total = sum(remaining)
    prefix: list[int] = []

    def rec(left: int) -> Iterator[tuple[int, ...]]:
        if left == 0:
            yield tuple(prefix)
            return
        for code, avail in enumerate(remaining):
            if avail:
                remaining[code] -= 1
                prefix.append(code)
                yield from rec(left - 1)
                prefix.pop()
                remaining[code] += 1

    return rec(total)


def enumerate_assignments(alloc: Allocation,
                          family: Family = Family.PULSE) -> Iterator[AssignmentMatrix]:
    """Every distinct assignment with the given arm counts, each of which
    is equally likely under complete randomization."""
    for codes in _iter_code_arrangements(alloc.counts):
        yield AssignmentMatrix([_arm_for_code(c, family) for c in codes], alloc.T)


def assignment_count(alloc: Allocation) -> int:
    """Number of distinct assignments with the given arm counts."""
    from math import comb

    total, result = alloc.N, 1
    for c in alloc.counts:
        result *= comb(total, c)
        total -= c
    return result
