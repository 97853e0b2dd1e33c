"""Optimal unit allocations across arms for the four design objectives.

Every design problem here has the same shape: split N units over the T+1
arms (always-control, always-treated, one pulse per time 2..T) to minimize
a sum of reciprocals of arm counts, or of counts of arm groups.  The four
objectives differ in which estimator of the instantaneous effect they
assume:

* ``basic``      -- plug-in estimators for both effects,
* ``augmented``  -- future-pulse units reused as controls,
* ``weighted``   -- augmented, with weight ``rho`` on the habituation term
                    and ``1 - rho`` on the instantaneous term,
* ``recycling``  -- additionally reuse pulses older than ``k`` periods.

``basic``, ``augmented`` and ``weighted`` have closed-form continuous
relaxations; ``recycling`` is solved numerically.  ``integer_solve`` turns
any relaxation into an exact integer optimum via rounding plus single-unit
transfer descent, certified against ``brute_force_opt`` at small sizes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from math import fsum, sqrt

import numpy as np

from .core import Allocation, RealAllocation

__all__ = [
    "ObjectiveMode",
    "PulseCoefficients",
    "pulse_coefficients",
    "relaxed_basic",
    "relaxed_augmented",
    "relaxed_weighted",
    "relaxed_recycling",
    "objective",
    "integer_solve",
    "brute_force_opt",
    "balanced",
    "stationarity_residual",
    "SolverConvergenceError",
]

_KINDS = ("basic", "augmented", "weighted", "recycling")


@dataclass(frozen=True)
class ObjectiveMode:
    """Selects one of the four allocation objectives.

    ``rho`` is the habituation-vs-instantaneous weight of the weighted
    objective (0 puts all weight on the instantaneous effect, 1 all on the
    habituation effect); ``k`` is the carryover order of the recycling
    objective.
    """

    kind: str
    rho: float | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == "weighted":
            if self.rho is None or not 0.0 <= self.rho <= 1.0:
                raise ValueError(f"weighted mode needs rho in [0, 1], got {self.rho}")
        elif self.rho is not None:
            raise ValueError(f"{self.kind} mode does not take rho")
        if self.kind == "recycling":
            if self.k is None or self.k < 1:
                raise ValueError(f"recycling mode needs k >= 1, got {self.k}")
        elif self.k is not None:
            raise ValueError(f"{self.kind} mode does not take k")

    @classmethod
    def basic(cls) -> "ObjectiveMode":
        return cls("basic")

    @classmethod
    def augmented(cls) -> "ObjectiveMode":
        return cls("augmented")

    @classmethod
    def weighted(cls, rho: float) -> "ObjectiveMode":
        return cls("weighted", rho=float(rho))

    @classmethod
    def recycling(cls, k: int) -> "ObjectiveMode":
        return cls("recycling", k=int(k))


# ---------------------------------------------------------------------------
# Objective terms.
#
# Arm indices follow the counts layout (n0, n1, ne_2, ..., ne_T), i.e. pulse
# time t sits at index t.  Each objective is a sum of terms w / sum(counts
# over a group of arms); representing it that way gives one code path for
# values, gradients and Hessians in every mode.
# ---------------------------------------------------------------------------


def _controls_group(T: int, t: int, k: int | None) -> tuple[int, ...]:
    """Arm indices whose units are usable as controls at time t."""
    group = [0] + [tp for tp in range(t + 1, T + 1)]
    if k is not None:
        group += [tp for tp in range(2, min(t - k, T) + 1)]
    return tuple(sorted(group))


@lru_cache(maxsize=None)
def _terms(T: int, mode: ObjectiveMode) -> tuple[tuple[float, tuple[int, ...]], ...]:
    if T < 2:
        raise ValueError(f"horizon T must be >= 2, got {T}")
    pulses = range(2, T + 1)
    if mode.kind == "basic":
        terms = [(float(T - 1), (1,)), (float(T - 1), (0,))]
        terms += [(2.0, (t,)) for t in pulses]
    elif mode.kind == "augmented":
        terms = [(float(T - 1), (1,))]
        terms += [(2.0, (t,)) for t in pulses]
        terms += [(1.0, _controls_group(T, t, None)) for t in pulses]
    elif mode.kind == "weighted":
        rho = mode.rho
        terms = []
        if rho > 0.0:
            terms.append((rho * (T - 1), (1,)))
        terms += [(1.0, (t,)) for t in pulses]
        if rho < 1.0:
            terms += [(1.0 - rho, _controls_group(T, t, None)) for t in pulses]
    else:  # recycling
        terms = [(float(T - 1), (1,))]
        terms += [(2.0, (t,)) for t in pulses]
        terms += [(1.0, _controls_group(T, t, mode.k)) for t in pulses]
    return tuple(terms)


def _excluded_arm(mode: ObjectiveMode) -> int | None:
    """Arm index pinned to zero because the objective never uses it."""
    if mode.kind == "weighted":
        if mode.rho == 0.0:
            return 1
        if mode.rho == 1.0:
            return 0
    return None


@lru_cache(maxsize=None)
def _term_matrix(T: int, mode: ObjectiveMode) -> tuple[np.ndarray, np.ndarray]:
    """(weights, membership) with membership[j, i] = 1 iff arm i belongs to
    term j's count group; lets one matmul evaluate all group sizes."""
    terms = _terms(T, mode)
    w = np.array([t[0] for t in terms])
    m = np.zeros((len(terms), T + 1))
    for j, (_, group) in enumerate(terms):
        m[j, list(group)] = 1.0
    w.flags.writeable = False
    m.flags.writeable = False
    return w, m


def _objective_counts(counts, T: int, mode: ObjectiveMode) -> float:
    w, m = _term_matrix(T, mode)
    y = m @ np.asarray(counts, dtype=float)
    if y.min() <= 0.0:
        j = int(y.argmin())
        raise ValueError(
            f"objective needs positive units in arm group {_terms(T, mode)[j][1]}"
        )
    return fsum((w / y).tolist())


def objective(alloc: Allocation | RealAllocation, T: int, mode: ObjectiveMode) -> float:
    """Objective value of an allocation under the selected design regime."""
    if alloc.T != T:
        raise ValueError(f"allocation horizon {alloc.T} does not match T={T}")
    return _objective_counts(alloc.counts, T, mode)


def _gradient_counts(counts, T: int, mode: ObjectiveMode) -> np.ndarray:
    w, m = _term_matrix(T, mode)
    y = m @ np.asarray(counts, dtype=float)
    return m.T @ (-w / (y * y))


def stationarity_residual(alloc: RealAllocation, T: int, mode: ObjectiveMode) -> float:
    """Relative violation of the first-order conditions at an allocation.

    At an optimum of 'minimize objective subject to fixed total and
    nonnegative counts', all partial derivatives over arms holding units
    are equal (to minus the multiplier of the sum constraint), and any arm
    at zero must have a derivative at least that large (adding units there
    cannot help).  Arms the mode drops from the objective are skipped.
    Returns the largest violation of either condition, relative to the
    common derivative value.
    """
    g = _gradient_counts(alloc.counts, T, mode)
    counts = alloc.counts
    excl = _excluded_arm(mode)
    free = [i for i in range(T + 1) if i != excl and counts[i] > 0.0]
    pinned = [i for i in range(T + 1) if i != excl and counts[i] == 0.0]
    gi = g[free]
    center = gi.mean()
    if center == 0.0:
        return float(np.abs(gi).max())
    res = np.abs(gi - center).max()
    for i in pinned:
        res = max(res, center - g[i])  # needs g[i] >= center
    return float(res / abs(center))


# ---------------------------------------------------------------------------
# Closed-form relaxations.
# ---------------------------------------------------------------------------


def relaxed_basic(N: float, T: int) -> RealAllocation:
    """Continuous minimax allocation for the plug-in objective.

    Both always arms get N / (2 + sqrt(2(T-1))) units and every pulse arm
    gets sqrt(2/(T-1)) times that, so the pulse arms are smaller
    individually but dominate in total as T grows.
    """
    _check_relax_args(N, T)
    base = 1.0 / (2.0 + sqrt(2.0 * (T - 1)))
    n0 = N * base
    ne = N * (sqrt(2.0 / (T - 1)) * base)
    return RealAllocation(n0, n0, (ne,) * (T - 1))


@dataclass(frozen=True)
class PulseCoefficients:
    """Backward-recursive coefficients linking pulse counts to the control
    count in the augmented and weighted relaxations: the pulse arm at time
    t receives ``scale * values[t - 2]`` times the always-control count.

    ``values[i]`` is the coefficient for time t = i + 2; the final
    coefficient is exactly 1.
    """

    values: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return len(self.values) + 1

    def at(self, t: int) -> float:
        if not 2 <= t <= self.T:
            raise ValueError(f"time index {t} outside 2..{self.T}")
        return float(self.values[t - 2])

    def residuals(self) -> np.ndarray:
        """Relative error of each coefficient against its defining
        recursion (last entry: against the boundary value 1)."""
        T, c = self.T, self.values
        res = np.empty(T - 1)
        res[T - 2] = abs(c[T - 2] - 1.0)
        tail = 0.0  # sum of coefficients after t
        for t in range(T - 1, 1, -1):
            tail += c[t - 1]
            rhs = 1.0 / sqrt(1.0 / c[t - 1] ** 2 + 1.0 / (1.0 + self.scale * tail) ** 2)
            res[t - 2] = abs(c[t - 2] - rhs) / rhs
        return res


def pulse_coefficients(T: int, scale: float) -> PulseCoefficients:
    """Compute the coefficient sequence for horizon T and pulse-to-control
    scaling factor ``scale`` (sqrt(2) in the augmented design)."""
    if T < 2:
        raise ValueError(f"horizon T must be >= 2, got {T}")
    if not scale > 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    c = np.empty(T - 1)
    c[T - 2] = 1.0
    tail = 0.0
    for t in range(T - 1, 1, -1):
        tail += c[t - 1]
        c[t - 2] = 1.0 / sqrt(1.0 / c[t - 1] ** 2 + 1.0 / (1.0 + scale * tail) ** 2)
    return PulseCoefficients(c, scale)


def relaxed_augmented(N: float, T: int) -> RealAllocation:
    """Continuous minimax allocation when future pulses augment the
    controls.  Pulse counts now grow with t: later pulses serve as controls
    for more periods, so they earn more units."""
    _check_relax_args(N, T)
    root2 = sqrt(2.0)
    c = pulse_coefficients(T, root2).values
    c2 = c[0]
    denom = 1.0 + (sqrt(T - 1.0) + root2) * c2 + root2 * fsum(c[1:])
    n0 = N * (1.0 / denom)
    ne = tuple(n0 * root2 * ci for ci in c)
    n1 = N - n0 * (1.0 + root2 * fsum(c))
    return RealAllocation(n0, n1, ne)


def relaxed_weighted(N: float, T: int, rho: float) -> RealAllocation:
    """Continuous minimax allocation for the weighted objective.

    The boundary cases drop an arm exactly: rho = 0 (instantaneous effects
    only) needs no always-treated units, rho = 1 (habituation only) needs
    no always-control units.
    """
    _check_relax_args(N, T)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if rho == 1.0:
        # Limit of the general formulas: all coefficients tend to 1 and the
        # problem separates over the always-treated and pulse arms.
        root = sqrt(T - 1.0)
        n1 = N / (1.0 + root)
        ne = N / (root + (T - 1.0))
        return RealAllocation(0.0, n1, (ne,) * (T - 1))
    scale = 1.0 / sqrt(1.0 - rho)
    c = pulse_coefficients(T, scale).values
    c2 = c[0]
    denom = 1.0 + scale * (1.0 + sqrt(rho * (T - 1.0))) * c2 + scale * fsum(c[1:])
    n0 = N * (1.0 / denom)
    ne = tuple(n0 * scale * ci for ci in c)
    if rho == 0.0:
        n1 = 0.0  # the always-treated term has weight zero
    else:
        n1 = N - n0 * (1.0 + scale * fsum(c))
    return RealAllocation(n0, n1, ne)


class SolverConvergenceError(RuntimeError):
    """Numerical allocation solve did not converge; ``best`` carries the
    best iterate found."""

    def __init__(self, message: str, best: RealAllocation):
        super().__init__(message)
        self.best = best


def relaxed_recycling(N: float, T: int, k: int,
                      max_iter: int = 200, tol: float = 1e-12) -> RealAllocation:
    """Continuous minimax allocation when old pulses are recycled as
    controls after k periods.

    No closed form exists; the (convex) problem is solved on the unit
    simplex by Newton steps with an active set for counts that hit zero,
    then rescaled to N.  For small k the optimum sets the always-control
    count to exactly zero: pulse units already cover every period's
    control pool, so dedicated controls are dominated.
    """
    _check_relax_args(N, T)
    if k < 1:
        raise ValueError(f"carryover order k must be >= 1, got {k}")
    mode = ObjectiveMode.recycling(k)
    w, m = _term_matrix(T, mode)
    n = T + 1
    start = relaxed_augmented(1.0, T)
    x = np.maximum(np.array(start.counts), 1e-6)
    x /= x.sum()
    pinned = np.zeros(n, dtype=bool)
    best_x, best_res = x.copy(), math.inf

    for _ in range(max_iter):
        free = np.nonzero(~pinned)[0]
        g = _gradient_counts(x, T, mode)
        res = _kkt_residual(g, x, pinned)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return _scaled_allocation(x, N)
        y = m @ x
        H = m.T @ (m * (2.0 * w / y**3)[:, None])
        nf = len(free)
        kkt = np.zeros((nf + 1, nf + 1))
        kkt[:nf, :nf] = H[np.ix_(free, free)]
        kkt[:nf, nf] = 1.0
        kkt[nf, :nf] = 1.0
        lam = -g[free].mean()
        rhs = np.concatenate([-(g[free] + lam), [1.0 - x.sum()]])
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            break
        dx = np.zeros(n)
        dx[free] = step[:nf]
        neg = dx < 0.0
        alpha = 1.0
        if neg.any():
            alpha = min(1.0, float(0.9 * np.min(-x[neg] / dx[neg])))
        # a collapsing step means this count belongs on its zero bound
        if alpha < 1e-3:
            shrink = np.nonzero(neg & ~pinned)[0]
            drop = shrink[np.argmin(-x[shrink] / dx[shrink])]
            pinned[drop] = True
            x[drop] = 0.0
            x[~pinned] /= x[~pinned].sum()
            continue
        x = x + alpha * dx

    g = _gradient_counts(best_x, T, mode)
    if _kkt_residual(g, best_x, best_x == 0.0) <= 1e-8:
        return _scaled_allocation(best_x, N)
    raise SolverConvergenceError(
        f"recycling relaxation did not converge for T={T}, k={k}",
        _scaled_allocation(best_x, N),
    )


def _kkt_residual(g: np.ndarray, x: np.ndarray, pinned: np.ndarray) -> float:
    free = g[~np.asarray(pinned, dtype=bool)]
    center = free.mean()
    viol = np.abs(free - center).max()
    for gi in g[np.asarray(pinned, dtype=bool)]:
        viol = max(viol, center - gi)
    scale = max(abs(center), np.abs(g).max(), 1e-300)
    return float(viol / scale + abs(x.sum() - 1.0))


def _scaled_allocation(x: np.ndarray, N: float) -> RealAllocation:
    counts = x * N
    return RealAllocation(counts[0], counts[1], tuple(counts[2:]))


def _check_relax_args(N: float, T: int) -> None:
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    if T < 2:
        raise ValueError(f"horizon T must be >= 2, got {T}")


def _relaxed_for_mode(N: float, T: int, mode: ObjectiveMode) -> RealAllocation:
    if mode.kind == "basic":
        return relaxed_basic(N, T)
    if mode.kind == "augmented":
        return relaxed_augmented(N, T)
    if mode.kind == "weighted":
        return relaxed_weighted(N, T, mode.rho)
    return relaxed_recycling(N, T, mode.k)


# ---------------------------------------------------------------------------
# Integer solutions.
# ---------------------------------------------------------------------------


def balanced(N: int, T: int) -> Allocation:
    """Equal split across all T+1 arms; leftover units go one per arm in
    the fixed order always-control, always-treated, pulse 2, pulse 3, ..."""
    _check_integer_args(N, T)
    base, rem = divmod(N, T + 1)
    counts = [base] * (T + 1)
    for i in range(rem):
        counts[i] += 1
    return Allocation(counts[0], counts[1], tuple(counts[2:]))


def integer_solve(N: int, T: int, mode: ObjectiveMode) -> Allocation:
    """Exact integer minimizer of the selected objective.

    Rounds the continuous relaxation to a feasible integer point (largest
    remainders, keeping at least one unit in every arm the objective uses),
    then applies steepest single-unit transfers until no move improves.
    Among equal-objective optima reachable this way the lexicographically
    smallest count vector is returned.
    """
    _check_integer_args(N, T)
    excl = _excluded_arm(mode)
    mins = [1] * (T + 1)
    if excl is not None:
        mins[excl] = 0
    relaxed = _relaxed_for_mode(float(N), T, mode)
    counts = _round_preserving_sum(np.array(relaxed.counts), N, mins, excl)
    movable = [i for i in range(T + 1) if i != excl]

    current = _objective_counts(counts, T, mode)
    while True:
        best_val, best_move = current, None
        for src in movable:
            if counts[src] <= mins[src]:
                continue
            counts[src] -= 1
            for dst in movable:
                if dst == src:
                    continue
                counts[dst] += 1
                val = _objective_counts(counts, T, mode)
                if val < best_val:
                    best_val, best_move = val, (src, dst)
                counts[dst] -= 1
            counts[src] += 1
        if best_move is None:
            break
        counts[best_move[0]] -= 1
        counts[best_move[1]] += 1
        current = best_val

    # among equal-objective neighbors, slide toward the lexicographically
    # smallest count vector (deterministic tie-break)
    while True:
        best_tuple, best_move = tuple(counts), None
        for src in movable:
            if counts[src] <= mins[src]:
                continue
            counts[src] -= 1
            for dst in movable:
                if dst == src:
                    continue
                counts[dst] += 1
                if _objective_counts(counts, T, mode) == current:
                    cand = tuple(counts)
                    if cand < best_tuple:
                        best_tuple, best_move = cand, (src, dst)
                counts[dst] -= 1
            counts[src] += 1
        if best_move is None:
            break
        counts[best_move[0]] -= 1
        counts[best_move[1]] += 1

    return Allocation(counts[0], counts[1], tuple(counts[2:]))


def _round_preserving_sum(x: np.ndarray, N: int, mins, excl) -> list[int]:
    counts = [max(m, int(v)) for v, m in zip(np.floor(x), mins)]
    if excl is not None:
        counts[excl] = 0
    frac = x - np.floor(x)
    order_desc = sorted(range(len(x)), key=lambda i: (-frac[i], i))
    deficit = N - sum(counts)
    while deficit > 0:
        for i in order_desc:
            if deficit == 0:
                break
            if i != excl:
                counts[i] += 1
                deficit -= 1
    while deficit < 0:
        for i in reversed(order_desc):
            if deficit == 0:
                break
            if i != excl and counts[i] > mins[i]:
                counts[i] -= 1
                deficit += 1
    return counts


@lru_cache(maxsize=None)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All compositions of ``total`` into ``parts`` positive integers, one
    per row, in lexicographic order."""
    cuts = np.array(
        list(itertools.combinations(range(1, total), parts - 1)), dtype=np.int64
    )
    cols = [cuts[:, 0]]
    for j in range(1, parts - 1):
        cols.append(cuts[:, j] - cuts[:, j - 1])
    cols.append(total - cuts[:, -1])
    arr = np.column_stack(cols)
    arr.flags.writeable = False
    return arr


def _vector_objective(arr: np.ndarray, T: int, mode: ObjectiveMode) -> np.ndarray:
    a = arr.astype(float)
    n0, n1, ne = a[:, 0], a[:, 1], a[:, 2:]
    inv_ne_sum = (1.0 / ne).sum(axis=1)
    if mode.kind == "basic":
        return (T - 1) / n1 + (T - 1) / n0 + 2.0 * inv_ne_sum
    # sum of pulse counts strictly after each time t, per row
    suffix = np.cumsum(ne[:, ::-1], axis=1)[:, ::-1] - ne
    if mode.kind == "augmented":
        controls = n0[:, None] + suffix
        return (T - 1) / n1 + 2.0 * inv_ne_sum + (1.0 / controls).sum(axis=1)
    if mode.kind == "weighted":
        rho = mode.rho
        val = inv_ne_sum.copy()
        if rho > 0.0:
            val += rho * (T - 1) / n1
        if rho < 1.0:
            controls = n0[:, None] + suffix
            val += (1.0 - rho) * (1.0 / controls).sum(axis=1)
        return val
    # recycling: controls at t also include pulses at times <= t - k
    prefix = np.cumsum(ne, axis=1)
    k = mode.k
    recycled = np.zeros_like(ne)
    for i in range(ne.shape[1]):
        t = i + 2
        hi = t - k  # latest recycled pulse time
        if hi >= 2:
            recycled[:, i] = prefix[:, hi - 2]
    controls = n0[:, None] + suffix + recycled
    return (T - 1) / n1 + 2.0 * inv_ne_sum + (1.0 / controls).sum(axis=1)


def brute_force_opt(N: int, T: int, mode: ObjectiveMode) -> Allocation:
    """Exhaustive global optimum over every feasible integer allocation;
    ties broken toward the lexicographically smallest count vector.  Only
    for instances small enough to enumerate (N <= 60, T <= 5)."""
    if N > 60 or T > 5:
        raise ValueError(f"instance N={N}, T={T} too large to enumerate")
    _check_integer_args(N, T)
    excl = _excluded_arm(mode)
    parts = T + 1 if excl is None else T
    comps = _compositions(N, parts)
    if excl is not None:
        full = np.insert(comps, excl, 0, axis=1)
    else:
        full = comps
    values = _vector_objective(full, T, mode)
    vmin = values.min()
    # re-evaluate near-minimal rows with the scalar objective, whose exact
    # rounding is what integer_solve reports
    band = vmin + 1e-12 * abs(vmin) + 1e-300
    best_val, best_counts = math.inf, None
    for idx in np.nonzero(values <= band)[0]:
        counts = tuple(int(v) for v in full[idx])
        val = _objective_counts(counts, T, mode)
        if val < best_val:
            best_val, best_counts = val, counts
    return Allocation(best_counts[0], best_counts[1], best_counts[2:])


def _check_integer_args(N: int, T: int) -> None:
    if T < 2:
        raise ValueError(f"horizon T must be >= 2, got {T}")
    if N < T + 1:
        raise ValueError(f"need at least one unit per arm: N={N} < T+1={T + 1}")
