"""Loss, Monte-Carlo and worst-case risk, randomization variances, CIs.

The loss of one realized experiment is the weighted sum of squared errors
of the habituation and instantaneous estimates across t = 2..T; the risk
of a design is the expectation of that loss over its randomization
distribution.  Over every schedule whose outcome columns live in a fixed
box, the risk of a completely randomized design is maximized by a schedule
whose arms are all identical with every column equal to the
variance-maximizing vector.  At that schedule the risk has a closed form:
the box's maximum sample variance times a sum of reciprocal arm (or
control-pool) counts, which is exactly the quantity the allocation module
minimizes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import fsum, sqrt

import numpy as np
from scipy.stats import norm

from .core import (
    ALWAYS_CONTROL,
    ALWAYS_TREATED,
    Allocation,
    AssignmentMatrix,
    Family,
    ObservedOutcomes,
    PotentialOutcomeSchedule,
    RealAllocation,
    _iter_code_arrangements,
    arms_for_horizon,
    observe,
    pulse_arm,
)
from .estimators import (
    EstimatorUndefinedError,
    _control_mask,
    _habituation,
    _instantaneous,
    estimands,
)

__all__ = [
    "LossSpec",
    "RiskReport",
    "VarianceComponents",
    "loss",
    "mc_risk",
    "exact_risk",
    "worst_case_schedule",
    "box_max_variance",
    "max_risk",
    "variance_components",
    "true_variances",
    "conservative_ci",
]

_ESTIMATORS = ("plugin", "augmented", "recycling")


@dataclass(frozen=True)
class LossSpec:
    """Which instantaneous-effect estimator the loss uses and how the two
    effect families are weighted.

    The loss is ``rho * sum_t (habituation error)^2 + (1 - rho) * sum_t
    (instantaneous error)^2``.  With ``unnormalized=True`` the value is
    doubled, so at rho = 1/2 both sums carry unit weight (the scale the
    basic and augmented allocation objectives are stated on).
    """

    estimator: str = "plugin"
    rho: float = 0.5
    k: int | None = None
    unnormalized: bool = False

    def __post_init__(self) -> None:
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.estimator == "recycling":
            if self.k is None or self.k < 1:
                raise ValueError(f"recycling loss needs k >= 1, got {self.k}")
        elif self.k is not None:
            raise ValueError(f"{self.estimator} loss does not take k")


@dataclass(frozen=True)
class RiskReport:
    """One design's analytic worst-case risk next to its Monte-Carlo
    estimate (nan marks a column that was not computed)."""

    label: str
    max_risk: float
    mc_risk: float
    mc_se: float
    draws: int

    def __post_init__(self) -> None:
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not (math.isnan(self.mc_se) or self.mc_se >= 0.0):
            raise ValueError("mc_se must be >= 0")


def _loss_from_codes(codes: np.ndarray, values: np.ndarray, hab: np.ndarray,
                     inst: np.ndarray, spec: LossSpec, exact: bool) -> float:
    """Loss of one assignment given precomputed estimand arrays.

    ``exact=True`` sums with fsum (bit-stable under unit relabeling);
    ``exact=False`` is the plain-numpy fast path used by Monte-Carlo loops,
    identical up to last-bit rounding.
    """
    T = values.shape[1]
    hab_terms = []
    inst_terms = []
    if exact:
        for t in range(2, T + 1):
            if spec.rho > 0.0:
                err = _habituation(codes, values, t) - hab[t - 2]
                hab_terms.append(err * err)
            if spec.rho < 1.0:
                err = _instantaneous(codes, values, t, spec.estimator, spec.k) - inst[t - 2]
                inst_terms.append(err * err)
        val = spec.rho * fsum(hab_terms) + (1.0 - spec.rho) * fsum(inst_terms)
    else:
        treated = codes == 1
        n_treated = int(treated.sum())
        for t in range(2, T + 1):
            col = values[:, t - 1]
            in_pulse = codes == t
            n_pulse = int(in_pulse.sum())
            if n_pulse == 0:
                raise EstimatorUndefinedError(f"estimator undefined: no units in the pulse arm at t={t}")
            pulse_mean = col[in_pulse].sum() / n_pulse
            if spec.rho > 0.0:
                if n_treated == 0:
                    raise EstimatorUndefinedError("estimator undefined: no units in the always-treated arm")
                err = (col[treated].sum() / n_treated - pulse_mean) - hab[t - 2]
                hab_terms.append(err * err)
            if spec.rho < 1.0:
                pool = _control_mask(codes, t, spec.estimator, spec.k)
                n_pool = int(pool.sum())
                if n_pool == 0:
                    raise EstimatorUndefinedError(f"estimator undefined: empty control pool at t={t}")
                err = (pulse_mean - col[pool].sum() / n_pool) - inst[t - 2]
                inst_terms.append(err * err)
        val = spec.rho * fsum(hab_terms) + (1.0 - spec.rho) * fsum(inst_terms)
    if spec.unnormalized:
        val *= 2.0
    return val


def loss(Z: AssignmentMatrix, sched: PotentialOutcomeSchedule, spec: LossSpec) -> float:
    """Squared-error loss of one realized experiment against the
    schedule's estimands.  Terms whose weight is zero are skipped, so e.g.
    rho = 1 never touches the control pool."""
    if spec.estimator == "recycling" and Z.family is Family.WEDGE:
        raise ValueError("recycling loss requires a pulse-family assignment")
    hab, inst, _ = estimands(sched)
    obs = observe(Z, sched)
    return _loss_from_codes(Z.codes, obs.values, hab.values, inst.values, spec, exact=True)


def _worker_count(requested: int | None) -> int:
    workers = 1 if requested is None else max(1, int(requested))
    cap = os.environ.get("TMINIMAX_THREADS", "")
    if cap.strip():
        workers = min(workers, max(1, int(cap)))
    return workers


def mc_risk(alloc: Allocation, sched: PotentialOutcomeSchedule, spec: LossSpec,
            draws: int, seed: int, label: str = "design",
            max_risk_value: float = math.nan, workers: int | None = None) -> RiskReport:
    """Monte-Carlo risk of the completely randomized design with the given
    arm counts.

    Replicate r draws its assignment from a generator seeded by (seed, r),
    and the replicate losses are reduced in index order, so the result is
    identical whatever the worker count (``TMINIMAX_THREADS`` caps it).
    """
    if draws < 1:
        raise ValueError(f"draws must be >= 1, got {draws}")
    if (alloc.T != sched.T) or (alloc.N != sched.N):
        raise ValueError(
            f"allocation is N={alloc.N}, T={alloc.T} but schedule is "
            f"N={sched.N}, T={sched.T}"
        )
    _check_seed(seed)
    hab, inst, _ = estimands(sched)
    stacked = sched.stacked()
    base = np.repeat(np.arange(alloc.T + 1), alloc.counts)
    unit_idx = np.arange(alloc.N)
    losses = np.empty(draws)

    def run(lo: int, hi: int) -> None:
        for r in range(lo, hi):
            rng = np.random.default_rng(np.random.SeedSequence((seed, r)))
            codes = base.copy()
            rng.shuffle(codes)
            values = stacked[codes, unit_idx, :]
            losses[r] = _loss_from_codes(
                codes, values, hab.values, inst.values, spec, exact=False
            )

    n_workers = _worker_count(workers)
    if n_workers == 1:
        run(0, draws)
    else:
        chunk = -(-draws // n_workers)
        bounds = [(lo, min(lo + chunk, draws)) for lo in range(0, draws, chunk)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: run(*b), bounds))

    mean = float(np.mean(losses))
    se = float(np.std(losses, ddof=1) / sqrt(draws)) if draws > 1 else 0.0
    return RiskReport(label, float(max_risk_value), mean, se, draws)


def exact_risk(alloc: Allocation, sched: PotentialOutcomeSchedule, spec: LossSpec) -> float:
    """Exact risk by enumerating every assignment with the given counts
    (each equally likely under complete randomization).  Only viable at
    enumeration scale; replaces Monte-Carlo sampling in oracle checks."""
    if (alloc.T != sched.T) or (alloc.N != sched.N):
        raise ValueError(
            f"allocation is N={alloc.N}, T={alloc.T} but schedule is "
            f"N={sched.N}, T={sched.T}"
        )
    hab, inst, _ = estimands(sched)
    stacked = sched.stacked()
    unit_idx = np.arange(alloc.N)
    losses = []
    for arrangement in _iter_code_arrangements(alloc.counts):
        codes = np.array(arrangement)
        values = stacked[codes, unit_idx, :]
        losses.append(
            _loss_from_codes(codes, values, hab.values, inst.values, spec, exact=True)
        )
    return fsum(losses) / len(losses)


def box_max_variance(N: int, lower: float, upper: float) -> float:
    """Largest sample variance of an N-vector with entries in
    [lower, upper]: half the entries at each end (upper gets the extra one
    when N is odd)."""
    y = _extreme_vector(N, lower, upper)
    mean = fsum(y.tolist()) / N
    return fsum(((y - mean) ** 2).tolist()) / (N - 1)


def _extreme_vector(N: int, lower: float, upper: float) -> np.ndarray:
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    if not lower < upper:
        raise ValueError(f"degenerate box [{lower}, {upper}]")
    y = np.full(N, lower, dtype=float)
    y[: (N + 1) // 2] = upper
    return y


def worst_case_schedule(N: int, T: int, lower: float, upper: float) -> PotentialOutcomeSchedule:
    """The schedule attaining the maximum risk over all box-bounded
    schedules: every arm identical, every column equal to the
    variance-maximizing vector.  All its estimands are zero, so the risk
    there is purely estimator variance."""
    y = _extreme_vector(N, lower, upper)
    matrix = np.tile(y[:, None], (1, T))
    return PotentialOutcomeSchedule({arm: matrix for arm in arms_for_horizon(T)})


def _derived_control_counts(alloc, t: int, estimator: str, k: int | None) -> float:
    """Size of the control pool at time t under the given estimator."""
    if estimator == "plugin":
        return alloc.n0
    total = alloc.n0 + sum(alloc.ne[t - 1:])  # pulses strictly after t
    if estimator == "recycling" and t - k >= 2:
        total += sum(alloc.ne[: t - k - 1])  # pulses at times <= t - k
    return total


def max_risk(alloc: Allocation | RealAllocation, T: int, vstar: float,
             spec: LossSpec) -> float:
    """Closed-form maximum risk of the completely randomized design with
    these counts, over all schedules with column sample variance at most
    ``vstar``.  Equals ``vstar`` times the matching allocation objective
    (up to the loss normalization), which is what makes the minimax
    allocations optimal."""
    if alloc.T != T:
        raise ValueError(f"allocation horizon {alloc.T} does not match T={T}")
    if vstar < 0.0:
        raise ValueError(f"vstar must be >= 0, got {vstar}")
    rho = spec.rho
    terms = []
    for i, ne in enumerate(alloc.ne):
        if ne <= 0:
            raise ValueError(f"pulse arm at t={i + 2} needs positive units")
        terms.append(1.0 / ne)
    if rho > 0.0:
        if alloc.n1 <= 0:
            raise ValueError("always-treated arm needs positive units")
        terms.append(rho * (T - 1) / alloc.n1)
    if rho < 1.0:
        for t in range(2, T + 1):
            pool = _derived_control_counts(alloc, t, spec.estimator, spec.k)
            if pool <= 0:
                raise ValueError(f"empty control pool at t={t}")
            terms.append((1.0 - rho) / pool)
    val = vstar * fsum(terms)
    return 2.0 * val if spec.unnormalized else val


@dataclass(frozen=True)
class VarianceComponents:
    """Finite-population variances at one period: per-arm outcome
    variances (v1 treated, v0 control, ve pulse) and the variances of the
    unit-level habituation and instantaneous contrasts (v1e, v0e)."""

    v1: float
    v0: float
    ve: float
    v1e: float
    v0e: float


def _population_variance(x: np.ndarray) -> float:
    n = len(x)
    mean = fsum(x.tolist()) / n
    return fsum(((x - mean) ** 2).tolist()) / (n - 1)


def variance_components(sched: PotentialOutcomeSchedule, t: int) -> VarianceComponents:
    if sched.N < 2:
        raise ValueError(f"need N >= 2 for variances, got N={sched.N}")
    if not 2 <= t <= sched.T:
        raise ValueError(f"time index {t} outside 2..{sched.T}")
    col = t - 1
    y1 = sched.matrix(ALWAYS_TREATED)[:, col]
    y0 = sched.matrix(ALWAYS_CONTROL)[:, col]
    ye = sched.matrix(pulse_arm(t))[:, col]
    return VarianceComponents(
        v1=_population_variance(y1),
        v0=_population_variance(y0),
        ve=_population_variance(ye),
        v1e=_population_variance(y1 - ye),
        v0e=_population_variance(ye - y0),
    )


def true_variances(alloc: Allocation | RealAllocation, sched: PotentialOutcomeSchedule,
                   t: int, spec: LossSpec) -> tuple[float, float]:
    """Exact randomization variances of the habituation estimate and of
    the selected instantaneous estimate under complete randomization with
    these counts.  Each is the two pools' variances over their sizes minus
    the (unidentifiable in practice) contrast variance over N."""
    if (alloc.T != sched.T) or (alloc.N != sched.N):
        raise ValueError("allocation and schedule sizes differ")
    vc = variance_components(sched, t)
    N = sched.N
    ne = alloc.ne[t - 2]
    if alloc.n1 <= 0 or ne <= 0:
        raise ValueError("variance needs positive treated and pulse counts")
    var_hab = vc.v1 / alloc.n1 + vc.ve / ne - vc.v1e / N
    pool = _derived_control_counts(alloc, t, spec.estimator, spec.k)
    if pool <= 0:
        raise ValueError(f"empty control pool at t={t}")
    var_inst = vc.v0 / pool + vc.ve / ne - vc.v0e / N
    return var_hab, var_inst


def conservative_ci(Z: AssignmentMatrix, obs: ObservedOutcomes, t: int, spec: LossSpec,
                    level: float, target: str = "instantaneous") -> tuple[float, float]:
    """Normal-approximation confidence interval for one effect at time t.

    The variance estimate sums each pool's sample variance over its size;
    dropping the negative contrast-variance term (unknowable from one
    realization) makes the interval conservative.  Both pools need at
    least two units.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if target not in ("habituation", "instantaneous"):
        raise ValueError(f"unknown target {target!r}")
    codes = Z.codes
    col = t - 1
    if target == "habituation":
        estimate = _habituation(codes, obs.values, t)
        mask_a, mask_b = codes == 1, codes == t
    else:
        if spec.estimator == "recycling" and Z.family is Family.WEDGE:
            raise ValueError("recycling estimator requires a pulse-family assignment")
        estimate = _instantaneous(codes, obs.values, t, spec.estimator, spec.k)
        mask_a, mask_b = codes == t, _control_mask(codes, t, spec.estimator, spec.k)
    variance = 0.0
    for mask in (mask_a, mask_b):
        n = int(mask.sum())
        if n < 2:
            raise ValueError(
                f"conservative variance needs >= 2 units per pool, got {n}"
            )
        variance += _population_variance(obs.values[mask, col]) / n
    z = float(norm.ppf(0.5 + level / 2.0))
    return estimate, z * sqrt(variance)


def _check_seed(seed: int) -> None:
    if seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
