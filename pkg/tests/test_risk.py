"""Tests for loss, risk (Monte-Carlo, exact, worst-case), variances, CIs."""

import itertools
from math import fsum, sqrt

import numpy as np
import pytest

from conftest import constant_schedule, random_schedule, spread_allocation
from tminimax.allocation import ObjectiveMode, balanced, integer_solve, objective
from tminimax.core import (
    ALWAYS_CONTROL,
    ALWAYS_TREATED,
    Allocation,
    PotentialOutcomeSchedule,
    draw_assignment,
    observe,
    permute_units,
    pulse_arm,
)
from tminimax.estimators import estimands
from tminimax.risk import (
    LossSpec,
    box_max_variance,
    conservative_ci,
    exact_risk,
    loss,
    max_risk,
    mc_risk,
    true_variances,
    variance_components,
    worst_case_schedule,
)

SPECS = [
    LossSpec("plugin", 0.5, unnormalized=True),
    LossSpec("augmented", 0.5, unnormalized=True),
    LossSpec("recycling", 0.5, k=1, unnormalized=True),
    LossSpec("augmented", 0.25),
    LossSpec("plugin", 0.3),
    LossSpec("plugin", 1.0),
    LossSpec("plugin", 0.0),
]


def _positive_allocations(N, T):
    for parts in itertools.product(range(1, N), repeat=T):
        n1, *ne = parts
        n0 = N - n1 - sum(ne)
        if n0 >= 1:
            yield Allocation(n0, n1, tuple(ne))


class TestLossSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossSpec("plugin", 1.5)
        with pytest.raises(ValueError):
            LossSpec("recycling", 0.5)
        with pytest.raises(ValueError):
            LossSpec("plugin", 0.5, k=2)
        with pytest.raises(ValueError):
            LossSpec("huber", 0.5)


class TestLoss:
    def test_constant_schedule_gives_zero(self):
        sched = constant_schedule(6, 3)
        Z = draw_assignment(spread_allocation(6, 3), seed=0)
        for spec in SPECS:
            assert loss(Z, sched, spec) == 0.0

    def test_all_habituation_weight_ignores_control_outcomes(self):
        rng = np.random.default_rng(5)
        sched = random_schedule(rng, 6, 3)
        arms = {arm: sched.matrix(arm).copy() for arm in sched.arms}
        arms[ALWAYS_CONTROL] += 100.0
        perturbed = PotentialOutcomeSchedule(arms)
        # perturbing the control arm breaks non-anticipation, but the
        # rho=1 loss never reads it
        Z = draw_assignment(spread_allocation(6, 3), seed=1)
        spec = LossSpec("plugin", 1.0)
        assert loss(Z, sched, spec) == loss(Z, perturbed, spec)

    def test_unnormalized_doubles(self):
        rng = np.random.default_rng(6)
        sched = random_schedule(rng, 6, 3)
        Z = draw_assignment(spread_allocation(6, 3), seed=2)
        a = loss(Z, sched, LossSpec("augmented", 0.5))
        b = loss(Z, sched, LossSpec("augmented", 0.5, unnormalized=True))
        assert b == 2.0 * a

    def test_permutation_invariance_exact(self):
        rng = np.random.default_rng(7)
        N, T = 8, 3
        for spec in SPECS:
            for trial in range(10):
                sched = random_schedule(rng, N, T, k=spec.k)
                Z = draw_assignment(spread_allocation(N, T), seed=trial)
                perm = rng.permutation(N)
                assert loss(permute_units(Z, perm), permute_units(sched, perm), spec) == (
                    loss(Z, sched, spec)
                )

    def test_fast_and_exact_summation_paths_agree(self):
        from tminimax.risk import _loss_from_codes

        rng = np.random.default_rng(14)
        N, T = 9, 4
        sched = random_schedule(rng, N, T, k=1)
        hab, inst, _ = estimands(sched)
        for spec in SPECS:
            for seed in range(5):
                Z = draw_assignment(spread_allocation(N, T), seed=seed)
                values = observe(Z, sched).values
                exact = _loss_from_codes(Z.codes, values, hab.values, inst.values,
                                         spec, exact=True)
                fast = _loss_from_codes(Z.codes, values, hab.values, inst.values,
                                        spec, exact=False)
                assert fast == pytest.approx(exact, rel=1e-12, abs=1e-15)

    def test_recycling_loss_rejects_wedge(self):
        from tminimax.core import AssignmentMatrix, Family

        sched = constant_schedule(3, 3)
        Z = AssignmentMatrix(
            [ALWAYS_CONTROL, pulse_arm(2, Family.WEDGE), pulse_arm(3, Family.WEDGE)], 3
        )
        with pytest.raises(ValueError, match="pulse-family"):
            loss(Z, sched, LossSpec("recycling", 0.5, k=1))


class TestWorstCaseSchedule:
    def test_four_unit_box(self):
        sched = worst_case_schedule(4, 3, 0.0, 1.0)
        col = sched.matrix(ALWAYS_CONTROL)[:, 0]
        assert sorted(col.tolist()) == [0.0, 0.0, 1.0, 1.0]
        assert box_max_variance(4, 0.0, 1.0) == pytest.approx(1 / 3, rel=1e-15)

    def test_two_unit_box(self):
        assert box_max_variance(2, 0.0, 1.0) == pytest.approx(0.5, rel=1e-15)

    def test_estimands_vanish(self):
        hab, inst, ate = estimands(worst_case_schedule(5, 4, -2.0, 3.0))
        assert np.all(hab.values == 0) and np.all(inst.values == 0) and np.all(ate.values == 0)

    @pytest.mark.parametrize("N", [2, 3, 4, 5, 6, 7])
    def test_split_maximizes_over_all_corner_vectors(self, N):
        # brute force over every {lower, upper}^N corner; interior points
        # cannot beat corners because the variance is convex per coordinate
        lower, upper = -1.0, 2.0
        best = 0.0
        for bits in itertools.product((lower, upper), repeat=N):
            y = np.array(bits)
            best = max(best, y.var(ddof=1))
        assert box_max_variance(N, lower, upper) == pytest.approx(best, rel=1e-12)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            worst_case_schedule(4, 3, 1.0, 1.0)


class TestMaxRisk:
    def test_reference_value(self):
        spec = LossSpec("plugin", 0.5, unnormalized=True)
        assert max_risk(Allocation(2, 2, (2,)), 2, 1.0, spec) == 2.0

    def test_equals_vstar_times_objective_on_matching_scale(self):
        alloc = Allocation(4, 3, (2, 3, 5))
        pairs = [
            (LossSpec("plugin", 0.5, unnormalized=True), ObjectiveMode.basic()),
            (LossSpec("augmented", 0.5, unnormalized=True), ObjectiveMode.augmented()),
            (LossSpec("recycling", 0.5, k=2, unnormalized=True), ObjectiveMode.recycling(2)),
            (LossSpec("augmented", 0.3), ObjectiveMode.weighted(0.3)),
        ]
        for spec, mode in pairs:
            assert max_risk(alloc, 4, 1.7, spec) == pytest.approx(
                1.7 * objective(alloc, 4, mode), rel=1e-14
            )

    def test_minimax_beats_balanced(self):
        spec = LossSpec("plugin", 0.5, unnormalized=True)
        for N, T in [(30, 3), (100, 6), (1000, 20)]:
            mini = integer_solve(N, T, ObjectiveMode.basic())
            assert max_risk(mini, T, 1.0, spec) <= max_risk(balanced(N, T), T, 1.0, spec)

    def test_augmented_pool_never_hurts(self):
        for N, T in [(30, 3), (100, 6)]:
            alloc = balanced(N, T)
            plug = max_risk(alloc, T, 1.0, LossSpec("plugin", 0.5, unnormalized=True))
            aug = max_risk(alloc, T, 1.0, LossSpec("augmented", 0.5, unnormalized=True))
            assert aug <= plug

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            max_risk(Allocation(0, 2, (2,)), 2, 1.0, LossSpec("plugin", 0.5))


class TestExactAndMcRisk:
    def test_constant_schedule(self):
        sched = constant_schedule(5, 2)
        alloc = spread_allocation(5, 2)
        report = mc_risk(alloc, sched, LossSpec("plugin", 0.5), draws=50, seed=0)
        assert report.mc_risk == 0.0 and report.mc_se == 0.0

    def test_mc_matches_enumeration_within_3_se(self):
        rng = np.random.default_rng(9)
        sched = random_schedule(rng, 7, 3, k=1)
        alloc = spread_allocation(7, 3)
        for spec in SPECS[:3]:
            exact = exact_risk(alloc, sched, spec)
            report = mc_risk(alloc, sched, spec, draws=4000, seed=5)
            assert abs(report.mc_risk - exact) < 3 * report.mc_se

    def test_worker_count_never_changes_values(self):
        rng = np.random.default_rng(10)
        sched = random_schedule(rng, 8, 3)
        alloc = spread_allocation(8, 3)
        spec = LossSpec("augmented", 0.5)
        a = mc_risk(alloc, sched, spec, draws=500, seed=3, workers=1)
        b = mc_risk(alloc, sched, spec, draws=500, seed=3, workers=4)
        assert a.mc_risk == b.mc_risk and a.mc_se == b.mc_se

    def test_thread_env_caps_workers(self, monkeypatch):
        from tminimax.risk import _worker_count

        monkeypatch.setenv("TMINIMAX_THREADS", "2")
        assert _worker_count(8) == 2
        monkeypatch.delenv("TMINIMAX_THREADS")
        assert _worker_count(8) == 8

    @pytest.mark.parametrize("spec", SPECS,
                             ids=lambda s: f"{s.estimator}-rho{s.rho}")
    def test_worst_case_identity_at_enumeration_scale(self, spec):
        # exact risk on the worst-case schedule equals the closed form,
        # whatever the estimator and weighting
        for N, T in [(6, 2), (7, 3)]:
            sched = worst_case_schedule(N, T, 0.0, 1.0)
            vstar = box_max_variance(N, 0.0, 1.0)
            for alloc in _positive_allocations(N, T):
                got = exact_risk(alloc, sched, spec)
                want = max_risk(alloc, T, vstar, spec)
                assert got == pytest.approx(want, rel=1e-12)

    def test_box_schedules_never_exceed_max_risk(self):
        rng = np.random.default_rng(12)
        N, T = 7, 3
        alloc = spread_allocation(N, T)
        vstar = box_max_variance(N, 0.0, 1.0)
        spec = LossSpec("plugin", 0.5, unnormalized=True)
        bound = max_risk(alloc, T, vstar, spec)
        for _ in range(5):
            arms = {arm: rng.uniform(0.0, 1.0, size=(N, T)) for arm in
                    worst_case_schedule(N, T, 0, 1).arms}
            sched = PotentialOutcomeSchedule(arms)
            report = mc_risk(alloc, sched, spec, draws=2000, seed=8)
            assert report.mc_risk <= bound + 3 * report.mc_se

    def test_bad_draws_rejected(self):
        with pytest.raises(ValueError):
            mc_risk(spread_allocation(5, 2), constant_schedule(5, 2),
                    LossSpec("plugin"), draws=0, seed=0)

    def test_boundary_designs_evaluate_under_matching_weights(self):
        # an all-instantaneous design drops the treated arm; the matching
        # rho=0 loss never needs it
        rng = np.random.default_rng(18)
        N, T = 12, 3
        sched = random_schedule(rng, N, T)
        alloc = integer_solve(N, T, ObjectiveMode.weighted(0.0))
        assert alloc.n1 == 0
        spec = LossSpec("augmented", 0.0)
        exact = exact_risk(alloc, sched, spec)
        report = mc_risk(alloc, sched, spec, draws=3000, seed=4)
        assert abs(report.mc_risk - exact) < 3 * max(report.mc_se, 1e-12)


class TestVarianceComponents:
    def test_constant_schedule_all_zero(self):
        vc = variance_components(constant_schedule(4, 3), 2)
        assert (vc.v1, vc.v0, vc.ve, vc.v1e, vc.v0e) == (0, 0, 0, 0, 0)

    def test_worst_case_values(self):
        N = 6
        sched = worst_case_schedule(N, 3, 0.0, 1.0)
        vstar = box_max_variance(N, 0.0, 1.0)
        vc = variance_components(sched, 2)
        assert vc.v1 == vc.v0 == vc.ve == pytest.approx(vstar, rel=1e-15)
        assert vc.v1e == vc.v0e == 0.0

    def test_two_unit_hand_value(self):
        m = np.zeros((2, 2))
        treated = np.zeros((2, 2))
        treated[:, 1] = [0.0, 2.0]
        sched = PotentialOutcomeSchedule({
            ALWAYS_TREATED: treated, ALWAYS_CONTROL: m, pulse_arm(2): m,
        })
        assert variance_components(sched, 2).v1 == 2.0

    def test_single_unit_rejected(self):
        m = np.zeros((1, 2))
        sched = PotentialOutcomeSchedule({
            ALWAYS_TREATED: m, ALWAYS_CONTROL: m, pulse_arm(2): m,
        })
        with pytest.raises(ValueError):
            variance_components(sched, 2)


class TestTrueVariances:
    def test_constant_schedule(self):
        alloc = spread_allocation(6, 3)
        assert true_variances(alloc, constant_schedule(6, 3), 2, LossSpec("plugin")) == (0, 0)

    @pytest.mark.parametrize("spec", [
        LossSpec("plugin", 0.5), LossSpec("augmented", 0.5), LossSpec("recycling", 0.5, k=1),
    ], ids=lambda s: s.estimator)
    def test_matches_enumeration(self, spec):
        from tminimax.core import enumerate_assignments
        from tminimax.estimators import (
            augmented_instantaneous_estimate,
            habituation_estimate,
            instantaneous_estimate,
            recycling_instantaneous_estimate,
        )

        rng = np.random.default_rng(31)
        N, T = 6, 3
        sched = random_schedule(rng, N, T, k=spec.k)
        alloc = spread_allocation(N, T)
        pick = {
            "plugin": instantaneous_estimate,
            "augmented": augmented_instantaneous_estimate,
            "recycling": lambda Z, obs, t: recycling_instantaneous_estimate(Z, obs, t, spec.k),
        }[spec.estimator]
        for t in (2, 3):
            hab_vals, inst_vals = [], []
            for Z in enumerate_assignments(alloc):
                obs = observe(Z, sched)
                hab_vals.append(habituation_estimate(Z, obs, t))
                inst_vals.append(pick(Z, obs, t))
            var_h, var_i = true_variances(alloc, sched, t, spec)
            for vals, want in ((hab_vals, var_h), (inst_vals, var_i)):
                mean = fsum(vals) / len(vals)
                enum_var = fsum([(v - mean) ** 2 for v in vals]) / len(vals)
                assert enum_var == pytest.approx(want, rel=1e-12)

    def test_worst_case_sums_to_max_risk(self):
        N, T = 8, 3
        sched = worst_case_schedule(N, T, 0.0, 1.0)
        vstar = box_max_variance(N, 0.0, 1.0)
        alloc = spread_allocation(N, T)
        spec = LossSpec("augmented", 0.5, unnormalized=True)
        total = fsum(
            v for t in range(2, T + 1) for v in true_variances(alloc, sched, t, spec)
        )
        assert total == pytest.approx(max_risk(alloc, T, vstar, spec), rel=1e-12)

    def test_shift_invariance_and_square_scaling(self):
        rng = np.random.default_rng(41)
        N, T = 6, 3
        sched = random_schedule(rng, N, T)
        alloc = spread_allocation(N, T)
        spec = LossSpec("augmented", 0.5)
        base = true_variances(alloc, sched, 2, spec)
        shifted = PotentialOutcomeSchedule(
            {arm: sched.matrix(arm) + 9.0 for arm in sched.arms}
        )
        scaled = PotentialOutcomeSchedule(
            {arm: sched.matrix(arm) * 3.0 for arm in sched.arms}
        )
        got_shift = true_variances(alloc, shifted, 2, spec)
        got_scale = true_variances(alloc, scaled, 2, spec)
        for b, s, sc in zip(base, got_shift, got_scale):
            assert s == pytest.approx(b, rel=1e-9, abs=1e-12)
            assert sc == pytest.approx(9.0 * b, rel=1e-12)


class TestConservativeCI:
    def test_constant_outcomes(self):
        sched = constant_schedule(8, 3)
        Z = draw_assignment(spread_allocation(8, 3), seed=0)
        obs = observe(Z, sched)
        est, hw = conservative_ci(Z, obs, 2, LossSpec("plugin"), 0.95)
        assert est == 0.0 and hw == 0.0

    def test_normal_quantile(self):
        # half-width is z * sqrt(sum of within-pool variance/size); check z
        # at the 95% level against its known value
        rng = np.random.default_rng(3)
        N, T = 12, 3
        sched = random_schedule(rng, N, T)
        Z = draw_assignment(spread_allocation(N, T), seed=1)
        obs = observe(Z, sched)
        est, hw = conservative_ci(Z, obs, 2, LossSpec("plugin"), 0.95)
        codes = Z.codes
        s_pulse = obs.values[codes == 2, 1].var(ddof=1) / (codes == 2).sum()
        s_ctrl = obs.values[codes == 0, 1].var(ddof=1) / (codes == 0).sum()
        assert hw == pytest.approx(1.959964 * sqrt(s_pulse + s_ctrl), rel=1e-6)

    def test_habituation_target(self):
        rng = np.random.default_rng(4)
        N, T = 12, 3
        sched = random_schedule(rng, N, T)
        Z = draw_assignment(spread_allocation(N, T), seed=2)
        obs = observe(Z, sched)
        from tminimax.estimators import habituation_estimate

        est, hw = conservative_ci(Z, obs, 2, LossSpec("plugin"), 0.9, target="habituation")
        assert est == habituation_estimate(Z, obs, 2)
        assert hw > 0

    def test_small_pool_rejected(self):
        Z = draw_assignment(Allocation(2, 2, (1, 1)), seed=0)
        obs = observe(Z, constant_schedule(6, 3))
        with pytest.raises(ValueError, match=">= 2 units"):
            conservative_ci(Z, obs, 2, LossSpec("plugin"), 0.95)

    def test_bad_level(self):
        Z = draw_assignment(spread_allocation(8, 3), seed=0)
        obs = observe(Z, constant_schedule(8, 3))
        with pytest.raises(ValueError):
            conservative_ci(Z, obs, 2, LossSpec("plugin"), 1.0)
