"""Asymptotic constraints, constrained values, and the agreeability checks."""

import numpy as np
import pytest

from conftest import V_ALL_CONST
from horizonlab.criteria import (
    AsymptoticConstraint,
    OptimalityReport,
    agreeable_check,
    check_constraint_membership,
    concatenation_axiom_test,
    constrained_optimality_check,
    diamond_value,
    optimal_in_view_residual,
    weak_agreeable_check,
)
from horizonlab.limits import HorizonSequence, default_family, estimate_v_inf
from horizonlab.problems import ControlSignal
from horizonlab.value import affine_field

TOL = 2e-2
U_ZERO = ControlSignal.constant(0.0)
U_HALF = ControlSignal.constant(0.5)


@pytest.fixture(scope="module")
def horizons():
    return HorizonSequence(np.array([2.0, 4.0, 8.0, 16.0]))


@pytest.fixture(scope="module")
def family(linear_l1):
    return default_family(linear_l1)


class TestMembership:
    def test_lebesgue_pass_zero_control(self, linear_l1):
        # f0 along u=0 from b=1 is -e^-t, absolutely integrable
        out = check_constraint_membership(linear_l1, [1.0], 0.0, U_ZERO, AsymptoticConstraint.lebesgue())
        assert out["verdict"] == "pass"

    def test_riemann_fail_half_control(self, linear_l1):
        # tail running cost tends to 1/2, so partial integrals diverge
        out = check_constraint_membership(linear_l1, [1.0], 0.0, U_HALF, AsymptoticConstraint.riemann())
        assert out["verdict"] == "fail"
        assert out["stat"] > 1.0

    def test_target_set_pass(self, linear_l1):
        c = AsymptoticConstraint.target_set([[0.0]], tol=1e-2)
        out = check_constraint_membership(linear_l1, [1.0], 0.0, U_ZERO, c)
        assert out["verdict"] == "pass"

    def test_target_set_unreachable(self, linear_l1):
        c = AsymptoticConstraint.target_set([[10.0]], tol=1e-2)
        out = check_constraint_membership(linear_l1, [1.0], 0.0, U_ZERO, c)
        assert out["verdict"] == "fail"

    def test_bounded_always_passes(self, linear_l1):
        out = check_constraint_membership(linear_l1, [1.0], 0.0, U_HALF, AsymptoticConstraint.bounded())
        assert out["verdict"] == "pass"

    def test_lp_membership(self, linear_l1):
        c = AsymptoticConstraint.lp(1.0)
        assert check_constraint_membership(linear_l1, [0.0], 0.0, U_ZERO, c)["verdict"] == "pass"
        assert check_constraint_membership(linear_l1, [0.0], 0.0, U_HALF, c)["verdict"] == "fail"

    def test_window_precondition(self, linear_l1):
        with pytest.raises(ValueError):
            check_constraint_membership(linear_l1, [0.0], 3.0, U_ZERO, AsymptoticConstraint.lebesgue(), T_max=10.0)

    def test_constraint_validation(self):
        with pytest.raises(ValueError):
            AsymptoticConstraint.lp(0.5)
        with pytest.raises(ValueError):
            AsymptoticConstraint.target_set([])


class TestConcatenationAxiom:
    def test_unrestricted(self, linear_l1):
        assert concatenation_axiom_test(linear_l1, AsymptoticConstraint.unrestricted(), samples=20)

    def test_target_set(self, linear_l1):
        c = AsymptoticConstraint.target_set([[0.0]], tol=5e-2)
        assert concatenation_axiom_test(linear_l1, c, samples=20, dt=0.02)

    def test_head_dependent_double_fails(self, linear_l1):
        # a predicate reading the state at its own start time is not closed
        # under concatenation
        def broken(problem, b, t, u, c, T_max=None, tol=1e-2, dt=1e-2):
            ok = float(np.linalg.norm(np.atleast_1d(b))) <= 0.5
            return {"verdict": "pass" if ok else "fail", "stat": float(np.linalg.norm(np.atleast_1d(b)))}

        assert not concatenation_axiom_test(
            linear_l1, AsymptoticConstraint.unrestricted(), samples=20, membership=broken
        )

    def test_sample_floor(self, linear_l1):
        with pytest.raises(ValueError):
            concatenation_axiom_test(linear_l1, AsymptoticConstraint.unrestricted(), samples=5)


class TestOptimalInView:
    def test_zero_control_both_profiles(self, linear_l1):
        for const in (V_ALL_CONST, 0.0):
            out = optimal_in_view_residual(affine_field([-1.0], const), linear_l1, U_ZERO, [1, 2, 3, 4, 5, 6])
            assert max(abs(v) for _, v in out) <= TOL

    def test_half_control_fails(self, linear_l1):
        out = dict(optimal_in_view_residual(affine_field([-1.0]), linear_l1, U_HALF, [1, 2, 3, 4]))
        assert out[4.0] >= 0.5

    def test_constant_shift_invariance(self, linear_l1):
        base = optimal_in_view_residual(affine_field([-1.0], 0.0), linear_l1, U_ZERO, [1, 2, 3])
        lifted = optimal_in_view_residual(affine_field([-1.0], 1.0), linear_l1, U_ZERO, [1, 2, 3])
        for (_, r0), (_, r1) in zip(base, lifted):
            assert r0 == pytest.approx(r1, abs=1e-9)


class TestDiamond:
    def test_lebesgue_value(self, linear_l1, family, horizons):
        est = diamond_value(linear_l1, [1.0], 0.0, AsymptoticConstraint.lebesgue(), family, horizons)
        assert est.limit == pytest.approx(-1.0, abs=TOL)
        assert abs(est.extras["dpp_spot_residual"]) <= 5e-2

    def test_unreachable_target_sentinel(self, linear_l1, family, horizons):
        c = AsymptoticConstraint.target_set([[10.0]], tol=1e-2)
        est = diamond_value(linear_l1, [1.0], 0.0, c, family, horizons)
        assert est.limit == np.inf
        assert est.extras["feasible_count"] == 0

    def test_unrestricted_equals_v_inf(self, linear_l1, family, horizons):
        est = diamond_value(
            linear_l1, [1.0], 0.0, AsymptoticConstraint.unrestricted(), family, horizons, spot_check=False
        )
        ref = estimate_v_inf(linear_l1, [1.0], 0.0, family, horizons)
        assert est.limit == ref.limit

    def test_monotone_filtering(self, linear_l1, family, horizons):
        free = diamond_value(linear_l1, [1.0], 0.0, AsymptoticConstraint.unrestricted(), family, horizons, spot_check=False)
        strict = diamond_value(linear_l1, [1.0], 0.0, AsymptoticConstraint.lebesgue(), family, horizons, spot_check=False)
        assert strict.limit >= free.limit - 1e-9


class TestConstrainedOptimality:
    def test_classical_pass(self, linear_l1, family, horizons):
        out = constrained_optimality_check(
            linear_l1, U_ZERO, AsymptoticConstraint.lebesgue(), horizons, family, b=[1.0]
        )
        assert out.criterion == "classical"
        assert out.verdict == "pass"

    def test_almost_strong_pass(self, linear_l1, family, horizons):
        out = constrained_optimality_check(
            linear_l1, U_ZERO, AsymptoticConstraint.riemann(), horizons, family, b=[1.0]
        )
        assert out.criterion == "almost-strong"
        assert out.verdict == "pass"

    def test_half_control_fails_membership(self, linear_l1, family, horizons):
        out = constrained_optimality_check(
            linear_l1, U_HALF, AsymptoticConstraint.lebesgue(), horizons, family, b=[1.0]
        )
        assert out.verdict == "fail"
        assert out.witness["stage"] == "membership"


class TestWeakAgreeable:
    def test_zero_control_passes(self, linear_l1, acc_spec, shared_cache):
        seq = HorizonSequence(np.array([4.0, 8.0, 16.0]))
        out = weak_agreeable_check(linear_l1, U_ZERO, acc_spec, seq, [1.0, 2.0], cache=shared_cache)
        assert out.verdict == "pass"

    def test_half_control_fails_with_gap(self, linear_l1, acc_spec, shared_cache):
        seq = HorizonSequence(np.array([4.0, 8.0, 16.0]))
        out = weak_agreeable_check(linear_l1, U_HALF, acc_spec, seq, [1.0, 2.0], cache=shared_cache)
        assert out.verdict == "fail"
        assert max(out.witness["gaps"]["2"]) >= 0.4

    def test_time_zero_trivial(self, linear_l1, acc_spec, shared_cache):
        seq = HorizonSequence(np.array([4.0, 8.0]))
        out = weak_agreeable_check(linear_l1, U_ZERO, acc_spec, seq, [0.0], cache=shared_cache)
        assert out.verdict == "pass"
        assert out.residual == pytest.approx(0.0, abs=1e-12)

    def test_times_below_horizons(self, linear_l1, acc_spec):
        with pytest.raises(ValueError):
            weak_agreeable_check(linear_l1, U_ZERO, acc_spec, HorizonSequence(np.array([2.0])), [3.0])


class TestAgreeable:
    def test_zero_control_passes(self, linear_l1, acc_spec, shared_cache):
        out = agreeable_check(linear_l1, U_ZERO, acc_spec, [4.0, 8.0, 16.0], [0.5, 1.0, 2.0], cache=shared_cache)
        assert out.verdict == "pass"

    def test_persistent_negative_control_fails(self, linear_l1, acc_spec, shared_cache):
        u = ControlSignal.constant(-0.5)
        out = agreeable_check(linear_l1, u, acc_spec, [4.0, 8.0, 16.0], [1.0, 2.0], cache=shared_cache)
        assert out.verdict == "fail"

    def test_time_zero_trivial(self, linear_l1, acc_spec, shared_cache):
        out = agreeable_check(linear_l1, U_ZERO, acc_spec, [4.0, 8.0, 16.0], [0.0], cache=shared_cache)
        assert out.verdict == "pass"
        assert out.residual == pytest.approx(0.0, abs=1e-12)


class TestReport:
    def test_summary_table(self, linear_l1, family, horizons):
        report = OptimalityReport()
        report.add(constrained_optimality_check(linear_l1, U_ZERO, AsymptoticConstraint.lebesgue(), horizons, family, b=[1.0]))
        text = report.summary_table()
        assert "classical" in text and "pass" in text
        data = report.to_json_dict()
        assert data["criteria"][0]["verdict"] == "pass"
