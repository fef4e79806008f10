"""Reachability times, hull tests, product structure, and region classification."""

import numpy as np
import pytest

from horizonlab.problems import ControlProblem, ControlSignal, accumulate_cost, integrate_trajectory
from horizonlab.regularity import (
    LatticeError,
    ProductStructure,
    TimeLattice,
    di_chart_invsq,
    di_chart_sqrt,
    di_region_route,
    interior_convexhull_test,
    lipschitz_region_classifier,
    max_time_estimate,
    min_time_estimate,
    region_map_csv,
    separation_test,
    to_sqrt_chart,
    validate_product_structure,
)
from horizonlab.value import GridSpec, as_field, evaluate, solve_finite_horizon


def unit_speed_problem(n_control=21):
    return ControlProblem(
        state_dim=1,
        dynamics=lambda t, x, u: u + 0.0 * x,
        running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
        control_samples=np.linspace(-1.0, 1.0, n_control)[:, None],
        control_description="|u| <= 1",
        initial_state=[0.0],
        growth_witness=(0.0, 1.0),
        name="unit-speed",
        time_invariant_dynamics=True,
        time_invariant_cost=True,
    )


def stalling_problem():
    # u = 0 stalls: f = u only, and 0 is a control sample
    return unit_speed_problem(n_control=3)


class TestMinTime:
    def test_unit_speed_half(self):
        problem = unit_speed_problem()
        lattice = TimeLattice([-1.0], [1.0], 0.02, 0.02)
        est = min_time_estimate(problem, 0.0, [0.0], [0.5], cap=2.0, lattice=lattice)
        assert abs(est.time - 0.5) <= 2 * lattice.dt + 1e-12

    def test_already_at_target(self):
        problem = unit_speed_problem()
        lattice = TimeLattice([-1.0], [1.0], 0.02, 0.02)
        est = min_time_estimate(problem, 0.0, [0.3], [0.3], cap=1.0, lattice=lattice)
        assert est.time == 0.0

    def test_di_chart_rate_bound(self):
        # near (w, z) = (1, 0) the chart moves z at speed >= 1/(4 sqrt(y2))
        from horizonlab.regularity import auto_dt

        chart = di_chart_sqrt(a=1.0)
        h = 0.02
        lattice = TimeLattice([0.5, -0.5], [1.5, 0.5], h, auto_dt(chart, 0.0, [1.0, 0.0], h))
        w_box = (np.array([0.5]), np.array([1.5]))
        for dz in (0.1, -0.1):
            est = min_time_estimate(
                chart, 0.0, [1.0, 0.0], [dz], w_box=w_box, cap=2.0, lattice=lattice, z_indices=(1,)
            )
            assert not est.unreachable
            assert est.time <= 4.0 * 1.0 * abs(dz) + 2 * lattice.dt

    def test_start_outside_lattice_named(self):
        problem = unit_speed_problem()
        lattice = TimeLattice([-1.0], [1.0], 0.02, 0.02)
        with pytest.raises(LatticeError) as err:
            min_time_estimate(problem, 0.0, [5.0], [0.5], cap=1.0, lattice=lattice)
        assert "coordinate 0" in str(err.value)

    def test_unit_speed_oracle_fifty_queries(self):
        # |z - z'| is the exact optimal time under unit speed
        problem = unit_speed_problem()
        lattice = TimeLattice([-2.0], [2.0], 0.02, 0.02)
        rng = np.random.default_rng(4)
        for _ in range(50):
            z0 = float(rng.uniform(-1.5, 1.5))
            z1 = float(rng.uniform(-1.5, 1.5))
            est = min_time_estimate(problem, 0.0, [z0], [z1], cap=5.0, lattice=lattice)
            assert not est.unreachable
            assert abs(est.time - abs(z1 - z0)) <= 2 * (lattice.dt + lattice.h[0])


class TestMaxTime:
    def test_singleton_control_min_equals_max(self):
        problem = ControlProblem(
            state_dim=1,
            dynamics=lambda t, x, u: u + 0.0 * x,
            running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
            control_samples=[[1.0]],
            control_description="u = 1",
            initial_state=[0.0],
            growth_witness=(0.0, 1.0),
            name="drift",
            time_invariant_dynamics=True,
        )
        lattice = TimeLattice([-0.2], [1.2], 0.02, 0.02)
        mn = min_time_estimate(problem, 0.0, [0.0], [0.5], cap=2.0, lattice=lattice)
        mx = max_time_estimate(problem, 0.0, [0.0], [0.5], cap=2.0, lattice=lattice)
        assert abs(mn.time - 0.5) <= 2 * lattice.dt + 1e-12
        assert abs(mx.time - mn.time) <= 2 * lattice.dt + 1e-12

    def test_stalling_control_sentinel(self):
        problem = stalling_problem()
        lattice = TimeLattice([-1.0], [1.0], 0.05, 0.05)
        est = max_time_estimate(problem, 0.0, [0.0], [0.5], cap=2.0, lattice=lattice)
        assert est.unreachable and est.time == np.inf

    def test_linear_l1_descent_window(self, linear_l1):
        # from x = 2 all controls decrease x through 1.5: finite max, min <= max
        lattice = TimeLattice([1.3], [2.2], 0.02, 0.005)
        mn = min_time_estimate(linear_l1, 0.0, [2.0], [1.5], cap=4.0, lattice=lattice)
        mx = max_time_estimate(linear_l1, 0.0, [2.0], [1.5], cap=4.0, lattice=lattice)
        assert not mx.unreachable
        assert mx.time <= 4.0
        assert mn.time <= mx.time + 1e-12

    def test_q_ordering(self):
        # restricted min >= min, and min <= max, within two lattice steps
        problem = unit_speed_problem()
        lattice = TimeLattice([-2.0], [2.0], 0.02, 0.02)
        rng = np.random.default_rng(9)
        subset = problem.control_samples[np.abs(problem.control_samples[:, 0]) <= 0.5]
        for _ in range(10):
            z0 = float(rng.uniform(-1.0, 1.0))
            z1 = float(rng.uniform(-1.0, 1.0))
            mn = min_time_estimate(problem, 0.0, [z0], [z1], cap=8.0, lattice=lattice)
            mr = min_time_estimate(problem, 0.0, [z0], [z1], cap=8.0, lattice=lattice, control_subset=subset)
            mx = max_time_estimate(problem, 0.0, [z0], [z1], cap=8.0, lattice=lattice)
            slack = 2 * lattice.dt
            assert mr.time >= mn.time - slack
            if np.isfinite(mx.time):
                assert mn.time <= mx.time + slack


class TestHullTests:
    def test_capital_stock_interior(self, capital_stock):
        out = interior_convexhull_test(capital_stock, 0.0, [0.5])
        assert out["inside"]
        assert out["margin"] == pytest.approx(0.5, abs=1e-9)

    def test_capital_stock_outside(self, capital_stock):
        out = interior_convexhull_test(capital_stock, 0.0, [2.0])
        assert not out["inside"]

    def test_degenerate_hull_segment(self):
        problem = ControlProblem(
            state_dim=2,
            dynamics=lambda t, x, u: np.stack([u[..., 0], np.zeros(np.shape(x)[:-1])], axis=-1),
            running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
            control_samples=[[1.0], [-1.0]],
            control_description="segment",
            initial_state=[0.0, 0.0],
            growth_witness=(0.0, 1.0),
            name="segment",
        )
        out = interior_convexhull_test(problem, 0.0, [0.0, 0.0])
        assert not out["inside"]

    def test_capital_stock_separated_region(self, capital_stock):
        samples = [(0.0, [x]) for x in np.linspace(1.5, 3.0, 7)]
        out = separation_test(capital_stock, samples)
        assert out["separated"]
        assert out["margin"] >= 0.5 - 1e-9

    def test_interior_region_not_separated(self, capital_stock):
        out = separation_test(capital_stock, [(0.0, [0.5])])
        assert not out["separated"]

    def test_constant_field_margin(self):
        problem = ControlProblem(
            state_dim=2,
            dynamics=lambda t, x, u: np.broadcast_to(np.array([0.3, -0.4]), np.shape(x)),
            running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
            control_samples=[[0.0]],
            control_description="constant drift",
            initial_state=[0.0, 0.0],
            growth_witness=(0.0, 1.0),
            name="drift2",
        )
        out = separation_test(problem, [(0.0, [0.0, 0.0])])
        assert out["separated"]
        assert out["margin"] == pytest.approx(0.5, abs=2e-3)

    def test_exclusivity(self, capital_stock):
        for x in (0.2, 0.5, 0.8):
            inside = interior_convexhull_test(capital_stock, 0.0, [x])["inside"]
            separated = separation_test(capital_stock, [(0.0, [x])])["separated"]
            assert inside and not separated


@pytest.fixture(scope="module")
def cs_grid(capital_stock):
    spec = GridSpec(lo=[-0.5], hi=[2.5], h=0.01, dt=0.01, horizon=6.0)
    return solve_finite_horizon(capital_stock, spec)


@pytest.fixture(scope="module")
def cs_field(cs_grid):
    return as_field(cs_grid)


class TestProductStructure:
    def test_capital_stock_discount_split(self, capital_stock, cs_grid):
        ps = ProductStructure(
            w_indices=(), z_indices=(0,),
            R=lambda t, w: np.exp(-t) * np.ones(len(w)),
            S=lambda z: evaluate(cs_grid, 0.0, z),
        )
        xs = np.linspace(0.1, 0.9, 9)[:, None]
        out = validate_product_structure(as_field(cs_grid), ps, [0.0, 0.5, 1.0], xs, tol=2e-2)
        assert out["pass"]

    def test_autonomous_split_exact(self, linear_l1):
        field = lambda t, x: -x[..., 0] + 0.1
        ps = ProductStructure(
            w_indices=(), z_indices=(0,),
            R=lambda t, w: np.ones(len(w)),
            S=lambda z: -z[:, 0] + 0.1,
        )
        out = validate_product_structure(field, ps, [0.0, 1.0], np.linspace(-1, 1, 7)[:, None], tol=1e-12)
        assert out["pass"] and out["max_rel_error"] <= 1e-14

    def test_broken_split_fails(self, cs_grid):
        ps = ProductStructure(
            w_indices=(), z_indices=(0,),
            R=lambda t, w: np.exp(-t) * np.ones(len(w)),
            S=lambda z: evaluate(cs_grid, 0.0, z) + 0.1 * z[:, 0],
        )
        xs = np.linspace(0.1, 0.9, 9)[:, None]
        out = validate_product_structure(as_field(cs_grid), ps, [0.0, 0.5, 1.0], xs, tol=2e-2)
        assert not out["pass"]

    def test_positive_r_required(self):
        field = lambda t, x: np.ones(x.shape[:-1])
        ps = ProductStructure(w_indices=(), z_indices=(0,), R=lambda t, w: -np.ones(len(w)), S=lambda z: np.ones(len(z)))
        with pytest.raises(ValueError):
            validate_product_structure(field, ps, [0.0], np.zeros((1, 1)))


class TestClassifier:
    def test_interior_side(self, capital_stock, cs_field):
        verdicts = lipschitz_region_classifier(capital_stock, cs_field, [0.05], [0.95], n_cells=9)
        assert all(v.route == "interior" and v.hypothesis_met for v in verdicts)
        assert all(v.lipschitz_observed for v in verdicts)

    def test_separation_side(self, capital_stock, cs_field):
        verdicts = lipschitz_region_classifier(capital_stock, cs_field, [1.05], [2.2], n_cells=9)
        assert all(v.route == "separation" and v.hypothesis_met for v in verdicts)
        assert all(v.lipschitz_observed for v in verdicts)

    def test_straddling_cells_fail_hypothesis(self, capital_stock, cs_field):
        verdicts = lipschitz_region_classifier(capital_stock, cs_field, [0.96], [1.04], n_cells=1)
        assert all(not v.hypothesis_met for v in verdicts)

    def test_csv_export(self, capital_stock, cs_field, tmp_path):
        verdicts = lipschitz_region_classifier(capital_stock, cs_field, [0.1], [0.9], n_cells=4)
        path = tmp_path / "map.csv"
        region_map_csv(verdicts, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("c1,route")


class TestDoubleIntegratorRegions:
    def test_region_split(self):
        # inside the parabola y1^2 < 2 y2: two-way z control (min-time route);
        # outside with y2 > 0: z moves strictly one way (separation route)
        inside_pts = [(-0.5, 0.8), (0.3, 0.5), (0.0, 1.0), (0.8, 0.9)]
        outside_pts = [(1.5, 0.5), (-1.4, 0.4), (1.2, 0.3), (-1.6, 0.8)]
        for y1, y2 in inside_pts:
            assert y1**2 < 2 * y2
            assert di_region_route(y1, y2, a=1.0) == "min-time"
        for y1, y2 in outside_pts:
            assert y1**2 > 2 * y2 > 0
            assert di_region_route(y1, y2, a=1.0) == "separation"

    def test_chart_dynamics_match_original(self, double_integrator):
        # push the original system and the sqrt-chart system from matched
        # starts; the chart of the original endpoint must match
        chart = di_chart_sqrt(a=1.0)
        y0 = np.array([0.4, 0.9])
        u = ControlSignal.constant(0.35)
        orig = integrate_trajectory(double_integrator, y0, 0.0, u, 0.5, dt=1e-3)
        lifted = integrate_trajectory(chart, to_sqrt_chart([y0])[0], 0.0, u, 0.5, dt=1e-3)
        np.testing.assert_allclose(to_sqrt_chart([orig.final_state])[0], lifted.final_state, atol=1e-6)


class TestScalingIdentity:
    def test_rederived_exponent_holds(self, double_integrator):
        # J(0, (nu y1, nu^2 y2); u(./nu), nu T) = nu^(k+1) J(0, y; u, T) with
        # k = 2; the often-quoted k-1 pairing with horizon T/nu fails
        rng = np.random.default_rng(12)
        k = 2.0
        for _ in range(10):
            y = rng.uniform(0.3, 1.2, size=2)
            nu = float(rng.uniform(0.6, 1.7))
            T = float(rng.uniform(0.8, 1.6))
            level = float(rng.uniform(-1.0, 1.0))
            u = ControlSignal.constant(level)
            u_scaled = ControlSignal.constant(level)  # u(t/nu) of a constant is itself
            base = integrate_trajectory(double_integrator, y, 0.0, u, T, dt=1e-3)
            J = accumulate_cost(double_integrator, base, 0.0, T)
            scaled = integrate_trajectory(
                double_integrator, [nu * y[0], nu * nu * y[1]], 0.0, u_scaled, nu * T, dt=1e-3
            )
            J_scaled = accumulate_cost(double_integrator, scaled, 0.0, nu * T)
            assert J_scaled == pytest.approx(nu ** (k + 1) * J, rel=2e-2, abs=2e-2)

    def test_naive_exponent_fails(self, double_integrator):
        # a single counterexample: y = (0, 0), u = 1, so J = T^3 / 3
        u = ControlSignal.constant(1.0)
        nu, T = 1.5, 1.0
        base = integrate_trajectory(double_integrator, [0.0, 0.0], 0.0, u, T, dt=1e-3)
        J = accumulate_cost(double_integrator, base, 0.0, T)
        scaled = integrate_trajectory(double_integrator, [0.0, 0.0], 0.0, u, T / nu, dt=1e-3)
        J_naive = accumulate_cost(double_integrator, scaled, 0.0, T / nu)
        assert abs(J_naive - nu ** (2.0 - 1.0) * J) > 0.1

    def test_switched_control_scaling(self, double_integrator):
        # nonconstant control: u' must be the time-dilated signal u(t/nu)
        k, nu, T = 2.0, 1.4, 1.2
        u = ControlSignal(np.array([0.0, 0.5]), np.array([[0.8], [-0.6]]))
        u_dilated = ControlSignal(np.array([0.0, 0.5 * nu]), np.array([[0.8], [-0.6]]))
        y = np.array([0.5, 0.7])
        base = integrate_trajectory(double_integrator, y, 0.0, u, T, dt=1e-3)
        J = accumulate_cost(double_integrator, base, 0.0, T)
        scaled = integrate_trajectory(
            double_integrator, [nu * y[0], nu * nu * y[1]], 0.0, u_dilated, nu * T, dt=1e-3
        )
        J_scaled = accumulate_cost(double_integrator, scaled, 0.0, nu * T)
        assert J_scaled == pytest.approx(nu ** (k + 1) * J, rel=1e-6)
