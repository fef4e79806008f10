"""Control problems, piecewise-constant controls, trajectories, and costs.

Array conventions: states have shape ``(..., m)`` and control points shape
``(..., p)``; dynamics and running cost broadcast over the leading axes.
Time arguments broadcast against the output shape.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quad import composite_simpson

_MERGE_EPS = 1e-12
_FD_STEP = 1e-5


class BlowUpError(RuntimeError):
    """An integrated quantity stopped being finite."""

    def __init__(self, what, t_bad):
        super().__init__(f"{what} became non-finite at t={t_bad:.6g}")
        self.t_bad = float(t_bad)


@dataclass(frozen=True)
class ControlProblem:
    """An infinite-horizon control problem on R^m with a sampled control set.

    ``control_samples`` is the finite stand-in for the compact control set:
    a duplicate-free ``(n_samples, p)`` lattice.  ``growth_witness = (c1, c2)``
    asserts ``|f(t,x,u)| <= c1 |x| + c2`` on the validation box.  Set
    ``vectorized=False`` for per-point callables; they get wrapped.
    Instances are immutable and safe to share across workers.
    """

    state_dim: int
    dynamics: Callable
    running_cost: Callable
    control_samples: np.ndarray
    control_description: str
    initial_state: np.ndarray
    growth_witness: tuple
    name: str = "custom"
    dynamics_dx: Optional[Callable] = None
    running_cost_dx: Optional[Callable] = None
    validation_box: tuple = ()
    time_invariant_dynamics: bool = False
    time_invariant_cost: bool = False
    vectorized: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.control_samples, dtype=float))
        if samples.size == 0:
            raise ValueError("control_samples must be nonempty")
        if len(np.unique(samples, axis=0)) != len(samples):
            raise ValueError("control_samples must be duplicate-free")
        object.__setattr__(self, "control_samples", samples)
        object.__setattr__(
            self, "initial_state", np.asarray(self.initial_state, dtype=float).reshape(-1)
        )
        if self.initial_state.size != self.state_dim:
            raise ValueError("initial_state does not match state_dim")
        c1, c2 = self.growth_witness
        if c1 < 0 or c2 < 0:
            raise ValueError("growth_witness entries must be nonnegative")
        if not self.validation_box:
            lo = np.full(self.state_dim, -5.0)
            hi = np.full(self.state_dim, 5.0)
            object.__setattr__(self, "validation_box", (lo, hi))

    @property
    def control_dim(self):
        return self.control_samples.shape[1]

    def f(self, t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.vectorized:
            return np.asarray(self.dynamics(t, x, u), dtype=float)
        return _pointwise(self.dynamics, t, x, u, self.state_dim)

    def f0(self, t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.vectorized:
            return np.asarray(self.running_cost(t, x, u), dtype=float)
        return _pointwise(self.running_cost, t, x, u, None)

    def jac_f_x(self, t, x, u):
        """d f / d x, shape (..., m, m); central differences if no analytic form."""
        if self.dynamics_dx is not None:
            return np.asarray(self.dynamics_dx(t, np.asarray(x, float), np.asarray(u, float)), dtype=float)
        x = np.asarray(x, dtype=float)
        m = self.state_dim
        cols = []
        for j in range(m):
            dx = np.zeros(m)
            dx[j] = _FD_STEP
            cols.append((self.f(t, x + dx, u) - self.f(t, x - dx, u)) / (2 * _FD_STEP))
        return np.stack(cols, axis=-1)

    def grad_f0_x(self, t, x, u):
        """d f0 / d x, shape (..., m); central differences if no analytic form."""
        if self.running_cost_dx is not None:
            return np.asarray(self.running_cost_dx(t, np.asarray(x, float), np.asarray(u, float)), dtype=float)
        x = np.asarray(x, dtype=float)
        m = self.state_dim
        comps = []
        for j in range(m):
            dx = np.zeros(m)
            dx[j] = _FD_STEP
            comps.append((self.f0(t, x + dx, u) - self.f0(t, x - dx, u)) / (2 * _FD_STEP))
        return np.stack(comps, axis=-1)

    def contains_control(self, u: "ControlSignal", slack=1e-9) -> bool:
        """Do all signal values sit inside the sampled control box?"""
        lo = self.control_samples.min(axis=0) - slack
        hi = self.control_samples.max(axis=0) + slack
        return bool(np.all((u.values >= lo) & (u.values <= hi)))

    def cache_key(self):
        items = tuple(sorted((k, repr(v)) for k, v in self.params.items()))
        return (self.name, items, self.control_samples.tobytes(), self.initial_state.tobytes())


def _pointwise(fn, t, x, u, m):
    if x.ndim == 1 and u.ndim == 1:
        return np.asarray(fn(t, x, u), dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    xb = np.broadcast_to(x, lead + x.shape[-1:]).reshape(-1, x.shape[-1])
    ub = np.broadcast_to(u, lead + u.shape[-1:]).reshape(-1, u.shape[-1])
    tb = np.broadcast_to(np.asarray(t, dtype=float), lead).reshape(-1)
    out = np.asarray([fn(tt, xx, uu) for tt, xx, uu in zip(tb, xb, ub)], dtype=float)
    return out.reshape(lead + ((m,) if m else ()))


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``.

    The last value extends to +infinity and evaluation is right-continuous,
    so the signal is defined for every t >= 0.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if bp.size == 0 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if bp.size > 1 and not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if vals.shape[0] != bp.size:
            raise ValueError("need one value per interval")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, u):
        return cls(np.array([0.0]), np.atleast_1d(np.asarray(u, dtype=float))[None, :])

    @property
    def control_dim(self):
        return self.values.shape[1]

    def value_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, None)
        out = self.values[idx]
        return out if t.ndim else out.reshape(-1)

    def breakpoints_within(self, a, b):
        bp = self.breakpoints
        return bp[(bp > a + _MERGE_EPS) & (bp < b - _MERGE_EPS)]

    def descriptor(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}


def concatenate(u1: ControlSignal, T: float, u2: ControlSignal) -> ControlSignal:
    """Switch from ``u1`` to ``u2`` at time T; ``u2`` keeps absolute time."""
    if T < 0:
        raise ValueError("switch time must be nonnegative")
    if T == 0:
        return u2
    keep = u1.breakpoints < T - _MERGE_EPS
    bp = list(u1.breakpoints[keep])
    vals = list(u1.values[keep])
    bp.append(T)
    vals.append(u2.value_at(T))
    later = u2.breakpoints > T + _MERGE_EPS
    bp.extend(u2.breakpoints[later])
    vals.extend(u2.values[later])
    # drop intervals that repeat the previous value
    out_bp, out_vals = [bp[0]], [vals[0]]
    for b, v in zip(bp[1:], vals[1:]):
        if np.array_equal(v, out_vals[-1]):
            continue
        out_bp.append(b)
        out_vals.append(v)
    return ControlSignal(np.asarray(out_bp), np.asarray(out_vals))


@dataclass(frozen=True)
class Trajectory:
    """States of one motion sampled on the integration grid."""

    start_time: float
    time_nodes: np.ndarray
    states: np.ndarray
    control_ref: ControlSignal
    step: float

    @property
    def end_time(self):
        return float(self.time_nodes[-1])

    @property
    def final_state(self):
        return self.states[-1]

    def state_at(self, s):
        s = np.asarray(s, dtype=float)
        out = np.stack(
            [np.interp(s, self.time_nodes, self.states[:, j]) for j in range(self.states.shape[1])],
            axis=-1,
        )
        return out


def _node_grid(t0, T, dt, breakpoints, extra=()):
    n = int(np.ceil((T - t0) / dt - 1e-9))
    nodes = t0 + dt * np.arange(n + 1)
    nodes = np.concatenate([nodes, np.asarray(breakpoints, dtype=float), np.asarray(extra, dtype=float), [T]])
    nodes = nodes[(nodes >= t0 - _MERGE_EPS) & (nodes <= T + _MERGE_EPS)]
    nodes = np.unique(nodes)
    keep = np.concatenate([[True], np.diff(nodes) > _MERGE_EPS])
    nodes = nodes[keep]
    nodes[0], nodes[-1] = t0, T
    return nodes


def _rk4_step(problem, t, x, u, dt):
    k1 = problem.f(t, x, u)
    k2 = problem.f(t + dt / 2, x + dt / 2 * k1, u)
    k3 = problem.f(t + dt / 2, x + dt / 2 * k2, u)
    k4 = problem.f(t + dt, x + dt * k3, u)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_trajectory(problem, b, t0, u: ControlSignal, T, dt=1e-3) -> Trajectory:
    """Integrate dx/dt = f(t, x, u(t)) on [t0, T] with classical 4th-order steps.

    Steps split at the control breakpoints so each step sees a constant
    control.  Raises BlowUpError naming the first bad time if the state
    leaves the finite range, ValueError on a nonpositive step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T <= t0:
        raise ValueError("need T > t0")
    b = np.asarray(b, dtype=float).reshape(-1)
    if not np.all(np.isfinite(b)):
        raise ValueError("initial state must be finite")
    nodes = _node_grid(t0, T, dt, u.breakpoints_within(t0, T))
    states = np.empty((nodes.size, b.size))
    states[0] = b
    u_steps = u.value_at(nodes[:-1])
    for k in range(nodes.size - 1):
        h = nodes[k + 1] - nodes[k]
        states[k + 1] = _rk4_step(problem, nodes[k], states[k], u_steps[k], h)
        if not np.all(np.isfinite(states[k + 1])):
            raise BlowUpError("state", nodes[k + 1])
    return Trajectory(float(t0), nodes, states, u, float(dt))


@dataclass(frozen=True)
class ControlFamily:
    """A batch of piecewise-constant controls sharing one breakpoint grid.

    values has shape (n_members, k, p) against breakpoints of length k; this
    common grid is what makes batched integration and batched cost prefixes
    cheap.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if bp[0] != 0.0 or (bp.size > 1 and not np.all(np.diff(bp) > 0)):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if vals.shape[0] == 0:
            raise ValueError("family must have at least one member")
        if vals.shape[1] != bp.size:
            raise ValueError("need one value row per interval")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constants(cls, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(np.array([0.0]), samples[:, None, :])

    @classmethod
    def switched(cls, levels, switch_times, max_switches=1, include_constants=True):
        """Constants plus all k-switch level sequences on the given time lattice."""
        levels = np.atleast_2d(np.asarray(levels, dtype=float))
        times = np.asarray(sorted(switch_times), dtype=float)
        bp = np.concatenate([[0.0], times])
        k = bp.size
        members = []
        if include_constants:
            for lv in levels:
                members.append(np.tile(lv, (k, 1)))
        if max_switches >= 1:
            for t_idx in range(1, k):
                for a in levels:
                    for b in levels:
                        if np.array_equal(a, b):
                            continue
                        row = np.tile(a, (k, 1))
                        row[t_idx:] = b
                        members.append(row)
        if max_switches >= 2:
            for i in range(1, k):
                for j in range(i + 1, k):
                    for a in levels:
                        for b in levels:
                            for c in levels:
                                if np.array_equal(a, b) or np.array_equal(b, c):
                                    continue
                                row = np.tile(a, (k, 1))
                                row[i:] = b
                                row[j:] = c
                                members.append(row)
        vals = np.stack(members)
        return cls(bp, vals)

    @property
    def size(self):
        return self.values.shape[0]

    def member(self, i) -> ControlSignal:
        vals = self.values[i]
        keep = [0]
        for j in range(1, vals.shape[0]):
            if not np.array_equal(vals[j], vals[keep[-1]]):
                keep.append(j)
        return ControlSignal(self.breakpoints[keep], vals[keep])

    def values_at(self, t):
        idx = int(np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, None))
        return self.values[:, idx, :]

    def shifted(self, offset):
        """Same switching pattern started at ``offset`` instead of 0."""
        bp = np.concatenate([[0.0], self.breakpoints[1:] + offset]) if offset else self.breakpoints
        return ControlFamily(bp, self.values)


@dataclass(frozen=True)
class FamilyTrajectories:
    start_time: float
    time_nodes: np.ndarray
    states: np.ndarray  # (n_nodes, n_members, m)
    family: ControlFamily
    step: float

    def states_at_node(self, t):
        k = int(np.argmin(np.abs(self.time_nodes - t)))
        if abs(self.time_nodes[k] - t) > 1e-9:
            raise ValueError(f"t={t} is not an integration node")
        return self.states[k]


def integrate_family(problem, b, t0, family: ControlFamily, T, dt=1e-2, extra_nodes=()) -> FamilyTrajectories:
    """Batched RK4 over every family member simultaneously."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T <= t0:
        raise ValueError("need T > t0")
    b = np.asarray(b, dtype=float)
    n_mem = family.size
    if b.ndim == 1:
        b = np.broadcast_to(b, (n_mem, b.size))
    bps = family.breakpoints
    bps = bps[(bps > t0 + _MERGE_EPS) & (bps < T - _MERGE_EPS)]
    nodes = _node_grid(t0, T, dt, bps, extra=extra_nodes)
    states = np.empty((nodes.size, n_mem, problem.state_dim))
    states[0] = b
    for k in range(nodes.size - 1):
        h = nodes[k + 1] - nodes[k]
        u = family.values_at(nodes[k])
        states[k + 1] = _rk4_step(problem, nodes[k], states[k], u, h)
    if not np.all(np.isfinite(states[-1])):
        bad = np.where(~np.isfinite(states).reshape(nodes.size, -1).all(axis=1))[0][0]
        raise BlowUpError("family state", nodes[bad])
    return FamilyTrajectories(float(t0), nodes, states, family, float(dt))


def family_cost_between(problem, ft: FamilyTrajectories, a, b) -> np.ndarray:
    """Batched running-cost integral over [a, b] for every family member.

    Splits at the family's shared breakpoints so each Simpson segment sees a
    constant control; a and b must be integration nodes.
    """
    nodes = ft.time_nodes
    ia = int(np.argmin(np.abs(nodes - a)))
    ib = int(np.argmin(np.abs(nodes - b)))
    if abs(nodes[ia] - a) > 1e-9 or abs(nodes[ib] - b) > 1e-9:
        raise ValueError("cost bounds must be integration nodes")
    cuts = ft.family.breakpoints
    cuts = cuts[(cuts > nodes[ia] + _MERGE_EPS) & (cuts < nodes[ib] - _MERGE_EPS)]
    seg_edges = [ia] + [int(np.argmin(np.abs(nodes - c))) for c in cuts] + [ib]
    total = np.zeros(ft.family.size)
    for s0, s1 in zip(seg_edges[:-1], seg_edges[1:]):
        if s1 <= s0:
            continue
        ts = nodes[s0 : s1 + 1]
        xs = ft.states[s0 : s1 + 1]
        u = ft.family.values_at(nodes[s0])
        vals = problem.f0(ts[:, None], xs, u[None, :, :])
        total += composite_simpson(vals, ts, axis=0)
    return total


def _hermite_state(problem, traj, s):
    """Cubic-Hermite state between stored nodes (uses f at the bracketing nodes)."""
    nodes = traj.time_nodes
    k = int(np.clip(np.searchsorted(nodes, s) - 1, 0, nodes.size - 2))
    t0, t1 = nodes[k], nodes[k + 1]
    if s <= t0 + _MERGE_EPS:
        return traj.states[k]
    if s >= t1 - _MERGE_EPS:
        return traj.states[k + 1]
    h = t1 - t0
    u = traj.control_ref.value_at(t0)
    f0 = problem.f(t0, traj.states[k], u)
    f1 = problem.f(t1, traj.states[k + 1], u)
    tau = (s - t0) / h
    h00 = 2 * tau**3 - 3 * tau**2 + 1
    h10 = tau**3 - 2 * tau**2 + tau
    h01 = -2 * tau**3 + 3 * tau**2
    h11 = tau**3 - tau**2
    return h00 * traj.states[k] + h * h10 * f0 + h01 * traj.states[k + 1] + h * h11 * f1


def accumulate_cost(problem, traj: Trajectory, theta, T) -> float:
    """Running-cost integral J over [theta, T] along a stored trajectory.

    Composite Simpson on the trajectory nodes, split at control breakpoints.
    """
    nodes = traj.time_nodes
    if theta < nodes[0] - 1e-9 or T > nodes[-1] + 1e-9 or T < theta:
        raise ValueError("[theta, T] must lie inside the trajectory span")
    u = traj.control_ref
    cuts = u.breakpoints_within(theta, T)
    edges = np.concatenate([[theta], cuts, [T]])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= _MERGE_EPS:
            continue
        inside = np.where((nodes > a + _MERGE_EPS) & (nodes < b - _MERGE_EPS))[0]
        ts = np.concatenate([[a], nodes[inside], [b]])
        xs = np.empty((ts.size, traj.states.shape[1]))
        xs[1:-1] = traj.states[inside]
        xs[0] = _hermite_state(problem, traj, a)
        xs[-1] = _hermite_state(problem, traj, b)
        uu = u.value_at(0.5 * (a + b))
        vals = problem.f0(ts, xs, np.broadcast_to(uu, (ts.size, uu.size)))
        total += composite_simpson(vals, ts, axis=0)
    return float(total)


def hamiltonian(problem, x, u, psi, lam, t):
    """Hamilton-Pontryagin value psi . f(t,x,u) - lam * f0(t,x,u)."""
    x = np.asarray(x, dtype=float)
    psi = np.asarray(psi, dtype=float)
    fv = problem.f(t, x, u)
    val = (psi * fv).sum(axis=-1) - lam * problem.f0(t, x, u)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# Built-in example problems
# ---------------------------------------------------------------------------


def _control_lattice(lo, hi, n):
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _linear_l1(params):
    n = int(params.get("n_control", 21))
    b = float(params.get("b", 0.0))

    def dyn(t, x, u):
        return 2.0 * u - x

    def cost(t, x, u):
        return (2.0 * u + np.abs(u) - x)[..., 0]

    def dyn_dx(t, x, u):
        return np.full(np.shape(x)[:-1] + (1, 1), -1.0)

    def cost_dx(t, x, u):
        return np.full(np.shape(x), -1.0)

    return ControlProblem(
        state_dim=1,
        dynamics=dyn,
        running_cost=cost,
        control_samples=_control_lattice(-0.5, 0.5, n),
        control_description="u in [-1/2, 1/2]",
        initial_state=[b],
        growth_witness=(1.0, 1.0),
        name="linear-l1",
        dynamics_dx=dyn_dx,
        running_cost_dx=cost_dx,
        time_invariant_dynamics=True,
        time_invariant_cost=True,
        params={"n_control": n, "b": b},
    )


def _capital_stock(params):
    nu = float(params.get("nu", 1.0))
    u_max = float(params.get("u_max", 1.0))
    mu = float(params.get("mu", -1.0))
    n = int(params.get("n_control", 21))
    g = params.get("g", lambda x, u: (x - 1.0) ** 2 + u**2)
    g_dx = params.get("g_dx", lambda x, u: 2.0 * (x - 1.0))

    def dyn(t, x, u):
        return u - nu * x

    def cost(t, x, u):
        return np.exp(mu * np.asarray(t, dtype=float)) * g(x[..., 0], u[..., 0])

    def dyn_dx(t, x, u):
        return np.full(np.shape(x)[:-1] + (1, 1), -nu)

    def cost_dx(t, x, u):
        return (np.exp(mu * np.asarray(t, dtype=float)) * g_dx(x[..., 0], u[..., 0]))[..., None]

    recorded = {"nu": nu, "u_max": u_max, "mu": mu, "n_control": n}
    return ControlProblem(
        state_dim=1,
        dynamics=dyn,
        running_cost=cost,
        control_samples=_control_lattice(0.0, u_max, n),
        control_description=f"u in [0, {u_max}]",
        initial_state=[float(params.get("b", 0.5))],
        growth_witness=(nu, u_max),
        name="capital-stock",
        dynamics_dx=dyn_dx,
        running_cost_dx=cost_dx,
        validation_box=(np.array([-3.0]), np.array([3.0])),
        time_invariant_dynamics=True,
        time_invariant_cost=(mu == 0.0),
        params=recorded,
    )


def _double_integrator(params):
    a = float(params.get("a", 1.0))
    k = float(params.get("k", 2.0))
    radius = float(params.get("control_radius", a * a))
    n = int(params.get("n_control", 21))
    g = params.get("g", lambda y1, y2, u: y1**2 + np.abs(y2))

    def g_dx_default(y1, y2, u):
        return np.stack([2.0 * y1, np.sign(y2)], axis=-1)

    g_dx = params.get("g_dx", g_dx_default)

    def dyn(t, x, u):
        return np.stack([u[..., 0], x[..., 0]], axis=-1)

    def cost(t, x, u):
        return g(x[..., 0], x[..., 1], u[..., 0])

    def dyn_dx(t, x, u):
        jac = np.zeros(np.shape(x)[:-1] + (2, 2))
        jac[..., 1, 0] = 1.0
        return jac

    def cost_dx(t, x, u):
        return g_dx(x[..., 0], x[..., 1], u[..., 0])

    recorded = {"a": a, "k": k, "control_radius": radius, "n_control": n}
    return ControlProblem(
        state_dim=2,
        dynamics=dyn,
        running_cost=cost,
        control_samples=_control_lattice(-radius, radius, n),
        control_description=f"u in [-{radius}, {radius}] (truncation of the unbounded case)",
        initial_state=params.get("initial_state", [1.0, 1.0]),
        growth_witness=(1.0, radius),
        name="double-integrator",
        dynamics_dx=dyn_dx,
        running_cost_dx=cost_dx,
        time_invariant_dynamics=True,
        time_invariant_cost=True,
        params=recorded,
    )


_BUILTINS = {
    "capital-stock": _capital_stock,
    "double-integrator": _double_integrator,
    "linear-l1": _linear_l1,
}


def builtin_problem(name, **params) -> ControlProblem:
    """Look up a built-in example problem by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        valid = ", ".join(sorted(_BUILTINS))
        raise LookupError(f"unknown problem {name!r}; valid names: {valid}") from None
    return factory(params)


def load_problem(descriptor: dict) -> ControlProblem:
    """Build a problem from a JSON descriptor.

    Schema: {"name": str, "params": {...}, "initial_state": [...],
    "control_box": {"lo": [...], "hi": [...], "samples": int}}.
    """
    name = descriptor.get("name")
    params = dict(descriptor.get("params", {}))
    problem = builtin_problem(name, **params)
    replace = {}
    if "initial_state" in descriptor:
        replace["initial_state"] = np.asarray(descriptor["initial_state"], dtype=float)
    if "control_box" in descriptor:
        box = descriptor["control_box"]
        replace["control_samples"] = _control_lattice(box["lo"], box["hi"], int(box["samples"]))
        replace["control_description"] = f"box {box['lo']}..{box['hi']}"
    return dataclasses.replace(problem, **replace) if replace else problem


def validate_growth(problem, n_samples=1000, rng=None, t_max=10.0):
    """Worst violation of |f| <= c1 |x| + c2 over random validation draws.

    Nonpositive return means the witness holds on every sample; raises
    BlowUpError if f or f0 produce non-finite values.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = problem.validation_box
    xs = rng.uniform(lo, hi, size=(n_samples, problem.state_dim))
    ts = rng.uniform(0.0, t_max, size=n_samples)
    us = problem.control_samples[rng.integers(0, len(problem.control_samples), n_samples)]
    c1, c2 = problem.growth_witness
    worst = -np.inf
    for t, x, u in zip(ts, xs, us):
        fv = problem.f(t, x, u)
        cv = problem.f0(t, x, u)
        if not (np.all(np.isfinite(fv)) and np.isfinite(cv)):
            raise BlowUpError("dynamics/cost validation sample", t)
        worst = max(worst, float(np.linalg.norm(fv) - (c1 * np.linalg.norm(x) + c2)))
    return worst
