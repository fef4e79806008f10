"""Reachability-time estimates, convex-hull controllability tests, product
structure validation, and Lipschitz-region classification.

Min/max arrival times are estimated on a time-expanded lattice: states snap
to a spatial grid, every step advances one dt under one control sample, and
reachable sets propagate through the hot kernel.  Reported times carry a
+-2-step uncertainty; the target is matched within one lattice cell since
exact hitting is measure-zero on a lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .limits import lipschitz_constant_map
from .problems import ControlProblem

_INF = float("inf")


class LatticeError(RuntimeError):
    pass


def sphere_directions(m, n=64):
    """Deterministic direction cover: signs (1-D), angles (2-D), Fibonacci (3-D)."""
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if m == 3:
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = np.pi * (1 + 5**0.5) * i
        return np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=-1)
    raise ValueError("directions implemented for dimensions 1..3")


@dataclass(frozen=True)
class TimeLattice:
    """Spatial grid plus step for the time-expanded search."""

    lo: np.ndarray
    hi: np.ndarray
    h: np.ndarray
    dt: float

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        h = np.broadcast_to(np.asarray(self.h, dtype=float), lo.shape).copy()
        if not np.all(hi > lo) or not np.all(h > 0) or self.dt <= 0:
            raise ValueError("need lo < hi, h > 0, dt > 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "h", h)

    def shape(self):
        return tuple(int(np.floor((b - a) / s + 1e-9)) + 1 for a, b, s in zip(self.lo, self.hi, self.h))

    def nodes(self):
        axes = [np.linspace(a, a + (n - 1) * s, n) for a, s, n in zip(self.lo, self.h, self.shape())]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def snap_index(self, x, what):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        shape = self.shape()
        idx = np.round((x - self.lo) / self.h).astype(np.int64)
        for d, (i, n) in enumerate(zip(idx, shape)):
            if i < 0 or i >= n:
                raise LatticeError(f"{what} leaves the lattice in coordinate {d} (value {x[d]:.6g})")
        strides = self._strides()
        return int((idx * strides).sum())

    def _strides(self):
        shape = self.shape()
        strides = np.ones(len(shape), dtype=np.int64)
        for d in range(len(shape) - 2, -1, -1):
            strides[d] = strides[d + 1] * shape[d + 1]
        return strides


@dataclass(frozen=True)
class TimeEstimate:
    """One reachability-time query result; time is inf when unreachable."""

    variant: str  # min-restricted | min | max
    t0: float
    y0: np.ndarray
    z_target: np.ndarray
    time: float
    steps: int
    unreachable: bool
    cap: float
    resolution: tuple
    cap_limited: bool = False
    extras: dict = field(default_factory=dict)


_STALL_FRACTION = 0.01


def _destinations(problem, lattice: TimeLattice, t, controls):
    """Per-control destination node for every lattice node (-1 = leaves the box).

    Arrivals snap to the nearest node.  A snap back onto the source node is a
    genuine stall only for near-zero velocities; faster sub-cell drifts are
    promoted to a one-cell move along the dominant velocity component, which
    foreshortens their traversal times but keeps slow monotone motion alive
    on the lattice.
    """
    nodes = lattice.nodes()
    shape = np.asarray(lattice.shape())
    strides = lattice._strides()
    src = np.round((nodes - lattice.lo) / lattice.h).astype(np.int64)
    stall_speed = _STALL_FRACTION * float(np.min(lattice.h)) / lattice.dt
    dest = np.empty((len(controls), nodes.shape[0]), dtype=np.int64)
    for c, u in enumerate(controls):
        uu = np.broadcast_to(u, (nodes.shape[0], u.size))
        f = problem.f(t, nodes, uu)
        arrive = nodes + lattice.dt * f
        idx = np.round((arrive - lattice.lo) / lattice.h).astype(np.int64)
        promote = np.all(idx == src, axis=-1) & (np.linalg.norm(f, axis=-1) > stall_speed)
        if promote.any():
            dom = np.argmax(np.abs(f), axis=-1)
            rows = np.where(promote)[0]
            idx[rows, dom[rows]] += np.sign(f[rows, dom[rows]]).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < shape), axis=-1)
        flat = (idx * strides).sum(axis=-1)
        dest[c] = np.where(ok, flat, -1)
    return dest


def _target_mask(lattice: TimeLattice, z_indices, z_target, w_box):
    nodes = lattice.nodes()
    z_target = np.atleast_1d(np.asarray(z_target, dtype=float))
    mask = np.all(np.abs(nodes[:, z_indices] - z_target) <= lattice.h[list(z_indices)] + 1e-12, axis=-1)
    if w_box is not None:
        w_lo, w_hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in w_box)
        w_indices = [d for d in range(nodes.shape[1]) if d not in z_indices]
        if w_indices:
            w = nodes[:, w_indices]
            mask &= np.all((w >= w_lo - 1e-12) & (w <= w_hi + 1e-12), axis=-1)
    return mask


def _search(problem, t0, y0, z_target, z_indices, w_box, controls, cap, lattice, want_max):
    dest0 = None
    if problem.time_invariant_dynamics:
        dest0 = _destinations(problem, lattice, t0, controls)
    target = _target_mask(lattice, z_indices, z_target, w_box)
    start = lattice.snap_index(y0, "start point")
    n_nodes = int(np.prod(lattice.shape()))
    n_steps = int(np.ceil(cap / lattice.dt - 1e-9))

    reach = np.zeros(n_nodes, dtype=bool)
    reach[start] = True
    avoid = reach & ~target
    first_visit = 0 if target[start] else None
    last_visit = 0 if target[start] else None
    escaped_avoiding = False

    for k in range(1, n_steps + 1):
        t = t0 + (k - 1) * lattice.dt
        dest = dest0 if dest0 is not None else _destinations(problem, lattice, t, controls)
        reach, _ = _kernels.reach_step(dest, reach)
        if want_max:
            avoid, esc = _kernels.reach_step(dest, avoid)
            avoid &= ~target
            escaped_avoiding = escaped_avoiding or esc
        hit = reach & target
        if hit.any():
            if first_visit is None:
                first_visit = k
            last_visit = k
        if not want_max and first_visit is not None:
            break
        if not reach.any():
            break

    if want_max:
        unreachable = escaped_avoiding or bool(avoid.any()) or last_visit is None
        time = _INF if unreachable else last_visit * lattice.dt
        cap_limited = (not unreachable) and last_visit == n_steps
        steps = -1 if unreachable else last_visit
    else:
        unreachable = first_visit is None
        time = _INF if unreachable else first_visit * lattice.dt
        cap_limited = False
        steps = -1 if unreachable else first_visit
    return time, steps, unreachable, cap_limited


def auto_dt(problem, t0, y0, h):
    """Step sized so the fastest control advances about one cell per step.

    Round-to-nearest snapping stalls when speed * dt falls below h/2 and
    skips cells when it exceeds h, so the step is tied to the local top
    speed over the control samples.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    speeds = [float(np.linalg.norm(problem.f(t0, y0, u))) for u in problem.control_samples]
    return float(np.min(h)) / max(max(speeds), 1e-6)


def _default_lattice(problem, y0, cap, h, dt):
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    c1, c2 = problem.growth_witness
    speed = c1 * (np.abs(y0).max() + 1.0) + c2 + 1.0
    half = np.minimum(speed * cap, 8.0)
    return TimeLattice(y0 - half, y0 + half, h, dt)


def min_time_estimate(problem, t0, y0, z_target, w_box=None, control_subset=None, cap=4.0, h=0.02, dt=None, lattice=None, z_indices=None) -> TimeEstimate:
    """Shortest lattice arrival time into (W-box) x {z-target within one cell}.

    ``control_subset`` restricts the sample set (the restricted-minimum
    variant); the lattice must contain the start point and the target
    (LatticeError otherwise, naming the offending coordinate).
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if lattice is None:
        dt = dt if dt is not None else auto_dt(problem, t0, y0, h)
        lattice = _default_lattice(problem, y0, cap, h, dt)
    z_indices = tuple(z_indices) if z_indices is not None else tuple(range(y0.size))
    z_target = np.atleast_1d(np.asarray(z_target, dtype=float))
    for j, d in enumerate(z_indices):
        if not (lattice.lo[d] - 1e-9 <= z_target[j] <= lattice.hi[d] + 1e-9):
            raise LatticeError(f"target leaves the lattice in coordinate {d} (value {z_target[j]:.6g})")
    controls = problem.control_samples if control_subset is None else np.atleast_2d(np.asarray(control_subset, dtype=float))
    time, steps, unreachable, _ = _search(problem, t0, y0, z_target, z_indices, w_box, controls, cap, lattice, want_max=False)
    return TimeEstimate(
        variant="min" if control_subset is None else "min-restricted",
        t0=float(t0), y0=y0, z_target=z_target, time=time, steps=steps,
        unreachable=unreachable, cap=float(cap), resolution=(lattice.h.copy(), lattice.dt),
    )


def max_time_estimate(problem, t0, y0, z_target, w_box=None, cap=4.0, h=0.02, dt=None, lattice=None, z_indices=None) -> TimeEstimate:
    """Latest lattice arrival time; +inf sentinel when some lattice trajectory
    never joins the target within the cap (or escapes while avoiding it)."""
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if lattice is None:
        dt = dt if dt is not None else auto_dt(problem, t0, y0, h)
        lattice = _default_lattice(problem, y0, cap, h, dt)
    z_indices = tuple(z_indices) if z_indices is not None else tuple(range(y0.size))
    z_target = np.atleast_1d(np.asarray(z_target, dtype=float))
    time, steps, unreachable, cap_limited = _search(
        problem, t0, y0, z_target, z_indices, w_box, problem.control_samples, cap, lattice, want_max=True
    )
    return TimeEstimate(
        variant="max", t0=float(t0), y0=y0, z_target=z_target, time=time, steps=steps,
        unreachable=unreachable, cap=float(cap), resolution=(lattice.h.copy(), lattice.dt),
        cap_limited=cap_limited,
    )


def interior_convexhull_test(problem, t, x, control_subset=None, n_directions=64):
    """Is 0 interior to the convex hull of the sampled velocities at (t, x)?

    Directional support test: inside with margin delta iff every cover
    direction sees a velocity with positive component at least delta.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    controls = problem.control_samples if control_subset is None else np.atleast_2d(np.asarray(control_subset, dtype=float))
    vel = np.stack([problem.f(t, x, u) for u in controls])
    dirs = sphere_directions(x.size, n_directions)
    support = (dirs @ vel.T).max(axis=1)
    margin = float(support.min())
    return {"inside": margin > 1e-9, "margin": margin}


def separation_test(problem, region_samples, n_directions=64):
    """Is 0 strictly separated from all velocities over the sampled region?

    Pools f(t, x, u) over every sample and the full control lattice; the
    margin is the best uniform negative component over the cover directions.
    """
    vels = []
    for (t, x) in region_samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        for u in problem.control_samples:
            vels.append(problem.f(t, x, u))
    vels = np.asarray(vels)
    dirs = sphere_directions(vels.shape[1], n_directions)
    worst = (dirs @ vels.T).max(axis=1)
    margin = float(-worst.min())
    return {"separated": margin > 1e-9, "margin": margin}


@dataclass(frozen=True)
class SampleTable:
    """Interpolating table of S on z-coordinates."""

    axes: tuple
    values: np.ndarray

    def __call__(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if len(self.axes) == 1:
            return np.interp(z[:, 0], self.axes[0], self.values)
        raise NotImplementedError("sample tables implemented for 1-D z")


@dataclass(frozen=True)
class ProductStructure:
    """Multiplicative split V(t, (w, z)) = R(t, w) * S(z) on a region."""

    w_indices: tuple
    z_indices: tuple
    R: Callable
    S: Callable
    t_range: tuple = (0.0, 1.0)
    w_box: Optional[tuple] = None
    z_box: Optional[tuple] = None


def validate_product_structure(v_field, ps: ProductStructure, t_nodes, x_nodes, tol=2e-2):
    """Max relative mismatch |V - R*S| / max(1, |V|) over a validation lattice."""
    x_nodes = np.atleast_2d(np.asarray(x_nodes, dtype=float))
    worst = 0.0
    for t in np.atleast_1d(t_nodes):
        v = np.asarray(v_field(float(t), x_nodes), dtype=float)
        w = x_nodes[:, list(ps.w_indices)] if ps.w_indices else np.zeros((len(x_nodes), 0))
        z = x_nodes[:, list(ps.z_indices)]
        r = np.asarray(ps.R(float(t), w), dtype=float)
        if np.any(r <= 0):
            raise ValueError("R must stay positive on the sampled region")
        s = np.asarray(ps.S(z), dtype=float)
        err = np.abs(v - r * s) / np.maximum(1.0, np.abs(v))
        worst = max(worst, float(err.max()))
    return {"max_rel_error": worst, "pass": worst <= tol}


@dataclass(frozen=True)
class CellVerdict:
    center: np.ndarray
    route: str  # interior | separation | min-time | none
    hypothesis_met: bool
    lipschitz_observed: Optional[bool]
    local_constant: Optional[float]


def lipschitz_region_classifier(problem, v_field, region_lo, region_hi, n_cells=8, t=0.0, routes=("interior", "separation"), min_time_probe=None, constant_cap=1e3, stability_factor=2.0):
    """Per-cell hypothesis/conclusion map over a state-space region.

    Hypothesis routes are tried in order at the cell center and corners:
    "interior" (0 interior to the velocity hull), "separation" (velocities
    uniformly separated from 0), or "min-time" via a supplied probe callable
    cell -> bool.  The conclusion check reads the observed local Lipschitz
    constant of v_field on the cell and re-reads it on a refined sub-lattice;
    observed means finite, below the cap, and stable within the factor.
    v_field may be None to skip the conclusion check.
    """
    region_lo = np.atleast_1d(np.asarray(region_lo, dtype=float))
    region_hi = np.atleast_1d(np.asarray(region_hi, dtype=float))
    m = region_lo.size
    n_cells = np.broadcast_to(np.asarray(n_cells, dtype=int), (m,))
    edges = [np.linspace(a, b, n + 1) for a, b, n in zip(region_lo, region_hi, n_cells)]
    verdicts = []
    for flat in np.ndindex(*[int(n) for n in n_cells]):
        lo = np.array([edges[d][i] for d, i in enumerate(flat)])
        hi = np.array([edges[d][i + 1] for d, i in enumerate(flat)])
        center = 0.5 * (lo + hi)
        corners = np.stack(
            [np.where([(c >> d) & 1 for d in range(m)], hi, lo) for c in range(1 << m)]
        )
        probes = np.vstack([center[None, :], corners])
        route_hit = "none"
        for route in routes:
            if route == "interior":
                ok = all(interior_convexhull_test(problem, t, p)["inside"] for p in probes)
            elif route == "separation":
                ok = separation_test(problem, [(t, p) for p in probes])["separated"]
            elif route == "min-time":
                if min_time_probe is None:
                    continue
                ok = bool(min_time_probe(lo, hi, center))
            else:
                raise ValueError(f"unknown route {route!r}")
            if ok:
                route_hit = route
                break
        observed = None
        constant = None
        if v_field is not None:
            _, c0 = lipschitz_constant_map(v_field, lo, hi, t=t, h=(hi - lo) / 2)
            _, c1 = lipschitz_constant_map(v_field, lo, hi, t=t, h=(hi - lo) / 4)
            constant = c1
            stable = (
                np.isfinite(c0)
                and np.isfinite(c1)
                and c1 <= constant_cap
                and c1 <= stability_factor * c0 + 0.1
                and c0 <= stability_factor * c1 + 0.1
            )
            observed = bool(stable)
        verdicts.append(CellVerdict(center=center, route=route_hit, hypothesis_met=route_hit != "none", lipschitz_observed=observed, local_constant=constant))
    return verdicts


def region_map_csv(verdicts, path):
    """One row per cell; verdict encodes hypothesis (2) + observed (1)."""
    with open(path, "w") as fh:
        dim = verdicts[0].center.size if verdicts else 0
        cols = ",".join(f"c{i+1}" for i in range(dim))
        fh.write(f"{cols},route,hypothesis_met,lipschitz_observed,local_constant,code\n")
        for v in verdicts:
            code = 2 * int(v.hypothesis_met) + int(bool(v.lipschitz_observed))
            coords = ",".join(f"{c:.17g}" for c in v.center)
            const = "" if v.local_constant is None else f"{v.local_constant:.17g}"
            obs = "" if v.lipschitz_observed is None else str(v.lipschitz_observed).lower()
            fh.write(f"{coords},{v.route},{str(v.hypothesis_met).lower()},{obs},{const},{code}\n")


# ---------------------------------------------------------------------------
# Coordinate charts for the planar double-integrator example
# ---------------------------------------------------------------------------


def di_chart_sqrt(a=1.0, n_control=21) -> ControlProblem:
    """Chart (w, z) = (sqrt(y2), y1/sqrt(y2)) with its induced dynamics."""
    radius = a * a

    def dyn(t, x, u):
        w = x[..., 0]
        z = x[..., 1]
        return np.stack([z / 2.0, (u[..., 0] - z * z / 2.0) / w], axis=-1)

    return ControlProblem(
        state_dim=2,
        dynamics=dyn,
        running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
        control_samples=np.linspace(-radius, radius, n_control)[:, None],
        control_description=f"u in [-{radius}, {radius}]",
        initial_state=[1.0, 0.0],
        growth_witness=(2.0, 2.0 * radius + 2.0),
        name="di-chart-sqrt",
        validation_box=(np.array([0.2, -1.5]), np.array([3.0, 1.5])),
        time_invariant_dynamics=True,
        time_invariant_cost=True,
        params={"a": a, "n_control": n_control},
    )


def di_chart_invsq(a=1.0, n_control=21) -> ControlProblem:
    """Chart (w, z) = (y1, y2/y1^2) with its induced dynamics."""
    radius = a * a

    def dyn(t, x, u):
        w = x[..., 0]
        z = x[..., 1]
        return np.stack([u[..., 0], (1.0 - 2.0 * z * u[..., 0]) / w], axis=-1)

    return ControlProblem(
        state_dim=2,
        dynamics=dyn,
        running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
        control_samples=np.linspace(-radius, radius, n_control)[:, None],
        control_description=f"u in [-{radius}, {radius}]",
        initial_state=[1.0, 0.1],
        growth_witness=(2.0 * radius + 2.0, 2.0 * radius + 2.0),
        name="di-chart-invsq",
        validation_box=(np.array([0.2, -1.5]), np.array([3.0, 1.5])),
        time_invariant_dynamics=True,
        time_invariant_cost=True,
        params={"a": a, "n_control": n_control},
    )


def to_sqrt_chart(y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    w = np.sqrt(y[:, 1])
    return np.stack([w, y[:, 0] / w], axis=-1)


def to_invsq_chart(y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.stack([y[:, 0], y[:, 1] / y[:, 0] ** 2], axis=-1)


def di_region_route(y1, y2, a=1.0, h=0.02, cap=None, n_control=21):
    """Which regularity route covers the planar point (y1, y2), by lattice search.

    In the chart (sqrt(y2), y1/sqrt(y2)) the z-coordinate is two-way
    controllable when y1^2 < 2 a^2 y2 (min-time route, two-sided probes);
    when y1^2 > 2 a^2 y2 > 0 the chart (y1, y2/y1^2) has z moving strictly
    one way (separation route on the z-velocity).  Returns "min-time",
    "separation", or "none".
    """
    if y2 <= 0:
        return "none"
    chart_a = di_chart_sqrt(a, n_control)
    w, z = to_sqrt_chart([[y1, y2]])[0]
    dz = 0.1
    cap = cap if cap is not None else 16.0 * np.sqrt(y2) * dz + 1.0
    dt = auto_dt(chart_a, 0.0, [w, z], h)
    lattice = TimeLattice([max(w / 2, 1e-3), z - 4 * dz], [1.5 * w, z + 4 * dz], h, dt)
    w_box = (np.array([max(w / 2, 1e-3)]), np.array([1.5 * w]))
    two_sided = True
    for target in (z + dz, z - dz):
        est = min_time_estimate(
            chart_a, 0.0, [w, z], [target], w_box=w_box, cap=cap, lattice=lattice, z_indices=(1,)
        )
        bound = 4.0 * np.sqrt(y2) * dz + 2.0 * est.resolution[1]
        if est.unreachable or est.time > bound:
            two_sided = False
            break
    if two_sided:
        return "min-time"
    chart_b = di_chart_invsq(a, n_control)
    wb, zb = to_invsq_chart([[y1, y2]])[0]

    class _ZOnly:
        control_samples = chart_b.control_samples

        @staticmethod
        def f(t, x, u):
            return chart_b.f(t, np.concatenate([[wb], np.atleast_1d(x)]), u)[1:]

    sep = separation_test(_ZOnly, [(0.0, [zb])])
    if sep["separated"]:
        return "separation"
    return "none"
