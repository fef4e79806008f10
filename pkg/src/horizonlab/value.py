"""Finite-horizon value grids by backward semi-Lagrangian dynamic programming.

The backward recursion

    V[t_N] = terminal,   V[t_i](x) = min_u [ dt*f0(t_i,x,u) + I(V[t_i+1])(x + dt*f(t_i,x,u)) ]

with multilinear interpolation I is the discrete dynamic-programming
identity; ``dpp_residual`` measures how well a grid honors the continuous
one.  Nodes within a layer are independent, so the sweep runs in the hot
kernel; finished grids are immutable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import _kernels
from .problems import ControlFamily, family_cost_between, integrate_family

PENALTY = 1.0e6
_BOUNDARY_POLICIES = ("clamp-extrapolate", "large-penalty")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Space-time lattice: box [lo, hi], spacing h, time step dt, horizon."""

    lo: np.ndarray
    hi: np.ndarray
    h: np.ndarray
    dt: float
    horizon: float
    boundary: str = "clamp-extrapolate"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        h = np.broadcast_to(np.asarray(self.h, dtype=float), lo.shape).copy()
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "h", h)
        if lo.size > 3:
            raise ValueError("state dimension is capped at 3 for lattice DP")
        if not np.all(hi > lo):
            raise ValueError("need lo < hi componentwise")
        if not np.all(h > 0) or self.dt <= 0 or self.horizon <= 0:
            raise ValueError("h, dt, horizon must be positive")
        if self.boundary not in _BOUNDARY_POLICIES:
            raise ValueError(f"boundary must be one of {_BOUNDARY_POLICIES}")

    @property
    def dim(self):
        return self.lo.size

    def axes(self):
        return [
            np.linspace(a, a + (n - 1) * step, n)
            for a, step, n in zip(self.lo, self.h, self.shape())
        ]

    def shape(self):
        return tuple(int(np.floor((b - a) / step + 1e-9)) + 1 for a, b, step in zip(self.lo, self.hi, self.h))

    def nodes(self):
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def n_layers(self):
        return max(1, int(round(self.horizon / self.dt)))

    def with_horizon(self, T):
        return replace(self, horizon=float(T))

    def key(self):
        return (
            self.lo.tobytes(),
            self.hi.tobytes(),
            self.h.tobytes(),
            float(self.dt),
            float(self.horizon),
            self.boundary,
        )


def _interp_table(points, lo, h, shape):
    """Clamped multilinear stencil: flat corner indices, weights, escape mask."""
    pts = np.asarray(points, dtype=float)
    m = pts.shape[-1]
    strides = np.ones(m, dtype=np.int64)
    for d in range(m - 2, -1, -1):
        strides[d] = strides[d + 1] * shape[d + 1]
    s = (pts - lo) / h
    escaped = np.any((s < -1e-9) | (s > np.asarray(shape) - 1 + 1e-9), axis=-1)
    s = np.clip(s, 0.0, np.asarray(shape, dtype=float) - 1.0)
    i0 = np.minimum(s.astype(np.int64), np.maximum(np.asarray(shape) - 2, 0))
    w = s - i0
    i1 = np.minimum(i0 + 1, np.asarray(shape) - 1)
    n_corner = 1 << m
    idx = np.zeros(pts.shape[:-1] + (n_corner,), dtype=np.int64)
    wts = np.ones(pts.shape[:-1] + (n_corner,))
    for corner in range(n_corner):
        for d in range(m):
            if corner >> d & 1:
                idx[..., corner] += i1[..., d] * strides[d]
                wts[..., corner] *= w[..., d]
            else:
                idx[..., corner] += i0[..., d] * strides[d]
                wts[..., corner] *= 1.0 - w[..., d]
    return idx, wts, escaped


@dataclass(frozen=True)
class ValueGrid:
    """Tabulated finite-horizon value on a time-space lattice (immutable)."""

    spec: GridSpec
    times: np.ndarray
    values: np.ndarray  # (n_layers+1, *spatial shape)
    problem_key: tuple
    terminal: str = "zero"
    escape_count: int = 0

    def layer(self, i):
        return self.values[i]

    def check_time_monotone(self, atol=1e-9):
        """True when V is nonincreasing in t at fixed x (nonnegative-cost case)."""
        diffs = np.diff(self.values, axis=0)
        return bool(np.all(diffs <= atol))


def _prepare_tables(problem, spec, t, nodes):
    samples = problem.control_samples
    arrivals = np.empty((len(samples), nodes.shape[0], spec.dim))
    for c, u in enumerate(samples):
        uu = np.broadcast_to(u, (nodes.shape[0], u.size))
        arrivals[c] = nodes + spec.dt * problem.f(t, nodes, uu)
    idx, wts, escaped = _interp_table(arrivals, spec.lo, spec.h, spec.shape())
    return idx, wts, escaped


def _stage_costs(problem, spec, t, nodes, escaped):
    samples = problem.control_samples
    stage = np.empty((len(samples), nodes.shape[0]))
    for c, u in enumerate(samples):
        uu = np.broadcast_to(u, (nodes.shape[0], u.size))
        stage[c] = spec.dt * problem.f0(t, nodes, uu)
    if spec.boundary == "large-penalty":
        stage = stage + PENALTY * escaped
    return stage


def _solve(problem, spec: GridSpec, terminal_values, terminal_tag) -> ValueGrid:
    if problem.state_dim != spec.dim:
        raise ValueError("grid dimension does not match the problem")
    nodes = spec.nodes()
    shape = spec.shape()
    n_layers = spec.n_layers()
    times = np.linspace(0.0, spec.horizon, n_layers + 1)

    sample = nodes[:: max(1, len(nodes) // 64)]
    u0 = np.broadcast_to(problem.control_samples[0], (len(sample), problem.control_dim))
    if not np.all(np.isfinite(problem.f(0.0, sample, u0))):
        raise SolverError("dynamics are not finite on the grid box")

    idx = wts = escaped = stage = None
    if problem.time_invariant_dynamics:
        idx, wts, escaped = _prepare_tables(problem, spec, 0.0, nodes)
        idx = np.ascontiguousarray(idx)
        wts = np.ascontiguousarray(wts)
        if problem.time_invariant_cost:
            stage = np.ascontiguousarray(_stage_costs(problem, spec, 0.0, nodes, escaped))

    layers = np.empty((n_layers + 1, nodes.shape[0]))
    layers[n_layers] = terminal_values
    escapes = 0
    for i in range(n_layers - 1, -1, -1):
        t = times[i]
        if idx is None or not problem.time_invariant_dynamics:
            idx_i, wts_i, escaped_i = _prepare_tables(problem, spec, t, nodes)
            idx_i = np.ascontiguousarray(idx_i)
            wts_i = np.ascontiguousarray(wts_i)
        else:
            idx_i, wts_i, escaped_i = idx, wts, escaped
        stage_i = stage if stage is not None else np.ascontiguousarray(_stage_costs(problem, spec, t, nodes, escaped_i))
        if spec.boundary == "large-penalty":
            escapes += int(escaped_i.sum())
        v = _kernels.sweep_min(layers[i + 1], stage_i, idx_i, wts_i)
        if not np.all(np.isfinite(v)):
            bad = int(np.where(~np.isfinite(v))[0][0])
            raise SolverError(f"non-finite value at t={t:.6g}, node index {bad}")
        layers[i] = v

    return ValueGrid(
        spec=spec,
        times=times,
        values=layers.reshape((n_layers + 1,) + shape),
        problem_key=problem.cache_key(),
        terminal=terminal_tag,
        escape_count=escapes,
    )


def solve_finite_horizon(problem, spec: GridSpec) -> ValueGrid:
    """Backward sweep with zero terminal payoff (the plain truncated problem)."""
    return _solve(problem, spec, np.zeros(int(np.prod(spec.shape()))), "zero")


def bolza_extend(problem, spec: GridSpec, terminal: Callable) -> ValueGrid:
    """Backward sweep with a supplied terminal value function on states."""
    term = np.asarray(terminal(spec.nodes()), dtype=float).reshape(-1)
    if not np.all(np.isfinite(term)):
        raise ValueError("terminal values must be finite on the grid box")
    return _solve(problem, spec, term, "custom")


def evaluate(grid: ValueGrid, t, x):
    """Multilinear in space, linear in time; queries outside follow the boundary policy."""
    spec = grid.spec
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    idx, wts, escaped = _interp_table(pts, spec.lo, spec.h, spec.shape())
    n_layers = grid.values.shape[0] - 1
    s = np.clip(float(t) / spec.dt, 0.0, n_layers)
    j0 = min(int(s), n_layers - 1) if n_layers > 0 else 0
    wt = s - j0 if n_layers > 0 else 0.0
    flat0 = grid.values[j0].reshape(-1)
    flat1 = grid.values[min(j0 + 1, n_layers)].reshape(-1)
    v0 = (flat0[idx] * wts).sum(axis=-1)
    v1 = (flat1[idx] * wts).sum(axis=-1)
    out = (1.0 - wt) * v0 + wt * v1
    if spec.boundary == "large-penalty":
        out = out + PENALTY * escaped
    return float(out[0]) if single else out


def as_field(grid: ValueGrid):
    """Adapt a grid to the (t, x)->value callable convention."""

    def field(t, x):
        return evaluate(grid, t, x)

    return field


def affine_field(slope, const=0.0):
    """The time-independent profile V(t, x) = slope . x + const."""
    slope = np.atleast_1d(np.asarray(slope, dtype=float))

    def field(t, x):
        x = np.asarray(x, dtype=float)
        return (x * slope).sum(axis=-1) + const

    return field


def dpp_residual(grid: ValueGrid, problem, t, tau, b, dt=None):
    """V(t,b) minus the best [cost-to-tau + V(tau, .)] over a sampled control family.

    The family is every constant control plus every one-switch concatenation
    at the midpoint of [t, tau].
    """
    if not (0.0 <= t < tau <= grid.spec.horizon + 1e-9):
        raise ValueError("need 0 <= t < tau <= horizon")
    samples = problem.control_samples
    mid = 0.5 * (t + tau)
    n = len(samples)
    k = 2
    values = np.empty((n * n, k, samples.shape[1]))
    pair = 0
    for u1 in samples:
        for u2 in samples:
            values[pair, 0] = u1
            values[pair, 1] = u2
            pair += 1
    family = ControlFamily(np.array([0.0, mid]), values)
    step = dt if dt is not None else min(grid.spec.dt, (tau - t) / 8.0)
    ft = integrate_family(problem, np.atleast_1d(np.asarray(b, dtype=float)), t, family, tau, dt=step)
    costs = family_cost_between(problem, ft, t, tau)
    arrivals = ft.states[-1]
    v_tau = evaluate(grid, tau, arrivals)
    best = float(np.min(costs + v_tau))
    return evaluate(grid, t, np.atleast_1d(np.asarray(b, dtype=float))) - best


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def export_grid(grid: ValueGrid, csv_path, sidecar_path):
    """CSV rows (t, x..., V) at 17 significant digits plus a GridSpec sidecar."""
    spec = grid.spec
    nodes = spec.nodes()
    with open(csv_path, "w") as fh:
        cols = ",".join(f"x{i+1}" for i in range(spec.dim))
        fh.write(f"t,{cols},V\n")
        flat = grid.values.reshape(grid.values.shape[0], -1)
        for i, t in enumerate(grid.times):
            for node, v in zip(nodes, flat[i]):
                coords = ",".join(f"{c:.17g}" for c in node)
                fh.write(f"{t:.17g},{coords},{v:.17g}\n")
    meta = {
        "lo": grid.spec.lo.tolist(),
        "hi": grid.spec.hi.tolist(),
        "h": grid.spec.h.tolist(),
        "dt": grid.spec.dt,
        "horizon": grid.spec.horizon,
        "boundary": grid.spec.boundary,
        "terminal": grid.terminal,
        "escape_count": grid.escape_count,
        "problem": repr(grid.problem_key),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def import_grid(csv_path, sidecar_path) -> ValueGrid:
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    spec = GridSpec(
        lo=np.asarray(meta["lo"]),
        hi=np.asarray(meta["hi"]),
        h=np.asarray(meta["h"]),
        dt=meta["dt"],
        horizon=meta["horizon"],
        boundary=meta["boundary"],
    )
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    vals = data[:, -1]
    n_layers = spec.n_layers()
    values = vals.reshape((n_layers + 1,) + spec.shape())
    return ValueGrid(
        spec=spec,
        times=np.linspace(0.0, spec.horizon, n_layers + 1),
        values=values,
        problem_key=(meta.get("problem", ""),),
        terminal=meta["terminal"],
        escape_count=int(meta.get("escape_count", 0)),
    )


class ValueCache:
    """Memoizes finite-horizon solves keyed by (problem, spec); thread-safe."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def solve(self, problem, spec: GridSpec) -> ValueGrid:
        key = (problem.cache_key(), spec.key())
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        grid = solve_finite_horizon(problem, spec)
        with self._lock:
            self._store.setdefault(key, grid)
        return grid
