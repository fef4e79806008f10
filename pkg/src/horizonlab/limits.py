"""Horizon-limit estimators for the truncated value functions.

Three limit notions are estimated from finite data: the full limit of the
truncated values as the horizon grows, the liminf along a fixed horizon
sequence, and the infimum over a declared control family of the liminf of
truncated costs.  Estimates carry convergence diagnostics and never claim
more than the finite data supports: a liminf read off a finite tail is
biased upward, and the caveat field says so.

Per-horizon solves are independent jobs; HORIZONLAB_THREADS caps the worker
pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import numpy as np

from .problems import ControlFamily, family_cost_between, integrate_family
from .value import GridSpec, ValueCache, ValueGrid, evaluate

_LIMINF_CAVEAT = "liminf estimated from a finite tail; biased toward larger values"
_DECAY_RATIO = 0.75


def worker_count():
    raw = os.environ.get("HORIZONLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class HorizonSequence:
    """Strictly increasing positive horizons standing in for tau_n -> infinity."""

    taus: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float).reshape(-1)
        if taus.size == 0 or taus[0] <= 0 or (taus.size > 1 and not np.all(np.diff(taus) > 0)):
            raise ValueError("horizons must be strictly increasing and positive")
        object.__setattr__(self, "taus", taus)

    @classmethod
    def geometric(cls, tau0=1.0, ratio=2.0, count=5):
        return cls(tau0 * ratio ** np.arange(count))

    @property
    def unbounded_intent(self):
        return bool(self.taus[-1] / self.taus[0] >= 8.0)

    def __len__(self):
        return self.taus.size


@dataclass(frozen=True)
class LimitEstimate:
    """A horizon-limit value with its convergence diagnostics."""

    variant: str
    taus: np.ndarray
    values: np.ndarray
    limit: float
    cauchy_gap: float
    converged: bool
    tolerance: float
    extrapolated: bool = False
    caveat: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) != len(self.taus):
            raise ValueError("need one value per horizon")
        if self.converged and not (self.cauchy_gap <= self.tolerance):
            raise ValueError("converged estimates must meet the gap tolerance")


def cauchy_gap(values):
    """Max pairwise spread over the last three entries."""
    tail = np.asarray(values, dtype=float)[-3:]
    if tail.size < 2:
        return 0.0
    return float(tail.max() - tail.min())


def liminf_tail(values):
    """Running-minimum liminf estimator: min over the last half of the sequence."""
    values = np.asarray(values, dtype=float)
    return float(values[values.size // 2 :].min())


def _diff_behavior(values):
    """(oscillating, ratio) of the last two successive differences."""
    d = np.diff(np.asarray(values, dtype=float))
    if d.size < 2:
        return False, None
    if d[-1] == 0.0:
        return False, 0.0
    if d[-2] == 0.0:
        return False, None
    r = d[-1] / d[-2]
    return bool(r < 0 and abs(d[-1]) > 1e-12), float(r)


def _solve_horizons(problem, spec, seq, cache, threads=None):
    cache = cache if cache is not None else ValueCache()
    specs = [spec.with_horizon(tau) for tau in seq.taus]
    n = threads if threads is not None else worker_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            grids = list(pool.map(lambda s: cache.solve(problem, s), specs))
    else:
        grids = [cache.solve(problem, s) for s in specs]
    return grids


def estimate_v_all(problem, spec: GridSpec, seq: HorizonSequence, t, b, tol=1e-2, cache=None, threads=None) -> LimitEstimate:
    """Estimate the full horizon limit of the truncated values at (t, b).

    Solves each horizon on the shared spatial lattice, reads the values at
    (t, b), and appends one Richardson step when the successive differences
    decay geometrically (ratio <= 0.75).  Oscillating differences yield
    converged=False and no extrapolation.
    """
    if np.any(seq.taus <= t):
        raise ValueError("every horizon must exceed the query time")
    grids = _solve_horizons(problem, spec, seq, cache, threads)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    vals = np.array([evaluate(g, t, b) for g in grids])
    gap = cauchy_gap(vals)
    oscillating, ratio = _diff_behavior(vals)
    limit = float(vals[-1])
    extrapolated = False
    if not oscillating and ratio is not None and 0.0 < ratio <= _DECAY_RATIO:
        d_last = vals[-1] - vals[-2]
        limit = float(vals[-1] + d_last * ratio / (1.0 - ratio))
        extrapolated = True
    converged = (not oscillating) and gap <= tol
    return LimitEstimate(
        variant="all",
        taus=seq.taus,
        values=vals,
        limit=limit,
        cauchy_gap=gap,
        converged=converged,
        tolerance=tol,
        extrapolated=extrapolated,
        extras={"ratio": ratio, "oscillating": oscillating},
    )


def estimate_v_infty(problem, spec: GridSpec, seq: HorizonSequence, t, b, tol=1e-2, cache=None, threads=None) -> LimitEstimate:
    """Liminf of the truncated values along the horizon sequence at (t, b)."""
    if np.any(seq.taus <= t):
        raise ValueError("every horizon must exceed the query time")
    grids = _solve_horizons(problem, spec, seq, cache, threads)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    vals = np.array([evaluate(g, t, b) for g in grids])
    gap = cauchy_gap(vals)
    return LimitEstimate(
        variant="liminf-sequence",
        taus=seq.taus,
        values=vals,
        limit=liminf_tail(vals),
        cauchy_gap=gap,
        converged=gap <= tol,
        tolerance=tol,
        caveat=_LIMINF_CAVEAT,
    )


def default_family(problem, switch_times=(1.0, 2.0, 4.0), n_levels=5, max_switches=1) -> ControlFamily:
    """Constants over all control samples plus switched members on a coarse level set."""
    samples = problem.control_samples
    if len(samples) > n_levels:
        pick = np.unique(np.linspace(0, len(samples) - 1, n_levels).astype(int))
        levels = samples[pick]
    else:
        levels = samples
    switched = ControlFamily.switched(levels, switch_times, max_switches=max_switches, include_constants=False)
    k = switched.breakpoints.size
    const_vals = np.repeat(samples[:, None, :], k, axis=1)
    return ControlFamily(switched.breakpoints, np.concatenate([const_vals, switched.values]))


def family_cost_traces(problem, b, t, family: ControlFamily, seq: HorizonSequence, dt=1e-2):
    """J(t, b; u, tau) for every family member and every horizon; (members, taus)."""
    taus = seq.taus
    ft = integrate_family(problem, b, t, family.shifted(t) if t else family, float(taus[-1]), dt=dt, extra_nodes=taus)
    traces = np.stack([family_cost_between(problem, ft, t, tau) for tau in taus], axis=1)
    return ft, traces


def estimate_v_inf(problem, b, t, family: ControlFamily, horizons: HorizonSequence, tol=1e-2, dt=1e-2) -> LimitEstimate:
    """Infimum over the declared family of the liminf of truncated costs.

    The search space is explicitly finite; no claim is made about the
    infimum over all measurable controls.
    """
    if family.size == 0:
        raise ValueError("control family must be nonempty")
    b = np.atleast_1d(np.asarray(b, dtype=float))
    _, traces = family_cost_traces(problem, b, t, family, horizons, dt=dt)
    per_member = np.array([liminf_tail(row) for row in traces])
    best = int(np.argmin(per_member))
    winner = traces[best]
    gap = cauchy_gap(winner)
    return LimitEstimate(
        variant="inf-over-controls",
        taus=horizons.taus,
        values=winner,
        limit=float(per_member[best]),
        cauchy_gap=gap,
        converged=gap <= tol,
        tolerance=tol,
        caveat=_LIMINF_CAVEAT,
        extras={"argmin_control": family.member(best).descriptor(), "argmin_index": best, "family_size": family.size},
    )


def lipschitz_constant_map(target, region_lo, region_hi, t=0.0, h=None):
    """Per-cell max |forward difference| / h over a lattice on the region.

    ``target`` is a ValueGrid or a (t, x)->value callable.  Returns the
    per-cell constants (one per lattice cell) and the region-wide max.
    """
    field_fn = target if callable(target) else as_grid_field(target)
    region_lo = np.atleast_1d(np.asarray(region_lo, dtype=float))
    region_hi = np.atleast_1d(np.asarray(region_hi, dtype=float))
    m = region_lo.size
    if h is None:
        h = (region_hi - region_lo) / 16.0
    h = np.broadcast_to(np.asarray(h, dtype=float), (m,)).copy()
    axes = [np.arange(a, b + step / 2, step) for a, b, step in zip(region_lo, region_hi, h)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    shape = grids[0].shape
    vals = np.asarray(field_fn(t, pts)).reshape(shape)
    cell_shape = tuple(max(n - 1, 1) for n in shape)
    cells = np.zeros(cell_shape)
    for d in range(m):
        diff = np.abs(np.diff(vals, axis=d)) / h[d]
        sl = tuple(slice(0, cell_shape[k]) for k in range(m))
        cells = np.maximum(cells, diff[sl])
    return cells, float(cells.max())


def as_grid_field(grid: ValueGrid):
    def field(t, x):
        return evaluate(grid, t, x)

    return field
