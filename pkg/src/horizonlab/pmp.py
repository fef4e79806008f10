"""Costate arcs, maximum-condition residuals, superdifferential probes, and
certificate construction/verification.

The certificate constructor mirrors the limit construction: for each horizon
it solves the terminal-value (Bolza) problem, reads costate seeds off the
local slope of the resulting value table at the start point, clusters the
seeds across horizons, and integrates the winning seed forward along the
candidate trajectory.  Verification checks the maximum condition and both
sensitivity relations against the supplied value field, plus the
optimal-in-view residuals.

Superdifferential membership is decided by a finite-sample surrogate with an
explicit slack, never claimed as exact set membership.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .problems import BlowUpError, ControlSignal, Trajectory, hamiltonian, integrate_trajectory
from .value import GridSpec, bolza_extend, evaluate

# Slack factor for the superdifferential surrogate.  A C^2 field probed at
# radius r shows a curvature defect ~ (h''/2) r, so the slack must dominate
# (h''/2) * r0/4 for the gradient itself to pass; 0.05 does that for the
# default ladder at curvature ~ 1 while still rejecting slope errors ~ 0.5.
ETA_FACTOR = 0.05
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CostateArc:
    """Costate trajectory with its cost multiplier (0 or 1)."""

    times: np.ndarray
    psi: np.ndarray
    lam: int
    origin: str = "forward-from-0"

    def __post_init__(self):
        if self.lam not in (0, 1):
            raise ValueError("multiplier must be exactly 0 or 1")
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "psi", np.atleast_2d(np.asarray(self.psi, dtype=float)))

    def psi_at(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack(
            [np.interp(s, self.times, self.psi[:, j]) for j in range(self.psi.shape[1])], axis=-1
        )

    def ode_residual(self, problem, traj: Trajectory):
        """Max finite-difference defect of -psi' = psi . df/dx - lam * df0/dx."""
        ts = self.times
        mid = 0.5 * (ts[:-1] + ts[1:])
        dpsi = np.diff(self.psi, axis=0) / np.diff(ts)[:, None]
        xs = traj.state_at(mid)
        us = traj.control_ref.value_at(mid)
        psi_mid = 0.5 * (self.psi[:-1] + self.psi[1:])
        jac = problem.jac_f_x(mid[:, None], xs, us)
        grad0 = problem.grad_f0_x(mid[:, None], xs, us)
        rhs = -np.einsum("ni,nij->nj", psi_mid, jac) + self.lam * grad0
        return float(np.abs(dpsi - rhs).max())


def _hermite_midpoints(problem, traj):
    """States at step midpoints via cubic Hermite through the stored nodes."""
    ts = traj.time_nodes
    xs = traj.states
    us = traj.control_ref.value_at(ts[:-1])
    f0 = problem.f(ts[:-1, None], xs[:-1], us)
    f1 = problem.f(ts[1:, None], xs[1:], us)
    h = np.diff(ts)[:, None]
    return 0.5 * (xs[:-1] + xs[1:]) + h / 8.0 * (f0 - f1)


def integrate_costate(problem, traj: Trajectory, seed, lam, direction="forward-from-0") -> CostateArc:
    """4th-order integration of -psi' = psi . df/dx - lam * df0/dx along a trajectory."""
    if direction not in ("forward-from-0", "backward-from-T"):
        raise ValueError("direction must be forward-from-0 or backward-from-T")
    ts = traj.time_nodes
    xs = traj.states
    mids = _hermite_midpoints(problem, traj)
    us = traj.control_ref.value_at(ts[:-1])
    m = problem.state_dim
    psi = np.empty((ts.size, m))

    def rhs(t, psi_val, x, u):
        jac = problem.jac_f_x(t, x, u)
        grad0 = problem.grad_f0_x(t, x, u)
        return -psi_val @ jac + lam * grad0

    if direction == "forward-from-0":
        psi[0] = np.asarray(seed, dtype=float)
        order = range(ts.size - 1)
        def step(k):
            h = ts[k + 1] - ts[k]
            k1 = rhs(ts[k], psi[k], xs[k], us[k])
            k2 = rhs(ts[k] + h / 2, psi[k] + h / 2 * k1, mids[k], us[k])
            k3 = rhs(ts[k] + h / 2, psi[k] + h / 2 * k2, mids[k], us[k])
            k4 = rhs(ts[k + 1], psi[k] + h * k3, xs[k + 1], us[k])
            psi[k + 1] = psi[k] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return k + 1
    else:
        psi[-1] = np.asarray(seed, dtype=float)
        order = range(ts.size - 2, -1, -1)
        def step(k):
            h = ts[k] - ts[k + 1]
            k1 = rhs(ts[k + 1], psi[k + 1], xs[k + 1], us[k])
            k2 = rhs(ts[k + 1] + h / 2, psi[k + 1] + h / 2 * k1, mids[k], us[k])
            k3 = rhs(ts[k + 1] + h / 2, psi[k + 1] + h / 2 * k2, mids[k], us[k])
            k4 = rhs(ts[k], psi[k + 1] + h * k3, xs[k], us[k])
            psi[k] = psi[k + 1] + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            return k
    for k in order:
        j = step(k)
        if not np.all(np.isfinite(psi[j])):
            raise BlowUpError("costate", ts[j])
    return CostateArc(times=ts.copy(), psi=psi, lam=int(lam), origin=direction)


def max_condition_residual(problem, traj: Trajectory, arc: CostateArc) -> float:
    """Worst defect of the maximum condition sup_v H = H(u*) along the arc.

    The sup is over the control samples, sharpened by one golden-section
    refinement per control dimension around the best sample; the candidate
    set always contains u*(s), so the result is nonnegative.
    """
    if traj.time_nodes.size != arc.times.size or not np.allclose(traj.time_nodes, arc.times):
        raise ValueError("arc and trajectory must share time nodes")
    ts = traj.time_nodes
    xs = traj.states
    psi = arc.psi
    lam = arc.lam
    us_star = traj.control_ref.value_at(ts)
    samples = problem.control_samples
    n = ts.size

    def H(u):
        return (psi * problem.f(ts[:, None], xs, u)).sum(axis=-1) - lam * problem.f0(ts[:, None], xs, u)

    h_star = H(us_star)
    h_all = np.stack([H(np.broadcast_to(u, (n, u.size))) for u in samples])
    best = h_all.max(axis=0)
    best_idx = h_all.argmax(axis=0)

    for d in range(problem.control_dim):
        levels = np.unique(samples[:, d])
        if levels.size < 2:
            continue
        pos = np.searchsorted(levels, samples[best_idx, d])
        lo = levels[np.maximum(pos - 1, 0)]
        hi = levels[np.minimum(pos + 1, levels.size - 1)]
        u_work = samples[best_idx].copy()

        def H_axis(vals):
            u = u_work.copy()
            u[:, d] = vals
            return H(u)

        a, b = lo.copy(), hi.copy()
        c1 = b - _GOLDEN * (b - a)
        c2 = a + _GOLDEN * (b - a)
        f1, f2 = H_axis(c1), H_axis(c2)
        for _ in range(40):
            take_left = f1 >= f2
            b = np.where(take_left, c2, b)
            a = np.where(take_left, a, c1)
            c1 = b - _GOLDEN * (b - a)
            c2 = a + _GOLDEN * (b - a)
            f1, f2 = H_axis(c1), H_axis(c2)
        best = np.maximum(best, np.maximum(f1, f2))

    return float(np.maximum(best - h_star, 0.0).max())


@dataclass(frozen=True)
class SuperdifferentialProbe:
    """Finite-sample surrogate of the one-sided gradient test at a point."""

    target: Callable
    base: np.ndarray
    directions: np.ndarray
    radii: np.ndarray
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "base", np.atleast_1d(np.asarray(self.base, dtype=float)))
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("directions must be nonzero")
        object.__setattr__(self, "directions", dirs / norms)
        radii = np.asarray(self.radii, dtype=float)
        if not np.all(np.diff(radii) < 0):
            raise ValueError("radii must be strictly decreasing")
        object.__setattr__(self, "radii", radii)


def make_probe(target, base, directions=None, r0=0.1, levels=7, eta=None, rng=None) -> SuperdifferentialProbe:
    """Probe with the default direction set (+-axes plus 2d random units)."""
    base = np.atleast_1d(np.asarray(base, dtype=float))
    d = base.size
    if directions is None:
        axes = np.concatenate([np.eye(d), -np.eye(d)])
        rng = np.random.default_rng(0) if rng is None else rng
        rand = rng.normal(size=(2 * d, d))
        rand /= np.linalg.norm(rand, axis=1, keepdims=True)
        directions = np.concatenate([axes, rand])
    radii = r0 * 2.0 ** (-np.arange(levels))
    if eta is None:
        scale = max(1.0, abs(float(np.asarray(target(base[None, :])).reshape(-1)[0])))
        eta = ETA_FACTOR * scale
    return SuperdifferentialProbe(target=target, base=base, directions=np.asarray(directions, dtype=float), radii=radii, eta=float(eta))


def frechet_defect(probe: SuperdifferentialProbe, zeta) -> float:
    """Worst normalized one-sided defect max [h(x+rd) - h(x) - r zeta.d]/r - eta.

    Nonpositive means the candidate passes.  Only radii at or below a quarter
    of the coarsest one participate, so the decision reflects the
    shrinking-neighborhood limsup rather than the large-scale field shape.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    radii = probe.radii[probe.radii <= probe.radii[0] / 4 + 1e-15]
    h0 = float(np.asarray(probe.target(probe.base[None, :])).reshape(-1)[0])
    pts = probe.base[None, None, :] + radii[:, None, None] * probe.directions[None, :, :]
    vals = np.asarray(probe.target(pts.reshape(-1, probe.base.size))).reshape(len(radii), -1)
    lin = radii[:, None] * (probe.directions @ zeta)[None, :]
    defect = (vals - h0 - lin) / radii[:, None]
    return float(defect.max() - probe.eta)


def frechet_super_test(probe: SuperdifferentialProbe, zeta) -> bool:
    """One-sided membership surrogate; see frechet_defect."""
    return frechet_defect(probe, zeta) <= 0.0


def limiting_super_candidates(target, point, rho, fd_step=None, rng=None, eta=None):
    """Gradient estimates near the point that pass the one-sided test at their own base.

    Central-difference gradients are taken on a small lattice inside the
    rho-ball; survivors approximate elements whose limits build the limiting
    superdifferential at the point.  An empty list is a valid outcome.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    d = point.size
    per_dim = {1: 27, 2: 5, 3: 3}.get(d, 3)
    offs = [np.linspace(-rho, rho, per_dim)] * d
    grids = np.meshgrid(*offs, indexing="ij")
    lattice = np.stack([g.ravel() for g in grids], axis=-1)
    lattice = lattice[np.linalg.norm(lattice, axis=1) <= rho + 1e-12]
    step = fd_step if fd_step is not None else rho / 20.0
    kept = []
    for off in lattice:
        base = point + off
        grad = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            hi = float(np.asarray(target((base + e)[None, :])).reshape(-1)[0])
            lo = float(np.asarray(target((base - e)[None, :])).reshape(-1)[0])
            grad[j] = (hi - lo) / (2 * step)
        probe = make_probe(target, base, r0=min(0.1, max(2 * step, rho / 4)), rng=rng, eta=eta)
        if frechet_super_test(probe, grad):
            kept.append(grad)
    return np.asarray(kept).reshape(-1, d)


def _joint_field(v_field):
    def joint(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray([v_field(p[0], p[1:]) for p in pts], dtype=float)

    return joint


def _state_field(v_field, t):
    def fn(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray([v_field(t, p) for p in pts], dtype=float)

    return fn


def sensitivity_residuals(v_field, traj: Trajectory, arc: CostateArc, problem, eta=None, n_times=50, rng=None, rho=0.05):
    """Check both sensitivity relations of the arc against a value field.

    sens1: -psi(0) must pass the one-sided test for V(0,.) at the start
    state, or sit within eta of a limiting-superdifferential candidate.
    sens2: at sampled times (control breakpoints excluded), the joint vector
    (H, -psi(s)) must pass the test for V as a function of (s, x).
    """
    if arc.lam != 1:
        raise ValueError("sensitivity relations are checked in normal form (lam = 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    t0, t1 = traj.time_nodes[0], traj.time_nodes[-1]

    x0 = traj.states[0]
    state_fn = _state_field(v_field, t0)
    probe0 = make_probe(state_fn, x0, rng=rng, eta=eta)
    zeta0 = -arc.psi[0]
    sens1 = frechet_super_test(probe0, zeta0)
    if not sens1:
        cands = limiting_super_candidates(state_fn, x0, rho, rng=rng, eta=eta)
        if len(cands):
            sens1 = bool(np.min(np.linalg.norm(cands - zeta0, axis=1)) <= probe0.eta)

    times = rng.uniform(t0, t1, size=n_times)
    bps = traj.control_ref.breakpoints
    keep = np.all(np.abs(times[:, None] - bps[None, :]) > 1e-6, axis=1)
    times = np.sort(times[keep])
    joint = _joint_field(v_field)
    passes = 0
    worst_time = None
    worst_defect = -np.inf
    for s in times:
        x_s = traj.state_at(s)
        psi_s = arc.psi_at(s)
        u_s = traj.control_ref.value_at(s)
        h_s = hamiltonian(problem, x_s, u_s, psi_s, 1, s)
        zeta = np.concatenate([[h_s], -np.atleast_1d(psi_s)])
        probe = make_probe(joint, np.concatenate([[s], np.atleast_1d(x_s)]), rng=rng, eta=eta)
        defect = frechet_defect(probe, zeta)
        passes += defect <= 0.0
        if defect > worst_defect:
            worst_defect, worst_time = defect, float(s)
    frac = passes / max(1, len(times))
    return {"sens1_pass": bool(sens1), "sens2_pass_fraction": float(frac), "sens2_worst_time": worst_time}


def _cluster_seeds(seeds, merge_radius):
    """Single-linkage clusters; returns (members_idx, mean) per cluster."""
    n = len(seeds)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(seeds[i] - seeds[j]) <= merge_radius:
                parent[find(i)] = find(j)
    clusters = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    return [(idx, np.mean([seeds[i] for i in idx], axis=0)) for idx in clusters.values()]


@dataclass(frozen=True)
class CertificateReport:
    found: bool
    reason: str
    lam: int
    psi0: Optional[np.ndarray]
    max_condition_residual: Optional[float]
    sens1_pass: Optional[bool]
    sens2_pass_fraction: Optional[float]
    sens2_worst_time: Optional[float]
    optimal_residuals: list
    arc: Optional[CostateArc]
    extras: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "found": self.found,
            "reason": self.reason,
            "lambda": self.lam,
            "psi0": None if self.psi0 is None else np.asarray(self.psi0).tolist(),
            "max_condition_residual": self.max_condition_residual,
            "sens1_pass": self.sens1_pass,
            "sens2_pass_fraction": self.sens2_pass_fraction,
            "optimal_residuals": [{"T": float(T), "value": float(v)} for T, v in self.optimal_residuals],
        }

    def arc_csv(self, path):
        if self.arc is None:
            raise ValueError("no arc to export")
        with open(path, "w") as fh:
            cols = ",".join(f"psi{i+1}" for i in range(self.arc.psi.shape[1]))
            fh.write(f"t,{cols}\n")
            for t, row in zip(self.arc.times, self.arc.psi):
                fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def pmp_certificate(
    problem,
    v_field,
    u_star: ControlSignal,
    horizons,
    spec: GridSpec,
    arc: Optional[CostateArc] = None,
    t_end=10.0,
    dt=1e-3,
    optimal_T=None,
    cert_tol=1e-3,
    value_tol=2e-2,
    sens_fraction=0.98,
    rho=None,
    rng=None,
) -> CertificateReport:
    """Construct (or verify) a normal-form certificate for u* against a value field.

    Without an arc: for each horizon solve the terminal-value problem with
    terminal v_field(tau, .), read costate seeds from the slope of the
    resulting table at the start state, cluster seeds across horizons
    (merge radius 10h, largest cluster wins, ties to the smaller seed), and
    integrate the winner forward.  With an arc: verification only.
    A failed construction reports found=False rather than raising.
    """
    from .criteria import optimal_in_view_residual

    taus = np.asarray(getattr(horizons, "taus", horizons), dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    b = problem.initial_state
    t_end = max(float(t_end), float(taus.max()))
    traj = integrate_trajectory(problem, b, 0.0, u_star, t_end, dt=dt)
    rho = rho if rho is not None else max(5.0 * float(np.max(spec.h)), 0.02)

    extras = {}
    if arc is None:
        seeds, seed_origin = [], []
        for tau in taus:
            grid = bolza_extend(problem, spec.with_horizon(tau), lambda X, tau=tau: _field_on_states(v_field, tau, X))
            layer0 = _state_field_from_grid(grid)
            cands = limiting_super_candidates(layer0, b, rho, rng=rng)
            for zeta in cands:
                seeds.append(-zeta)
                seed_origin.append(tau)
        if not seeds:
            return CertificateReport(
                found=False, reason="no costate seeds: no slope candidate passed the one-sided test",
                lam=1, psi0=None, max_condition_residual=None, sens1_pass=None,
                sens2_pass_fraction=None, sens2_worst_time=None, optimal_residuals=[], arc=None,
            )
        merge_radius = 10.0 * float(np.max(spec.h))
        clusters = _cluster_seeds(np.asarray(seeds), merge_radius)
        clusters.sort(key=lambda c: (-len(c[0]), float(np.linalg.norm(c[1]))))
        members, seed = clusters[0]
        horizons_hit = {seed_origin[i] for i in members}
        extras["seed_cluster_size"] = len(members)
        extras["seed_horizons"] = sorted(horizons_hit)
        if len(horizons_hit) < max(2, int(np.ceil(len(taus) / 2))):
            return CertificateReport(
                found=False, reason="no seed cluster stabilizes across the horizon sequence",
                lam=1, psi0=np.asarray(seed), max_condition_residual=None, sens1_pass=None,
                sens2_pass_fraction=None, sens2_worst_time=None, optimal_residuals=[], arc=None, extras=extras,
            )
        arc = integrate_costate(problem, traj, seed, lam=1, direction="forward-from-0")

    max_res = max_condition_residual(problem, traj, arc)
    sens = sensitivity_residuals(v_field, traj, arc, problem, rng=rng, rho=rho)
    t_list = optimal_T if optimal_T is not None else [float(v) for v in taus if v <= t_end]
    residuals = optimal_in_view_residual(v_field, problem, u_star, t_list, dt=dt, traj=traj)

    ok = (
        max_res <= cert_tol
        and sens["sens1_pass"]
        and sens["sens2_pass_fraction"] >= sens_fraction
        and max(abs(v) for _, v in residuals) <= value_tol
    )
    if ok:
        reason = "all relations hold within tolerance"
    elif max_res > cert_tol:
        reason = f"maximum-condition residual {max_res:.3g} exceeds {cert_tol:.3g}"
    elif not sens["sens1_pass"]:
        reason = "initial-costate sensitivity relation failed"
    elif sens["sens2_pass_fraction"] < sens_fraction:
        reason = f"joint sensitivity pass fraction {sens['sens2_pass_fraction']:.3f} below {sens_fraction}"
    else:
        worst = max(abs(v) for _, v in residuals)
        reason = f"optimal-in-view residual {worst:.3g} exceeds {value_tol:.3g}"

    return CertificateReport(
        found=bool(ok),
        reason=reason,
        lam=arc.lam,
        psi0=arc.psi[0].copy(),
        max_condition_residual=max_res,
        sens1_pass=sens["sens1_pass"],
        sens2_pass_fraction=sens["sens2_pass_fraction"],
        sens2_worst_time=sens["sens2_worst_time"],
        optimal_residuals=residuals,
        arc=arc,
        extras=extras,
    )


def _field_on_states(v_field, t, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.asarray(v_field(t, X), dtype=float)


def _state_field_from_grid(grid):
    def fn(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return evaluate(grid, 0.0, pts)

    return fn
