"""Nonautonomous exit-time optimal control on the space-time grid.

Backward first-order semi-Lagrangian sweeps compute the value field; greedy
descent on the interpolated value synthesizes trajectories. The candidate
move set from a point with budget r = k*dt is the null step, the two (or
2d/graph generalized) sphere endpoints at metric distance r, and every grid
node inside the closed r-ball. On the interval backend this computes the
exact minimum of the piecewise-linear value over the reachable ball, which
makes the scheme monotone in the speed field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BIG = 1e30


class OcpError(RuntimeError):
    pass


class HorizonError(OcpError):
    pass


class SynthesisStall(OcpError):
    pass


def default_dpp_tol(domain, dt):
    """First-order scheme tolerance 4*(dt + dx)."""
    return 4.0 * (dt + domain.dx)


class SpeedField:
    """Speed cap k(t_j, x_i) on the space-time grid, bounded per (H5)."""

    def __init__(self, domain, dt, values, bounds):
        self.domain = domain
        self.dt = float(dt)
        self.values = np.asarray(values, dtype=float)
        self.k_min, self.k_max = float(bounds[0]), float(bounds[1])
        if self.values.ndim != 2 or self.values.shape[1] != domain.n_nodes:
            raise OcpError("speed field must have shape (n_times, n_nodes)")
        if self.k_min <= 0:
            raise OcpError("speed lower bound must be positive (H5)")
        lo, hi = self.values.min(), self.values.max()
        if lo < self.k_min - 1e-9 or hi > self.k_max + 1e-9:
            raise OcpError(
                f"speed values [{lo:.6g}, {hi:.6g}] leave the declared bounds "
                f"[{self.k_min:.6g}, {self.k_max:.6g}] (H5)")

    @classmethod
    def constant(cls, domain, k, dt, horizon):
        n_steps = int(np.ceil(horizon / dt - 1e-9))
        values = np.full((n_steps + 1, domain.n_nodes), float(k))
        return cls(domain, dt, values, (k, k))

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def time_index(self, t):
        j = int(round(t / self.dt))
        if t < -self.dt / 2 or j > self.n_steps:
            raise OcpError(f"time {t} outside the field horizon {self.horizon}")
        return max(j, 0)

    def at_nodes(self, j):
        return self.values[min(j, self.n_steps)]

    def at_points(self, j, pts):
        return self.domain.interp(self.at_nodes(j), pts)

    def spatial_lipschitz_excess(self, l_r, rng=None, samples=200, radius=None):
        """Worst sampled violation of |k(t,x1)-k(t,x2)| <= L_R d(x1,x2) (H6)."""
        rng = np.random.default_rng(0) if rng is None else rng
        n = self.domain.n_nodes
        od = self.domain.origin_node_distances()
        pool = np.arange(n) if radius is None else np.flatnonzero(od <= radius)
        worst = -np.inf
        for _ in range(samples):
            i, j = rng.choice(pool, size=2)
            if i == j:
                continue
            t = rng.integers(0, self.n_steps + 1)
            gap = abs(self.values[t, i] - self.values[t, j])
            worst = max(worst, gap - l_r * self.domain.distance(i, j))
        return worst


class ValueField:
    """Value function phi(t_j, x_i) with backend-native spatial interpolation."""

    def __init__(self, domain, dt, values):
        self.domain = domain
        self.dt = float(dt)
        self.values = np.asarray(values, dtype=float)

    @property
    def n_steps(self):
        return self.values.shape[0] - 1

    @property
    def horizon(self):
        return self.n_steps * self.dt

    def time_index(self, t):
        return max(min(int(round(t / self.dt)), self.n_steps), 0)

    def at_points(self, j, pts):
        return self.domain.interp(self.values[min(j, self.n_steps)], pts)

    def at(self, t, point):
        pts = np.atleast_1d(np.asarray(point, dtype=float))
        if self.domain.kind != "interval":
            pts = np.atleast_2d(pts)
        return float(self.at_points(self.time_index(t), pts)[0])


@dataclass
class Trajectory:
    """A single timed path on the grid, constant before start and after exit."""

    domain: object
    dt: float
    samples: np.ndarray
    start_index: int
    exit_index: int  # -1 when the path never reaches the target set
    exit_node: int   # target node index at exit, -1 otherwise
    realized_cost: float

    @property
    def n_steps(self):
        return self.samples.shape[0] - 1

    def position(self, j):
        return self.samples[min(j, self.n_steps)]


def horizon_bound(domain, cost, bounds, r):
    """A-priori value bound T(R) = G_0 + D d(0, y_0)/K_min + D R/K_min."""
    if len(domain.targets) == 0:
        raise OcpError("target set is empty")
    k_min = bounds[0]
    y0 = int(domain.targets[np.argmin([domain.distance(domain.origin, t) for t in domain.targets])])
    g0 = cost.at_node(y0)
    d0 = domain.distance(domain.origin, y0)
    d_const = domain.geodesic_constant
    return g0 + d_const * d0 / k_min + d_const * float(r) / k_min


def trajectory_bound(t_of_r, k_max, r):
    """Confinement radius psi(R) = K_max T(R) + R for optimal paths."""
    return k_max * t_of_r + float(r)


def _reach_min(domain, node_pts, next_values, r):
    """Minimum of the interpolated next slice over each node's reach ball."""
    cand, disp, valid = domain.reach_candidates(node_pts, r)
    m, s_count = disp.shape
    best = np.full(m, BIG)
    for s in range(s_count):
        vals = domain.interp(next_values, cand[:, s])
        vals = np.where(valid[:, s], vals, BIG)
        best = np.minimum(best, vals)
    return best


def solve_value(domain, cost, speed, min_horizon=None, stationary_tol=1e-10):
    """Backward semi-Lagrangian solve of the exit-time value function.

    The terminal slice is the stationary minimal-time solve under the frozen
    final speed slice, which removes horizon truncation bias; earlier slices
    follow the dynamic programming recursion with the exit cost pinned on the
    target set at every slice.
    """
    if cost.lipschitz_constant * speed.k_max >= 1.0:
        raise OcpError(
            f"smallness violated: L_g * K_max = {cost.lipschitz_constant * speed.k_max:.6g} >= 1 (H10)")
    if min_horizon is not None and speed.horizon < min_horizon - 1e-9:
        raise HorizonError(
            f"horizon {speed.horizon:.6g} is below the required bound {min_horizon:.6g}")
    dt = speed.dt
    n_steps = speed.n_steps
    g = cost.node_table()
    targets = domain.targets
    g_t = g[targets]

    # terminal slice: stationary fixed point under the frozen last speed
    # slice, iterated monotonically down from the a-priori supersolution
    # T-style bound (geodesic travel at K_min plus the worst exit cost)
    node_pts = domain.node_points()
    r_last = speed.at_nodes(n_steps) * dt
    tdist = domain.target_node_distances()
    if not np.all(np.isfinite(tdist)):
        raise OcpError("some nodes cannot reach the target; domain may be disconnected")
    phi = tdist * domain.geodesic_constant / speed.k_min + cost.max_cost
    phi[targets] = g_t
    max_sweeps = int(3 * np.max(tdist) / (speed.k_min * dt)) + 200
    for _ in range(max_sweeps):
        new = dt + _reach_min(domain, node_pts, phi, r_last)
        new[targets] = g_t
        new = np.minimum(new, phi)
        delta = np.max(phi - new)
        phi = new
        if delta <= stationary_tol:
            break
    else:
        raise OcpError("stationary terminal solve did not converge")

    values = np.empty((n_steps + 1, domain.n_nodes))
    values[n_steps] = phi
    for j in range(n_steps - 1, -1, -1):
        r = speed.at_nodes(j) * dt
        values[j] = dt + _reach_min(domain, node_pts, values[j + 1], r)
        values[j][targets] = g_t
    return ValueField(domain, dt, values)


def _select_candidates(vals, disp):
    """Argmin by (value, displacement, slot order); slots are direction-ordered."""
    m, s_count = vals.shape
    best_val = vals[:, 0].copy()
    best_disp = disp[:, 0].copy()
    best_slot = np.zeros(m, dtype=int)
    for s in range(1, s_count):
        better = (vals[:, s] < best_val) | ((vals[:, s] == best_val) & (disp[:, s] < best_disp))
        best_val = np.where(better, vals[:, s], best_val)
        best_disp = np.where(better, disp[:, s], best_disp)
        best_slot = np.where(better, s, best_slot)
    return best_slot, best_val


def synthesize_batch(phi, speed, start_points, t0=0.0, raise_on_stall=True):
    """Greedy semi-Lagrangian descent for a batch of start points at time t0.

    Returns (samples, start_index, exit_indices, exit_nodes). Exit positions
    snap to the hit target node; paths extend constantly before t0 and after
    exit.
    """
    domain = phi.domain
    dt = phi.dt
    n_steps = phi.n_steps
    j0 = speed.time_index(t0)
    pts = np.asarray(start_points, dtype=float).copy()
    if domain.kind == "interval":
        pts = np.atleast_1d(pts)
        shape = (len(pts), n_steps + 1)
    else:
        pts = np.atleast_2d(pts)
        shape = (len(pts), n_steps + 1, pts.shape[1])
    m = len(pts)
    samples = np.empty(shape)
    exit_idx = np.full(m, -1, dtype=int)
    exit_node = np.full(m, -1, dtype=int)

    pos, tgt = domain.snap_to_target(pts)
    hit = tgt >= 0
    exit_idx[hit] = j0
    exit_node[hit] = tgt[hit]
    samples[:, :j0 + 1] = pos[:, None] if domain.kind == "interval" else pos[:, None, :]

    for j in range(j0, n_steps):
        active = np.flatnonzero(exit_idx < 0)
        if len(active) == 0:
            tail = samples[:, j] if domain.kind == "interval" else samples[:, j, :]
            samples[:, j + 1:] = tail[:, None] if domain.kind == "interval" else tail[:, None, :]
            break
        cur = pos[active]
        r = speed.at_points(j, cur) * dt
        cand, disp, valid = domain.reach_candidates(cur, r)
        s_count = disp.shape[1]
        vals = np.empty((len(active), s_count))
        for s in range(s_count):
            v = domain.interp(phi.values[j + 1], cand[:, s])
            vals[:, s] = np.where(valid[:, s], v, BIG)
        slot, best_val = _select_candidates(vals, disp)
        if np.any(best_val >= BIG / 2):
            k = active[int(np.flatnonzero(best_val >= BIG / 2)[0])]
            raise SynthesisStall(f"no admissible move from {pos[k]} at step {j}")
        new = cand[np.arange(len(active)), slot]
        snapped, tgt = domain.snap_to_target(new)
        pos[active] = snapped
        hit = tgt >= 0
        exit_idx[active[hit]] = j + 1
        exit_node[active[hit]] = tgt[hit]
        samples[:, j + 1] = pos
    if raise_on_stall:
        stuck = np.flatnonzero(exit_idx < 0)
        if len(stuck) > 0:
            k = int(stuck[0])
            raise SynthesisStall(
                f"synthesis stall: trajectory from {start_points[k]} never reached "
                f"the target within the horizon (stall position {pos[k]})")
    return samples, j0, exit_idx, exit_node


def synthesize_optimal(phi, speed, cost, t0, x0, raise_on_stall=True):
    """One optimal trajectory from (t0, x0); realized cost = exit time + exit cost."""
    start = np.array([x0]) if phi.domain.kind == "interval" else np.array([x0], dtype=float)
    samples, j0, exit_idx, exit_node = synthesize_batch(
        phi, speed, start, t0, raise_on_stall=raise_on_stall)
    e, node = int(exit_idx[0]), int(exit_node[0])
    if e >= 0:
        realized = (e - j0) * phi.dt + cost.at_node(node)
    else:
        realized = np.inf
    return Trajectory(phi.domain, phi.dt, samples[0], j0, e, node, realized)


def first_exit_time(traj):
    """Exit time after start, or inf when the path never reaches the target."""
    if traj.exit_index < 0:
        return np.inf
    return (traj.exit_index - traj.start_index) * traj.dt


def final_cost(traj, cost):
    if traj.exit_index < 0:
        return np.inf
    return cost.at_node(traj.exit_node)


def is_admissible(traj, speed, slack):
    """Check per-step displacement <= k(t_j, gamma(t_j)) dt + slack.

    Returns (ok, report) where report carries the worst step violation.
    """
    domain = traj.domain
    worst = -np.inf
    worst_step = -1
    for j in range(traj.n_steps):
        p = traj.samples[j]
        q = traj.samples[j + 1]
        pb = np.atleast_1d(p) if domain.kind == "interval" else np.atleast_2d(p)
        step = float(np.atleast_1d(domain.point_distance(p, q))[0])
        budget = float(speed.at_points(j, pb)[0]) * traj.dt + slack
        if step - budget > worst:
            worst = step - budget
            worst_step = j
    report = {"worst_violation": worst, "worst_step": worst_step}
    return worst <= 1e-12, report


def check_dpp(phi, traj):
    """Residuals of phi(t0+h, gamma(t0+h)) + h >= phi(t0, x0) on the grid.

    Returns the worst inequality violation (positive when the inequality
    fails) and the worst equality residual up to the exit index.
    """
    domain = phi.domain
    j0 = traj.start_index
    j_end = traj.exit_index if traj.exit_index >= 0 else traj.n_steps
    x0 = traj.samples[j0]
    x0b = np.atleast_1d(x0) if domain.kind == "interval" else np.atleast_2d(x0)
    base = float(phi.at_points(j0, x0b)[0])
    worst_ineq = 0.0
    worst_eq = 0.0
    for j in range(j0, j_end + 1):
        p = traj.samples[j]
        pb = np.atleast_1d(p) if domain.kind == "interval" else np.atleast_2d(p)
        val = float(phi.at_points(j, pb)[0]) + (j - j0) * phi.dt - base
        worst_ineq = max(worst_ineq, -val)
        worst_eq = max(worst_eq, abs(val))
    return {"max_inequality_violation": worst_ineq, "max_equality_residual": worst_eq}


def check_value_regularity(phi, radius=None, rng=None, samples=400):
    """Empirical Lipschitz ratio and time-difference quotient of the value field.

    The time quotient floor > -1 is the grid-testable form of the
    time-monotonicity estimate; the spatial ratio is reported as measured.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    domain = phi.domain
    od = domain.origin_node_distances()
    pool = np.arange(domain.n_nodes) if radius is None else np.flatnonzero(od <= radius)
    spatial = 0.0
    quotient_min = np.inf
    for _ in range(samples):
        i, j = rng.choice(pool, size=2)
        t = rng.integers(0, phi.n_steps + 1)
        if i != j:
            d = domain.distance(i, j)
            spatial = max(spatial, abs(phi.values[t, i] - phi.values[t, j]) / d)
        t2 = rng.integers(0, phi.n_steps + 1)
        if t2 != t:
            q = (phi.values[t, i] - phi.values[t2, i]) / ((t - t2) * phi.dt)
            quotient_min = min(quotient_min, q)
    return {
        "spatial_lipschitz_ratio": spatial,
        "time_quotient_min": quotient_min if np.isfinite(quotient_min) else 0.0,
        "time_quotient_above_floor": bool(quotient_min > -1.0 or not np.isfinite(quotient_min)),
    }


def value_bound_excess(phi, domain, cost, bounds):
    """Worst excess of phi over T(R) + max g with R = d(0, x) (a-priori bound)."""
    od = domain.origin_node_distances()
    t_of_r = np.array([horizon_bound(domain, cost, bounds, r) for r in od])
    limit = t_of_r + cost.max_cost
    return float(np.max(phi.values - limit[None, :]))


def confinement_excess(samples, domain, cost, bounds):
    """Worst excess of trajectory excursions over the psi(R)-ball radius."""
    if domain.kind == "interval":
        flat = samples.reshape(-1)
        dists = domain.point_origin_distance(flat).reshape(samples.shape[0], -1)
    else:
        flat = samples.reshape(-1, samples.shape[-1])
        dists = domain.point_origin_distance(flat).reshape(samples.shape[0], -1)
    start_r = dists[:, 0]
    worst = -np.inf
    for k in range(samples.shape[0]):
        t_r = horizon_bound(domain, cost, bounds, start_r[k])
        psi_r = trajectory_bound(t_r, bounds[1], start_r[k])
        worst = max(worst, float(np.max(dists[k]) - psi_r))
    return worst
