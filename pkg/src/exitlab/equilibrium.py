"""Equilibrium computation as a damped fixed-point iteration of best response.

The damping state is a fictitious-play mixture of past best responses; each
iteration best-responds to the speed field induced by the mixture and then
measures the candidate's exploitability against the field induced by the
candidate itself. Convergence is declared when every atom's optimality gap
falls below the tolerance, which makes the weak and strong certification
flags coincide on the returned ensemble.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import ParticleMeasure, TrajectoryEnsemble
from .ocp import (SpeedField, horizon_bound, trajectory_bound, solve_value,
                  synthesize_batch, default_dpp_tol)

PRUNE_DEFAULT = 1e-9
BINNING_WORK_CAP = 4_000_000


class CertificationError(RuntimeError):
    pass


@dataclass
class EquilibriumConfig:
    max_iterations: int = 60
    damping: str = "fictitious_play"  # or "constant"
    damping_value: float = 0.5
    exploitability_tol: float = 0.02
    seed: int = 0
    prune_threshold: float = PRUNE_DEFAULT
    marginal_binning: str = "auto"  # "on" | "off" | "auto"

    def __post_init__(self):
        if self.exploitability_tol <= 0:
            raise ValueError("exploitability tolerance must be positive")
        if self.damping == "constant" and not (0 < self.damping_value <= 1):
            raise ValueError("constant damping weight must lie in (0, 1]")
        if self.damping not in ("fictitious_play", "constant"):
            raise ValueError(f"unknown damping rule {self.damping!r}")

    def weight(self, n):
        if self.damping == "fictitious_play":
            return 1.0 / (n + 1.0)
        return self.damping_value


@dataclass
class EquilibriumReport:
    final_ensemble: TrajectoryEnsemble
    converged: bool
    iterations: int
    exploitability: float
    max_gap: float
    history: list = field(default_factory=list)
    m_infinity: ParticleMeasure | None = None
    settled: bool = False
    bound_checks: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    tol: float = 0.0
    dt: float = 0.0
    r_max: float = 0.0
    t_bound: float = 0.0
    final_field: SpeedField | None = None
    final_phi: object = None


def run_grid(domain, kernel, cost, m0, dt=None, horizon_margin=2):
    """Unit-CFL time grid covering the a-priori exit bound of m0's support."""
    if dt is None:
        dt = domain.dx / kernel.k_max
    r_max = float(np.max(m0.origin_distances()))
    t_bound = horizon_bound(domain, cost, (kernel.k_min, kernel.k_max), r_max)
    n_steps = int(np.ceil(t_bound / dt - 1e-9)) + horizon_margin
    return dt, n_steps, r_max, t_bound


def _node_index_of_points(domain, pts):
    if domain.kind == "interval":
        return np.clip(np.round((pts - domain.lo) / domain.dx).astype(int), 0, domain.n_nodes - 1)
    if domain.kind == "grid2d":
        ix = np.clip(np.round((pts[:, 0] - domain.lo[0]) / domain.dx).astype(int), 0, domain.shape[0] - 1)
        iy = np.clip(np.round((pts[:, 1] - domain.lo[1]) / domain.dx).astype(int), 0, domain.shape[1] - 1)
        return ix * domain.shape[1] + iy
    pts = np.atleast_2d(pts)
    out = np.empty(len(pts), dtype=int)
    for k, p in enumerate(pts):
        u, v, s = int(p[0]), int(p[1]), float(p[2])
        out[k] = u if (u == v or s <= domain._edge_len(u, v) / 2) else v
    return out


def field_from_marginals(kernel, positions, weights, dt, binned):
    """Speed field k(t_j, x_i) from per-slice particle positions.

    positions has shape (n_traj, n_slices[, dim]); slice j of the field is
    the kernel evaluated against the weighted cloud at slice j, optionally
    histogram-binned to grid cells.
    """
    domain = kernel.domain
    n_slices = positions.shape[1]
    if kernel.kappa.family == "constant":
        values = np.full((n_slices, domain.n_nodes), kernel.kappa.value)
        return SpeedField(domain, dt, values, (kernel.k_min, kernel.k_max))
    values = np.empty((n_slices, domain.n_nodes))
    if binned:
        hist = np.zeros((n_slices, domain.n_nodes))
        for j in range(n_slices):
            idx = _node_index_of_points(domain, positions[:, j])
            np.add.at(hist[j], idx, weights)
        density = hist @ kernel.node_interaction_matrix().T
        values[:] = np.clip(kernel.kappa(density), kernel.k_min, kernel.k_max)
    else:
        for j in range(n_slices):
            mu = ParticleMeasure(domain, positions[:, j], weights, validate=False)
            values[j] = kernel.node_speeds(mu)
    return SpeedField(domain, dt, values, (kernel.k_min, kernel.k_max))


def _use_binning(config, n_traj, n_slices, n_nodes):
    if config.marginal_binning == "on":
        return True
    if config.marginal_binning == "off":
        return False
    return n_traj * n_slices * n_nodes > BINNING_WORK_CAP


def induced_speed_field(ensemble, kernel, binned=False):
    """k_Q(t, x) = K(e_t#Q, x) on the ensemble's grid."""
    return field_from_marginals(kernel, ensemble.samples, ensemble.weights,
                                ensemble.dt, binned)


def frozen_field(m0, kernel, dt, n_steps):
    """Time-constant field K(m_0, x), the iteration's starting point."""
    domain = kernel.domain
    if kernel.kappa.family == "constant":
        values = np.full((n_steps + 1, domain.n_nodes), kernel.kappa.value)
    else:
        values = np.tile(kernel.node_speeds(m0), (n_steps + 1, 1))
    return SpeedField(domain, dt, values, (kernel.k_min, kernel.k_max))


def best_response(field, m0, domain, cost):
    """Optimal trajectory per atom of m0 (t_0 = 0) under the given field."""
    phi = solve_value(domain, cost, field)
    samples, j0, exit_idx, exit_node = synthesize_batch(phi, field, m0.points, 0.0,
                                                        raise_on_stall=True)
    ensemble = TrajectoryEnsemble(domain, field.dt, samples, m0.weights.copy(),
                                  np.full(m0.n_atoms, j0), exit_idx, validate=False)
    ensemble.exit_nodes = exit_node
    return ensemble, phi


def realized_costs(ensemble, cost, cap=None):
    """Exit time plus exit cost per trajectory; non-exits get capped + flagged."""
    n = ensemble.n_traj
    out = np.empty(n)
    capped = 0
    exit_nodes = getattr(ensemble, "exit_nodes", None)
    for k in range(n):
        e = ensemble.exit_indices[k]
        if e < 0:
            out[k] = np.inf if cap is None else cap
            capped += 1
        else:
            if exit_nodes is not None and exit_nodes[k] >= 0:
                g = cost.at_node(int(exit_nodes[k]))
            else:
                p = ensemble.samples[k, e]
                _, tgt = ensemble.domain.snap_to_target(
                    np.atleast_1d(p) if ensemble.domain.kind == "interval" else np.atleast_2d(p))
                g = cost.at_node(int(tgt[0])) if tgt[0] >= 0 else np.inf
            out[k] = (e - ensemble.start_indices[k]) * ensemble.dt + g
    return out, capped


def admissibility_excess(ensemble, speed, slack):
    """Worst step-length excess over k dt + slack across the whole ensemble."""
    domain = ensemble.domain
    worst = -np.inf
    for j in range(ensemble.n_steps):
        cur = ensemble.samples[:, j]
        nxt = ensemble.samples[:, j + 1]
        if domain.kind == "interval":
            step = np.abs(nxt - cur)
        else:
            step = np.array([float(np.atleast_1d(domain.point_distance(a, b))[0])
                             for a, b in zip(np.atleast_2d(cur), np.atleast_2d(nxt))])
        budget = speed.at_points(j, cur) * ensemble.dt + slack
        worst = max(worst, float(np.max(step - budget, initial=-np.inf)))
    return worst


def exploitability(ensemble, kernel, domain, cost, config=None, cap=None,
                   field=None, phi=None):
    """Weighted optimality gap of an ensemble against its own induced field.

    epsilon = sum_i w_i (realized_i - phi_Q(0, x_i(0))). Returns (epsilon,
    details) with per-atom extremes; raises CertificationError when some
    trajectory is inadmissible (beyond the dx slack) under its own field.
    """
    config = config or EquilibriumConfig()
    if field is None:
        binned = _use_binning(config, ensemble.n_traj, ensemble.n_steps + 1, domain.n_nodes)
        field = induced_speed_field(ensemble, kernel, binned)
    if phi is None:
        phi = solve_value(domain, cost, field)
    # scheme-legitimate steps reach k_max dt + dx/2 (unit CFL move plus target
    # snap), so the admissibility gate allows 1.5 dx of slack
    excess = admissibility_excess(ensemble, field, 1.5 * domain.dx)
    if excess > 1e-9:
        raise CertificationError(
            f"ensemble leaves its own admissible class: step excess {excess:.3g} beyond slack")
    if cap is None:
        r_max = float(np.max(ensemble.time_marginal(0.0).origin_distances()))
        cap = 10.0 * horizon_bound(domain, cost, (kernel.k_min, kernel.k_max), r_max)
    costs, capped = realized_costs(ensemble, cost, cap=cap)
    starts = ensemble.samples[:, 0]
    base = phi.at_points(0, starts)
    gaps = costs - base
    eps = float(np.sum(ensemble.weights * gaps))
    details = {
        "epsilon": eps,
        "max_gap": float(np.max(gaps)),
        "min_gap": float(np.min(gaps)),
        "capped_trajectories": capped,
        "admissibility_excess": excess,
        "field": field,
        "phi": phi,
        "gaps": gaps,
    }
    return eps, details


def certify(ensemble, kernel, domain, cost, tol, config=None):
    """Weak / strong equilibrium flags at tolerance tol.

    weak: weighted exploitability <= tol. strong: every positive-weight
    trajectory has optimality gap <= tol. On atomic ensembles the two are
    designed to coincide at the solver's stopping rule.
    """
    eps, details = exploitability(ensemble, kernel, domain, cost, config=config)
    positive = ensemble.weights > 0
    max_gap = float(np.max(details["gaps"][positive]))
    weak = eps <= tol
    strong = max_gap <= tol
    return {
        "weak": bool(weak),
        "strong": bool(strong),
        "agree": bool(weak == strong),
        "epsilon": eps,
        "max_gap": max_gap,
        "min_gap": details["min_gap"],
        "tol": tol,
        "capped_trajectories": details["capped_trajectories"],
    }


def solve_equilibrium(m0, kernel, domain, cost, config=None):
    """Damped best-response iteration for MFG equilibria.

    The damping state Q_n is the weighted union of past best responses
    (Q_{n+1} = (1 - lam_n) Q_n + lam_n BR(Q_n), merged and pruned); each
    iteration measures Q_n's exploitability against its own induced field
    and stops once every positive-weight atom's gap is below the tolerance.
    Non-convergence is reported, not raised.
    """
    config = config or EquilibriumConfig()
    dt, n_steps, r_max, t_bound = run_grid(domain, kernel, cost, m0)
    tol = config.exploitability_tol
    tol_dpp = default_dpp_tol(domain, dt)
    flags = []
    binned_any = False

    field = frozen_field(m0, kernel, dt, n_steps)
    phi = solve_value(domain, cost, field)
    mixture = None
    history = []
    final_det = None
    converged = False
    iterations = 0

    for n in range(config.max_iterations):
        iterations = n + 1
        samples, j0, exit_idx, exit_node = synthesize_batch(phi, field, m0.points, 0.0)
        candidate = TrajectoryEnsemble(domain, dt, samples, m0.weights.copy(),
                                       np.full(m0.n_atoms, j0), exit_idx, validate=False)
        candidate.exit_nodes = exit_node
        if mixture is None:
            mixture = candidate
        else:
            mixture = mixture.mix(candidate, config.weight(n), config.prune_threshold)
        binned = _use_binning(config, mixture.n_traj, n_steps + 1, domain.n_nodes)
        binned_any = binned_any or binned
        eps, det = exploitability(mixture, kernel, domain, cost, config=config)
        history.append({
            "iteration": n,
            "exploitability": eps,
            "max_gap": det["max_gap"],
            "min_gap": det["min_gap"],
            "mixture_support": int(mixture.n_traj),
        })
        final_det = det
        # two-sided gate: positive gaps mean suboptimal atoms, negative gaps
        # mean the value/realization certificate is internally inconsistent
        if max(det["max_gap"], -det["min_gap"]) <= tol:
            converged = True
            break
        field, phi = det["field"], det["phi"]

    final = mixture
    if binned_any:
        flags.append(f"marginal binning active (speed error bound "
                     f"{kernel.binning_error_bound():.6g})")
    if final_det["capped_trajectories"]:
        flags.append(f"{final_det['capped_trajectories']} non-exiting trajectories "
                     f"capped at 10*T(R_max)")

    report = EquilibriumReport(
        final_ensemble=final,
        converged=converged,
        iterations=iterations,
        exploitability=history[-1]["exploitability"],
        max_gap=history[-1]["max_gap"],
        history=history,
        flags=flags,
        tol=tol,
        dt=dt,
        r_max=r_max,
        t_bound=t_bound,
        final_field=final_det["field"],
        final_phi=final_det["phi"],
    )
    _attach_limit(report)
    report.bound_checks = _bound_checks(report, m0, kernel, domain, cost)
    return report


def _attach_limit(report):
    ens = report.final_ensemble
    steps = ens.step_lengths()
    settled = bool(np.max(steps[:, -2:], initial=0.0) <= 1e-12)
    report.settled = settled
    if settled:
        report.m_infinity = ens.time_marginal(ens.horizon, merge=True)


def _bound_checks(report, m0, kernel, domain, cost):
    """Ledger entries for the a-priori confinement and mass bounds."""
    from .ocp import value_bound_excess, confinement_excess

    ens = report.final_ensemble
    bounds = (kernel.k_min, kernel.k_max)
    checks = []

    # exact on the interval backend (the 1d scheme computes true reach-ball
    # minima); 2d/graph carry the first-order interpolation slack
    slack = 1e-9 if domain.kind == "interval" else default_dpp_tol(domain, report.dt)
    excess = value_bound_excess(report.final_phi, domain, cost, bounds)
    checks.append({"name": "value_upper_bound", "passed": bool(excess <= slack),
                   "detail": f"max phi - (T(R) + max g) = {excess:.6g}"})

    exc = confinement_excess(ens.samples, domain, cost, bounds)
    checks.append({"name": "psi_ball_confinement", "passed": bool(exc <= slack),
                   "detail": f"max excursion excess over psi(R) = {exc:.6g}"})

    # mass confinement (the compact-search-set property): for each tested R,
    # the ensemble mass staying inside the psi(R)-ball must cover the
    # m0-mass of the R-ball.
    start_d = m0.origin_distances()
    radii = np.quantile(start_d, [0.25, 0.5, 0.75, 1.0])
    if domain.kind == "interval":
        excursions = np.max(np.abs(ens.samples - domain.coords[domain.origin]), axis=1)
    else:
        flat = ens.samples.reshape(-1, ens.samples.shape[-1])
        excursions = domain.point_origin_distance(flat).reshape(ens.n_traj, -1).max(axis=1)
    worst = np.inf
    for r in radii:
        t_r = horizon_bound(domain, cost, bounds, r)
        psi_r = trajectory_bound(t_r, bounds[1], r)
        lhs = float(np.sum(ens.weights[excursions <= psi_r + 1e-9]))
        rhs = float(np.sum(m0.weights[start_d <= r + 1e-9]))
        worst = min(worst, lhs - rhs)
    checks.append({"name": "mass_confinement", "passed": bool(worst >= -1e-9),
                   "detail": f"min over tested R of Q(psi-ball) - m0(R-ball) = {worst:.6g}"})

    lip = ens.check_lipschitz(kernel.k_max)
    checks.append({"name": "ensemble_lipschitz", "passed": bool(lip <= 1e-9),
                   "detail": f"max step excess over K_max dt + dx = {lip:.6g}"})

    tail = ens.check_constant_after_exit()
    checks.append({"name": "constant_after_exit", "passed": bool(tail <= 1e-12),
                   "detail": f"max drift after exit = {tail:.6g}"})
    return checks
