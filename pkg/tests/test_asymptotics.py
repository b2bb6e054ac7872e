"""Limit extraction, convergence curves, decay bounds and rates, stability."""
import numpy as np
import pytest

from exitlab.asymptotics import (ConvergenceCurve, ShrinkWindowError,
                                 convergence_curve, curve_bound_excess,
                                 decay_constants, fit_decay_rate, limit_measure,
                                 p_moment_excess, psi_function, settling_time,
                                 stability_sweep, theorem_bound)
from exitlab.congestion import Chi, CongestionKernel, Eta, Kappa
from exitlab.domain import ExitCost, IntervalDomain
from exitlab.equilibrium import EquilibriumConfig, solve_equilibrium
from exitlab.measures import MeasureError, ParticleMeasure, TrajectoryEnsemble


def remark_game(dx=0.005):
    dom = IntervalDomain(0.0, 1.0, dx, targets=[0.0, 1.0], origin=0.0)
    cost = ExitCost.zero(dom)
    kernel = CongestionKernel(dom, Kappa("constant", value=1.0),
                              Chi("constant", value=0.0), Eta("constant", value=1.0))
    return dom, cost, kernel


def line_path(dom, dt, start, target, n_steps):
    t = np.arange(n_steps + 1) * dt
    d = np.sign(target - start)
    path = np.clip(start + d * t, min(start, target), max(start, target))
    exit_idx = int(np.argmax(path == target)) if np.any(path == target) else -1
    return path, exit_idx


def two_sided_ensemble(dom, alpha, dt=0.005, n_steps=140):
    left, el = line_path(dom, dt, 0.5, 0.0, n_steps)
    right, er = line_path(dom, dt, 0.5, 1.0, n_steps)
    return TrajectoryEnsemble(dom, dt, np.stack([left, right]),
                              np.array([alpha, 1 - alpha]),
                              np.zeros(2, dtype=int), np.array([el, er]))


def test_limit_measure_examples():
    dom, cost, kernel = remark_game()
    report = solve_equilibrium(ParticleMeasure.dirac(dom, 0.3), kernel, dom, cost,
                               EquilibriumConfig(exploitability_tol=0.01))
    m_inf = limit_measure(report.final_ensemble)
    assert m_inf.n_atoms == 1 and m_inf.points[0] == 0.0

    ens = two_sided_ensemble(dom, 0.25)
    m_inf = limit_measure(ens)
    got = dict(zip(m_inf.points.tolist(), m_inf.weights.tolist()))
    assert got == {0.0: pytest.approx(0.25), 1.0: pytest.approx(0.75)}


def test_limit_measure_requires_settling():
    dom, _, _ = remark_game()
    path, _ = line_path(dom, 0.005, 0.9, 0.0, 60)  # still moving at the end
    ens = TrajectoryEnsemble(dom, 0.005, path[None, :], np.array([1.0]))
    with pytest.raises(MeasureError, match="horizon too short"):
        limit_measure(ens)


def test_convergence_curve_matches_line_formula():
    dom, _, _ = remark_game()
    path, e = line_path(dom, 0.005, 0.5, 0.0, 140)
    ens = TrajectoryEnsemble(dom, 0.005, path[None, :], np.array([1.0]),
                             np.zeros(1, dtype=int), np.array([e]))
    times = np.arange(0, 0.7, 0.05)
    curve = convergence_curve(ens, times, 1)
    expected = np.maximum(0.5 - times, 0.0)
    assert np.max(np.abs(curve.values - expected)) <= 1e-9
    # symmetric two-atom mixture: each atom is (0.5 - t) from its own exit
    sym = two_sided_ensemble(dom, 0.5)
    curve2 = convergence_curve(sym, times, 1)
    assert np.max(np.abs(curve2.values - expected)) <= 1e-9


def test_settling_time_examples():
    dom, cost, kernel = remark_game()
    report = solve_equilibrium(ParticleMeasure.dirac(dom, 0.5), kernel, dom, cost,
                               EquilibriumConfig(exploitability_tol=0.01))
    t_star = settling_time(report.final_ensemble)
    assert t_star == pytest.approx(0.5, abs=report.dt + 1e-12)

    on_target = solve_equilibrium(ParticleMeasure.dirac(dom, 0.0), kernel, dom, cost,
                                  EquilibriumConfig(exploitability_tol=0.01))
    assert settling_time(on_target.final_ensemble) == 0.0

    path, _ = line_path(dom, 0.005, 0.9, 0.0, 60)
    moving = TrajectoryEnsemble(dom, 0.005, path[None, :], np.array([1.0]))
    assert settling_time(moving) is None


def test_settling_time_uniform_band():
    dom = IntervalDomain(0.0, 1.0, 0.005, targets=[0.0], origin=0.0)
    cost = ExitCost.zero(dom)
    kernel = CongestionKernel(dom, Kappa("constant", value=1.0),
                              Chi("constant", value=0.0), Eta("constant", value=1.0))
    pts = 0.8 + 0.2 * (np.arange(50) + 0.5) / 50
    m0 = ParticleMeasure(dom, pts, np.full(50, 0.02))
    report = solve_equilibrium(m0, kernel, dom, cost,
                               EquilibriumConfig(exploitability_tol=0.02))
    t_star = settling_time(report.final_ensemble)
    assert t_star == pytest.approx(1.0, abs=2 * report.dt)


def test_theorem_bound_edges():
    dom, cost, kernel = remark_game()
    bounds = (kernel.k_min, kernel.k_max)
    alpha, t0 = decay_constants(dom, cost, bounds)
    psi = psi_function(dom, cost, bounds)
    m0 = ParticleMeasure(dom, [0.3, 0.7], [0.5, 0.5])
    whole = theorem_bound(m0, psi, alpha, t0, t0, 1)
    expected = 2.0 * float(np.sum(m0.weights * psi(m0.origin_distances())))
    assert whole == pytest.approx(expected)
    # compact support: the bound vanishes once the exclusion ball covers it
    t_large = t0 + 0.7 / alpha + 1.0
    assert theorem_bound(m0, psi, alpha, t0, t_large, 1) == 0.0
    with pytest.raises(ValueError):
        theorem_bound(m0, psi, alpha, t0, t0 - 1.0, 1)


def test_theorem_bound_power_tail_decay():
    """With a beta = 4 tail the bound itself decays like t^-2 (p = d = 1)."""
    dom = IntervalDomain(0.0, 60.0, 0.05, targets=[0.0], origin=0.0)
    cost = ExitCost.zero(dom)
    bounds = (1.0, 1.0)
    alpha, t0 = decay_constants(dom, cost, bounds)
    psi = psi_function(dom, cost, bounds)
    beta = 4.0
    n = 4000
    # quantile atoms of the pure tail law on [1, 60]
    q = (np.arange(n) + 0.5) / n
    total = (1 - 60.0 ** (1 - beta)) / (beta - 1)
    pts = (1 - (beta - 1) * q * total) ** (1 / (1 - beta))
    m0 = ParticleMeasure(dom, pts, np.full(n, 1 / n))
    ts = np.geomspace(2, 12, 8)
    vals = [theorem_bound(m0, psi, alpha, t0, t, 1) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert slope == pytest.approx(-(beta - 1 - 1), abs=0.25)


def test_fit_decay_rate_recovers_synthetic_models():
    times = np.geomspace(1.0, 20.0, 40)
    power = ConvergenceCurve(times, times ** -2.0, np.full(40, np.nan), 1)
    fit = fit_decay_rate(power, (1.0, 20.0), "power")
    assert fit.value == pytest.approx(-2.0, abs=1e-6)
    assert fit.residual <= 1e-9

    gamma = 1.7
    expo = ConvergenceCurve(times, times ** 1.0 * np.exp(-gamma * times),
                            np.full(40, np.nan), 1)
    fit2 = fit_decay_rate(expo, (2.0, 15.0), "exponential", tail_dimension=1)
    assert fit2.value == pytest.approx(gamma, abs=1e-6)


def test_fit_decay_rate_window_errors():
    times = np.linspace(1.0, 10.0, 10)
    vals = np.maximum(5.0 - times, 0.0)
    curve = ConvergenceCurve(times, vals, np.full(10, np.nan), 1)
    with pytest.raises(ShrinkWindowError, match="zero"):
        fit_decay_rate(curve, (1.0, 10.0), "power")
    with pytest.raises(ShrinkWindowError, match="samples"):
        fit_decay_rate(curve, (1.0, 1.5), "power")


def test_curve_bound_and_moment_checks_on_solved_game():
    dom, cost, kernel = remark_game()
    m0 = ParticleMeasure(dom, [0.25, 0.5, 0.75], [0.25, 0.5, 0.25])
    report = solve_equilibrium(m0, kernel, dom, cost,
                               EquilibriumConfig(exploitability_tol=0.02))
    ens = report.final_ensemble
    bounds = (kernel.k_min, kernel.k_max)
    times = np.arange(0.0, ens.horizon, 0.05)
    curve = convergence_curve(ens, times, 1, m0=m0, domain=dom, cost=cost, bounds=bounds)
    assert curve_bound_excess(curve, 4 * (report.dt + dom.dx)) <= 1e-9
    assert p_moment_excess(ens, m0, dom, cost, bounds, times, 1) <= 1e-9


def test_stability_sweep_remark_case_table():
    dom, cost, kernel = remark_game()
    config = EquilibriumConfig(exploitability_tol=0.01)
    base = ParticleMeasure.dirac(dom, 0.5)
    # limits flip across a = 1/2: delta_1 above, delta_0 below
    limits = []
    for a in (0.7, 0.55, 0.45, 0.3):
        member_rep = solve_equilibrium(ParticleMeasure.dirac(dom, a), kernel,
                                       dom, cost, config)
        limits.append(float(member_rep.m_infinity.points[0]))
    assert limits == [1.0, 1.0, 0.0, 0.0]
    # a decreasing perturbation schedule toward the base
    members = [ParticleMeasure.dirac(dom, a) for a in (0.7, 0.55, 0.52)]
    report, base_report = stability_sweep(base, members, kernel, dom, cost, config)
    assert base_report.converged
    assert report.schedule_monotone
    assert report.closed_graph_probe is not None


def test_stability_zero_perturbation_matches_base():
    dom, cost, kernel = remark_game()
    config = EquilibriumConfig(exploitability_tol=0.01)
    base = ParticleMeasure.dirac(dom, 0.3)
    report, base_report = stability_sweep(base, [ParticleMeasure.dirac(dom, 0.3)],
                                          kernel, dom, cost, config)
    member = report.members[0]
    assert member.perturbation == 0.0
    assert member.limit_distance == 0.0
    assert member.exploitability == base_report.exploitability


def test_stability_convergent_family_containment():
    """Members a_n = 1/2 - 1/n all limit to delta_0, which the base limit set
    at a = 1/2 contains."""
    dom, cost, kernel = remark_game()
    config = EquilibriumConfig(exploitability_tol=0.01)
    base = ParticleMeasure.dirac(dom, 0.5)
    family = [ParticleMeasure.dirac(dom, 0.5 - 1.0 / n) for n in (4, 8, 16, 32)]
    base_limits = [ParticleMeasure.dirac(dom, 0.0), ParticleMeasure.dirac(dom, 1.0)]
    report, _ = stability_sweep(base, family, kernel, dom, cost, config,
                                base_limits=base_limits)
    for member in report.members:
        assert member.limit_distance <= 1e-9
    assert report.closed_graph_probe["passed"]
