"""Solver and verification lab for congestion-constrained optimal-exit
mean field games on discretized metric domains."""

from .domain import (ExitCost, GraphDomain, Grid2dDomain, IntervalDomain,
                     validate_hypotheses)
from .congestion import Chi, CongestionKernel, Eta, Kappa
from .measures import (ParticleMeasure, TrajectoryEnsemble, sample_from_density,
                       wasserstein)
from .ocp import (SpeedField, Trajectory, ValueField, check_dpp,
                  check_value_regularity, final_cost, first_exit_time,
                  horizon_bound, is_admissible, solve_value, synthesize_optimal,
                  trajectory_bound)
from .equilibrium import (EquilibriumConfig, EquilibriumReport, best_response,
                          certify, exploitability, induced_speed_field,
                          solve_equilibrium)
from .asymptotics import (ConvergenceCurve, RateFit, convergence_curve,
                          fit_decay_rate, limit_measure, settling_time,
                          stability_sweep, theorem_bound)
from .scenarios import load_scenario, scenario_registry
from . import runner

__version__ = "0.1.0"

__all__ = [
    "ExitCost", "GraphDomain", "Grid2dDomain", "IntervalDomain",
    "validate_hypotheses", "Chi", "CongestionKernel", "Eta", "Kappa",
    "ParticleMeasure", "TrajectoryEnsemble", "sample_from_density", "wasserstein",
    "SpeedField", "Trajectory", "ValueField", "check_dpp",
    "check_value_regularity", "final_cost", "first_exit_time", "horizon_bound",
    "is_admissible", "solve_value", "synthesize_optimal", "trajectory_bound",
    "EquilibriumConfig", "EquilibriumReport", "best_response", "certify",
    "exploitability", "induced_speed_field", "solve_equilibrium",
    "ConvergenceCurve", "RateFit", "convergence_curve", "fit_decay_rate",
    "limit_measure", "settling_time", "stability_sweep", "theorem_bound",
    "load_scenario", "scenario_registry", "runner",
]
