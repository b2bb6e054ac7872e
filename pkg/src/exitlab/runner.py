"""Run orchestration and persistence: validate -> solve -> certify -> asymptotics.

A run directory holds report.json (the re-checkable ledger), manifest.json
(resolved config, seed, artifact hashes), and CSV companions. All floats in
artifacts are printed with 12 significant digits so reruns are byte-stable;
verify re-executes the pipeline from the manifest and compares ledgers.
"""
from __future__ import annotations

import copy
import datetime
import hashlib
import json
import os
import traceback

import numpy as np

from . import asymptotics as asy
from . import equilibrium as eq
from . import scenarios as sc
from .domain import validate_hypotheses
from .measures import wasserstein
from .ocp import check_dpp, default_dpp_tol, Trajectory

STATUS_OK = 0
STATUS_VALIDATION = 2
STATUS_NOT_CONVERGED = 3
STATUS_INTERNAL = 4

TRAJECTORY_ROW_CAP = 400_000
PACKAGE_VERSION = "0.1.0"


def _fmt(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return f"{x:.12g}"


def _r12(x):
    """Round to 12 significant digits for ledger-stable floats."""
    if x is None:
        return None
    x = float(x)
    if not np.isfinite(x):
        return None
    return float(f"{x:.12g}")


def set_by_path(cfg, dotted, value):
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if p not in node:
            raise sc.ScenarioError(f"override path {dotted!r}: no key {p!r}")
        node = node[p]
    if parts[-1] not in node:
        raise sc.ScenarioError(f"override path {dotted!r}: no key {parts[-1]!r}")
    node[parts[-1]] = value


def apply_overrides(cfg, seed=None, tol=None, max_iter=None, params=None):
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if tol is not None:
        cfg["equilibrium"]["tolerance"] = float(tol)
    if max_iter is not None:
        cfg["equilibrium"]["max_iterations"] = int(max_iter)
    for dotted, value in (params or {}).items():
        set_by_path(cfg, dotted, value)
    return cfg


def execute(cfg):
    """Run the full pipeline in memory; returns the artifact bundle."""
    cfg = sc.validate_config(cfg)
    bundle = {"config": cfg, "status": STATUS_OK, "flags": [], "checks": []}

    domain = sc.build_domain(cfg)
    cost = sc.build_cost(domain, cfg)
    try:
        kernel = sc.build_kernel(domain, cfg)
    except Exception as err:  # kernel hypothesis violations are validation failures
        bundle["hypotheses"] = validate_hypotheses(domain, cost).as_dict()
        bundle["hypotheses"].append({"name": "H8", "passed": False, "detail": str(err)})
        bundle["status"] = STATUS_VALIDATION
        return bundle
    m0, m0_flags = sc.build_initial_measure(domain, cfg)
    bundle["flags"] += m0_flags
    if kernel.chi.family == "ball":
        bundle["flags"].append(
            "indicator chi: run is outside hypothesis coverage (speed field "
            "not continuous in the population in the continuum limit)")

    hyp = validate_hypotheses(domain, cost)
    for entry in kernel.hypothesis_report(cost).checks:
        hyp.checks.append(entry)
    hyp.add("H5-H7", True, "enforced at speed-field construction (bound clamp and smallness)")
    bundle["hypotheses"] = hyp.as_dict()
    if not hyp.passed:
        bundle["status"] = STATUS_VALIDATION
        return bundle

    config = sc.build_equilibrium_config(cfg)
    report = eq.solve_equilibrium(m0, kernel, domain, cost, config)
    cert = eq.certify(report.final_ensemble, kernel, domain, cost, report.tol,
                      config=config)
    bundle.update(domain=domain, cost=cost, kernel=kernel, m0=m0,
                  equilibrium=report, certification=cert)
    bundle["flags"] += report.flags

    _asymptotics_stage(bundle, cfg)
    _assemble_checks(bundle)
    if not report.converged or not all(c["passed"] for c in bundle["checks"]):
        bundle["status"] = STATUS_NOT_CONVERGED
    return bundle


def _asymptotics_stage(bundle, cfg):
    report = bundle["equilibrium"]
    domain, cost, kernel, m0 = (bundle[k] for k in ("domain", "cost", "kernel", "m0"))
    ens = report.final_ensemble
    bounds = (kernel.k_min, kernel.k_max)
    p = int(cfg["asymptotics"]["p"])
    times = sc.report_times(cfg, ens.horizon)
    bundle["report_grid"] = times

    t_star = asy.settling_time(ens)
    bundle["settling_time"] = t_star
    m_inf = report.m_infinity
    curve = None
    if m_inf is not None:
        curve = asy.convergence_curve(ens, times, p, m0=m0, domain=domain,
                                      cost=cost, bounds=bounds, m_inf=m_inf)
        bundle["flags"] += curve.flags
    bundle["curve"] = curve
    bundle["p"] = p

    fit_cfg = cfg["asymptotics"]["rate_fit"]
    bundle["rate_fit"] = None
    if fit_cfg is not None and curve is not None:
        bundle["rate_fit"] = asy.fit_decay_rate(
            curve, tuple(fit_cfg["window"]), fit_cfg["mode"],
            int(fit_cfg.get("tail_dimension", 1)))


def _assemble_checks(bundle):
    report = bundle["equilibrium"]
    domain, cost, kernel, m0 = (bundle[k] for k in ("domain", "cost", "kernel", "m0"))
    bounds = (kernel.k_min, kernel.k_max)
    checks = list(report.bound_checks)
    cert = bundle["certification"]
    ens = report.final_ensemble
    tol_dpp = default_dpp_tol(domain, report.dt)

    checks.append({"name": "weak_strong_agreement", "passed": cert["agree"],
                   "detail": f"weak={cert['weak']} strong={cert['strong']}"})

    curve = bundle["curve"]
    if curve is not None:
        excess = asy.curve_bound_excess(curve, tol_dpp)
        checks.append({"name": "tail_decay_bound",
                       "passed": bool(excess <= 1e-9 or not np.isfinite(excess)),
                       "detail": f"max W_p^p - bound - {tol_dpp:.6g} = {excess:.6g}"})
        pm = asy.p_moment_excess(ens, m0, domain, cost, bounds,
                                 bundle["report_grid"], bundle["p"])
        checks.append({"name": "p_moment_propagation", "passed": bool(pm <= 1e-9),
                       "detail": f"max p_moment excess over psi ceiling = {pm:.6g}"})

    m_inf = report.m_infinity
    if m_inf is not None:
        tdist = domain.point_target_distance(m_inf.points)
        worst = float(np.max(tdist, initial=0.0))
        checks.append({"name": "limit_support_in_target", "passed": bool(worst <= 1e-9),
                       "detail": f"max distance of limit atoms to the target = {worst:.6g}"})

    t_star = bundle["settling_time"]
    settle_bound = report.t_bound + report.dt
    settled_ok = t_star is not None and t_star <= settle_bound + 1e-9
    checks.append({"name": "compact_support_settling", "passed": bool(settled_ok),
                   "detail": ("not settled within horizon" if t_star is None
                              else f"t_* = {t_star:.6g} <= T(R_0) + dt = {settle_bound:.6g}")})

    # equality case of the DPP along (near-)optimal paths: probe the three
    # heaviest atoms, which are the most recently re-synthesized ones
    worst_eq = 0.0
    for k in np.argsort(ens.weights)[::-1][:3]:
        traj = Trajectory(domain, ens.dt, ens.samples[k], int(ens.start_indices[k]),
                          int(ens.exit_indices[k]), -1, 0.0)
        res = check_dpp(report.final_phi, traj)
        worst_eq = max(worst_eq, res["max_equality_residual"])
    dpp_cap = report.tol + tol_dpp
    checks.append({"name": "dpp_equality_spot_check",
                   "passed": bool(worst_eq <= dpp_cap),
                   "detail": f"max equality residual {worst_eq:.6g} vs tol {dpp_cap:.6g}"})

    bundle["checks"] = checks


def build_ledger(bundle):
    """The deterministic, re-checkable part of a run's outcome."""
    ledger = {
        "status": bundle["status"],
        "hypotheses": [
            {"name": h["name"], "passed": h["passed"]} for h in bundle["hypotheses"]],
        "flags": sorted(bundle["flags"]),
    }
    if "equilibrium" not in bundle:
        return ledger
    report = bundle["equilibrium"]
    cert = bundle["certification"]
    ledger["equilibrium"] = {
        "converged": report.converged,
        "iterations": report.iterations,
        "exploitability": _r12(report.exploitability),
        "max_gap": _r12(report.max_gap),
        "dt": _r12(report.dt),
        "r_max": _r12(report.r_max),
        "t_bound": _r12(report.t_bound),
    }
    ledger["certification"] = {
        "weak": cert["weak"], "strong": cert["strong"], "agree": cert["agree"],
        "epsilon": _r12(cert["epsilon"]), "max_gap": _r12(cert["max_gap"]),
        "tol": _r12(cert["tol"]),
    }
    ledger["checks"] = [
        {"name": c["name"], "passed": c["passed"], "detail": c["detail"]}
        for c in bundle["checks"]]
    ledger["settling_time"] = _r12(bundle.get("settling_time"))
    m_inf = report.m_infinity
    if m_inf is not None:
        pts = np.atleast_2d(m_inf.points) if m_inf.points.ndim == 1 else m_inf.points
        if bundle["domain"].kind == "interval":
            pts = m_inf.points.reshape(-1, 1)
        ledger["m_infinity"] = [
            [_r12(c) for c in row] + [_r12(w)]
            for row, w in zip(pts.tolist(), m_inf.weights.tolist())]
    fit = bundle.get("rate_fit")
    if fit is not None:
        ledger["rate_fit"] = {"mode": fit.mode, "value": _r12(fit.value),
                              "residual": _r12(fit.residual),
                              "window": [_r12(w) for w in fit.window]}
    return ledger


# ---------------------------------------------------------------------------
# persistence

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _coord_columns(domain):
    return {"interval": ["x"], "grid2d": ["x", "y"], "graph": ["u", "v", "s"]}[domain.kind]


def _point_row(domain, p):
    if domain.kind == "interval":
        return [float(p)]
    return [float(c) for c in np.atleast_1d(p)]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def persist(bundle, run_dir):
    os.makedirs(run_dir, exist_ok=True)
    files = []

    ledger = build_ledger(bundle)
    report_path = os.path.join(run_dir, "report.json")
    with open(report_path, "w") as fh:
        json.dump(ledger, fh, indent=1, sort_keys=True)
        fh.write("\n")
    files.append("report.json")

    if "equilibrium" in bundle:
        domain = bundle["domain"]
        report = bundle["equilibrium"]
        ens = report.final_ensemble
        coord_cols = _coord_columns(domain)

        _write_csv(os.path.join(run_dir, "exploitability_history.csv"),
                   ["iteration", "exploitability", "max_gap", "min_gap", "mixture_support"],
                   [[h["iteration"], float(h["exploitability"]), float(h["max_gap"]),
                     float(h["min_gap"]), h["mixture_support"]] for h in report.history])
        files.append("exploitability_history.csv")

        times = ens.times()
        stride = max(1, int(np.ceil(ens.n_traj * (ens.n_steps + 1) / TRAJECTORY_ROW_CAP)))
        t_idx = sorted(set(range(0, ens.n_steps + 1, stride)) | {ens.n_steps})
        rows = []
        for k in range(ens.n_traj):
            e = ens.exit_indices[k]
            for j in t_idx:
                rows.append([k, float(times[j])] + _point_row(domain, ens.samples[k, j])
                            + [int(0 <= e <= j)])
        _write_csv(os.path.join(run_dir, "trajectories.csv"),
                   ["particle_id", "t"] + coord_cols + ["exited_flag"], rows)
        files.append("trajectories.csv")

        costs, _ = eq.realized_costs(ens, bundle["cost"], cap=None)
        rows = [[k, float(ens.weights[k])] + _point_row(domain, ens.samples[k, 0])
                + [float((ens.exit_indices[k] - ens.start_indices[k]) * ens.dt)
                   if ens.exit_indices[k] >= 0 else float("nan"),
                   float(costs[k]) if np.isfinite(costs[k]) else float("nan")]
                for k in range(ens.n_traj)]
        _write_csv(os.path.join(run_dir, "trajectory_summary.csv"),
                   ["particle_id", "weight"] + [f"start_{c}" for c in coord_cols]
                   + ["exit_time", "realized_cost"], rows)
        files.append("trajectory_summary.csv")

        rows = []
        for t in bundle["report_grid"]:
            m = ens.time_marginal(t, merge=True)
            for i in range(m.n_atoms):
                rows.append([float(t)] + _point_row(domain, m.points[i])
                            + [float(m.weights[i])])
        _write_csv(os.path.join(run_dir, "marginals.csv"),
                   ["t"] + coord_cols + ["weight"], rows)
        files.append("marginals.csv")

        m0 = bundle["m0"]
        _write_csv(os.path.join(run_dir, "initial_measure.csv"),
                   coord_cols + ["weight"],
                   [_point_row(domain, m0.points[i]) + [float(m0.weights[i])]
                    for i in range(m0.n_atoms)])
        files.append("initial_measure.csv")

        phi = report.final_phi
        node_pts = domain.node_points()
        rows = []
        seen = set()
        for t in bundle["report_grid"]:
            j = phi.time_index(t)
            if j in seen:
                continue
            seen.add(j)
            for i in range(domain.n_nodes):
                rows.append([float(j * phi.dt)] + _point_row(domain, node_pts[i])
                            + [float(phi.values[j, i])])
        _write_csv(os.path.join(run_dir, "value_function.csv"),
                   ["t"] + coord_cols + ["phi"], rows)
        files.append("value_function.csv")

        curve = bundle["curve"]
        if curve is not None:
            _write_csv(os.path.join(run_dir, "convergence_curve.csv"),
                       ["t", "w_p", "bound"],
                       [[float(t), float(v), float(b) if np.isfinite(b) else float("nan")]
                        for t, v, b in zip(curve.times, curve.values, curve.bounds)])
            files.append("convergence_curve.csv")

        fit = bundle.get("rate_fit")
        if fit is not None:
            with open(os.path.join(run_dir, "rate_fit.json"), "w") as fh:
                json.dump({k: (_r12(v) if isinstance(v, float) else v)
                           for k, v in fit.as_dict().items()}, fh, indent=1, sort_keys=True)
                fh.write("\n")
            files.append("rate_fit.json")

    config_json = json.dumps(bundle["config"], sort_keys=True)
    manifest = {
        "schema": 1,
        "package_version": PACKAGE_VERSION,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": bundle["config"],
        "config_sha256": hashlib.sha256(config_json.encode()).hexdigest(),
        "seed": bundle["config"].get("seed", 0),
        "status": bundle["status"],
        "artifacts": {name: _sha256(os.path.join(run_dir, name)) for name in files},
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return run_dir


class RunResult:
    def __init__(self, status, path, ledger, error=None):
        self.status = status
        self.path = path
        self.ledger = ledger
        self.error = error


def run(source, out_dir, seed=None, tol=None, max_iter=None, params=None):
    """Execute a scenario and persist the run directory."""
    try:
        cfg = sc.load_scenario(source)
        cfg = apply_overrides(cfg, seed=seed, tol=tol, max_iter=max_iter, params=params)
        bundle = execute(cfg)
    except sc.ScenarioError as err:
        return RunResult(STATUS_VALIDATION, None, None, str(err))
    except Exception as err:
        return RunResult(STATUS_INTERNAL, None, None,
                         f"{err}\n{traceback.format_exc()}")
    persist(bundle, out_dir)
    return RunResult(bundle["status"], out_dir, build_ledger(bundle))


class VerifyResult:
    def __init__(self, passed, differences, error=None):
        self.passed = passed
        self.differences = differences
        self.error = error


def _dict_diffs(a, b, prefix=""):
    diffs = []
    keys = sorted(set(a) | set(b))
    for k in keys:
        pa, pb = a.get(k), b.get(k)
        path = f"{prefix}{k}"
        if isinstance(pa, dict) and isinstance(pb, dict):
            diffs += _dict_diffs(pa, pb, path + ".")
        elif pa != pb:
            diffs.append(f"{path}: {pa!r} != {pb!r}")
    return diffs


def verify(run_dir, tol=None):
    """Integrity-check a run directory and deterministically re-derive its ledger."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        return VerifyResult(False, [], f"missing manifest.json in {run_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    differences = []
    for name, digest in manifest["artifacts"].items():
        path = os.path.join(run_dir, name)
        if not os.path.exists(path):
            return VerifyResult(False, [], f"missing artifact {name}")
        if _sha256(path) != digest:
            return VerifyResult(False, [], f"artifact {name} is corrupted (hash mismatch)")
    cfg = manifest["config"]
    if tol is not None:
        cfg = apply_overrides(cfg, tol=tol)
    try:
        bundle = execute(cfg)
    except Exception as err:
        return VerifyResult(False, [], f"re-execution failed: {err}")
    fresh = build_ledger(bundle)
    with open(os.path.join(run_dir, "report.json")) as fh:
        stored = json.load(fh)
    differences = _dict_diffs(stored, fresh)
    if tol is not None:
        return VerifyResult(True, differences)
    return VerifyResult(len(differences) == 0, differences)


def sweep(source, param_values, out_root, seed=None, tol=None, max_iter=None):
    """Run a scenario template over the cartesian product of parameter lists.

    param_values maps dotted config paths to value lists. Per-member failures
    are recorded in the aggregate; the sweep keeps going.
    """
    os.makedirs(out_root, exist_ok=True)
    names = sorted(param_values)
    combos = [()]
    for name in names:
        combos = [c + ((name, v),) for c in combos for v in param_values[name]]
    if not param_values:
        combos = []
    members = []
    for i, combo in enumerate(combos):
        label = "_".join(f"{n.split('.')[-1]}={v}" for n, v in combo) or f"member_{i}"
        member_dir = os.path.join(out_root, f"{i:03d}_{label}")
        result = run(source, member_dir, seed=seed, tol=tol, max_iter=max_iter,
                     params=dict(combo))
        entry = {"index": i, "params": {n: v for n, v in combo},
                 "status": result.status, "dir": member_dir}
        if result.ledger is not None:
            entry["m_infinity"] = result.ledger.get("m_infinity")
            entry["converged"] = result.ledger.get("equilibrium", {}).get("converged")
            entry["exploitability"] = result.ledger.get("equilibrium", {}).get("exploitability")
            if "rate_fit" in result.ledger:
                entry["rate_fit"] = result.ledger["rate_fit"]
        else:
            entry["error"] = result.error
        members.append(entry)
    aggregate = {"source": source if isinstance(source, str) else "inline",
                 "params": {n: list(v) for n, v in param_values.items()},
                 "members": members}
    with open(os.path.join(out_root, "sweep_report.json"), "w") as fh:
        json.dump(aggregate, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if any(n.startswith("initial_measure") for n in names):
        # an initial-measure sweep doubles as a stability experiment
        stability = {"limit_table": [
            {"params": m["params"], "m_infinity": m.get("m_infinity"),
             "converged": m.get("converged"), "status": m["status"],
             "exploitability": m.get("exploitability")} for m in members]}
        with open(os.path.join(out_root, "stability_report.json"), "w") as fh:
            json.dump(stability, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return aggregate


def limit_distance_to_dirac(ledger, domain, location):
    """W_1 between a persisted m_infinity and a Dirac at a coordinate."""
    from .measures import ParticleMeasure

    atoms = ledger["m_infinity"]
    pts = np.array([row[:-1] for row in atoms], dtype=float)
    if domain.kind == "interval":
        pts = pts.reshape(-1)
    w = np.array([row[-1] for row in atoms], dtype=float)
    m = ParticleMeasure(domain, pts, w, validate=False)
    return wasserstein(m, ParticleMeasure.dirac(domain, location), 1)
