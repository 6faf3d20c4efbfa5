"""Pipeline steps behind the command-line interface.

Every ``run_*`` function takes an ``ExperimentConfig`` and an output
directory, writes its artifacts there and returns a JSON-ready summary.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import metrics_report, power_norms
from .benchmark import (CONTROL_DIM, FLAT_LAYOUT, HIER_LAYOUT, STATE_DIM, Trajectory, generate_dataset,
                        sample_box, simulate)
from .config import ExperimentConfig, dump_config
from .control.costs import build_cost
from .control.game import (ControlProblem, baseline_rollout, condensed_qp_solve, solve_equilibrium,
                           solve_optimum)
from .errors import ConvergenceError, MakoopError
from .koopman import (assemble_combined, default_dictionaries, fit_flat, fit_hier, load_model, predict,
                      read_states, rollout_multiscale_batch, save_model)
from .reduction import ReducedModel, build_reduced

log = logging.getLogger(__name__)

MODEL_FILE = "model.npz"
REDUCED_FILE = "reduced.npz"
MAX_CONTROL_FAILURE_FRACTION = 0.20
INFEASIBLE_VIOLATION = 1e-6
HOLDOUT_FRACTION = 0.1


def layout(variant):
    return FLAT_LAYOUT if variant == "flat" else HIER_LAYOUT


def _write_json(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _prepare(cfg: ExperimentConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def make_dictionaries(cfg: ExperimentConfig):
    d = cfg.dictionary
    return default_dictionaries(cfg.variant, n_x=d.n_x, n_y=d.n_y, n_w=d.n_w, bandwidth=d.bandwidth,
                                kind=d.kind, seed=cfg.seed)


# -- simulate -------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out, initial_conditions=None):
    """Integrate the benchmark from sampled (or given) ICs under ``u = 0``; one CSV per IC."""
    out = _prepare(cfg, out)
    rng = np.random.default_rng(cfg.seed)
    d = STATE_DIM[cfg.variant]
    if initial_conditions is None:
        x0 = sample_box(rng, cfg.n_simulate_ic, d)
    else:
        x0 = np.atleast_2d(np.asarray(initial_conditions, dtype=float))
        if x0.shape[1] != d or len(x0) == 0:
            raise MakoopError(f"initial conditions must have shape (n, {d})")
    steps = cfg.simulate_steps
    u = np.zeros((steps, len(x0), CONTROL_DIM))
    states, diverged = simulate(cfg.variant, x0, u, cfg.scale)
    times = cfg.dt_slow * np.arange(steps + 1)
    files, per_ic = [], []
    for k in range(len(x0)):
        name = f"trajectory_{k:03d}.csv"
        Trajectory(times, states[:, k], u[:, k], cfg.variant).to_csv(out / name)
        files.append(name)
        per_ic.append({"ic": k, "x0": x0[k], "diverged": bool(diverged[k]), "file": name})
    summary = {"command": "simulate", "variant": cfg.variant, "n_ic": len(x0), "steps": steps,
               "n_diverged": int(diverged.sum()), "trajectories": per_ic}
    _write_json(out / "simulate.json", summary)
    return summary


# -- fit ------------------------------------------------------------------

def fit_model(cfg: ExperimentConfig, dataset=None, holdout_fraction=HOLDOUT_FRACTION):
    """Generate (or take) a dataset, hold out a seeded fraction by IC, fit the rest.

    Returns ``(model, reduced or None, train, holdout)``.
    """
    dicts = make_dictionaries(cfg)
    if dataset is None:
        dataset = generate_dataset(cfg.variant, cfg.n_train_ic, cfg.scale, seed=cfg.seed)
    if holdout_fraction > 0 and dataset.n_pairs > 1:
        train, hold = dataset.split(holdout_fraction, seed=cfg.seed)
    else:
        train, hold = dataset, None
    if cfg.variant == "flat":
        model = fit_flat(train, dicts, cfg.rho_target, cfg.ridge, coupled=cfg.coupled)
        return model, None, train, hold
    model = fit_hier(train, dicts, cfg.rho_target, cfg.ridge, coupled=cfg.coupled)
    return model, build_reduced(model), train, hold


def one_step_rms(model, reduced, dataset):
    """Per-agent RMS of one-step slow-state predictions on snapshot pairs."""
    lay = dataset.layout
    dicts = model.dictionaries
    system = assemble_combined(model) if reduced is None else reduced.combined()
    psi0 = np.hstack([dicts[i]["x"].lift(dataset.states0[:, lay["x"][i]]) for i in range(model.n_agents)])
    raw = read_states(system, dicts, system.step(psi0.T, dataset.controls.T).T)
    return [float(np.sqrt(np.mean((raw[i] - dataset.states1[:, lay["x"][i]]) ** 2)))
            for i in range(model.n_agents)]


def heldout_trajectories(cfg: ExperimentConfig):
    """Held-out ICs and random controls in ``[-1, 1]`` from a seed stream disjoint from training."""
    rng = np.random.default_rng([cfg.seed, 1])
    n, H = cfg.n_test_trajectories, cfg.test_horizon
    x0 = sample_box(rng, n, STATE_DIM[cfg.variant])
    u = rng.uniform(-1.0, 1.0, size=(H, n, CONTROL_DIM))
    states, diverged = simulate(cfg.variant, x0, u, cfg.scale)
    keep = ~diverged
    return x0[keep], u[:, keep], states[:, keep], int(diverged.sum())


def _rms(pred, truth):
    """Per-trajectory RMS over steps 1..H and components, then the mean over trajectories."""
    err = pred[1:] - truth[1:]
    per_traj = np.sqrt(np.mean(err ** 2, axis=(0, 2)))
    per_step = np.sqrt(np.mean(err ** 2, axis=(1, 2)))
    return float(per_traj.mean()), per_step


def evaluate_model(cfg: ExperimentConfig, model, reduced=None, test=None):
    """Per-agent mean RMS prediction error of the raw slow states on held-out trajectories."""
    x0, u, S, n_div = heldout_trajectories(cfg) if test is None else test
    lay = layout(cfg.variant)
    dicts = model.dictionaries
    n = model.n_agents
    psi0 = np.hstack([dicts[i]["x"].lift(x0[:, lay["x"][i]]) for i in range(n)])
    system = assemble_combined(model) if reduced is None else reduced.combined()
    raw = read_states(system, dicts, predict(system, psi0, u))
    result = {"n_trajectories": int(x0.shape[0]), "n_discarded": n_div, "horizon": int(u.shape[0]),
              "model": "K" if reduced is None else "eps0", "rms": [], "rms_per_step": []}
    for i in range(n):
        r, per_step = _rms(raw[i], S[:, :, lay["x"][i]])
        result["rms"].append(r)
        result["rms_per_step"].append(per_step)
    result["example"] = {"truth": [S[:, 0, lay["x"][i]] for i in range(n)],
                         "prediction": [raw[i][:, 0] for i in range(n)]}
    if reduced is not None:
        px = [dicts[i]["x"].lift(x0[:, lay["x"][i]]) for i in range(n)]
        py = [dicts[i]["y"].lift(x0[:, lay["y"][i]]) for i in range(n)]
        pw = [dicts[i]["w"].lift(x0[:, lay["w"][i]]) for i in range(n)]
        xs = rollout_multiscale_batch(model, px, py, pw, u, cfg.m)
        result["rms_two_scale"] = [
            _rms(xs[i][..., dicts[i]["x"].state_indices], S[:, :, lay["x"][i]])[0] for i in range(n)]
    return result


def run_fit(cfg: ExperimentConfig, out):
    out = _prepare(cfg, out)
    t0 = time.perf_counter()
    model, reduced, dataset, holdout = fit_model(cfg)
    fit_time = time.perf_counter() - t0
    save_model(out / MODEL_FILE, model)
    if reduced is not None:
        reduced.save(out / REDUCED_FILE)
    ev = evaluate_model(cfg, model, reduced)
    summary = {
        "command": "fit", "variant": cfg.variant, "seed": cfg.seed, "model_hash": model.hash(),
        "n_train_pairs": dataset.n_pairs, "n_train_discarded": dataset.n_discarded,
        "n_holdout_pairs": 0 if holdout is None else holdout.n_pairs,
        "holdout_one_step_rms": None if holdout is None else one_step_rms(model, reduced, holdout),
        "fit_seconds": fit_time, "rms": ev["rms"], "rms_model": ev["model"],
        "n_test_trajectories": ev["n_trajectories"], "n_test_discarded": ev["n_discarded"],
        "diagnostics": model.diagnostics,
    }
    if reduced is not None:
        summary["rms_two_scale"] = ev["rms_two_scale"]
        summary["reduced_hash"] = reduced.hash()
        summary["reduced_spectral_radii"] = reduced.spectral_radii()
    _write_json(out / "fit.json", summary)
    with open(out / "rms_per_step.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"agent{i + 1}_rms" for i in range(model.n_agents)])
        for k in range(len(ev["rms_per_step"][0])):
            w.writerow([k + 1] + [repr(float(r[k])) for r in ev["rms_per_step"]])
    with open(out / "prediction_example.csv", "w", newline="") as f:
        w = csv.writer(f)
        n = model.n_agents
        w.writerow(["step"] + [f"agent{i + 1}_{kind}_x{c + 1}" for i in range(n)
                               for kind in ("true", "pred") for c in range(2)])
        ex = ev["example"]
        for k in range(len(ex["truth"][0])):
            row = [k]
            for i in range(n):
                row += [repr(float(v)) for v in ex["truth"][i][k]] + [repr(float(v)) for v in ex["prediction"][i][k]]
            w.writerow(row)
    return summary


def load_models(out):
    out = Path(out)
    path = out / MODEL_FILE
    if not path.exists():
        raise MakoopError(f"no model at {path}; run 'fit' first")
    model = load_model(path)
    reduced = None
    if model.hierarchical:
        rpath = out / REDUCED_FILE
        reduced = ReducedModel.load(rpath) if rpath.exists() else build_reduced(model)
    return model, reduced


# -- analyze --------------------------------------------------------------

def run_analyze(cfg: ExperimentConfig, out, model_dir=None):
    out = _prepare(cfg, out)
    model, reduced = load_models(model_dir or out)
    report = metrics_report(model, reduced)
    report.to_json(out / "metrics.json")
    (out / "metrics.txt").write_text(report.to_text() + "\n")
    mats = {"Combined": assemble_combined(model).A}
    if reduced is not None:
        mats = {"K_comb": mats["Combined"], "B_comb": reduced.combined().A}
    k_max = 200
    with open(out / "transient_growth.csv", "w", newline="") as f:
        w = csv.writer(f)
        curves = {name: power_norms(A, k_max) for name, A in mats.items()}
        for i in range(model.n_agents):
            curves[f"agent{i + 1}"] = power_norms(model.Kxx[i][i] if reduced is None else reduced.Bxx[i], k_max)
        w.writerow(["k"] + list(curves))
        for k in range(k_max + 1):
            w.writerow([k] + [repr(float(c[k])) for c in curves.values()])
    summary = {"command": "analyze", "variant": model.variant, "model_hash": model.hash(), **report.to_dict()}
    return summary


# -- control --------------------------------------------------------------

def control_problem(cfg: ExperimentConfig, model, reduced, x0_raw):
    """Lifted problem from a raw slow-state IC (stacked agent ``x`` blocks)."""
    dicts = model.dictionaries
    system = assemble_combined(model) if reduced is None else reduced.combined()
    costs = build_cost(cfg.variant, dicts, reduced=reduced)
    n = model.n_agents
    x0_raw = np.asarray(x0_raw, dtype=float).reshape(n, -1)
    psi0 = np.concatenate([dicts[i]["x"].lift(x0_raw[i]) for i in range(n)])
    return ControlProblem(system, costs, psi0, cfg.control_horizon,
                          bounded=[dicts[i]["x"].state_indices for i in range(n)],
                          x_bounds=cfg.x_bounds, u_bounds=cfg.u_bounds)


def control_ics(cfg: ExperimentConfig, n_agents=2):
    rng = np.random.default_rng([cfg.seed, 2])
    return sample_box(rng, cfg.n_control_ic, 2 * n_agents, cfg.control_ic_half_width)


def solve_instance(problem: ControlProblem, crosscheck=True):
    """Baseline, optimum and warm-started equilibrium for one IC; never raises on solver failure."""
    row = {"status": "ok", "baseline": baseline_rollout(problem)}
    try:
        opt = solve_optimum(problem, crosscheck=crosscheck)
        eq = solve_equilibrium(problem, warm_start=opt)
    except ConvergenceError as exc:
        cc = condensed_qp_solve(problem)
        row["status"] = "infeasible" if cc["max_violation"] > INFEASIBLE_VIOLATION else "failed"
        row["error"] = str(exc)
        return row, None, None
    row.update({
        "optimum": opt.objectives, "equilibrium": eq.objectives,
        "u_rms_optimum": opt.control_rms, "u_rms_equilibrium": eq.control_rms,
        "fb_optimum": opt.residuals["fb"], "fb_equilibrium": eq.residuals["fb"],
        "residuals_optimum": opt.residuals, "residuals_equilibrium": eq.residuals,
        "iterations_optimum": opt.stats["iterations"], "iterations_equilibrium": eq.stats["iterations"],
        "seconds_optimum": opt.stats["wall_time"], "seconds_equilibrium": eq.stats["wall_time"],
        "crosscheck_relative": opt.stats.get("crosscheck", {}).get("relative_difference"),
        "restarted_optimum": opt.stats["restarted"],
    })
    return row, opt, eq


def _solve_ic(args):
    cfg, model, reduced, x0 = args
    row, _, _ = solve_instance(control_problem(cfg, model, reduced, x0))
    return row


def _flatten(k, x0, row, n):
    flat = {"ic": k, **{f"x0_{c}": float(v) for c, v in enumerate(x0)}, "status": row["status"]}
    for i in range(n):
        a = f"agent{i + 1}"
        flat[f"{a}_baseline"] = row["baseline"][i]
        if row["status"] == "ok":
            flat[f"{a}_optimum"] = row["optimum"][i]
            flat[f"{a}_equilibrium"] = row["equilibrium"][i]
            flat[f"{a}_delta_eq_minus_opt"] = row["equilibrium"][i] - row["optimum"][i]
            flat[f"{a}_u_rms_optimum"] = row["u_rms_optimum"][i]
            flat[f"{a}_u_rms_equilibrium"] = row["u_rms_equilibrium"][i]
    if row["status"] == "ok":
        for key in ("fb_optimum", "fb_equilibrium", "iterations_optimum", "iterations_equilibrium",
                    "seconds_optimum", "seconds_equilibrium", "crosscheck_relative"):
            flat[key] = row[key]
    return flat


def run_control(cfg: ExperimentConfig, out, model_dir=None):
    """Baseline, optimum and equilibrium for ``n_control_ic`` sampled ICs."""
    out = _prepare(cfg, out)
    model, reduced = load_models(model_dir or out)
    n = model.n_agents
    ics = control_ics(cfg, n)
    jobs = [(cfg, model, reduced, x0) for x0 in ics]
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_solve_ic, jobs))  # map keeps IC order
    else:
        rows = [_solve_ic(j) for j in jobs]
    elapsed = time.perf_counter() - t0
    flat = [_flatten(k, x0, r, n) for k, (x0, r) in enumerate(zip(ics, rows))]
    fields = []
    for f_ in flat:
        fields += [k for k in f_ if k not in fields]
    with open(out / "control_results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, restval="")
        w.writeheader()
        for f_ in flat:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in f_.items()})
    ok = [r for r in rows if r["status"] == "ok"]

    def mean(key, i=None):
        vals = [r[key] if i is None else r[key][i] for r in ok]
        return float(np.mean(vals)) if vals else None

    agents = []
    for i in range(n):
        agents.append({
            "baseline": mean("baseline", i), "optimum": mean("optimum", i), "equilibrium": mean("equilibrium", i),
            "u_rms_optimum": mean("u_rms_optimum", i), "u_rms_equilibrium": mean("u_rms_equilibrium", i),
            "mean_delta_eq_minus_opt": (mean("equilibrium", i) - mean("optimum", i)) if ok else None,
            "optimum_improvement_over_equilibrium": (
                (mean("equilibrium", i) - mean("optimum", i)) / abs(mean("equilibrium", i))
                if ok and mean("equilibrium", i) else None),
        })
    statuses = [r["status"] for r in rows]
    summary = {
        "command": "control", "variant": cfg.variant, "model_hash": model.hash(), "n_ic": len(rows),
        "horizon": cfg.control_horizon, "ic_half_width": cfg.control_ic_half_width,
        "n_converged": len(ok), "n_infeasible": statuses.count("infeasible"), "n_failed": statuses.count("failed"),
        "convergence_rate": len(ok) / len(rows), "agents": agents,
        "mean_seconds_optimum": mean("seconds_optimum"), "mean_seconds_equilibrium": mean("seconds_equilibrium"),
        "max_fb_residual": max((max(r["fb_optimum"], r["fb_equilibrium"]) for r in ok), default=None),
        "wall_seconds": elapsed,
        "errors": {str(k): r["error"] for k, r in enumerate(rows) if "error" in r},
    }
    _write_json(out / "control.json", summary)
    first = next((k for k, r in enumerate(rows) if r["status"] == "ok"), None)
    if first is not None:
        problem = control_problem(cfg, model, reduced, ics[first])
        _, opt, eq = solve_instance(problem, crosscheck=False)
        raw = [d["x"].state_indices for d in model.dictionaries]
        opt.to_csv(out / "control_example_optimum.csv", raw)
        eq.to_csv(out / "control_example_equilibrium.csv", raw)
        summary["example_ic"] = first
    n_bad = len(rows) - len(ok)
    if n_bad > MAX_CONTROL_FAILURE_FRACTION * len(rows):
        raise MakoopError(f"{n_bad} of {len(rows)} control instances failed "
                          f"(limit {MAX_CONTROL_FAILURE_FRACTION:.0%}); see control.json")
    return summary


# -- report ---------------------------------------------------------------

def run_report(cfg: ExperimentConfig, out):
    """Run any missing pipeline step, then render figures and a text summary."""
    from .plotting import render_report

    out = _prepare(cfg, out)
    steps = {}
    if not (out / "fit.json").exists():
        steps["fit"] = run_fit(cfg, out)
    if not (out / "metrics.json").exists():
        steps["analyze"] = run_analyze(cfg, out)
    if not (out / "control.json").exists():
        steps["control"] = run_control(cfg, out)
    figures = render_report(out)
    text = summary_text(out)
    (out / "report.txt").write_text(text)
    return {"command": "report", "out": str(out), "ran": sorted(steps), "figures": figures}


def summary_text(out) -> str:
    out = Path(out)
    fit = json.loads((out / "fit.json").read_text())
    ctrl = json.loads((out / "control.json").read_text())
    lines = [f"variant: {fit['variant']}   seed: {fit['seed']}   model: {fit['model_hash'][:16]}", ""]
    label = "eps->0 model" if fit["variant"] == "hier" else "combined model"
    lines.append(f"prediction RMS ({label}, {fit['n_test_trajectories']} trajectories): "
                 + ", ".join(f"agent {i + 1} {r:.4f}" for i, r in enumerate(fit["rms"])))
    if "rms_two_scale" in fit:
        lines.append("prediction RMS (two-scale model): "
                     + ", ".join(f"agent {i + 1} {r:.4f}" for i, r in enumerate(fit["rms_two_scale"])))
    lines += ["", (out / "metrics.txt").read_text().rstrip(), ""]
    lines.append(f"control: {ctrl['n_converged']}/{ctrl['n_ic']} converged "
                 f"({ctrl['n_infeasible']} infeasible, {ctrl['n_failed']} failed), horizon {ctrl['horizon']}")
    lines.append(f"{'agent':>6} {'baseline':>12} {'equilibrium':>12} {'optimum':>12} "
                 f"{'eq-opt':>10} {'u_rms eq':>9} {'u_rms opt':>9}")
    for i, a in enumerate(ctrl["agents"]):
        if a["optimum"] is None:
            continue
        lines.append(f"{i + 1:>6} {a['baseline']:12.5f} {a['equilibrium']:12.5f} {a['optimum']:12.5f} "
                     f"{a['mean_delta_eq_minus_opt']:10.2e} {a['u_rms_equilibrium']:9.4f} {a['u_rms_optimum']:9.4f}")
    return "\n".join(lines) + "\n"
