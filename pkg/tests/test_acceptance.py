"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``[criterion N] PASS|FAIL ...`` line (visible with or
without ``-s``). Run directly with ``python3 tests/test_acceptance.py``.
"""
import sys
import time
import warnings

import numpy as np
import pytest

from makoop.analysis import (gramian, kreiss_bound, lyapunov_residual, max_power_norm, solve_discrete_lyapunov)
from makoop.config import load_config
from makoop.control import build_equilibrium_mcp, build_optimum_kkt, coupling_blocks, solve_equilibrium
from makoop.experiments import control_ics, control_problem, evaluate_model, fit_model, solve_instance
from makoop.koopman import (HIER_BLOCKS, StructuredKoopman, assemble_combined, fit_flat, fit_hier, predict,
                            rollout_multiscale, step_agent)
from makoop.reduction import build_reduced, consistency_check, fast_fixed_point

from oracles import (HIER_X, best_response_iteration, flat_dataset, flat_step, flat_truth, hier_dataset, hier_truth,
                     identity_dictionaries, random_contraction, scalar_game)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {n}: {detail}"


def _pipeline(variant):
    cfg = load_config(profile="desk", variant=variant)
    t0 = time.perf_counter()
    model, reduced, _, _ = fit_model(cfg)
    ev = evaluate_model(cfg, model, reduced)
    return {"cfg": cfg, "model": model, "reduced": reduced, "eval": ev, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def flat_run():
    return _pipeline("flat")


@pytest.fixture(scope="module")
def hier_run():
    return _pipeline("hier")


# 1, 2 -----------------------------------------------------------------------------------

def test_criterion_1_flat_accuracy(flat_run, capsys):
    ev = flat_run["eval"]
    rms, secs = ev["rms"], flat_run["seconds"]
    ok = ev["n_trajectories"] == 100 and ev["horizon"] == 100 and max(rms) <= 0.08 and secs <= 600
    report(capsys, 1, ok, f"flat per-agent mean RMS {rms[0]:.4f} / {rms[1]:.4f} (bound 0.08) over "
                          f"{ev['n_trajectories']} x {ev['horizon']} steps; fit+eval {secs:.1f} s (bound 600 s)")


def test_criterion_2_hier_accuracy(hier_run, capsys):
    ev = hier_run["eval"]
    rms, secs = ev["rms"], hier_run["seconds"]
    ok = ev["model"] == "eps0" and ev["n_trajectories"] == 100 and max(rms) <= 0.30 and secs <= 1200
    report(capsys, 2, ok, f"hier eps->0 per-agent mean RMS {rms[0]:.4f} / {rms[1]:.4f} (bound 0.30); "
                          f"two-scale {ev['rms_two_scale'][0]:.4f} / {ev['rms_two_scale'][1]:.4f}; "
                          f"fit+eval {secs:.1f} s (bound 1200 s)")


# 3 --------------------------------------------------------------------------------------

def _truth_model(K, hier):
    d = identity_dictionaries(hier)
    kw = {name: K[name] for name in HIER_BLOCKS} if hier else {}
    return StructuredKoopman("hier" if hier else "flat", d, K["Kxx"], K["Kxu"], **kw)


def _oracle_pinned_step(K, x, u):
    """Independent slow step with fast groups at their rest points (identity lifts, raw layout)."""
    out = []
    for i in range(2):
        j = 1 - i
        y = K["Kyx"][i] @ x[i] + K["Kyu"][i] @ u[i:i + 1]
        inp = K["Kxx"][i][j] @ x[j] + K["Kxy"][i] @ y
        out.append(K["Kxx"][i][i] @ (x[i] - inp) + inp)
    return out


def test_criterion_3_exact_recovery(capsys):
    rng = np.random.default_rng(3)
    Kf = flat_truth(rng)
    flat = fit_flat(flat_dataset(rng, Kf), identity_dictionaries())
    err_f = max(max(np.abs(flat.Kxx[i][j] - Kf["Kxx"][i][j]).max() for i in range(2) for j in range(2)),
                max(np.abs(flat.Kxu[i] - Kf["Kxu"][i]).max() for i in range(2)))
    Kh = hier_truth(rng)
    hier = fit_hier(hier_dataset(rng, Kh), identity_dictionaries(hier=True))
    err_h = max(max(np.abs(getattr(hier, nm)[i] - Kh[nm][i]).max() for nm in HIER_BLOCKS for i in range(2)),
                max(np.abs(hier.Kxx[i][j] - Kh["Kxx"][i][j]).max() for i in range(2) for j in range(2)))

    # predictions from the package's combined / reduced systems against independent stepping
    x = rng.uniform(-1, 1, (1, 4))
    u = rng.uniform(-1, 1, (20, 1, 2))
    comb = predict(assemble_combined(_truth_model(Kf, False)), x, u)
    ref = x.copy()
    dev_comb = 0.0
    for t in range(20):
        ref = flat_step(Kf, ref, u[t])
        dev_comb = max(dev_comb, np.abs(comb[t + 1] - ref).max())
    red = build_reduced(_truth_model(Kh, True)).combined()
    xs = [rng.uniform(-1, 1, 2) for _ in range(2)]
    psi = np.concatenate(xs)
    dev_red = 0.0
    for t in range(20):
        psi = red.step(psi, u[t, 0])
        xs = _oracle_pinned_step(Kh, xs, u[t, 0])
        dev_red = max(dev_red, np.abs(psi - np.concatenate(xs)).max())
    ok = err_f <= 1e-6 and err_h <= 1e-6 and dev_comb <= 1e-10 and dev_red <= 1e-10
    report(capsys, 3, ok, f"block recovery flat {err_f:.1e}, hier {err_h:.1e} (bound 1e-6); prediction vs "
                          f"oracle stepping combined {dev_comb:.1e}, reduced {dev_red:.1e} (bound 1e-10)")


# 4 --------------------------------------------------------------------------------------

def test_criterion_4_reduction_consistency(hier_run, capsys):
    model, red = hier_run["model"], hier_run["reduced"]
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        psi_x = [model.lift("x", i, rng.uniform(-1, 1, 2)) for i in range(2)]
        psi_u = [rng.uniform(-1, 1, 1) for _ in range(2)]
        worst = max(worst, consistency_check(model, red, hier_run["cfg"].m, psi_x, psi_u)["max_deviation"])
    report(capsys, 4, worst <= 1e-10, f"reduced slow step vs m={hier_run['cfg'].m} sub-step rollout from fixed "
                                      f"points, worst deviation {worst:.1e} over 20 states (bound 1e-10)")


# 5 --------------------------------------------------------------------------------------

def test_criterion_5_lyapunov(capsys):
    rng = np.random.default_rng(5)
    worst_res, worst_sym, worst_eig = 0.0, 0.0, np.inf
    for _ in range(100):
        n = int(rng.integers(2, 31))
        F = random_contraction(rng, n, rng.uniform(0.05, 0.99))
        E = rng.standard_normal((n, int(rng.integers(1, 4))))
        X = solve_discrete_lyapunov(F, E @ E.T)
        worst_res = max(worst_res, lyapunov_residual(F, X, E @ E.T))
        G, _ = gramian(F, E)
        worst_sym = max(worst_sym, np.abs(G - G.T).max())
        worst_eig = min(worst_eig, np.linalg.eigvalsh(G).min() / max(1.0, np.abs(G).max()))
    ok = worst_res <= 1e-10 and worst_sym <= 1e-10 and worst_eig >= -1e-10
    report(capsys, 5, ok, f"100 random stable systems (dims 2-30): worst relative residual {worst_res:.1e}, "
                          f"asymmetry {worst_sym:.1e}, min scaled eigenvalue {worst_eig:.1e}")


# 6 --------------------------------------------------------------------------------------

def _kreiss_cases(flat_run, hier_run):
    cases = []
    for run in (flat_run, hier_run):
        m = run["model"]
        cases += [m.Kxx[i][i] for i in range(2)] + [assemble_combined(m).A]
        if run["reduced"] is not None:
            cases += run["reduced"].Bxx + [run["reduced"].combined().A]
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        cases.append(random_contraction(rng, n, rng.uniform(0.05, 0.99)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [(kreiss_bound(A), max_power_norm(A, 500, include_identity=True),
                 max_power_norm(A, 500, include_identity=False)) for A in cases]


@pytest.fixture(scope="module")
def kreiss_values(flat_run, hier_run):
    return _kreiss_cases(flat_run, hier_run)


def test_criterion_6_kreiss_sandwich(kreiss_values, capsys):
    lower = min(t for t, _, _ in kreiss_values)
    slack = min(p0 + 1e-6 - t for t, p0, _ in kreiss_values)
    ok = lower >= 1 - 1e-9 and slack >= 0
    report(capsys, 6, ok, f"{len(kreiss_values)} matrices (fitted + 100 random): min T_bound {lower:.6f} "
                          f"(>= 1 - 1e-9); min of max_(0<=k<=500)|A^k| + 1e-6 - T_bound = {slack:.2e} (>= 0)")


def test_criterion_6_strict_upper_form(kreiss_values, capsys):
    """Upper bound with ``k`` starting at 1, as originally worded.

    For a matrix with ``|A^k| < 1`` for every ``k >= 1`` the bound cannot hold,
    because ``T_bound >= 1`` always (the limit ``|z| -> inf``). Recorded as an
    expected failure when such matrices occur among the test cases.
    """
    bad = [(t, p1) for t, _, p1 in kreiss_values if t > p1 + 1e-6]
    ok = not bad
    line = (f"strict form T_bound <= max_(1<=k<=500)|A^k| + 1e-6 violated on {len(bad)} of {len(kreiss_values)} "
            f"matrices" + (f", e.g. T_bound {bad[0][0]:.4f} vs max power norm {bad[0][1]:.4f}" if bad else ""))
    if bad:
        with capsys.disabled():
            print(f"\n[criterion 6, strict form] FAIL (expected): {line}; every violation has max_(k>=1)|A^k| < 1")
        assert all(p1 < 1 for _, p1 in bad)
        pytest.xfail("T_bound >= 1 exceeds max_(k>=1)|A^k| for contractive matrices")
    report(capsys, "6, strict form", ok, line)


# 7 --------------------------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["flat", "hier"])
def test_criterion_7_dominance(variant, flat_run, hier_run, capsys):
    run = flat_run if variant == "flat" else hier_run
    cfg = run["cfg"]
    ics = control_ics(cfg)
    n_ok, worst_gap, worst_base, worst_fb, problems = 0, -np.inf, -np.inf, 0.0, []
    for k, x0 in enumerate(ics):
        row, opt, eq = solve_instance(control_problem(cfg, run["model"], run["reduced"], x0))
        if row["status"] != "ok":
            problems.append(f"IC {k}: {row['status']}")
            continue
        n_ok += 1
        tot_o, tot_e, tot_b = opt.total_objective, eq.total_objective, sum(row["baseline"])
        worst_gap = max(worst_gap, tot_o - tot_e - 1e-6 * (1 + abs(tot_o)))
        worst_base = max(worst_base, tot_o - tot_b)
        worst_fb = max(worst_fb, opt.residuals["fb"], eq.residuals["fb"])
    rate = n_ok / len(ics)
    ok = len(ics) >= 20 and rate >= 0.8 and worst_gap <= 0 and worst_base <= 0 and worst_fb <= 1e-8
    report(capsys, 7, ok, f"{variant}: {n_ok}/{len(ics)} converged (>= 80%), max(opt - eq - slack) {worst_gap:.2e} "
                          f"(<= 0), max(opt - baseline) {worst_base:.2e} (<= 0), max FB residual {worst_fb:.1e} "
                          f"(<= 1e-8)" + (f"; {', '.join(problems)}" if problems else ""))


# 8 --------------------------------------------------------------------------------------

def test_criterion_8_coupling_identity(flat_run, hier_run, capsys):
    checks = []
    for run in (flat_run, hier_run):
        p = control_problem(run["cfg"], run["model"], run["reduced"], [0.2, -0.3, 0.4, 0.1])
        Mo, Me, C = build_optimum_kkt(p).M, build_equilibrium_mcp(p).M, coupling_blocks(p)
        diff = (Mo - Me).tocsr()
        diff.eliminate_zeros()
        C = C.tocsr()
        C.eliminate_zeros()
        same_pattern = (diff != C).nnz == 0
        L = build_optimum_kkt(p).meta["layout"]
        rows, cols = C.nonzero()
        in_blocks = bool(np.all(rows < L.n_primal) & np.all(cols >= L.n_primal))
        # bit-level equality of the differing entries with the combined cross blocks
        exact = np.array_equal(diff.toarray(), C.toarray())
        checks.append(same_pattern and in_blocks and exact and C.nnz > 0)
    report(capsys, 8, all(checks), f"optimum minus equilibrium MCP equals the cross-agent multiplier blocks "
                                   f"exactly (flat {checks[0]}, hier {checks[1]})")


# 9 --------------------------------------------------------------------------------------

def test_criterion_9_best_response(capsys):
    a, c, b, x0, T = (0.9, 0.8), (0.3, -0.2), (1.0, 0.5), (1.0, -0.7), 10
    eq = solve_equilibrium(scalar_game(a=a, c=c, b=b, x0=x0, horizon=T))
    U, X = best_response_iteration(a, c, b, x0, T)
    err = max(np.abs(np.hstack(eq.controls) - U).max(), np.abs(np.hstack(eq.states) - X).max())
    report(capsys, 9, err <= 1e-7, f"2-agent scalar coupled game, MCP equilibrium vs best-response fixed point: "
                                   f"max deviation {err:.1e} (bound 1e-7)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
