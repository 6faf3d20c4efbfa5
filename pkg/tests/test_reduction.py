import numpy as np
import pytest

from makoop.errors import MakoopError, SingularityError
from makoop.koopman import rollout_multiscale, step_agent, step_fast
from makoop.reduction import (ReducedModel, build_reduced, consistency_check, fast_fixed_point, reduced_step)

from oracles import random_hier_model, scalar_hier_model


def test_fixed_point_scalar_example():
    model = scalar_hier_model(Kyy=0.0, Kyx=1.0)
    y, w = fast_fixed_point(model, 0, np.array([0.3]), np.array([0.0]))
    assert y[0] == pytest.approx(0.3)
    assert w[0] == 0.0


def test_fixed_point_is_stationary(rng):
    model = random_hier_model(rng)
    x, u = rng.standard_normal(3), rng.standard_normal(1)
    y, w = fast_fixed_point(model, 1, x, u)
    y1, w1 = step_fast(model, 1, x, u, y, w)
    assert np.max(np.abs(y1 - y)) <= 1e-10
    assert np.max(np.abs(w1 - w)) <= 1e-10


def test_fixed_point_iteration_oracle(rng):
    model = random_hier_model(rng)
    x, u = rng.standard_normal(3), rng.standard_normal(1)
    y, w = rng.standard_normal(2), rng.standard_normal(2)
    for _ in range(10_000):
        y, w = step_fast(model, 0, x, u, y, w)
    ys, ws = fast_fixed_point(model, 0, x, u)
    np.testing.assert_allclose(y, ys, atol=1e-8)
    np.testing.assert_allclose(w, ws, atol=1e-8)


@pytest.mark.parametrize("block", ["Kyy", "Kww"])
def test_singular_fast_block_raises(block):
    model = scalar_hier_model(**{block: 1.0})
    with pytest.raises(SingularityError) as exc:
        fast_fixed_point(model, 0, np.zeros(1), np.zeros(1))
    assert exc.value.condition is not None
    with pytest.raises(SingularityError):
        build_reduced(model)


def test_reduced_scalar_example():
    red = build_reduced(scalar_hier_model(Kxx=0.5, Kxy=0.2, Kyx=1.0))
    assert red.Bxx[0][0, 0] == pytest.approx(0.6, abs=1e-15)


def test_uncoupled_scales_keep_slow_block(rng):
    model = random_hier_model(rng)
    for i in range(2):
        model.Kxy[i][:] = 0.0
        model.Kxw[i][:] = 0.0
    red = build_reduced(model)
    for i in range(2):
        np.testing.assert_array_equal(red.Bxx[i], model.Kxx[i][i])
        assert not red.Bxu[i].any()


def test_reduced_formulas(rng):
    model = random_hier_model(rng)
    red = build_reduced(model)
    for i in range(2):
        I = np.eye(3)
        np.testing.assert_array_equal(red.Byx[i], model.Kyx[i])
        np.testing.assert_array_equal(red.Byu[i], model.Kyu[i])
        Bwx = model.Kwx[i] + model.Kwy[i] @ model.Kyx[i]
        np.testing.assert_allclose(red.Bwx[i], Bwx, atol=1e-15)
        np.testing.assert_allclose(red.Bxx[i], model.Kxx[i][i] + (I - model.Kxx[i][i])
                                   @ (model.Kxw[i] @ Bwx + model.Kxy[i] @ model.Kyx[i]), atol=1e-14)
        j = 1 - i
        np.testing.assert_allclose(red.G[i][j], (I - model.Kxx[i][i]) @ model.Kxx[i][j], atol=1e-15)
        assert not red.G[i][i].any()


def test_combined_reduced_layout(rng):
    red = build_reduced(random_hier_model(rng))
    comb = red.combined()
    s = comb.state_slices
    np.testing.assert_array_equal(comb.A[s[0], s[0]], red.Bxx[0])
    np.testing.assert_array_equal(comb.A[s[0], s[1]], red.G[0][1])
    np.testing.assert_array_equal(comb.B[s[1], comb.control_slices[1]], red.Bxu[1])
    assert not comb.B[s[0], comb.control_slices[1]].any()


def _pinned_step(model, psi_x, psi_u):
    out = []
    for i in range(model.n_agents):
        y, w = fast_fixed_point(model, i, psi_x[i], psi_u[i])
        out.append(step_agent(model, i, psi_x, psi_u[i], avg_y=y, avg_w=w))
    return out


def test_reduced_step_matches_pinned_fast_states(rng, hier_model, hier_reduced):
    for model, red in ((hier_model, hier_reduced), (m := random_hier_model(rng), build_reduced(m))):
        psi_x = [rng.standard_normal(model.dim("x", i)) for i in range(2)]
        psi_u = [rng.standard_normal(1) for _ in range(2)]
        pinned = _pinned_step(model, psi_x, psi_u)
        for i in range(2):
            assert np.max(np.abs(reduced_step(red, i, psi_x, psi_u[i]) - pinned[i])) <= 1e-10
        comb = red.combined()
        nxt = comb.step(np.concatenate(psi_x), np.concatenate(psi_u))
        assert np.max(np.abs(nxt - np.concatenate(pinned))) <= 1e-10


def test_consistency_at_fixed_point(hier_model, hier_reduced, rng):
    psi_x = [hier_model.lift("x", i, rng.uniform(-1, 1, 2)) for i in range(2)]
    psi_u = [rng.uniform(-1, 1, 1) for _ in range(2)]
    rep = consistency_check(hier_model, hier_reduced, 100, psi_x, psi_u)
    assert rep["max_deviation"] <= 1e-10


def test_consistency_perturbed_decreases_with_m(rng):
    model = random_hier_model(rng, rho=0.6)
    red = build_reduced(model)
    psi_x = [rng.standard_normal(3) for _ in range(2)]
    psi_u = [rng.standard_normal(1) for _ in range(2)]
    devs = {}
    for delta in (1e-3, 1e-2):
        pert = [(delta * np.ones(2), delta * np.ones(2)) for _ in range(2)]
        devs[delta] = [consistency_check(model, red, m, psi_x, psi_u, pert)["max_deviation"] for m in (2, 4, 8, 16, 32)]
    for seq in devs.values():
        assert all(b <= a + 1e-15 for a, b in zip(seq, seq[1:]))
    # linear in the perturbation size
    np.testing.assert_allclose(np.array(devs[1e-2]), 10 * np.array(devs[1e-3]), rtol=1e-6)


def test_consistency_benchmark_m_doubling(hier_model, hier_reduced, rng):
    psi_x = [hier_model.lift("x", i, rng.uniform(-1, 1, 2)) for i in range(2)]
    psi_u = [rng.uniform(-1, 1, 1) for _ in range(2)]
    pert = [(1e-2 * np.ones(hier_model.dim("y", i)), 1e-2 * np.ones(hier_model.dim("w", i))) for i in range(2)]
    reps = [consistency_check(hier_model, hier_reduced, m, psi_x, psi_u, pert) for m in (25, 50, 100, 200, 400)]
    # The next slow state is what the reduced model predicts; its error shrinks as m doubles.
    # Window averages of w are not monotone here: the fitted K_ww sit at the projection
    # radius 0.999, whose time constant exceeds every window in the sweep.
    devs = [r["max_slow_deviation"] for r in reps]
    assert all(b <= a for a, b in zip(devs, devs[1:]))
    assert devs[-1] < 0.25 * devs[0]


def test_reduced_rollout_tracks_multiscale_limit(rng):
    # with fast dynamics much faster than the slow step, many-step rollouts agree closely
    model = random_hier_model(rng, rho=0.3)
    red = build_reduced(model)
    psi_x = [rng.standard_normal(3) for _ in range(2)]
    controls = rng.uniform(-1, 1, (5, 2))
    y0, w0 = zip(*(fast_fixed_point(model, i, psi_x[i], controls[0, i:i + 1]) for i in range(2)))
    full = rollout_multiscale(model, psi_x, list(y0), list(w0), controls, 400)
    x = np.concatenate(psi_x)
    for t in range(5):
        x = red.combined().step(x, controls[t])
    assert np.max(np.abs(x - np.concatenate([full["x"][i][-1] for i in range(2)]))) < 0.05


def test_build_reduced_needs_hier(flat_model):
    with pytest.raises(MakoopError):
        build_reduced(flat_model)


def test_reduced_save_load_roundtrip(tmp_path, hier_model, hier_reduced):
    p = tmp_path / "reduced.npz"
    hier_reduced.save(p)
    back = ReducedModel.load(p)
    assert back.source_hash == hier_model.hash()
    assert back.hash() == hier_reduced.hash()
    for i in range(2):
        np.testing.assert_array_equal(back.Bxx[i], hier_reduced.Bxx[i])
        np.testing.assert_array_equal(back.G[i][1 - i], hier_reduced.G[i][1 - i])


def test_reduced_spectral_radii_reported(hier_reduced):
    radii = hier_reduced.spectral_radii()
    assert len(radii["Bxx"]) == 2
    assert radii["Bcomb"] < 1
