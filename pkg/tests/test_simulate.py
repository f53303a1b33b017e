"""Closed-loop simulator tests: profiles, the replan loop, and audits."""

import numpy as np
import pytest

from conftest import scalar_instance
from regreth.lti import Polytope, SystemModel, box_polytope, cross_polytope
from regreth.simulate import (DETERMINISTIC_KINDS, PROFILE_KINDS,
                              DisturbanceProfile, clairvoyant_benchmark_cost,
                              clairvoyant_trajectory, decay_envelope,
                              dissipation_residuals, fixed_gamma_level,
                              gamma_schedule, make_profile,
                              max_safety_violation, project_into,
                              receding_horizon_run, regret_ledger)
from regreth.synthesis import RegretEngine


W1 = box_polytope(1.0, 1)


def test_profile_pointwise_pins():
    assert np.array_equal(make_profile("constant", {"c": 1.0}, 3, 0, W1),
                          np.ones((3, 1)))
    w = make_profile("sin", {}, 60, 0, W1)  # omega defaults to 3*pi/N
    assert abs(w[0, 0]) <= 1e-15
    assert abs(w[1, 0] - np.sin(3 * np.pi / 60)) <= 1e-12
    w = make_profile("ramp", {}, 5, 0, W1)
    assert w[0, 0] == 0.0 and w[4, 0] == 1.0
    w = make_profile("step_plus_sin", {}, 21, 0, W1)
    assert abs(w[0, 0] - 0.5) <= 1e-12
    assert abs(w[5, 0] - 1.0) <= 1e-12
    w = make_profile("sawtooth", {"period": 10}, 20, 0, W1)
    assert abs(w[0, 0] - (-1.0)) <= 1e-12
    assert abs(w[5, 0]) <= 1e-12
    w = make_profile("stairs", {"width": 10}, 20, 0, W1)
    assert np.all(w[:10, 0] == 0.5) and np.all(w[10:, 0] == -0.5)


def test_profile_membership_and_ranges():
    W = box_polytope(1.0, 2)
    for kind in PROFILE_KINDS:
        w = make_profile(kind, {}, 40, 5, W)
        assert w.shape == (40, 2)
        assert np.max(np.abs(w)) <= 1.0 + 1e-12
    u = make_profile("uniform", {}, 200, 1, W)
    assert u.min() >= 0.5 - 1e-12 and u.max() <= 1.0 + 1e-12
    g = make_profile("gaussian", {}, 200, 1, W)
    assert np.max(np.abs(g)) <= 1.0  # clipped, not rejected


def test_profile_determinism():
    W = box_polytope(1.0, 2)
    a = make_profile("gaussian", {}, 30, 7, W)
    assert np.array_equal(a, make_profile("gaussian", {}, 30, 7, W))
    assert not np.array_equal(a, make_profile("gaussian", {}, 30, 8, W))
    for kind in DETERMINISTIC_KINDS:
        assert np.array_equal(make_profile(kind, {}, 30, 0, W),
                              make_profile(kind, {}, 30, 9, W))


def test_profile_unknown_kind():
    with pytest.raises(ValueError):
        DisturbanceProfile(kind="pink_noise", W=W1)


def test_project_into_general_polytope():
    # non-box set: radial shrink onto the boundary, inside points untouched
    W = Polytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 1.0, 1.0])
    pts = np.array([[5.0, 5.0], [0.1, 0.2], [-3.0, 0.0]])
    proj = project_into(W, pts)
    assert np.all(proj @ W.H.T <= W.h + 1e-12)
    assert np.allclose(proj[1], pts[1])
    assert abs(proj[0] @ np.array([1.0, 1.0]) - 1.0) <= 1e-12


def test_run_zero_disturbance_zero_state(scalar):
    N = scalar.N
    tr = receding_horizon_run(scalar, "regret_fixed_gamma",
                              np.zeros((N, 1)), 1, x0=[0.0])
    assert tr.success
    assert np.max(np.abs(tr.x)) <= 1e-6
    assert np.max(np.abs(tr.u)) <= 1e-6
    assert tr.replan_times == list(range(N))
    assert all(tr.feasible_flags)
    assert np.isnan(tr.J_bar)  # zero disturbance energy


def test_run_dynamics_identity_and_safety(scalar):
    prof = DisturbanceProfile(kind="gaussian", W=scalar.W_stage, seed=3)
    tr = receding_horizon_run(scalar, "regret_fixed_gamma", prof, 1)
    assert tr.success
    A, B = scalar.model.A, scalar.model.B
    for t in range(scalar.N):
        step = A @ tr.x[t] + B @ tr.u[t] + tr.w[t]
        assert np.max(np.abs(tr.x[t + 1] - step)) <= 1e-12
    assert max_safety_violation(tr, scalar.Z_stage) <= 1e-6
    assert abs(tr.gamma_bar - scalar.terminal.gamma_f) <= 1e-12
    assert tr.ledger is not None and tr.ledger.satisfied
    assert abs(tr.J_bar - tr.J_N / tr.w_energy) <= 1e-12


def test_run_stride_and_partial_window():
    from regreth.presets import scalar_preset
    preset = scalar_preset(T=3, N=7)
    prof = DisturbanceProfile(kind="gaussian", W=preset.W_stage, seed=3)
    tr = receding_horizon_run(preset, "regret_fixed_gamma", prof, 2)
    assert tr.success
    # replans every 2 steps; the last window only has one step left
    assert tr.replan_times == [0, 2, 4, 6]
    assert tr.u.shape == (7, 1)
    A, B = preset.model.A, preset.model.B
    for t in range(preset.N):
        step = A @ tr.x[t] + B @ tr.u[t] + tr.w[t]
        assert np.max(np.abs(tr.x[t + 1] - step)) <= 1e-12
    assert tr.ledger is not None and tr.ledger.satisfied


def test_run_validation(scalar):
    with pytest.raises(ValueError):
        receding_horizon_run(scalar, "regret_fixed_gamma",
                             np.zeros((scalar.N, 1)), 0)
    with pytest.raises(ValueError):
        receding_horizon_run(scalar, "regret_fixed_gamma",
                             np.zeros((scalar.N, 1)), scalar.T + 1)
    with pytest.raises(ValueError):
        receding_horizon_run(scalar, "regret_fixed_gamma",
                             np.zeros((scalar.N + 1, 1)), 1)


def test_run_infeasible_marked_failed(scalar):
    # state far outside the safe set: the replan fails, the run reports it
    tr = receding_horizon_run(scalar, "regret_fixed_gamma",
                              np.zeros((scalar.N, 1)), 1,
                              gamma_bar=2.0, x0=[200.0])
    assert tr.failed and not tr.success
    assert tr.failure_state[0] == 200.0
    assert "replan t=0" in tr.failure_reason
    assert tr.replans[0].feasible is False
    assert tr.ledger is None


def test_fixed_gamma_level_terminal_dominates(scalar):
    eng = scalar.engine("regret_fixed_gamma")
    gf = scalar.terminal.gamma_f
    assert fixed_gamma_level(eng, scalar.x0, gf) == gf


def test_gamma_schedule_modes(scalar):
    eng = scalar.engine("regret_fixed_gamma")
    gf = scalar.terminal.gamma_f
    with pytest.raises(ValueError):
        gamma_schedule(eng, gf, scalar.x0, "fixed")
    with pytest.raises(ValueError):
        gamma_schedule(eng, gf, scalar.x0, "annealed")
    assert gamma_schedule(eng, gf, scalar.x0, "fixed", gamma_bar=1.7) == 1.7
    g = gamma_schedule(eng, gf, scalar.x0, "per_replan_bisection")
    # the scalar level set floors at 1, below the terminal level
    assert abs(g - max(1.0, gf)) <= 2e-3


def test_gamma_schedule_degenerate_disturbance(scalar):
    # W = {0}: the bisected level floors at the structural gain 1, so the
    # terminal level still decides the schedule
    from regreth.clairvoyant import clairvoyant_gain
    from regreth.lti import build_stack
    model = SystemModel([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    stack = build_stack(model, 1, P=scalar.terminal.P)
    W0 = Polytope([[1.0], [-1.0]], [0.0, 0.0])
    from regreth.synthesis import SynthesisProblem
    prob = SynthesisProblem(
        stack=stack, x0=[0.0], W_stacked=W0,
        Z_stacked=box_polytope(100.0, 3),
        objective_kind="regret_fixed_gamma",
        C_T=clairvoyant_gain(build_stack(model, 1)), gamma=1.0)
    eng = RegretEngine(prob, margin=0.0)
    gf = scalar.terminal.gamma_f
    assert gamma_schedule(eng, gf, [0.0], "per_replan_bisection") == gf


def test_regret_ledger_zero_disturbance_slack(scalar):
    tr = receding_horizon_run(scalar, "regret_fixed_gamma",
                              np.zeros((scalar.N, 1)), 1, x0=[0.5])
    led = tr.ledger
    assert led.satisfied
    assert led.J_clairvoyant > 0.0   # x0 energy is unavoidable
    assert led.w_energy == 0.0
    assert led.regret_sum <= led.bound


def test_max_safety_violation_negative_control(scalar):
    tr = receding_horizon_run(scalar, "regret_fixed_gamma",
                              np.zeros((scalar.N, 1)), 1, x0=[0.5])
    tight = cross_polytope(box_polytope(0.1, 1), box_polytope(0.1, 1))
    assert max_safety_violation(tr, tight) >= 0.4 - 1e-9


def test_decay_envelope_undisturbed(scalar):
    tr = receding_horizon_run(scalar, "regret_fixed_gamma",
                              np.zeros((scalar.N, 1)), 1, x0=[0.5])
    fit = decay_envelope(tr)
    assert fit.ratio < 1.0
    assert fit.tail_max <= fit.floor


def test_dissipation_residuals_nonpositive(scalar):
    prof = DisturbanceProfile(kind="gaussian", W=scalar.W_stage, seed=2)
    tr = receding_horizon_run(scalar, "regret_fixed_gamma", prof, 1)
    eng = scalar.engine("regret_fixed_gamma")
    res = dissipation_residuals(eng, tr, steps=range(6))
    assert res.shape == (6,)
    assert float(res.max()) <= 1e-4


def test_clairvoyant_trajectory_consistency():
    rng = np.random.default_rng(31)
    model = SystemModel([[0.4, 0.1], [0.0, 0.5]], [[1.0], [0.5]],
                        np.eye(2), [[1.0]])
    x0 = rng.standard_normal(2)
    w = rng.standard_normal((6, 2))
    xs, us, stage = clairvoyant_trajectory(model, x0, w)
    for t in range(6):
        step = model.A @ xs[t] + model.B @ us[t] + w[t]
        assert np.max(np.abs(xs[t + 1] - step)) <= 1e-9
    # the benchmark quadratic equals the summed stage cost (no terminal)
    assert abs(stage.sum() - clairvoyant_benchmark_cost(model, x0, w)) <= 1e-8
