import math

import numpy as np
import pytest

from heatctrl import (ControlPair, ProblemData, Stepper, apply_C, apply_W,
                      compute_constants, contraction_constant, convexity_gap,
                      cost_J, gradient_J, h_inner, hq_inner, hq_norm,
                      measured_step_ratio, q_inner, solve_cg,
                      solve_distributed_only, solve_fixed_point, solve_state)

from oracles import SpaceTimeSystem, make_instance, random_control


def matched_target(data, ops, variant="P"):
    """Replace z_d by the zero-control trajectory (making (0,0) optimal)."""
    u00 = solve_state(data, ControlPair.zeros_like(ops, data.grid), ops, variant)
    return ProblemData(b=data.b, v_b=data.v_b, z_d=u00.slices[1:].copy(),
                       M1=data.M1, M2=data.M2, grid=data.grid, alpha=data.alpha)


def contractive_instance(seed=50, target_c0=0.5):
    """Instance whose fixed-point map contracts at the requested bound."""
    ops, data = make_instance(nx=2, ny=2, n_steps=3, seed=seed, alpha=10.0)
    consts = compute_constants(ops)
    gamma = consts.trace_norm
    M = (2.0 / consts.lambda0**2) * math.sqrt(1 + gamma**2) * (1 + gamma) / target_c0
    data = ProblemData(b=data.b, v_b=data.v_b, z_d=data.z_d, M1=M, M2=M,
                       grid=data.grid, alpha=data.alpha)
    return ops, data, consts


# -- apply_C ---------------------------------------------------------------------

def test_apply_C_zero_control():
    ops, data = make_instance(seed=1)
    du = apply_C(data, ControlPair.zeros_like(ops, data.grid), ops, "P")
    assert np.max(np.abs(du.slices)) == 0.0


def test_apply_C_is_linear():
    ops, data = make_instance(seed=2)
    rng = np.random.default_rng(3)
    ctrl = random_control(ops, data.grid, rng)
    one = apply_C(data, ctrl, ops, "P").slices
    two = apply_C(data, 2.0 * ctrl, ops, "P").slices
    assert np.max(np.abs(two - 2.0 * one)) <= 1e-10


@pytest.mark.parametrize("variant", ["P", "Palpha"])
def test_apply_C_matches_dense_map(variant):
    ops, data = make_instance(nx=2, ny=2, n_steps=2, seed=4, alpha=10.0)
    rng = np.random.default_rng(5)
    ctrl = random_control(ops, data.grid, rng)
    dense = SpaceTimeSystem(ops, data.grid, variant, data.alpha).state_difference(ctrl)
    du = apply_C(data, ctrl, ops, variant)
    assert np.max(np.abs(du.slices - dense)) <= 1e-10


# -- cost ------------------------------------------------------------------------

def test_cost_zero_at_exact_tracking():
    ops, data = make_instance(seed=6)
    data = matched_target(data, ops)
    assert cost_J(data, ControlPair.zeros_like(ops, data.grid), ops, "P") == 0.0


def test_cost_at_zero_controls_is_pure_misfit():
    ops, data = make_instance(seed=7)
    u00 = solve_state(data, ControlPair.zeros_like(ops, data.grid), ops, "P")
    mis = u00.slices[1:] - data.z_d
    expected = 0.5 * h_inner(mis, mis, ops, data.grid)
    got = cost_J(data, ControlPair.zeros_like(ops, data.grid), ops, "P")
    assert got == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("variant", ["P", "Palpha"])
def test_cost_matches_quadratic_form_oracle(variant):
    # J(c) = 1/2 Pi(c,c) - L(c) + 1/2 |u00 - z_d|^2, evaluated densely
    ops, data = make_instance(nx=2, ny=2, n_steps=2, seed=8, alpha=10.0)
    grid = data.grid
    sts = SpaceTimeSystem(ops, grid, variant, data.alpha)
    rng = np.random.default_rng(9)
    ctrl = random_control(ops, grid, rng)
    cu = sts.state_difference(ctrl)[1:]
    u00 = sts.state(data, ControlPair.zeros_like(ops, grid))[1:]
    base = u00 - data.z_d
    pi = h_inner(cu, cu, ops, grid) \
        + data.M1 * h_inner(ctrl.g, ctrl.g, ops, grid) \
        + data.M2 * q_inner(ctrl.q, ctrl.q, ops, grid)
    ell = h_inner(cu, -base, ops, grid)
    expected = 0.5 * pi - ell + 0.5 * h_inner(base, base, ops, grid)
    got = cost_J(data, ctrl, ops, variant)
    assert got == pytest.approx(expected, rel=1e-10)
    assert got >= 0.0


# -- gradient ----------------------------------------------------------------------

def test_gradient_zero_at_matched_target():
    ops, data = make_instance(seed=10)
    data = matched_target(data, ops)
    grad = gradient_J(data, ControlPair.zeros_like(ops, data.grid), ops, "P")
    assert hq_norm(grad, ops, data.grid) == 0.0


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    for trial in range(20):
        ops, data = make_instance(
            nx=2 + trial % 2, ny=2, n_steps=2 + trial % 3, seed=100 + trial,
            M1=0.5 + 0.1 * trial, M2=0.3 + 0.05 * trial, alpha=5.0,
        )
        variant = "P" if trial % 2 == 0 else "Palpha"
        stepper = Stepper(ops, data.grid, variant, data.alpha)
        ctrl = random_control(ops, data.grid, rng)
        d = random_control(ops, data.grid, rng)
        d = (1.0 / hq_norm(d, ops, data.grid)) * d
        directional = hq_inner(
            gradient_J(data, ctrl, ops, variant, stepper), d, ops, data.grid)
        h = 1e-5
        fd = (cost_J(data, ctrl + h * d, ops, variant, stepper)
              - cost_J(data, ctrl - h * d, ops, variant, stepper)) / (2 * h)
        assert abs(directional - fd) <= 1e-6 * max(abs(fd), 1e-12)


def test_gradient_small_at_cg_optimum():
    ops, data = make_instance(seed=12)
    rep = solve_cg(data, ops, "P", 1e-10)
    assert rep.converged
    assert rep.grad_norm <= 1e-10 * (1.0 + rep.grad_norm0)


def test_reported_grad_norm_matches_fresh_evaluation():
    ops, data = make_instance(seed=13)
    rep = solve_cg(data, ops, "P", 1e-10)
    fresh = hq_norm(gradient_J(data, rep.control, ops, "P"), ops, data.grid)
    assert abs(fresh - rep.grad_norm) <= 1e-12 * (1.0 + fresh)


# -- convexity ---------------------------------------------------------------------

def test_convexity_gap_vanishes_at_segment_ends():
    ops, data = make_instance(seed=14)
    rng = np.random.default_rng(15)
    c1 = random_control(ops, data.grid, rng)
    c2 = random_control(ops, data.grid, rng)
    assert convexity_gap(data, c1, c2, 0.0, ops, "P") == 0.0
    for t in (0.0, 0.3, 1.0):
        assert abs(convexity_gap(data, c1, c1, t, ops, "P")) <= 1e-12


@pytest.mark.parametrize("variant", ["P", "Palpha"])
def test_convexity_identity(variant):
    ops, data = make_instance(nx=2, ny=2, n_steps=3, seed=16, alpha=10.0)
    grid = data.grid
    stepper = Stepper(ops, grid, variant, data.alpha)
    rng = np.random.default_rng(17)
    for _ in range(10):
        c1 = random_control(ops, grid, rng)
        c2 = random_control(ops, grid, rng)
        u1 = solve_state(data, c1, ops, variant, stepper)
        u2 = solve_state(data, c2, ops, variant, stepper)
        dmis = u2.slices[1:] - u1.slices[1:]
        for t in (0.25, 0.5, 0.75):
            gap = convexity_gap(data, c1, c2, t, ops, variant, stepper)
            expected = 0.5 * t * (1 - t) * (
                h_inner(dmis, dmis, ops, grid)
                + data.M1 * h_inner(c2.g - c1.g, c2.g - c1.g, ops, grid)
                + data.M2 * q_inner(c2.q - c1.q, c2.q - c1.q, ops, grid)
            )
            assert abs(gap - expected) <= 1e-10 * abs(expected)


def test_convexity_gap_rejects_bad_t():
    ops, data = make_instance(seed=18)
    zero = ControlPair.zeros_like(ops, data.grid)
    with pytest.raises(ValueError, match="t must"):
        convexity_gap(data, zero, zero, 1.5, ops, "P")


# -- conjugate gradients -------------------------------------------------------------

def test_cg_trivial_optimum_zero_iterations():
    ops, data = make_instance(seed=19)
    data = matched_target(data, ops)
    rep = solve_cg(data, ops, "P", 1e-10)
    assert rep.converged and rep.iterations == 0
    assert rep.cost == 0.0
    assert hq_norm(rep.control, ops, data.grid) == 0.0


@pytest.mark.parametrize("variant", ["P", "Palpha"])
def test_cg_matches_dense_kkt_oracle(variant):
    ops, data = make_instance(nx=2, ny=2, n_steps=2, seed=20, alpha=10.0)
    rep = solve_cg(data, ops, variant, 1e-12)
    assert rep.converged
    oracle = SpaceTimeSystem(ops, data.grid, variant, data.alpha).kkt_optimum(data)
    assert hq_norm(rep.control - oracle, ops, data.grid) <= 1e-8


def test_cg_matches_oracle_on_two_sided_gamma1():
    ops, data = make_instance(nx=2, ny=3, n_steps=2, seed=60, alpha=10.0,
                              gamma1=("bottom", "top"))
    for variant in ("P", "Palpha"):
        rep = solve_cg(data, ops, variant, 1e-12)
        assert rep.converged
        oracle = SpaceTimeSystem(ops, data.grid, variant, data.alpha).kkt_optimum(data)
        assert hq_norm(rep.control - oracle, ops, data.grid) <= 1e-8


def test_large_penalties_force_zero_control():
    ops, data = make_instance(seed=21, M1=1e6, M2=1e6)
    rep = solve_cg(data, ops, "P", 1e-12)
    assert rep.converged
    assert hq_norm(rep.control, ops, data.grid) <= 1e-5


# -- fixed-point map ------------------------------------------------------------------

def test_W_at_zero_with_matched_target():
    ops, data = make_instance(seed=22)
    data = matched_target(data, ops)
    w = apply_W(data, ControlPair.zeros_like(ops, data.grid), ops, "P")
    assert hq_norm(w, ops, data.grid) == 0.0


def test_gradient_vanishes_at_any_W_fixed_point():
    # at a fixed point, M1 g + p = 0 and M2 q - p = 0 by construction
    ops, data, _ = contractive_instance(seed=23)
    rep = solve_fixed_point(data, ops, "P", 1e-12, max_iter=300)
    assert rep.converged
    grad = gradient_J(data, rep.control, ops, "P")
    assert hq_norm(grad, ops, data.grid) <= 1e-9


def test_W_matches_dense_adjoint_scaling():
    ops, data = make_instance(nx=2, ny=2, n_steps=2, seed=24, M1=0.7, M2=1.9)
    rng = np.random.default_rng(25)
    ctrl = random_control(ops, data.grid, rng)
    sts = SpaceTimeSystem(ops, data.grid, "P")
    u = sts.state(data, ctrl)
    p = sts.adjoint(data, u)[:-1]
    w = apply_W(data, ctrl, ops, "P")
    assert np.max(np.abs(w.g - (-p / data.M1))) <= 1e-10
    assert np.max(np.abs(w.q - p[:, ops.gamma2_nodes] / data.M2)) <= 1e-10


def test_contraction_constant_formula():
    from heatctrl.assembly import ConstantsReport
    consts = ConstantsReport(lambda0=1.0, lambda1=1.0, trace_norm=1.0,
                             mesh_descriptor="synthetic")
    # frozen values computed from the closed-form bound
    assert contraction_constant(consts, 4.0, 4.0, "P") \
        == pytest.approx(1.4142135623730951, rel=1e-12)
    assert contraction_constant(consts, 10.0, 10.0, "P") \
        == pytest.approx(0.5656854249492381, rel=1e-12)
    # for alpha >= 1 the Robin branch depends on lambda1 alone
    big = contraction_constant(consts, 4.0, 4.0, "Palpha", alpha=7.0)
    assert big == contraction_constant(consts, 4.0, 4.0, "Palpha", alpha=1.0)
    assert contraction_constant(consts, 4.0, 4.0, "Palpha", alpha=0.5) \
        == pytest.approx(big / 0.25, rel=1e-12)


def test_fixed_point_trivial_instance_converges_in_one_step():
    ops, data = make_instance(seed=26)
    data = matched_target(data, ops)
    rep = solve_fixed_point(data, ops, "P", 1e-10)
    assert rep.converged and rep.iterations == 1
    assert hq_norm(rep.control, ops, data.grid) == 0.0


def test_fixed_point_contracts_and_matches_cg():
    ops, data, consts = contractive_instance(seed=27, target_c0=0.5)
    c0 = contraction_constant(consts, data.M1, data.M2, "P")
    assert c0 == pytest.approx(0.5, rel=1e-9)
    tol = 1e-11
    fp = solve_fixed_point(data, ops, "P", tol, max_iter=300)
    cg = solve_cg(data, ops, "P", tol)
    assert fp.converged and cg.converged
    ratio = measured_step_ratio(fp.history, floor=1e-13)
    assert ratio <= 0.6
    assert hq_norm(fp.control - cg.control, ops, data.grid) <= 10 * tol
    # the controlled residual is the step norm; the gradient scales with it
    assert fp.grad_norm <= max(data.M1, data.M2) * tol * (1 + 1e-6)


def test_fixed_point_reports_divergence():
    ops, data = make_instance(seed=28, M1=1e-3, M2=1e-3)
    rep = solve_fixed_point(data, ops, "P", 1e-10, max_iter=25)
    assert not rep.converged
    assert measured_step_ratio(rep.history) > 1.0


def test_lipschitz_ratio_below_contraction_constant():
    ops, data = make_instance(nx=2, ny=2, n_steps=3, seed=29, M1=0.8, M2=1.4)
    consts = compute_constants(ops)
    c0 = contraction_constant(consts, data.M1, data.M2, "P")
    stepper = Stepper(ops, data.grid, "P")
    rng = np.random.default_rng(30)
    for _ in range(50):
        a = random_control(ops, data.grid, rng)
        b = random_control(ops, data.grid, rng)
        wa = apply_W(data, a, ops, "P", stepper)
        wb = apply_W(data, b, ops, "P", stepper)
        denom = hq_norm(b - a, ops, data.grid)
        assert hq_norm(wb - wa, ops, data.grid) <= c0 * denom


# -- distributed-only problem -----------------------------------------------------------

def test_distributed_only_trivial():
    ops, data = make_instance(seed=31)
    data = matched_target(data, ops)
    q0 = np.zeros((data.grid.n_steps, len(ops.gamma2_nodes)))
    rep = solve_distributed_only(data, q0, ops, "P", 1e-10)
    assert rep.converged
    assert np.max(np.abs(rep.control.g)) == 0.0


@pytest.mark.parametrize("variant", ["P", "Palpha"])
def test_distributed_only_matches_dense_g_block(variant):
    ops, data = make_instance(nx=2, ny=2, n_steps=2, seed=32, alpha=10.0)
    rng = np.random.default_rng(33)
    q_fixed = rng.standard_normal((data.grid.n_steps, len(ops.gamma2_nodes)))
    rep = solve_distributed_only(data, q_fixed, ops, variant, 1e-12)
    assert rep.converged
    oracle = SpaceTimeSystem(ops, data.grid, variant, data.alpha) \
        .kkt_optimum_distributed(data, q_fixed)
    diff = rep.control.g - oracle
    assert math.sqrt(h_inner(diff, diff, ops, data.grid)) <= 1e-8


def test_simultaneous_cost_never_exceeds_frozen_flux_cost():
    ops, data = make_instance(nx=2, ny=2, n_steps=3, seed=34)
    full = solve_cg(data, ops, "P", 1e-11)
    dist = solve_distributed_only(data, full.control.q, ops, "P", 1e-11)
    assert full.cost <= dist.cost * (1.0 + 1e-12) + 1e-14


def test_bad_q_fixed_shape_rejected():
    ops, data = make_instance(seed=35)
    with pytest.raises(ValueError, match="q_fixed"):
        solve_distributed_only(data, np.zeros((1, 1)), ops, "P", 1e-8)


def test_nonpositive_tolerances_rejected():
    ops, data = make_instance(seed=36)
    with pytest.raises(ValueError):
        solve_cg(data, ops, "P", 0.0)
    with pytest.raises(ValueError):
        solve_fixed_point(data, ops, "P", -1.0)
