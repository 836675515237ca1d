import itertools
import math

import numpy as np
import pytest

from conftest import random_nndm
from nnreach.bounds import LinearBounds, symbolic_bounds_step
from nnreach.experiments import DEMO_INPUT, DEMO_STATE_RADIUS, DEMO_X0
from nnreach.nn import Layer, MlpModel, Nndm, linear_model, nndm_step_batch
from nnreach.numerics import BoxSet, DimensionError
from nnreach.reach import (MultiStepBounds, compose_step, concretize, control_boxes,
                           feedback_reach, find_feedback_gain, k_step_bounds, nominal_rollout,
                           reach_function)


def _exact(W, b, box):
    return LinearBounds(W, b, W, b, box)


def test_compose_exact_linear_is_matrix_product(rng):
    A1, B1, c1 = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=2)
    A2, B2, c2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=2)
    box = BoxSet.around(np.zeros(3), 1.0)
    acc = MultiStepBounds.from_step(_exact(np.hstack([A2, B2]), c2, box))
    out = compose_step(acc, _exact(np.hstack([A1, B1]), c1, box))
    direct = np.hstack([A2 @ A1, A2 @ B1, B2])
    assert out.k == 2 and out.W_lo.shape == (2, 4)
    assert np.allclose(out.W_lo, direct, atol=1e-12) and np.allclose(out.W_hi, direct, atol=1e-12)
    assert np.allclose(out.b_lo, A2 @ c1 + c2, atol=1e-12)
    assert np.allclose(out.b_hi, out.b_lo, atol=1e-12)


def test_compose_shape_mismatch():
    box = BoxSet.around(np.zeros(3), 1.0)
    acc = MultiStepBounds.from_step(_exact(np.ones((2, 3)), np.zeros(2), box))
    with pytest.raises(DimensionError):
        compose_step(acc, _exact(np.ones((3, 4)), np.zeros(3), BoxSet.around(np.zeros(4), 1.0)))


def test_base_case_equals_step_bounds(pendulum_model):
    x0, u_box = np.array([0.3, -0.2]), BoxSet.around([1.0], 0.1)
    ms = k_step_bounds(pendulum_model, BoxSet.point(x0), [u_box])
    step = symbolic_bounds_step(pendulum_model, BoxSet.point(x0).product(u_box))
    for a, b in ((ms.W_lo, step.W_lo), (ms.W_hi, step.W_hi), (ms.b_lo, step.b_lo), (ms.b_hi, step.b_hi)):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_empty_controls(pendulum_model):
    with pytest.raises(ValueError):
        k_step_bounds(pendulum_model, BoxSet.point([0.0, 0.0]), [])


def test_zero_network_keeps_x0():
    nndm = Nndm(MlpModel((Layer(np.zeros((2, 3)), np.zeros(2), "id"),)), 0.1, 2, 1)
    x0 = np.array([0.4, -0.7])
    for r in reach_function(nndm, x0, np.ones((4, 1)), 0.5):
        assert np.array_equal(r.box.lower, x0) and np.array_equal(r.box.upper, x0)


def test_hand_substitution_one_neuron_k2():
    # f(x, u) = -2 relu(x - u + 0.1) + 0.5, scalar state and input
    model = MlpModel((Layer([[1.0, -1.0]], [0.1], "relu"), Layer([[-2.0]], [0.5], "id")))
    nndm = Nndm(model, 0.1, 1, 1)
    x0, u_boxes = 0.2, [BoxSet([0.0], [0.3]), BoxSet([-0.2], [0.4])]
    ms = k_step_bounds(nndm, BoxSet.point([x0]), u_boxes)
    s0, s1 = ms.steps
    # substitute x1 in [a_lo x0 + c_lo u0 + d_lo, a_hi x0 + c_hi u0 + d_hi] into step 1
    for side, W, b in (("lo", ms.W_lo, ms.b_lo), ("hi", ms.W_hi, ms.b_hi)):
        outer_W = getattr(s1, f"W_{side}")[0]
        outer_b = getattr(s1, f"b_{side}")[0]
        coef = outer_W[0]
        pick = side if coef >= 0 else ("hi" if side == "lo" else "lo")
        inner_W = getattr(s0, f"W_{pick}")[0]
        inner_b = getattr(s0, f"b_{pick}")[0]
        expect = np.array([coef * inner_W[0], coef * inner_W[1], outer_W[1]])
        assert np.allclose(W[0], expect, atol=1e-14)
        assert b[0] == pytest.approx(outer_b + coef * inner_b, abs=1e-14)


def test_concretize_point_inputs_linear():
    nndm = Nndm(linear_model([[0.0, 1.0], [-1.0, -0.2]], [[0.0], [1.0]], [0.1, 0.0]), 0.1, 2, 1)
    controls = np.array([[0.5], [-0.3], [0.2]])
    xs = nominal_rollout(nndm, [0.3, 0.1], controls)
    for r, x in zip(reach_function(nndm, [0.3, 0.1], controls, 0.0), xs[1:]):
        assert np.all(r.box.width <= 1e-12)
        assert np.allclose(r.box.lower, x, atol=1e-12)


def test_concretize_matches_corner_enumeration(rng):
    nndm = random_nndm(rng, 1, 1, (6,))
    x0_box = BoxSet([-0.2], [0.3])
    u_boxes = [BoxSet([0.1], [0.6]), BoxSet([-0.5], [0.0])]
    ms = k_step_bounds(nndm, x0_box, u_boxes)
    got = concretize(ms, x0_box, u_boxes).box
    corners = np.array(list(itertools.product(*[(b.lower[0], b.upper[0]) for b in [x0_box, *u_boxes]])))
    lo = (corners @ ms.W_lo.T + ms.b_lo).min(axis=0)
    hi = (corners @ ms.W_hi.T + ms.b_hi).max(axis=0)
    assert np.allclose(got.lower, lo, atol=1e-12) and np.allclose(got.upper, hi, atol=1e-12)


def test_concretize_shape_mismatch(rng):
    nndm = random_nndm(rng)
    ms = k_step_bounds(nndm, BoxSet.point([0.0, 0.0]), [BoxSet.around([0.0], 0.1)])
    with pytest.raises(DimensionError):
        concretize(ms, BoxSet.point([0.0, 0.0]), [BoxSet.around([0.0], 0.1)] * 2)


def test_widening_control_box_never_shrinks(rng):
    nndm = random_nndm(rng, 2, 1, (10, 10))
    x0 = BoxSet.point([0.1, -0.1])
    base = [BoxSet.around([u], 0.05) for u in (0.2, -0.4, 0.1)]
    ms = k_step_bounds(nndm, x0, base)
    for j in range(3):
        wide = list(base)
        wide[j] = BoxSet.around(base[j].center, 0.2)
        # same envelope, larger box: interval monotonicity of the concretization
        small = concretize(ms, x0, base).box
        big = concretize(ms, x0, wide).box
        assert np.all(big.lower <= small.lower + 1e-12) and np.all(big.upper >= small.upper - 1e-12)


def test_control_boxes_negative_eps():
    with pytest.raises(ValueError):
        control_boxes([[0.0]], -0.1)


@pytest.mark.parametrize("env_name", ["pendulum", "dubins"])
def test_eps_zero_contains_nominal(env_name, request):
    nndm = request.getfixturevalue(f"{env_name}_model")
    rng = np.random.default_rng(3)
    x0 = np.zeros(nndm.m_x) + 0.1
    controls = rng.uniform(-1, 1, size=(5, nndm.m_u))
    xs = nominal_rollout(nndm, x0, controls)
    for r, x in zip(reach_function(nndm, x0, controls, 0.0), xs[1:]):
        assert r.box.contains(x, atol=1e-12)


def test_widths_monotone_in_eps(pendulum_model):
    rng = np.random.default_rng(8)
    x0 = np.array([0.5, 0.0])
    controls = rng.uniform(-3, 3, size=(5, 1))
    prev = None
    for eps in (0.001, 0.01, 0.1):
        widths = np.array([r.box.width for r in reach_function(pendulum_model, x0, controls, eps)])
        if prev is not None:
            assert np.all(widths >= prev - 1e-12)
        prev = widths


def _sampled_rollouts(nndm, x0, controls, eps, rng, n):
    X = np.tile(np.asarray(x0, dtype=float), (n, 1))
    out = []
    for u in controls:
        X = nndm_step_batch(nndm, X, u + rng.uniform(-eps, eps, size=(n, nndm.m_u)))
        out.append(X)
    return out


def test_pendulum_reach_monte_carlo(pendulum_model):
    rng = np.random.default_rng(21)
    for _ in range(3):
        x0 = np.array([rng.uniform(-1.5, 1.5), 0.0])
        controls = rng.uniform(-5, 5, size=(5, 1))
        reach = reach_function(pendulum_model, x0, controls, 0.01)
        for r, X in zip(reach, _sampled_rollouts(pendulum_model, x0, controls, 0.01, rng, 10_000)):
            assert np.all(X >= r.box.lower - 1e-9) and np.all(X <= r.box.upper + 1e-9)


def test_find_gain_linear_stable_is_zero():
    nndm = Nndm(linear_model(-np.eye(2), np.ones((2, 1))), 0.1, 2, 1)
    gain = find_feedback_gain(nndm, BoxSet.around(np.zeros(3), 0.5))
    assert gain.accepted and not gain.G.any()
    assert gain.radius_upper == pytest.approx(0.9, rel=1e-6)
    assert gain.gamma == pytest.approx(0.0, abs=1e-12)


def test_find_gain_scalar_unstable_riccati():
    # x+ = x + (x + u) * 1 = 2x + u
    nndm = Nndm(linear_model([[1.0]], [[1.0]]), 1.0, 1, 1)
    gain = find_feedback_gain(nndm, BoxSet.around(np.zeros(2), 1.0))
    P = 2 + math.sqrt(5)
    assert gain.accepted
    assert gain.G[0, 0] == pytest.approx(-2 * P / (1 + P), abs=1e-8)
    assert abs(2 + gain.G[0, 0]) < 1


def test_find_gain_uncontrollable():
    nndm = Nndm(linear_model([[1.0]], [[0.0]]), 1.0, 1, 1)
    gain = find_feedback_gain(nndm, BoxSet.around(np.zeros(2), 1.0))
    assert not gain.accepted


def test_find_gain_dubins(dubins_model):
    center = np.concatenate([DEMO_X0, DEMO_INPUT])
    radius = np.concatenate([np.full(3, DEMO_STATE_RADIUS), np.full(2, 0.01)])
    gain = find_feedback_gain(dubins_model, BoxSet.around(center, radius))
    assert gain.accepted
    assert gain.radius_upper < 1 and gain.radius_lower < 1


def _demo_nominal(nndm, steps=10):
    us = np.tile(DEMO_INPUT, (steps, 1))
    return nominal_rollout(nndm, np.array(DEMO_X0), us), us


def test_feedback_reach_eps_zero_collapses(dubins_model):
    xs, us = _demo_nominal(dubins_model)
    G = np.array([[-0.5, 0.0, 0.0], [0.0, -0.5, -0.5]])
    for symbolic in (True, False):
        for r, x in zip(feedback_reach(dubins_model, G, xs, us, 0.0, symbolic=symbolic), xs[1:]):
            assert r.box.contains(x, atol=1e-12)
            assert np.all(r.box.width <= 1e-6)


def test_feedback_reach_g0_plain_is_stepwise_open_loop(dubins_model):
    xs, us = _demo_nominal(dubins_model)
    got = feedback_reach(dubins_model, np.zeros((2, 3)), xs, us, 0.01, symbolic=False)
    box = BoxSet.point(xs[0])
    for r, u in zip(got, us):
        box = symbolic_bounds_step(dubins_model, box.product(BoxSet.around(u, 0.01))).concretize()
        assert np.allclose(r.box.lower, box.lower, atol=1e-12)
        assert np.allclose(r.box.upper, box.upper, atol=1e-12)


def test_feedback_reach_g0_symbolic_is_reach_function(dubins_model):
    xs, us = _demo_nominal(dubins_model)
    got = feedback_reach(dubins_model, np.zeros((2, 3)), xs, us, 0.01)
    ref = reach_function(dubins_model, xs[0], us, 0.01)
    for a, b in zip(got, ref):
        assert np.allclose(a.box.lower, b.box.lower, atol=1e-12)
        assert np.allclose(a.box.upper, b.box.upper, atol=1e-12)


def test_feedback_reach_negative_eps(dubins_model):
    xs, us = _demo_nominal(dubins_model, 2)
    with pytest.raises(ValueError):
        feedback_reach(dubins_model, np.zeros((2, 3)), xs, us, -1.0)


@pytest.mark.parametrize("symbolic", [True, False])
def test_feedback_reach_monte_carlo(dubins_model, symbolic):
    rng = np.random.default_rng(2)
    xs, us = _demo_nominal(dubins_model, 12)
    center = np.concatenate([DEMO_X0, DEMO_INPUT])
    radius = np.concatenate([np.full(3, DEMO_STATE_RADIUS), np.full(2, 0.01)])
    G = find_feedback_gain(dubins_model, BoxSet.around(center, radius)).G
    boxes = feedback_reach(dubins_model, G, xs, us, 0.01, symbolic=symbolic)
    X = np.tile(xs[0], (5000, 1))
    for k, r in enumerate(boxes):
        U = us[k] + (X - xs[k]) @ G.T + rng.uniform(-0.01, 0.01, size=(5000, 2))
        X = nndm_step_batch(dubins_model, X, U)
        assert np.all(X >= r.box.lower - 1e-9) and np.all(X <= r.box.upper + 1e-9)

