"""Unit and property tests for the simplex projection family."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnorm.errors import InvalidInputError
from ssnorm.simplex import (DEGENERATE_TOL, ProjectionResult, RadiusSchedule,
                            SimplexGeometry, Stage, argmax_onehot,
                            is_smooth_point, recursion_signature,
                            schedule_radius, softmax, sparsemax,
                            sparsemax_jacobian, sparsestmax, sparsestmax_vjp,
                            validate_prob_vector)

finite_floats = st.floats(min_value=-10.0, max_value=10.0,
                          allow_nan=False, allow_infinity=False)


def logits_strategy(min_k=2, max_k=6):
    return st.integers(min_k, max_k).flatmap(
        lambda k: st.lists(finite_floats, min_size=k, max_size=k))


# ---------------------------------------------------------------- sparsemax

def test_sparsemax_known_value_exact():
    p = sparsemax([0.8, 0.6, 0.1])
    assert np.max(np.abs(p - np.array([0.6, 0.4, 0.0]))) <= 1e-12


def test_sparsemax_identity_on_simplex_interior():
    z = np.array([0.5, 0.3, 0.2])
    assert np.allclose(sparsemax(z), z, atol=1e-15)


def test_sparsemax_matches_brute_force_projection():
    # Independent oracle: minimize ||p - z||^2 over a fine simplex grid.
    rng = np.random.default_rng(7)
    g = 400
    i, j = np.meshgrid(np.arange(g + 1), np.arange(g + 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    keep = i + j <= g
    pts = np.stack([i[keep], j[keep], g - i[keep] - j[keep]], axis=1) / g
    for _ in range(50):
        z = rng.normal(size=3)
        p = sparsemax(z)
        best = pts[np.argmin(((pts - z) ** 2).sum(axis=1))]
        assert np.max(np.abs(p - best)) <= 2.0 / g


@settings(max_examples=200, deadline=None)
@given(logits_strategy())
def test_sparsemax_is_simplex_member(z):
    p = sparsemax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert p.min() >= 0.0


@settings(max_examples=100, deadline=None)
@given(logits_strategy(), finite_floats)
def test_sparsemax_shift_invariant(z, c):
    assert np.allclose(sparsemax(z), sparsemax(np.asarray(z) + c), atol=1e-9)


def test_sparsemax_jacobian_structure():
    z = np.array([0.8, 0.6, 0.1])
    jac = sparsemax_jacobian(z)
    expected = np.array([[0.5, -0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 0.0]])
    assert np.max(np.abs(jac - expected)) <= 1e-15


def test_sparsemax_jacobian_finite_difference():
    rng = np.random.default_rng(3)
    eps = 1e-6
    checked = 0
    while checked < 50:
        z = rng.normal(size=4)
        p = sparsemax(z)
        # Skip support boundaries where the map is not differentiable.
        if np.any((p > 0) & (p < 1e-4)):
            continue
        jac = sparsemax_jacobian(z)
        for i in range(4):
            zp, zm = z.copy(), z.copy()
            zp[i] += eps
            zm[i] -= eps
            col = (sparsemax(zp) - sparsemax(zm)) / (2 * eps)
            assert np.max(np.abs(col - jac[:, i])) <= 1e-6
        checked += 1


def test_softmax_positive_and_normalized():
    p = softmax([3.0, -1.0, 0.5])
    assert abs(p.sum() - 1.0) <= 1e-12
    assert p.min() > 0.0


# ----------------------------------------------------------------- geometry

def test_geometry_radii():
    g3 = SimplexGeometry(3)
    assert g3.r_inscribed == pytest.approx(math.sqrt(6) / 6, abs=1e-15)
    assert g3.r_circum == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-15)
    g4 = SimplexGeometry(4)
    assert g4.r_circum == pytest.approx(math.sqrt(0.75), abs=1e-15)
    with pytest.raises(InvalidInputError):
        SimplexGeometry(1)


def test_schedule_linear_then_clamped():
    geom = SimplexGeometry(3)
    s = RadiusSchedule(total_steps=100, clamp_at=geom.r_circum)
    values = [schedule_radius(s, t) for t in range(101)]
    assert values[0] == 0.0
    assert all(b >= a for a, b in zip(values, values[1:]))
    # Exactly linear before the clamp kicks in.
    for t, v in enumerate(values):
        assert v == min(geom.r_circum, t / 100)
    assert values[-1] == geom.r_circum


def test_schedule_inscribed_crossing_at_unit_41():
    geom = SimplexGeometry(3)
    s = RadiusSchedule(total_steps=100)
    crossing = next(t for t in range(101)
                    if schedule_radius(s, t) >= geom.r_inscribed)
    assert crossing == 41


def test_schedule_rejects_out_of_range_step():
    s = RadiusSchedule(total_steps=10)
    with pytest.raises(InvalidInputError):
        schedule_radius(s, -1)
    with pytest.raises(InvalidInputError):
        schedule_radius(s, 11)


# ------------------------------------------------------------- sparsestmax

def test_stage_sparsemax_when_constraint_inactive():
    res = sparsestmax([0.5, 0.3, 0.2], 0.15)
    assert res.stage == Stage.SPARSEMAX
    assert np.max(np.abs(res.p - np.array([0.5, 0.3, 0.2]))) <= 1e-15


def test_stage_circle_closed_form():
    z = np.array([0.5, 0.3, 0.2])
    r = 0.3
    u = np.full(3, 1.0 / 3.0)
    d = z - u
    expected = u + r * d / np.linalg.norm(d)
    res = sparsestmax(z, r)
    assert res.stage == Stage.CIRCLE
    assert np.max(np.abs(res.p - expected)) <= 1e-12


def test_stage_face_closed_form():
    # Radial push exits the simplex; the answer lies on the 2-point face
    # with the radius transferred by Pythagoras.
    z = np.array([0.5, 0.3, 0.2])
    r = 0.6
    u_face = np.array([0.5, 0.5, 0.0])
    r_face = math.sqrt(r ** 2 - 1.0 / 6.0)
    expected = u_face + r_face * np.array([1.0, -1.0, 0.0]) / math.sqrt(2)
    res = sparsestmax(z, r)
    assert res.stage == Stage.FACE
    assert np.max(np.abs(res.p - expected)) <= 1e-12
    assert list(res.support) == [0, 1]


def test_stage_vertex_exact_one_hot():
    geom = SimplexGeometry(3)
    res = sparsestmax([0.5, 0.3, 0.2], geom.r_circum)
    assert res.stage == Stage.VERTEX
    assert list(res.p) == [1.0, 0.0, 0.0]
    # Radius past the circumradius clamps to the same answer.
    res2 = sparsestmax([0.5, 0.3, 0.2], 5.0)
    assert list(res2.p) == [1.0, 0.0, 0.0]


def test_vertex_gradient_is_zero():
    geom = SimplexGeometry(3)
    res = sparsestmax([0.5, 0.3, 0.2], geom.r_circum)
    g = sparsestmax_vjp(res, np.array([1.0, -2.0, 3.0]))
    assert list(g) == [0.0, 0.0, 0.0]


def test_degenerate_center_input_deterministic():
    # Uniform logits sit exactly on the center: deterministic lowest-index
    # argmax fallback, zero gradient.
    z = np.full(3, 1.0)
    res = sparsestmax(z, 0.2)
    u = np.full(3, 1.0 / 3.0)
    expected = u + 0.2 * (np.array([1.0, 0.0, 0.0]) - u) / np.linalg.norm(
        np.array([1.0, 0.0, 0.0]) - u)
    assert np.max(np.abs(res.p - expected)) <= 1e-12
    g = sparsestmax_vjp(res, np.array([0.3, -0.7, 1.1]))
    assert np.max(np.abs(g)) == 0.0


def test_invalid_inputs_rejected():
    with pytest.raises(InvalidInputError):
        sparsestmax([1.0], 0.1)
    with pytest.raises(InvalidInputError):
        sparsestmax([1.0, 2.0, np.nan], 0.1)
    with pytest.raises(InvalidInputError):
        sparsestmax([1.0, 2.0], -0.1)
    with pytest.raises(InvalidInputError):
        sparsestmax([1.0, 2.0], np.inf)
    with pytest.raises(InvalidInputError):
        sparsestmax([1.0, 2.0, 3.0], 0.1, geometry=SimplexGeometry(4))


@settings(max_examples=300, deadline=None)
@given(logits_strategy(), st.floats(0.0, 1.5, allow_nan=False))
def test_output_is_simplex_member(z, r):
    p = sparsestmax(z, r).p
    assert abs(p.sum() - 1.0) <= 1e-9
    assert p.min() >= 0.0
    validate_prob_vector(p / p.sum())


@settings(max_examples=300, deadline=None)
@given(logits_strategy(), st.floats(0.0, 1.5, allow_nan=False))
def test_radius_constraint_satisfied(z, r):
    k = len(z)
    geom = SimplexGeometry(k)
    r_eff = min(r, geom.r_circum)
    p = sparsestmax(z, r, geom).p
    assert np.linalg.norm(p - geom.center) >= r_eff - 1e-9


@settings(max_examples=200, deadline=None)
@given(logits_strategy(), st.floats(0.0, 1.0, allow_nan=False))
def test_deterministic_replay_bitwise(z, r):
    a = sparsestmax(z, r)
    b = sparsestmax(z, r)
    assert a.p.tobytes() == b.p.tobytes()
    assert a.stage == b.stage


@settings(max_examples=200, deadline=None)
@given(logits_strategy(3, 5), st.floats(0.01, 0.8, allow_nan=False),
       st.randoms(use_true_random=False))
def test_permutation_equivariance(z, r, rnd):
    z = np.asarray(z)
    # Ties are resolved by index and are not permutation-equivariant.
    if np.min(np.diff(np.sort(z))) < 1e-6:
        return
    perm = list(range(len(z)))
    rnd.shuffle(perm)
    perm = np.array(perm)
    a = sparsestmax(z, r).p[perm]
    b = sparsestmax(z[perm], r).p
    assert np.max(np.abs(a - b)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(logits_strategy(3, 6), st.floats(0.0, 1.0, allow_nan=False))
def test_recursion_depth_and_shrinking_faces(z, r):
    res = sparsestmax(z, r)
    k = len(z)
    assert len(res.levels) <= k
    # Each recursion moves to a strictly smaller face of the simplex.
    faces = [int(np.count_nonzero(lv.u > 0.0)) for lv in res.levels]
    assert all(b < a for a, b in zip(faces, faces[1:])) or \
        res.stage == Stage.VERTEX


@settings(max_examples=150, deadline=None)
@given(logits_strategy(3, 4), st.floats(0.05, 0.8, allow_nan=False))
def test_support_monotone_in_radius(z, r):
    # Growing the radius never re-activates a zeroed component's complement:
    # the support never grows with r.
    small = sparsestmax(z, r)
    large = sparsestmax(z, min(r + 0.1, SimplexGeometry(len(z)).r_circum))
    assert set(large.support.tolist()) <= set(small.support.tolist()) or \
        small.stage == Stage.SPARSEMAX


def test_zero_r_reduces_to_sparsemax():
    rng = np.random.default_rng(11)
    for _ in range(50):
        z = rng.normal(size=4)
        res = sparsestmax(z, 0.0)
        assert res.stage == Stage.SPARSEMAX
        assert res.p.tobytes() == sparsemax(z).tobytes()


# --------------------------------------------------------------- gradients

def _fd_grad(z, r, g, eps=1e-6):
    k = z.size
    fd = np.empty(k)
    for i in range(k):
        zp, zm = z.copy(), z.copy()
        zp[i] += eps
        zm[i] -= eps
        fd[i] = (g @ sparsestmax(zp, r).p - g @ sparsestmax(zm, r).p) / (2 * eps)
    return fd


@pytest.mark.parametrize("k", [3, 4, 5])
def test_vjp_matches_finite_differences(k):
    rng = np.random.default_rng(100 + k)
    geom = SimplexGeometry(k)
    done = 0
    while done < 60:
        z = rng.normal(size=k)
        r = rng.uniform(0.05, 0.9 * geom.r_circum)
        if not is_smooth_point(z, r, geom):
            continue
        g = rng.normal(size=k)
        analytic = sparsestmax_vjp(sparsestmax(z, r, geom), g)
        fd = _fd_grad(z, r, g)
        denom = max(np.linalg.norm(fd), np.linalg.norm(analytic), 1e-3)
        assert np.linalg.norm(analytic - fd) <= 1e-5 * denom
        done += 1


def test_vjp_zero_columns_for_zeroed_components():
    # d p / d z_j vanishes whenever the output zeroes component j; the VJP
    # therefore returns exact zeros at those positions.
    rng = np.random.default_rng(21)
    found = 0
    while found < 40:
        z = rng.normal(size=4)
        r = rng.uniform(0.3, 0.8)
        res = sparsestmax(z, r)
        zeroed = np.flatnonzero(res.p == 0.0)
        if zeroed.size == 0:
            continue
        g = rng.normal(size=4)
        grad = sparsestmax_vjp(res, g)
        assert all(grad[j] == 0.0 for j in zeroed)
        if is_smooth_point(z, r):
            fd = _fd_grad(z, r, g)
            assert all(abs(fd[j]) <= 1e-7 for j in zeroed)
        found += 1


def test_vjp_null_direction_on_circle():
    # While the radial push is active at the top level, the gradient has no
    # component along the push direction p0 - u.
    rng = np.random.default_rng(33)
    found = 0
    while found < 100:
        z = rng.normal(size=3) * 0.3
        r = rng.uniform(0.1, 0.6)
        res = sparsestmax(z, r)
        if res.stage != Stage.CIRCLE:
            continue
        lv = res.levels[0]
        g = rng.normal(size=3)
        grad = sparsestmax_vjp(res, g)
        assert abs(grad @ (lv.p_sm - lv.u)) <= 1e-8
        found += 1


def test_vjp_rejects_bad_upstream():
    res = sparsestmax([0.5, 0.3, 0.2], 0.3)
    with pytest.raises(InvalidInputError):
        sparsestmax_vjp(res, np.array([1.0, 2.0]))
    with pytest.raises(InvalidInputError):
        sparsestmax_vjp(res, np.array([1.0, np.nan, 0.0]))


# ------------------------------------------------------------------ helpers

def test_argmax_onehot_ties_to_lowest_index():
    assert list(argmax_onehot([0.4, 0.4, 0.2])) == [1.0, 0.0, 0.0]
    with pytest.raises(InvalidInputError):
        argmax_onehot([0.5, 0.2])


def test_validate_prob_vector_clamps_tiny_negatives():
    p = validate_prob_vector([1.0 + 1e-13, -1e-13])
    assert p[1] == 0.0
    with pytest.raises(InvalidInputError):
        validate_prob_vector([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        validate_prob_vector([1.1, -0.1])


def test_recursion_signature_distinguishes_stages():
    a = recursion_signature(sparsestmax([0.5, 0.3, 0.2], 0.3))
    b = recursion_signature(sparsestmax([0.5, 0.3, 0.2], 0.6))
    assert a != b
