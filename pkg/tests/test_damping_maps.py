import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedamp import damping_maps as dm
from wavedamp.errors import BranchOverflow, EmptyValueSet, InversionFailure

SQRT2 = math.sqrt(2.0)
ROUND_TRIP_TOL = 1e-10
IDENTITY_TOL = 1e-10


def _linear_graph(alpha):
    return dm.rotate_relation(dm.FunctionGraph(sigma=lambda x: alpha * x))


def _explicit(func):
    return dm.rotate_relation(dm.ExplicitRotated(func=func))


# -- rotation -----------------------------------------------------------------


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_rotation_round_trip(x, y):
    u, v = dm.rotate(x, y)
    bx, by = dm.rotate_back(u, v)
    assert bx == pytest.approx(x, abs=1e-9)
    assert by == pytest.approx(y, abs=1e-9)


def test_rotation_turns_diagonal_onto_axis():
    assert dm.rotate(1.0, 1.0) == pytest.approx((SQRT2, 0.0))
    assert dm.rotate(1.0, -1.0) == pytest.approx((0.0, -SQRT2))


# -- rotate_relation ------------------------------------------------------------


def test_neumann_graph_sends_one_to_minus_one():
    S = dm.rotate_relation(dm.FunctionGraph(sigma=lambda x: 0.0 * x))
    assert S(1.0) == pytest.approx((-1.0,), abs=1e-12)


def test_identity_graph_gives_zero_map():
    S = dm.rotate_relation(dm.FunctionGraph(sigma=lambda x: x))
    assert S(0.7) == pytest.approx((0.0,), abs=1e-12)


def test_linear_graph_slope_three():
    assert _linear_graph(3.0)(1.0) == pytest.approx((0.5,), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-5.0, 5.0))
def test_linear_graph_matches_hand_solution(alpha, u):
    # sigma((u - y)/sqrt2) = (u + y)/sqrt2 solved by hand for sigma = alpha x
    expected = (alpha - 1.0) / (alpha + 1.0) * u
    (y,) = _linear_graph(alpha)(u)
    assert y == pytest.approx(expected, abs=1e-11)


@settings(max_examples=30, deadline=None)
@given(st.floats(-4.0, 4.0))
def test_function_graph_round_trip(u):
    sigma = lambda x: x + x ** 3 / 3.0  # noqa: E731
    S = dm.rotate_relation(dm.FunctionGraph(sigma=sigma))
    for v in S(u):
        x, y = dm.rotate_back(u, v)
        assert abs(y - sigma(x)) <= ROUND_TRIP_TOL * max(1.0, abs(y))


@settings(max_examples=30, deadline=None)
@given(st.floats(-8.0, 8.0))
def test_function_graph_damping_never_grows(u):
    S = dm.rotate_relation(dm.FunctionGraph(sigma=lambda x: np.minimum(0.0, x)))
    for v in S(u):
        assert abs(v) <= abs(u) + 1e-12


def test_sign_graph_uses_closed_form():
    S = dm.sign_map()
    assert S(0.3) == (0.3,)
    assert S(2.0) == (0.0,)
    assert S(-3.5) == (1.5,)


def test_branch_overflow_is_reported():
    S = dm.RotatedMap(lambda x: (x, -x, 0.5 * x), branch_count_bound=2)
    with pytest.raises(BranchOverflow):
        S(1.0)


# -- selection -------------------------------------------------------------------


def test_sign_map_selection_at_two():
    for policy in (dm.SelectionPolicy.MinAbs(), dm.SelectionPolicy.MaxAbs(), dm.SelectionPolicy.Seeded(4)):
        assert dm.eval_selected(dm.sign_map(), 2.0, policy) == 0.0


def test_min_abs_picks_smaller_branch():
    S = _explicit(lambda x: (-x, x / 2))
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.MinAbs()) == 0.5
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.MaxAbs()) == -1.0


def test_ties_resolve_to_nonnegative():
    S = _explicit(lambda x: (-x, x))
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.MinAbs()) == 1.0
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.MaxAbs()) == 1.0


def test_fixed_branch_clamps_index():
    S = _explicit(lambda x: (-x, x / 2))
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.FixedBranch(0)) == -1.0
    assert dm.eval_selected(S, 1.0, dm.SelectionPolicy.FixedBranch(7)) == 0.5


@pytest.mark.parametrize("name", sorted(dm.shipped_maps()))
def test_zero_is_fixed(name):
    S = dm.shipped_maps()[name]
    for policy in (dm.SelectionPolicy.MinAbs(), dm.SelectionPolicy.MaxAbs(), dm.SelectionPolicy.Seeded(1)):
        assert dm.eval_selected(S, 0.0, policy) == 0.0


def test_empty_value_set():
    S = _explicit(lambda x: ())
    with pytest.raises(EmptyValueSet):
        dm.eval_selected(S, 1.0)


def test_seeded_policy_is_deterministic():
    S = dm.rotate_relation(dm.saturation_band(1.0))
    xs = np.linspace(-5, 5, 101)
    a = dm.apply_selected(S, xs, dm.SelectionPolicy.Seeded(11))
    b = dm.apply_selected(S, xs, dm.SelectionPolicy.Seeded(11))
    c = np.array([dm.eval_selected(S, float(x), dm.SelectionPolicy.Seeded(11)) for x in xs])
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_vectorized_pair_agrees_with_scalar_selection():
    S = dm.rotate_relation(dm.saturation_band(1.0))
    xs = np.linspace(-4, 4, 81)
    for policy in (dm.SelectionPolicy.MinAbs(), dm.SelectionPolicy.MaxAbs(), dm.SelectionPolicy.FixedBranch(1)):
        fast = dm.apply_selected(S, xs, policy)
        slow = np.array([dm.eval_selected(S, float(x), policy) for x in xs])
        assert np.allclose(fast, slow, atol=1e-12)


# -- iteration and composition ---------------------------------------------------


def test_iterate_sign_map():
    assert dm.iterate_map(dm.sign_map(), 3.0, 4) == [3.0, -1.0, -1.0, -1.0, -1.0]


def test_iterate_zero_map():
    assert dm.iterate_map(dm.zero_map(), 5.0, 2) == [5.0, 0.0, 0.0]


def test_iterate_half():
    assert dm.iterate_map(dm.linear_map(0.5), 1.0, 3) == [1.0, 0.5, 0.25, 0.125]


def test_iterate_rejects_negative_length():
    with pytest.raises(ValueError):
        dm.iterate_map(dm.linear_map(0.5), 1.0, -1)


@given(st.floats(-10, 10))
def test_compose_with_identity_negates(x):
    S = dm.linear_map(0.5)
    C = dm.compose_negated(dm.identity_map(), S)
    assert C(x) == (-S(-x)[0],)


def test_compose_hand_example():
    C = dm.compose_negated(_explicit(lambda x: (-x,)), _explicit(lambda y: (y / 2,)))
    assert C(1.0) == (-0.5,)


def test_compose_zero_maps():
    C = dm.compose_negated(dm.zero_map(), dm.zero_map())
    assert C(3.0) == (0.0,)
    assert np.all(C.vectorized(np.linspace(-2, 2, 9)) == 0.0)


def test_compose_expands_branches():
    two = _explicit(lambda x: (x / 2, -x / 4))
    C = dm.compose_negated(two, two)
    # hand enumeration: S0(1) = {1/2, -1/4}, then S1 at -1/2 and 1/4, negated
    assert C(1.0) == (-0.125, 0.0625, 0.25)


# -- envelopes ---------------------------------------------------------------------


def test_rho_sign_map():
    assert dm.rho(dm.sign_map(), 0.5) == pytest.approx(0.5)


def test_rho_half():
    assert dm.rho(dm.linear_map(0.5), 1.0) == pytest.approx(0.25, abs=1e-3)


def test_mu_half():
    assert dm.mu(dm.linear_map(0.5), 2.0) == pytest.approx(1.0, abs=1e-3)


def test_mu_sign_map_saturates_at_one():
    # |S| equals |x| on [-1, 1] and |2 - |x|| <= 1 on 1 <= |x| <= 3
    xs = np.linspace(-3, 3, 60001)
    oracle = float(np.max(np.abs(np.where(np.abs(xs) <= 1, xs, np.sign(xs) * 2 - xs))))
    assert dm.mu(dm.sign_map(), 3.0) == pytest.approx(oracle, abs=1e-3)
    assert oracle == pytest.approx(1.0)


@pytest.mark.parametrize("name", sorted(dm.shipped_maps()))
def test_envelopes_vanish_at_zero(name):
    S = dm.shipped_maps()[name]
    assert dm.rho(S, 0.0) == 0.0
    assert dm.mu(S, 0.0) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.sampled_from(["sign", "linear:0.5", "saturation", "neumann"]))
def test_envelopes_bounded_and_monotone(r1, r2, name):
    S = dm.shipped_maps()[name]
    lo, hi = sorted((r1, r2))
    for env in (dm.rho, dm.mu):
        a, b = env(S, lo, step=1e-2), env(S, hi, step=1e-2)
        assert a <= lo and b <= hi
        assert a <= b


def test_mu_table_matches_pointwise():
    S = dm.sign_map()
    radii = np.array([0.1, 0.5, 1.0, 2.0, 3.0])
    table = dm.mu_table(S, radii, step=1e-3)
    assert np.allclose(table, [dm.mu(S, r, step=1e-3) for r in radii], atol=2e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3.0, 3.0), st.integers(0, 8), st.integers(0, 3))
def test_iterates_stay_below_rho_envelope(x0, n, seed):
    S = dm.rotate_relation(dm.saturation_band(1.0))
    step = 1e-2
    seq = dm.iterate_map(S, x0, n, dm.SelectionPolicy.Seeded(seed))
    bound = abs(x0)
    for _ in range(n // 2):
        bound = dm.rho(S, bound, step=step) + step
    assert abs(seq[-1]) <= bound + 1e-12


# -- rate functions ---------------------------------------------------------------


def test_Q_of_half_law():
    assert dm.q_to_Q(lambda s: s / 2, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_Q_at_zero():
    assert dm.q_to_Q(lambda s: s / 2, 0.0) == 0.0


def test_Q_derivative_at_zero():
    q = lambda s: s / 2 + s * s  # noqa: E731
    h = 1e-6
    assert dm.q_to_Q(q, h) / h == pytest.approx(1.0 / 3.0, abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 0.5))
def test_Q_defining_identity(x):
    q = lambda s: s / 2 + s * s  # noqa: E731
    Qx = dm.q_to_Q(q, x)
    y = (SQRT2 * x + SQRT2 * Qx) / 2
    assert abs(SQRT2 * x - (q(y) + y)) <= IDENTITY_TOL


def test_inversion_failure_when_not_increasing():
    with pytest.raises(InversionFailure):
        dm.invert_q_plus_id(lambda s: -2 * s, 1.0)


# -- single-valuedness and hypotheses --------------------------------------------


def test_single_valued_identity():
    assert dm.check_single_valued(lambda x: x).ok


def test_single_valued_fails_for_minus_identity():
    res = dm.check_single_valued(lambda x: -x)
    assert not res.ok and res.witness is not None


def test_single_valued_decreasing_sum_is_monotone():
    assert dm.check_single_valued(lambda x: -2 * x).ok
    S = dm.rotate_relation(dm.FunctionGraph(sigma=lambda x: -2 * x))
    assert len(S(1.0)) == 1


def test_hypotheses_linear_graph():
    rep = dm.check_hypotheses(dm.FunctionGraph(sigma=lambda x: x), samples=201)
    assert rep["H4"].satisfied and rep["H4'"].satisfied
    for key in ("H7", "H8"):
        assert rep[key].satisfied
        assert rep[key].constants["a"] == pytest.approx(1.0)
        assert rep[key].constants["b"] == pytest.approx(1.0)


def test_hypotheses_sign_graph():
    rep = dm.check_hypotheses(dm.SignGraph(M=SQRT2), samples=201)
    assert rep["H4"].satisfied
    assert rep["H4'"].violated
    x, y = rep["H4'"].witness
    assert x == 0.0 and y != 0.0


def test_hypotheses_min_zero_graph():
    rep = dm.check_hypotheses(dm.FunctionGraph(sigma=lambda x: np.minimum(0.0, x)), samples=201)
    assert rep["H4"].satisfied
    assert rep["H4'"].violated
    x, y = rep["H4'"].witness
    assert x > 0 and y == 0.0


def test_hypotheses_without_rate_are_not_applicable():
    rep = dm.check_hypotheses(dm.FunctionGraph(sigma=lambda x: x), samples=101)
    assert rep["H10"].status == dm.NA


def test_violations_always_carry_witnesses():
    for rel in (dm.SignGraph(), dm.FunctionGraph(sigma=lambda x: -x), dm.saturation_band(1.0)):
        rep = dm.check_hypotheses(rel, samples=101, q=lambda s: s * s)
        for status in rep.to_dict().values():
            if status["status"] == dm.VIOL:
                assert status["witness"] is not None


def test_band_rejects_crossed_bounds():
    with pytest.raises(ValueError):
        dm.SectorBand(lower=lambda x: 1.0, upper=lambda x: 0.0)
