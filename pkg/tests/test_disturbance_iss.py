import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedamp import damping_maps as dm
from wavedamp.disturbance_iss import (
    DecayTag,
    Disturbance,
    check_Dp,
    comparison_system,
    evolve_disturbed,
    gain,
    iss_check,
    kinfty_minorant,
    minorant_for,
    reduce_disturbance,
    sample_mu,
    verify_perturbation_rejection,
)
from wavedamp.errors import ConditionNotCertified, NotStrictDamping
from wavedamp.riemann_core import INF, SimpleProfile, evolve

SQRT2 = math.sqrt(2.0)
HALF = dm.linear_map(0.5)
PULSE = Disturbance.from_rows([(0.0, 2.0, 1.0, 0.0)])
NORMS = (1.0, 2.0, INF)


def _random_disturbance(rng, support=12.0, pieces=6, scale=0.5):
    cuts = np.sort(rng.uniform(0.0, support, pieces - 1))
    times = np.unique(np.concatenate([[0.0], cuts, [support]]))
    return Disturbance.piecewise(times, rng.uniform(-scale, scale, (len(times) - 1, 2)))


# -- decay tags ---------------------------------------------------------------------


def test_decay_tag_parse():
    tag = DecayTag.parse("geometric:0.5,3")
    assert (tag.kind, tag.rate, tag.amplitude) == ("geometric", 0.5, 3.0)
    assert DecayTag.parse(None).kind == "unknown"
    assert DecayTag.parse("polynomial:2").amplitude == 1.0
    with pytest.raises(ValueError):
        DecayTag.parse("geometric")
    with pytest.raises(ValueError):
        DecayTag("sometimes")


@pytest.mark.parametrize("rate, N", [(0.3, 0), (1.0, 5), (0.05, 40)])
def test_geometric_tail_is_the_series_sum(rate, N):
    direct = math.fsum(2.0 * math.exp(-2 * rate * n) for n in range(N + 1, N + 2000))
    assert DecayTag("geometric", rate, 2.0).tail_sup(N) == pytest.approx(direct, rel=1e-12)


def test_polynomial_tail_bounds_the_series():
    tag = DecayTag("polynomial", 3.0)
    N = 4
    direct = math.fsum((1 + 2 * n - 1) ** -3.0 for n in range(N + 1, 100_000))
    assert direct <= tag.tail_sup(N)
    assert DecayTag("polynomial", 1.0).tail_sup(N) == math.inf


# -- windows ------------------------------------------------------------------------


def test_zero_disturbance_windows():
    for w in reduce_disturbance(Disturbance.zero(), 5):
        assert w.is_zero and w.norm(2.0) == 0.0


def test_pulse_rotates_onto_first_window():
    w = reduce_disturbance(PULSE, 4)
    assert np.array_equal(w[0].first.breakpoints, [-1.0, 1.0])
    assert w[0].first.values[0] == pytest.approx(1 / SQRT2, rel=1e-15)
    assert w[0].second.values[0] == pytest.approx(-1 / SQRT2, rel=1e-15)
    assert all(x.is_zero for x in w[1:])


def test_window_offsets():
    # a pulse on (3, 4] lands in the second window at s in (0, 1]
    w = Disturbance.from_rows([(3.0, 4.0, 0.0, SQRT2)]).window(1)
    assert np.array_equal(w.first.breakpoints, [-1.0, 0.0, 1.0])
    assert w.first.values == pytest.approx([0.0, 1.0])
    assert w.second.values == pytest.approx([0.0, 1.0])


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_support_bound_zeroes_later_windows(k, seed):
    rng = np.random.default_rng(seed)
    d = _random_disturbance(rng, support=2.0 * k)
    windows = reduce_disturbance(d, k + 3)
    assert all(w.is_zero for w in windows[k:])


def test_closed_form_sampling():
    d = Disturbance.closed_form(lambda t: (t, 0.0), support_bound=4.0, resolution=4)
    w = d.window(0)
    mids = np.linspace(-1.0, 1.0, 9)[:-1] + 0.125
    assert w.first.values * SQRT2 == pytest.approx(mids + 1.0, rel=1e-14)
    assert d.window(2).is_zero and d.decay.kind == "compact"


def test_rows_and_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t_start,t_end,d1,d2\n0,1,1,2\n3,4,0,-1\n")
    d = Disturbance.from_csv(str(path))
    assert d.name == "d.csv" and d.support_bound == 4.0
    assert d(0.5) == (1.0, 2.0) and d(2.0) == (0.0, 0.0) and d(3.5) == (0.0, -1.0)
    with pytest.raises(ValueError):
        Disturbance.from_rows([(0, 2, 1, 0), (1, 3, 1, 0)])
    with pytest.raises(ValueError):
        Disturbance.piecewise([0.0, 0.0], [[1.0, 0.0]])


def test_sup_norm():
    d = Disturbance.from_rows([(0.0, 1.0, 3.0, 4.0), (5.0, 6.0, 1.0, 0.0)])
    assert d.sup_norm(4) == pytest.approx(5.0, rel=1e-15)


# -- summability --------------------------------------------------------------------


def test_pulse_is_summable_exactly():
    chk = check_Dp(PULSE, 2.0)
    assert chk.member and chk.exact and chk.tail_bound == 0.0
    assert chk.norm == pytest.approx(SQRT2, rel=1e-15)


def test_geometric_decay_is_summable():
    d = Disturbance.closed_form(lambda t: (2.0 ** -t, 0.0), decay=f"geometric:{math.log(2)}")
    chk = check_Dp(d, 2.0, N_tail=30)
    # sum over n of 2^-(s+2n+1) is (4/3) 2^-(s+1); its squared L2 norm on [-1, 1]
    exact = math.sqrt((16 / 9) * (15 / 16) / math.log(4.0))
    assert chk.member and not chk.exact
    assert chk.norm == pytest.approx(exact, rel=1e-3)
    assert chk.tail_bound < 1e-15


def test_constant_disturbance_is_not_summable():
    d = Disturbance.closed_form(lambda t: (1.0, 0.0), decay="none")
    assert check_Dp(d, 2.0, N_tail=20).member is False
    assert check_Dp(Disturbance.closed_form(lambda t: (1.0, 0.0)), 1.0, N_tail=5).member is None


def test_summability_needs_finite_p():
    with pytest.raises(ValueError):
        check_Dp(PULSE, INF)


# -- disturbed evolution ------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_disturbance_is_plain_evolution(seed):
    g0 = SimpleProfile.random(np.random.default_rng(seed), m=9, scale=3.0)
    for S in (HALF, dm.sign_map()):
        a = evolve(g0, S, 12, norms=NORMS)
        b = evolve_disturbed(g0, S, Disturbance.zero(), 12, norms=NORMS)
        assert np.array_equal(a.values, b.values)
        for p in NORMS:
            assert np.array_equal(a.norms[p], b.norms[p])


def test_single_window_by_hand():
    eps = 0.3
    g0 = SimpleProfile([-1.0, 0.0, 1.0], [1.0, -2.0])
    d = Disturbance.from_rows([(0.0, 2.0, SQRT2 * eps, 0.0)])
    traj = evolve_disturbed(g0, HALF, d, 2)
    # R(sqrt2 eps, 0) = (eps, -eps): shift by eps, halve, shift by -eps
    expect1 = (g0.values - eps) / 2.0 - eps
    assert traj.values[1] == pytest.approx(expect1, rel=1e-15)
    assert traj.values[2] == pytest.approx(expect1 / 2.0, rel=1e-15)


def test_disturbance_refines_the_lattice():
    g0 = SimpleProfile.constant(1.0)
    d = Disturbance.from_rows([(1.5, 2.0, 1.0, 1.0)])
    traj = evolve_disturbed(g0, HALF, d, 1)
    assert np.array_equal(traj.breakpoints, [-1.0, 0.5, 1.0])


# -- comparison functions -----------------------------------------------------------

RADII = np.geomspace(1e-3, 10.0, 60)


def test_half_contraction_minorant_is_exact():
    phi = kinfty_minorant(RADII, RADII / 2.0)
    assert np.array_equal(phi(RADII), RADII / 2.0)
    assert phi.tail_slope == 0.5 and phi.strictly_increasing and phi.convex


@st.composite
def _mu_table(draw):
    n = draw(st.integers(2, 40))
    steps = draw(st.lists(st.floats(1e-3, 2.0), min_size=n, max_size=n))
    fracs = draw(st.lists(st.floats(0.0, 0.99), min_size=n, max_size=n))
    r = np.cumsum(steps)
    return r, np.maximum.accumulate(r * np.array(fracs))


@settings(max_examples=200, deadline=None)
@given(_mu_table())
def test_minorant_properties(table):
    r, mu = table
    phi = kinfty_minorant(r, mu)
    vals = phi(r)
    assert np.all(vals > 0)
    assert np.all(vals <= r - mu)
    assert np.all(np.diff(phi.nodes - phi.values) >= 0)
    assert np.all(phi.slopes <= 1.0 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(_mu_table(), st.floats(0.0, 50.0))
def test_minorant_inverse(table, y):
    phi = kinfty_minorant(*table)
    x = phi.inverse(y)
    if math.isfinite(x):
        assert phi(x) == pytest.approx(y, abs=1e-9 * max(1.0, y))


def test_minorant_rejects_non_strict():
    with pytest.raises(NotStrictDamping):
        kinfty_minorant([0.5, 1.0, 2.0], [0.25, 1.0, 1.5])


def test_local_minorant_has_bounded_range():
    phi = kinfty_minorant(RADII, RADII / 2.0, local=True)
    assert phi.sup == 5.0 and phi.inverse(5.0) == math.inf


def test_comparison_halves():
    phi = kinfty_minorant(RADII, RADII / 2.0)
    k = comparison_system(1.0, [0.0] * 8, phi, p=1.0)
    assert np.array_equal(k, 0.5 ** np.arange(9))


@pytest.mark.parametrize("p", [1.0, 2.0, INF])
def test_gain_for_half_contraction(p):
    phi = kinfty_minorant(RADII, RADII / 2.0)
    assert gain(phi, p)(0.7) == pytest.approx(1.4, rel=1e-14)


def test_comparison_settles_at_gain():
    phi = kinfty_minorant(RADII, RADII / 2.0)
    k = comparison_system(5.0, [0.3] * 80, phi, p=2.0)
    assert k[-1] == pytest.approx(gain(phi, 2.0)(0.3), rel=1e-12)


def test_sampled_mu_of_half_contraction():
    samples = sample_mu(HALF, 4.0, count=30)
    # the lattice rounds mu up by at most one tenth of the smallest radius
    assert samples.strict and 0.5 <= samples.sector <= 0.55
    assert minorant_for(samples, 2.0).convex


@pytest.mark.parametrize("p", NORMS)
@pytest.mark.parametrize("seed", range(5))
def test_domination_by_comparison_system(p, seed):
    rng = np.random.default_rng(seed)
    g0 = SimpleProfile.random(rng, m=8, scale=2.0)
    d = _random_disturbance(rng)
    N = 30
    traj = evolve_disturbed(g0, HALF, d, N, norms=(p,))
    phi = minorant_for(sample_mu(HALF, 10.0), p)
    u = [2.0 * w.norm(p) for w in reduce_disturbance(d, N - 1)]
    k = comparison_system(traj.norm(0, p), u, phi, p)
    assert all(traj.norm(n, p) <= k[n] for n in range(N + 1))


# -- rejection and ISS --------------------------------------------------------------


def test_pulse_is_rejected():
    g0 = SimpleProfile.random(np.random.default_rng(1), m=8, scale=2.0)
    traj = evolve_disturbed(g0, HALF, PULSE, 40, norms=(2.0,))
    rep = verify_perturbation_rejection(traj, PULSE, 2.0)
    assert rep.condition == "summable translates"
    assert rep.predicted_horizon is not None and rep.reached
    assert traj.norm(rep.predicted_horizon, 2.0) < 1e-8
    assert rep.to_dict()["hits"]["1e-08"] is not None


def test_zero_disturbance_is_strong_stability():
    g0 = SimpleProfile.constant(1.0)
    traj = evolve(g0, HALF, 40, norms=(2.0,))
    rep = verify_perturbation_rejection(traj, Disturbance.zero(), 2.0)
    assert rep.condition == "reduces to strong stability" and rep.reached


def test_vanishing_disturbance_in_sup_norm():
    d = Disturbance.closed_form(lambda t: (1.0 / (1.0 + t), 0.0), decay="polynomial:1")
    g0 = SimpleProfile.constant(1.0)
    traj = evolve_disturbed(g0, HALF, d, 10, norms=(INF,))
    assert verify_perturbation_rejection(traj, d, INF).condition == "vanishing disturbance"


def test_persistent_disturbance_not_certified():
    d = Disturbance.closed_form(lambda t: (1.0, 0.0), decay="none")
    traj = evolve_disturbed(SimpleProfile.constant(1.0), HALF, d, 4, norms=(INF,))
    with pytest.raises(ConditionNotCertified):
        verify_perturbation_rejection(traj, d, INF)


def test_sign_map_not_certified():
    traj = evolve_disturbed(SimpleProfile.constant(0.5), dm.sign_map(), PULSE, 4, norms=(2.0,))
    with pytest.raises(ConditionNotCertified):
        verify_perturbation_rejection(traj, PULSE, 2.0)


@pytest.mark.parametrize("p", NORMS)
def test_small_iss_batch_holds(p):
    rng = np.random.default_rng(11)
    scenarios = [(SimpleProfile.random(rng, m=6, scale=2.0), _random_disturbance(rng))
                 for _ in range(6)]
    rep = iss_check(scenarios, HALF, p, N=40)
    assert rep.holds, rep.violations[:3]
    assert rep.to_dict()["holds"] is True


def test_iss_with_persistent_bounded_input():
    rng = np.random.default_rng(4)
    d = Disturbance.closed_form(lambda t: (0.2 * math.sin(t), 0.1), decay="none", resolution=8)
    scenarios = [(SimpleProfile.random(rng, m=6, scale=3.0), d) for _ in range(3)]
    rep = iss_check(scenarios, HALF, INF, N=40)
    assert rep.holds, rep.violations[:3]


def test_iss_rejects_sign_map():
    with pytest.raises(ConditionNotCertified):
        iss_check([(SimpleProfile.constant(0.5), PULSE)], dm.sign_map(), 2.0, N=5)


def test_local_variant_is_sup_norm_only():
    with pytest.raises(ValueError):
        iss_check([(SimpleProfile.constant(0.5), PULSE)], HALF, 2.0, N=5, local=True)
