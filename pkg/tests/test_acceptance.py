"""End-to-end acceptance checks, one test per criterion.

Each test times its own workload against a budget; the terminal summary
prints one pass/fail line per criterion.
"""

import math
import time

import numpy as np

from wavedamp import damping_maps as dm
from wavedamp import decay_analysis as da
from wavedamp.cli import main, read_csv_table
from wavedamp.disturbance_iss import Disturbance, evolve_disturbed, iss_check, verify_perturbation_rejection
from wavedamp.riemann_core import (
    INF,
    InitialData,
    SimpleProfile,
    energy_at_time,
    energy_p,
    evolve,
    to_invariant,
)
from wavedamp.sign_map import limit_profile, settle_time, sign_iterate_closed_array, sign_S
from wavedamp.slow_convergence import SlowSpec, build_initial, verify_lower_bound

SQRT2 = math.sqrt(2.0)
HALF = dm.linear_map(0.5)


class Clock:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False

    def check(self):
        assert self.elapsed < self.budget, f"took {self.elapsed:.2f} s, budget {self.budget} s"


# -- 1 ------------------------------------------------------------------------------


def _state_norm(data, p):
    # written cell by cell from the state-space norm
    u, v, w = data.z0_prime.values, data.z1.values, np.diff(data.breakpoints)
    if p == INF:
        return max(max(abs(a + b), abs(a - b)) for a, b in zip(u, v)) / SQRT2
    total = math.fsum((abs(a + b) ** p + abs(a - b) ** p) * h for a, b, h in zip(u, v, w))
    return (total / 2 ** (p / 2)) ** (1 / p)


def test_criterion_01_isometry():
    rng = np.random.default_rng(1)
    data = []
    for _ in range(200):
        m = int(rng.integers(1, 12))
        cuts = np.unique(np.concatenate([[0.0], rng.uniform(0, 1, m - 1), [1.0]]))
        k = len(cuts) - 1
        data.append(InitialData(SimpleProfile(cuts, rng.normal(size=k) * 10 ** rng.uniform(-3, 3)),
                                SimpleProfile(cuts, rng.normal(size=k))))
    oracle = [[_state_norm(d, p) for p in (1.0, 2.0, 3.0, 10.0, INF)] for d in data]
    worst = 0.0
    with Clock(1.0) as clk:
        for d, refs in zip(data, oracle):
            g = to_invariant(d)
            for p, ref in zip((1.0, 2.0, 3.0, 10.0, INF), refs):
                worst = max(worst, abs(energy_p(g, p) - ref) / ref)
    clk.check()
    assert worst <= 1e-12


# -- 2 ------------------------------------------------------------------------------


def test_criterion_02_energy_monotonicity():
    rng = np.random.default_rng(2)
    grid = np.round(np.arange(0, 81) * 0.1, 10)
    policies = [dm.SelectionPolicy.MinAbs(), dm.SelectionPolicy.MaxAbs(), dm.SelectionPolicy.Seeded(7)]
    bad = []
    with Clock(5.0) as clk:
        for name, S in dm.shipped_maps().items():
            for i in range(50):
                g0 = SimpleProfile.random(rng, m=8, scale=3.0)
                traj = evolve(g0, S, 4, policies[i % 3], norms=(2.0,))
                e = [energy_at_time(traj, float(t), 2.0).value for t in grid]
                if any(b > a for a, b in zip(e, e[1:])):
                    bad.append((name, i))
    clk.check()
    assert not bad


# -- 3 ------------------------------------------------------------------------------


def test_criterion_03_sign_map_finite_time():
    rng = np.random.default_rng(3)
    S = dm.sign_map()
    dense = np.linspace(-10.0, 10.0, 20001)
    mismatches = []
    with Clock(2.0) as clk:
        for i in range(100):
            g0 = SimpleProfile.random(rng, m=int(rng.integers(1, 12)), scale=10.0)
            T = settle_time(g0)
            assert T == 2 * math.floor((np.max(np.abs(g0.values)) + 1) / 2)
            N = int(T // 2) + 3
            traj = evolve(g0, S, N, norms=(2.0,))
            lim = limit_profile(g0)
            for n in range(int(T // 2), N + 1):
                if not np.array_equal(traj.values[n], lim.values):
                    mismatches.append((i, n))
        x = dense.copy()
        for n in range(21):
            if not np.array_equal(sign_iterate_closed_array(dense, n), x):
                mismatches.append(("closed form", n))
            x = np.array([sign_S(float(v)) for v in x])
    clk.check()
    assert not mismatches


# -- 4 ------------------------------------------------------------------------------


def test_criterion_04_exponential_regime():
    q = da.polynomial_law([0.5, 1.0])
    with Clock(1.0) as clk:
        lam = da.lambda_rate(q)
        psi = da.psi_sum_check(q, lam)
        it = da.iterate_Q(q, 0.1, 10_000)
    clk.check()
    assert psi.converged
    assert abs(it.log_values[10_000] / 10_000 + math.log(3.0)) <= 1e-3
    scaled = np.exp(it.log_values[100:] + lam * np.arange(100, 10_001))
    C = max(scaled.max(), 1 / scaled.min())
    assert math.isfinite(C) and np.all((1 / C <= scaled) & (scaled <= C))
    # confined, not drifting: the spread over two decades of n is tiny
    assert scaled.max() / scaled.min() < 1.01


# -- 5 ------------------------------------------------------------------------------


def test_criterion_05_zero_derivative_regime():
    q = da.power_law(2.0)
    with Clock(1.0) as clk:
        eq = da.check_equiv_condition(q, 0.1)
        it = da.iterate_Q(q, 0.1, 10_000)
        ratio = it.values[10_000] / da.F_inverse(q, 0.1, 10_000)
    clk.check()
    assert eq.satisfied and eq.bound <= 1.0
    assert 0.98 <= ratio <= 1.02


# -- 6 ------------------------------------------------------------------------------


def test_criterion_06_logarithmic_leading_order():
    with Clock(2.0) as clk:
        fit = da.logpow_leading_order(1.0, 0.1, 100_000)
    clk.check()
    assert fit.params["alpha0"] == 2.0
    assert 1.98 <= fit.fitted_constant <= 2.02


# -- 7 ------------------------------------------------------------------------------


def test_criterion_07_super_exponential_regime():
    q = da.polynomial_law([1.0, -1.0])
    with Clock(1.0) as clk:
        par = da.superexp_params(q, x0=0.1)
        it = da.iterate_Q(q, 0.1, 30)
        slope = da.double_log_slope(it.log_values, 10, 30)
    clk.check()
    assert abs(slope - math.log(2.0)) <= 0.05 * math.log(2.0)
    assert par.bound_holds(it.log_values)
    assert all(lv <= par.log_bound(n) for n, lv in enumerate(it.log_values) if n >= par.n2)


# -- 8 ------------------------------------------------------------------------------


def test_criterion_08_slow_convergence():
    N = 200
    spec = SlowSpec(lambda t: 1.0 / (t + 2.0), p=2.0, C=2.0, K_max=9 * (N + 1) ** 2)
    maps = {"sign": dm.sign_map(), "band": dm.rotate_relation(dm.saturation_band(SQRT2))}
    policies = [dm.SelectionPolicy.MinAbs(), dm.SelectionPolicy.MaxAbs()]
    policies += [dm.SelectionPolicy.Seeded(s) for s in range(5)]
    failures = []
    with Clock(30.0) as clk:
        init = build_initial(spec)
        assert init.horizon >= N
        for name, S in maps.items():
            for pol in policies:
                traj = evolve(init.profile, S, N, pol, norms=(2.0,), keep_profiles=False,
                              exact_norms=False)
                rep = verify_lower_bound(traj, spec)
                if not rep.holds:
                    failures.append((name, pol.describe(), rep.first_violation))
                for n, v, f in rep.rows:
                    if not (1 <= n <= N and f == 1.0 / (2.0 * (n - 1) + 2.0) and v >= f):
                        failures.append((name, pol.describe(), n))
    clk.check()
    assert not failures


# -- 9 ------------------------------------------------------------------------------


def test_criterion_09_sector_bound():
    rng = np.random.default_rng(9)
    worst = 0.0
    with Clock(5.0) as clk:
        for _ in range(50):
            traj = evolve(SimpleProfile.random(rng, m=8, scale=4.0), HALF, 10, norms=(1.0, 2.0, INF))
            for p in (1.0, 2.0, INF):
                res = da.ges_check(traj, p, mu=0.5)
                assert res.lam == math.log(2.0) / 2.0
                worst = max(worst, res.C)
    clk.check()
    assert worst <= 2.0


# -- 10 -----------------------------------------------------------------------------


def _bounded_disturbance(rng, horizon=202.0):
    """Persistent piecewise-constant input over the whole run."""
    cuts = np.sort(rng.uniform(0.0, horizon, 30))
    times = np.unique(np.concatenate([[0.0], cuts, [horizon]]))
    return Disturbance.piecewise(times, rng.uniform(-0.5, 0.5, (len(times) - 1, 2)))


def test_criterion_10_iss_domination():
    rng = np.random.default_rng(10)
    scenarios = []
    for i in range(50):
        g0 = SimpleProfile.random(rng, m=6, scale=3.0)
        d = _bounded_disturbance(rng) if i % 2 else Disturbance.from_rows([(0.0, 9.0, 0.4, -0.2)])
        scenarios.append((g0, d))
    reports = {}
    with Clock(10.0) as clk:
        for p in (1.0, 2.0, INF):
            reports[p] = iss_check(scenarios, HALF, p, N=100)
    clk.check()
    for p, rep in reports.items():
        assert rep.dominance_ok and rep.limsup_ok, (p, rep.violations[:3])
        assert rep.holds


# -- 11 -----------------------------------------------------------------------------


def test_criterion_11_perturbation_rejection():
    rng = np.random.default_rng(11)
    g0 = SimpleProfile.random(rng, m=8, scale=2.0)
    d = Disturbance.from_rows([(0.0, 1.5, 0.8, 0.3), (2.5, 6.0, -0.4, 0.6)])
    with Clock(2.0) as clk:
        traj = evolve_disturbed(g0, HALF, d, 60, norms=(2.0,))
        rep = verify_perturbation_rejection(traj, d, 2.0, threshold=1e-8)
    clk.check()
    assert rep.condition == "summable translates"
    assert rep.predicted_horizon is not None and rep.predicted_horizon <= 60
    assert rep.reached and traj.norm(rep.predicted_horizon, 2.0) < 1e-8


# -- 12 -----------------------------------------------------------------------------


def test_criterion_12_slow_super_exponential_construction():
    with Clock(10.0) as clk:
        res = da.construct_superexp_counterexample(lambda x: math.log(2.0 + x), x_probe=0.01, horizon=500)
    clk.check()
    margins = [row["margin"] for row in res.table]
    assert len(margins) == 501
    assert math.isfinite(res.floor) and min(margins) >= res.floor
    assert not da.downward_trend(margins, 100)
    assert res.residual <= 1e-8


# -- 13 -----------------------------------------------------------------------------


def test_criterion_13_two_boundary_reduction(tmp_path):
    import json

    base = {"schema": "wavedamp/1", "N": 8, "map": "linear:0.5", "seed": 3,
            "initial": {"tag": "random:2", "m": 9}, "norms": [1, 2, "inf"]}
    (tmp_path / "single.json").write_text(json.dumps(base))
    (tmp_path / "double.json").write_text(json.dumps(dict(base, s0_map="id")))
    with Clock(1.0) as clk:
        assert main(["simulate", "--config", str(tmp_path / "single.json"), "--out", str(tmp_path / "a")]) == 0
        assert main(["two-boundary", "--config", str(tmp_path / "double.json"),
                     "--out", str(tmp_path / "b")]) == 0
    clk.check()
    for name in ("energies.csv", "times.csv"):
        h1, a = read_csv_table(tmp_path / "a" / name)
        h2, b = read_csv_table(tmp_path / "b" / name)
        assert h1 == h2
        assert np.max(np.abs(np.array(a) - np.array(b))) <= 1e-12
