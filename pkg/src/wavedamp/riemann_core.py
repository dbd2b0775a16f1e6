"""Riemann-invariant profiles, exact evolution, energies and reconstruction.

The wave state ``(z0', z1)`` on ``[0, 1]`` is encoded by a profile ``g0`` on
``[-1, 1]``.  The damped dynamics acts pointwise on the profile, so a
piecewise-constant profile stays piecewise constant on the same cells forever
and every quantity below is an exact finite sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .damping_maps import MIN_ABS, SQRT2, RotatedMap, SelectionPolicy, apply_selected
from .errors import WindowOutOfRange

INF = math.inf
DEFAULT_NORMS = (1.0, 2.0, INF)


def _norm_key(p) -> float:
    p = float(p)
    if not (p >= 1):
        raise ValueError(f"norm index must be in [1, inf], got {p}")
    return p


# ---------------------------------------------------------------------------
# error-free transformations, so that sums of |v|^p * width are exact


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


_SPLIT = 134217729.0  # 2**27 + 1


def _split(a):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _weighted_terms(weights, hi, lo):
    """Floats whose exact sum is ``sum(weights * (hi - lo))``."""
    weights, hi, lo = (np.asarray(a, dtype=float) for a in (weights, hi, lo))
    dh, dl = _two_sum(hi, -lo)
    p1, e1 = _two_prod(weights, dh)
    p2, e2 = _two_prod(weights, dl)
    return np.concatenate([p1, e1, p2, e2])


def _pow_abs(values, p):
    a = np.abs(np.asarray(values, dtype=float))
    if p == 1.0:
        return a
    if p == 2.0:
        return a * a
    return np.power(a, p)


def _root(total, p):
    if p == 1.0:
        return total
    if p == 2.0:
        return math.sqrt(total)
    return total ** (1.0 / p)


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True, eq=False)
class SimpleProfile:
    """Piecewise-constant function; ``values[i]`` holds on ``(b[i], b[i+1]]``.

    The left endpoint belongs to the first cell.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        v = np.array(self.values, dtype=float)
        if b.ndim != 1 or v.ndim != 1 or len(b) != len(v) + 1 or len(v) < 1:
            raise ValueError("need m >= 1 values and m + 1 breakpoints")
        if not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(b)):
            raise ValueError("breakpoints and values must be finite")
        b.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c: float, lo: float = -1.0, hi: float = 1.0) -> "SimpleProfile":
        return cls(np.array([lo, hi]), np.array([c]))

    @classmethod
    def random(cls, rng: np.random.Generator, m: int = 8, scale: float = 1.0,
               lo: float = -1.0, hi: float = 1.0) -> "SimpleProfile":
        """Random profile with ``m`` cells and values uniform in ``[-scale, scale]``."""
        inner = np.sort(rng.uniform(lo, hi, m - 1))
        b = np.unique(np.concatenate([[lo], inner, [hi]]))
        return cls(b, rng.uniform(-scale, scale, len(b) - 1))

    @classmethod
    def sample(cls, fn, m: int, lo: float = -1.0, hi: float = 1.0) -> "SimpleProfile":
        """Midpoint resampling of a closed-form function onto ``m`` equal cells."""
        b = np.linspace(lo, hi, m + 1)
        mid = 0.5 * (b[:-1] + b[1:])
        return cls(b, np.array([float(fn(s)) for s in mid]))

    # basic queries ----------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def domain(self) -> tuple:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left") - 1
        idx = np.clip(idx, 0, self.m - 1)
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def __eq__(self, other):
        if not isinstance(other, SimpleProfile):
            return NotImplemented
        return (np.array_equal(self.breakpoints, other.breakpoints)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def with_values(self, values) -> "SimpleProfile":
        return SimpleProfile(self.breakpoints, values)

    def refine(self, breakpoints) -> "SimpleProfile":
        """Same function on the union of its breakpoints with ``breakpoints``."""
        lo, hi = self.domain
        extra = np.asarray(breakpoints, dtype=float)
        extra = extra[(extra > lo) & (extra < hi)]
        b = np.union1d(self.breakpoints, extra)
        idx = np.searchsorted(self.breakpoints, b[1:], side="left") - 1
        return SimpleProfile(b, self.values[np.clip(idx, 0, self.m - 1)])

    def simplify(self) -> "SimpleProfile":
        """Merge adjacent cells carrying equal values."""
        keep = np.concatenate([[True], self.values[1:] != self.values[:-1]])
        b = np.concatenate([self.breakpoints[:-1][keep], self.breakpoints[-1:]])
        return SimpleProfile(b, self.values[keep])

    def norm(self, p=2.0) -> float:
        return energy_p(self, p)

    # serialization ----------------------------------------------------
    def to_csv(self) -> str:
        rows = ["breakpoint,value"]
        for b, v in zip(self.breakpoints[:-1], self.values):
            rows.append(f"{float(b)!r},{float(v)!r}")
        rows.append(f"{float(self.breakpoints[-1])!r},")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SimpleProfile":
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if lines and lines[0].startswith("breakpoint"):
            lines = lines[1:]
        b, v = [], []
        for ln in lines:
            left, _, right = ln.partition(",")
            b.append(float(left))
            if right.strip():
                v.append(float(right))
        return cls(np.array(b), np.array(v))

    def to_json_obj(self) -> dict:
        return {"breakpoints": [float(x) for x in self.breakpoints],
                "values": [float(x) for x in self.values]}

    def to_ndjson_line(self, **extra) -> str:
        obj = dict(extra)
        obj.update(self.to_json_obj())
        return json.dumps(obj, allow_nan=False)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SimpleProfile":
        return cls(np.array(obj["breakpoints"], dtype=float), np.array(obj["values"], dtype=float))


def common_lattice(*profiles: SimpleProfile) -> np.ndarray:
    b = profiles[0].breakpoints
    for pr in profiles[1:]:
        b = np.union1d(b, pr.breakpoints)
    return b


def _partial_terms(bp, weights, a, b):
    """Exact expansion of the integral of a step function with cell weights over [a, b]."""
    lo = np.maximum(bp[:-1], a)
    hi = np.minimum(bp[1:], b)
    keep = hi > lo
    return _weighted_terms(weights[keep], hi[keep], lo[keep])


def energy_p(g: SimpleProfile, p=2.0, exact: bool = True) -> float:
    """``L^p`` norm of a profile; ``p = inf`` gives the sup norm.

    The finite-``p`` sum is evaluated as a correctly rounded exact sum of the
    cell contributions, so equal integrals always give equal floats.
    """
    p = _norm_key(p)
    if p == INF:
        return float(np.max(np.abs(g.values)))
    w = _pow_abs(g.values, p)
    if exact:
        total = math.fsum(_weighted_terms(w, g.breakpoints[1:], g.breakpoints[:-1]))
    else:
        total = float(np.dot(w, g.widths))
    return _root(total, p)


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True, eq=False)
class InitialData:
    """Wave initial data through ``(z0', z1)`` on ``[0, 1]`` with ``z0(0) = 0``."""

    z0_prime: SimpleProfile
    z1: SimpleProfile

    def __post_init__(self):
        for prof in (self.z0_prime, self.z1):
            if prof.domain != (0.0, 1.0):
                raise ValueError("initial data live on [0, 1]")
        lattice = common_lattice(self.z0_prime, self.z1)
        object.__setattr__(self, "z0_prime", self.z0_prime.refine(lattice))
        object.__setattr__(self, "z1", self.z1.refine(lattice))

    @property
    def breakpoints(self) -> np.ndarray:
        return self.z1.breakpoints

    def norm(self, p=2.0) -> float:
        """State-space norm, written directly in terms of ``z0' +- z1``."""
        p = _norm_key(p)
        plus = self.z0_prime.values + self.z1.values
        minus = self.z0_prime.values - self.z1.values
        if p == INF:
            return max(np.max(np.abs(plus)), np.max(np.abs(minus))) / SQRT2
        w = self.z1.widths
        total = np.sum((np.abs(plus) ** p + np.abs(minus) ** p) * w) / 2.0 ** (p / 2.0)
        return float(total ** (1.0 / p))

    def z0(self, x: float) -> float:
        """Displacement recovered by integrating ``z0'`` from 0."""
        b = self.breakpoints
        lo = np.minimum(b[:-1], x)
        hi = np.minimum(b[1:], x)
        return float(np.sum(self.z0_prime.values * np.maximum(hi - lo, 0.0)))


def to_invariant(data: InitialData) -> SimpleProfile:
    """Map ``(z0', z1)`` to the profile ``g0`` on ``[-1, 1]``.

    ``g0(-s) = (z1 - z0')(s)/sqrt2`` and ``g0(s) = -(z1 + z0')(s)/sqrt2``.
    """
    c = data.breakpoints
    zp, z1 = data.z0_prime.values, data.z1.values
    left = (z1 - zp) / SQRT2
    right = (-z1 - zp) / SQRT2
    b = np.concatenate([-c[:0:-1], c])
    return SimpleProfile(b, np.concatenate([left[::-1], right]))


def from_invariant(g0: SimpleProfile) -> InitialData:
    """Inverse of :func:`to_invariant`."""
    if g0.domain != (-1.0, 1.0):
        raise ValueError("profile must live on [-1, 1]")
    lattice = np.union1d(np.abs(g0.breakpoints), [0.0])
    b = np.union1d(lattice, -lattice)
    g = g0.refine(b)
    pos = g.breakpoints >= 0
    c = g.breakpoints[pos]
    mid = 0.5 * (c[:-1] + c[1:])
    right = g(mid)
    left = g(-mid)
    z1 = (left - right) / SQRT2
    zp = -(left + right) / SQRT2
    return InitialData(SimpleProfile(c, zp), SimpleProfile(c, z1))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class EnergyRecord:
    t: float
    p: float
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("energy must be nonnegative")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Profiles ``g_0 ... g_N`` on one lattice plus per-step norms.

    ``values`` is ``None`` when only the norms were kept (large profiles).
    """

    breakpoints: np.ndarray
    values: Optional[np.ndarray]
    norms: dict
    map: RotatedMap
    policy: SelectionPolicy
    steps: int
    last_values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.steps

    def profile(self, n: int) -> SimpleProfile:
        if n == self.steps:
            return SimpleProfile(self.breakpoints, self.last_values)
        if self.values is None:
            raise WindowOutOfRange("profiles were not kept for this trajectory")
        if not 0 <= n <= self.steps:
            raise WindowOutOfRange(f"step {n} outside [0, {self.steps}]")
        return SimpleProfile(self.breakpoints, self.values[n])

    @property
    def profiles(self) -> list:
        return [self.profile(n) for n in range(self.steps + 1)]

    def norm(self, n: int, p) -> float:
        p = _norm_key(p)
        if p in self.norms:
            return float(self.norms[p][n])
        return energy_p(self.profile(n), p)

    def _row(self, n):
        if n == self.steps:
            return self.last_values
        if self.values is None:
            raise WindowOutOfRange("profiles were not kept for this trajectory")
        return self.values[n]

    def energies_csv(self, norms: Sequence = DEFAULT_NORMS) -> str:
        keys = [_norm_key(p) for p in norms]
        head = ["n", "t"] + [("e_inf" if p == INF else f"e_{p:g}") for p in keys]
        rows = [",".join(head)]
        for n in range(self.steps + 1):
            cells = [str(n), repr(float(2 * n))]
            cells += [f"{self.norm(n, p):.17g}" for p in keys]
            rows.append(",".join(cells))
        return "\n".join(rows) + "\n"


def evolve(g0: SimpleProfile, S: RotatedMap, N: int, policy: SelectionPolicy = MIN_ABS,
           norms: Iterable = DEFAULT_NORMS, keep_profiles: bool = True,
           exact_norms: bool = True) -> Trajectory:
    """Iterate ``g_{n+1}(s) = selected branch of S(g_n(s))`` cell by cell."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    keys = [_norm_key(p) for p in norms]
    cur = np.array(g0.values, dtype=float)
    rows = [cur] if keep_profiles else None
    table = {p: np.empty(N + 1) for p in keys}

    def record(n, vals):
        prof = SimpleProfile.__new__(SimpleProfile)
        object.__setattr__(prof, "breakpoints", g0.breakpoints)
        object.__setattr__(prof, "values", vals)
        for p in keys:
            table[p][n] = energy_p(prof, p, exact=exact_norms)

    record(0, cur)
    for n in range(1, N + 1):
        cur = apply_selected(S, cur, policy)
        if keep_profiles:
            rows.append(cur)
        record(n, cur)
    values = np.vstack(rows) if keep_profiles else None
    if values is not None:
        values.flags.writeable = False
    return Trajectory(g0.breakpoints, values, table, S, policy, N, cur)


def _window_check(traj: Trajectory, t: float):
    if not (0.0 <= t <= 2.0 * traj.steps):
        raise WindowOutOfRange(f"t={t} outside [0, {2 * traj.steps}]")


def _window_pieces(traj: Trajectory, t: float):
    """Yield (step, local_lo, local_hi) covering the window ``[t-1, t+1]``."""
    n = min(int(math.floor(t / 2.0)), traj.steps)
    cut = t - 2.0 * n - 1.0  # local coordinate of the seam inside the window
    pieces = [(n, cut, 1.0)]
    if cut > -1.0:
        pieces.append((n + 1, -1.0, cut))
    return pieces


def _window_power_sum(traj: Trajectory, t: float, p: float) -> float:
    bp = traj.breakpoints
    terms = []
    for n, a, b in _window_pieces(traj, t):
        key = (n, p)
        w = traj._cache.get(key)
        if w is None:
            w = traj._cache[key] = _pow_abs(traj._row(n), p)
        terms.append(_partial_terms(bp, w, a, b))
    return math.fsum(np.concatenate(terms))


def energy_at_time(traj: Trajectory, t: float, p=2.0) -> EnergyRecord:
    """``L^p`` norm of the concatenated profile over ``[t-1, t+1]``."""
    p = _norm_key(p)
    t = float(t)
    _window_check(traj, t)
    if p == INF:
        bp = traj.breakpoints
        best = 0.0
        for n, a, b in _window_pieces(traj, t):
            row = traj._row(n)
            keep = np.minimum(bp[1:], b) > np.maximum(bp[:-1], a)
            if keep.any():
                best = max(best, float(np.max(np.abs(row[keep]))))
        return EnergyRecord(t, p, best)
    return EnergyRecord(t, p, _root(_window_power_sum(traj, t, p), p))


def _g_at(traj: Trajectory, s: float) -> float:
    """Concatenated profile ``g(s) = g_n(s - 2n)`` with right-continuous cells."""
    n = max(0, int(math.ceil((s - 1.0) / 2.0)))
    if n > traj.steps:
        raise WindowOutOfRange(f"s={s} beyond the horizon")
    prof = SimpleProfile.__new__(SimpleProfile)
    object.__setattr__(prof, "breakpoints", traj.breakpoints)
    object.__setattr__(prof, "values", traj._row(n))
    return prof(s - 2.0 * n)


def _integral_g(traj: Trajectory, a: float, b: float) -> float:
    """Exact integral of the concatenated profile over ``[a, b]``."""
    if b < a:
        return -_integral_g(traj, b, a)
    total = []
    bp = traj.breakpoints
    n = max(0, int(math.floor((a + 1.0) / 2.0)))
    while 2.0 * n - 1.0 < b:
        if n > traj.steps:
            raise WindowOutOfRange(f"integral up to {b} beyond the horizon")
        lo, hi = max(a - 2.0 * n, -1.0), min(b - 2.0 * n, 1.0)
        if hi > lo:
            total.append(_partial_terms(bp, np.asarray(traj._row(n), float), lo, hi))
        n += 1
    return math.fsum(np.concatenate(total)) if total else 0.0


def reconstruct(traj: Trajectory, t: float, x: float) -> tuple:
    """Return ``(z, z_t, z_x)`` at ``(t, x)``.

    With the Dirichlet end at ``x = 0`` the incoming invariant is ``-g`` and
    ``z(t, x) = -(1/sqrt2) * integral of g over [t - x, t + x]``.
    """
    if not (0.0 <= x <= 1.0) or t < 0 or t + x > 2.0 * traj.steps + 1.0:
        raise WindowOutOfRange(f"(t, x)=({t}, {x}) outside the computed horizon")
    z = -_integral_g(traj, t - x, t + x) / SQRT2
    left, right = _g_at(traj, t - x), _g_at(traj, t + x)
    z_t = (left - right) / SQRT2
    z_x = -(left + right) / SQRT2
    return z, z_t, z_x


def vp_lyapunov(traj: Trajectory, t: float, nu: float, p=2.0) -> float:
    """Exponentially weighted window integral of ``|g|^p``.

    ``exp(-nu t) * int_{t-1}^{t+1} exp(nu s) |g(s)|^p ds``; for ``nu = 0`` it
    coincides with the ``p``-th power of the energy.
    """
    p = _norm_key(p)
    if p == INF:
        raise ValueError("defined for finite p only")
    if nu < 0:
        raise ValueError("nu must be nonnegative")
    t = float(t)
    _window_check(traj, t)
    if nu == 0:
        return _window_power_sum(traj, t, p)
    bp = traj.breakpoints
    total = 0.0
    for n, a, b in _window_pieces(traj, t):
        w = _pow_abs(traj._row(n), p)
        lo = np.maximum(bp[:-1], a)
        hi = np.minimum(bp[1:], b)
        keep = hi > lo
        # global time of a local point: s = local + 2n; weight exp(nu (s - t))
        c = lo[keep] + 2.0 * n - t
        d = hi[keep] + 2.0 * n - t
        total += float(np.sum(w[keep] * np.exp(nu * c) * np.expm1(nu * (d - c)) / nu))
    return total


# ---------------------------------------------------------------------------
# two-boundary dynamics


@dataclass(frozen=True, eq=False)
class TwoBoundaryTrajectory:
    """Paired profiles ``(h_n, g_n)`` on ``[-1, 0]`` advancing one time unit per step."""

    breakpoints: np.ndarray
    h_values: np.ndarray
    g_values: np.ndarray
    energies: dict
    steps: int

    def h(self, n) -> SimpleProfile:
        return SimpleProfile(self.breakpoints, self.h_values[n])

    def g(self, n) -> SimpleProfile:
        return SimpleProfile(self.breakpoints, self.g_values[n])

    def energy(self, n: int, p=2.0) -> float:
        return float(self.energies[_norm_key(p)][n])


def _pair_energy(bp, h, g, p):
    if p == INF:
        return float(max(np.max(np.abs(h)), np.max(np.abs(g))))
    terms = np.concatenate([
        _weighted_terms(_pow_abs(h, p), bp[1:], bp[:-1]),
        _weighted_terms(_pow_abs(g, p), bp[1:], bp[:-1]),
    ])
    return _root(math.fsum(terms), p)


def evolve_two_boundary(h0: SimpleProfile, g0: SimpleProfile, S0: RotatedMap, S1: RotatedMap,
                        N: int, policy: SelectionPolicy = MIN_ABS,
                        norms: Iterable = DEFAULT_NORMS) -> TwoBoundaryTrajectory:
    """Iterate ``h_{n+1} = -S1(g_n)``, ``g_{n+1} = -S0(h_n)`` cell by cell.

    Energies at integer times are ``(||h_n||^p + ||g_n||^p)^{1/p}``.
    """
    if h0.domain != (-1.0, 0.0) or g0.domain != (-1.0, 0.0):
        raise ValueError("two-boundary profiles live on [-1, 0]")
    bp = common_lattice(h0, g0)
    h = h0.refine(bp).values.copy()
    g = g0.refine(bp).values.copy()
    keys = [_norm_key(p) for p in norms]
    hs, gs = [h], [g]
    for _ in range(N):
        h, g = -apply_selected(S1, g, policy), -apply_selected(S0, h, policy)
        hs.append(h)
        gs.append(g)
    H, G = np.vstack(hs), np.vstack(gs)
    energies = {p: np.array([_pair_energy(bp, H[n], G[n], p) for n in range(N + 1)]) for p in keys}
    return TwoBoundaryTrajectory(bp, H, G, energies, N)


def split_for_two_boundary(g0: SimpleProfile) -> tuple:
    """Single-boundary profile on ``[-1, 1]`` to the pair ``(h0, g0)`` on ``[-1, 0]``.

    With a Dirichlet end at 0 the incoming invariant is ``-g``, so
    ``h0(r) = -g0(r + 1)``.
    """
    left = g0.refine([0.0])
    bp = left.breakpoints
    k = int(np.searchsorted(bp, 0.0))
    g_part = SimpleProfile(bp[: k + 1], left.values[:k])
    h_part = SimpleProfile(bp[k:] - 1.0, -left.values[k:])
    lattice = common_lattice(g_part, h_part)
    return h_part.refine(lattice), g_part.refine(lattice)


__all__ = [
    "SimpleProfile", "InitialData", "Trajectory", "EnergyRecord", "TwoBoundaryTrajectory",
    "to_invariant", "from_invariant", "evolve", "energy_p", "energy_at_time", "reconstruct",
    "vp_lyapunov", "evolve_two_boundary", "split_for_two_boundary", "common_lattice",
]
