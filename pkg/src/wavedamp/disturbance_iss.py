"""Boundary disturbances: window reduction, summability, disturbed evolution
and input-to-state stability checks through a scalar comparison system."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .damping_maps import MIN_ABS, RotatedMap, SelectionPolicy, apply_selected, mu_table, rotate
from .decay_analysis import KLEnvelope, kl_envelope
from .errors import ConditionNotCertified, NotStrictDamping, WindowOutOfRange
from .riemann_core import (DEFAULT_NORMS, INF, SimpleProfile, Trajectory, _norm_key, energy_p,
                           evolve)

DEFAULT_RESOLUTION = 32  # cells per unit time when sampling a closed form
LIMSUP_TOL = 1e-9


# ---------------------------------------------------------------------------
# disturbances


@dataclass(frozen=True)
class DecayTag:
    """What is known about ``|d(t)|`` as ``t`` grows.

    ``compact``: zero beyond the support bound.  ``geometric``:
    ``|d(t)| <= amplitude * exp(-rate t)``.  ``polynomial``:
    ``|d(t)| <= amplitude * (1 + t)^-rate``.  ``none``: known not to decay
    summably.  ``unknown``: nothing is claimed.
    """

    kind: str = "unknown"
    rate: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("compact", "geometric", "polynomial", "none", "unknown"):
            raise ValueError(f"unknown decay kind {self.kind!r}")
        if self.kind in ("geometric", "polynomial") and not self.rate > 0:
            raise ValueError("decay rate must be positive")

    @classmethod
    def parse(cls, tag: Optional[str]) -> "DecayTag":
        """``compact``, ``geometric:rate[,amplitude]``, ``polynomial:k[,amplitude]``,
        ``none`` or ``unknown``."""
        if tag is None:
            return cls("unknown")
        kind, _, arg = tag.partition(":")
        nums = [float(v) for v in arg.split(",")] if arg else []
        if kind in ("geometric", "polynomial"):
            if not nums:
                raise ValueError(f"{kind} decay needs a rate")
            return cls(kind, nums[0], nums[1] if len(nums) > 1 else 1.0)
        return cls(kind)

    @property
    def vanishes(self) -> bool:
        return self.kind in ("compact", "geometric", "polynomial")

    def tail_sup(self, N: int) -> float:
        """Bound on ``sup_s sum_{n > N} |d(s + 2n + 1)|`` over ``s in [-1, 1]``."""
        if self.kind == "compact":
            return 0.0
        A, r = self.amplitude, self.rate
        if self.kind == "geometric":
            # s + 2n + 1 >= 2n
            return A * math.exp(-2 * r * (N + 1)) / -math.expm1(-2 * r)
        if self.kind == "polynomial" and r > 1:
            return A * (1 + 2 * N) ** (1 - r) / (2 * (r - 1))
        return math.inf

    def describe(self) -> str:
        if self.kind in ("geometric", "polynomial"):
            return f"{self.kind}:{self.rate!r},{self.amplitude!r}"
        return self.kind


class WindowPair(NamedTuple):
    """Rotated disturbance on one window: the two components as profiles on a
    shared lattice of ``[-1, 1]``."""

    first: SimpleProfile
    second: SimpleProfile

    def magnitude(self) -> SimpleProfile:
        return SimpleProfile(self.first.breakpoints, np.hypot(self.first.values, self.second.values))

    def norm(self, p=2.0) -> float:
        return energy_p(self.magnitude(), p)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.first.values) or np.any(self.second.values))


@dataclass(frozen=True, eq=False)
class Disturbance:
    """Boundary disturbance ``d: t -> R^2``.

    Either piecewise constant (``values[i]`` on ``(times[i], times[i+1]]``,
    zero outside) or a closed form ``fn`` sampled at cell midpoints with
    ``resolution`` cells per unit time.
    """

    times: np.ndarray
    values: np.ndarray
    fn: Optional[Callable[[float], tuple]] = None
    decay: DecayTag = DecayTag("compact")
    support_bound: Optional[float] = None
    resolution: int = DEFAULT_RESOLUTION
    name: str = "d"

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=float).reshape(-1, 2)
        if self.fn is None:
            if len(t) != len(v) + 1:
                raise ValueError("need one more time than value rows")
            if len(t) and not np.all(np.diff(t) > 0):
                raise ValueError("disturbance breakpoints must be strictly increasing")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
                raise ValueError("disturbance must be finite on its support")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.fn is None and self.support_bound is None:
            nz = np.flatnonzero(np.any(v != 0, axis=1))
            object.__setattr__(self, "support_bound", float(t[nz[-1] + 1]) if len(nz) else 0.0)

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls) -> "Disturbance":
        return cls(np.array([0.0, 1.0]), np.zeros((1, 2)), name="zero")

    @classmethod
    def piecewise(cls, times, values, name: str = "piecewise") -> "Disturbance":
        return cls(np.asarray(times, float), np.asarray(values, float), name=name)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], name: str = "table") -> "Disturbance":
        """Rows ``(t_start, t_end, d1, d2)``; gaps between rows are zero."""
        rows = sorted((float(a), float(b), float(c), float(e)) for a, b, c, e in rows)
        times, values = [], []
        for a, b, d1, d2 in rows:
            if b <= a:
                raise ValueError(f"empty interval [{a}, {b}]")
            if times and a < times[-1]:
                raise ValueError("disturbance rows overlap")
            if times and a > times[-1]:
                values.append((0.0, 0.0))
                times.append(a)
            if not times:
                times.append(a)
            values.append((d1, d2))
            times.append(b)
        if not rows:
            return cls.zero()
        return cls(np.array(times), np.array(values), name=name)

    @classmethod
    def from_csv(cls, path: str) -> "Disturbance":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and r[0].strip()]
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
        return cls.from_rows([r[:4] for r in rows], name=os.path.basename(path))

    @classmethod
    def closed_form(cls, fn: Callable[[float], tuple], decay="unknown",
                    support_bound: Optional[float] = None,
                    resolution: int = DEFAULT_RESOLUTION, name: str = "closed-form") -> "Disturbance":
        tag = decay if isinstance(decay, DecayTag) else DecayTag.parse(decay)
        if support_bound is not None and tag.kind == "unknown":
            tag = DecayTag("compact")
        return cls(np.zeros(0), np.zeros((0, 2)), fn=fn, decay=tag,
                   support_bound=support_bound, resolution=resolution, name=name)

    # queries ----------------------------------------------------------
    def __call__(self, t: float) -> tuple:
        if self.support_bound is not None and t > self.support_bound:
            return (0.0, 0.0)
        if self.fn is not None:
            a, b = self.fn(t)
            return float(a), float(b)
        i = int(np.searchsorted(self.times, t, side="left")) - 1
        if len(self.times) == 0 or t <= self.times[0] or i >= len(self.values):
            return (0.0, 0.0)
        return float(self.values[i, 0]), float(self.values[i, 1])

    @property
    def is_zero(self) -> bool:
        return self.fn is None and not np.any(self.values)

    def window(self, n: int) -> WindowPair:
        """``R d(s + 2n + 1)`` for ``s`` in ``[-1, 1]``."""
        lo, hi = 2.0 * n, 2.0 * n + 2.0
        shift = 2.0 * n + 1.0
        if self.is_zero or (self.support_bound is not None and lo >= self.support_bound):
            return _zero_window()
        if self.fn is not None:
            m = 2 * self.resolution
            bp = np.linspace(-1.0, 1.0, m + 1)
            mids = 0.5 * (bp[:-1] + bp[1:])
            raw = np.array([self(float(s + shift)) for s in mids])
        else:
            inner = self.times[(self.times > lo) & (self.times < hi)]
            bp = np.concatenate([[-1.0], inner - shift, [1.0]])
            bp = np.unique(bp)
            mids = 0.5 * (bp[:-1] + bp[1:]) + shift
            idx = np.searchsorted(self.times, mids, side="left") - 1
            ok = (idx >= 0) & (idx < len(self.values))
            raw = np.zeros((len(mids), 2))
            raw[ok] = self.values[idx[ok]]
        u, v = rotate(raw[:, 0], raw[:, 1])
        first = SimpleProfile(bp, u + 0.0)
        second = SimpleProfile(bp, v + 0.0)
        return _merge_window(first, second)

    def sup_norm(self, N: int) -> float:
        """``sup |d|`` over ``[0, 2N + 2]`` (as sampled)."""
        return max(float(np.max(w.magnitude().values)) for w in reduce_disturbance(self, N))


def _zero_window() -> WindowPair:
    z = SimpleProfile.constant(0.0)
    return WindowPair(z, z)


def _merge_window(first: SimpleProfile, second: SimpleProfile) -> WindowPair:
    """Drop breakpoints across which neither component changes."""
    v1, v2 = first.values, second.values
    keep = np.concatenate([[True], (v1[1:] != v1[:-1]) | (v2[1:] != v2[:-1])])
    b = np.concatenate([first.breakpoints[:-1][keep], first.breakpoints[-1:]])
    return WindowPair(SimpleProfile(b, v1[keep]), SimpleProfile(b, v2[keep]))


def reduce_disturbance(d: Disturbance, N: int) -> list:
    """Windows ``delta_0 ... delta_N``."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    return [d.window(n) for n in range(N + 1)]


# ---------------------------------------------------------------------------
# summability of translates


class DpCheck(NamedTuple):
    norm: float  # L^p norm of the partial sum of translates
    member: Optional[bool]  # None when the tail cannot be bounded
    tail_bound: float  # bound on the L^p norm of the remainder
    exact: bool  # True when the partial sum is the full sum


def check_Dp(d: Disturbance, p=2.0, N_tail: int = 200) -> DpCheck:
    """Partial sum ``sum_{n <= N_tail} |d(. + 2n + 1)|`` on ``[-1, 1]`` and a
    verdict on whether the full sum has finite ``L^p`` norm."""
    p = _norm_key(p)
    if p == INF:
        raise ValueError("the summability class is defined for finite p only")
    if d.support_bound is not None:
        N_tail = min(N_tail, max(0, int(math.ceil(d.support_bound / 2.0))))
    windows = reduce_disturbance(d, N_tail)
    lattice = np.unique(np.concatenate([w.first.breakpoints for w in windows]))
    total = np.zeros(len(lattice) - 1)
    mids = 0.5 * (lattice[:-1] + lattice[1:])
    for w in windows:
        total = total + w.magnitude()(mids)
    norm = energy_p(SimpleProfile(lattice, total), p)
    exact = d.support_bound is not None and 2.0 * (N_tail + 1) >= d.support_bound
    if exact:
        return DpCheck(norm, True, 0.0, True)
    kind = d.decay.kind
    if kind == "none":
        return DpCheck(norm, False, math.inf, False)
    tail = d.decay.tail_sup(N_tail) * 2.0 ** (1.0 / p)
    if math.isfinite(tail):
        return DpCheck(norm, True, tail, False)
    return DpCheck(norm, None, math.inf, False)


# ---------------------------------------------------------------------------
# disturbed evolution


def _window_rows(windows: list, bp: np.ndarray) -> tuple:
    mids = 0.5 * (bp[:-1] + bp[1:])
    D1 = np.vstack([np.atleast_1d(w.first(mids)) for w in windows])
    D2 = np.vstack([np.atleast_1d(w.second(mids)) for w in windows])
    return D1, D2


def evolve_disturbed(g0: SimpleProfile, S: RotatedMap, d: Disturbance, N: int,
                     policy: SelectionPolicy = MIN_ABS, norms=DEFAULT_NORMS,
                     keep_profiles: bool = True, exact_norms: bool = True,
                     windows: Optional[list] = None) -> Trajectory:
    """Iterate ``g_{n+1} = S(g_n - delta_{n,1}) + delta_{n,2}`` cell by cell.

    The lattice of ``g0`` is refined once by every window breakpoint up to
    step ``N``.  Zero disturbance values are never added, so a vanishing
    disturbance reproduces the undisturbed evolution bit for bit.
    ``windows`` may pass precomputed ``reduce_disturbance(d, N - 1)``.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    if g0.domain != (-1.0, 1.0):
        raise WindowOutOfRange("profiles live on [-1, 1]")
    if windows is None:
        windows = reduce_disturbance(d, max(N - 1, 0))
    windows = windows[:max(N, 1)]
    bp = g0.breakpoints
    for w in windows:
        bp = np.union1d(bp, w.first.breakpoints)
    g = g0.refine(bp).values.copy()
    g.flags.writeable = False
    D1, D2 = _window_rows(windows, bp)
    keys = [_norm_key(p) for p in norms]
    table = {p: np.empty(N + 1) for p in keys}
    rows = [g] if keep_profiles else None

    def record(n, vals):
        prof = SimpleProfile.__new__(SimpleProfile)
        object.__setattr__(prof, "breakpoints", bp)
        object.__setattr__(prof, "values", vals)
        for p in keys:
            table[p][n] = energy_p(prof, p, exact=exact_norms)

    record(0, g)
    for n in range(N):
        d1, d2 = D1[n], D2[n]
        x = np.where(d1 != 0, g - d1, g) if d1.any() else g
        y = apply_selected(S, x, policy)
        g = np.where(d2 != 0, y + d2, y) if d2.any() else y
        if keep_profiles:
            rows.append(g)
        record(n + 1, g)
    values = np.vstack(rows) if keep_profiles else None
    if values is not None:
        values.flags.writeable = False
    return Trajectory(bp, values, table, S, policy, N, g)


# ---------------------------------------------------------------------------
# comparison functions


@dataclass(frozen=True)
class KInftyMinorant:
    """Piecewise-affine ``phi`` through ``(nodes[i], values[i])`` with
    ``phi(0) = 0``, continued past the last node with ``tail_slope``.

    A zero tail slope gives a function with bounded range; its inverse is
    then infinite at and above the supremum.
    """

    nodes: np.ndarray
    values: np.ndarray
    tail_slope: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.nodes, self.values)
        beyond = r > self.nodes[-1]
        out = np.where(beyond, self.values[-1] + self.tail_slope * (r - self.nodes[-1]), out)
        return float(out) if out.ndim == 0 else out

    @property
    def sup(self) -> float:
        return math.inf if self.tail_slope > 0 else float(self.values[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.nodes)

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0)) and self.tail_slope > 0

    @property
    def convex(self) -> bool:
        s = np.append(self.slopes, self.tail_slope)
        return bool(np.all(np.diff(s) >= 0))

    def inverse(self, y: float) -> float:
        """Largest ``r`` with ``phi(r) <= y``."""
        if y < 0:
            raise ValueError("phi is only inverted on [0, inf)")
        if y >= self.sup:
            return math.inf
        if y >= self.values[-1]:
            return float(self.nodes[-1] + (y - self.values[-1]) / self.tail_slope)
        # last node with value <= y, then walk the affine piece that follows
        i = int(np.searchsorted(self.values, y, side="right")) - 1
        lo_v, hi_v = self.values[i], self.values[i + 1]
        if hi_v == lo_v:
            return float(self.nodes[i + 1])
        a = (y - lo_v) / (hi_v - lo_v)
        return float(self.nodes[i] + a * (self.nodes[i + 1] - self.nodes[i]))

    def complement(self, r):
        """``(id - phi)(r)``."""
        return r - self(r)


def kinfty_minorant(radii, mu_values, tail_slope: Optional[float] = None,
                    local: bool = False) -> KInftyMinorant:
    """Slope-limited minorant of ``r - mu(r)`` built on the sample grid.

    ``phi0`` is the suffix minimum of ``r - mu(r)``; the node values follow
    ``F_i = min(F_{i-1} + (r_i - r_{i-1}), phi0_i)`` from ``F = 0`` at the
    origin, so ``phi <= r - mu`` at every node and ``id - phi`` is
    nondecreasing.  ``local`` freezes ``phi`` beyond the last node, the
    bounded-range variant for maps whose gap ``r - mu(r)`` stays bounded.
    """
    r = np.asarray(radii, dtype=float)
    m = np.asarray(mu_values, dtype=float)
    if r.ndim != 1 or r.shape != m.shape or len(r) < 1:
        raise ValueError("radii and mu samples must be matching 1-d arrays")
    if not (r[0] > 0 and np.all(np.diff(r) > 0)):
        raise ValueError("radii must be positive and increasing")
    if np.any(np.diff(m) < 0):
        raise ValueError("mu samples must be nondecreasing")
    bad = np.flatnonzero(m >= r)
    if len(bad):
        i = bad[0]
        raise NotStrictDamping(f"mu({r[i]!r}) = {m[i]!r} is not below the radius")
    phi0 = np.minimum.accumulate((r - m)[::-1])[::-1]
    F = np.empty(len(r))
    prev_x, prev_F = 0.0, 0.0
    for i in range(len(r)):
        val = min(prev_F + (r[i] - prev_x), phi0[i])
        # keep id - phi nondecreasing after rounding
        while r[i] - val < prev_x - prev_F:
            val = math.nextafter(val, -math.inf)
        F[i] = val
        prev_x, prev_F = r[i], val
    nodes = np.concatenate([[0.0], r])
    values = np.concatenate([[0.0], F])
    if local:
        slope = 0.0
    elif tail_slope is not None:
        slope = float(tail_slope)
    else:
        slope = float((values[-1] - values[-2]) / (nodes[-1] - nodes[-2]))
    if not 0 <= slope <= 1:
        raise ValueError("tail slope must lie in [0, 1]")
    return KInftyMinorant(nodes, values, slope)


def convexify(phi: KInftyMinorant, a: float, M: float) -> KInftyMinorant:
    """Convex minorant for a map with ``mu(r) <= a r`` beyond ``M``.

    Scale ``phi`` by ``min(1, (1 - a) M / phi(M))`` on ``[0, M]``, continue
    with slope ``1 - a``, then integrate the running minimum of the slopes
    taken from the right.
    """
    if not (0 <= a < 1 and M > 0):
        raise ValueError("need 0 <= a < 1 and M > 0")
    pm = float(phi(M))
    lam = min(1.0, (1 - a) * M / pm)
    inner = phi.nodes[phi.nodes < M]
    nodes = np.concatenate([inner, [M]])
    vals = lam * np.asarray(phi(nodes))
    slopes = np.append(np.diff(vals) / np.diff(nodes), 1 - a)
    h = np.minimum.accumulate(slopes[::-1])[::-1]
    new_vals = np.concatenate([[0.0], np.cumsum(h[:-1] * np.diff(nodes))])
    return KInftyMinorant(nodes, np.minimum(new_vals, vals), 1 - a)


def comparison_system(k0: float, u: Sequence[float], phi: KInftyMinorant, p=2.0) -> np.ndarray:
    """``k_{n+1} = c (id - phi)(|k_n| / c) + |u_n|`` with ``c = 2^{1/p}``."""
    p = _norm_key(p)
    c = 1.0 if p == INF else 2.0 ** (1.0 / p)
    k = np.empty(len(u) + 1)
    k[0] = k0
    for n, un in enumerate(u):
        y = abs(k[n]) / c
        k[n + 1] = c * (y - float(phi(y))) + abs(un)
    return k


def gain(phi: KInftyMinorant, p=2.0) -> Callable[[float], float]:
    """Asymptotic gain ``r -> c phi^{-1}(r / c)`` of the comparison system."""
    p = _norm_key(p)
    c = 1.0 if p == INF else 2.0 ** (1.0 / p)
    return lambda r: c * phi.inverse(r / c)


# ---------------------------------------------------------------------------
# certificates from the map


@dataclass(frozen=True)
class MuSamples:
    radii: np.ndarray
    mu: np.ndarray

    @property
    def strict(self) -> bool:
        return bool(np.all(self.mu < self.radii))

    @property
    def sector(self) -> float:
        """``max mu(r) / r`` over the samples."""
        return float(np.max(self.mu / self.radii))


def sample_mu(S: RotatedMap, r_max: float, count: int = 200, span: float = 1e-4) -> MuSamples:
    """``mu`` on geometric radii from ``span * r_max`` to ``r_max``; the ball
    lattice is ten times finer than the smallest radius."""
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    radii = np.geomspace(span * r_max, r_max, count)
    vals = mu_table(S, radii, step=radii[0] / 10)
    return MuSamples(radii, np.maximum.accumulate(vals))


def minorant_for(samples: MuSamples, p=2.0, local: bool = False) -> KInftyMinorant:
    """Comparison function suited to ``p``: convex (so ``id - phi`` is
    concave) for finite ``p``, as built otherwise."""
    if not samples.strict:
        i = int(np.flatnonzero(samples.mu >= samples.radii)[0])
        raise ConditionNotCertified(f"mu(r) < r fails at r = {samples.radii[i]!r}")
    phi = kinfty_minorant(samples.radii, samples.mu, local=local)
    if _norm_key(p) == INF or phi.convex:
        return phi
    a = samples.sector
    if a >= 1:
        raise ConditionNotCertified("finite p needs a linear sector mu(r) <= a r with a < 1")
    return convexify(phi, a, float(samples.radii[0]))


# ---------------------------------------------------------------------------
# perturbation rejection


@dataclass(frozen=True)
class RejectionReport:
    condition: str
    curve: list  # (t, e_p) at even times
    hits: dict  # threshold -> first even time below it
    threshold: float
    predicted_horizon: Optional[int]
    reached: Optional[bool]
    final_energy: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "threshold": self.threshold,
            "predicted_horizon": self.predicted_horizon,
            "reached": self.reached,
            "final_energy": self.final_energy,
            "hits": {f"{k!r}": v for k, v in self.hits.items()},
            "notes": list(self.notes),
        }


def _support_steps(d: Disturbance) -> Optional[int]:
    """First ``n`` from which every window vanishes."""
    if d.is_zero:
        return 0
    if d.support_bound is None:
        return None
    return int(math.ceil(d.support_bound / 2.0))


def verify_perturbation_rejection(traj: Trajectory, d: Disturbance, p=2.0,
                                  threshold: float = 1e-8, samples: Optional[MuSamples] = None
                                  ) -> RejectionReport:
    """Certify that the disturbance is rejected, then record when ``e_p``
    crosses ``10^-1, 10^-2, ...`` down to ``threshold``.

    With a linear sector ``mu(r) <= a r`` and a compactly supported
    disturbance the report also predicts the step by which ``threshold``
    must be reached and says whether it was.
    """
    p = _norm_key(p)
    S = traj.map
    if samples is None:
        r_max = max(float(np.max(np.abs(traj.last_values))), traj.norm(0, INF))
        r_max = 2.0 * (r_max + _window_sup(d, traj.N)) or 1.0
        samples = sample_mu(S, r_max)
    if not samples.strict:
        i = int(np.flatnonzero(samples.mu >= samples.radii)[0])
        raise ConditionNotCertified(f"mu(r) < r fails at r = {samples.radii[i]!r}")
    notes = []
    if d.is_zero:
        condition = "reduces to strong stability"
    elif p != INF and check_Dp(d, p).member:
        condition = "summable translates"
    elif d.decay.vanishes:
        condition = "vanishing disturbance"
        notes.append("positive gap r - mu(r) checked on the sampled radii only")
    else:
        raise ConditionNotCertified("disturbance neither summable nor vanishing")
    curve = [(2.0 * n, traj.norm(n, p)) for n in range(traj.N + 1)]
    hits = {}
    k = 1
    while float(f"1e-{k}") >= threshold:
        level = float(f"1e-{k}")
        hits[level] = next((t for t, e in curve if e < level), None)
        k += 1
    hits[threshold] = next((t for t, e in curve if e < threshold), None)
    horizon = reached = None
    nd = _support_steps(d)
    a = samples.sector
    if nd is not None and a < 1 and nd <= traj.N:
        e = traj.norm(nd, p)
        extra = 0 if e < threshold else int(math.ceil(math.log(e / threshold) / -math.log(a)))
        horizon = nd + extra
        if horizon <= traj.N:
            reached = traj.norm(horizon, p) < threshold or (e == 0 and threshold > 0)
        else:
            notes.append(f"predicted horizon {horizon} beyond the simulated {traj.N} steps")
    return RejectionReport(condition, curve, hits, threshold, horizon, reached, curve[-1][1], notes)


def _window_sup(d: Disturbance, N: int) -> float:
    return 0.0 if d.is_zero else d.sup_norm(N)


# ---------------------------------------------------------------------------
# input-to-state stability


@dataclass(frozen=True)
class Violation:
    trajectory: int
    t: float
    lhs: float
    rhs: float
    kind: str


@dataclass(frozen=True)
class ISSReport:
    beta: KLEnvelope
    gamma: Callable[[float], float]
    phi: KInftyMinorant
    violations: list
    gain_formula_value: list  # gamma_0(2 sup ||delta_n||_p) per scenario
    dominance_ok: bool
    limsup_ok: bool
    iss_ok: bool
    p: float
    local: bool = False
    notes: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.dominance_ok and self.limsup_ok and self.iss_ok

    def to_dict(self) -> dict:
        return {
            "p": "inf" if self.p == INF else self.p,
            "holds": self.holds,
            "dominance_ok": self.dominance_ok,
            "limsup_ok": self.limsup_ok,
            "iss_ok": self.iss_ok,
            "local": self.local,
            "gain_formula_value": list(self.gain_formula_value),
            "violations": [v.__dict__ for v in self.violations],
            "notes": list(self.notes),
        }


def _majorant_table(xs, rows):
    """Sup over ``x' <= x`` and ``t' >= t`` of the sampled decay, merged on
    repeated ``x``."""
    order = np.argsort(xs, kind="stable")
    xs = np.asarray(xs, float)[order]
    f = np.asarray(rows, float)[order]
    ux, inv = np.unique(xs, return_inverse=True)
    merged = np.zeros((len(ux), f.shape[1]))
    np.maximum.at(merged, inv, f)
    merged = np.maximum.accumulate(merged, axis=0)
    merged = np.maximum.accumulate(merged[:, ::-1], axis=1)[:, ::-1]
    return ux, merged


def iss_check(scenarios: Sequence[tuple], S: RotatedMap, p=2.0, N: int = 100,
              policy: SelectionPolicy = MIN_ABS, window: Optional[int] = None,
              local: bool = False, tol: float = LIMSUP_TOL) -> ISSReport:
    """Simulate each ``(g0, d)`` scenario and check three things.

    Domination ``||g_n||_p <= k_n`` by the comparison system driven by
    ``u_n = 2 ||delta_n||_p``; the limsup gain over the last ``window``
    steps; and ``||g_n||_p <= beta(||g_0||_p, 2n) + gamma(2 sup ||delta||_p)``
    with ``beta`` the class-KL envelope of the undisturbed runs.
    """
    p = _norm_key(p)
    if local and p != INF:
        raise ValueError("the bounded-range variant is for p = inf")
    window = max(1, N // 4) if window is None else window
    runs, undisturbed, u_all, w_all = [], [], [], []
    r_max = 0.0
    for g0, d in scenarios:
        windows = reduce_disturbance(d, N)
        u = [2.0 * w.norm(p) for w in windows[:N]]
        u_all.append(u)
        w_all.append(windows)
        sup_d = max((float(np.max(w.magnitude().values)) for w in windows), default=0.0)
        r_max = max(r_max, float(np.max(np.abs(g0.values))) + 2.0 * sup_d, energy_p(g0, p))
    samples = sample_mu(S, 2.0 * (r_max or 1.0))
    phi = minorant_for(samples, p, local=local)
    gam = gain(phi, p)
    notes = []
    if local:
        ell = phi.sup
        big = max(max(u, default=0.0) / 2.0 for u in u_all)
        if big >= ell / 2.0:
            raise ConditionNotCertified(f"disturbance size {big!r} not below half the gap {ell!r}")
        notes.append(f"gain defined on [0, {ell / 2!r}) only")
    violations = []
    gains = []
    for i, ((g0, d), u, windows) in enumerate(zip(scenarios, u_all, w_all)):
        traj = evolve_disturbed(g0, S, d, N, policy, norms=(p,), keep_profiles=False,
                                windows=windows)
        runs.append(traj)
        undisturbed.append(evolve(g0, S, N, policy, norms=(p,), keep_profiles=False))
        k = comparison_system(traj.norm(0, p), u, phi, p)
        for n in range(N + 1):
            lhs = traj.norm(n, p)
            if lhs > k[n]:
                violations.append(Violation(i, 2.0 * n, lhs, float(k[n]), "domination"))
        g_val = gam(max(u, default=0.0))
        gains.append(g_val)
        tail = max(traj.norm(n, p) for n in range(N + 1 - window, N + 1))
        if tail > g_val + tol:
            violations.append(Violation(i, 2.0 * N, tail, g_val + tol, "limsup"))
    xs = [traj.norm(0, p) for traj in undisturbed]
    ts = 2.0 * np.arange(N + 1)
    rows = [[traj.norm(n, p) for n in range(N + 1)] for traj in undisturbed]
    ux, table = _majorant_table(xs, rows)
    keep = ux > 0
    if not keep.any():
        ux, table = np.array([1.0]), np.zeros((1, N + 1))
        keep = np.array([True])
    beta = kl_envelope(ux[keep], ts, table[keep])
    for i, (traj, g_val) in enumerate(zip(runs, gains)):
        e0 = traj.norm(0, p)
        for n in range(N + 1):
            rhs = beta(e0, 2.0 * n) + g_val
            if traj.norm(n, p) > rhs:
                violations.append(Violation(i, 2.0 * n, traj.norm(n, p), rhs, "iss"))
    kinds = {v.kind for v in violations}
    return ISSReport(beta, gam, phi, violations, gains, "domination" not in kinds,
                     "limsup" not in kinds, "iss" not in kinds, p, local, notes)


__all__ = [
    "DecayTag", "Disturbance", "WindowPair", "reduce_disturbance", "DpCheck", "check_Dp",
    "evolve_disturbed", "KInftyMinorant", "kinfty_minorant", "convexify", "comparison_system",
    "gain", "MuSamples", "sample_mu", "minorant_for", "RejectionReport",
    "verify_perturbation_rejection", "Violation", "ISSReport", "iss_check",
]
