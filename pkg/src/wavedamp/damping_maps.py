"""Boundary relations, their rotated set-valued maps, and sample-based diagnostics.

A boundary relation is a subset of the plane describing the admissible pairs
``(z_t, -z_x)`` at the damped end of the string.  Rotating it by ``-pi/4``
yields the graph of a set-valued map ``S`` which drives the Riemann-invariant
iteration ``g_{n+1}(s) in S(g_n(s))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import BranchOverflow, EmptyValueSet, InversionFailure, NoBranchFound

SQRT2 = math.sqrt(2.0)
ROOT_TOL = 1e-13
DEFAULT_RESOLUTION = 2001

# probe points tried before the sample grid so that witnesses are readable
_CANONICAL = (1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 0.25, -0.25)


def rotate(x, y):
    """Rotation by -pi/4: ``(x, y) -> ((x + y)/sqrt2, (y - x)/sqrt2)``."""
    return (x + y) / SQRT2, (y - x) / SQRT2


def rotate_back(u, v):
    """Inverse rotation (angle +pi/4)."""
    return (u - v) / SQRT2, (u + v) / SQRT2


def _vectorize(fn: Callable) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a scalar function so that it accepts numpy arrays."""

    def wrapped(xs):
        xs = np.asarray(xs, dtype=float)
        try:
            out = np.asarray(fn(xs), dtype=float)
            if out.shape == xs.shape:
                return out
        except Exception:
            pass
        return np.array([float(fn(float(v))) for v in xs.ravel()]).reshape(xs.shape)

    return wrapped


# ---------------------------------------------------------------------------
# boundary relations


@dataclass(frozen=True)
class BoundaryRelation:
    """Base class.  ``domain_bound`` is the half-width of the sampling range."""

    domain_bound: float = 10.0

    variant = "abstract"

    def contains(self, x: float, y: float, tol: float = 1e-10) -> bool:
        raise NotImplementedError

    def sample_points(self, grid: np.ndarray) -> np.ndarray:
        """Points of the relation above the x-values (or u-values) in ``grid``."""
        raise NotImplementedError

    def probe_points(self) -> np.ndarray:
        return self.sample_points(np.array(_CANONICAL + (0.0,)))


@dataclass(frozen=True)
class FunctionGraph(BoundaryRelation):
    """Graph of a scalar feedback law ``y = sigma(x)``."""

    sigma: Callable[[float], float] = None
    dsigma: Optional[Callable[[float], float]] = None

    variant = "function"

    def __post_init__(self):
        if self.sigma is None:
            raise ValueError("FunctionGraph needs sigma")
        xs = np.linspace(-self.domain_bound, self.domain_bound, 101)
        if not np.all(np.isfinite(_vectorize(self.sigma)(xs))):
            raise ValueError("sigma is not finite on the sampling range")

    def contains(self, x, y, tol=1e-10):
        return abs(float(self.sigma(x)) - y) <= tol * max(1.0, abs(y))

    def sample_points(self, grid):
        grid = np.asarray(grid, dtype=float)
        return np.column_stack([grid, _vectorize(self.sigma)(grid)])


@dataclass(frozen=True)
class SignGraph(BoundaryRelation):
    """Graph of ``M * sign``: horizontal rays at height +-M joined by the
    vertical segment ``{0} x [-M, M]``."""

    M: float = SQRT2

    variant = "sign"

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("SignGraph needs M > 0")

    def contains(self, x, y, tol=1e-10):
        if x == 0:
            return abs(y) <= self.M + tol
        return abs(y - math.copysign(self.M, x)) <= tol

    def sample_points(self, grid):
        grid = np.asarray(grid, dtype=float)
        nz = grid[grid != 0]
        rays = np.column_stack([nz, np.sign(nz) * self.M])
        ys = grid[np.abs(grid) <= self.M]
        seg = np.column_stack([np.zeros_like(ys), ys])
        return np.vstack([seg, rays])


@dataclass(frozen=True)
class SectorBand(BoundaryRelation):
    """Region ``lower(x) <= y <= upper(x)``.

    Both ``x + lower(x)`` and ``x + upper(x)`` must be increasing so that each
    anti-diagonal line meets the band in a segment.
    """

    lower: Callable[[float], float] = None
    upper: Callable[[float], float] = None
    # optional closed form ``u -> (v_upper, v_lower)`` of the rotated extreme
    # branches, accepting floats and arrays alike
    extremes: Optional[Callable] = None

    variant = "band"

    def __post_init__(self):
        if self.lower is None or self.upper is None:
            raise ValueError("SectorBand needs lower and upper")
        xs = np.linspace(-self.domain_bound, self.domain_bound, 401)
        lo, hi = _vectorize(self.lower)(xs), _vectorize(self.upper)(xs)
        bad = np.nonzero(lo > hi)[0]
        if bad.size:
            raise ValueError(f"lower > upper at x={xs[bad[0]]}")

    def contains(self, x, y, tol=1e-10):
        return self.lower(x) - tol <= y <= self.upper(x) + tol

    def sample_points(self, grid):
        grid = np.asarray(grid, dtype=float)
        lo = _vectorize(self.lower)(grid)
        hi = _vectorize(self.upper)(grid)
        return np.vstack(
            [
                np.column_stack([grid, lo]),
                np.column_stack([grid, hi]),
                np.column_stack([grid, 0.5 * (lo + hi)]),
            ]
        )


@dataclass(frozen=True)
class ExplicitRotated(BoundaryRelation):
    """Relation given directly through its rotated map ``S``.

    ``func`` returns an iterable of branch values; ``vectorized`` optionally
    evaluates a single-valued ``S`` on arrays.
    """

    func: Callable[[float], Iterable[float]] = None
    vectorized: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "explicit"

    variant = "explicit"

    def __post_init__(self):
        if self.func is None:
            raise ValueError("ExplicitRotated needs func")

    def contains(self, x, y, tol=1e-10):
        u, v = rotate(x, y)
        return any(abs(w - v) <= tol * max(1.0, abs(v)) for w in self.func(u))

    def sample_points(self, grid):
        pts = []
        for u in np.asarray(grid, dtype=float):
            for v in self.func(float(u)):
                pts.append(rotate_back(float(u), float(v)))
        return np.array(pts, dtype=float).reshape(-1, 2)


# ---------------------------------------------------------------------------
# rotated maps and selection


@dataclass(frozen=True)
class RotatedMap:
    """Set-valued map ``S`` whose graph is the rotated boundary relation.

    Calling the map returns the sorted tuple of branch values.  When
    ``vectorized`` is set, ``S`` is single valued and may be applied to arrays.
    ``pair_vectorized`` returns the two extreme branches ``(lo, hi)`` of a
    two-valued map on arrays.
    """

    branches: Callable[[float], Sequence[float]]
    provenance: Optional[BoundaryRelation] = None
    branch_count_bound: int = 8
    vectorized: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "S"
    pair_vectorized: Optional[Callable[[np.ndarray], tuple]] = None

    def __call__(self, x: float) -> tuple:
        vals = sorted({float(v) for v in self.branches(float(x))})
        if len(vals) > self.branch_count_bound:
            raise BranchOverflow(x, len(vals), self.branch_count_bound)
        return tuple(vals)

    @property
    def single_valued(self) -> bool:
        return self.vectorized is not None


@dataclass(frozen=True)
class SelectionPolicy:
    """Deterministic rule picking one branch of ``S(x)``.

    Kinds: ``min_abs`` (ties go to the nonnegative value), ``max_abs`` (same
    tie rule), ``fixed`` (index into the sorted branches, clamped) and
    ``seeded`` (splitmix64 hash of seed and the bits of ``x``).
    """

    kind: str = "min_abs"
    index: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("min_abs", "max_abs", "fixed", "seeded"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def MinAbs(cls):
        return cls("min_abs")

    @classmethod
    def MaxAbs(cls):
        return cls("max_abs")

    @classmethod
    def FixedBranch(cls, index: int):
        return cls("fixed", index=index)

    @classmethod
    def Seeded(cls, seed: int):
        return cls("seeded", seed=seed)

    def select(self, x: float, values: Sequence[float]) -> float:
        if len(values) == 0:
            raise EmptyValueSet(x)
        if len(values) == 1:
            return values[0]
        if self.kind == "min_abs":
            return min(values, key=lambda v: (abs(v), -v))
        if self.kind == "max_abs":
            return min(values, key=lambda v: (-abs(v), -v))
        if self.kind == "fixed":
            return values[min(max(self.index, 0), len(values) - 1)]
        h = int(_seeded_hash(np.array([float(x)]), self.seed)[0])
        return values[h % len(values)]

    def select_pair(self, xs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Vectorized ``select`` for sorted branch pairs ``lo <= hi``."""
        if self.kind == "min_abs":
            pick_hi = np.abs(hi) <= np.abs(lo)
        elif self.kind == "max_abs":
            pick_hi = np.abs(hi) >= np.abs(lo)
        elif self.kind == "fixed":
            pick_hi = np.full(lo.shape, self.index >= 1)
        else:
            pick_hi = (_seeded_hash(xs, self.seed) % np.uint64(2)) == 1
        return np.where((lo != hi) & pick_hi, hi, lo)

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.index}"
        if self.kind == "seeded":
            return f"seeded:{self.seed}"
        return self.kind


MIN_ABS = SelectionPolicy.MinAbs()

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _seeded_hash(xs: np.ndarray, seed: int) -> np.ndarray:
    bits = np.ascontiguousarray(xs, dtype=np.float64).view(np.uint64)
    key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    with np.errstate(over="ignore"):
        return _splitmix64(bits ^ key)


def eval_selected(S: RotatedMap, x: float, policy: SelectionPolicy = MIN_ABS) -> float:
    values = S(x)
    if not values:
        raise EmptyValueSet(x)
    return policy.select(float(x), values)


def apply_selected(S: RotatedMap, xs, policy: SelectionPolicy = MIN_ABS) -> np.ndarray:
    """Apply ``eval_selected`` elementwise; evaluates ``S`` once per distinct value."""
    xs = np.asarray(xs, dtype=float)
    if S.vectorized is not None:
        return np.asarray(S.vectorized(xs), dtype=float)
    if S.pair_vectorized is not None:
        lo, hi = S.pair_vectorized(xs)
        return policy.select_pair(xs, lo, hi)
    uniq, inverse = np.unique(xs, return_inverse=True)
    out = np.array([eval_selected(S, float(u), policy) for u in uniq])
    return out[inverse].reshape(xs.shape)


def iterate_map(S: RotatedMap, x0: float, n: int, policy: SelectionPolicy = MIN_ABS) -> list:
    if n < 0:
        raise ValueError("n must be nonnegative")
    seq = [float(x0)]
    for _ in range(n):
        seq.append(eval_selected(S, seq[-1], policy))
    return seq


def compose_negated(S0: RotatedMap, S1: RotatedMap, branch_count_bound: Optional[int] = None) -> RotatedMap:
    """The map ``x -> (-S1)((-S0)(x))`` with all branch combinations."""

    def branches(x):
        return [-z for y in S0(x) for z in S1(-y)]

    vec = None
    if S0.vectorized is not None and S1.vectorized is not None:
        v0, v1 = S0.vectorized, S1.vectorized

        def vec(xs):
            return -v1(-v0(xs))

    bound = branch_count_bound or S0.branch_count_bound * S1.branch_count_bound
    return RotatedMap(branches, None, bound, vec, f"(-{S1.name})o(-{S0.name})")


# ---------------------------------------------------------------------------
# rotation of relations


def _bisect(fn, a, b, fa, tol=ROOT_TOL):
    while b - a > tol:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = fn(m)
        if fm == 0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _growth_bound(sigma_vec, bound):
    xs = np.linspace(-bound, bound, 401)
    return float(np.max(np.abs(sigma_vec(xs)) / (1.0 + np.abs(xs))))


def _function_graph_branches(sig: FunctionGraph, resolution: int):
    sigma = sig.sigma
    sigma_vec = _vectorize(sigma)
    growth = _growth_bound(sigma_vec, sig.domain_bound)

    def branches(u):
        # y = sqrt2 sigma(x) - u with x = (u - y)/sqrt2 stays in a linear cone
        B = max(10.0, SQRT2 * growth * (abs(u) + 1.0))
        lo, hi = -abs(u) - B, abs(u) + B
        ys = np.linspace(lo, hi, resolution)
        hs = sigma_vec((u - ys) / SQRT2) - (u + ys) / SQRT2

        def h(y):
            return float(sigma((u - y) / SQRT2)) - (u + y) / SQRT2

        roots = [float(ys[i]) for i in np.nonzero(hs == 0)[0]]
        sgn = np.sign(hs)
        for i in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]:
            roots.append(_bisect(h, float(ys[i]), float(ys[i + 1]), float(hs[i]), tol=0.0))
        if not roots:
            raise NoBranchFound(u)
        roots.sort()
        merged = [roots[0]]
        for r in roots[1:]:
            if r - merged[-1] > 1e-11:
                merged.append(r)
        return merged

    return branches


def _solve_increasing(fn, target):
    """Root of ``fn(x) = target`` for increasing ``fn`` by bracket doubling."""
    a, b = -1.0, 1.0
    for _ in range(200):
        fa, fb = fn(a) - target, fn(b) - target
        if fa <= 0 <= fb:
            break
        if fa > 0:
            a *= 2.0
        if fb < 0:
            b *= 2.0
    else:
        raise InversionFailure(f"cannot bracket {target}")
    if fa == 0:
        return a
    if fb == 0:
        return b
    return _bisect(lambda x: fn(x) - target, a, b, fa, tol=0.0)


def _band_branches(band: SectorBand):
    if band.extremes is not None:
        return lambda u: list(band.extremes(u))

    def branches(u):
        w = SQRT2 * u
        out = []
        for f in (band.upper, band.lower):
            x = _solve_increasing(lambda t, f=f: t + float(f(t)), w)
            out.append(u - SQRT2 * x)
        return out

    return branches


def _band_pair(band: SectorBand):
    """Array form of the extreme branches when closed-form solvers exist."""
    if band.extremes is None:
        return None

    def pair(us):
        a, b = band.extremes(np.asarray(us, dtype=float))
        return np.minimum(a, b), np.maximum(a, b)

    return pair


def rotate_relation(sigma: BoundaryRelation, resolution: int = DEFAULT_RESOLUTION,
                    branch_count_bound: int = 8) -> RotatedMap:
    """Build the rotated map of a boundary relation."""
    if isinstance(sigma, SignGraph):
        from .sign_map import sign_S_array, sign_S

        c = sigma.M / SQRT2
        if c == 1.0:
            return RotatedMap(lambda u: (sign_S(u),), sigma, 1, sign_S_array, "sign")

        def vec(u):
            return c * sign_S_array(np.asarray(u, dtype=float) / c)

        return RotatedMap(lambda u: (c * sign_S(u / c),), sigma, 1, vec, f"sign[M={sigma.M}]")
    if isinstance(sigma, ExplicitRotated):
        return RotatedMap(sigma.func, sigma, branch_count_bound, sigma.vectorized, sigma.name)
    if isinstance(sigma, FunctionGraph):
        return RotatedMap(_function_graph_branches(sigma, resolution), sigma,
                          branch_count_bound, None, "function")
    if isinstance(sigma, SectorBand):
        return RotatedMap(_band_branches(sigma), sigma, max(2, branch_count_bound), None, "band",
                          _band_pair(sigma))
    raise TypeError(f"unsupported relation {type(sigma).__name__}")


# ---------------------------------------------------------------------------
# shipped maps


def linear_map(c: float) -> RotatedMap:
    """``S(x) = c x``; a damping iff ``|c| <= 1``."""
    rel = ExplicitRotated(func=lambda x: (c * x,), vectorized=lambda xs: c * np.asarray(xs, dtype=float),
                          name=f"linear:{c}")
    return rotate_relation(rel)


def zero_map() -> RotatedMap:
    """``S = 0``, the rotation of the graph of the identity."""
    rel = ExplicitRotated(func=lambda x: (0.0,), vectorized=lambda xs: np.zeros_like(np.asarray(xs, dtype=float)),
                          name="zero")
    return rotate_relation(rel)


def identity_map() -> RotatedMap:
    """``S = id``: the rotation of the vertical axis (homogeneous Dirichlet)."""
    rel = ExplicitRotated(func=lambda x: (x,), vectorized=lambda xs: np.array(xs, dtype=float), name="id")
    return rotate_relation(rel)


def neumann_map() -> RotatedMap:
    """``S = -id``: the rotation of the horizontal axis."""
    rel = ExplicitRotated(func=lambda x: (-x,), vectorized=lambda xs: -np.asarray(xs, dtype=float), name="neumann")
    return rotate_relation(rel)


def sign_map(M: float = SQRT2) -> RotatedMap:
    return rotate_relation(SignGraph(M=M))


def saturation_band(level: float = 1.0) -> SectorBand:
    """Band between the axis and a saturation at height ``level``.

    It is a damping contained in the region ``|x| <= C/sqrt2 or |y| <= C/sqrt2``
    with ``C = sqrt2 * level``, and its rotated map has two branches.
    """

    def upper(x):
        return min(level, max(x, 0.0))

    def lower(x):
        return max(-level, min(x, 0.0))

    knee = SQRT2 * level

    def extremes(u):
        top = np.where(u <= 0, -u, np.where(u <= knee, 0.0, knee - u)) + 0.0
        bottom = np.where(u >= 0, -u, np.where(u >= -knee, 0.0, -knee - u)) + 0.0
        return top, bottom

    return SectorBand(domain_bound=max(10.0, 4 * level), lower=lower, upper=upper, extremes=extremes)


def shipped_maps() -> dict:
    """Damping maps exercised by the monotonicity checks."""
    return {
        "sign": sign_map(),
        "linear:0.5": linear_map(0.5),
        "linear:-0.5": linear_map(-0.5),
        "zero": zero_map(),
        "id": identity_map(),
        "neumann": neumann_map(),
        "saturation": rotate_relation(saturation_band(1.0)),
        "min0": rotate_relation(FunctionGraph(sigma=lambda x: np.minimum(0.0, x))),
        "cubic": rotate_relation(FunctionGraph(sigma=lambda x: x + x ** 3 / 3.0)),
    }


# ---------------------------------------------------------------------------
# envelope functions


def _ball_lattice(r: float, step: float) -> np.ndarray:
    k = int(math.ceil(r / step)) + 1 if r > 0 else 0
    return np.arange(-k, k + 1, dtype=float) * step


def _max_abs_iterate(S: RotatedMap, xs: np.ndarray, n: int) -> np.ndarray:
    """max over all branch sequences of ``|S^[n](x)|`` together with a damping flag."""
    if S.vectorized is not None:
        cur = np.asarray(xs, dtype=float)
        damping = True
        for _ in range(n):
            nxt = S.vectorized(cur)
            damping &= bool(np.all(np.abs(nxt) <= np.abs(cur)))
            cur = nxt
        return np.abs(cur), damping
    out = np.empty(len(xs))
    damping = True
    for i, x in enumerate(xs):
        layer = {float(x)}
        for _ in range(n):
            nxt = set()
            for v in layer:
                for w in S(v):
                    damping &= abs(w) <= abs(v) + 1e-12 * max(1.0, abs(v))
                    nxt.add(w)
            layer = nxt
        out[i] = max(abs(v) for v in layer)
    return out, damping


def rho_n(S: RotatedMap, r: float, n: int = 2, step: float = 1e-3) -> float:
    """Sup of ``|S^[n]|`` over the ball of radius ``r`` extended by one lattice cell.

    The lattice is ``step * Z`` so that results are nondecreasing in ``r``.
    When the samples confirm a damping the value is also capped by ``r``.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    xs = _ball_lattice(float(r), step)
    vals, damping = _max_abs_iterate(S, xs, n)
    val = float(np.max(vals))
    return min(val, float(r)) if damping else val


def rho(S: RotatedMap, r: float, step: float = 1e-3) -> float:
    return rho_n(S, r, 2, step)


def mu(S: RotatedMap, r: float, step: float = 1e-3) -> float:
    return rho_n(S, r, 1, step)


def mu_table(S: RotatedMap, radii, step: float = 1e-3) -> np.ndarray:
    """``mu`` on an increasing array of radii in one sweep (running maximum)."""
    radii = np.asarray(radii, dtype=float)
    xs = _ball_lattice(float(radii.max()), step)
    vals, damping = _max_abs_iterate(S, xs, 1)
    order = np.argsort(np.abs(xs), kind="stable")
    ax, av = np.abs(xs)[order], np.maximum.accumulate(vals[order])
    idx = np.searchsorted(ax, radii + step, side="right") - 1
    out = av[np.clip(idx, 0, len(av) - 1)]
    return np.minimum(out, radii) if damping else out


# ---------------------------------------------------------------------------
# rotated rate function


def invert_q_plus_id(q: Callable[[float], float], w: float, tol: float = ROOT_TOL) -> float:
    """Solve ``y + q(y) = w`` on ``[0, w]`` by bisection."""
    if w == 0:
        return 0.0
    probe = np.linspace(0.0, w, 33)
    vals = np.array([t + float(q(t)) for t in probe])
    if np.any(np.diff(vals) <= 0) or vals[-1] < w:
        raise InversionFailure(f"q + id is not increasing on [0, {w}]")
    a, b = 0.0, float(w)
    while b - a > tol:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        if m + float(q(m)) < w:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def q_to_Q(q, x: float) -> float:
    """The rotated rate function ``Q(x) = sqrt2 (q + id)^{-1}(sqrt2 x) - x``.

    ``q`` is a plain callable or a rate law exposing ``log_Q``; the latter is
    evaluated in the log domain and keeps full relative accuracy near 0.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    log_Q = getattr(q, "log_Q", None)
    if log_Q is not None:
        return math.exp(log_Q(math.log(x)))
    qf = getattr(q, "q", q)
    y = invert_q_plus_id(qf, SQRT2 * x)
    return (y - float(qf(y))) / SQRT2


# ---------------------------------------------------------------------------
# hypotheses


class SingleValued(NamedTuple):
    ok: bool
    witness: Optional[tuple]


def check_single_valued(sigma: Callable[[float], float], samples=None) -> SingleValued:
    """``S`` is single valued iff ``x + sigma(x)`` is strictly monotone."""
    xs = np.linspace(-10.0, 10.0, DEFAULT_RESOLUTION) if samples is None else np.sort(np.asarray(samples, float))
    w = xs + _vectorize(sigma)(xs)
    d = np.diff(w)
    if np.all(d > 0) or np.all(d < 0):
        return SingleValued(True, None)
    ref = 1.0 if d[0] > 0 else -1.0
    i = int(np.nonzero(d * ref <= 0)[0][0])
    return SingleValued(False, (float(xs[i]), float(xs[i + 1])))


@dataclass(frozen=True)
class HypothesisStatus:
    status: str  # "satisfied" | "violated" | "not_applicable"
    witness: Optional[tuple] = None
    constants: dict = field(default_factory=dict)
    note: str = ""

    def __post_init__(self):
        if self.status == "violated" and self.witness is None:
            raise ValueError("a violated hypothesis needs a witness")

    @property
    def satisfied(self) -> bool:
        return self.status == "satisfied"

    @property
    def violated(self) -> bool:
        return self.status == "violated"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "witness": None if self.witness is None else [float(v) for v in self.witness],
            "constants": {k: float(v) for k, v in self.constants.items()},
            "note": self.note,
        }


SAT = "satisfied"
VIOL = "violated"
NA = "not_applicable"


@dataclass(frozen=True)
class HypothesisReport:
    """Per-hypothesis sample verdicts.  Rotated forms carry a ``~`` prefix."""

    entries: dict

    def __getitem__(self, key) -> HypothesisStatus:
        return self.entries[key]

    def to_dict(self) -> dict:
        return {k: v.to_dict() for k, v in self.entries.items()}


def _first(points: np.ndarray, mask: np.ndarray):
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return None
    x, y = points[idx[0]]
    return float(x), float(y)


def _verdict(points, bad_mask, constants=None, note=""):
    w = _first(points, bad_mask)
    if w is None:
        return HypothesisStatus(SAT, None, constants or {}, note)
    return HypothesisStatus(VIOL, w, constants or {}, note)


def _decay_at_infinity(points: np.ndarray, measure: np.ndarray, bound: float):
    """Trend test for ``measure -> 0`` as ``|(x, y)| -> infinity``."""
    radius = np.hypot(points[:, 0], points[:, 1])
    outer = radius >= bound / 2
    inner = (radius >= bound / 4) & ~outer
    if not outer.any() or not inner.any():
        return HypothesisStatus(NA, note="no samples at large radius")
    sup_out, sup_in = float(measure[outer].max()), float(measure[inner].max())
    if sup_out <= 1e-9 or sup_out <= 0.75 * sup_in:
        return HypothesisStatus(SAT, None, {"outer_sup": sup_out, "inner_sup": sup_in})
    i = np.nonzero(outer)[0][int(np.argmax(measure[outer]))]
    return HypothesisStatus(VIOL, (float(points[i, 0]), float(points[i, 1])),
                            {"outer_sup": sup_out, "inner_sup": sup_in})


def _sector(points, in_region, strict_zero=True):
    """Tightest ``a |x| <= |y| <= b |x|`` on the region."""
    pts = points[in_region]
    if len(pts) == 0:
        return HypothesisStatus(NA, note="no samples in region")
    ax, ay = np.abs(pts[:, 0]), np.abs(pts[:, 1])
    vertical = (ax == 0) & (ay > 0)
    if vertical.any():
        return HypothesisStatus(VIOL, tuple(float(v) for v in pts[np.argmax(vertical)]))
    nz = ax > 0
    ratio = np.where(nz, ay / np.where(nz, ax, 1.0), np.nan)
    a, b = float(np.nanmin(ratio)), float(np.nanmax(ratio))
    if a <= 0:
        i = int(np.nanargmin(ratio))
        return HypothesisStatus(VIOL, (float(pts[i, 0]), float(pts[i, 1])), {"a": a, "b": b})
    return HypothesisStatus(SAT, None, {"a": a, "b": b})


def _rotated_sector(points, in_region):
    pts = points[in_region]
    nz = pts[:, 0] != 0
    if not nz.any():
        return HypothesisStatus(NA, note="no samples in region")
    ratio = np.abs(pts[nz, 1]) / np.abs(pts[nz, 0])
    m = float(ratio.max())
    if m < 1:
        return HypothesisStatus(SAT, None, {"mu": m})
    i = np.nonzero(nz)[0][int(np.argmax(ratio))]
    return HypothesisStatus(VIOL, (float(pts[i, 0]), float(pts[i, 1])), {"mu": m})


def check_hypotheses(sigma: BoundaryRelation, samples: Optional[int] = None,
                     q: Optional[Callable[[float], float]] = None, M: float = 1.0) -> HypothesisReport:
    """Evaluate every hypothesis on a finite sample of the relation.

    ``q`` enables the rate-function hypotheses; ``M`` is the ball radius used
    by the local sector and rate-function checks.
    """
    n = samples or DEFAULT_RESOLUTION
    D = sigma.domain_bound
    grid = np.linspace(-D, D, n)
    pts = np.vstack([sigma.probe_points(), sigma.sample_points(grid)])
    S = rotate_relation(sigma)
    x, y = pts[:, 0], pts[:, 1]
    nonzero = (x != 0) | (y != 0)
    radius = np.hypot(x, y)
    ent = {}

    ent["H1"] = (HypothesisStatus(SAT) if sigma.contains(0.0, 0.0)
                 else HypothesisStatus(VIOL, (0.0, 0.0), note="origin not in relation"))

    # rotated samples: every branch over the u-grid
    ugrid = np.concatenate([np.array(_CANONICAL), np.linspace(-D, D, n)])
    rot, missing, multi = [], None, None
    for u in ugrid:
        try:
            vals = S(float(u))
        except (NoBranchFound, EmptyValueSet):
            vals = ()
        except BranchOverflow:
            # too many branches: a vertical piece of the rotated graph
            if multi is None:
                multi = (float(u), float(u))
            continue
        if not vals and missing is None:
            missing = (float(u), float("nan"))
        if len(vals) > 1 and multi is None:
            multi = (float(u), float(vals[1]))
        rot.extend((float(u), float(v)) for v in vals)
    rot = np.array(rot, dtype=float).reshape(-1, 2)
    if missing is not None:
        ent["H2"] = HypothesisStatus(VIOL, missing, note="S(u) empty")
    else:
        growth = float(np.max(np.abs(rot[:, 1]) / (1.0 + np.abs(rot[:, 0]))))
        ent["H2"] = HypothesisStatus(SAT, None, {"growth": growth}, "linear growth on samples")
    ent["H3"] = HypothesisStatus(SAT) if multi is None else HypothesisStatus(VIOL, multi, note="two branches")

    ent["H4"] = _verdict(pts, x * y < 0)
    ent["H4'"] = _verdict(pts, nonzero & (x * y <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        big, small = np.maximum(np.abs(x), np.abs(y)), np.minimum(np.abs(x), np.abs(y))
        ratio = np.where(big > 0, small / np.where(big > 0, big, 1.0), 0.0)
    ent["H5"] = _decay_at_infinity(pts, ratio, D)
    ent["H7"] = _sector(pts, nonzero & (radius <= M))
    ent["H7"].constants["M"] = M
    ent["H8"] = _sector(pts, radius >= M)
    ent["H8"].constants["M"] = M

    ru, rv = rot[:, 0], rot[:, 1]
    rrad = np.hypot(ru, rv)
    ent["~H4"] = _verdict(rot, np.abs(rv) > np.abs(ru) + 1e-10 * np.maximum(1.0, np.abs(ru)))
    ent["~H4'"] = _verdict(rot, ((ru != 0) | (rv != 0)) & (np.abs(rv) >= np.abs(ru)))
    with np.errstate(divide="ignore", invalid="ignore"):
        defect = np.where(ru != 0, 1.0 - np.abs(rv) / np.where(ru != 0, np.abs(ru), 1.0), 0.0)
    ent["~H5"] = _decay_at_infinity(rot, np.abs(defect), D)
    ent["~H7"] = _rotated_sector(rot, (rrad <= M) & (rrad > 0))
    ent["~H7"].constants["M"] = M
    ent["~H8"] = _rotated_sector(rot, rrad >= M)
    ent["~H8"].constants["M"] = M

    if q is None:
        for key in ("H10", "H11", "~H10", "~H11"):
            ent[key] = HypothesisStatus(NA, note="no rate function supplied")
    else:
        qv = _vectorize(getattr(q, "q", q))
        ball = radius <= M
        ax, ay = np.abs(x), np.abs(y)
        tol = 1e-12
        ent["H10"] = _verdict(pts, ball & ((qv(ax) > ay + tol) | (qv(ay) > ax + tol)), {"M": M})
        ent["H11"] = _verdict(pts, ball & (ay > qv(ax) + tol) & (ax > qv(ay) + tol), {"M": M})
        rball = rrad <= M
        # Q only on the ball: a rate law may be undefined beyond it
        Qv = np.array([q_to_Q(q, abs(float(u))) if inside else np.nan for u, inside in zip(ru, rball)])
        ent["~H10"] = _verdict(rot, rball & (np.abs(rv) > Qv + 1e-10), {"M": M})
        ent["~H11"] = _verdict(rot, rball & (np.abs(rv) < Qv - 1e-10), {"M": M})
    return HypothesisReport(ent)
