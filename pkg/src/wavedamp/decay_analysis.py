"""Rate laws, decay regimes and decay bounds for the iterated dynamics.

A rate law ``q`` bounds the boundary relation from one side; its rotated
counterpart ``Q`` bounds one step of the real iteration, so iterates of ``Q``
bound the energy of every solution.  Everything here works in the log domain
when values get small: iterates of ``Q`` routinely fall below the smallest
double long before the asymptotics settle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, interpolate, optimize, stats

from .damping_maps import (
    SQRT2,
    ExplicitRotated,
    RotatedMap,
    check_hypotheses,
    q_to_Q,
    rotate_relation,
)
from .errors import (
    AmbiguousRegime,
    BracketFailure,
    ConstructionFailure,
    FitFailure,
    HypothesisMismatch,
    MonotonicityViolation,
    QuadratureFailure,
    RegimeMismatch,
)
from .riemann_core import INF, Trajectory, _norm_key, energy_at_time

HALF_LN2 = 0.5 * math.log(2.0)
LN_SQRT2 = HALF_LN2
REGIME_TOL = 1e-9
SNAP_TOL = 1e-12
UNDERFLOW = 1e-300
FD_STEP = 1e-6

QPRIME_ZERO = "QPrimeZero"
QPRIME_BETWEEN = "QPrimeBetween"
QPRIME_ONE = "QPrimeOne"


# ---------------------------------------------------------------------------
# derivatives


def fd_derivative(f: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    """Central difference, odd reflection below 0, Richardson when unstable."""

    def ev(s):
        return -float(f(-s)) if s < 0 else float(f(s))

    d1 = (ev(x + h) - ev(x - h)) / (2 * h)
    d2 = (ev(x + h / 2) - ev(x - h / 2)) / h
    if abs(d1 - d2) <= 1e-8 * max(1.0, abs(d2)):
        return d2
    return (4 * d2 - d1) / 3


def _slope_at_zero(f: Callable[[float], float], h: float = FD_STEP) -> float:
    """``f'(0)`` for ``f(0) = 0``: Richardson on the secant slopes ``f(h)/h``."""
    s1 = float(f(h)) / h
    s2 = float(f(h / 2)) / (h / 2)
    return 2 * s2 - s1


# ---------------------------------------------------------------------------
# rate laws


def _default_ratio(q):
    def ratio(ls):
        x = math.exp(ls)
        return float(q(x)) / x if x > 0 else 0.0

    return ratio


@dataclass(frozen=True)
class RateLaw:
    """A sector-bounding function ``q`` with ``q(0) = 0`` and ``0 < q(x) < x``.

    ``ratio(ls)`` is ``q(x)/x`` and ``log_m(ls)`` is ``ln(1 - q(x)/x)`` at
    ``x = exp(ls)``; closed forms keep full relative accuracy near zero.
    ``log_Q`` may be given directly when the law is built from ``Q``.
    """

    q: Callable[[float], float]
    q_prime: Optional[Callable[[float], float]] = None
    params: dict = field(default_factory=dict)
    valid_radius: float = 1.0
    name: str = "custom"
    ratio: Optional[Callable[[float], float]] = None
    log_m: Optional[Callable[[float], float]] = None
    q_prime0: Optional[float] = None
    log_Q_direct: Optional[Callable[[float], float]] = None
    validate: bool = True

    def __post_init__(self):
        if not self.valid_radius > 0:
            raise ValueError("valid_radius must be positive")
        if self.ratio is None:
            object.__setattr__(self, "ratio", _default_ratio(self.q))
        if self.log_m is None:
            r = self.ratio
            object.__setattr__(self, "log_m", lambda ls: math.log1p(-r(ls)))
        if self.validate:
            self._check()

    def _check(self):
        if float(self.q(0.0)) != 0.0:
            raise ValueError(f"{self.name}: q(0) must be 0")
        top = min(self.valid_radius, 1e3)
        for x in top * np.logspace(-12, 0, 49):
            x = float(x)
            qx = float(self.q(x))
            if not 0 < qx < x:
                raise ValueError(f"{self.name}: need 0 < q(x) < x, fails at x={x!r}")
            d = self.derivative(x)
            if not abs(d) < 1:
                raise ValueError(f"{self.name}: need |q'(x)| < 1, fails at x={x!r}")

    def __call__(self, x: float) -> float:
        return float(self.q(x))

    def derivative(self, x: float) -> float:
        if self.q_prime is not None:
            return float(self.q_prime(x))
        return fd_derivative(self.q, x)

    def prime_at_zero(self) -> float:
        if self.q_prime0 is not None:
            return float(self.q_prime0)
        return _slope_at_zero(self.q)

    def _solve_eta(self, lx: float) -> float:
        """``ln(y/x)`` where ``y + q(y) = sqrt2 x``."""
        r = self.ratio
        le = LN_SQRT2 - math.log1p(r(lx))
        for _ in range(80):
            nxt = LN_SQRT2 - math.log1p(r(lx + le))
            if abs(nxt - le) <= 1e-16:
                return nxt
            le = nxt
        return optimize.brentq(lambda e: e + math.log1p(r(lx + e)) - LN_SQRT2,
                               -LN_SQRT2, LN_SQRT2, xtol=1e-17, rtol=4 * np.finfo(float).eps)

    def log_Q(self, lx: float) -> float:
        """``ln Q(exp(lx))`` for the rotated rate function."""
        if self.log_Q_direct is not None:
            return float(self.log_Q_direct(lx))
        ly = lx + self._solve_eta(lx)
        return ly + self.log_m(ly) - LN_SQRT2

    def Q(self, x: float) -> float:
        return q_to_Q(self, x)

    def as_map(self, scale: float = 1.0, sign: float = 1.0) -> RotatedMap:
        """Single-valued odd map ``S(x) = sign * scale * Q(|x|)``."""
        k = sign * scale

        def S(x):
            return math.copysign(k * q_to_Q(self, abs(x)), x) if x != 0 else 0.0

        vec = np.vectorize(S, otypes=[float])
        rel = ExplicitRotated(func=lambda x: (S(x),), vectorized=vec, name=f"Q[{self.name}]x{k:g}")
        return rotate_relation(rel)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "valid_radius": self.valid_radius}


def _scan_radius(q, qp, upper: float, n: int = 2000) -> float:
    """Largest grid radius on which ``0 < q < x`` and ``|q'| < 1`` hold."""
    last = None
    for x in np.linspace(upper / n, upper, n):
        x = float(x)
        try:
            ok = 0 < q(x) < x and abs(qp(x)) < 1
        except (ValueError, ZeroDivisionError, OverflowError):
            ok = False
        if not ok:
            break
        last = x
    if last is None:
        raise ValueError("rate law invalid on every probe")
    return last


def power_law(alpha: float) -> RateLaw:
    """``q(s) = s**alpha`` with ``alpha > 1``."""
    if not alpha > 1:
        raise ValueError("power law needs alpha > 1")
    q = lambda s: s ** alpha
    qp = lambda s: alpha * s ** (alpha - 1)
    ratio = lambda ls: math.exp((alpha - 1) * ls)
    log_m = lambda ls: math.log1p(-math.exp((alpha - 1) * ls))
    radius = alpha ** (-1.0 / (alpha - 1)) * (1 - 1e-9)
    return RateLaw(q, qp, {"alpha": alpha}, radius, f"power:{alpha:g}", ratio, log_m, 0.0)


def linear_law(c: float) -> RateLaw:
    """``q(s) = c s`` with ``0 < c < 1``."""
    if not 0 < c < 1:
        raise ValueError("linear law needs 0 < c < 1")
    return RateLaw(lambda s: c * s, lambda s: c, {"c": c}, math.inf, f"linear:{c:g}",
                   lambda ls: c, lambda ls: math.log1p(-c), c)


def logpow_law(p: float) -> RateLaw:
    """``q(s) = s / (-ln s)**p`` near zero."""
    if not p > 0:
        raise RegimeMismatch("logpow law needs p > 0")

    def q(s):
        return 0.0 if s == 0 else s / (-math.log(s)) ** p

    def qp(s):
        if s == 0:
            return 0.0
        L = -math.log(s)
        return L ** -p + p * L ** (-p - 1)

    radius = _scan_radius(q, qp, 1 - 1e-12)
    return RateLaw(q, qp, {"p": p}, radius, f"logpow:{p:g}",
                   lambda ls: (-ls) ** -p, lambda ls: math.log1p(-((-ls) ** -p)), 0.0)


def polynomial_law(coeffs: Sequence[float], radius: Optional[float] = None) -> RateLaw:
    """``q(s) = sum_k coeffs[k-1] s**k`` (no constant term)."""
    c = [float(v) for v in coeffs]
    if not c or all(v == 0 for v in c):
        raise ValueError("polynomial law needs a nonzero coefficient")
    q = lambda s: sum(ck * s ** (k + 1) for k, ck in enumerate(c))
    qp = lambda s: sum((k + 1) * ck * s ** k for k, ck in enumerate(c))

    def ratio(ls):
        x = math.exp(ls)
        return sum(ck * x ** k for k, ck in enumerate(c))

    if c[0] == 1.0:
        j = next((k for k in range(1, len(c)) if c[k] != 0), None)
        if j is None:
            raise ValueError("q = id is not a rate law")

        def log_m(ls):
            x = math.exp(ls)
            tail = -sum(c[k] * x ** (k - j) for k in range(j, len(c)))
            return j * ls + math.log(tail)
    else:
        log_m = lambda ls: math.log1p(-ratio(ls))
    if radius is None:
        radius = _scan_radius(q, qp, 10.0)
    terms = "+".join(f"{v:g}s^{k + 1}" for k, v in enumerate(c) if v)
    return RateLaw(q, qp, {"coeffs": c}, radius, f"poly:{terms}", ratio, log_m, c[0])


def table_law(xs: Sequence[float], qs: Sequence[float], name: str = "custom-table") -> RateLaw:
    """Monotone cubic interpolant through sampled ``(x, q(x))`` pairs."""
    xs, qs = np.asarray(xs, float), np.asarray(qs, float)
    if xs[0] != 0:
        xs, qs = np.concatenate([[0.0], xs]), np.concatenate([[0.0], qs])
    if np.any(np.diff(xs) <= 0):
        raise ValueError("table abscissae must be increasing")
    spline = interpolate.PchipInterpolator(xs, qs, extrapolate=False)
    dspline = spline.derivative()
    q = lambda s: float(spline(s))
    qp = lambda s: float(dspline(s))
    return RateLaw(q, qp, {"points": len(xs)}, float(xs[-1]), name, q_prime0=float(dspline(0.0)))


def load_table_law(path: str) -> RateLaw:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    xs = [float(r[0]) for r in rows]
    qs = [float(r[1]) for r in rows]
    return table_law(xs, qs, name=f"custom-table:{path}")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_rate_law(tag: str) -> RateLaw:
    """Build a rate law from ``power:a``, ``linear:c``, ``logpow:p``,
    ``poly:c1,c2,...`` or ``custom-table:file.csv``."""
    kind, _, arg = tag.partition(":")
    if kind == "power":
        return power_law(float(arg))
    if kind == "linear":
        return linear_law(float(arg))
    if kind == "logpow":
        return logpow_law(float(arg))
    if kind == "poly":
        return polynomial_law([float(v) for v in arg.split(",")])
    if kind == "custom-table":
        return load_table_law(arg)
    raise ValueError(f"unknown rate law tag {tag!r}")


def shipped_rate_laws() -> dict:
    return {
        "power:2": power_law(2.0),
        "linear:0.5": linear_law(0.5),
        "logpow:1": logpow_law(1.0),
        "logpow:2": logpow_law(2.0),
        "poly:0.5,1": polynomial_law([0.5, 1.0]),
        "poly:1,-1": polynomial_law([1.0, -1.0]),
    }


# ---------------------------------------------------------------------------
# regimes


@dataclass(frozen=True)
class Regime:
    kind: str
    q_prime0: float

    @property
    def lam(self) -> Optional[float]:
        if self.kind != QPRIME_BETWEEN:
            return None
        return 2 * math.atanh(self.q_prime0)


def classify_regime(q: RateLaw) -> Regime:
    """Regime from ``q'(0)``: 0, strictly between 0 and 1, or 1."""
    d = q.prime_at_zero()
    for edge, kind in ((0.0, QPRIME_ZERO), (1.0, QPRIME_ONE)):
        gap = abs(d - edge)
        if gap <= SNAP_TOL:
            return Regime(kind, edge)
        if gap <= REGIME_TOL:
            raise AmbiguousRegime(f"q'(0) = {d!r} is within {REGIME_TOL} of {edge}")
    if 0 < d < 1:
        return Regime(QPRIME_BETWEEN, d)
    raise AmbiguousRegime(f"q'(0) = {d!r} lies outside [0, 1]")


@dataclass(frozen=True)
class AsymptoticFit:
    regime: str
    params: dict
    fitted_constant: float
    residual: float
    horizon: int
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "params": dict(self.params),
            "fitted_constant": self.fitted_constant,
            "residual": self.residual,
            "horizon": self.horizon,
            "provenance": dict(self.provenance),
        }


# ---------------------------------------------------------------------------
# zero-derivative regime: the comparison integral


def _check_window(q: RateLaw, x0: float):
    if not 0 < x0 <= q.valid_radius / SQRT2:
        raise ValueError(f"x0 must lie in (0, {q.valid_radius / SQRT2!r}]")


def _log_integral(q: RateLaw, lo: float, hi: float) -> float:
    """``int_lo^hi du / (2 r(u + ln sqrt2))`` in the log variable ``u``."""
    r = q.ratio
    f = lambda u: 0.5 / r(u + LN_SQRT2)
    total = 0.0
    edges = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / 4.0)) + 1))
    for a, b in zip(edges[:-1], edges[1:]):
        val, err, info = integrate.quad(f, float(a), float(b), epsabs=0.0, epsrel=1e-12,
                                        limit=200, full_output=1)[:3]
        if err > 1e-10 * abs(val) + 1e-300:
            raise QuadratureFailure(f"quadrature error {err!r} on [{a!r}, {b!r}]")
        total += val
    return total


def F_integral(q: RateLaw, x0: float, z: float) -> float:
    """``F(z) = int_z^x0 dxi / qbar(xi)`` with ``qbar(s) = sqrt2 q(sqrt2 s)``."""
    _check_window(q, x0)
    if not 0 < z <= x0:
        raise ValueError("need 0 < z <= x0")
    if z == x0:
        return 0.0
    return _log_integral(q, math.log(z), math.log(x0))


def F_inverse(q: RateLaw, x0: float, n: float) -> float:
    """Solve ``F(z) = n`` by bisection in ``ln z``."""
    _check_window(q, x0)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return x0
    hi = math.log(x0)
    lo = hi
    for _ in range(400):
        lo -= math.log(10.0)
        if _log_integral(q, lo, hi) >= n:
            break
    else:
        raise BracketFailure(f"F never reaches {n!r}")
    top = hi
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _log_integral(q, mid, top) >= n:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


class EquivCondition(NamedTuple):
    bound: float
    satisfied: bool


def check_equiv_condition(q: RateLaw, x0: float, grid=None) -> EquivCondition:
    """Sup of ``F(z) qbar(z) / z`` on a log grid down to ``1e-8``.

    Bounded means the sup over the last decade exceeds the value one decade
    earlier by less than ``1e-3`` relatively.
    """
    _check_window(q, x0)
    if grid is None:
        zs = np.logspace(math.log10(x0), -8, int(round(20 * (math.log10(x0) + 8))) + 1)
    else:
        zs = np.sort(np.asarray(grid, float))[::-1]
    lz = np.log(zs)
    F = np.zeros(len(zs))
    for i in range(1, len(zs)):
        F[i] = F[i - 1] + _log_integral(q, float(lz[i]), float(lz[i - 1]))
    F += _log_integral(q, float(lz[0]), math.log(x0)) if zs[0] < x0 else 0.0
    vals = np.array([Fi * 2 * q.ratio(float(l) + LN_SQRT2) for Fi, l in zip(F, lz)])
    bound = float(vals.max())
    decade = lz >= lz[-1] + math.log(10.0)
    ref = float(vals[decade][-1]) if decade.any() else float(vals[0])
    growth = (float(vals[~decade].max()) - ref) / max(abs(bound), 1e-300)
    return EquivCondition(bound, growth <= 1e-3)


# ---------------------------------------------------------------------------
# exponential regime


def lambda_rate(q: RateLaw) -> float:
    """``lambda = 2 artanh q'(0)``, so ``exp(-lambda) = Q'(0)``."""
    reg = classify_regime(q)
    if reg.kind != QPRIME_BETWEEN:
        raise RegimeMismatch(f"lambda_rate needs q'(0) in (0, 1), got {reg.kind}")
    return 2 * math.atanh(reg.q_prime0)


class PsiSum(NamedTuple):
    partial: float
    converged: bool


def _psi(q: RateLaw, r: float, d0: float) -> float:
    r = min(r, q.valid_radius)
    ls = np.log(r) + np.linspace(-12 * math.log(10.0), 0.0, 97)
    return max(abs(q.ratio(float(v)) - d0) for v in ls)


def psi_sum_check(q: RateLaw, lam: float, K: int = 60) -> PsiSum:
    """Partial sum of ``psi(exp(-lambda k / 2))`` plus a ratio test on the tail."""
    d0 = classify_regime(q).q_prime0
    terms = [_psi(q, math.exp(-0.5 * lam * k), d0) for k in range(K)]
    tail = terms[-10:]
    if all(t == 0 for t in tail):
        ok = True
    elif any(t == 0 for t in tail):
        ok = False
    else:
        ok = all(b / a < 1 - 1e-3 for a, b in zip(tail[:-1], tail[1:]))
    return PsiSum(math.fsum(terms), ok)


# ---------------------------------------------------------------------------
# iterates of Q


@dataclass(frozen=True)
class Iterates:
    """``x_n = Q^[n](x0)``; ``values`` clamp at ``1e-300``, ``log_values`` do not."""

    values: np.ndarray
    log_values: np.ndarray
    clamped: bool

    def __len__(self):
        return len(self.values)


def iterate_Q(q, x0: float, N: int) -> Iterates:
    """Iterate the rotated rate function, switching to logs below ``1e-300``."""
    if isinstance(q, RateLaw):
        _check_window(q, x0)
    elif not x0 > 0:
        raise ValueError("x0 must be positive")
    vals = np.empty(N + 1)
    logs = np.empty(N + 1)
    x, lx = float(x0), math.log(x0)
    vals[0], logs[0] = x, lx
    clamped = False
    log_Q = getattr(q, "log_Q", None)
    for n in range(1, N + 1):
        if not clamped:
            x = q_to_Q(q, x)
            if x >= UNDERFLOW:
                lx = math.log(x)
            elif log_Q is not None:
                clamped = True
                lx = log_Q(lx)
            else:
                raise FitFailure("iterates underflow and the law has no log form")
        else:
            lx = log_Q(lx)
        vals[n] = max(x, UNDERFLOW) if not clamped else UNDERFLOW
        logs[n] = lx
    if np.any(np.diff(logs) >= 0):
        raise MonotonicityViolation("iterates stopped decreasing")
    return Iterates(vals, logs, clamped)


def _regress(x, y):
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue) ** 2


def double_log_slope(log_values: np.ndarray, lo: int, hi: int) -> float:
    """Slope of ``ln(-ln x_n)`` against ``n`` over ``lo <= n <= hi``."""
    n = np.arange(lo, hi + 1)
    return _regress(n, np.log(-np.asarray(log_values)[lo:hi + 1]))[0]


# ---------------------------------------------------------------------------
# super-exponential regime


@dataclass(frozen=True)
class SuperExpParams:
    C_star: float
    alpha: float
    x_star: float
    mu_star: float
    n2: int
    r_squared: float

    def log_bound(self, n: int) -> float:
        """``ln`` of ``C*^{-1/alpha} exp(-mu* (1+alpha)^n)``."""
        return -math.log(self.C_star) / self.alpha - self.mu_star * (1 + self.alpha) ** n

    def bound_holds(self, log_values) -> bool:
        """Check the bound from ``n2`` on, where the proof places it."""
        return all(lv <= self.log_bound(n) + 1e-12 * abs(lv)
                   for n, lv in enumerate(log_values) if n >= self.n2)


def superexp_params(q: RateLaw, x_range=(1e-6, 1e-1), x0: Optional[float] = None,
                    N: int = 30, samples: int = 200) -> SuperExpParams:
    """Fit ``|q(x) - x| <= C* 2^{-alpha/2} x^{1+alpha}`` and derive ``mu*``."""
    reg = classify_regime(q)
    if reg.kind != QPRIME_ONE:
        raise RegimeMismatch(f"superexp_params needs q'(0) = 1, got {reg.kind}")
    lo, hi = x_range
    hi = min(hi, q.valid_radius)
    lx = np.linspace(math.log(lo), math.log(hi), samples)
    ld = np.array([v + q.log_m(float(v)) for v in lx])  # ln |q(x) - x|
    slope, _, r2 = _regress(lx, ld)
    if r2 < 0.99:
        raise FitFailure(f"log-log fit R^2 = {r2:.4f} < 0.99")
    alpha = slope - 1
    if not alpha > 0:
        raise FitFailure(f"fitted alpha = {alpha!r} is not positive")
    C_star = float(np.exp(np.max(ld - (1 + alpha) * lx + 0.5 * alpha * math.log(2.0))))
    x_star = min((1 - 1e-6) * C_star ** (-1 / alpha), hi)
    if x0 is None:
        x0 = x_star / 2
    it = iterate_Q(q, x0, N)
    below = np.nonzero(it.log_values <= math.log(x_star / SQRT2))[0]
    if below.size == 0:
        raise FitFailure("iterates never enter the fitted window")
    n2 = int(below[0])
    mu_star = -math.log(x_star * C_star ** (1 / alpha)) / (1 + alpha) ** n2
    return SuperExpParams(C_star, alpha, x_star, mu_star, n2, r2)


# ---------------------------------------------------------------------------
# logarithmic rate: leading-order asymptotics


def logpow_leading_order(p: float, x0: float, N: int) -> AsymptoticFit:
    """Leading exponent of ``x_n ~ exp(-alpha_0 n^{1/(p+1)}) / sqrt2`` for
    ``q(x) = x / (-ln x)^p``, with ``alpha_0 = (2(p+1))^{1/(p+1)}``."""
    if not p > 0:
        raise RegimeMismatch("the logarithmic rate law needs p > 0")
    q = logpow_law(p)
    a0 = (2 * (p + 1)) ** (1 / (p + 1))
    it = iterate_Q(q, x0, N)
    n = np.arange(1, N + 1, dtype=float)
    expo = -(LN_SQRT2 + it.log_values[1:])
    ratio = expo / n ** (1 / (p + 1))
    at_N = float(ratio[-1])
    xi = 1.0 / expo
    drift = float((xi[-1] ** -(p + 1) - a0 ** (p + 1) * N) / N)
    params = {"p": p, "alpha0": a0, "ratio_at_N": at_N, "scaled_drift": drift}
    if p < 0.5:
        k = (1 - 2 * p) / (p + 1)
        resid = expo - a0 * n ** (1 / (p + 1))
        tail = n >= max(10.0, N / 10)
        good = tail & (resid != 0)
        slope, _, _ = _regress(np.log(n[good]), np.log(np.abs(resid[good])))
        basis = n[tail] ** k
        alpha1 = float(np.dot(basis, resid[tail]) / np.dot(basis, basis))
        params.update({"correction_exponent": k, "fitted_exponent": slope, "alpha1": alpha1})
    return AsymptoticFit(QPRIME_ZERO, params, at_N, abs(at_N - a0) / a0, N,
                         {"alpha0": "closed form", "ratio_at_N": "iterates", "alpha1": "regression"})


# ---------------------------------------------------------------------------
# a rate law with q'(0) = 1 but slower than any double exponential


@dataclass(frozen=True)
class SmoothMinorant:
    """Concave ``C^1`` minorant: piecewise-affine ``F`` with quadratic blends at
    the integers.  ``F_n``/``f_n`` are the node values and slopes."""

    F: list
    f: list
    phi: Callable[[float], float]

    @classmethod
    def build(cls, phi, n: int = 64) -> "SmoothMinorant":
        p0, p1 = float(phi(0.0)), float(phi(1.0))
        if not (p0 > 0 and p1 > p0):
            raise ConstructionFailure("minorant", "phi must be positive and increasing at 0")
        obj = cls([p0], [p1 - p0], phi)
        obj.extend(n)
        return obj

    def extend(self, n: int):
        F, f, phi = self.F, self.f, self.phi
        while len(F) <= n + 1:
            k = len(F)
            Fk = F[-1] + f[-1]
            nxt, cur = float(phi(k + 1)), float(phi(k))
            if nxt <= cur:
                raise ConstructionFailure("minorant", f"phi not increasing at {k}")
            F.append(Fk)
            f.append(f[-1] if Fk + f[-1] <= nxt else nxt - cur)

    def _locate(self, x: float):
        n = int(math.floor(x + 0.5))
        self.extend(n + 1)
        return n, x - n + 0.5

    def __call__(self, x: float) -> float:
        if x <= 0.5:
            return self.F[0] + self.f[0] * x
        n, s = self._locate(x)
        a, b = self.f[n - 1], self.f[n]
        return 0.5 * (b - a) * s * s + a * s + self.F[n] - 0.5 * a

    def deriv(self, x: float) -> float:
        if x <= 0.5:
            return self.f[0]
        n, s = self._locate(x)
        return self.f[n - 1] + (self.f[n] - self.f[n - 1]) * s


@dataclass(frozen=True)
class SlowSuperExp:
    """The constructed law plus the ingredients needed to audit it."""

    law: RateLaw
    minorant: SmoothMinorant
    table: list
    floor: float
    n0: int
    residual: float

    def Psi(self, x: float) -> float:
        return 2.0 / (x * self.minorant(x))

    def Psi_inv(self, y: float) -> float:
        return _psi_inverse(self.minorant, y)

    def U(self, y: float) -> float:
        return _U(self.minorant, y)


def _psi_inverse(m: SmoothMinorant, y: float) -> float:
    """Solve ``2 / (Z m(Z)) = y``; the left side decreases from +inf to 0."""
    lo, hi = 0.0, 1.0
    while 2.0 / (hi * m(hi)) > y:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise ConstructionFailure("inverse", f"no preimage for y={y!r}")
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        if 2.0 / (mid * m(mid)) > y:
            lo = mid
        else:
            hi = mid


def _U(m: SmoothMinorant, y: float) -> float:
    if y == 0:
        return 0.0
    Z = _psi_inverse(m, y)
    return y / (2 * Z) * (1 + Z * m.deriv(Z) / m(Z))


def construct_superexp_counterexample(phi: Callable[[float], float], x_probe: float = 0.01,
                                      horizon: int = 500) -> SlowSuperExp:
    """Build ``Q`` with ``Q'(0) = 0`` whose iterates satisfy
    ``n phi(n) + ln Q^[n](x_probe)`` bounded below over the horizon.

    In ``y = -1/ln x`` coordinates one step of ``Q`` is ``y -> y - U(y)`` with
    ``U = -Psi' o Psi^{-1} / 2`` and ``Psi(x) = 2 / (x m(x))`` for the smooth
    minorant ``m`` of ``phi``.
    """
    m = SmoothMinorant.build(phi)

    def log_Q(lx):
        L = -1.0 / lx
        return -1.0 / (L - _U(m, L))

    # U' <= 4/Z by the minorant's shape bounds, so x - U(x) increases once Z > 4
    y_star = 2.0 / (4.0 * m(4.0))
    x_star = math.exp(-1.0 / y_star)
    if not 0 < x_probe <= x_star / SQRT2:
        raise ConstructionFailure("domain", f"x_probe must lie in (0, {x_star / SQRT2!r}]")

    def Q(x):
        return math.exp(log_Q(math.log(x))) if x > 0 else 0.0

    def q(y):
        if y == 0:
            return 0.0
        lo, hi = 0.0, SQRT2 * y
        target = SQRT2 * y
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if mid + Q(mid) < target:
                lo = mid
            else:
                hi = mid
        x = 0.5 * (lo + hi)
        return (x - Q(x)) / SQRT2

    radius = (x_star + Q(x_star)) / SQRT2
    law = RateLaw(q, None, {"construction": "log-domain"}, radius, "slow-superexp",
                  q_prime0=1.0, log_Q_direct=log_Q, validate=False)

    it = iterate_Q(law, x_probe, horizon)
    ys = -1.0 / it.log_values
    resid = max(abs(ys[k + 1] - (ys[k] - _U(m, float(ys[k])))) for k in range(horizon))
    table = []
    for k in range(horizon + 1):
        table.append({"n": k, "y": float(ys[k]), "log_Q_iterate": float(it.log_values[k]),
                      "margin": k * float(phi(k)) + float(it.log_values[k])})
    margins = np.array([row["margin"] for row in table])
    n0 = 1
    while any(ys[k] < 2.0 / ((k + n0) * m(k + n0)) for k in range(horizon + 1)):
        n0 += 1
        if n0 > 10 * horizon + 1000:
            raise ConstructionFailure("witness", "no offset certifies the lower bound")
    return SlowSuperExp(law, m, table, float(margins.min()), n0, float(resid))


def downward_trend(values: Sequence[float], window: int = 100) -> bool:
    """True when the last ``window`` entries have a negative fitted slope."""
    v = np.asarray(values, float)[-window:]
    return _regress(np.arange(len(v)), v)[0] < 0


# ---------------------------------------------------------------------------
# decay bounds on trajectories


@dataclass(frozen=True)
class DecayReport:
    mode: str
    p: float
    times: np.ndarray
    energies: np.ndarray
    bounds: np.ndarray
    seq_norms: np.ndarray
    seq_bounds: np.ndarray
    constants: dict
    holds: bool
    first_violation: Optional[float]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "p": "inf" if self.p == INF else self.p,
            "holds": self.holds,
            "first_violation": self.first_violation,
            "constants": dict(self.constants),
        }


def _transitions_ok(traj: Trajectory, law: RateLaw, mode: str) -> bool:
    if traj.values is None:
        raise HypothesisMismatch("decay bounds need the stored profiles")
    lim = law.valid_radius / SQRT2
    for n in range(traj.N):
        x, y = np.abs(traj._row(n)), np.abs(traj._row(n + 1))
        for a, b in zip(x, y):
            if a > lim:
                continue
            Qa = q_to_Q(law, float(a))
            if mode == "upper" and b > Qa * (1 + 1e-12):
                return False
            if mode == "lower" and b < Qa * (1 - 1e-12):
                return False
    return True


def _Q_iter(law: RateLaw, x: float, n: int) -> float:
    if x == 0:
        return 0.0
    return float(iterate_Q(law, x, n).values[n]) if n else x


def check_decay_bounds(traj: Trajectory, q: RateLaw, mode: str, p=INF,
                       t_grid: Optional[Sequence[float]] = None) -> DecayReport:
    """Compare the trajectory's energies with the bounds driven by ``Q``.

    Upper: ``e_inf(t) <= Q^[k](e_inf(0))`` and, for finite ``p``,
    ``e_p(t) <= 2^{1/p} Q^[k](Z_p^{1/2}) + Z_p^{1/2} Q^[k](max(Z_inf, Z_p^{1/2}))``
    with ``k = floor(t/2)`` and ``Z_r = e_r(0)``.
    Lower: ``e_p(t) >= C1 Q^[k](C2)`` with ``C1 = alpha^{1/p}``, ``C2 = Q(C)``
    where ``alpha`` is the measure of the nonzero cells of ``g_0`` inside the
    law's window and ``C`` their smallest modulus.
    """
    if mode not in ("upper", "lower"):
        raise ValueError("mode must be 'upper' or 'lower'")
    p = _norm_key(p)
    if not _transitions_ok(traj, q, mode):
        raise HypothesisMismatch(f"trajectory steps violate the {mode} rate bound")
    lim = q.valid_radius / SQRT2
    N = traj.N
    if t_grid is None:
        t_grid = np.round(np.arange(0, 20 * N + 1) * 0.1, 10)
    times = np.asarray(t_grid, float)
    energies = np.array([energy_at_time(traj, float(t), p).value for t in times])
    g0 = traj._row(0)
    widths = np.diff(traj.breakpoints)
    seq_norms = np.array([traj.norm(n, p) for n in range(N + 1)])
    constants = {}
    if mode == "upper":
        Zinf = float(np.max(np.abs(g0)))
        if Zinf > lim:
            raise HypothesisMismatch(f"sup |g_0| = {Zinf!r} exceeds the law's window {lim!r}")
        if p == INF:
            seq = iterate_Q(q, Zinf, N).values if Zinf > 0 else np.zeros(N + 1)
            constants.update({"Z_inf": Zinf})
        else:
            Zp = energy_at_time(traj, 0.0, p).value
            a = math.sqrt(Zp)
            b = max(Zinf, a)
            if b > lim:
                raise HypothesisMismatch(f"sqrt(e_p(0)) = {a!r} exceeds the law's window {lim!r}")
            ia = iterate_Q(q, a, N).values if a > 0 else np.zeros(N + 1)
            ib = iterate_Q(q, b, N).values if b > 0 else np.zeros(N + 1)
            seq = 2 ** (1 / p) * ia + a * ib
            constants.update({"Z_inf": Zinf, "Z_p": Zp})
        ok_seq = seq_norms <= seq * (1 + 1e-12)
    else:
        inside = (np.abs(g0) > 0) & (np.abs(g0) <= lim)
        if not inside.any():
            raise HypothesisMismatch("g_0 has no nonzero cell inside the law's window")
        alpha = math.fsum(widths[inside])
        Cz = float(np.min(np.abs(g0[inside])))
        C1 = 1.0 if p == INF else alpha ** (1 / p)
        C2 = q_to_Q(q, Cz)
        constants.update({"alpha": alpha, "C_z": Cz, "C1": C1, "C2": C2})
        seq = C1 * iterate_Q(q, Cz, N).values
        ok_seq = seq_norms >= seq * (1 - 1e-12)
    k = np.minimum(np.floor(times / 2).astype(int), N)
    if mode == "upper":
        bounds = seq[k]
        ok = energies <= bounds * (1 + 1e-12)
    else:
        shifted = np.append(seq[1:], 0.0)  # C1 Q^[k](C2) = C1 Q^[k+1](C_z)
        bounds = shifted[k]
        ok = energies >= bounds * (1 - 1e-12)
    bad = np.nonzero(~ok)[0]
    first = float(times[bad[0]]) if bad.size else None
    holds = bool(ok.all() and ok_seq.all())
    return DecayReport(mode, p, times, energies, bounds, seq_norms, seq, constants, holds, first)


class GESResult(NamedTuple):
    C: float
    lam: float
    holds: bool


_MU_CACHE: dict = {}


def _sector_mu(S: RotatedMap) -> float:
    hit = _MU_CACHE.get(id(S))
    if hit is not None and hit[0] is S:
        return hit[1]
    if S.provenance is None:
        raise HypothesisMismatch("the map carries no boundary relation")
    rep = check_hypotheses(S.provenance)
    mus = [rep[k].constants["mu"] for k in ("~H7", "~H8") if "mu" in rep[k].constants]
    if not mus:
        raise HypothesisMismatch("no sector constant available")
    _MU_CACHE[id(S)] = (S, max(mus))
    return max(mus)


def ges_check(traj: Trajectory, p=2.0, mu: Optional[float] = None,
              t_grid: Optional[Sequence[float]] = None) -> GESResult:
    """Exponential bound ``e_p(t) <= C exp(-lambda t) e_p(0)`` with
    ``lambda = -ln(mu)/2``; ``C`` is the tightest prefactor on the grid and the
    bound counts as verified when ``C <= 1/mu``."""
    p = _norm_key(p)
    if mu is None:
        mu = _sector_mu(traj.map)
    if t_grid is None:
        t_grid = np.round(np.arange(0, 20 * traj.N + 1) * 0.1, 10)
    times = np.asarray(t_grid, float)
    e = np.array([energy_at_time(traj, float(t), p).value for t in times])
    e0 = e[0] if times[0] == 0 else energy_at_time(traj, 0.0, p).value
    if mu >= 1:
        return GESResult(math.inf, 0.0, False)
    if e0 == 0:
        return GESResult(1.0, math.inf if mu == 0 else -0.5 * math.log(mu), True)
    if mu == 0:
        late = e[times >= 2.0]
        C = float(np.max(e[times < 2.0]) / e0)
        return GESResult(C, math.inf, bool(np.all(late == 0)))
    lam = -0.5 * math.log(mu)
    C = float(np.max(e * np.exp(lam * times)) / e0)
    return GESResult(C, lam, C <= (1 / mu) * (1 + 1e-12))


# ---------------------------------------------------------------------------
# KL envelope


@dataclass(frozen=True)
class KLEnvelope:
    """Continuous majorant of sampled ``f(x, t)``: piecewise linear in ``t``
    between integers (shifted by one step), piecewise linear in ``x`` between
    dyadic points (shifted by one octave), plus ``x exp(-t)``."""

    levels: np.ndarray  # dyadic x-levels 2^k
    steps: np.ndarray  # integer times 0..T
    table: np.ndarray  # sup of f over x <= level, t >= step

    def _beta0(self, j: int, t: float) -> float:
        row = self.table[j]
        T = len(self.steps) - 1
        if t <= 1:
            return float(row[0])
        n = int(math.floor(t))
        if n >= T + 1:
            return float(row[T])
        a = n + 1 - t  # weight on f(., n-1)
        return float(a * row[n - 1] + (1 - a) * row[min(n, T)])

    def __call__(self, x: float, t: float) -> float:
        if x <= 0:
            return 0.0
        lv = self.levels
        k = int(math.ceil(math.log2(x)))  # x in (2^{k-1}, 2^k]
        j = k - int(round(math.log2(lv[0])))
        j = max(0, min(j, len(lv) - 2))
        lo, hi = lv[j] / 2, lv[j]
        if x < lo:  # below every sample: straight line down to the origin
            return x / lo * self._beta0(0, t) + x * math.exp(-t)
        a = (hi - x) / (hi - lo)  # weight on beta0(2^k)
        val = a * self._beta0(j, t) + (1 - a) * self._beta0(j + 1, t)
        return val + x * math.exp(-t)


def kl_envelope(xs: Sequence[float], ts: Sequence[float], f_samples) -> KLEnvelope:
    """Build a class-KL majorant of a sampled table ``f[i, j] = f(xs[i], ts[j])``."""
    xs, ts = np.asarray(xs, float), np.asarray(ts, float)
    f = np.asarray(f_samples, float)
    if f.shape != (len(xs), len(ts)):
        raise ValueError("f_samples must have shape (len(xs), len(ts))")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("xs and ts must be increasing")
    if np.any(np.diff(f, axis=0) < 0):
        raise MonotonicityViolation("f must be nondecreasing in x")
    if np.any(np.diff(f, axis=1) > 0):
        raise MonotonicityViolation("f must be nonincreasing in t")
    kmin = int(math.floor(math.log2(xs[xs > 0][0]))) if np.any(xs > 0) else 0
    kmax = int(math.ceil(math.log2(xs[-1]))) + 2
    levels = 2.0 ** np.arange(kmin, kmax + 1)
    T = int(math.ceil(ts[-1]))
    steps = np.arange(T + 1)
    table = np.zeros((len(levels), T + 1))
    for j, lv in enumerate(levels):
        rows = xs <= lv
        col = f[rows].max(axis=0) if rows.any() else np.zeros(len(ts))
        for n in range(T + 1):
            later = ts >= n - 1e-12
            # f at time n is bounded by the latest sample at or before n
            prior = ts <= n + 1e-12
            if prior.any():
                table[j, n] = col[prior][-1]
            elif later.any():
                table[j, n] = col[0]
    # enforce monotonicity in both directions
    table = np.maximum.accumulate(table, axis=0)
    table = np.minimum.accumulate(table, axis=1)
    return KLEnvelope(levels, steps, table)
