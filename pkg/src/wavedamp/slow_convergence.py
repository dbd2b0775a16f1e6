"""Initial data whose energy decays slower than any prescribed rate.

Under a damping confined to ``|x| <= C/sqrt2 or |y| <= C/sqrt2`` every step
shrinks a value by at most ``C``.  Stacking ever taller, ever thinner plateaus
``k^{1/p}`` on cells whose widths come from a convex majorant of the target
rate then keeps the ``L^p`` norm above the target for as long as the stack
lasts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .damping_maps import RotatedMap
from .errors import TruncationTooCoarse
from .riemann_core import SimpleProfile, Trajectory, energy_at_time, energy_p

TAIL_FRACTION = 1e-4
RAMP = 1e-6
K_LIMIT = 50_000_000


@dataclass(frozen=True)
class SlowSpec:
    """Target rate ``phi`` (decreasing, positive, tending to 0), finite norm
    index ``p``, saturation constant ``C`` and optional truncation ``K_max``."""

    phi: Callable[[float], float]
    p: float = 2.0
    C: float = 1.0
    K_max: Optional[int] = None
    name: str = "custom"

    def __post_init__(self):
        if not (1 <= self.p < math.inf):
            raise ValueError("p must be finite and at least 1")
        if not self.C > 0:
            raise ValueError("C must be positive")
        ts = np.concatenate([[0.0], np.logspace(-2, 6, 81)])
        vals = [float(self.phi(t)) for t in ts]
        if any(v <= 0 for v in vals):
            raise ValueError("phi must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("phi must be decreasing")

    def horizon(self, K: int) -> int:
        """Largest ``n`` with ``3^p n^p <= K``: the steps the truncation covers."""
        return int(math.floor(K ** (1 / self.p) / 3 + 1e-12))


def build_sequences(phit: Callable[[float], float], N: int) -> tuple:
    """``b_0 = phit(0)``, ``b_1 = max(b_0 - 1, phit(1))``,
    ``b_n = max(2 b_{n-1} - b_{n-2}, phit(n))``; ``a_0 = 1``,
    ``a_n = b_{n-1} - b_n``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    b = [0.0] * (N + 1)
    b[0] = float(phit(0))
    b[1] = max(b[0] - 1.0, float(phit(1)))
    for n in range(2, N + 1):
        b[n] = max(2.0 * b[n - 1] - b[n - 2], float(phit(n)))
    b = np.array(b)
    a = np.empty(N + 1)
    a[0] = 1.0
    a[1:] = b[:-1] - b[1:]
    return a, b


def scaled_rate(spec: SlowSpec) -> Callable[[float], float]:
    """``3^{p-1} (phi(2(t^{1/p}/3 - 1)) / C)^p`` for ``t >= 3^p``, continued
    below ``3^p`` by a line with the one-sided slope at ``3^p``.

    A steeper-than-flat ramp matters: the sequence recursion extrapolates
    linearly, so a nearly flat start would keep ``b_n`` up for ages and leave
    almost no mass on the plateaus.
    """
    p, C, phi = spec.p, spec.C, spec.phi
    t0 = 3.0 ** p
    scale = 3.0 ** (p - 1)

    def core(t):
        return scale * (float(phi(2 * (t ** (1 / p) / 3 - 1))) / C) ** p

    top = core(t0)
    h = 1e-6 * t0
    slope = max((top - core(t0 + h)) / h, RAMP * top)

    def phit(t):
        if t >= t0:
            return core(t)
        return top + slope * (t0 - t)

    return phit


def _default_K(phit) -> int:
    """Smallest ``K`` with ``b_K < TAIL_FRACTION * b_0``."""
    b0 = float(phit(0))
    b1 = max(b0 - 1.0, float(phit(1)))
    prev2, prev = b0, b1
    K = 1
    while prev >= TAIL_FRACTION * b0:
        K += 1
        if K > K_LIMIT:
            raise TruncationTooCoarse("rate decays too slowly for the default truncation")
        prev2, prev = prev, max(2.0 * prev - prev2, float(phit(K)))
    return K


@dataclass(frozen=True)
class SlowInitial:
    profile: SimpleProfile
    a: np.ndarray
    b: np.ndarray
    K_max: int
    tail_mass: float
    horizon: int


def build_initial(spec: SlowSpec) -> SlowInitial:
    """Plateau ``C k^{1/p}`` on the cell ``(a_{k+1}, a_k]`` for ``k <= K_max``,
    zero elsewhere on ``[-1, 1]``."""
    phit = scaled_rate(spec)
    K = spec.K_max if spec.K_max is not None else _default_K(phit)
    a, b = build_sequences(phit, K + 1)
    k = np.arange(K + 1, dtype=float)
    # cell k is (a[k+1], a[k]]; empty cells (equal ends) are dropped
    lo, hi = a[1:K + 2], a[:K + 1]
    keep = hi > lo
    vals = spec.C * k[keep] ** (1 / spec.p)
    edges_hi, edges_lo = hi[keep], lo[keep]
    # ascending order: [-1, a_{K+1}] is zero, then cells from the innermost out
    bp = np.concatenate([[-1.0], edges_lo[::-1], [edges_hi[0]]])
    values = np.concatenate([[0.0], vals[::-1]])
    prof = SimpleProfile(bp, values)
    mass = math.fsum(k[1:] * (a[1:K + 1] - a[2:K + 2]))  # sum_k k (a_k - a_{k+1})
    tail = b[K] + K * a[K + 1]
    if tail > 0.01 * (mass + tail):
        raise TruncationTooCoarse(f"tail mass {tail!r} exceeds 1% of the norm {mass + tail!r}")
    return SlowInitial(prof, a, b, K, tail * spec.C ** spec.p, spec.horizon(K))


@dataclass(frozen=True)
class SlowReport:
    holds: bool
    horizon: int
    rows: list
    first_violation: Optional[tuple]
    time_checked: bool
    time_violation: Optional[tuple] = None
    map_certified: Optional[bool] = None
    notes: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["n,norm,phi_bound"]
        lines += [f"{n},{v:.17g},{f:.17g}" for n, v, f in self.rows]
        return "\n".join(lines) + "\n"


def saturation_certified(S: RotatedMap, C: float, samples: int = 401) -> bool:
    """``|x| - C <= |y| <= |x|`` for every branch on a sample grid."""
    for x in np.linspace(-10 * C, 10 * C, samples):
        for y in S(float(x)):
            if not (abs(x) - C - 1e-12 <= abs(y) <= abs(x) + 1e-12 * max(1.0, abs(x))):
                return False
    return True


def verify_lower_bound(traj: Trajectory, spec: SlowSpec, t_grid=None) -> SlowReport:
    """Check ``||g_n||_p >= phi(2(n-1))`` for ``1 <= n <= N`` and, when the
    profiles were kept, ``e_p(t) >= phi(t)`` on a time grid."""
    p = spec.p
    rows = []
    first = None
    for n in range(1, traj.N + 1):
        v = traj.norm(n, p)
        f = float(spec.phi(2 * (n - 1)))
        rows.append((n, v, f))
        if first is None and v < f:
            first = (n, v, f)
    time_checked = traj.values is not None
    tviol = None
    if time_checked:
        ts = np.arange(0, 20 * traj.N + 1) * 0.1 if t_grid is None else np.asarray(t_grid, float)
        for t in ts:
            e = energy_at_time(traj, float(t), p).value
            if e < float(spec.phi(t)):
                tviol = (float(t), e, float(spec.phi(t)))
                break
    holds = first is None and tviol is None
    return SlowReport(holds, traj.N, rows, first, time_checked, tviol,
                      saturation_certified(traj.map, spec.C))


# ---------------------------------------------------------------------------
# rate tags


def parse_rate(tag: str) -> Callable[[float], float]:
    """``inv-poly:k[,shift]`` is ``(t + shift)^-k`` (shift defaults to 1),
    ``inv-log`` is ``1/ln(t + e)``, ``custom-table:file.csv`` interpolates
    ``(t, phi)`` rows and decays like ``1/t`` past the last row."""
    kind, _, arg = tag.partition(":")
    if kind == "inv-poly":
        parts = [float(v) for v in arg.split(",")] if arg else [1.0]
        k = parts[0]
        shift = parts[1] if len(parts) > 1 else 1.0
        return lambda t: (t + shift) ** -k
    if kind == "inv-log":
        return lambda t: 1.0 / math.log(t + math.e)
    if kind == "custom-table":
        with open(arg, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and not _numeric(rows[0][0]):
            rows = rows[1:]
        ts = np.array([float(r[0]) for r in rows])
        fs = np.array([float(r[1]) for r in rows])

        def phi(t):
            if t >= ts[-1]:
                return float(fs[-1] * (1 + ts[-1]) / (1 + t))
            return float(np.interp(t, ts, fs))

        return phi
    raise ValueError(f"unknown rate tag {tag!r}")


def _numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def profile_energy(init: SlowInitial, p: float) -> float:
    return energy_p(init.profile, p)
