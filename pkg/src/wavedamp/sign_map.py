"""Closed forms for the sign boundary relation.

With the rays at height ``sqrt2`` the rotated map is single valued:
``S(x) = x`` on ``[-1, 1]`` and a reflection ``+-2 - x`` outside.  Every
trajectory reaches a fixed point after finitely many steps.
"""

from __future__ import annotations

import math

import numpy as np

from .riemann_core import SimpleProfile


def sign_S(x: float) -> float:
    x = float(x)
    if x > 1.0:
        return 2.0 - x
    if x < -1.0:
        return -2.0 - x
    return x


def sign_S_array(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.where(xs > 1.0, 2.0 - xs, np.where(xs < -1.0, -2.0 - xs, xs))


def _steps_to_settle(ax):
    """Number of reflections before ``|x|`` falls into ``[-1, 1]``."""
    return np.floor((ax + 1.0) / 2.0)


def sign_iterate_closed(x: float, n: int) -> float:
    """``n``-fold iterate: ``(-1)^k sign(x) (|x| - 2k)`` with ``k = min(n, floor((|x|+1)/2))``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    x = float(x)
    if x == 0.0:
        return 0.0
    ax = abs(x)
    k = min(n, int(_steps_to_settle(ax)))
    return (-1.0) ** k * math.copysign(1.0, x) * (ax - 2.0 * k) + 0.0


def sign_iterate_closed_array(xs, n: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    ax = np.abs(xs)
    k = np.minimum(float(n), _steps_to_settle(ax))
    parity = np.where(np.mod(k, 2.0) == 0, 1.0, -1.0)
    return np.where(xs == 0, 0.0, parity * np.sign(xs) * (ax - 2.0 * k)) + 0.0


def limit_profile(g0: SimpleProfile) -> SimpleProfile:
    """Cellwise limit reached once every cell has settled into ``[-1, 1]``."""
    v = g0.values
    ax = np.abs(v)
    K = _steps_to_settle(ax)
    parity = np.where(np.mod(K, 2.0) == 0, 1.0, -1.0)
    return SimpleProfile(g0.breakpoints, np.where(v == 0, 0.0, parity * np.sign(v) * (ax - 2.0 * K)) + 0.0)


def settle_time(g0: SimpleProfile) -> float:
    """Time after which the solution is the 2-periodic limit: ``2 floor((|g0|_inf + 1)/2)``."""
    return 2.0 * math.floor((float(np.max(np.abs(g0.values))) + 1.0) / 2.0)


def scaled_sign_S(x: float, M: float) -> float:
    """Rotated map for rays at height ``M``: conjugate of the normalized map by ``M/sqrt2``."""
    c = M / math.sqrt(2.0)
    return c * sign_S(x / c)
