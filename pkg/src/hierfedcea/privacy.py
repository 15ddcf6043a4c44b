"""Clipping, the Gaussian mechanism and Renyi-DP accounting.

Noise is added once per round to each tier's update delta at the client
boundary. Accounting composes the Gaussian mechanism's RDP curve
``alpha / (2 z^2)`` over rounds (full participation, no subsampling) and
converts to (epsilon, delta) with the standard ``log(1/delta) / (alpha - 1)``
term, minimized over a geometric grid of orders and then refined between
neighbouring grid points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

ALPHA_MIN = 1.25
ALPHA_MAX = 512.0
ALPHA_GRID = np.geomspace(ALPHA_MIN, ALPHA_MAX, 200)

SENSITIVITY_CONVENTIONS = ("clip", "per_sample")


class PrivacyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DpConfig:
    """Per-tier Gaussian-mechanism settings.

    ``sensitivity`` picks how the noise scale relates to the clip bound:
    ``"clip"`` releases deltas clipped to ``clip_c`` with noise std
    ``z * clip_c``; ``"per_sample"`` treats one record's influence on the
    delta as ``clip_c / n_k`` and scales the noise std to ``z * clip_c / n_k``.
    The accountant depends only on ``z`` either way.
    """

    clip_c: float = 1.0
    z_g: float = 0.8
    z_c: float = 1.0
    delta: float = 1e-5
    sensitivity: str = "clip"

    def __post_init__(self):
        if not self.clip_c > 0:
            raise PrivacyConfigError("clip_c must be positive")
        if self.z_g < 0 or self.z_c < 0:
            raise PrivacyConfigError("noise multipliers must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise PrivacyConfigError("delta must lie in (0, 1)")
        if self.sensitivity not in SENSITIVITY_CONVENTIONS:
            raise PrivacyConfigError(f"sensitivity must be one of {SENSITIVITY_CONVENTIONS}")

    def noise_std(self, z: float, n_k: int) -> float:
        if self.sensitivity == "clip":
            return z * self.clip_c
        return z * self.clip_c / max(int(n_k), 1)


def clip(v: np.ndarray, c: float) -> np.ndarray:
    """Project ``v`` onto the L2 ball of radius ``c``."""
    if not c > 0:
        raise PrivacyConfigError("clip bound must be positive")
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= c:
        return v.copy()
    return v * (c / norm)


def gaussianize(delta_v: np.ndarray, z: float, c: float, rng: np.random.Generator) -> np.ndarray:
    """Add independent N(0, (z c)^2) noise to every coordinate; identity at ``z = 0``."""
    if z < 0:
        raise PrivacyConfigError("z must be non-negative")
    delta_v = np.asarray(delta_v, dtype=float)
    if z == 0:
        return delta_v.copy()
    return delta_v + rng.normal(0.0, z * c, size=delta_v.shape)


def _eps_of_alpha(alpha, z, rounds, delta):
    return rounds * alpha / (2.0 * z * z) + math.log(1.0 / delta) / (alpha - 1.0)


def _check_accountant_args(z, rounds, q, delta):
    if q != 1.0:
        raise PrivacyConfigError("only full participation (q = 1) is accounted")
    if rounds < 1:
        raise PrivacyConfigError("rounds must be >= 1")
    if not 0.0 < delta < 1.0:
        raise PrivacyConfigError("delta must lie in (0, 1)")
    if z < 0:
        raise PrivacyConfigError("z must be non-negative")


def rdp_epsilon(z: float, rounds: int, q: float = 1.0, delta: float = 1e-5) -> float:
    """Epsilon after ``rounds`` Gaussian releases with noise multiplier ``z``.

    Returns ``math.inf`` for ``z = 0``.
    """
    _check_accountant_args(z, rounds, q, delta)
    if z == 0:
        return math.inf
    vals = _eps_of_alpha(ALPHA_GRID, z, rounds, delta)
    i = int(np.argmin(vals))
    lo = ALPHA_GRID[max(i - 1, 0)]
    hi = ALPHA_GRID[min(i + 1, len(ALPHA_GRID) - 1)]
    best = float(vals[i])
    if hi > lo:
        res = minimize_scalar(lambda a: _eps_of_alpha(a, z, rounds, delta), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    return best


def rdp_epsilon_analytic(z: float, rounds: int, delta: float = 1e-5) -> float:
    """Closed-form minimum over alpha restricted to [1.25, 512]."""
    _check_accountant_args(z, rounds, 1.0, delta)
    if z == 0:
        return math.inf
    a = rounds / (2.0 * z * z)
    log_term = math.log(1.0 / delta)
    alpha = 1.0 + math.sqrt(log_term / a)
    alpha = min(max(alpha, ALPHA_MIN), ALPHA_MAX)
    return _eps_of_alpha(alpha, z, rounds, delta)


def solve_z(target_eps: float, rounds: int, delta: float = 1e-5, tol: float = 1e-10) -> float:
    """Smallest noise multiplier whose accounted epsilon does not exceed ``target_eps``."""
    if target_eps == math.inf:
        return 0.0
    if not target_eps > 0:
        raise PrivacyConfigError("target epsilon must be positive")
    lo, hi = 1e-4, 1.0
    while rdp_epsilon(hi, rounds, 1.0, delta) > target_eps:
        hi *= 2.0
        if hi > 1e8:
            raise PrivacyConfigError(f"epsilon {target_eps} unreachable")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if rdp_epsilon(mid, rounds, 1.0, delta) > target_eps:
            lo = mid
        else:
            hi = mid
    return hi


def excess_risk_bound(d: int, delta: float, n: int, eps: float) -> float:
    """``d log(1/delta) / (n eps^2)`` with the hidden constant taken as 1."""
    if min(d, delta, n, eps) <= 0:
        raise PrivacyConfigError("all arguments must be positive")
    return d * math.log(1.0 / delta) / (n * eps * eps)


@dataclass
class PrivacyLedger:
    """Released rounds and accounted epsilon per shared tier."""

    z_g: float = 0.8
    z_c: float = 1.0
    delta: float = 1e-5
    rounds_g: int = 0
    rounds_c: int = 0
    eps_g: float = 0.0
    eps_c: float = 0.0
    eps_l: float = field(default=math.inf)

    def record(self, tier_g: bool = True, tier_c: bool = True) -> None:
        if tier_g:
            self.rounds_g += 1
            self.eps_g = rdp_epsilon(self.z_g, self.rounds_g, 1.0, self.delta)
        if tier_c:
            self.rounds_c += 1
            self.eps_c = rdp_epsilon(self.z_c, self.rounds_c, 1.0, self.delta)

    def snapshot(self) -> dict:
        return {"rounds_g": self.rounds_g, "rounds_c": self.rounds_c,
                "eps_g": self.eps_g, "eps_c": self.eps_c}
