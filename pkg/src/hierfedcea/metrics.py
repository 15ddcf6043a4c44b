"""Control-quality, energy, convergence and statistics helpers.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RolloutTrace:
    timestamps: np.ndarray  # s
    vpd_actual: np.ndarray  # kPa
    vpd_target: np.ndarray  # kPa
    hvac_power: np.ndarray  # W (electrical)
    dehum_power: np.ndarray  # W (electrical)
    floor_area: float  # m2

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("vpd_actual", "vpd_target", "hvac_power", "dehum_power"):
            if len(getattr(self, name)) != n:
                raise MetricError(f"{name} length differs from timestamps")
        if n and (np.min(self.hvac_power) < 0 or np.min(self.dehum_power) < 0):
            raise MetricError("powers must be non-negative")
        if self.floor_area <= 0:
            raise MetricError("floor area must be positive")

    def __len__(self) -> int:
        return len(self.timestamps)


def rmse_vpd(trace: RolloutTrace) -> float:
    if len(trace) == 0:
        raise MetricError("RMSE of an empty trace is undefined")
    e = np.asarray(trace.vpd_target) - np.asarray(trace.vpd_actual)
    return float(np.sqrt(np.mean(e * e)))


def vpd_sigma(trace: RolloutTrace) -> float:
    if len(trace) < 2:
        raise MetricError("sigma needs at least two points")
    return float(np.std(trace.vpd_actual, ddof=1))


class Overshoot(NamedTuple):
    pct: float
    n_steps: int  # 0 flags "no setpoint step in the trace"


def setpoint_steps(vpd_target: np.ndarray) -> list[int]:
    """Indices where the target differs from the previous sample."""
    t = np.asarray(vpd_target)
    return [int(i) for i in np.flatnonzero(np.diff(t) != 0.0) + 1]


def overshoot_pct(trace: RolloutTrace, setpoint_changes: Sequence[int] | None = None) -> Overshoot:
    """Mean overshoot beyond each new target, as percent of the step size.

    The window after a step runs until the next step or the end of the
    trace. Downward steps count undershoot below the new target.
    """
    steps = setpoint_steps(trace.vpd_target) if setpoint_changes is None else list(setpoint_changes)
    steps = [i for i in steps if 0 < i < len(trace)]
    if not steps:
        return Overshoot(0.0, 0)
    tgt = np.asarray(trace.vpd_target)
    act = np.asarray(trace.vpd_actual)
    bounds = steps + [len(trace)]
    vals = []
    for i, end in zip(steps, bounds[1:]):
        old, new = tgt[i - 1], tgt[i]
        mag = abs(new - old)
        if mag == 0:
            continue
        w = act[i:end]
        beyond = (w.max() - new) if new > old else (new - w.min())
        vals.append(100.0 * max(0.0, beyond) / mag)
    if not vals:
        return Overshoot(0.0, 0)
    return Overshoot(float(np.mean(vals)), len(vals))


def _sample_period(ts: np.ndarray) -> float:
    if len(ts) < 2:
        raise MetricError("need at least two timestamps to infer the sample period")
    return float(np.median(np.diff(ts)))


def energy_kwh_m2_day(trace: RolloutTrace) -> float:
    """Electrical energy per floor area, normalized to one day of trace."""
    if len(trace) == 0:
        raise MetricError("energy of an empty trace is undefined")
    dt = _sample_period(np.asarray(trace.timestamps, dtype=float))
    joules = float(np.sum(np.asarray(trace.hvac_power) + np.asarray(trace.dehum_power))) * dt
    days = len(trace) * dt / 86400.0
    return joules / 3.6e6 / trace.floor_area / days


def energy_reduction_pct(method, local_only) -> float:
    """Percent energy saved relative to the local-only baseline (traces or kWh/m2/day values)."""
    m = energy_kwh_m2_day(method) if isinstance(method, RolloutTrace) else float(method)
    b = energy_kwh_m2_day(local_only) if isinstance(local_only, RolloutTrace) else float(local_only)
    if b <= 0:
        raise MetricError("baseline energy must be positive")
    return 100.0 * (b - m) / b


def _series(reports) -> list[float]:
    out = []
    for r in reports:
        out.append(float(getattr(r, "fleet_rmse", r)))
    return out


def rounds_to_convergence(reports, threshold: float = 0.10, sustain: int = 3) -> int | None:
    """First round (1-based) whose fleet RMSE and the next ``sustain - 1``
    rounds' all fall below ``threshold``; ``None`` if that never happens.

    ``reports`` is a sequence of floats (round ``i + 1`` at index ``i``) or
    of objects carrying ``fleet_rmse``.
    """
    vals = _series(reports)
    run = 0
    for i, v in enumerate(vals):
        run = run + 1 if v < threshold else 0
        if run == sustain:
            return i - sustain + 2
    return None


def worst_case_rmse(per_facility) -> float:
    vals = [float(v) for v in per_facility]
    if not vals:
        raise MetricError("no facilities")
    return max(vals)


def cold_start_days(daily_rmse: Sequence[float], fleet_mean: float, ratio: float = 0.85) -> int | None:
    """First day (1-based) the new facility's RMSE is within ``fleet_mean / ratio``."""
    if fleet_mean <= 0 or not 0 < ratio <= 1:
        raise MetricError("fleet_mean must be positive and ratio in (0, 1]")
    limit = fleet_mean / ratio
    for d, v in enumerate(daily_rmse, start=1):
        if v <= limit + 1e-12:
            return d
    return None


def _signed_rank_stat(d: np.ndarray) -> tuple[np.ndarray, float]:
    ranks = stats.rankdata(np.abs(d))
    return ranks, float(np.sum(ranks[d > 0]))


def _exact_signed_rank_p(ranks: np.ndarray, w_plus: float) -> float:
    # doubled ranks are integers even with mid-ranks from ties
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[:total + 1 - r]
        dist = dist + shifted
    dist /= dist.sum()
    w2 = int(round(2 * w_plus))
    mean2 = total / 2.0
    # two-sided: probability of a statistic at least as far from the mean
    dev = abs(w2 - mean2)
    idx = np.arange(total + 1)
    p = float(dist[np.abs(idx - mean2) >= dev - 1e-9].sum())
    return min(1.0, p)


def paired_wilcoxon(a, b) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped. Fewer than 20 non-zero pairs use the
    exact null distribution (ties handled through mid-ranks); otherwise
    the normal approximation with tie correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("paired samples must be 1-d and of equal length")
    if len(a) < 6:
        raise MetricError("need at least 6 pairs")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks, w_plus = _signed_rank_stat(d)
    if n < 20:
        return _exact_signed_rank_p(ranks, w_plus)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts ** 3 - counts) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def mean_ci(values, conf: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width; the half-width is NaN for one value."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise MetricError("no values")
    m = float(v.mean())
    if len(v) < 2:
        return m, float("nan")
    half = float(stats.t.ppf(0.5 + conf / 2.0, len(v) - 1) * v.std(ddof=1) / math.sqrt(len(v)))
    return m, half


def format_mean_ci(mean: float, half: float) -> str:
    if math.isnan(half):
        return f"{mean:.3f}"
    return f"{mean:.3f} ± {half:.3f}"
