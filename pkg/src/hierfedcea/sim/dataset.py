"""Training-set synthesis and evaluation rollouts on the compiled kernel."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..metrics import RolloutTrace
from ..model import DEFAULT_RANGES, N_PARAMS, Dataset, FeatureRanges
from . import kernel as K
from .profiles import FacilityProfile
from .psychro import es_kpa, humidity_ratio

DT = 10.0  # control period, s
TICKS_PER_DAY = int(86400 / DT)


def initial_state(profile: FacilityProfile, t0: float = 0.0) -> np.ndarray:
    """Kernel state vector at the setpoints in force at ``t0``."""
    fp = profile.packed()
    t_set = profile.crop.t_day if K.lights_on(fp, t0) else profile.crop.t_night
    target = K.vpd_target_at(fp, t0)
    rh0 = 1.0 - target / es_kpa(t_set)
    return np.array([t_set, humidity_ratio(t_set, rh0), 0.0, np.nan, 0.0, 0.0, 0.0])


def default_sample_count(profile: FacilityProfile, days: float) -> int:
    """Samples accrue at ``samples_per_cycle`` per crop growth cycle."""
    return max(1, int(round(profile.samples_per_cycle * days / profile.crop.cycle_days)))


def generate_dataset(profile: FacilityProfile, days: float, rng: np.random.Generator, *,
                     n_samples: int | None = None, label_noise: float = 0.02,
                     t0_day: float = 0.0, ranges: FeatureRanges = DEFAULT_RANGES) -> Dataset:
    """Closed-loop rollout under oracle-tuned control, sampled into a dataset.

    The loop runs at 10 s; feature rows are recorded along the trajectory,
    a random subset of ``n_samples`` rows is kept (time order preserved)
    and labelled with the oracle gains plus multiplicative noise. A
    non-finite state stops the run early and sets ``fault``.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    n_steps = int(round(days * TICKS_PER_DAY))
    n_target = default_sample_count(profile, days) if n_samples is None else int(n_samples)
    n_target = min(n_target, n_steps)
    every = max(1, n_steps // (4 * n_target))
    n_rows = (n_steps + every - 1) // every

    fp = profile.packed()
    noise = rng.standard_normal(n_steps)
    t0 = t0_day * 86400.0
    state = initial_state(profile, t0)
    trace = np.empty((n_steps, K.N_TRACE))
    feats = np.empty((n_rows, 10))
    n_rec, fault = K.closed_loop(fp, np.zeros(N_PARAMS), K.MODE_ORACLE, np.ones(3), ranges.lo_array,
                                 ranges.span_array, t0, n_steps, DT, noise, state, trace, feats, every)
    rec_time = t0 + DT * every * np.arange(n_rec)
    if fault >= 0:
        n_rec = min(n_rec, fault // every)
    pick = np.sort(rng.choice(n_rec, size=min(n_target, n_rec), replace=False))
    rows = feats[pick]
    y = rows[:, 7:10]
    if label_noise > 0:
        y = y * (1.0 + label_noise * rng.standard_normal(y.shape))
    return Dataset(rows[:, :7].copy(), y, profile.id, rec_time[pick], fault >= 0, ranges)


def dump_csv(ds: Dataset, path: str | Path) -> None:
    """One row per sample: 7 features, 3 labels, facility id, timestamp."""
    from ..model import FEATURE_NAMES, GAIN_NAMES

    ts = ds.timestamp if ds.timestamp is not None else np.full(len(ds), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*FEATURE_NAMES, *GAIN_NAMES, "facility_id", "timestamp"])
        for xi, yi, t in zip(ds.x, ds.y, ts):
            w.writerow([*(repr(float(v)) for v in xi), *(repr(float(v)) for v in yi), ds.facility_id,
                        repr(float(t))])


def simulate(profile: FacilityProfile, *, theta: np.ndarray | None = None, mode: int = K.MODE_MLP,
             fixed=(1.0, 1.0, 1.0), start_day: float = 0.0, hours: float = 24.0,
             warmup_hours: float = 6.0, seed: int = 0,
             ranges: FeatureRanges = DEFAULT_RANGES) -> tuple[np.ndarray, int]:
    """Raw kernel trace of a closed-loop run; the warm-up part is dropped."""
    n_warm = int(round(warmup_hours * 3600 / DT))
    n_eval = int(round(hours * 3600 / DT))
    n = n_warm + n_eval
    t0 = start_day * 86400.0 - n_warm * DT
    noise = np.random.default_rng(seed).standard_normal(n)
    theta = np.zeros(N_PARAMS) if theta is None else np.asarray(theta, dtype=float)
    state = initial_state(profile, t0)
    trace = np.zeros((n, K.N_TRACE))
    _, fault = K.closed_loop(profile.packed(), theta, mode, np.asarray(fixed, dtype=float),
                             ranges.lo_array, ranges.span_array, t0, n, DT, noise, state, trace,
                             np.empty((0, 10)), 1)
    return trace[n_warm:], fault


def rollout(profile: FacilityProfile, theta: np.ndarray | None = None, *, mode: int = K.MODE_MLP,
            start_day: float = 0.0, hours: float = 24.0, warmup_hours: float = 6.0, seed: int = 0,
            ranges: FeatureRanges = DEFAULT_RANGES) -> RolloutTrace:
    """Evaluation rollout as a :class:`RolloutTrace` (MLP-tuned VPD loop by default)."""
    tr, _ = simulate(profile, theta=theta, mode=mode, start_day=start_day, hours=hours,
                     warmup_hours=warmup_hours, seed=seed, ranges=ranges)
    ts = start_day * 86400.0 + DT * np.arange(len(tr))
    return RolloutTrace(ts, tr[:, K.TR_VPD].copy(), tr[:, K.TR_TARGET].copy(),
                        tr[:, K.TR_HVAC_W].copy(), tr[:, K.TR_DEHUM_W].copy(),
                        profile.thermal.floor_area)
