"""Facility populations at graded heterogeneity levels."""

from __future__ import annotations

import numpy as np

from .profiles import CROPS, FacilityProfile, make_facility

# orderings chosen so that every prefix is as spread out as possible
CROP_ORDER = ("cannabis-flower", "lettuce", "tomato", "herbs", "strawberry", "cannabis-veg")
CLIMATE_ORDER = (3, 1, 8, 5, 2, 6, 4, 7)
EQUIPMENT_ORDER = (3, 1, 5, 2, 4)

# (crops, climates, equipment profiles)
HETEROGENEITY_LEVELS = {
    "IID": (1, 1, 1),
    "Low": (2, 2, 2),
    "Med": (3, 4, 3),
    "High": (5, 6, 4),
    "Full": (6, 8, 5),
}


def heterogeneity_population(level: str, k: int, rng: np.random.Generator, *,
                             samples_per_cycle: int | None = None, zone_count: int = 10,
                             jitter: float = 0.10) -> list[FacilityProfile]:
    """``k`` facilities drawn round-robin from the level's crop/climate/equipment sets.

    Thermal constants get independent uniform jitter of +-``jitter``; each
    facility starts at a random point of its crop cycle.
    """
    if level not in HETEROGENEITY_LEVELS:
        raise ValueError(f"unknown heterogeneity level {level!r}; expected one of {list(HETEROGENEITY_LEVELS)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_crop, n_clim, n_eq = HETEROGENEITY_LEVELS[level]
    crops = CROP_ORDER[:n_crop]
    climates = CLIMATE_ORDER[:n_clim]
    equipment = EQUIPMENT_ORDER[:n_eq]
    out = []
    for i in range(k):
        crop = crops[i % n_crop]
        j = rng.uniform(1.0 - jitter, 1.0 + jitter, size=4)
        growth0 = float(rng.uniform(0.0, CROPS[crop].cycle_days))
        out.append(make_facility(i, crop, climates[i % n_clim], equipment[i % n_eq],
                                 zone_count=zone_count, samples_per_cycle=samples_per_cycle,
                                 thermal_jitter=j, start_growth_day=growth0))
    return out
