"""Declarative experiment scenario."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import DEFAULT_RANGES, FeatureRanges
from .federation.types import AlgorithmKind, FederationConfigError, RoundConfig
from .sim.population import HETEROGENEITY_LEVELS, heterogeneity_population
from .sim.profiles import CROPS, CLIMATES, EQUIPMENT, FacilityProfile, make_facility

TAG_POPULATION = 11


@dataclass(frozen=True)
class ByzantineSpec:
    """The last ``count`` facilities send the negated mean of the honest updates."""

    count: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise FederationConfigError("byzantine count must be >= 1")


@dataclass(frozen=True)
class ColdStartSpec:
    """A facility joining a trained fleet and learning from its own accumulating data."""

    crop: str = "lettuce"
    climate_zone: int = 2
    equipment: int = 3
    days: int = 60
    epochs_per_day: int = 5

    def __post_init__(self):
        if self.crop not in CROPS:
            raise FederationConfigError(f"unknown crop {self.crop!r}")
        if self.climate_zone not in CLIMATES or self.equipment not in EQUIPMENT:
            raise FederationConfigError("climate_zone must be 1..8 and equipment 1..5")
        if self.days < 1 or self.epochs_per_day < 1:
            raise FederationConfigError("days and epochs_per_day must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    algorithm: AlgorithmKind = AlgorithmKind.HIERFEDCEA
    # a facility count (population drawn at ``heterogeneity_level``) or explicit profiles
    facilities: int | tuple = 12
    rounds: int = 120
    round_cfg: RoundConfig = field(default_factory=RoundConfig)
    sim_days: int = 60
    seeds: tuple = (0,)
    heterogeneity_level: str = "Full"
    byzantine: ByzantineSpec | None = None
    cold_start: ColdStartSpec | None = None
    eval_hours: float = 24.0
    warmup_hours: float = 6.0
    root_samples: int = 500
    label_noise: float = 0.02
    samples_per_cycle: int | None = None
    zone_count: int = 10
    ranges: FeatureRanges = DEFAULT_RANGES

    def __post_init__(self):
        if not isinstance(self.algorithm, AlgorithmKind):
            object.__setattr__(self, "algorithm", AlgorithmKind.parse(self.algorithm))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not isinstance(self.facilities, int):
            object.__setattr__(self, "facilities", tuple(self.facilities))
        if not self.seeds:
            raise FederationConfigError("seeds must be non-empty")
        if self.rounds < 1:
            raise FederationConfigError("rounds must be >= 1")
        if self.n_facilities < 1:
            raise FederationConfigError("at least one facility is required")
        if self.sim_days < 1:
            raise FederationConfigError("sim_days must be >= 1")
        if self.heterogeneity_level not in HETEROGENEITY_LEVELS:
            raise FederationConfigError(f"heterogeneity_level must be one of {list(HETEROGENEITY_LEVELS)}")
        if self.byzantine is not None and self.byzantine.count >= self.n_facilities:
            raise FederationConfigError("at least one honest facility is required")
        if self.eval_hours <= 0 or self.warmup_hours < 0 or self.root_samples < 1:
            raise FederationConfigError("eval_hours > 0, warmup_hours >= 0, root_samples >= 1 required")

    @property
    def n_facilities(self) -> int:
        return self.facilities if isinstance(self.facilities, int) else len(self.facilities)

    def population(self, seed: int) -> list[FacilityProfile]:
        if not isinstance(self.facilities, int):
            return list(self.facilities)
        rng = np.random.default_rng(np.random.SeedSequence([seed, TAG_POPULATION]))
        return heterogeneity_population(self.heterogeneity_level, self.facilities, rng,
                                        samples_per_cycle=self.samples_per_cycle,
                                        zone_count=self.zone_count)

    def byzantine_ids(self) -> frozenset:
        if self.byzantine is None:
            return frozenset()
        k = self.n_facilities
        return frozenset(range(k - self.byzantine.count, k))

    def with_changes(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def with_round(self, **kw) -> "ScenarioConfig":
        return replace(self, round_cfg=replace(self.round_cfg, **kw))


def reference_facility() -> FacilityProfile:
    """Unscaled-gain crop in a mid-range climate with mid-range equipment; hosts the root dataset."""
    return make_facility(-1, "cannabis-flower", 4, 3)
