"""Crop, climate, equipment and facility descriptions.

Everything the closed-loop kernel needs about one facility is flattened
into a float vector by :meth:`FacilityProfile.packed`; the ``P_*``
constants below name its slots.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import FopdtActuator
from .psychro import es_kpa, humidity_ratio

CROP_FAMILIES = (
    "cannabis-flower",
    "cannabis-veg",
    "lettuce",
    "tomato",
    "herbs",
    "strawberry",
)

# agronomic grouping used to seed the crop clusters
CROP_CLUSTER = {
    "cannabis-flower": 0,
    "cannabis-veg": 0,
    "lettuce": 1,
    "herbs": 1,
    "tomato": 2,
    "strawberry": 2,
}
CLUSTER_NAMES = ("cannabis", "leafy-greens", "fruiting", "propagation")


@dataclass(frozen=True)
class CropProfile:
    family: str
    vpd_schedule: tuple  # ((start_day, target_kpa), ...) sorted by day
    cycle_days: int
    vpd_tolerance: float
    transpiration_coeff: float  # kg / (s m2 kPa) at full stomatal opening
    gain_scale: float
    t_day: float
    t_night: float
    ppfd: float
    photoperiod: float  # h
    co2_day: float
    leaf_offset: float = 1.5

    def __post_init__(self):
        if self.family not in CROP_FAMILIES:
            raise ValueError(f"unknown crop family {self.family!r}")
        if not self.vpd_schedule or len(self.vpd_schedule) > 4:
            raise ValueError("vpd schedule needs between 1 and 4 stages")
        for _, v in self.vpd_schedule:
            if not 0.3 < v < 1.8:
                raise ValueError(f"VPD target {v} outside (0.3, 1.8) kPa")
        if self.vpd_tolerance <= 0:
            raise ValueError("vpd tolerance must be positive")

    def vpd_target(self, growth_day: float) -> float:
        day = growth_day % self.cycle_days
        target = self.vpd_schedule[0][1]
        for start, v in self.vpd_schedule:
            if day >= start:
                target = v
        return target


CROPS = {
    "cannabis-flower": CropProfile("cannabis-flower", ((0, 1.0), (21, 1.2), (42, 1.4)), 63, 0.08,
                                   5.0e-5, 1.00, 26.0, 22.0, 900.0, 12.0, 1200.0),
    "cannabis-veg": CropProfile("cannabis-veg", ((0, 0.8), (14, 1.0)), 28, 0.10,
                                4.5e-5, 0.90, 27.0, 23.0, 600.0, 18.0, 1000.0),
    "lettuce": CropProfile("lettuce", ((0, 0.7), (14, 0.9)), 35, 0.15,
                           3.5e-5, 0.75, 22.0, 18.0, 250.0, 16.0, 800.0),
    "tomato": CropProfile("tomato", ((0, 0.8), (30, 1.0)), 90, 0.12,
                          5.5e-5, 1.15, 24.0, 18.0, 500.0, 14.0, 900.0),
    "herbs": CropProfile("herbs", ((0, 0.8), (20, 1.0)), 42, 0.15,
                         3.0e-5, 0.80, 23.0, 19.0, 300.0, 16.0, 800.0),
    "strawberry": CropProfile("strawberry", ((0, 0.7), (30, 0.9)), 70, 0.12,
                              4.0e-5, 1.05, 22.0, 16.0, 400.0, 14.0, 900.0),
}


@dataclass(frozen=True)
class WeatherParams:
    t_mean: float
    t_diurnal_amp: float
    t_seasonal_amp: float
    rh_out_mean: float
    solar_peak: float  # W reaching one zone at solar noon
    noise_sigma: float

    def __post_init__(self):
        if min(self.t_diurnal_amp, self.t_seasonal_amp, self.noise_sigma, self.solar_peak) < 0:
            raise ValueError("weather amplitudes must be non-negative")
        if not 0.0 <= self.rh_out_mean <= 1.0:
            raise ValueError("rh_out_mean must lie in [0, 1]")


# one preset per climate zone, hot-arid through subarctic
CLIMATES = {
    1: WeatherParams(24.0, 8.0, 10.0, 0.25, 8000.0, 0.8),
    2: WeatherParams(25.0, 4.0, 4.0, 0.75, 7000.0, 0.6),
    3: WeatherParams(17.0, 6.0, 9.0, 0.65, 6000.0, 0.8),
    4: WeatherParams(10.0, 8.0, 11.0, 0.45, 7000.0, 1.0),
    5: WeatherParams(11.0, 4.0, 6.0, 0.75, 4000.0, 0.6),
    6: WeatherParams(10.0, 5.0, 14.0, 0.70, 5000.0, 1.0),
    7: WeatherParams(7.0, 6.0, 16.0, 0.68, 5000.0, 1.2),
    8: WeatherParams(-3.0, 5.0, 20.0, 0.70, 3000.0, 1.5),
}

# (tau_p [s], dead_time [s]) per HVAC/dehumidification equipment profile
EQUIPMENT = {
    1: (120.0, 10.0),
    2: (300.0, 30.0),
    3: (600.0, 60.0),
    4: (900.0, 90.0),
    5: (1200.0, 120.0),
}

LIGHT_EFFICACY = 2.7  # umol/J
HVAC_COP = 3.0
DEHUM_J_PER_KG = 1.4e6  # roughly 2.5 L/kWh
CO2_NIGHT = 450.0
LIGHTS_ON_HOUR = 6.0


@dataclass(frozen=True)
class ThermalParams:
    c_th: float  # J/K
    c_hum: float  # kg dry air
    ua: float  # W/K
    floor_area: float  # m2
    vent: float = 0.15  # kg/s of outdoor-air exchange

    def __post_init__(self):
        if min(self.c_th, self.c_hum, self.ua, self.floor_area) <= 0 or self.vent < 0:
            raise ValueError("thermal parameters must be strictly positive")


def default_thermal(floor_area: float = 200.0, height: float = 4.0) -> ThermalParams:
    return ThermalParams(
        c_th=60000.0 * floor_area,
        c_hum=1.2 * floor_area * height,
        ua=2.5 * floor_area,
        floor_area=floor_area,
        vent=0.15 * floor_area / 200.0,
    )


def stomatal_factor(ppfd: float, co2: float) -> float:
    """Relative stomatal opening: saturating in light, closing with CO2."""
    return (0.1 + 0.9 * ppfd / (ppfd + 200.0)) * 800.0 / (co2 + 400.0)


@dataclass(frozen=True)
class FacilityProfile:
    id: int
    crop: CropProfile
    climate_zone: int
    thermal: ThermalParams
    hvac: FopdtActuator
    dehum: FopdtActuator
    zone_count: int = 10
    samples_per_cycle: int = 10000
    equipment: int = 3
    start_day_of_year: float = 80.0
    start_growth_day: float = 0.0

    def __post_init__(self):
        if self.zone_count < 1:
            raise ValueError("zone_count must be >= 1")
        if self.samples_per_cycle <= 0:
            raise ValueError("samples_per_cycle must be positive")
        if self.climate_zone not in CLIMATES:
            raise ValueError(f"climate zone {self.climate_zone} not in 1..8")

    @property
    def weather(self) -> WeatherParams:
        return CLIMATES[self.climate_zone]

    def with_changes(self, **kw) -> "FacilityProfile":
        return replace(self, **kw)

    def packed(self) -> np.ndarray:
        return pack_profile(self)


def size_actuators(crop: CropProfile, climate: WeatherParams, thermal: ThermalParams,
                   equipment: int) -> tuple[FopdtActuator, FopdtActuator]:
    """Equipment sized with margin to hold the crop's setpoints in the climate."""
    tau, dead = EQUIPMENT[equipment]
    a = thermal.floor_area
    t_hot = climate.t_mean + climate.t_seasonal_amp + climate.t_diurnal_amp + 3 * climate.noise_sigma
    t_cold = climate.t_mean - climate.t_seasonal_amp - climate.t_diurnal_amp - 3 * climate.noise_sigma
    q_light = crop.ppfd * a / LIGHT_EFFICACY
    cool = q_light + climate.solar_peak + thermal.ua * max(0.0, t_hot - crop.t_day)
    heat = thermal.ua * max(0.0, crop.t_night - t_cold)
    hvac_gain = 1.3 * max(cool, heat)

    v_max = max(v for _, v in crop.vpd_schedule)
    moist = crop.transpiration_coeff * a * v_max
    w_out = humidity_ratio(min(t_hot, 45.0), climate.rh_out_mean)
    w_in = humidity_ratio(crop.t_day, 1.0 - v_max / es_kpa(crop.t_day))
    moist += thermal.vent * max(0.0, w_out - w_in)
    dehum_gain = 1.5 * moist
    hvac = FopdtActuator(hvac_gain, tau, dead, u_min=-1.0, u_max=1.0)
    dehum = FopdtActuator(dehum_gain, tau, dead, u_min=0.0, u_max=1.0)
    return hvac, dehum


def make_facility(fid: int, crop: str, climate_zone: int, equipment: int, *,
                  floor_area: float = 200.0, zone_count: int = 10,
                  samples_per_cycle: int | None = None, thermal_jitter: np.ndarray | None = None,
                  start_day_of_year: float = 80.0, start_growth_day: float = 0.0) -> FacilityProfile:
    cp = CROPS[crop]
    th = default_thermal(floor_area)
    if thermal_jitter is not None:
        j = np.asarray(thermal_jitter, dtype=float)
        th = ThermalParams(th.c_th * j[0], th.c_hum * j[1], th.ua * j[2], th.floor_area, th.vent * j[3])
    hvac, dehum = size_actuators(cp, CLIMATES[climate_zone], th, equipment)
    if samples_per_cycle is None:
        samples_per_cycle = 1000 * zone_count
    return FacilityProfile(fid, cp, climate_zone, th, hvac, dehum, zone_count, samples_per_cycle,
                           equipment, start_day_of_year, start_growth_day)


# slots of the packed facility vector
(P_AREA, P_CTH, P_CHUM, P_UA, P_VENT,
 P_HV_GAIN, P_HV_TAU, P_HV_DEAD, P_DH_GAIN, P_DH_TAU, P_DH_DEAD,
 P_TRANSP, P_GSCALE, P_LEAF,
 P_TDAY, P_TNIGHT, P_PPFD, P_PHOTO, P_CO2DAY,
 P_WTMEAN, P_WTDIUR, P_WTSEAS, P_WRH, P_WSOLAR, P_WNOISE,
 P_CYCLE, P_GROWTH0, P_DOY0, P_TH_KP, P_TH_KI, P_NSCHED) = range(31)
P_SCHED_DAY = 31  # 4 slots
P_SCHED_VPD = 35  # 4 slots
N_PACKED = 39


def thermostat_gains(th: ThermalParams, hvac: FopdtActuator) -> tuple[float, float]:
    """Fixed SIMC PI tuning for the air-temperature loop (command per K)."""
    k = hvac.gain / th.ua
    tau = th.c_th / th.ua
    theta = hvac.dead_time + 0.5 * hvac.tau_p
    kc = tau / (k * 2.0 * theta)
    ti = min(tau, 8.0 * theta)
    return kc, kc / ti


def pack_profile(p: FacilityProfile) -> np.ndarray:
    v = np.zeros(N_PACKED)
    th, w, c = p.thermal, p.weather, p.crop
    v[P_AREA], v[P_CTH], v[P_CHUM], v[P_UA], v[P_VENT] = th.floor_area, th.c_th, th.c_hum, th.ua, th.vent
    v[P_HV_GAIN], v[P_HV_TAU], v[P_HV_DEAD] = p.hvac.gain, p.hvac.tau_p, p.hvac.dead_time
    v[P_DH_GAIN], v[P_DH_TAU], v[P_DH_DEAD] = p.dehum.gain, p.dehum.tau_p, p.dehum.dead_time
    v[P_TRANSP], v[P_GSCALE], v[P_LEAF] = c.transpiration_coeff, c.gain_scale, c.leaf_offset
    v[P_TDAY], v[P_TNIGHT], v[P_PPFD], v[P_PHOTO], v[P_CO2DAY] = c.t_day, c.t_night, c.ppfd, c.photoperiod, c.co2_day
    v[P_WTMEAN], v[P_WTDIUR], v[P_WTSEAS] = w.t_mean, w.t_diurnal_amp, w.t_seasonal_amp
    v[P_WRH], v[P_WSOLAR], v[P_WNOISE] = w.rh_out_mean, w.solar_peak, w.noise_sigma
    v[P_CYCLE], v[P_GROWTH0], v[P_DOY0] = c.cycle_days, p.start_growth_day, p.start_day_of_year
    v[P_TH_KP], v[P_TH_KI] = thermostat_gains(th, p.hvac)
    v[P_NSCHED] = len(c.vpd_schedule)
    for i, (d, t) in enumerate(c.vpd_schedule):
        v[P_SCHED_DAY + i] = d
        v[P_SCHED_VPD + i] = t
    return v
