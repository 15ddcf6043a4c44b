"""Python-level zone physics, weather and label oracle.

These mirror the compiled kernel one step at a time; the kernel is what
dataset generation and rollouts actually run, and the tests hold the two
routes against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..model import FeatureVector, GainTriple
from . import kernel as K
from .control import FopdtActuator, actuator_step
from .profiles import LIGHT_EFFICACY, FacilityProfile, WeatherParams, stomatal_factor
from .psychro import es_kpa, humidity_ratio, omega_sat, rh_from_omega


class ZoneFault(RuntimeError):
    """Raised when the zone state stops being finite (a simulated sensor fault)."""


@dataclass(frozen=True)
class ZoneState:
    t_air: float
    omega: float
    rh: float
    co2: float
    ppfd: float
    t_leaf: float
    e_vpd_int: float = 0.0

    @classmethod
    def from_air(cls, t_air: float, rh: float, co2: float = 450.0, ppfd: float = 0.0,
                 leaf_offset: float = 1.5, e_vpd_int: float = 0.0) -> "ZoneState":
        return cls(t_air, float(humidity_ratio(t_air, rh)), rh, co2, ppfd, t_air - leaf_offset, e_vpd_int)

    @property
    def vpd(self) -> float:
        return float(es_kpa(self.t_air)) * (1.0 - self.rh)


@dataclass(frozen=True)
class WeatherSample:
    t_out: float
    w_out: float
    q_solar: float


def weather_sample(wp: WeatherParams, t: float, rng: np.random.Generator | None = None,
                   day_of_year0: float = 0.0) -> WeatherSample:
    """Outdoor conditions at ``t`` seconds after midnight of ``day_of_year0``.

    The diurnal sine peaks at 15:00; solar gain is a half sine over
    06:00-18:00. Without ``rng`` the Gaussian term is zero.
    """
    day = t / 86400.0
    hour = (t % 86400.0) / 3600.0
    z = 0.0 if rng is None else rng.standard_normal()
    t_out = (wp.t_mean
             + wp.t_seasonal_amp * math.sin(2.0 * math.pi * (day_of_year0 + day) / 365.0)
             + wp.t_diurnal_amp * math.sin(2.0 * math.pi * (hour - 9.0) / 24.0)
             + wp.noise_sigma * z)
    q_solar = 0.0
    if 6.0 < hour < 18.0:
        q_solar = wp.solar_peak * math.sin(math.pi * (hour - 6.0) / 12.0)
    return WeatherSample(t_out, float(humidity_ratio(t_out, wp.rh_out_mean)), q_solar)


def step_zone(state: ZoneState, profile: FacilityProfile, weather: WeatherSample,
              hvac_cmd: float, dehum_cmd: float, dt: float,
              actuators: tuple[FopdtActuator, FopdtActuator] | None = None) -> ZoneState:
    """Advance the zone by one explicit-Euler step.

    ``hvac_cmd`` lies in [-1, 1] (negative cools), ``dehum_cmd`` in [0, 1];
    the dehumidifier output is a moisture removal rate. Actuator state is
    kept in ``actuators`` (default: the profile's own actuator objects).
    """
    if not 0.0 < dt <= 60.0:
        raise ValueError(f"dt must lie in (0, 60] s, got {dt}")
    hvac, dehum = actuators if actuators is not None else (profile.hvac, profile.dehum)
    th = profile.thermal
    q_hvac = actuator_step(hvac, hvac_cmd, dt)
    m_dehum = actuator_step(dehum, dehum_cmd, dt)
    q_light = state.ppfd * th.floor_area / LIGHT_EFFICACY
    m_tr = (profile.crop.transpiration_coeff * stomatal_factor(state.ppfd, state.co2)
            * state.vpd * th.floor_area)

    t_new = state.t_air + dt / th.c_th * (q_hvac + q_light + weather.q_solar
                                          - th.ua * (state.t_air - weather.t_out))
    w_new = state.omega + dt / th.c_hum * (m_tr - m_dehum + th.vent * (weather.w_out - state.omega))
    if not (math.isfinite(t_new) and math.isfinite(w_new)):
        raise ZoneFault(f"non-finite zone state (T={t_new}, omega={w_new})")
    w_new = min(max(w_new, 0.0), float(omega_sat(t_new)))
    rh = float(rh_from_omega(t_new, w_new))
    return replace(state, t_air=t_new, omega=w_new, rh=rh, t_leaf=t_new - profile.crop.leaf_offset)


def oracle_si(profile: FacilityProfile, x: FeatureVector) -> GainTriple:
    """Noiseless target gains in SI units."""
    kp, ki, kd = K.oracle_si(profile.packed(), x.t_air, x.rh, x.ppfd, x.co2, x.e_vpd)
    return GainTriple(kp, ki, kd)


def to_model_units(g: GainTriple) -> GainTriple:
    return GainTriple(g.kp * K.U_KP, g.ki * K.U_KI, g.kd * K.U_KD)


def to_si(g: GainTriple) -> GainTriple:
    return GainTriple(g.kp / K.U_KP, g.ki / K.U_KI, g.kd / K.U_KD)


def label_oracle(profile: FacilityProfile, x: FeatureVector, rng: np.random.Generator | None = None,
                 noise: float = 0.02) -> GainTriple:
    """Target gains in model units, with multiplicative label noise when ``rng`` is given."""
    g = np.array(to_model_units(oracle_si(profile, x)))
    if rng is not None and noise > 0:
        g = g * (1.0 + noise * rng.standard_normal(3))
    return GainTriple(*map(float, g))
