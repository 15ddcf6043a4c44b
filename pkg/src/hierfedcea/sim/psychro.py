"""Psychrometric helpers (Tetens saturation pressure, VPD, humidity ratio)."""

from __future__ import annotations

import math

from numba import njit

P_ATM = 101.325  # kPa
EPS_W = 0.622  # ratio of molar masses, water / dry air


class PsychroDomainError(ValueError):
    pass


@njit(cache=True)
def es_kpa(t):
    return 0.6108 * math.exp(17.27 * t / (t + 237.3))


@njit(cache=True)
def des_dt(t):
    """Slope of the Tetens curve, kPa/K."""
    return es_kpa(t) * 17.27 * 237.3 / ((t + 237.3) ** 2)


@njit(cache=True)
def humidity_ratio(t, rh):
    e = rh * es_kpa(t)
    return EPS_W * e / (P_ATM - e)


@njit(cache=True)
def vapor_pressure(omega):
    return omega * P_ATM / (EPS_W + omega)


@njit(cache=True)
def rh_from_omega(t, omega):
    rh = vapor_pressure(omega) / es_kpa(t)
    if rh < 0.0:
        return 0.0
    if rh > 1.0:
        return 1.0
    return rh


@njit(cache=True)
def omega_sat(t):
    return humidity_ratio(t, 1.0)


@njit(cache=True)
def dvpd_domega(omega):
    """Magnitude of d(VPD)/d(omega) at fixed temperature, kPa per (kg/kg)."""
    return EPS_W * P_ATM / ((EPS_W + omega) ** 2)


def saturation_vapor_pressure(t: float) -> float:
    """Tetens saturation vapour pressure in kPa for ``t`` in degrees C."""
    if not (-20.0 < t < 60.0):
        raise PsychroDomainError(f"temperature {t} outside (-20, 60) C")
    return float(es_kpa(float(t)))


def vpd(t_air: float, rh: float) -> float:
    """Air vapour-pressure deficit in kPa."""
    if not (0.0 <= rh <= 1.0):
        raise PsychroDomainError(f"relative humidity {rh} outside [0, 1]")
    return saturation_vapor_pressure(t_air) * (1.0 - rh)
