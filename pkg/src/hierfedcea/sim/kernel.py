"""Compiled closed-loop facility simulation.

One call advances one facility zone for ``n_steps`` control periods with
either the label-oracle gains, a fixed gain triple, or gains produced by
the MLP on the live feature vector. Everything is scalar numba code so a
full day at 10 s resolution costs well under a millisecond.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .control import fopdt_step, pid_law
from .profiles import (
    CO2_NIGHT, DEHUM_J_PER_KG, HVAC_COP, LIGHT_EFFICACY, LIGHTS_ON_HOUR,
    P_AREA, P_CHUM, P_CO2DAY, P_CTH, P_CYCLE, P_DH_DEAD, P_DH_GAIN, P_DH_TAU, P_DOY0,
    P_GROWTH0, P_GSCALE, P_HV_DEAD, P_HV_GAIN, P_HV_TAU, P_LEAF, P_NSCHED, P_PHOTO,
    P_PPFD, P_SCHED_DAY, P_SCHED_VPD, P_TDAY, P_TH_KI, P_TH_KP, P_TNIGHT, P_TRANSP,
    P_UA, P_VENT, P_WNOISE, P_WRH, P_WSOLAR, P_WTDIUR, P_WTMEAN, P_WTSEAS,
)
from .psychro import dvpd_domega, es_kpa, humidity_ratio, omega_sat, rh_from_omega

# model output = SI gain * unit factor; keeps all three outputs O(1)
# kp in 10/kPa, ki in 1/(kPa 100 s), kd in 100 s/kPa
U_KP, U_KI, U_KD = 0.1, 100.0, 0.01
GAIN_UNITS = np.array([U_KP, U_KI, U_KD])
GAIN_MIN = 1e-4
GAIN_MAX = 5.0

MODE_ORACLE = 0
MODE_FIXED = 1
MODE_MLP = 2
MODE_ORACLE_SCALED = 3

# trace columns
(TR_T, TR_OMEGA, TR_RH, TR_VPD, TR_TARGET, TR_HVAC_W, TR_DEHUM_W,
 TR_U, TR_TOUT, TR_KP, TR_KI, TR_KD) = range(12)
N_TRACE = 12


@njit(cache=True)
def weather_at(fp, t, z):
    """Outdoor temperature, humidity ratio and solar gain at time ``t`` (s).

    ``z`` is a standard-normal draw supplying the temperature noise.
    """
    day = t / 86400.0
    hour = (t % 86400.0) / 3600.0
    t_out = (fp[P_WTMEAN]
             + fp[P_WTSEAS] * math.sin(2.0 * math.pi * (fp[P_DOY0] + day) / 365.0)
             + fp[P_WTDIUR] * math.sin(2.0 * math.pi * (hour - 9.0) / 24.0)
             + fp[P_WNOISE] * z)
    w_out = humidity_ratio(t_out, fp[P_WRH])
    q_solar = 0.0
    if 6.0 < hour < 18.0:
        q_solar = fp[P_WSOLAR] * math.sin(math.pi * (hour - 6.0) / 12.0)
    return t_out, w_out, q_solar


@njit(cache=True)
def lights_on(fp, t):
    hour = (t % 86400.0) / 3600.0
    return (hour - LIGHTS_ON_HOUR) % 24.0 < fp[P_PHOTO]


@njit(cache=True)
def vpd_target_at(fp, t):
    gday = (fp[P_GROWTH0] + t / 86400.0) % fp[P_CYCLE]
    target = fp[P_SCHED_VPD]
    for i in range(int(fp[P_NSCHED])):
        if gday >= fp[P_SCHED_DAY + i]:
            target = fp[P_SCHED_VPD + i]
    return target


@njit(cache=True)
def stomatal(ppfd, co2):
    return (0.1 + 0.9 * ppfd / (ppfd + 200.0)) * 800.0 / (co2 + 400.0)


@njit(cache=True)
def oracle_si(fp, t_air, rh, ppfd, co2, e_vpd):
    """Noiseless target gains in SI units from the facility's true plant.

    IMC tuning of the dehumidification loop seen as FOPDT: process gain is
    the zone's steady-state VPD response to full dehumidifier output, the
    lag is the zone humidity time constant plus the actuator lag, the dead
    time is the actuator's, and the closed-loop constant equals the dead
    time.
    """
    e_a = rh * es_kpa(t_air)
    omega = 0.622 * e_a / (101.325 - e_a)
    slope = dvpd_domega(omega)
    denom = fp[P_VENT] + fp[P_TRANSP] * stomatal(ppfd, co2) * fp[P_AREA] * slope
    k_proc = fp[P_DH_GAIN] * slope / denom
    tau = fp[P_CHUM] / denom + fp[P_DH_TAU]
    theta = fp[P_DH_DEAD]
    kp = tau / (k_proc * (theta + theta))
    ki = kp / tau
    kd = kp * theta / 2.0
    f = fp[P_GSCALE] * (1.0 + 0.3 * math.tanh(e_vpd))
    return kp * f, ki * f, kd * f


@njit(cache=True)
def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


@njit(cache=True)
def mlp_forward(theta, xn, out):
    for j in range(3):
        s = 0.0
        for i in range(3):
            z = theta[21 + i]
            for c in range(7):
                z += theta[i * 7 + c] * xn[c]
            s += theta[24 + j * 3 + i] * _sigmoid(z)
        out[j] = s + theta[33 + j]


@njit(cache=True)
def closed_loop(fp, theta, mode, fixed, lo, span, t0, n_steps, dt, noise, state0,
                trace, feats, record_every):
    """Run the facility zone in closed loop.

    ``state0`` = (T, omega, e_int, e_prev, hvac_y, dehum_y, thermo_int).
    ``trace`` must have shape ``(n_steps, N_TRACE)``; feature rows (raw, 7
    columns) plus noiseless oracle labels (model units, 3 more columns) are
    written into ``feats`` every ``record_every`` steps. Returns
    ``(n_recorded, fault_step)`` where ``fault_step`` is -1 when the run
    stayed finite.
    """
    T = state0[0]
    omega = state0[1]
    e_int = state0[2]
    e_prev = state0[3]
    hv_y = state0[4]
    dh_y = state0[5]
    th_int = state0[6]
    th_prev = 0.0

    n_hv = int(round(fp[P_HV_DEAD] / dt))
    n_dh = int(round(fp[P_DH_DEAD] / dt))
    hv_buf = np.full(n_hv, hv_y / fp[P_HV_GAIN])
    dh_buf = np.full(n_dh, dh_y / fp[P_DH_GAIN])
    hv_head = 0
    dh_head = 0
    x = np.empty(7)
    xn = np.empty(7)
    g = np.empty(3)
    area = fp[P_AREA]
    n_rec = 0
    fault = -1

    for k in range(n_steps):
        t = t0 + k * dt
        t_out, w_out, q_solar = weather_at(fp, t, noise[k])
        on = lights_on(fp, t)
        if on:
            ppfd = fp[P_PPFD]
            co2 = fp[P_CO2DAY]
            t_set = fp[P_TDAY]
        else:
            ppfd = 0.0
            co2 = CO2_NIGHT
            t_set = fp[P_TNIGHT]
        q_light = ppfd * area / LIGHT_EFFICACY
        target = vpd_target_at(fp, t)

        rh = rh_from_omega(T, omega)
        vpd = es_kpa(T) * (1.0 - rh)
        e = target - vpd
        if k == 0 and e_prev != e_prev:
            e_prev = e
        x[0] = T
        x[1] = rh
        x[2] = T - fp[P_LEAF]
        x[3] = co2
        x[4] = ppfd
        x[5] = e
        x[6] = e_int

        if mode == MODE_ORACLE:
            kp, ki, kd = oracle_si(fp, T, rh, ppfd, co2, e)
        elif mode == MODE_ORACLE_SCALED:
            kp, ki, kd = oracle_si(fp, T, rh, ppfd, co2, e)
            kp, ki, kd = kp * fixed[0], ki * fixed[1], kd * fixed[2]
        elif mode == MODE_FIXED:
            kp, ki, kd = fixed[0], fixed[1], fixed[2]
        else:
            for c in range(7):
                xn[c] = (x[c] - lo[c]) / span[c]
            mlp_forward(theta, xn, g)
            gp = min(max(g[0], GAIN_MIN), GAIN_MAX)
            gi = min(max(g[1], GAIN_MIN), GAIN_MAX)
            gd = min(max(g[2], GAIN_MIN), GAIN_MAX)
            kp, ki, kd = gp / U_KP, gi / U_KI, gd / U_KD

        if feats.shape[0] > 0 and k % record_every == 0 and n_rec < feats.shape[0]:
            for c in range(7):
                feats[n_rec, c] = x[c]
            okp, oki, okd = oracle_si(fp, T, rh, ppfd, co2, e)
            feats[n_rec, 7] = okp * U_KP
            feats[n_rec, 8] = oki * U_KI
            feats[n_rec, 9] = okd * U_KD
            n_rec += 1

        u, e_int = pid_law(kp, ki, kd, e, e_int, e_prev, dt, 0.0, 1.0)
        e_prev = e

        # load-scheduled HVAC: feedforward of envelope, lighting and solar
        # loads, PI trim on the air temperature error
        ff = (fp[P_UA] * (t_set - t_out) - q_light - q_solar) / fp[P_HV_GAIN]
        e_t = t_set - T
        trim, th_int = pid_law(fp[P_TH_KP], fp[P_TH_KI], 0.0, e_t, th_int, th_prev, dt, -1.0 - ff, 1.0 - ff)
        th_prev = e_t
        hv_cmd = ff + trim

        hv_y, hv_head = fopdt_step(hv_y, hv_buf, hv_head, hv_cmd, fp[P_HV_GAIN], fp[P_HV_TAU], -1.0, 1.0, dt)
        dh_y, dh_head = fopdt_step(dh_y, dh_buf, dh_head, u, fp[P_DH_GAIN], fp[P_DH_TAU], 0.0, 1.0, dt)

        m_tr = fp[P_TRANSP] * stomatal(ppfd, co2) * vpd * area
        T = T + dt / fp[P_CTH] * (hv_y + q_light + q_solar - fp[P_UA] * (T - t_out))
        omega = omega + dt / fp[P_CHUM] * (m_tr - dh_y + fp[P_VENT] * (w_out - omega))
        if omega < 0.0:
            omega = 0.0
        osat = omega_sat(T)
        if omega > osat:
            omega = osat

        trace[k, TR_T] = T
        trace[k, TR_OMEGA] = omega
        trace[k, TR_RH] = rh
        trace[k, TR_VPD] = vpd
        trace[k, TR_TARGET] = target
        trace[k, TR_HVAC_W] = abs(hv_y) / HVAC_COP
        trace[k, TR_DEHUM_W] = dh_y * DEHUM_J_PER_KG
        trace[k, TR_U] = u
        trace[k, TR_TOUT] = t_out
        trace[k, TR_KP] = kp
        trace[k, TR_KI] = ki
        trace[k, TR_KD] = kd
        if not (math.isfinite(T) and math.isfinite(omega)):
            fault = k
            break

    state0[0] = T
    state0[1] = omega
    state0[2] = e_int
    state0[3] = e_prev
    state0[4] = hv_y
    state0[5] = dh_y
    state0[6] = th_int
    return n_rec, fault
