"""FOPDT actuators and the positional PID law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@njit(cache=True)
def fopdt_step(y, buf, head, u, gain, tau, u_min, u_max, dt):
    """Advance one FOPDT actuator by ``dt``.

    ``buf`` is a ring buffer holding the commands still in transit; its
    length fixes the dead time (``len(buf) * dt``). Returns the new output
    and the new ring head.
    """
    if u < u_min:
        u = u_min
    elif u > u_max:
        u = u_max
    n = buf.shape[0]
    if n > 0:
        u_del = buf[head]
        buf[head] = u
        head = (head + 1) % n
    else:
        u_del = u
    a = 1.0 - math.exp(-dt / tau)
    y = y + a * (gain * u_del - y)
    return y, head


@njit(cache=True)
def pid_law(kp, ki, kd, e, e_int, e_prev, dt, u_min, u_max):
    """Positional PID with conditional anti-windup; returns ``(u, e_int_new)``."""
    e_int_new = e_int + e * dt
    u = kp * e + ki * e_int_new + kd * (e - e_prev) / dt
    if (u > u_max and e > 0.0) or (u < u_min and e < 0.0):
        e_int_new = e_int
        u = kp * e + ki * e_int_new + kd * (e - e_prev) / dt
    if u > u_max:
        u = u_max
    elif u < u_min:
        u = u_min
    return u, e_int_new


def pid_step(gains, e: float, e_int: float, e_prev: float, dt: float) -> tuple[float, float]:
    """One PID update with the command clamped to [0, 1].

    Integration is frozen while the unclamped command saturates in the
    direction the error pushes it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    kp, ki, kd = gains
    u, e_int_new = pid_law(float(kp), float(ki), float(kd), float(e), float(e_int), float(e_prev),
                           float(dt), 0.0, 1.0)
    return float(u), float(e_int_new)


@dataclass
class FopdtActuator:
    """First-order-plus-dead-time actuator with command saturation.

    The dead time is realised as a queue of ``round(dead_time / dt)``
    pending commands, so it is quantised to the step size the actuator is
    first driven with.
    """

    gain: float
    tau_p: float
    dead_time: float
    u_min: float = 0.0
    u_max: float = 1.0
    state: float = 0.0
    delay_line: np.ndarray | None = field(default=None, repr=False)
    _head: int = field(default=0, repr=False)
    _dt: float | None = field(default=None, repr=False)
    _u0: float = field(default=0.0, repr=False)

    def __post_init__(self):
        if self.tau_p <= 0:
            raise ValueError("tau_p must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be non-negative")
        if self.u_max < self.u_min:
            raise ValueError("u_max must be >= u_min")

    def reset(self, u0: float = 0.0, dt: float | None = None):
        self._u0 = u0
        self.state = self.gain * min(max(u0, self.u_min), self.u_max)
        self._dt = dt
        self.delay_line = None if dt is None else np.full(int(round(self.dead_time / dt)), u0)
        self._head = 0


def actuator_step(a: FopdtActuator, u: float, dt: float) -> float:
    """Drive actuator ``a`` with command ``u`` for ``dt`` seconds; returns its output."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if a.delay_line is None or a._dt != dt:
        a.delay_line = np.full(int(round(a.dead_time / dt)), a._u0, dtype=float)
        a._head = 0
        a._dt = dt
    a.state, a._head = fopdt_step(a.state, a.delay_line, a._head, float(u), a.gain, a.tau_p,
                                  a.u_min, a.u_max, float(dt))
    return a.state
