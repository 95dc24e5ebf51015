"""Acceleration and command-speed laws for human and automated drivers.

Every function accepts scalars or numpy arrays (broadcast elementwise), so
the simulation engine can evaluate a whole platoon in one call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mixedtraffic.core import ControllerParams, IdmParams

# Floor on ego speed when forming a time gap, and the cap on the result.
TIME_GAP_SPEED_FLOOR = 0.1
TIME_GAP_CAP = 100.0


class CollisionError(RuntimeError):
    """Raised when a vehicle reaches a non-positive space gap."""


@dataclass(frozen=True)
class MicroObservation:
    """What an ego vehicle sees of itself and its immediate leader.

    Attributes
    ----------
    v_alpha : float
        ego speed, in m/s
    v_l : float
        leader speed, in m/s
    a_l : float
        leader acceleration, in m/s2
    s_alpha : float
        bumper-to-bumper space gap, in m
    """

    v_alpha: float
    v_l: float
    s_alpha: float
    a_l: float = 0.0

    @property
    def h_alpha(self):
        return time_gap(self.s_alpha, self.v_alpha)


def time_gap(s, v):
    """Space gap over speed, finite at standstill."""
    return np.minimum(s / np.maximum(v, TIME_GAP_SPEED_FLOOR), TIME_GAP_CAP)


def idm_desired_gap(v_alpha, dv, p: IdmParams):
    """Desired space gap s* of the IDM.

    ``dv`` is the approach rate, ego speed minus leader speed, so closing
    in on a slower leader (dv > 0) widens the desired gap.
    """
    dynamic = v_alpha * p.T + v_alpha * dv / (2.0 * np.sqrt(p.a * p.b))
    return p.s0 + np.maximum(0.0, dynamic)


def idm_accel(obs: MicroObservation, p: IdmParams, eps=0.0):
    """IDM acceleration plus an externally sampled noise term."""
    s = np.asarray(obs.s_alpha, dtype=float)
    if np.any(s <= 0):
        raise CollisionError(f"IDM evaluated at non-positive gap {np.min(s)!r}")
    s_star = idm_desired_gap(obs.v_alpha, obs.v_alpha - obs.v_l, p)
    free = (obs.v_alpha / p.v0) ** p.delta
    return p.a * (1.0 - free - (s_star / obs.s_alpha) ** 2) + eps


def kernel_average_speed(field, x_alpha, t, w):
    """Mean of the interpolated speed field over ``[x_alpha, x_alpha + w]``.

    The integral is evaluated in closed form on the field's interpolant,
    so the result is exact for piecewise-linear and step fields alike.
    """
    if not w > 0:
        raise ValueError("window width must be positive")
    x_alpha = np.asarray(x_alpha, dtype=float)
    F = field.antiderivative(t)
    ends = F(np.concatenate([np.ravel(x_alpha + w), np.ravel(x_alpha)]))
    n = ends.size // 2
    out = ((ends[:n] - ends[n:]) / w).reshape(np.shape(x_alpha))
    return out if out.ndim else float(out)


def blend_desired_speed(v_alpha, h_alpha, v_avg):
    """Desired speed: ego speed at short time gaps, the field average at
    long ones, linear in the time gap in between."""
    lam = np.minimum(np.maximum(h_alpha - 1.0, 0.0), 1.0)
    out = (1.0 - lam) * v_alpha + lam * v_avg
    return out if np.ndim(out) else float(out)


def safety_speed(obs: MicroObservation, p: ControllerParams):
    """Largest speed that keeps the minimum space and time gaps over the
    decision horizon, assuming the leader holds its acceleration."""
    tau = p.tau_s
    num = (obs.s_alpha - p.s_min + obs.v_l * tau + 0.5 * obs.a_l * tau ** 2
           - 0.5 * obs.v_alpha * tau)
    v_fs = np.maximum(0.0, num / (p.h_min + 0.5 * tau))
    return v_fs if np.ndim(v_fs) else float(v_fs)


def command_speed(obs: MicroObservation, v_avg, p: ControllerParams):
    """Two-layer command speed, capped by the safety filter."""
    h = obs.h_alpha
    v_des = blend_desired_speed(obs.v_alpha, h, v_avg)
    gap_term = p.kp * (h - p.h_des) + p.kd * (obs.v_l - obs.v_alpha)
    v_c = np.maximum(0.0, np.minimum(v_des + gap_term, safety_speed(obs, p)))
    return v_c if np.ndim(v_c) else float(v_c)


def track_speed(v_current, v_c, dt, bounds=(-3.0, 1.5)):
    """Acceleration that reaches ``v_c`` in one step, within ``bounds``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a_min, a_max = bounds
    acc = np.minimum(np.maximum((v_c - v_current) / dt, a_min), a_max)
    return acc if np.ndim(acc) else float(acc)
