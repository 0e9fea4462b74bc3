"""Car-following (IDM) and lane-change (MOBIL) rules for scripted traffic."""

from __future__ import annotations

import math
from dataclasses import dataclass

B_EMERGENCY = 6.0  # m/s^2 hard braking floor


@dataclass(frozen=True)
class IdmParams:
    v0: float = 7.0        # desired speed, m/s
    T: float = 1.4         # time headway, s
    a_max: float = 2.0     # comfortable acceleration, m/s^2
    b: float = 2.0         # comfortable deceleration, m/s^2
    s0: float = 2.0        # standstill gap, m
    delta: float = 4.0


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    b_safe: float = 4.0        # max imposed follower deceleration, m/s^2
    a_threshold: float = 0.1   # minimum net incentive, m/s^2


def idm_accel(v: float, v_lead: float | None, gap: float, p: IdmParams) -> float:
    """Intelligent Driver Model acceleration; v_lead None means a free road.

    A non-positive gap with a leader present is already a contact situation
    and returns the emergency braking floor. Output is clamped to
    [-B_EMERGENCY, a_max].
    """
    free = 1.0 - (v / p.v0) ** p.delta
    if v_lead is None:
        a = p.a_max * free
    else:
        if gap <= 0.0:
            return -B_EMERGENCY
        s_star = p.s0 + max(0.0, v * p.T + v * (v - v_lead)
                            / (2.0 * math.sqrt(p.a_max * p.b)))
        a = p.a_max * (free - (s_star / gap) ** 2)
    return min(max(a, -B_EMERGENCY), p.a_max)


@dataclass(frozen=True)
class Neighbor:
    """A vehicle adjacent to the decision maker: its speed and the
    bumper-to-bumper gap between it and the decision maker."""
    speed: float
    gap: float


@dataclass(frozen=True)
class Surroundings:
    lead_cur: Neighbor | None = None
    follow_cur: Neighbor | None = None
    lead_tgt: Neighbor | None = None
    follow_tgt: Neighbor | None = None


def _accel(v, leader: Neighbor | None, p):
    if leader is None:
        return idm_accel(v, None, math.inf, p)
    return idm_accel(v, leader.speed, leader.gap, p)


def mobil_lane_change(v_self: float, length: float, env: Surroundings,
                      idm_p: IdmParams, mobil_p: MobilParams) -> bool:
    """Standard MOBIL: change lanes iff the target follower stays above the
    safety deceleration and the politeness-weighted acceleration gains beat
    the switching threshold. All accelerations are evaluated with the
    decision maker's own IDM parameters (followers' true parameters are not
    observable)."""
    if env.lead_tgt is not None and env.lead_tgt.gap <= 0.0:
        return False
    if env.follow_tgt is not None and env.follow_tgt.gap <= 0.0:
        return False

    # safety: the target follower braking for me
    if env.follow_tgt is not None:
        a_tf_new = idm_accel(env.follow_tgt.speed, v_self, env.follow_tgt.gap, idm_p)
        if a_tf_new < -mobil_p.b_safe:
            return False
    else:
        a_tf_new = None

    a_self_cur = _accel(v_self, env.lead_cur, idm_p)
    a_self_tgt = _accel(v_self, env.lead_tgt, idm_p)
    gain = a_self_tgt - a_self_cur

    if env.follow_tgt is not None:
        if env.lead_tgt is not None:
            old_gap = env.follow_tgt.gap + length + env.lead_tgt.gap
            a_tf_old = idm_accel(env.follow_tgt.speed, env.lead_tgt.speed, old_gap, idm_p)
        else:
            a_tf_old = idm_accel(env.follow_tgt.speed, None, math.inf, idm_p)
        gain += mobil_p.politeness * (a_tf_new - a_tf_old)

    if env.follow_cur is not None:
        a_cf_old = idm_accel(env.follow_cur.speed, v_self, env.follow_cur.gap, idm_p)
        if env.lead_cur is not None:
            new_gap = env.follow_cur.gap + length + env.lead_cur.gap
            a_cf_new = idm_accel(env.follow_cur.speed, env.lead_cur.speed, new_gap, idm_p)
        else:
            a_cf_new = idm_accel(env.follow_cur.speed, None, math.inf, idm_p)
        gain += mobil_p.politeness * (a_cf_new - a_cf_old)

    return gain > mobil_p.a_threshold
