"""Psycho-physical human car-following with four driving regimes.

The model distinguishes free flow, approaching, following, and braking,
switching on gap and closing-speed thresholds in the style of highway
car-following models with oscillatory (limit-cycle) following behavior.
All regime formulas are documented here; parameter names follow the
cc0..cc9 convention:

    cc0   standstill bumper gap (m)
    cc1   desired time headway (s), drawn per driver
    cc2   following oscillation band width (m)
    cc3   perception gain: metres of extra alert distance per m/s of
          closing speed
    cc4   opening-speed threshold (m/s, negative) that ends a
          deceleration bout while following
    cc5   closing-speed threshold (m/s, positive) that ends an
          acceleration bout while following
    cc6   free-flow speed-tracking gain (1/s)
    cc7   oscillation acceleration magnitude (m/s^2)
    cc8   maximum acceleration from standstill (m/s^2)
    cc9   maximum acceleration at 80 km/h (m/s^2)

Regime selection, with gap g (bumper to bumper), closing speed
dv = v - v_pv, and desired following distance sdx_c = cc0 + cc1 * min(v, v_pv):

    braking      g < sdx_c
    approaching  g < sdx_c + cc2 + cc3 * max(dv, 0)  and  dv > cc5
    following    g <= sdx_c + cc2
    free flow    otherwise

Braking and approaching apply the kinematic deceleration that closes the
speed difference exactly at the standstill gap or the desired distance
respectively.  Following alternates between +-cc7 with hysteresis carried
by the sign of the driver's current acceleration, which produces a
sustained oscillation in the (velocity, acceleration) plane rather than
convergence to a fixed point.  Free flow tracks the driver's desired
speed proportionally.

Positive acceleration is capped by the same powertrain envelope the
automated vehicles use, interpolated between cc8 at standstill and cc9
at 80 km/h.

Each driver also carries a perception reaction_time: comfort-band
decisions respond to the leader state from reaction_time ago, while an
immediate override (see human_accel_reactive) handles situations that
demand firm braking.  The lag is what makes dense platoons string
unstable, so small disturbances grow into stop-and-go waves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

MPH = 0.44704
_V_CC9 = 80.0 / 3.6  # speed at which the cc9 acceleration cap applies


@dataclass
class HumanDriverParams:
    cc0: float = 1.5
    cc1: float = 1.4
    cc2: float = 4.0
    cc3: float = 8.0
    cc4: float = -0.35
    cc5: float = 0.35
    cc6: float = 0.40
    cc7: float = 0.5
    cc8: float = 3.5
    cc9: float = 1.5
    v_desired: float = 29.06
    brake_limit: float = 8.0  # m/s^2, maximum deceleration magnitude
    reaction_time: float = 0.9  # s, perception lag on the leader's state

    def validate(self) -> None:
        if self.cc0 <= 0 or self.cc1 <= 0 or self.cc2 < 0:
            raise ValueError("cc0, cc1 must be positive and cc2 nonnegative")
        if self.v_desired <= 0:
            raise ValueError("v_desired must be positive")


@dataclass
class PopulationConfig:
    """Distributions from which per-driver parameters are drawn.

    The default desired headway is a shifted lognormal with median 1.4 s
    and 5th-95th percentiles near [0.9, 2.6] s.  Desired speed is uniform
    on an offset interval around the posted limit.
    """

    speed_limit: float = 29.06
    headway_dist: str = "shifted_lognormal"   # or "fixed"
    headway_shift: float = 0.5
    headway_mu: float = math.log(0.9)
    headway_sigma: float = 0.515
    headway_value: float = 1.4                # used when headway_dist == "fixed"
    v_offset_low: float = -10.0 * MPH
    v_offset_high: float = 5.0 * MPH
    reaction_low: float = 0.5                 # s
    reaction_high: float = 1.5                # s
    # when set, ties each driver's perception lag to their desired
    # headway (reaction_time = scale * cc1) instead of an independent
    # uniform draw: relaxed long-headway drivers also monitor their
    # leader less frequently, so the lag-to-headway ratio that governs
    # platoon stability is uniform across the population
    reaction_headway_scale: float | None = None
    # spurious braking events: each driver occasionally brakes for a
    # few seconds without a car-following reason (distraction,
    # overreaction, rubbernecking).  brake_event_rate is per driver per
    # second; during an event the driver applies a deceleration drawn
    # once per event from [0.5, 1.0] * brake_event_decel.  The
    # emergency override stays active throughout, so events never
    # cause collisions.  In dense traffic these events are what
    # nucleates stop-and-go waves.
    brake_event_rate: float = 0.00025         # 1/s
    brake_event_duration: float = 8.0         # s
    brake_event_decel: float = 2.5            # m/s^2
    overrides: dict = field(default_factory=dict)  # fixed cc overrides


def sample_driver(rng: np.random.Generator,
                  pop: PopulationConfig) -> HumanDriverParams:
    """Draw one driver's frozen parameter set."""
    if pop.headway_dist == "fixed":
        cc1 = pop.headway_value
    elif pop.headway_dist == "shifted_lognormal":
        cc1 = pop.headway_shift + rng.lognormal(pop.headway_mu,
                                                pop.headway_sigma)
    else:
        raise ValueError(f"unknown headway distribution {pop.headway_dist!r}")
    v_des = pop.speed_limit + rng.uniform(pop.v_offset_low, pop.v_offset_high)
    if pop.reaction_headway_scale is not None:
        reaction = pop.reaction_headway_scale * cc1
    else:
        reaction = rng.uniform(pop.reaction_low, pop.reaction_high)
    params = HumanDriverParams(cc1=cc1, v_desired=v_des,
                               reaction_time=reaction)
    if pop.overrides:
        params = replace(params, **pop.overrides)
    params.validate()
    return params


class DriverArrays:
    """Struct-of-arrays view over a list of driver parameter sets,
    for vectorized per-tick evaluation."""

    FIELDS = ("cc0", "cc1", "cc2", "cc3", "cc4", "cc5", "cc6", "cc7",
              "cc8", "cc9", "v_desired", "brake_limit", "reaction_time")

    def __init__(self, drivers: list[HumanDriverParams]):
        for name in self.FIELDS:
            setattr(self, name,
                    np.array([getattr(d, name) for d in drivers], float))
        self.n = len(drivers)

    def take(self, idx: np.ndarray) -> "DriverArrays":
        out = object.__new__(DriverArrays)
        for name in self.FIELDS:
            setattr(out, name, getattr(self, name)[idx])
        out.n = len(idx)
        return out


def powertrain_envelope(v, m1=0.285, b1=2.00, m2=-0.121, b2=4.83):
    """Shared acceleration ceiling for all vehicles at speed v."""
    return np.minimum(b1 + m1 * np.asarray(v, float), b2 + m2 * np.asarray(v, float))


def accel_cap(v, params: DriverArrays):
    """Driver comfort acceleration cap: cc8 at rest tapering to cc9 at
    80 km/h, never above the powertrain envelope."""
    v = np.asarray(v, float)
    frac = np.clip(v / _V_CC9, 0.0, 1.0)
    comfort = params.cc8 + (params.cc9 - params.cc8) * frac
    return np.minimum(comfort, powertrain_envelope(v))


def human_accel_batch(gap, v, v_pv, a_pv, a_prev, has_pv,
                      params: DriverArrays, rng: np.random.Generator):
    """Vectorized regime evaluation for a fleet snapshot.

    gap is bumper-to-bumper distance to the preceding vehicle (ignored
    where has_pv is False).  a_prev is the driver's current acceleration,
    which carries the following-regime hysteresis state.  Returns
    accelerations bounded by the comfort/powertrain cap above and
    brake_limit below.
    """
    gap = np.asarray(gap, float)
    v = np.asarray(v, float)
    v_pv = np.asarray(v_pv, float)
    a_pv = np.asarray(a_pv, float)
    a_prev = np.asarray(a_prev, float)
    has_pv = np.asarray(has_pv, bool)

    dv = v - v_pv
    v_slow = np.minimum(v, v_pv)
    sdx_c = params.cc0 + params.cc1 * v_slow
    sdx_o = sdx_c + params.cc2
    sdx_v = sdx_o + params.cc3 * np.maximum(dv, 0.0)

    free = ~has_pv | (gap >= sdx_v) | ((gap > sdx_o) & (dv <= params.cc5))
    braking = has_pv & (gap < sdx_c)
    approaching = has_pv & ~braking & ~free & (gap < sdx_v) & (dv > params.cc5)
    following = has_pv & ~braking & ~approaching & ~free

    a = np.zeros_like(v)

    # free flow: proportional speed tracking
    a_free = params.cc6 * (params.v_desired - v)
    a[free] = a_free[free]

    # following: relaxation oscillation at +-cc7 with hysteresis on the
    # current acceleration sign; a small multiplicative jitter keeps
    # drivers from locking phase with each other
    if following.any():
        jitter = rng.uniform(0.9, 1.1, size=int(following.sum()))
        osc = np.zeros_like(v)
        osc[following] = params.cc7[following] * jitter
        decel_bout = (a_prev < 0.0) & (dv > params.cc4) & (gap <= sdx_o)
        start_decel = (a_prev >= 0.0) & ((dv > params.cc5) |
                                         (gap < sdx_c + 0.25 * params.cc2))
        go_down = following & (decel_bout | start_decel)
        a[go_down] = -osc[go_down]
        go_up = following & ~go_down
        a[go_up] = osc[go_up]
        # a leader pulling away fast is chased at normal acceleration,
        # not at the oscillation magnitude; this is what lets a queue
        # discharge briskly once the vehicle ahead gets moving
        chase = go_up & (dv < params.cc4)
        a[chase] = np.maximum(a_free, osc)[chase]
        # never oscillate above the driver's own desired speed
        capped = go_up & (v >= params.v_desired)
        a[capped] = 0.0

    # a hard-braking leader is handled by stopping-point comparison: the
    # follower plans to stop cc0 short of where the leader will come to
    # rest, which stays collision-free even as the closing speed grows
    lead_braking = a_pv < -0.5
    lead_stop = np.where(lead_braking,
                         v_pv * v_pv / (2.0 * np.maximum(-a_pv, 0.5)), 0.0)
    avail = np.maximum(gap - params.cc0 + lead_stop, 0.01)
    a_stop = np.where(lead_braking, -v * v / (2.0 * avail), 0.0)

    # approaching: kinematic deceleration that zeroes the speed
    # difference at the desired following distance
    if approaching.any():
        room = np.maximum(gap - sdx_c, 0.01)
        a_app = np.minimum(a_pv, 0.0) - dv * dv / (2.0 * room)
        a_app = np.minimum(a_app, a_stop)
        m = approaching
        a[m] = np.minimum(a_app[m], 0.0)

    # braking: closer than the desired distance; if still closing, brake
    # to stop the closure by the standstill gap; either way brake harder
    # the deeper the gap has closed below the desired distance, which
    # makes drivers undershoot their leader's speed while the gap reopens
    if braking.any():
        room = np.maximum(gap - params.cc0, 0.01)
        a_brk = np.minimum(a_pv, 0.0) - dv * dv / (2.0 * room)
        a_brk = np.minimum(a_brk, a_stop)
        intrusion = np.clip((sdx_c - gap) / np.maximum(sdx_c, 1.0), 0.0, 1.0)
        a_open = -params.cc7 * (1.0 + 6.0 * intrusion)
        m = braking & (dv > 0.0)
        a[m] = np.minimum(a_brk[m], a_open[m])
        m2 = braking & (dv <= 0.0)
        a[m2] = np.minimum(a_stop[m2], a_open[m2])

    cap = accel_cap(v, params)
    return np.clip(a, -params.brake_limit, cap)


def human_accel_reactive(gap_now, v, pv_v_now, pv_a_now,
                         gap_obs, pv_v_obs, pv_a_obs,
                         a_prev, has_pv, params: DriverArrays,
                         rng: np.random.Generator,
                         override_gap_frac: float = 0.6,
                         override_accel: float = -2.0,
                         hold=None):
    """Regime evaluation under delayed perception of the leader.

    Drivers base their comfort-band decisions on the leader state they
    perceived reaction_time ago (gap_obs, pv_v_obs, pv_a_obs), which is
    what lets disturbances amplify along a dense platoon.  An immediate
    override watches the true current state, but only engages once the
    situation is genuinely critical: the true gap has closed below
    override_gap_frac of the desired following distance, or the
    up-to-date evaluation demands braking stronger than override_accel.
    The late trigger keeps the perception lag effective (drivers do
    overshoot and brake harder than their leader, which is what grows
    stop-and-go waves) while the kinematic stopping-point braking that
    the override applies still prevents any collision.

    hold, when given, is an array of spurious braking commands, NaN
    where inactive: drivers with an active entry apply that command
    instead of the comfort-band evaluation, while the emergency
    override still applies.
    """
    a_obs = human_accel_batch(gap_obs, v, pv_v_obs, pv_a_obs, a_prev,
                              has_pv, params, rng)
    if hold is not None:
        hold = np.asarray(hold, float)
        a_obs = np.where(np.isnan(hold), a_obs, hold)
    a_now = human_accel_batch(gap_now, v, pv_v_now, pv_a_now, a_prev,
                              has_pv, params, rng)
    sdx_c = params.cc0 + params.cc1 * np.minimum(v, pv_v_now)
    danger = has_pv & ((np.asarray(gap_now, float)
                        < override_gap_frac * sdx_c)
                       | (a_now < override_accel))
    return np.where(danger, np.minimum(a_obs, a_now), a_obs)


def classify_regime(gap, v, v_pv, params: HumanDriverParams) -> str:
    """Name the active regime for a scalar snapshot (diagnostic helper)."""
    dv = v - v_pv
    sdx_c = params.cc0 + params.cc1 * min(v, v_pv)
    sdx_o = sdx_c + params.cc2
    sdx_v = sdx_o + params.cc3 * max(dv, 0.0)
    if gap < sdx_c:
        return "braking"
    if gap < sdx_v and dv > params.cc5:
        return "approaching"
    if gap <= sdx_o:
        return "following"
    return "free_flow"


def human_accel(ego_v, ego_a, gap, pv_v, pv_a,
                params: HumanDriverParams,
                rng: np.random.Generator) -> float:
    """Scalar wrapper over the vectorized regime evaluation.

    Pass gap = None for a leaderless (free-flow) vehicle.
    """
    arrays = DriverArrays([params])
    has_pv = gap is not None
    out = human_accel_batch(
        np.array([gap if has_pv else 1e9]),
        np.array([ego_v]), np.array([pv_v if has_pv else 0.0]),
        np.array([pv_a if has_pv else 0.0]), np.array([ego_a]),
        np.array([has_pv]), arrays, rng)
    return float(out[0])
