//! Scripted lead vehicle driven by free-road IDM.

use crate::control::{idm_accel, IdmConfig};

/// Lead vehicle along the route: station, speed, and the acceleration
/// applied over the last step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LeadState {
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

/// Target speed at time `t`: the last profile entry at or before `t`, or
/// `fallback` before the first entry.
pub fn profile_target(profile: &[(f64, f64)], t: f64, fallback: f64) -> f64 {
    profile
        .iter()
        .rev()
        .find(|(ti, _)| *ti <= t + 1e-9)
        .map_or(fallback, |(_, v)| *v)
}

/// Advances the lead by `dt` from time `t`.
///
/// Free-road IDM with `v_0` set to the current profile target. A zero
/// target brakes at `b_comf` down to standstill, since IDM is undefined for
/// `v_0 = 0`. An empty profile keeps the lead parked.
pub fn lead_profile_step(profile: &[(f64, f64)], idm: &IdmConfig, state: &LeadState, t: f64, dt: f64) -> LeadState {
    if profile.is_empty() {
        return LeadState {
            s: state.s,
            v: 0.0,
            a: 0.0,
        };
    }
    let target = profile_target(profile, t, state.v);
    let mut a = if target <= 0.0 {
        if state.v > 0.0 {
            -idm.b_comf
        } else {
            0.0
        }
    } else {
        let cfg = IdmConfig { v_0: target, ..*idm };
        idm_accel(state.v, 0.0, f64::INFINITY, &cfg).expect("free road gap is valid")
    };
    let mut v = state.v + a * dt;
    if v < 0.0 {
        a = -state.v / dt;
        v = 0.0;
    }
    LeadState {
        s: state.s + 0.5 * (state.v + v) * dt,
        v,
        a,
    }
}
