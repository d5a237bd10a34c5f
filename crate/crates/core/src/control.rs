//! Steering, speed and car-following controllers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{plant_for_throttle, LateralParams, PlantFamily, IDENTIFIED_GAIN, LATERAL_MIN_SPEED};

/// Steering command limit, rad.
pub const STEER_LIMIT: f64 = 0.5;
/// Upper-controller acceleration bounds, m/s².
pub const ACCEL_MIN: f64 = -4.0;
pub const ACCEL_MAX: f64 = 2.0;
/// Brake deceleration per % of negative PI demand, m/s². Equal to the
/// identified throttle gain so the loop gain is continuous through zero.
pub const BRAKE_PER_PERCENT: f64 = IDENTIFIED_GAIN;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("InvalidGap: IDM gap must be positive, got {0} m")]
    InvalidGap(f64),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
}

fn positive(name: &str, v: f64) -> Result<(), ControlError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), ControlError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ControlError::InvalidConfig(format!("{name} must be non-negative, got {v}")))
    }
}

/// Lateral PD gains acting on the preview error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralGains {
    pub k_p: f64,
    pub k_d: f64,
    #[serde(default = "default_derivative_tc")]
    pub derivative_filter_tc: f64,
}

fn default_derivative_tc() -> f64 {
    0.05
}

impl LateralGains {
    pub fn new(k_p: f64, k_d: f64) -> Self {
        Self {
            k_p,
            k_d,
            derivative_filter_tc: default_derivative_tc(),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        positive("k_p", self.k_p)?;
        non_negative("k_d", self.k_d)?;
        non_negative("derivative_filter_tc", self.derivative_filter_tc)
    }
}

/// Derivative filter memory of [`pd_steer`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PdState {
    pub prev_y: Option<f64>,
    pub dy_filtered: f64,
}

/// `δ = −(k_p·y + k_d·ẏ_f)`, clamped to ±[`STEER_LIMIT`].
///
/// The derivative is a backward difference passed through a first-order
/// filter with time constant `derivative_filter_tc`. The first call has no
/// history and uses a zero derivative.
pub fn pd_steer(y: f64, state: &mut PdState, gains: &LateralGains, dt: f64) -> f64 {
    if let Some(prev) = state.prev_y {
        let raw = (y - prev) / dt;
        let alpha = dt / (gains.derivative_filter_tc + dt);
        state.dy_filtered += alpha * (raw - state.dy_filtered);
    }
    state.prev_y = Some(y);
    (-(gains.k_p * y + gains.k_d * state.dy_filtered)).clamp(-STEER_LIMIT, STEER_LIMIT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRegulatorConfig {
    pub nominal: LateralParams,
    /// Q-filter bandwidth, rad/s.
    pub q_cutoff: f64,
    pub enabled: bool,
}

impl ModelRegulatorConfig {
    pub fn new(nominal: LateralParams) -> Self {
        Self {
            nominal,
            q_cutoff: 2.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        positive("q_cutoff", self.q_cutoff)?;
        self.nominal
            .validate()
            .map_err(|e| ControlError::InvalidConfig(e.to_string()))
    }
}

/// Disturbance observer around the nominal steer-to-yaw-rate response.
///
/// The nominal response is approximated as `r = K_r/(τs + 1)·δ`. The
/// observer inverts it through a first-order Q filter and compares with the
/// steering actually applied on the previous step; the difference is the
/// equivalent input disturbance, which the caller subtracts from its command.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegulator {
    cfg: ModelRegulatorConfig,
    lp_r: f64,
    lp_delta: f64,
    prev_applied: f64,
    correction: f64,
}

impl ModelRegulator {
    pub fn new(cfg: ModelRegulatorConfig) -> Result<Self, ControlError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            lp_r: 0.0,
            lp_delta: 0.0,
            prev_applied: 0.0,
            correction: 0.0,
        })
    }

    pub fn config(&self) -> &ModelRegulatorConfig {
        &self.cfg
    }

    /// Nominal `(K_r, τ)` at speed `v_x`.
    pub fn nominal_response(&self, v_x: f64) -> (f64, f64) {
        let p = self.cfg.nominal.with_speed(v_x.max(LATERAL_MIN_SPEED));
        let tau = p.j * p.v_x / (p.c_f * p.l_f * p.l_f + p.c_r * p.l_r * p.l_r);
        (p.yaw_rate_gain(), tau)
    }

    /// Correction `δ_corr` to subtract from `delta_cmd`. Returns 0 when
    /// disabled.
    pub fn step(&mut self, delta_cmd: f64, r_meas: f64, v_x: f64, dt: f64) -> f64 {
        if !self.cfg.enabled {
            return 0.0;
        }
        let (k_r, tau) = self.nominal_response(v_x);
        let tau_q = 1.0 / self.cfg.q_cutoff;
        let alpha = dt / (tau_q + dt);
        self.lp_r += alpha * (r_meas - self.lp_r);
        self.lp_delta += alpha * (self.prev_applied - self.lp_delta);
        let ratio = tau / tau_q;
        let estimate = (ratio * r_meas + (1.0 - ratio) * self.lp_r) / k_r - self.lp_delta;
        self.correction = estimate;
        self.prev_applied = (delta_cmd - estimate).clamp(-STEER_LIMIT, STEER_LIMIT);
        estimate
    }
}

/// One breakpoint of the PI speed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub speed: f64,
    pub k_p: f64,
    pub k_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiSchedule {
    pub points: Vec<PiGains>,
    /// Bound on the integral contribution `k_i·∫e`, % throttle.
    pub integrator_limit: f64,
}

impl PiSchedule {
    pub fn new(points: Vec<PiGains>, integrator_limit: f64) -> Result<Self, ControlError> {
        let s = Self {
            points,
            integrator_limit,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if self.points.is_empty() {
            return Err(ControlError::InvalidConfig("PI schedule is empty".into()));
        }
        if self.points.windows(2).any(|w| w[1].speed <= w[0].speed) {
            return Err(ControlError::InvalidConfig(
                "PI schedule speeds must be strictly increasing".into(),
            ));
        }
        for p in &self.points {
            non_negative("k_p", p.k_p)?;
            non_negative("k_i", p.k_i)?;
        }
        positive("integrator_limit", self.integrator_limit)
    }

    /// Gains at speed `v`, linearly interpolated and clamped at the ends.
    pub fn gains_at(&self, v: f64) -> (f64, f64) {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if v <= first.speed {
            return (first.k_p, first.k_i);
        }
        if v >= last.speed {
            return (last.k_p, last.k_i);
        }
        for w in self.points.windows(2) {
            if v < w[1].speed {
                let t = (v - w[0].speed) / (w[1].speed - w[0].speed);
                return (
                    w[0].k_p + t * (w[1].k_p - w[0].k_p),
                    w[0].k_i + t * (w[1].k_i - w[0].k_i),
                );
            }
        }
        (last.k_p, last.k_i)
    }

    /// Pole-placement schedule for a plant family: at each breakpoint the
    /// plant is taken at the throttle that holds that speed, and the PI
    /// closed loop `s² + (a + b·k_p)s + b·k_i` gets natural frequency
    /// `omega_n` and damping `zeta`.
    pub fn pole_placement(family: &PlantFamily, speeds: &[f64], omega_n: f64, zeta: f64) -> Self {
        let points = speeds
            .iter()
            .map(|&v| {
                let mut u = 15.0;
                for _ in 0..50 {
                    let plant = plant_for_throttle(family, u);
                    u = (v / plant.dc_gain()).clamp(0.0, 100.0);
                }
                let plant = plant_for_throttle(family, u);
                PiGains {
                    speed: v,
                    k_p: ((2.0 * zeta * omega_n - plant.a) / plant.b).max(0.0),
                    k_i: omega_n * omega_n / plant.b,
                }
            })
            .collect();
        Self {
            points,
            integrator_limit: 100.0,
        }
    }
}

impl Default for PiSchedule {
    fn default() -> Self {
        Self::pole_placement(&PlantFamily::default(), &[0.0, 2.0, 5.0, 10.0, 15.0], 0.8, 1.0)
    }
}

/// Integrator memory of [`pi_speed`], in % throttle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState {
    pub integral: f64,
}

/// Split throttle/brake command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LongitudinalCommand {
    /// Throttle opening, %, in `[0, 100]`.
    pub throttle: f64,
    /// Commanded brake deceleration, m/s², in `[−4, 0]`.
    pub brake: f64,
}

/// Gain-scheduled PI on speed error.
///
/// Positive demand goes to throttle (saturating at 100 %), negative demand
/// to the brake channel at [`BRAKE_PER_PERCENT`]. The integrator is clamped
/// and frozen while the output is saturated in the direction of the error.
pub fn pi_speed(v_ref: f64, v: f64, sched: &PiSchedule, state: &mut PiState, dt: f64) -> LongitudinalCommand {
    pi_speed_ff(v_ref, v, 0.0, sched, state, dt)
}

/// [`pi_speed`] with an additive feedforward demand `ff`, % throttle.
pub fn pi_speed_ff(
    v_ref: f64,
    v: f64,
    ff: f64,
    sched: &PiSchedule,
    state: &mut PiState,
    dt: f64,
) -> LongitudinalCommand {
    let (k_p, k_i) = sched.gains_at(v);
    let e = v_ref - v;
    let limit = sched.integrator_limit;
    let candidate = (state.integral + k_i * e * dt).clamp(-limit, limit);
    let unsat = ff + k_p * e + candidate;
    let low = ACCEL_MIN / BRAKE_PER_PERCENT;
    let saturated_high = unsat > 100.0 && e > 0.0;
    let saturated_low = unsat < low && e < 0.0;
    if !(saturated_high || saturated_low) {
        state.integral = candidate;
    }
    let u = ff + k_p * e + state.integral;
    if u >= 0.0 {
        LongitudinalCommand {
            throttle: u.min(100.0),
            brake: 0.0,
        }
    } else {
        LongitudinalCommand {
            throttle: 0.0,
            brake: (u * BRAKE_PER_PERCENT).max(ACCEL_MIN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaccConfig {
    /// Desired time gap, s.
    pub t_gap: f64,
    /// Standstill distance, m.
    pub d_0: f64,
    pub k_p_gap: f64,
    pub k_d_gap: f64,
    pub k_ff: f64,
    pub v2v_available: bool,
}

impl Default for CaccConfig {
    fn default() -> Self {
        Self {
            t_gap: 0.6,
            d_0: 3.0,
            k_p_gap: 0.45,
            // Keeps k_d·t_gap below 1/2 under a 50 % gain increase; above
            // that, ACC's ramp-following error is smaller than CACC's.
            k_d_gap: 0.5,
            k_ff: 1.0,
            v2v_available: true,
        }
    }
}

impl CaccConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        positive("t_gap", self.t_gap)?;
        non_negative("d_0", self.d_0)?;
        for (name, v) in [("k_p_gap", self.k_p_gap), ("k_d_gap", self.k_d_gap), ("k_ff", self.k_ff)] {
            if !v.is_finite() {
                return Err(ControlError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn desired_gap(&self, v_ego: f64) -> f64 {
        self.d_0 + self.t_gap * v_ego
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaccOutput {
    pub a_des: f64,
    /// Set when the measured gap is negative.
    pub collision: bool,
}

/// Constant-time-gap spacing controller with optional acceleration
/// feedforward. Without V2V data (or with `v2v_available = false`) this is
/// plain ACC.
pub fn cacc_accel(gap: f64, v_ego: f64, v_lead: f64, a_lead: Option<f64>, cfg: &CaccConfig) -> CaccOutput {
    if gap < 0.0 {
        return CaccOutput {
            a_des: ACCEL_MIN,
            collision: true,
        };
    }
    let e = gap - cfg.desired_gap(v_ego);
    let mut a = cfg.k_p_gap * e + cfg.k_d_gap * (v_lead - v_ego);
    if cfg.v2v_available {
        if let Some(a_lead) = a_lead {
            a += cfg.k_ff * a_lead;
        }
    }
    CaccOutput {
        a_des: a.clamp(ACCEL_MIN, ACCEL_MAX),
        collision: false,
    }
}

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmConfig {
    pub v_0: f64,
    #[serde(rename = "T")]
    pub t_headway: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub delta_exp: f64,
    pub s_0: f64,
}

impl Default for IdmConfig {
    fn default() -> Self {
        Self {
            v_0: 13.9,
            t_headway: 1.5,
            a_max: 1.0,
            b_comf: 1.5,
            delta_exp: 4.0,
            s_0: 2.0,
        }
    }
}

impl IdmConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        positive("v_0", self.v_0)?;
        positive("T", self.t_headway)?;
        positive("a_max", self.a_max)?;
        positive("b_comf", self.b_comf)?;
        positive("delta_exp", self.delta_exp)?;
        positive("s_0", self.s_0)
    }
}

/// IDM acceleration. `dv` is the closing speed `v − v_lead`; pass
/// `f64::INFINITY` as `s` for free road.
pub fn idm_accel(v: f64, dv: f64, s: f64, cfg: &IdmConfig) -> Result<f64, ControlError> {
    if !(s > 0.0) {
        return Err(ControlError::InvalidGap(s));
    }
    let free = (v / cfg.v_0).powf(cfg.delta_exp);
    let interaction = if s.is_infinite() {
        0.0
    } else {
        let s_star = cfg.s_0 + v * cfg.t_headway + v * dv / (2.0 * (cfg.a_max * cfg.b_comf).sqrt());
        (s_star / s).powi(2)
    };
    Ok(cfg.a_max * (1.0 - free - interaction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{longitudinal_step, preset, LongitudinalPlant};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fusion_gains() -> LateralGains {
        LateralGains::new(0.15, 0.1)
    }

    #[test]
    fn pd_zero_error_gives_zero_steer() {
        let mut s = PdState::default();
        for _ in 0..10 {
            assert_eq!(pd_steer(0.0, &mut s, &fusion_gains(), 0.01), 0.0);
        }
    }

    #[test]
    fn pd_proportional_term() {
        let mut s = PdState::default();
        assert_abs_diff_eq!(pd_steer(1.0, &mut s, &fusion_gains(), 0.01), -0.15, epsilon = 1e-15);
        let mut s = PdState::default();
        assert_eq!(pd_steer(10.0, &mut s, &fusion_gains(), 0.01), -STEER_LIMIT);
    }

    #[test]
    fn pd_step_has_bounded_derivative() {
        let gains = fusion_gains();
        let mut s = PdState::default();
        pd_steer(0.0, &mut s, &gains, 0.001);
        pd_steer(1.0, &mut s, &gains, 0.001);
        // One filtered sample of a unit step is at most 1/(tc + dt).
        assert!(s.dy_filtered <= 1.0 / (gains.derivative_filter_tc + 0.001) + 1e-12);
        let mut peak = s.dy_filtered;
        for _ in 0..100 {
            pd_steer(1.0, &mut s, &gains, 0.001);
            peak = peak.max(s.dy_filtered);
        }
        assert!(peak <= 1.0 / gains.derivative_filter_tc);
        assert!(s.dy_filtered < 0.2 * peak);
    }

    proptest! {
        #[test]
        fn pd_is_odd(ys in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
            let gains = fusion_gains();
            let (mut a, mut b) = (PdState::default(), PdState::default());
            for y in ys {
                let pos = pd_steer(y, &mut a, &gains, 0.01);
                let neg = pd_steer(-y, &mut b, &gains, 0.01);
                prop_assert_eq!(pos, -neg);
            }
        }

        #[test]
        fn cacc_is_linear_before_clamp(e in -1.0f64..1.0, dv in -0.5f64..0.5, al in -0.5f64..0.5,
                                       e2 in -1.0f64..1.0, dv2 in -0.5f64..0.5, al2 in -0.5f64..0.5) {
            let cfg = CaccConfig::default();
            let v_ego = 5.0;
            let eval = |e: f64, dv: f64, al: f64| {
                cacc_accel(cfg.desired_gap(v_ego) + e, v_ego, v_ego + dv, Some(al), &cfg).a_des
            };
            let sum = eval(e + e2, dv + dv2, al + al2);
            prop_assert!((sum - (eval(e, dv, al) + eval(e2, dv2, al2))).abs() < 1e-9);
        }

        #[test]
        fn acc_equals_cacc_without_lead_accel(gap in 0.0f64..80.0, v in 0.0f64..15.0, vl in 0.0f64..15.0) {
            let cacc = CaccConfig::default();
            let acc = CaccConfig { v2v_available: false, ..cacc };
            prop_assert_eq!(cacc_accel(gap, v, vl, Some(0.0), &cacc), cacc_accel(gap, v, vl, None, &acc));
            prop_assert_eq!(cacc_accel(gap, v, vl, Some(0.0), &cacc), cacc_accel(gap, v, vl, None, &cacc));
        }

        #[test]
        fn idm_monotonicity(v in 0.1f64..12.0, dv in -2.0f64..2.0, s in 1.0f64..80.0) {
            let cfg = IdmConfig::default();
            let base = idm_accel(v, dv, s, &cfg).unwrap();
            prop_assert!(idm_accel(v + 0.1, dv, s, &cfg).unwrap() < base);
            prop_assert!(idm_accel(v, dv, s + 0.5, &cfg).unwrap() > base);
        }
    }

    #[test]
    fn cacc_equilibrium_and_collision() {
        let cfg = CaccConfig::default();
        let out = cacc_accel(cfg.desired_gap(5.0), 5.0, 5.0, Some(0.0), &cfg);
        assert_eq!(out.a_des, 0.0);
        assert!(!out.collision);
        let hit = cacc_accel(-0.1, 5.0, 5.0, None, &cfg);
        assert!(hit.collision);
        assert_eq!(hit.a_des, ACCEL_MIN);
        assert_eq!(cacc_accel(200.0, 0.0, 10.0, Some(3.0), &cfg).a_des, ACCEL_MAX);
    }

    #[test]
    fn steady_ramp_spacing_error() {
        // Lead and ego both accelerating at `a` with a steady spacing error:
        // the gap grows at t_gap·a, so v_lead − v_ego = t_gap·a and
        // a = k_p·e + k_d·t_gap·a + k_ff·a_lead.
        let cfg = CaccConfig::default();
        let a = 0.8;
        let v = 4.0;
        for (a_lead, k_ff) in [(Some(a), cfg.k_ff), (None, 0.0)] {
            let e = a * (1.0 - cfg.k_d_gap * cfg.t_gap - k_ff) / cfg.k_p_gap;
            let out = cacc_accel(cfg.desired_gap(v) + e, v, v + cfg.t_gap * a, a_lead, &cfg);
            assert_abs_diff_eq!(out.a_des, a, epsilon = 1e-12);
        }
    }

    #[test]
    fn idm_examples() {
        let cfg = IdmConfig::default();
        assert_eq!(idm_accel(cfg.v_0, 0.0, f64::INFINITY, &cfg).unwrap(), 0.0);
        assert_eq!(idm_accel(0.0, 0.0, cfg.s_0, &cfg).unwrap(), 0.0);
        let half = idm_accel(cfg.v_0 / 2.0, 0.0, f64::INFINITY, &cfg).unwrap();
        assert_abs_diff_eq!(half, 0.9375 * cfg.a_max, epsilon = 1e-15);
        assert_eq!(idm_accel(1.0, 0.0, 0.0, &cfg), Err(ControlError::InvalidGap(0.0)));
        assert_eq!(idm_accel(1.0, 0.0, -2.0, &cfg), Err(ControlError::InvalidGap(-2.0)));
    }

    #[test]
    fn idm_free_road_reaches_desired_speed() {
        let cfg = IdmConfig {
            v_0: 20.0 / 3.6,
            ..IdmConfig::default()
        };
        let dt = 0.01;
        let mut v: f64 = 0.0;
        for _ in 0..6000 {
            v += idm_accel(v, 0.0, f64::INFINITY, &cfg).unwrap() * dt;
        }
        assert!((v - cfg.v_0).abs() <= 1e-3 * cfg.v_0);
    }

    #[test]
    fn pi_holds_steady_throttle() {
        let plant = LongitudinalPlant::identified();
        let sched = PiSchedule::pole_placement(&PlantFamily::single(plant), &[0.0, 10.0], 0.8, 1.0);
        let (dt, v_ref) = (0.01, 5.0);
        let mut state = PiState::default();
        let mut v = 0.0;
        let mut cmd = LongitudinalCommand::default();
        for _ in 0..6000 {
            cmd = pi_speed(v_ref, v, &sched, &mut state, dt);
            v = longitudinal_step(v, cmd.throttle, &plant, dt);
        }
        assert_abs_diff_eq!(cmd.throttle, v_ref / 2.0211, epsilon = 1e-3);
        assert_abs_diff_eq!(v, v_ref, epsilon = 1e-6);
    }

    #[test]
    fn pi_zero_reference_at_rest() {
        let mut state = PiState::default();
        let cmd = pi_speed(0.0, 0.0, &PiSchedule::default(), &mut state, 0.01);
        assert_eq!(cmd, LongitudinalCommand::default());
    }

    #[test]
    fn pi_large_step_saturates_without_runaway() {
        let plant = LongitudinalPlant::identified();
        let sched = PiSchedule::default();
        let (dt, v_ref) = (0.01, 15.0);
        let mut state = PiState::default();
        let mut v = 0.0;
        let mut saturated = false;
        let mut peak: f64 = 0.0;
        for _ in 0..12000 {
            let cmd = pi_speed(v_ref, v, &sched, &mut state, dt);
            saturated |= cmd.throttle == 100.0;
            assert!(state.integral.abs() <= sched.integrator_limit);
            v = longitudinal_step(v, cmd.throttle, &plant, dt);
            peak = peak.max(v);
        }
        assert!(saturated);
        assert!(peak <= 1.2 * v_ref, "peak {peak}");
        assert_abs_diff_eq!(v, v_ref, epsilon = 0.02 * v_ref);
    }

    #[test]
    fn pi_brakes_on_negative_demand() {
        let mut state = PiState::default();
        let cmd = pi_speed(0.0, 5.0, &PiSchedule::default(), &mut state, 0.01);
        assert_eq!(cmd.throttle, 0.0);
        assert!(cmd.brake < 0.0 && cmd.brake >= ACCEL_MIN);
    }

    #[test]
    fn schedule_interpolates_and_validates() {
        let s = PiSchedule::new(
            vec![
                PiGains { speed: 0.0, k_p: 1.0, k_i: 2.0 },
                PiGains { speed: 10.0, k_p: 3.0, k_i: 4.0 },
            ],
            50.0,
        )
        .unwrap();
        assert_eq!(s.gains_at(5.0), (2.0, 3.0));
        assert_eq!(s.gains_at(-1.0), (1.0, 2.0));
        assert_eq!(s.gains_at(20.0), (3.0, 4.0));
        assert!(PiSchedule::new(vec![], 1.0).is_err());
        assert!(PiSchedule::new(s.points.iter().rev().copied().collect(), 1.0).is_err());
    }

    #[test]
    fn disabled_regulator_is_silent() {
        let nominal = preset("dash").unwrap().lateral(3.0);
        let mut reg = ModelRegulator::new(ModelRegulatorConfig {
            enabled: false,
            ..ModelRegulatorConfig::new(nominal)
        })
        .unwrap();
        for k in 0..100 {
            assert_eq!(reg.step(0.1, 0.2 * k as f64, 3.0, 0.01), 0.0);
        }
    }

    #[test]
    fn matched_regulator_settles_to_zero() {
        use crate::vehicle::{step_state, VehicleState};
        let p = preset("dash").unwrap().lateral(3.0);
        let mut reg = ModelRegulator::new(ModelRegulatorConfig::new(p)).unwrap();
        let mut s = VehicleState {
            v_x: 3.0,
            ..Default::default()
        };
        let delta_cmd = 0.05;
        let mut corr = 0.0;
        for _ in 0..3000 {
            corr = reg.step(delta_cmd, s.r, s.v_x, 0.01);
            s = step_state(&s, delta_cmd - corr, 0.0, &p, 0.01).unwrap();
        }
        assert!(corr.abs() < 1e-6, "{corr}");
    }

    #[test]
    fn regulator_rejects_steering_bias() {
        use crate::vehicle::{step_state, VehicleState};
        let p = preset("dash").unwrap().lateral(3.0);
        let bias = 0.02;
        let run = |enabled: bool| {
            let mut reg = ModelRegulator::new(ModelRegulatorConfig {
                enabled,
                ..ModelRegulatorConfig::new(p)
            })
            .unwrap();
            let gains = LateralGains::new(0.9272, 0.0801);
            let mut pd = PdState::default();
            let mut s = VehicleState {
                v_x: 3.0,
                ..Default::default()
            };
            let dt = 0.01;
            for _ in 0..4000 {
                let y = s.y + 1.5 * s.psi.tan();
                let cmd = pd_steer(y, &mut pd, &gains, dt);
                let corr = reg.step(cmd, s.r, s.v_x, dt);
                let applied = (cmd - corr).clamp(-STEER_LIMIT, STEER_LIMIT);
                s = step_state(&s, applied + bias, 0.0, &p, dt).unwrap();
            }
            s.y.abs()
        };
        let without = run(false);
        let with = run(true);
        assert!(without > 0.01, "{without}");
        assert!(with <= without);
        assert!(with < 1e-3, "{with}");
    }
}
