//! Plant models: linear single-track lateral dynamics and the first-order
//! throttle-to-speed longitudinal plant.

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::normalize_angle;

/// Below this speed the lateral model is replaced by kinematic steering.
pub const LATERAL_MIN_SPEED: f64 = 0.5;
/// Largest integration step accepted by [`step_state`].
pub const MAX_STEP: f64 = 0.05;
/// Largest `h·‖A‖∞` allowed inside one RK4 substep.
const RK4_STEP_BOUND: f64 = 0.1;

/// Identified throttle-to-speed pole at 15 % throttle, 1/s.
pub const IDENTIFIED_POLE: f64 = 0.07496;
/// Identified throttle-to-speed gain at 15 % throttle.
pub const IDENTIFIED_GAIN: f64 = 0.1515;
/// Throttle opening of the identification experiment, %.
pub const IDENTIFIED_THROTTLE: f64 = 15.0;

const FUSION_JSON: &str = include_str!("../presets/fusion.json");
const DASH_JSON: &str = include_str!("../presets/dash.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("SpeedTooLow: {0} m/s is below the lateral model floor of 0.5 m/s")]
    SpeedTooLow(f64),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("integration step {0} s outside (0, 0.05]")]
    InvalidStep(f64),
    #[error("NumericalDivergence: non-finite vehicle state")]
    NumericalDivergence,
    #[error("unknown vehicle preset `{0}` (expected fusion or dash)")]
    UnknownPreset(String),
    #[error("cannot load vehicle file {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid plant family: {0}")]
    InvalidFamily(String),
}

/// Single-track model parameters at one operating speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralParams {
    /// Mass, kg.
    pub m: f64,
    /// Yaw inertia, kg·m².
    #[serde(rename = "J")]
    pub j: f64,
    pub l_f: f64,
    pub l_r: f64,
    /// Front cornering stiffness, N/rad.
    #[serde(rename = "C_f")]
    pub c_f: f64,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    /// Wheel radius, m. Carried for completeness; no model uses it.
    #[serde(rename = "R")]
    pub wheel_radius: f64,
    /// Longitudinal speed, m/s.
    #[serde(rename = "V_x")]
    pub v_x: f64,
}

impl LateralParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn with_speed(self, v_x: f64) -> Self {
        Self { v_x, ..self }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("m", self.m),
            ("J", self.j),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("C_f", self.c_f),
            ("C_r", self.c_r),
            ("R", self.wheel_radius),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.v_x.is_finite() || self.v_x < 0.0 {
            return Err(ModelError::InvalidParams(format!("V_x must be non-negative, got {}", self.v_x)));
        }
        Ok(())
    }

    /// Steady-state yaw rate per radian of steering.
    pub fn yaw_rate_gain(&self) -> f64 {
        let l = self.wheelbase();
        let v = self.v_x;
        v / (l + self.m * v * v * (self.c_r * self.l_r - self.c_f * self.l_f) / (l * self.c_f * self.c_r))
    }
}

/// A vehicle parameter file: model parameters plus the lateral gains
/// designed for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehiclePreset {
    pub name: String,
    pub m: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub l_f: f64,
    pub l_r: f64,
    #[serde(rename = "R")]
    pub wheel_radius: f64,
    #[serde(rename = "C_f")]
    pub c_f: f64,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    pub k_p: f64,
    pub k_d: f64,
    /// Steering preview distance, m.
    pub l_s: f64,
}

impl VehiclePreset {
    pub fn lateral(&self, v_x: f64) -> LateralParams {
        LateralParams {
            m: self.m,
            j: self.j,
            l_f: self.l_f,
            l_r: self.l_r,
            c_f: self.c_f,
            c_r: self.c_r,
            wheel_radius: self.wheel_radius,
            v_x,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let preset: Self =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        preset.lateral(1.0).validate()?;
        Ok(preset)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

/// Shipped presets: `fusion` (sedan) and `dash` (shuttle).
pub fn preset(name: &str) -> Result<VehiclePreset, ModelError> {
    match name {
        "fusion" => VehiclePreset::from_json(FUSION_JSON),
        "dash" => VehiclePreset::from_json(DASH_JSON),
        other => Err(ModelError::UnknownPreset(other.to_string())),
    }
}

/// State and input matrices over `(v_y, r)` with steering input `δ`.
pub fn lateral_matrices(p: &LateralParams) -> Result<(Matrix2<f64>, Vector2<f64>), ModelError> {
    p.validate()?;
    if p.v_x < LATERAL_MIN_SPEED {
        return Err(ModelError::SpeedTooLow(p.v_x));
    }
    let (m, j, v) = (p.m, p.j, p.v_x);
    let moment = p.c_f * p.l_f - p.c_r * p.l_r;
    let a = Matrix2::new(
        -(p.c_f + p.c_r) / (m * v),
        -v - moment / (m * v),
        -moment / (j * v),
        -(p.c_f * p.l_f * p.l_f + p.c_r * p.l_r * p.l_r) / (j * v),
    );
    let b = Vector2::new(p.c_f / m, p.c_f * p.l_f / j);
    Ok((a, b))
}

/// Planar vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_x: f64,
    pub v_y: f64,
    /// Yaw rate, rad/s.
    pub r: f64,
}

impl VehicleState {
    fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.psi, self.v_x, self.v_y, self.r]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            psi: a[2],
            v_x: a[3],
            v_y: a[4],
            r: a[5],
        }
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn derivative(s: [f64; 6], delta: f64, a_x: f64, p: &LateralParams, kinematic: bool) -> [f64; 6] {
    let [_, _, psi, v_x, v_y, r] = s;
    let (sin, cos) = psi.sin_cos();
    let (dvy, dr, yaw) = if kinematic {
        (0.0, 0.0, v_x * delta.tan() / p.wheelbase())
    } else {
        let v = v_x.max(LATERAL_MIN_SPEED);
        let moment = p.c_f * p.l_f - p.c_r * p.l_r;
        let dvy = -(p.c_f + p.c_r) / (p.m * v) * v_y + (-v - moment / (p.m * v)) * r + p.c_f / p.m * delta;
        let dr = -moment / (p.j * v) * v_y
            - (p.c_f * p.l_f * p.l_f + p.c_r * p.l_r * p.l_r) / (p.j * v) * r
            + p.c_f * p.l_f / p.j * delta;
        (dvy, dr, r)
    };
    [
        v_x * cos - v_y * sin,
        v_x * sin + v_y * cos,
        yaw,
        a_x,
        dvy,
        dr,
    ]
}

/// One RK4 step of the single-track model plus pose kinematics.
///
/// Below [`LATERAL_MIN_SPEED`] the lateral states are zeroed and the yaw
/// follows kinematic steering geometry instead.
pub fn step_state(
    state: &VehicleState,
    delta: f64,
    a_x: f64,
    p: &LateralParams,
    dt: f64,
) -> Result<VehicleState, ModelError> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(ModelError::InvalidStep(dt));
    }
    let kinematic = state.v_x < LATERAL_MIN_SPEED;
    let mut s0 = state.to_array();
    if kinematic {
        s0[4] = 0.0;
        s0[5] = 0.0;
    }
    // Substeps keep h·‖A‖ small: the tire modes are stiff at low speed.
    let substeps = if kinematic {
        1
    } else {
        let v = s0[3].max(LATERAL_MIN_SPEED);
        let moment = (p.c_f * p.l_f - p.c_r * p.l_r).abs();
        let row_vy = (p.c_f + p.c_r) / (p.m * v) + v + moment / (p.m * v);
        let row_r = moment / (p.j * v) + (p.c_f * p.l_f * p.l_f + p.c_r * p.l_r * p.l_r) / (p.j * v);
        ((dt * row_vy.max(row_r) / RK4_STEP_BOUND).ceil() as usize).max(1)
    };
    let h = dt / substeps as f64;
    let add = |s: [f64; 6], k: [f64; 6], h: f64| {
        let mut out = s;
        for i in 0..6 {
            out[i] += h * k[i];
        }
        out
    };
    let mut next = s0;
    for _ in 0..substeps {
        let k1 = derivative(next, delta, a_x, p, kinematic);
        let k2 = derivative(add(next, k1, h / 2.0), delta, a_x, p, kinematic);
        let k3 = derivative(add(next, k2, h / 2.0), delta, a_x, p, kinematic);
        let k4 = derivative(add(next, k3, h), delta, a_x, p, kinematic);
        for i in 0..6 {
            next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    let mut out = VehicleState::from_array(next);
    if kinematic {
        out.r = out.v_x * delta.tan() / p.wheelbase();
    }
    out.psi = normalize_angle(out.psi);
    if !out.is_finite() {
        return Err(ModelError::NumericalDivergence);
    }
    Ok(out)
}

/// First-order throttle-to-speed plant `v̇ = −a·v + b·u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalPlant {
    /// Gain, (m/s²) per % throttle.
    pub b: f64,
    /// Pole, 1/s.
    pub a: f64,
    /// Throttle opening the plant was identified at, %.
    pub throttle_level: f64,
}

impl LongitudinalPlant {
    /// The identified 15 % throttle model.
    pub fn identified() -> Self {
        Self {
            b: IDENTIFIED_GAIN,
            a: IDENTIFIED_POLE,
            throttle_level: IDENTIFIED_THROTTLE,
        }
    }

    /// Steady-state speed per % throttle.
    pub fn dc_gain(&self) -> f64 {
        self.b / self.a
    }

    pub fn time_constant(&self) -> f64 {
        1.0 / self.a
    }
}

/// Exact zero-order-hold discretization of the plant over `dt`.
pub fn longitudinal_step(v: f64, throttle: f64, plant: &LongitudinalPlant, dt: f64) -> f64 {
    let u = throttle.clamp(0.0, 100.0);
    let decay = (-plant.a * dt).exp();
    v * decay + plant.dc_gain() * u * (1.0 - decay)
}

/// Plants identified at increasing throttle openings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFamily {
    plants: Vec<LongitudinalPlant>,
}

impl PlantFamily {
    pub fn new(plants: Vec<LongitudinalPlant>) -> Result<Self, ModelError> {
        if plants.is_empty() {
            return Err(ModelError::InvalidFamily("empty".into()));
        }
        if plants.windows(2).any(|w| w[1].throttle_level <= w[0].throttle_level) {
            return Err(ModelError::InvalidFamily(
                "throttle levels must be strictly increasing".into(),
            ));
        }
        if plants.iter().any(|p| !(p.a > 0.0 && p.b > 0.0)) {
            return Err(ModelError::InvalidFamily("a and b must be positive".into()));
        }
        Ok(Self { plants })
    }

    pub fn single(plant: LongitudinalPlant) -> Self {
        Self { plants: vec![plant] }
    }

    pub fn plants(&self) -> &[LongitudinalPlant] {
        &self.plants
    }
}

impl Default for PlantFamily {
    /// The identified 15 % model plus synthetic entries at 5, 30 and 60 %.
    ///
    /// The synthetic entries scale the gain by `g(u) = (1 − e^(−u/30))/(u/30)`
    /// relative to 15 %, so steady-state speed saturates with throttle. Only
    /// the 15 % entry is measured.
    fn default() -> Self {
        let g = |u: f64| (1.0 - (-u / 30.0).exp()) / (u / 30.0);
        let entry = |u: f64| LongitudinalPlant {
            b: IDENTIFIED_GAIN * g(u) / g(IDENTIFIED_THROTTLE),
            a: IDENTIFIED_POLE,
            throttle_level: u,
        };
        let mut plants = vec![entry(5.0), LongitudinalPlant::identified(), entry(30.0), entry(60.0)];
        plants[1] = LongitudinalPlant::identified();
        Self { plants }
    }
}

/// Plant at throttle `u`: linear interpolation of `(a, b)` between the
/// bracketing entries, clamped at the ends.
pub fn plant_for_throttle(family: &PlantFamily, u: f64) -> LongitudinalPlant {
    let plants = &family.plants;
    let first = plants[0];
    let last = plants[plants.len() - 1];
    if u <= first.throttle_level {
        return first;
    }
    if u >= last.throttle_level {
        return last;
    }
    for w in plants.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if u == lo.throttle_level {
            return lo;
        }
        if u < hi.throttle_level {
            let t = (u - lo.throttle_level) / (hi.throttle_level - lo.throttle_level);
            return LongitudinalPlant {
                a: lo.a + t * (hi.a - lo.a),
                b: lo.b + t * (hi.b - lo.b),
                throttle_level: u,
            };
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dash(v: f64) -> LateralParams {
        preset("dash").unwrap().lateral(v)
    }

    fn fusion(v: f64) -> LateralParams {
        preset("fusion").unwrap().lateral(v)
    }

    #[test]
    fn presets_carry_table_values() {
        let f = preset("fusion").unwrap();
        assert_eq!((f.m, f.j, f.l_f, f.l_r), (1977.6, 3728.0, 1.3008, 1.54527));
        assert_eq!((f.c_f, f.c_r, f.wheel_radius), (1.9e5, 5e5, 0.3225));
        assert_eq!((f.k_p, f.k_d), (0.15, 0.1));
        let d = preset("dash").unwrap();
        assert_eq!((d.m, d.j, d.l_f, d.l_r), (350.0, 350.0, 1.06, 0.96));
        assert_eq!((d.c_f, d.c_r, d.wheel_radius), (1.8917e4, 1.8917e4, 0.24));
        assert_eq!((d.k_p, d.k_d), (0.9272, 0.0801));
        assert!(matches!(preset("truck"), Err(ModelError::UnknownPreset(_))));
    }

    #[test]
    fn dash_matrix_entry() {
        let (a, _) = lateral_matrices(&dash(3.0)).unwrap();
        let expected = -3.0 - (1.8917e4 * 1.06 - 1.8917e4 * 0.96) / (350.0 * 3.0);
        assert_abs_diff_eq!(a[(0, 1)], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(0, 1)], -4.8016, epsilon = 1e-4);
    }

    #[test]
    fn symmetric_vehicle_has_no_coupling() {
        let mut p = dash(3.0);
        p.l_r = p.l_f;
        let (a, _) = lateral_matrices(&p).unwrap();
        assert_eq!(a[(1, 0)], 0.0);
    }

    #[test]
    fn fusion_open_loop_is_stable() {
        let (a, _) = lateral_matrices(&fusion(10.0)).unwrap();
        for ev in a.complex_eigenvalues().iter() {
            assert!(ev.re < 0.0);
        }
    }

    #[test]
    fn low_speed_is_rejected() {
        assert_eq!(lateral_matrices(&dash(0.2)), Err(ModelError::SpeedTooLow(0.2)));
    }

    #[test]
    fn straight_motion_without_steering() {
        let mut s = VehicleState {
            v_x: 5.0,
            ..Default::default()
        };
        for _ in 0..500 {
            s = step_state(&s, 0.0, 0.0, &fusion(5.0), 0.01).unwrap();
        }
        assert_eq!(s.y, 0.0);
        assert_eq!(s.psi, 0.0);
        assert_abs_diff_eq!(s.x, 25.0, epsilon = 1e-9);
    }

    #[test]
    fn step_size_refinement() {
        let run = |dt: f64| {
            let mut s = VehicleState {
                v_x: 8.0,
                v_y: 0.2,
                r: 0.1,
                ..Default::default()
            };
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                s = step_state(&s, 0.02, 0.3, &fusion(8.0), dt).unwrap();
            }
            s
        };
        let coarse = run(0.02);
        let fine = run(0.01);
        for (a, b) in coarse.to_array().iter().zip(fine.to_array().iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn steady_state_yaw_rate() {
        let p = fusion(10.0);
        let delta = 0.01;
        let mut s = VehicleState {
            v_x: 10.0,
            ..Default::default()
        };
        for _ in 0..1000 {
            s = step_state(&s, delta, 0.0, &p, 0.01).unwrap();
        }
        let l = p.l_f + p.l_r;
        let r_ss = p.v_x * delta
            / (l + (p.m * p.v_x * p.v_x * (p.c_r * p.l_r - p.c_f * p.l_f)) / (l * p.c_f * p.c_r));
        assert!((s.r - r_ss).abs() <= 0.01 * r_ss.abs());
        assert_abs_diff_eq!(p.yaw_rate_gain() * delta, r_ss, epsilon = 1e-15);
    }

    #[test]
    fn rk4_matches_matrix_exponential() {
        let p = fusion(10.0);
        let (a, b) = lateral_matrices(&p).unwrap();
        let dt = 0.01;
        let delta = 0.03;
        // Augmented [A B; 0 0] exponential gives the exact ZOH map.
        let mut m = nalgebra::Matrix3::<f64>::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&a);
        m.fixed_view_mut::<2, 1>(0, 2).copy_from(&b);
        let phi = (m * dt).exp();
        let mut s = VehicleState {
            v_x: 10.0,
            v_y: 0.3,
            r: -0.2,
            ..Default::default()
        };
        let mut exact = nalgebra::Vector3::new(0.3, -0.2, delta);
        for _ in 0..100 {
            s = step_state(&s, delta, 0.0, &p, dt).unwrap();
            exact = phi * exact;
            assert!((s.v_y - exact[0]).abs() <= 1e-6);
            assert!((s.r - exact[1]).abs() <= 1e-6);
        }
    }

    #[test]
    fn free_response_decays_over_windows() {
        for name in ["fusion", "dash"] {
            for v in [1.0, 5.0, 10.0, 15.0] {
                let p = preset(name).unwrap().lateral(v);
                let mut s = VehicleState {
                    v_x: v,
                    v_y: 0.5,
                    r: 0.3,
                    ..Default::default()
                };
                let mut last = s.v_y.hypot(s.r);
                for _ in 0..5 {
                    for _ in 0..100 {
                        s = step_state(&s, 0.0, 0.0, &p, 0.01).unwrap();
                    }
                    let now = s.v_y.hypot(s.r);
                    assert!(now <= last + 1e-12, "{name} at {v}: {now} > {last}");
                    last = now;
                }
            }
        }
    }

    #[test]
    fn invalid_step_and_kinematic_floor() {
        let s = VehicleState::default();
        assert_eq!(step_state(&s, 0.0, 0.0, &dash(1.0), 0.1), Err(ModelError::InvalidStep(0.1)));
        let slow = VehicleState {
            v_x: 0.3,
            v_y: 0.1,
            r: 0.1,
            ..Default::default()
        };
        let next = step_state(&slow, 0.1, 0.0, &dash(1.0), 0.01).unwrap();
        assert_eq!(next.v_y, 0.0);
        assert_abs_diff_eq!(next.r, 0.3 * 0.1_f64.tan() / 2.02, epsilon = 1e-12);
    }

    #[test]
    fn identified_dc_gain_and_time_constant() {
        let plant = LongitudinalPlant::identified();
        assert_abs_diff_eq!(plant.dc_gain(), 2.0211, epsilon = 5e-5);
        assert_abs_diff_eq!(plant.time_constant(), 13.34, epsilon = 5e-3);
        // Simulated step response reaches 63.2 % at one time constant.
        let dt = 0.01;
        let mut v = 0.0;
        let u = 15.0;
        let steps = (plant.time_constant() / dt).round() as usize;
        for _ in 0..steps {
            v = longitudinal_step(v, u, &plant, dt);
        }
        let frac = v / (plant.dc_gain() * u);
        assert_abs_diff_eq!(frac, 1.0 - (-1.0_f64).exp(), epsilon = 1e-3);
    }

    #[test]
    fn exact_discretization_matches_continuous_response() {
        let plant = LongitudinalPlant::identified();
        let (u, dt) = (20.0, 0.05);
        let mut v = 0.0;
        for k in 1..=400 {
            v = longitudinal_step(v, u, &plant, dt);
            let t = k as f64 * dt;
            let exact = plant.dc_gain() * u * (1.0 - (-plant.a * t).exp());
            assert!((v - exact).abs() <= 1e-9);
        }
        let decayed = longitudinal_step(3.0, 0.0, &plant, 2.0);
        assert_abs_diff_eq!(decayed, 3.0 * (-plant.a * 2.0).exp(), epsilon = 1e-15);
    }

    #[test]
    fn throttle_interpolation() {
        let p = LongitudinalPlant::identified();
        let single = PlantFamily::single(p);
        assert_eq!(plant_for_throttle(&single, 3.0), p);
        assert_eq!(plant_for_throttle(&single, 80.0), p);

        let lo = LongitudinalPlant { b: 0.1, a: 0.05, throttle_level: 10.0 };
        let hi = LongitudinalPlant { b: 0.2, a: 0.09, throttle_level: 20.0 };
        let fam = PlantFamily::new(vec![lo, hi]).unwrap();
        assert_eq!(plant_for_throttle(&fam, 10.0), lo);
        assert_eq!(plant_for_throttle(&fam, 20.0), hi);
        let mid = plant_for_throttle(&fam, 15.0);
        assert_abs_diff_eq!(mid.a, 0.07, epsilon = 1e-15);
        assert_abs_diff_eq!(mid.b, 0.15, epsilon = 1e-15);
        assert!(PlantFamily::new(vec![hi, lo]).is_err());

        let default = PlantFamily::default();
        assert_eq!(plant_for_throttle(&default, 15.0), LongitudinalPlant::identified());
    }
}
