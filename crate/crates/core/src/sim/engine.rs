//! The fixed-step simulation loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::band::{deform, BandError, ElasticBand, Obstacle, SolverSettings};
use crate::control::{
    cacc_accel, pd_steer, pi_speed_ff, LateralGains, LongitudinalCommand, ModelRegulator, ModelRegulatorConfig,
    PdState, PiSchedule, PiState, ACCEL_MIN, STEER_LIMIT,
};
use crate::geometry::LocalPoint;
use crate::path::RoutePath;
use crate::supervisor::{
    decide, DrivingMode, ErrorSource, FollowMode, Horizon, LeadObservation, PedestrianObservation, SensorSnapshot,
    SupervisorConfig, SupervisorState,
};
use crate::tracking::{band_tracking_error, nearest_on_path, tracking_error, PoseEstimate, TrackingError};
use crate::vehicle::{plant_for_throttle, step_state, PlantFamily, VehiclePreset, VehicleState};

use super::channel::CommChannel;
use super::lead::{lead_profile_step, LeadState};
use super::log::{LogRow, TrajectoryLog};
use super::noise::localization_noise;
use super::scenario::{LeadConfig, PedestrianConfig, Scenario, ScenarioError};

/// V2V data older than this is ignored, s.
pub const V2V_STALENESS: f64 = 0.5;
/// Comfortable acceleration when ramping the speed command up, m/s².
pub const ACCEL_RAMP: f64 = 1.0;
/// Distance short of a stop line the vehicle aims to stop at, m.
pub const STOP_STANDOFF: f64 = 1.0;
/// Distance short of the route end the vehicle stops at, m.
pub const END_MARGIN: f64 = 2.0;
/// Largest allowed gap between the speed command and the actual speed, m/s.
pub const COMMAND_LEAD: f64 = 1.5;
/// Holding brake at standstill, m/s².
pub const HOLD_BRAKE: f64 = -1.0;
/// Band starts this far behind the vehicle, m.
pub const BAND_TAIL: f64 = 2.0;
/// Lateral departure treated as loss of the route, m.
pub const MAX_DEVIATION: f64 = 25.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    /// The run stopped early; `log` holds every row recorded before.
    #[error("NumericalDivergence at t = {t}: {message}")]
    Divergence {
        t: f64,
        message: String,
        log: Box<TrajectoryLog>,
    },
}

#[derive(Debug, Clone)]
struct Pedestrian {
    cfg: PedestrianConfig,
    position: LocalPoint,
    velocity: LocalPoint,
    active: bool,
}

#[derive(Debug, Clone)]
struct Lead {
    cfg: LeadConfig,
    state: LeadState,
}

/// Loop state for one scenario run.
pub struct Engine {
    name: String,
    route: RoutePath,
    vehicle: VehiclePreset,
    family: PlantFamily,
    dt: f64,
    steps: usize,
    k: usize,
    sup_cfg: SupervisorConfig,
    horizon: Horizon,
    scenario: Scenario,

    state: VehicleState,
    hint_true: Option<(usize, f64)>,
    hint_meas: Option<(usize, f64)>,
    lead: Option<Lead>,
    pedestrians: Vec<Pedestrian>,
    channel: CommChannel<f64>,
    received: Option<(f64, f64)>,
    noise_rng: ChaCha8Rng,

    supervisor: SupervisorState,
    gains: LateralGains,
    preview: f64,
    pd: PdState,
    source: ErrorSource,
    regulator: Option<ModelRegulator>,
    schedule: PiSchedule,
    pi: PiState,
    v_cmd: f64,
    throttle: f64,
    band: Option<ElasticBand>,
    band_csv: Vec<u8>,
    rows: Vec<LogRow>,
}

fn station(route: &RoutePath, t: &TrackingError) -> f64 {
    route.station(t.segment, t.lambda)
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let prepared = scenario.prepare()?;
        let route = prepared.route;
        let vehicle = prepared.vehicle;
        let init = scenario.initial;
        let start = route
            .sample_at(init.s)
            .map_err(|e| ScenarioError::Invalid(vec![super::scenario::Issue {
                path: "initial.s".into(),
                message: e.to_string(),
            }]))?;
        let normal = LocalPoint::from_polar(1.0, start.heading).perp();
        let pos = start.position + normal * init.lateral_offset;
        let state = VehicleState {
            x: pos.x,
            y: pos.y,
            psi: crate::geometry::normalize_angle(start.heading + init.heading_offset),
            v_x: init.speed,
            v_y: 0.0,
            r: 0.0,
        };
        let controllers = &scenario.controllers;
        let gains = controllers
            .lateral
            .unwrap_or_else(|| LateralGains::new(vehicle.k_p, vehicle.k_d));
        let preview = controllers.preview_distance.unwrap_or(vehicle.l_s);
        let regulator = if controllers.regulator.enabled {
            // The nominal model is the unmodified vehicle file.
            let nominal = match &scenario.vehicle.params_file {
                Some(f) => VehiclePreset::load(&scenario.resolve(f)),
                None => crate::vehicle::preset(&scenario.vehicle.preset),
            }
            .map_err(|e| ScenarioError::Invalid(vec![super::scenario::Issue {
                path: "vehicle".into(),
                message: e.to_string(),
            }]))?;
            let cfg = ModelRegulatorConfig {
                nominal: nominal.lateral(init.speed.max(1.0)),
                q_cutoff: controllers.regulator.q_cutoff,
                enabled: true,
            };
            Some(ModelRegulator::new(cfg).map_err(|e| {
                ScenarioError::Invalid(vec![super::scenario::Issue {
                    path: "controllers.regulator".into(),
                    message: e.to_string(),
                }])
            })?)
        } else {
            None
        };
        let schedule = controllers
            .speed
            .clone()
            .unwrap_or_else(|| PiSchedule::pole_placement(&prepared.family, &[0.0, 2.0, 5.0, 10.0, 15.0], 0.8, 1.0));
        let lead = scenario.actors.lead.clone().map(|cfg| {
            let state = LeadState {
                s: init.s + cfg.initial_gap + cfg.length,
                v: cfg.initial_speed,
                a: 0.0,
            };
            Lead { cfg, state }
        });
        let pedestrians = scenario
            .actors
            .pedestrians
            .iter()
            .map(|cfg| Pedestrian {
                cfg: *cfg,
                position: LocalPoint::new(cfg.position[0], cfg.position[1]),
                velocity: cfg.velocity_capped(),
                active: false,
            })
            .collect();
        let sup_cfg = scenario.supervisor_config();
        Ok(Self {
            name: scenario.name.clone(),
            horizon: Horizon::new(scenario.annotations.clone(), scenario.route.speed_limit),
            dt: scenario.dt,
            steps: scenario.step_count(),
            k: 0,
            sup_cfg,
            state,
            hint_true: None,
            hint_meas: None,
            lead,
            pedestrians,
            channel: CommChannel::new(scenario.comm.latency_s, scenario.comm.drop_rate, scenario.comm.seed),
            received: None,
            noise_rng: ChaCha8Rng::seed_from_u64(scenario.localization.seed),
            supervisor: SupervisorState::default(),
            gains,
            preview,
            pd: PdState::default(),
            source: ErrorSource::NominalPath,
            regulator,
            schedule,
            pi: PiState::default(),
            v_cmd: init.speed,
            throttle: 0.0,
            band: None,
            band_csv: Vec::new(),
            rows: Vec::with_capacity(scenario.step_count()),
            route,
            vehicle,
            family: prepared.family,
            scenario: scenario.clone(),
        })
    }

    pub fn route(&self) -> &RoutePath {
        &self.route
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_finished(&self) -> bool {
        self.k >= self.steps
    }

    fn diverged(&mut self, t: f64, message: String) -> SimError {
        SimError::Divergence {
            t,
            message,
            log: Box::new(self.take_log()),
        }
    }

    fn take_log(&mut self) -> TrajectoryLog {
        let band_csv = if self.band_csv.is_empty() {
            String::new()
        } else {
            format!(
                "{}\n{}",
                crate::band::SNAPSHOT_HEADER,
                String::from_utf8_lossy(&self.band_csv)
            )
        };
        TrajectoryLog {
            rows: std::mem::take(&mut self.rows),
            band_csv,
        }
    }

    fn advance_actors(&mut self, t_prev: f64) {
        let dt = self.dt;
        if let Some(lead) = &mut self.lead {
            lead.state = lead_profile_step(&lead.cfg.profile, &lead.cfg.idm, &lead.state, t_prev, dt);
        }
        for p in &mut self.pedestrians {
            if p.active {
                p.position += p.velocity * dt;
            }
        }
    }

    /// Runs one step; returns the recorded row.
    pub fn step(&mut self) -> Result<&LogRow, SimError> {
        let k = self.k;
        let dt = self.dt;
        let t = k as f64 * dt;
        if k > 0 {
            self.advance_actors((k - 1) as f64 * dt);
        }

        // Soft sensors.
        let pose_true = PoseEstimate::new(self.state.x, self.state.y, self.state.psi);
        let truth = match tracking_error(&self.route, &pose_true, self.preview, self.hint_true) {
            Ok(e) => e,
            Err(e) => return Err(self.diverged(t, e.to_string())),
        };
        if truth.h.abs() > MAX_DEVIATION {
            return Err(self.diverged(t, format!("vehicle left the route (h = {:.2} m)", truth.h)));
        }
        self.hint_true = Some((truth.segment, truth.lambda));
        let s_true = station(&self.route, &truth);
        let pose_meas = localization_noise(&pose_true, self.scenario.localization.mode, &mut self.noise_rng);
        let meas = match tracking_error(&self.route, &pose_meas, self.preview, self.hint_meas.or(self.hint_true)) {
            Ok(e) => e,
            Err(e) => return Err(self.diverged(t, e.to_string())),
        };
        self.hint_meas = Some((meas.segment, meas.lambda));
        let s_meas = station(&self.route, &meas);
        let v = self.state.v_x;

        // Lead vehicle and V2V.
        let mut lead_obs = None;
        let mut collision = false;
        if let Some(lead) = &self.lead {
            if self.scenario.comm.v2v {
                self.channel.send(lead.state.a, t);
            }
            let gap = lead.state.s - s_true - lead.cfg.length;
            collision |= gap < 0.0;
            if gap <= self.scenario.detection_range {
                lead_obs = Some((gap, lead.state.v));
            }
        }
        for m in self.channel.poll(t) {
            self.received = Some((m.send_t, m.payload));
        }
        let a_rx = self
            .received
            .filter(|(sent, _)| t - sent <= V2V_STALENESS + 1e-9)
            .map(|(_, a)| a);
        let lead_obs = lead_obs.map(|(gap, v_lead)| LeadObservation {
            gap,
            v: v_lead,
            a: a_rx,
        });

        // Pedestrians.
        let ego = pose_true.position();
        let mut peds = Vec::new();
        let mut obstacles = Vec::new();
        for p in &mut self.pedestrians {
            let foot = nearest_on_path(&self.route, &PoseEstimate::new(p.position.x, p.position.y, 0.0), None);
            let Ok(foot) = foot else { continue };
            let s_ped = self.route.station(foot.segment, foot.lambda);
            if !p.active && t + 1e-9 >= p.cfg.start_time {
                p.active = p.cfg.trigger_distance.is_none_or(|d| s_ped - s_true <= d);
            }
            if !p.active {
                continue;
            }
            collision |= p.position.distance(ego) < self.scenario.collision_radius;
            if p.position.distance(pose_meas.position()) <= self.scenario.detection_range {
                peds.push(PedestrianObservation {
                    position: p.position,
                    velocity: p.velocity,
                    along: s_ped - s_meas,
                    lateral: foot.h,
                });
                obstacles.push(Obstacle {
                    position: p.position,
                    velocity: p.velocity,
                });
            }
        }

        let horizon = self.horizon.query(s_meas, self.sup_cfg.lookahead, t, &self.supervisor.cleared);
        let snap = SensorSnapshot {
            t,
            s_ego: s_meas,
            v,
            lead: lead_obs,
            pedestrians: peds,
            horizon,
            collision,
            heading_saturated: meas.saturated,
        };
        let ped_distance = snap.nearest_pedestrian(self.sup_cfg.pedestrian_corridor);
        let (next, sp) = decide(&self.supervisor, &snap, &self.sup_cfg);
        self.supervisor = next;
        let mode = self.supervisor.mode;

        // Local path.
        let mut e_y = None;
        let mut band_step = None;
        let y_ctrl = if sp.error_source == ErrorSource::Band {
            if self.band.is_none() {
                let s_far = snap
                    .pedestrians
                    .iter()
                    .filter(|p| p.along >= 0.0 && p.lateral.abs() <= self.sup_cfg.pedestrian_corridor)
                    .map(|p| p.along)
                    .fold(0.0, f64::max);
                let s0 = s_meas - BAND_TAIL;
                let s1 = s_meas + s_far + self.scenario.band.half_window();
                match ElasticBand::from_route(&self.route, s0, s1, self.scenario.band.spacing, self.scenario.band.k_s) {
                    Ok(b) => self.band = Some(b),
                    Err(e) => log::warn!("t = {t}: cannot build band: {e}"),
                }
            }
            if let Some(band) = &self.band {
                match deform(band, &obstacles, &self.scenario.band.repulsion(), SolverSettings::default()) {
                    Ok(d) => self.band = Some(d.band),
                    Err(BandError::NonConvergence { residual, .. }) => {
                        log::warn!("t = {t}: band did not converge (residual {residual:.3e}); keeping previous")
                    }
                    Err(e) => log::warn!("t = {t}: band update failed: {e}"),
                }
            }
            match self.band.as_ref().map(|b| band_tracking_error(b, &pose_meas, self.preview)) {
                Some(Ok(err)) => {
                    e_y = Some(err.h);
                    if k % self.scenario.band.snapshot_every == 0 {
                        if let Some(b) = &self.band {
                            b.write_snapshot(k, &mut self.band_csv).expect("writing to memory");
                            band_step = Some(k);
                        }
                    }
                    err.y
                }
                _ => meas.y,
            }
        } else {
            self.band = None;
            meas.y
        };
        if sp.error_source != self.source {
            self.pd = PdState::default();
            self.source = sp.error_source;
        }

        // Lateral control.
        let delta_pd = pd_steer(y_ctrl, &mut self.pd, &self.gains, dt);
        let correction = match &mut self.regulator {
            Some(reg) => reg.step(delta_pd, self.state.r, v, dt),
            None => 0.0,
        };
        let delta = (delta_pd - correction).clamp(-STEER_LIMIT, STEER_LIMIT);

        // Longitudinal control.
        let b_comf = self.sup_cfg.b_comf;
        let toward = |v_cmd: f64, target: f64, up: f64, down: f64| ((target - v_cmd) / dt).clamp(-down, up);
        let mut a_des = match mode {
            DrivingMode::Halt => ACCEL_MIN,
            DrivingMode::StopAtSign | DrivingMode::StopAtLight => {
                let remaining = sp.stop_point.map_or(0.0, |s| s - STOP_STANDOFF - s_meas);
                let target = (2.0 * b_comf * remaining.max(0.0)).sqrt().min(sp.v_ref.max(self.v_cmd));
                toward(self.v_cmd, target, ACCEL_RAMP, -ACCEL_MIN)
            }
            _ => toward(self.v_cmd, sp.v_ref, ACCEL_RAMP, b_comf),
        };
        if mode != DrivingMode::Halt {
            if let (Some(follow), Some(l)) = (sp.follow, snap.lead) {
                let a_lead = if follow == FollowMode::Cacc { l.a } else { None };
                let mut cfg = self.scenario.controllers.cacc;
                cfg.v2v_available = self.scenario.comm.v2v;
                a_des = a_des.min(cacc_accel(l.gap, v, l.v, a_lead, &cfg).a_des);
            }
        }
        let to_end = self.route.total_length() - END_MARGIN - s_meas;
        let end_target = (2.0 * b_comf * to_end.max(0.0)).sqrt();
        a_des = a_des.min(toward(self.v_cmd, end_target, f64::INFINITY, -ACCEL_MIN));
        let v_cmd_next = (self.v_cmd + a_des * dt)
            .clamp((v - COMMAND_LEAD).max(0.0), v + COMMAND_LEAD)
            .max(0.0);
        let a_ff = (v_cmd_next - self.v_cmd) / dt;
        self.v_cmd = v_cmd_next;
        let plant = plant_for_throttle(&self.family, self.throttle);
        let cmd = if self.v_cmd <= 1e-9 && v < self.sup_cfg.stopped_speed {
            self.pi = PiState::default();
            LongitudinalCommand {
                throttle: 0.0,
                brake: HOLD_BRAKE,
            }
        } else {
            let ff = (plant.a * self.v_cmd + a_ff) / plant.b;
            pi_speed_ff(self.v_cmd, v, ff, &self.schedule, &mut self.pi, dt)
        };
        self.throttle = cmd.throttle;
        let plant = plant_for_throttle(&self.family, cmd.throttle);
        let decay = (-plant.a * dt).exp();
        let v_next = (v * decay + (plant.b * cmd.throttle + cmd.brake) / plant.a * (1.0 - decay)).max(0.0);
        let a_x = (v_next - v) / dt;

        let lead = self.lead.as_ref().map(|l| l.state);
        self.rows.push(LogRow {
            t,
            x: self.state.x,
            y: self.state.y,
            psi: self.state.psi,
            x_meas: pose_meas.x,
            y_meas: pose_meas.y,
            psi_meas: pose_meas.psi,
            s: s_true,
            v,
            v_cmd: self.v_cmd,
            delta,
            a_x,
            throttle: cmd.throttle,
            brake: cmd.brake,
            mode,
            h: truth.h,
            y_preview: y_ctrl,
            e_y,
            gap: snap.lead.map(|l| l.gap),
            lead_v: lead.map(|l| l.v),
            lead_a: lead.map(|l| l.a),
            lead_a_rx: snap.lead.and_then(|l| l.a),
            ped_distance,
            sign_code: snap.horizon.upcoming_sign_code,
            sign_distance: snap.horizon.distance_to_sign,
            light: snap.horizon.light_color,
            collision,
            heading_saturated: meas.saturated,
            band_step,
        });

        // Plant.
        let params = self.vehicle.lateral(v.max(crate::vehicle::LATERAL_MIN_SPEED));
        let wheel = delta + self.scenario.vehicle.steering_offset;
        match step_state(&self.state, wheel, a_x, &params, dt) {
            Ok(mut next) => {
                next.v_x = v_next;
                self.state = next;
            }
            Err(e) => return Err(self.diverged(t, e.to_string())),
        }
        self.k += 1;
        Ok(self.rows.last().expect("row just pushed"))
    }

    /// Runs the remaining steps and returns the log.
    pub fn finish(mut self) -> Result<TrajectoryLog, SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.take_log())
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog, SimError> {
    Engine::new(scenario)?.finish()
}
