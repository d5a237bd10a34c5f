//! Scenario files: schema, defaults, loading and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::band::{RepulsionParams, DEFAULT_NODE_SPACING, DEFAULT_SPRING_STIFFNESS, PEDESTRIAN_MAX_SPEED};
use crate::control::{CaccConfig, IdmConfig, LateralGains, PiSchedule};
use crate::geometry::LocalPoint;
use crate::path::{build_route, load_waypoints, RoutePath, DEFAULT_POINTS_PER_SEGMENT};
use crate::supervisor::{validate_annotations, AnnotationError, MapAnnotation, SupervisorConfig};
use crate::vehicle::{preset, LongitudinalPlant, PlantFamily, VehiclePreset, MAX_STEP};

use super::noise::LocalizationMode;

/// Scenario schema version understood by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// One semantic problem, located by JSON path.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario JSON invalid at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario invalid: {}", join_issues(.0))]
    Invalid(Vec<Issue>),
}

fn join_issues(issues: &[Issue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl ScenarioError {
    fn single(path: &str, message: impl Into<String>) -> Self {
        ScenarioError::Invalid(vec![Issue {
            path: path.to_string(),
            message: message.into(),
        }])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteConfig {
    /// Waypoint CSV, relative to the scenario file.
    #[serde(default)]
    pub waypoints: Option<PathBuf>,
    /// Inline local waypoints `[x, y]`, m.
    #[serde(default)]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_points_per_segment")]
    pub points_per_segment: usize,
    /// Speed limit where no annotation applies, m/s.
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
}

fn default_points_per_segment() -> usize {
    DEFAULT_POINTS_PER_SEGMENT
}

fn default_speed_limit() -> f64 {
    13.9
}

/// Optional replacements for individual preset parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleOverrides {
    pub m: Option<f64>,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    pub l_f: Option<f64>,
    pub l_r: Option<f64>,
    #[serde(rename = "C_f")]
    pub c_f: Option<f64>,
    #[serde(rename = "C_r")]
    pub c_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    #[serde(default = "default_preset")]
    pub preset: String,
    /// Parameter file used instead of a named preset.
    #[serde(default)]
    pub params_file: Option<PathBuf>,
    #[serde(default)]
    pub overrides: VehicleOverrides,
    /// Constant steering misalignment added at the wheels, rad.
    #[serde(default)]
    pub steering_offset: f64,
    /// Longitudinal plants by throttle level; the default family otherwise.
    #[serde(default)]
    pub plant_family: Option<Vec<LongitudinalPlant>>,
}

fn default_preset() -> String {
    "fusion".into()
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            preset: default_preset(),
            params_file: None,
            overrides: VehicleOverrides::default(),
            steering_offset: 0.0,
            plant_family: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSettings {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_q_cutoff")]
    pub q_cutoff: f64,
}

fn default_q_cutoff() -> f64 {
    2.0
}

impl Default for RegulatorSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            q_cutoff: default_q_cutoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Lateral PD gains; the preset's gains when absent.
    #[serde(default)]
    pub lateral: Option<LateralGains>,
    /// Preview distance, m; the preset's when absent.
    #[serde(default)]
    pub preview_distance: Option<f64>,
    #[serde(default)]
    pub regulator: RegulatorSettings,
    /// PI speed schedule; pole placement on the plant family when absent.
    #[serde(default)]
    pub speed: Option<PiSchedule>,
    #[serde(default)]
    pub cacc: CaccConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadConfig {
    /// Bumper-to-bumper gap at `t = 0`, m.
    pub initial_gap: f64,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default)]
    pub idm: IdmConfig,
    /// `(t, v_target)` pairs, s and m/s, in increasing `t`.
    #[serde(default)]
    pub profile: Vec<(f64, f64)>,
    #[serde(default = "default_lead_length")]
    pub length: f64,
}

fn default_lead_length() -> f64 {
    4.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianConfig {
    /// Local position, m.
    pub position: [f64; 2],
    /// Walking velocity, m/s; speeds above 1.5 m/s are scaled down.
    pub velocity: [f64; 2],
    #[serde(default)]
    pub start_time: f64,
    /// When set, the pedestrian stays hidden and still until the vehicle is
    /// this close along the path.
    #[serde(default)]
    pub trigger_distance: Option<f64>,
}

impl PedestrianConfig {
    pub fn velocity_capped(&self) -> LocalPoint {
        let v = LocalPoint::new(self.velocity[0], self.velocity[1]);
        let speed = v.norm();
        if speed > PEDESTRIAN_MAX_SPEED {
            v * (PEDESTRIAN_MAX_SPEED / speed)
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actors {
    #[serde(default)]
    pub lead: Option<LeadConfig>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    #[serde(default = "default_true")]
    pub v2v: bool,
    #[serde(default)]
    pub latency_s: f64,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            v2v: true,
            latency_s: 0.0,
            drop_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    #[serde(default)]
    pub mode: LocalizationMode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_k_s")]
    pub k_s: f64,
    #[serde(default)]
    pub repulsion: Option<RepulsionParams>,
    /// Band extent past the pedestrian, m; `r_max + 10` when absent.
    #[serde(default)]
    pub half_window: Option<f64>,
    /// Snapshot every this many steps while the band is active.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

fn default_spacing() -> f64 {
    DEFAULT_NODE_SPACING
}

fn default_k_s() -> f64 {
    DEFAULT_SPRING_STIFFNESS
}

fn default_snapshot_every() -> usize {
    10
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            spacing: default_spacing(),
            k_s: default_k_s(),
            repulsion: None,
            half_window: None,
            snapshot_every: default_snapshot_every(),
        }
    }
}

impl BandConfig {
    pub fn repulsion(&self) -> RepulsionParams {
        self.repulsion.unwrap_or_default()
    }

    pub fn half_window(&self) -> f64 {
        self.half_window.unwrap_or(self.repulsion().r_max + 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConditions {
    /// Starting station, m.
    #[serde(default)]
    pub s: f64,
    /// Offset to the left of the path, m.
    #[serde(default)]
    pub lateral_offset: f64,
    #[serde(default)]
    pub heading_offset: f64,
    #[serde(default)]
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub route: RouteConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub controllers: ControllerConfig,
    #[serde(default)]
    pub annotations: Vec<MapAnnotation>,
    #[serde(default)]
    pub actors: Actors,
    #[serde(default)]
    pub comm: CommConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    /// Cruise speed, m/s; overrides the supervisor's.
    #[serde(default)]
    pub cruise_speed: Option<f64>,
    #[serde(default)]
    pub supervisor: SupervisorConfig,
    #[serde(default)]
    pub band: BandConfig,
    #[serde(default)]
    pub initial: InitialConditions,
    /// Center distance counted as a collision with a pedestrian, m.
    #[serde(default = "default_collision_radius")]
    pub collision_radius: f64,
    /// Range of the on-board object sensor, m.
    #[serde(default = "default_detection_range")]
    pub detection_range: f64,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_dt() -> f64 {
    0.01
}

fn default_collision_radius() -> f64 {
    1.5
}

fn default_detection_range() -> f64 {
    100.0
}

/// A scenario with its route built and its vehicle resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub route: RoutePath,
    pub vehicle: VehiclePreset,
    pub family: PlantFamily,
}

impl Scenario {
    /// Parses scenario JSON; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.base_dir = base_dir.to_path_buf();
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, dir)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Replaces both random seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.localization.seed = seed;
        self.comm.seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Effective supervisor settings (scenario cruise speed applied).
    pub fn supervisor_config(&self) -> SupervisorConfig {
        let mut cfg = self.supervisor;
        if let Some(v) = self.cruise_speed {
            cfg.cruise_speed = v;
        }
        cfg
    }

    /// Number of recorded steps: `floor(duration/dt) + 1`.
    pub fn step_count(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }

    /// Field-level checks that do not need files.
    pub fn check_fields(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut need = |ok: bool, path: &str, message: String| {
            if !ok {
                issues.push(Issue {
                    path: path.to_string(),
                    message,
                });
            }
        };
        need(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
        );
        need(
            self.dt > 0.0 && self.dt <= MAX_STEP,
            "dt",
            format!("must be in (0, {MAX_STEP}], got {}", self.dt),
        );
        need(
            self.duration > 0.0 && self.duration.is_finite(),
            "duration",
            format!("must be positive, got {}", self.duration),
        );
        need(
            self.route.waypoints.is_some() != self.route.points.is_some(),
            "route",
            "exactly one of `waypoints` and `points` is required".into(),
        );
        need(
            self.route.speed_limit > 0.0,
            "route.speed_limit",
            format!("must be positive, got {}", self.route.speed_limit),
        );
        if let Some(v) = self.cruise_speed {
            need(v >= 0.0, "cruise_speed", format!("must be non-negative, got {v}"));
        }
        need(
            (0.0..=1.0).contains(&self.comm.drop_rate),
            "comm.drop_rate",
            format!("must be in [0, 1], got {}", self.comm.drop_rate),
        );
        need(
            self.comm.latency_s >= 0.0 && self.comm.latency_s.is_finite(),
            "comm.latency_s",
            format!("must be non-negative, got {}", self.comm.latency_s),
        );
        need(
            self.collision_radius >= 0.0,
            "collision_radius",
            format!("must be non-negative, got {}", self.collision_radius),
        );
        need(
            self.detection_range > 0.0,
            "detection_range",
            format!("must be positive, got {}", self.detection_range),
        );
        need(
            self.initial.speed >= 0.0,
            "initial.speed",
            format!("must be non-negative, got {}", self.initial.speed),
        );
        need(
            self.initial.s >= 0.0,
            "initial.s",
            format!("must be non-negative, got {}", self.initial.s),
        );
        need(
            self.band.spacing > 0.0 && self.band.k_s > 0.0 && self.band.snapshot_every > 0,
            "band",
            "spacing, k_s and snapshot_every must be positive".into(),
        );
        if let Err(e) = self.band.repulsion().validate() {
            need(false, "band.repulsion", e.to_string());
        }
        if let Some(g) = &self.controllers.lateral {
            if let Err(e) = g.validate() {
                need(false, "controllers.lateral", e.to_string());
            }
        }
        if let Some(l) = self.controllers.preview_distance {
            need(l >= 0.0, "controllers.preview_distance", format!("must be non-negative, got {l}"));
        }
        need(
            self.controllers.regulator.q_cutoff > 0.0,
            "controllers.regulator.q_cutoff",
            "must be positive".into(),
        );
        if let Some(s) = &self.controllers.speed {
            if let Err(e) = s.validate() {
                need(false, "controllers.speed", e.to_string());
            }
        }
        if let Err(e) = self.controllers.cacc.validate() {
            need(false, "controllers.cacc", e.to_string());
        }
        if let Some(lead) = &self.actors.lead {
            need(
                lead.initial_gap > 0.0,
                "actors.lead.initial_gap",
                format!("must be positive, got {}", lead.initial_gap),
            );
            need(
                lead.initial_speed >= 0.0,
                "actors.lead.initial_speed",
                format!("must be non-negative, got {}", lead.initial_speed),
            );
            need(
                !lead.profile.is_empty() || lead.initial_speed == 0.0,
                "actors.lead.initial_speed",
                "a lead without a profile is stationary".into(),
            );
            need(lead.length >= 0.0, "actors.lead.length", "must be non-negative".into());
            if let Err(e) = lead.idm.validate() {
                need(false, "actors.lead.idm", e.to_string());
            }
            for (i, w) in lead.profile.windows(2).enumerate() {
                need(
                    w[1].0 > w[0].0,
                    &format!("actors.lead.profile[{}]", i + 1),
                    "times must be strictly increasing".into(),
                );
            }
            for (i, (t, v)) in lead.profile.iter().enumerate() {
                need(
                    *t >= 0.0 && *v >= 0.0,
                    &format!("actors.lead.profile[{i}]"),
                    "time and target speed must be non-negative".into(),
                );
            }
        }
        for (i, p) in self.actors.pedestrians.iter().enumerate() {
            let finite = p.position.iter().chain(&p.velocity).all(|v| v.is_finite());
            need(
                finite && p.start_time >= 0.0,
                &format!("actors.pedestrians[{i}]"),
                "position and velocity must be finite, start_time non-negative".into(),
            );
            if let Some(d) = p.trigger_distance {
                need(
                    d > 0.0,
                    &format!("actors.pedestrians[{i}].trigger_distance"),
                    format!("must be positive, got {d}"),
                );
            }
        }
        issues
    }

    /// Full validation: builds the route and resolves the vehicle.
    pub fn prepare(&self) -> Result<Prepared, ScenarioError> {
        let issues = self.check_fields();
        if !issues.is_empty() {
            return Err(ScenarioError::Invalid(issues));
        }
        let points: Vec<LocalPoint> = match (&self.route.waypoints, &self.route.points) {
            (Some(file), None) => {
                let path = self.resolve(file);
                load_waypoints(&path)
                    .and_then(|w| w.into_local())
                    .map_err(|e| ScenarioError::single("route.waypoints", e.to_string()))?
            }
            (None, Some(pts)) => pts.iter().map(|p| LocalPoint::new(p[0], p[1])).collect(),
            _ => unreachable!("checked above"),
        };
        let route = build_route(&points, self.route.points_per_segment)
            .map_err(|e| ScenarioError::single("route", e.to_string()))?;
        let length = route.total_length();
        if let Err(e) = validate_annotations(&self.annotations, length) {
            let index = match &e {
                AnnotationError::OutOfRoute { index, .. } | AnnotationError::Invalid { index, .. } => *index,
            };
            return Err(ScenarioError::single(&format!("annotations[{index}]"), e.to_string()));
        }
        if self.initial.s >= length {
            return Err(ScenarioError::single(
                "initial.s",
                format!("beyond the route end ({length:.3} m)"),
            ));
        }

        let mut vehicle = match &self.vehicle.params_file {
            Some(file) => VehiclePreset::load(&self.resolve(file)),
            None => preset(&self.vehicle.preset),
        }
        .map_err(|e| {
            let at = if self.vehicle.params_file.is_some() {
                "vehicle.params_file"
            } else {
                "vehicle.preset"
            };
            ScenarioError::single(at, e.to_string())
        })?;
        let o = &self.vehicle.overrides;
        vehicle.m = o.m.unwrap_or(vehicle.m);
        vehicle.j = o.j.unwrap_or(vehicle.j);
        vehicle.l_f = o.l_f.unwrap_or(vehicle.l_f);
        vehicle.l_r = o.l_r.unwrap_or(vehicle.l_r);
        vehicle.c_f = o.c_f.unwrap_or(vehicle.c_f);
        vehicle.c_r = o.c_r.unwrap_or(vehicle.c_r);
        vehicle
            .lateral(1.0)
            .validate()
            .map_err(|e| ScenarioError::single("vehicle.overrides", e.to_string()))?;
        let family = match &self.vehicle.plant_family {
            Some(plants) => PlantFamily::new(plants.clone())
                .map_err(|e| ScenarioError::single("vehicle.plant_family", e.to_string()))?,
            None => PlantFamily::default(),
        };
        Ok(Prepared {
            route,
            vehicle,
            family,
        })
    }
}
