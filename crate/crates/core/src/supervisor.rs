//! Map preview over route annotations and the rule-based driving-mode
//! state machine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LocalPoint;

/// Default map preview distance, m.
pub const DEFAULT_LOOKAHEAD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightColor {
    Red,
    Amber,
    Green,
}

impl LightColor {
    pub fn requires_stop(self) -> bool {
        matches!(self, LightColor::Red | LightColor::Amber)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LightColor::Red => "red",
            LightColor::Amber => "amber",
            LightColor::Green => "green",
        }
    }
}

impl FromStr for LightColor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "red" => Ok(LightColor::Red),
            "amber" => Ok(LightColor::Amber),
            "green" => Ok(LightColor::Green),
            other => Err(format!("unknown light color `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPhase {
    pub color: LightColor,
    pub duration_s: f64,
}

/// A route annotation, keyed by arc length `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapAnnotation {
    StopSign {
        s: f64,
    },
    TrafficLight {
        s: f64,
        /// Fixed cycle, repeated from `t = −offset_s`.
        phases: Vec<LightPhase>,
        #[serde(default)]
        offset_s: f64,
    },
    SpeedLimit {
        s: f64,
        /// m/s.
        value: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("annotation {index}: s = {s} outside route [0, {length}]")]
    OutOfRoute { index: usize, s: f64, length: f64 },
    #[error("annotation {index}: {message}")]
    Invalid { index: usize, message: String },
}

impl MapAnnotation {
    pub fn s(&self) -> f64 {
        match self {
            MapAnnotation::StopSign { s } => *s,
            MapAnnotation::TrafficLight { s, .. } => *s,
            MapAnnotation::SpeedLimit { s, .. } => *s,
        }
    }

    /// Light color at time `t`; `None` for other kinds.
    pub fn light_at(&self, t: f64) -> Option<LightColor> {
        let MapAnnotation::TrafficLight { phases, offset_s, .. } = self else {
            return None;
        };
        let cycle: f64 = phases.iter().map(|p| p.duration_s).sum();
        let mut tau = (t + offset_s).rem_euclid(cycle);
        for p in phases {
            if tau < p.duration_s {
                return Some(p.color);
            }
            tau -= p.duration_s;
        }
        phases.last().map(|p| p.color)
    }
}

/// Checks positions against the route length and each kind's payload.
pub fn validate_annotations(annotations: &[MapAnnotation], route_length: f64) -> Result<(), AnnotationError> {
    for (index, a) in annotations.iter().enumerate() {
        let s = a.s();
        if !(s >= 0.0 && s <= route_length) {
            return Err(AnnotationError::OutOfRoute {
                index,
                s,
                length: route_length,
            });
        }
        match a {
            MapAnnotation::SpeedLimit { value, .. } if !(*value > 0.0) => {
                return Err(AnnotationError::Invalid {
                    index,
                    message: format!("speed limit must be positive, got {value}"),
                })
            }
            MapAnnotation::TrafficLight { phases, .. } => {
                if phases.is_empty() || phases.iter().any(|p| !(p.duration_s > 0.0)) {
                    return Err(AnnotationError::Invalid {
                        index,
                        message: "traffic light needs phases with positive durations".into(),
                    });
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Map preview at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    /// 0 none, 1 traffic light, 2 stop sign.
    pub upcoming_sign_code: u8,
    pub distance_to_sign: Option<f64>,
    pub current_speed_limit: f64,
    /// Color of the reported light, when the code is 1.
    pub light_color: Option<LightColor>,
    /// Index of the reported annotation.
    pub annotation: Option<usize>,
}

impl HorizonReport {
    pub fn empty(speed_limit: f64) -> Self {
        Self {
            upcoming_sign_code: 0,
            distance_to_sign: None,
            current_speed_limit: speed_limit,
            light_color: None,
            annotation: None,
        }
    }
}

/// Annotation preview along a single route.
#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    pub annotations: Vec<MapAnnotation>,
    pub default_speed_limit: f64,
}

impl Horizon {
    pub fn new(annotations: Vec<MapAnnotation>, default_speed_limit: f64) -> Self {
        Self {
            annotations,
            default_speed_limit,
        }
    }

    /// Nearest stop sign or light with `s_ego ≤ s ≤ s_ego + lookahead`,
    /// skipping annotation indices in `cleared`; the speed limit is the last
    /// limit at or before `s_ego`.
    pub fn query(&self, s_ego: f64, lookahead: f64, t: f64, cleared: &[usize]) -> HorizonReport {
        let mut limit = (f64::NEG_INFINITY, self.default_speed_limit);
        let mut nearest: Option<(f64, usize)> = None;
        for (i, a) in self.annotations.iter().enumerate() {
            let s = a.s();
            match a {
                MapAnnotation::SpeedLimit { value, .. } => {
                    if s <= s_ego && s >= limit.0 {
                        limit = (s, *value);
                    }
                }
                _ => {
                    let d = s - s_ego;
                    if d >= 0.0 && d <= lookahead && !cleared.contains(&i) && nearest.is_none_or(|(best, _)| d < best) {
                        nearest = Some((d, i));
                    }
                }
            }
        }
        let mut report = HorizonReport::empty(limit.1);
        if let Some((d, i)) = nearest {
            let a = &self.annotations[i];
            report.upcoming_sign_code = match a {
                MapAnnotation::StopSign { .. } => 2,
                _ => 1,
            };
            report.distance_to_sign = Some(d);
            report.light_color = a.light_at(t);
            report.annotation = Some(i);
        }
        report
    }
}

/// Preview at `t = 0` with no cleared signs.
pub fn horizon_query(
    annotations: &[MapAnnotation],
    s_ego: f64,
    lookahead: f64,
    default_speed_limit: f64,
) -> HorizonReport {
    Horizon::new(annotations.to_vec(), default_speed_limit).query(s_ego, lookahead, 0.0, &[])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DrivingMode {
    SpeedControl,
    CarFollowing,
    PedestrianAvoid,
    StopAtSign,
    StopAtLight,
    Halt,
}

impl DrivingMode {
    pub const ALL: [DrivingMode; 6] = [
        DrivingMode::SpeedControl,
        DrivingMode::CarFollowing,
        DrivingMode::PedestrianAvoid,
        DrivingMode::StopAtSign,
        DrivingMode::StopAtLight,
        DrivingMode::Halt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DrivingMode::SpeedControl => "SpeedControl",
            DrivingMode::CarFollowing => "CarFollowing",
            DrivingMode::PedestrianAvoid => "PedestrianAvoid",
            DrivingMode::StopAtSign => "StopAtSign",
            DrivingMode::StopAtLight => "StopAtLight",
            DrivingMode::Halt => "Halt",
        }
    }
}

impl fmt::Display for DrivingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DrivingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        DrivingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown driving mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadObservation {
    /// Bumper-to-bumper gap, m.
    pub gap: f64,
    pub v: f64,
    /// Present only when V2V data arrived.
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianObservation {
    pub position: LocalPoint,
    pub velocity: LocalPoint,
    /// Arc-length distance ahead of the ego vehicle (negative when behind).
    pub along: f64,
    /// Signed offset from the nominal path, m.
    pub lateral: f64,
}

/// Everything the supervisor sees at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSnapshot {
    pub t: f64,
    pub s_ego: f64,
    pub v: f64,
    pub lead: Option<LeadObservation>,
    pub pedestrians: Vec<PedestrianObservation>,
    pub horizon: HorizonReport,
    pub collision: bool,
    pub heading_saturated: bool,
}

impl SensorSnapshot {
    pub fn empty(t: f64, speed_limit: f64) -> Self {
        Self {
            t,
            s_ego: 0.0,
            v: 0.0,
            lead: None,
            pedestrians: Vec::new(),
            horizon: HorizonReport::empty(speed_limit),
            collision: false,
            heading_saturated: false,
        }
    }

    /// Distance to the nearest pedestrian ahead inside `corridor`.
    pub fn nearest_pedestrian(&self, corridor: f64) -> Option<f64> {
        self.pedestrians
            .iter()
            .filter(|p| p.along >= 0.0 && p.lateral.abs() <= corridor)
            .map(|p| p.along)
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    /// Pedestrian preview distance, m.
    pub pedestrian_enter: f64,
    /// Exit threshold as a multiple of the enter threshold.
    pub pedestrian_exit_factor: f64,
    /// Half-width of the corridor in which pedestrians count, m.
    pub pedestrian_corridor: f64,
    /// Speed while avoiding a pedestrian, m/s.
    pub pedestrian_speed: f64,
    /// Comfortable deceleration for stopping distances, m/s².
    pub b_comf: f64,
    pub stop_margin: f64,
    pub dwell_s: f64,
    pub stopped_speed: f64,
    /// Dwell only counts within this distance of the stop line, m.
    pub stop_zone: f64,
    pub follow_range: f64,
    pub cruise_speed: f64,
    pub lookahead: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            pedestrian_enter: 15.0,
            pedestrian_exit_factor: 1.2,
            pedestrian_corridor: 4.0,
            pedestrian_speed: 2.0,
            b_comf: 1.5,
            stop_margin: 2.0,
            dwell_s: 2.0,
            stopped_speed: 0.1,
            stop_zone: 5.0,
            follow_range: 60.0,
            cruise_speed: 5.0,
            lookahead: DEFAULT_LOOKAHEAD,
        }
    }
}

impl SupervisorConfig {
    pub fn stopping_distance(&self, v: f64) -> f64 {
        v * v / (2.0 * self.b_comf) + self.stop_margin
    }

    pub fn pedestrian_exit(&self) -> f64 {
        self.pedestrian_enter * self.pedestrian_exit_factor
    }
}

/// Timers and memory carried between decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorState {
    pub mode: DrivingMode,
    /// Start of the current stop at a sign.
    pub stopped_since: Option<f64>,
    /// Stop signs already served.
    pub cleared: Vec<usize>,
}

impl Default for SupervisorState {
    fn default() -> Self {
        Self {
            mode: DrivingMode::SpeedControl,
            stopped_since: None,
            cleared: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    NominalPath,
    Band,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowMode {
    Cacc,
    Acc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    pub v_ref: f64,
    pub error_source: ErrorSource,
    /// Arc length to stop at.
    pub stop_point: Option<f64>,
    pub follow: Option<FollowMode>,
}

/// One supervisor step. Pure: the output depends only on the arguments.
///
/// Rules, highest priority first: anomaly → Halt; pedestrian ahead →
/// PedestrianAvoid; red/amber light within stopping distance → StopAtLight;
/// stop sign within stopping distance → StopAtSign; lead within range →
/// CarFollowing; else SpeedControl. Stop modes persist until released
/// (green light, or the dwell elapsed at a sign); pedestrian mode persists
/// until the pedestrian is past the exit threshold or behind.
pub fn decide(state: &SupervisorState, snap: &SensorSnapshot, cfg: &SupervisorConfig) -> (SupervisorState, Setpoints) {
    let mut next = state.clone();
    let cruise = cfg.cruise_speed.min(snap.horizon.current_speed_limit);
    let follow = snap.lead.filter(|l| l.gap < cfg.follow_range).map(|l| {
        if l.a.is_some() {
            FollowMode::Cacc
        } else {
            FollowMode::Acc
        }
    });
    let setpoints = |v_ref: f64, source: ErrorSource, stop: Option<f64>| Setpoints {
        v_ref,
        error_source: source,
        stop_point: stop,
        follow,
    };

    if state.mode == DrivingMode::Halt || snap.collision || snap.heading_saturated {
        next.mode = DrivingMode::Halt;
        next.stopped_since = None;
        return (next, setpoints(0.0, ErrorSource::NominalPath, None));
    }

    let ped_threshold = if state.mode == DrivingMode::PedestrianAvoid {
        cfg.pedestrian_exit()
    } else {
        cfg.pedestrian_enter
    };
    if snap
        .nearest_pedestrian(cfg.pedestrian_corridor)
        .is_some_and(|d| d <= ped_threshold)
    {
        next.mode = DrivingMode::PedestrianAvoid;
        next.stopped_since = None;
        return (next, setpoints(cruise.min(cfg.pedestrian_speed), ErrorSource::Band, None));
    }

    let h = &snap.horizon;
    let stop_point = h.distance_to_sign.map(|d| snap.s_ego + d);
    let in_reach = h
        .distance_to_sign
        .is_some_and(|d| d <= cfg.stopping_distance(snap.v));

    if h.upcoming_sign_code == 1 && h.light_color.is_some_and(LightColor::requires_stop) {
        if in_reach || state.mode == DrivingMode::StopAtLight {
            next.mode = DrivingMode::StopAtLight;
            next.stopped_since = None;
            return (next, setpoints(0.0, ErrorSource::NominalPath, stop_point));
        }
    }

    if h.upcoming_sign_code == 2 && (in_reach || state.mode == DrivingMode::StopAtSign) {
        let d = h.distance_to_sign.unwrap_or(f64::INFINITY);
        let stopped = snap.v < cfg.stopped_speed && d <= cfg.stop_zone;
        let since = if stopped {
            Some(state.stopped_since.filter(|_| state.mode == DrivingMode::StopAtSign).unwrap_or(snap.t))
        } else {
            None
        };
        let released = since.is_some_and(|t0| snap.t - t0 >= cfg.dwell_s - 1e-9);
        if !released {
            next.mode = DrivingMode::StopAtSign;
            next.stopped_since = since;
            return (next, setpoints(0.0, ErrorSource::NominalPath, stop_point));
        }
        if let Some(i) = h.annotation {
            next.cleared.push(i);
        }
    }

    next.stopped_since = None;
    if follow.is_some() {
        next.mode = DrivingMode::CarFollowing;
    } else {
        next.mode = DrivingMode::SpeedControl;
    }
    (next, setpoints(cruise, ErrorSource::NominalPath, None))
}

/// Channels of one log row needed to re-check mode transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub t: f64,
    pub mode: DrivingMode,
    pub v: f64,
    pub pedestrian_distance: Option<f64>,
    pub sign_code: u8,
    pub sign_distance: Option<f64>,
    pub light: Option<LightColor>,
    pub gap: Option<f64>,
    pub collision: bool,
    pub heading_saturated: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid transition at t = {t}: {from} -> {to}: {reason}")]
pub struct TransitionViolation {
    pub t: f64,
    pub from: DrivingMode,
    pub to: DrivingMode,
    pub reason: String,
}

/// Re-checks every mode change in a log against the rule table.
///
/// Each row carries the observations the decision at that row was made
/// from. A change into a mode needs that mode's entry condition; leaving
/// Halt is never allowed; leaving StopAtSign for a lower-priority mode needs
/// the full dwell at standstill; leaving PedestrianAvoid for a
/// lower-priority mode needs the pedestrian beyond the exit threshold.
pub fn check_transitions(rows: &[TransitionRecord], cfg: &SupervisorConfig) -> Result<(), TransitionViolation> {
    let tol = 1e-6;
    for (k, pair) in rows.windows(2).enumerate() {
        let (prev, row) = (&pair[0], &pair[1]);
        let (from, to) = (prev.mode, row.mode);
        let fail = |reason: &str| {
            Err(TransitionViolation {
                t: row.t,
                from,
                to,
                reason: reason.to_string(),
            })
        };
        if (row.collision || row.heading_saturated) && to != DrivingMode::Halt {
            return fail("anomaly flagged but not halted");
        }
        if from == to {
            continue;
        }
        if from == DrivingMode::Halt {
            return fail("Halt is absorbing");
        }
        let ped_ahead = |limit: f64| row.pedestrian_distance.is_some_and(|d| d <= limit + tol);
        let entry_ok = match to {
            DrivingMode::Halt => row.collision || row.heading_saturated,
            DrivingMode::PedestrianAvoid => ped_ahead(cfg.pedestrian_enter),
            DrivingMode::StopAtLight => {
                row.sign_code == 1
                    && row.light.is_some_and(LightColor::requires_stop)
                    && row.sign_distance.is_some_and(|d| d <= cfg.stopping_distance(row.v) + tol)
            }
            DrivingMode::StopAtSign => {
                row.sign_code == 2 && row.sign_distance.is_some_and(|d| d <= cfg.stopping_distance(row.v) + tol)
            }
            DrivingMode::CarFollowing => row.gap.is_some_and(|g| g < cfg.follow_range),
            DrivingMode::SpeedControl => row.gap.is_none_or(|g| g >= cfg.follow_range),
        };
        if !entry_ok {
            return fail("entry condition not met");
        }
        let lower = |m: DrivingMode| matches!(m, DrivingMode::SpeedControl | DrivingMode::CarFollowing);
        if from == DrivingMode::PedestrianAvoid && (lower(to) || matches!(to, DrivingMode::StopAtLight | DrivingMode::StopAtSign)) && ped_ahead(cfg.pedestrian_exit()) {
            return fail("pedestrian still inside the exit threshold");
        }
        if from == DrivingMode::StopAtSign && lower(to) && row.sign_code == 2 {
            // Dwell: rows before this one at standstill must span the dwell.
            let mut start = None;
            for r in rows[..=k].iter().rev() {
                if r.mode != DrivingMode::StopAtSign || r.v >= cfg.stopped_speed {
                    break;
                }
                start = Some(r.t);
            }
            let dwell = start.map_or(0.0, |t0| row.t - t0);
            if dwell < cfg.dwell_s - tol {
                return fail("released before the stop-sign dwell elapsed");
            }
        }
        if from == DrivingMode::StopAtLight && lower(to) && row.sign_code == 1 && row.light.is_some_and(LightColor::requires_stop) {
            return fail("left StopAtLight while the light still requires a stop");
        }
    }
    Ok(())
}

/// Collapses consecutive equal modes into `(t_enter, mode)` pairs.
pub fn mode_timeline(rows: impl IntoIterator<Item = (f64, DrivingMode)>) -> Vec<(f64, DrivingMode)> {
    let mut out: Vec<(f64, DrivingMode)> = Vec::new();
    for (t, m) in rows {
        if out.last().is_none_or(|(_, last)| *last != m) {
            out.push((t, m));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn light(s: f64, red: f64, green: f64) -> MapAnnotation {
        MapAnnotation::TrafficLight {
            s,
            phases: vec![
                LightPhase {
                    color: LightColor::Red,
                    duration_s: red,
                },
                LightPhase {
                    color: LightColor::Green,
                    duration_s: green,
                },
            ],
            offset_s: 0.0,
        }
    }

    fn snap_with(v: f64) -> SensorSnapshot {
        SensorSnapshot {
            v,
            ..SensorSnapshot::empty(0.0, 10.0)
        }
    }

    fn ped(along: f64) -> PedestrianObservation {
        PedestrianObservation {
            position: LocalPoint::new(along, 0.0),
            velocity: LocalPoint::ZERO,
            along,
            lateral: 0.5,
        }
    }

    #[test]
    fn horizon_examples() {
        let r = horizon_query(&[], 0.0, DEFAULT_LOOKAHEAD, 8.0);
        assert_eq!(r.upcoming_sign_code, 0);
        assert_eq!(r.distance_to_sign, None);
        assert_eq!(r.current_speed_limit, 8.0);

        let anns = vec![light(120.0, 10.0, 10.0), MapAnnotation::StopSign { s: 50.0 }];
        let r = horizon_query(&anns, 0.0, DEFAULT_LOOKAHEAD, 8.0);
        assert_eq!(r.upcoming_sign_code, 2);
        assert_eq!(r.distance_to_sign, Some(50.0));

        let r = horizon_query(&anns, 60.0, DEFAULT_LOOKAHEAD, 8.0);
        assert_eq!(r.upcoming_sign_code, 1);
        assert_eq!(r.distance_to_sign, Some(60.0));
        assert_eq!(r.light_color, Some(LightColor::Red));

        let r = horizon_query(&anns, 130.0, DEFAULT_LOOKAHEAD, 8.0);
        assert_eq!(r.upcoming_sign_code, 0);
    }

    #[test]
    fn speed_limit_is_last_one_behind() {
        let anns = vec![
            MapAnnotation::SpeedLimit { s: 10.0, value: 3.0 },
            MapAnnotation::SpeedLimit { s: 40.0, value: 6.0 },
        ];
        assert_eq!(horizon_query(&anns, 5.0, 100.0, 9.0).current_speed_limit, 9.0);
        assert_eq!(horizon_query(&anns, 10.0, 100.0, 9.0).current_speed_limit, 3.0);
        assert_eq!(horizon_query(&anns, 50.0, 100.0, 9.0).current_speed_limit, 6.0);
    }

    #[test]
    fn light_cycle() {
        let l = light(0.0, 10.0, 5.0);
        assert_eq!(l.light_at(0.0), Some(LightColor::Red));
        assert_eq!(l.light_at(10.0), Some(LightColor::Green));
        assert_eq!(l.light_at(15.0), Some(LightColor::Red));
        assert_eq!(MapAnnotation::StopSign { s: 0.0 }.light_at(1.0), None);
    }

    #[test]
    fn annotation_json_shape() {
        let text = r#"[{"s": 10, "kind": "stop_sign"},
                       {"s": 20, "kind": "speed_limit", "value": 4.0},
                       {"s": 30, "kind": "traffic_light", "phases": [{"color": "red", "duration_s": 5}]}]"#;
        let anns: Vec<MapAnnotation> = serde_json::from_str(text).unwrap();
        assert_eq!(anns.len(), 3);
        assert!(validate_annotations(&anns, 100.0).is_ok());
        assert!(matches!(
            validate_annotations(&anns, 25.0),
            Err(AnnotationError::OutOfRoute { index: 2, .. })
        ));
    }

    #[test]
    fn empty_world_is_speed_control() {
        let (s, sp) = decide(&SupervisorState::default(), &snap_with(3.0), &SupervisorConfig::default());
        assert_eq!(s.mode, DrivingMode::SpeedControl);
        assert_eq!(sp.v_ref, 5.0);
        assert_eq!(sp.error_source, ErrorSource::NominalPath);
    }

    #[test]
    fn pedestrian_outranks_lead() {
        let mut snap = snap_with(3.0);
        snap.pedestrians.push(ped(10.0));
        snap.lead = Some(LeadObservation { gap: 30.0, v: 3.0, a: None });
        let (s, sp) = decide(&SupervisorState::default(), &snap, &SupervisorConfig::default());
        assert_eq!(s.mode, DrivingMode::PedestrianAvoid);
        assert_eq!(sp.error_source, ErrorSource::Band);
        assert_eq!(sp.follow, Some(FollowMode::Acc));
    }

    #[test]
    fn green_light_does_not_stop() {
        let cfg = SupervisorConfig::default();
        let horizon = Horizon::new(vec![light(10.0, 10.0, 10.0)], 10.0);
        let mut snap = snap_with(5.0);
        snap.t = 12.0;
        snap.horizon = horizon.query(0.0, 100.0, snap.t, &[]);
        assert_eq!(snap.horizon.light_color, Some(LightColor::Green));
        let (s, _) = decide(&SupervisorState::default(), &snap, &cfg);
        assert_eq!(s.mode, DrivingMode::SpeedControl);
        snap.t = 2.0;
        snap.horizon = horizon.query(0.0, 100.0, snap.t, &[]);
        let (s, sp) = decide(&SupervisorState::default(), &snap, &cfg);
        assert_eq!(s.mode, DrivingMode::StopAtLight);
        assert_eq!(sp.stop_point, Some(10.0));
    }

    #[test]
    fn stop_sign_dwell_is_two_seconds() {
        let cfg = SupervisorConfig::default();
        let horizon = Horizon::new(vec![MapAnnotation::StopSign { s: 20.0 }], 10.0);
        let dt = 0.01;
        let mut state = SupervisorState::default();
        let mut held = 0usize;
        let mut released_at = None;
        for k in 0..1000 {
            let t = k as f64 * dt;
            let mut snap = snap_with(0.0);
            snap.t = t;
            snap.s_ego = 19.0;
            snap.horizon = horizon.query(snap.s_ego, 100.0, t, &state.cleared);
            let (next, _) = decide(&state, &snap, &cfg);
            if next.mode == DrivingMode::StopAtSign {
                held += 1;
            } else if released_at.is_none() {
                released_at = Some(t);
            }
            state = next;
        }
        assert_eq!(held, 200);
        assert!((released_at.unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(state.mode, DrivingMode::SpeedControl);
        assert_eq!(state.cleared, vec![0]);
    }

    #[test]
    fn halt_is_absorbing() {
        let cfg = SupervisorConfig::default();
        let mut snap = snap_with(3.0);
        snap.collision = true;
        let (s, sp) = decide(&SupervisorState::default(), &snap, &cfg);
        assert_eq!(s.mode, DrivingMode::Halt);
        assert_eq!(sp.v_ref, 0.0);
        snap.collision = false;
        let (s, _) = decide(&s, &snap, &cfg);
        assert_eq!(s.mode, DrivingMode::Halt);
    }

    #[test]
    fn pedestrian_hysteresis_prevents_chattering() {
        let cfg = SupervisorConfig::default();
        let mut state = SupervisorState::default();
        let mut changes = 0;
        for k in 0..200 {
            let mut snap = snap_with(2.0);
            let wobble = if k % 2 == 0 { 0.5 } else { -0.5 };
            snap.pedestrians.push(ped(15.0 + wobble));
            let (next, _) = decide(&state, &snap, &cfg);
            if next.mode != state.mode {
                changes += 1;
            }
            state = next;
        }
        assert_eq!(changes, 1);
        let mut snap = snap_with(2.0);
        snap.pedestrians.push(ped(18.5));
        let (next, _) = decide(&state, &snap, &cfg);
        assert_eq!(next.mode, DrivingMode::SpeedControl);
    }

    fn arb_snapshot() -> impl Strategy<Value = SensorSnapshot> {
        (
            0.0f64..15.0,
            proptest::option::of((0.0f64..100.0, 0.0f64..15.0)),
            proptest::option::of(-5.0f64..30.0),
            0u8..3,
            0.0f64..60.0,
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(v, lead, ped_at, code, dist, collision, sat)| {
                let mut s = snap_with(v);
                s.lead = lead.map(|(gap, v)| LeadObservation { gap, v, a: None });
                if let Some(d) = ped_at {
                    s.pedestrians.push(ped(d));
                }
                if code > 0 {
                    s.horizon.upcoming_sign_code = code;
                    s.horizon.distance_to_sign = Some(dist);
                    s.horizon.annotation = Some(0);
                    if code == 1 {
                        s.horizon.light_color = Some(LightColor::Red);
                    }
                }
                s.collision = collision;
                s.heading_saturated = sat && collision;
                s
            })
    }

    proptest! {
        #[test]
        fn decide_is_pure_and_follows_priority(snap in arb_snapshot(), mode_ix in 0usize..5) {
            let cfg = SupervisorConfig::default();
            let state = SupervisorState { mode: DrivingMode::ALL[mode_ix], ..SupervisorState::default() };
            let a = decide(&state, &snap, &cfg);
            let b = decide(&state, &snap, &cfg);
            prop_assert_eq!(&a, &b);
            let mode = a.0.mode;
            if snap.collision {
                prop_assert_eq!(mode, DrivingMode::Halt);
            } else if snap.nearest_pedestrian(cfg.pedestrian_corridor).is_some_and(|d| d <= cfg.pedestrian_enter) {
                prop_assert_eq!(mode, DrivingMode::PedestrianAvoid);
            }
            prop_assert!(a.1.v_ref >= 0.0);
        }

        #[test]
        fn decisions_pass_the_offline_checker(snaps in proptest::collection::vec(arb_snapshot(), 2..40)) {
            let cfg = SupervisorConfig::default();
            let mut state = SupervisorState::default();
            let mut rows = Vec::new();
            for (k, mut snap) in snaps.into_iter().enumerate() {
                snap.t = k as f64 * 0.01;
                let (next, _) = decide(&state, &snap, &cfg);
                rows.push(TransitionRecord {
                    t: snap.t,
                    mode: next.mode,
                    v: snap.v,
                    pedestrian_distance: snap.nearest_pedestrian(cfg.pedestrian_corridor),
                    sign_code: snap.horizon.upcoming_sign_code,
                    sign_distance: snap.horizon.distance_to_sign,
                    light: snap.horizon.light_color,
                    gap: snap.lead.map(|l| l.gap),
                    collision: snap.collision,
                    heading_saturated: snap.heading_saturated,
                });
                state = next;
            }
            prop_assert!(check_transitions(&rows, &cfg).is_ok(), "{:?}", check_transitions(&rows, &cfg));
        }
    }

    #[test]
    fn checker_rejects_bad_logs() {
        let cfg = SupervisorConfig::default();
        let row = |t: f64, mode: DrivingMode| TransitionRecord {
            t,
            mode,
            v: 0.0,
            pedestrian_distance: None,
            sign_code: 0,
            sign_distance: None,
            light: None,
            gap: None,
            collision: false,
            heading_saturated: false,
        };
        let rows = vec![row(0.0, DrivingMode::Halt), row(0.1, DrivingMode::SpeedControl)];
        assert!(check_transitions(&rows, &cfg).is_err());
        let rows = vec![row(0.0, DrivingMode::SpeedControl), row(0.1, DrivingMode::PedestrianAvoid)];
        assert!(check_transitions(&rows, &cfg).is_err());
        let at_sign = |t: f64, mode: DrivingMode| TransitionRecord {
            sign_code: 2,
            sign_distance: Some(1.0),
            ..row(t, mode)
        };
        let mut rows: Vec<_> = (0..50).map(|k| at_sign(k as f64 * 0.01, DrivingMode::StopAtSign)).collect();
        rows.push(at_sign(0.5, DrivingMode::SpeedControl));
        assert!(check_transitions(&rows, &cfg).is_err());
        rows.pop();
        rows.extend((50..200).map(|k| at_sign(k as f64 * 0.01, DrivingMode::StopAtSign)));
        rows.push(at_sign(2.0, DrivingMode::SpeedControl));
        assert!(check_transitions(&rows, &cfg).is_ok());
        rows.pop();
        rows.push(at_sign(1.99, DrivingMode::SpeedControl));
        assert!(check_transitions(&rows, &cfg).is_err());
    }

    #[test]
    fn timeline_collapses_runs() {
        use DrivingMode::*;
        let tl = mode_timeline(vec![(0.0, SpeedControl), (0.1, SpeedControl), (0.2, Halt), (0.3, Halt)]);
        assert_eq!(tl, vec![(0.0, SpeedControl), (0.2, Halt)]);
    }
}
