//! Deterministic fixed-step scenario simulation.
//!
//! Per step: advance actors, deliver due V2V messages, build the sensor
//! snapshot (with localization noise), run the supervisor, update the
//! elastic band when avoiding a pedestrian, run the controllers, record the
//! row, then integrate the plant.

mod channel;
mod engine;
mod lead;
mod log;
mod noise;
mod scenario;

pub use channel::{CommChannel, CommMessage};
pub use engine::{
    run, Engine, SimError, ACCEL_RAMP, BAND_TAIL, COMMAND_LEAD, END_MARGIN, HOLD_BRAKE, MAX_DEVIATION, STOP_STANDOFF,
    V2V_STALENESS,
};
pub use lead::{lead_profile_step, profile_target, LeadState};
pub use log::{gap_error_rms, parse_log, rms, write_rows, LogError, LogRow, Summary, TimelineEntry, TrajectoryLog, LOG_HEADER};
pub use noise::{localization_noise, LocalizationMode};
pub use scenario::{
    Actors, BandConfig, CommConfig, ControllerConfig, InitialConditions, Issue, LeadConfig, LocalizationConfig,
    PedestrianConfig, Prepared, RegulatorSettings, RouteConfig, Scenario, ScenarioError, VehicleConfig,
    VehicleOverrides, SCHEMA_VERSION,
};
