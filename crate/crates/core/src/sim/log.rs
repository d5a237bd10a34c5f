//! Trajectory log rows, CSV round trip, and run summary.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::supervisor::{mode_timeline, DrivingMode, LightColor, TransitionRecord};

/// Column order of the trajectory CSV.
pub const LOG_HEADER: [&str; 29] = [
    "t",
    "x",
    "y",
    "psi",
    "x_meas",
    "y_meas",
    "psi_meas",
    "s",
    "v",
    "v_cmd",
    "delta",
    "a_x",
    "throttle",
    "brake",
    "mode",
    "h",
    "y_preview",
    "e_y",
    "gap",
    "lead_v",
    "lead_a",
    "lead_a_rx",
    "ped_distance",
    "sign_code",
    "sign_distance",
    "light",
    "collision",
    "heading_saturated",
    "band_step",
];

/// One step: the state at `t` and the commands computed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// True pose.
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Pose handed to the controllers.
    pub x_meas: f64,
    pub y_meas: f64,
    pub psi_meas: f64,
    /// True station on the nominal path.
    pub s: f64,
    pub v: f64,
    pub v_cmd: f64,
    pub delta: f64,
    pub a_x: f64,
    pub throttle: f64,
    pub brake: f64,
    pub mode: DrivingMode,
    /// True signed offset from the nominal path.
    pub h: f64,
    /// Preview error fed to the steering controller.
    pub y_preview: f64,
    /// Band lateral error, while the band is active.
    pub e_y: Option<f64>,
    /// Observed lead gap.
    pub gap: Option<f64>,
    pub lead_v: Option<f64>,
    pub lead_a: Option<f64>,
    /// Lead acceleration received over V2V and used this step.
    pub lead_a_rx: Option<f64>,
    pub ped_distance: Option<f64>,
    pub sign_code: u8,
    pub sign_distance: Option<f64>,
    pub light: Option<LightColor>,
    pub collision: bool,
    pub heading_saturated: bool,
    /// Step index of the band snapshot written at this row.
    pub band_step: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("log line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("log header mismatch: {0}")]
    Header(String),
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LogRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            self.x.to_string(),
            self.y.to_string(),
            self.psi.to_string(),
            self.x_meas.to_string(),
            self.y_meas.to_string(),
            self.psi_meas.to_string(),
            self.s.to_string(),
            self.v.to_string(),
            self.v_cmd.to_string(),
            self.delta.to_string(),
            self.a_x.to_string(),
            self.throttle.to_string(),
            self.brake.to_string(),
            self.mode.as_str().to_string(),
            self.h.to_string(),
            self.y_preview.to_string(),
            opt(self.e_y),
            opt(self.gap),
            opt(self.lead_v),
            opt(self.lead_a),
            opt(self.lead_a_rx),
            opt(self.ped_distance),
            self.sign_code.to_string(),
            opt(self.sign_distance),
            self.light.map(|l| l.as_str().to_string()).unwrap_or_default(),
            u8::from(self.collision).to_string(),
            u8::from(self.heading_saturated).to_string(),
            self.band_step.map(|s| s.to_string()).unwrap_or_default(),
        ]
    }

    pub fn transition_record(&self) -> TransitionRecord {
        TransitionRecord {
            t: self.t,
            mode: self.mode,
            v: self.v,
            pedestrian_distance: self.ped_distance,
            sign_code: self.sign_code,
            sign_distance: self.sign_distance,
            light: self.light,
            gap: self.gap,
            collision: self.collision,
            heading_saturated: self.heading_saturated,
        }
    }
}

/// Per-run record: one row per step plus the band snapshot sidecar.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
    /// Band snapshot CSV including its header; empty when the band never ran.
    pub band_csv: String,
}

impl TrajectoryLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_rows(&self.rows, out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn transition_records(&self) -> Vec<TransitionRecord> {
        self.rows.iter().map(LogRow::transition_record).collect()
    }

    pub fn summary(&self, name: &str) -> Summary {
        Summary::from_rows(name, &self.rows)
    }
}

pub fn write_rows<W: Write>(rows: &[LogRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV back into rows.
pub fn parse_log<R: Read>(input: R) -> Result<Vec<LogRow>, LogError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| LogError::Header(e.to_string()))?;
    if header.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(LogError::Header(format!(
            "expected `{}`",
            LOG_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LogError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |col: &str, v: &str| LogError::Malformed {
            line,
            message: format!("column {col}: cannot parse `{v}`"),
        };
        let f = |i: usize| -> Result<f64, LogError> { rec[i].parse().map_err(|_| bad(LOG_HEADER[i], &rec[i])) };
        let o = |i: usize| -> Result<Option<f64>, LogError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                f(i).map(Some)
            }
        };
        let b = |i: usize| -> Result<bool, LogError> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(bad(LOG_HEADER[i], v)),
            }
        };
        rows.push(LogRow {
            t: f(0)?,
            x: f(1)?,
            y: f(2)?,
            psi: f(3)?,
            x_meas: f(4)?,
            y_meas: f(5)?,
            psi_meas: f(6)?,
            s: f(7)?,
            v: f(8)?,
            v_cmd: f(9)?,
            delta: f(10)?,
            a_x: f(11)?,
            throttle: f(12)?,
            brake: f(13)?,
            mode: rec[14].parse().map_err(|_| bad("mode", &rec[14]))?,
            h: f(15)?,
            y_preview: f(16)?,
            e_y: o(17)?,
            gap: o(18)?,
            lead_v: o(19)?,
            lead_a: o(20)?,
            lead_a_rx: o(21)?,
            ped_distance: o(22)?,
            sign_code: rec[23].parse().map_err(|_| bad("sign_code", &rec[23]))?,
            sign_distance: o(24)?,
            light: if rec[25].is_empty() {
                None
            } else {
                Some(rec[25].parse().map_err(|_| bad("light", &rec[25]))?)
            },
            collision: b(26)?,
            heading_saturated: b(27)?,
            band_step: if rec[28].is_empty() {
                None
            } else {
                Some(rec[28].parse().map_err(|_| bad("band_step", &rec[28]))?)
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t: f64,
    pub mode: DrivingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub rows: usize,
    pub duration: f64,
    pub rms_h: f64,
    pub rms_y: f64,
    /// RMS of `gap − desired gap` over car-following rows, m.
    pub rms_gap_error: Option<f64>,
    pub max_abs_h: f64,
    pub final_s: f64,
    pub collision: bool,
    pub mode_timeline: Vec<TimelineEntry>,
}

pub fn rms(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

impl Summary {
    /// Summary without gap statistics; see [`Summary::with_gap_error`].
    pub fn from_rows(name: &str, rows: &[LogRow]) -> Self {
        Self {
            scenario: name.to_string(),
            rows: rows.len(),
            duration: rows.last().map_or(0.0, |r| r.t),
            rms_h: rms(rows.iter().map(|r| r.h)).unwrap_or(0.0),
            rms_y: rms(rows.iter().map(|r| r.y_preview)).unwrap_or(0.0),
            rms_gap_error: None,
            max_abs_h: rows.iter().map(|r| r.h.abs()).fold(0.0, f64::max),
            final_s: rows.last().map_or(0.0, |r| r.s),
            collision: rows.iter().any(|r| r.collision),
            mode_timeline: mode_timeline(rows.iter().map(|r| (r.t, r.mode)))
                .into_iter()
                .map(|(t, mode)| TimelineEntry { t, mode })
                .collect(),
        }
    }

    /// Adds the spacing error RMS for a constant-time-gap policy.
    pub fn with_gap_error(mut self, rows: &[LogRow], d_0: f64, t_gap: f64) -> Self {
        self.rms_gap_error = gap_error_rms(rows, d_0, t_gap);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// RMS of `gap − (d_0 + t_gap·v)` over rows in car following.
pub fn gap_error_rms(rows: &[LogRow], d_0: f64, t_gap: f64) -> Option<f64> {
    rms(rows
        .iter()
        .filter(|r| r.mode == DrivingMode::CarFollowing)
        .filter_map(|r| r.gap.map(|g| g - (d_0 + t_gap * r.v))))
}
