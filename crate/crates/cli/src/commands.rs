//! Command bodies.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use shuttle_core::param_space::{
    default_kd_grid, default_kp_grid, feasible_region, pick_gains, DRegion, Interval, ParamError, UncertaintyBox,
};
use shuttle_core::path::{build_route, load_waypoints, RoutePath};
use shuttle_core::sim::{gap_error_rms, run, LogRow, Scenario, SimError, TrajectoryLog};
use shuttle_core::supervisor::DrivingMode;
use shuttle_core::vehicle::{preset, VehiclePreset};

use crate::specs::{parse_box, parse_dregion};
use crate::svg::{heatmap, Chart, Series};
use crate::{CliError, CompareCaccArgs, DesignGainsArgs, FitPathArgs, SimulateArgs};

/// Arc-length step for drawing a route, m.
const DRAW_STEP: f64 = 0.5;

fn write(path: &Path, contents: &str, artifacts: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    artifacts.push(path.to_path_buf());
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn stamp(v: &mut Value, reproducible: bool) {
    if !reproducible {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        v["generated_unix_s"] = json!(secs);
    }
}

fn route_points(route: &RoutePath) -> Vec<(f64, f64)> {
    let n = (route.total_length() / DRAW_STEP).ceil() as usize;
    (0..=n)
        .filter_map(|i| route.sample_at((i as f64 * DRAW_STEP).min(route.total_length())).ok())
        .map(|p| (p.position.x, p.position.y))
        .collect()
}

pub fn fit_path(args: &FitPathArgs) -> Result<Vec<PathBuf>, CliError> {
    let points = load_waypoints(&args.waypoints)
        .and_then(|w| w.into_local())
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.waypoints.display())))?;
    let route = build_route(&points, args.segment_size).map_err(|e| CliError::Validation(e.to_string()))?;
    log::info!(
        "fitted {} segments, {:.2} m, from {} waypoints",
        route.len(),
        route.total_length(),
        points.len()
    );
    let mut artifacts = Vec::new();
    write(&args.out, &route.to_json(), &mut artifacts)?;
    if let Some(plot) = &args.plot {
        let svg = Chart::new("Waypoints and fitted path", "x [m]", "y [m]")
            .equal_axes()
            .with(Series::markers("waypoints", points.iter().map(|p| (p.x, p.y)).collect()))
            .with(Series::line("fitted", route_points(&route)))
            .render();
        write(plot, &svg, &mut artifacts)?;
    }
    Ok(artifacts)
}

fn design_vehicle(name: &str) -> Result<(VehiclePreset, UncertaintyBox), CliError> {
    if let Some(bx) = UncertaintyBox::for_preset(name) {
        let p = preset(name).map_err(|e| CliError::Validation(e.to_string()))?;
        return Ok((p, bx));
    }
    let p = VehiclePreset::load(Path::new(name)).map_err(|e| CliError::Validation(e.to_string()))?;
    let bx = UncertaintyBox {
        m: Interval::point(p.m),
        ..UncertaintyBox::fusion()
    };
    Ok((p, bx))
}

pub fn design_gains(args: &DesignGainsArgs) -> Result<Vec<PathBuf>, CliError> {
    let (vehicle, default_box) = design_vehicle(&args.vehicle)?;
    let bx = match &args.uncertainty {
        Some(spec) => parse_box(spec, default_box).map_err(|e| CliError::Validation(format!("--box: {e}")))?,
        None => default_box,
    };
    let region = match &args.dregion {
        Some(spec) => parse_dregion(spec).map_err(|e| CliError::Validation(format!("--dregion: {e}")))?,
        None => DRegion::default(),
    };
    if args.grid < 2 {
        return Err(CliError::Validation("--grid must be at least 2".into()));
    }
    let fr = feasible_region(
        &vehicle.lateral(bx.vx.lo),
        &bx,
        &region,
        vehicle.l_s,
        &default_kp_grid(args.grid),
        &default_kd_grid(args.grid),
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let choice = match pick_gains(&fr) {
        Ok(c) => c,
        Err(e @ ParamError::NoFeasibleGains) => return Err(CliError::NoFeasible(e.to_string())),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    log::info!("{} of {} cells feasible", fr.count(), args.grid * args.grid);

    let doc = json!({
        "vehicle": vehicle.name,
        "chosen": { "kp": choice.kp, "kd": choice.kd, "clearance_cells": choice.clearance },
        "grid": {
            "n_kp": fr.kp_grid.len(),
            "n_kd": fr.kd_grid.len(),
            "kp_range": [fr.kp_grid[0], fr.kp_grid[fr.kp_grid.len() - 1]],
            "kd_range": [fr.kd_grid[0], fr.kd_grid[fr.kd_grid.len() - 1]],
            "feasible_cells": fr.count(),
        },
        "box": bx,
        "dregion": {
            "sigma_min": region.sigma_min,
            "theta_deg": region.theta.to_degrees(),
            "omega_max": region.omega_max,
        },
        "preview_distance": vehicle.l_s,
    });
    let mut artifacts = Vec::new();
    write(&args.out, &pretty(&doc), &mut artifacts)?;
    if let Some(path) = &args.heatmap {
        let title = format!("Feasible (k_p, k_d), {}", vehicle.name);
        let svg = heatmap(&title, "k_p", "k_d", &fr.kp_grid, &fr.kd_grid, &fr.mask, Some((choice.kp, choice.kd)));
        write(path, &svg, &mut artifacts)?;
    }
    if let Some(path) = &args.mask_csv {
        write(path, &fr.to_csv(), &mut artifacts)?;
    }
    Ok(artifacts)
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    let s = Scenario::load(path).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn series(rows: &[LogRow], f: impl Fn(&LogRow) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.t, f(r).unwrap_or(f64::NAN))).collect()
}

fn write_plots(dir: &Path, log: &TrajectoryLog, route: &RoutePath, artifacts: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let rows = &log.rows;
    let mut speed = Chart::new("Speed", "t [s]", "speed [m/s]")
        .with(Series::line("v", series(rows, |r| Some(r.v))))
        .with(Series::line("v_cmd", series(rows, |r| Some(r.v_cmd))));
    if rows.iter().any(|r| r.lead_v.is_some()) {
        speed = speed.with(Series::line("lead v", series(rows, |r| r.lead_v)));
    }
    write(&dir.join("speed.svg"), &speed.render(), artifacts)?;

    let steering = Chart::new("Steering", "t [s]", "delta [rad]").with(Series::line("delta", series(rows, |r| Some(r.delta))));
    write(&dir.join("steering.svg"), &steering.render(), artifacts)?;

    let mut tracking = Chart::new("Tracking error", "t [s]", "error [m]")
        .with(Series::line("h", series(rows, |r| Some(r.h))))
        .with(Series::line("y preview", series(rows, |r| Some(r.y_preview))));
    if rows.iter().any(|r| r.e_y.is_some()) {
        tracking = tracking.with(Series::line("band e_y", series(rows, |r| r.e_y)));
    }
    write(&dir.join("tracking.svg"), &tracking.render(), artifacts)?;

    let xy = Chart::new("Path and trajectory", "x [m]", "y [m]")
        .equal_axes()
        .with(Series::line("route", route_points(route)))
        .with(Series::line("vehicle", rows.iter().map(|r| (r.x, r.y)).collect()));
    write(&dir.join("xy.svg"), &xy.render(), artifacts)
}

fn write_log(dir: &Path, log: &TrajectoryLog, artifacts: &mut Vec<PathBuf>) -> Result<(), CliError> {
    write(&dir.join("trajectory.csv"), &log.to_csv_string(), artifacts)?;
    if !log.band_csv.is_empty() {
        write(&dir.join("band.csv"), &log.band_csv, artifacts)?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    let scenario = load_scenario(&args.scenario, args.seed)?;
    let mut artifacts = Vec::new();
    let log = match run(&scenario) {
        Ok(log) => log,
        Err(SimError::Scenario(e)) => return Err(CliError::Validation(e.to_string())),
        Err(SimError::Divergence { t, message, log }) => {
            write_log(&args.out_dir, &log, &mut artifacts)?;
            return Err(CliError::Runtime(format!(
                "simulation diverged at t = {t:.2} s: {message}; partial log in {}",
                args.out_dir.join("trajectory.csv").display()
            )));
        }
    };
    write_log(&args.out_dir, &log, &mut artifacts)?;

    let mut summary = log.summary(&scenario.name);
    if scenario.actors.lead.is_some() {
        let c = &scenario.controllers.cacc;
        summary = summary.with_gap_error(&log.rows, c.d_0, c.t_gap);
    }
    let mut doc: Value = serde_json::from_str(&summary.to_json()).expect("summary is JSON");
    stamp(&mut doc, args.reproducible);
    write(&args.out_dir.join("summary.json"), &pretty(&doc), &mut artifacts)?;

    if args.plots {
        let route = scenario.prepare().map_err(|e| CliError::Validation(e.to_string()))?.route;
        write_plots(&args.out_dir, &log, &route, &mut artifacts)?;
    }
    Ok(artifacts)
}

fn run_checked(scenario: &Scenario) -> Result<TrajectoryLog, CliError> {
    run(scenario).map_err(|e| match e {
        SimError::Scenario(e) => CliError::Validation(e.to_string()),
        e => CliError::Runtime(e.to_string()),
    })
}

pub fn compare_cacc(args: &CompareCaccArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut base = load_scenario(&args.scenario, args.seed)?;
    if base.actors.lead.is_none() {
        return Err(CliError::Validation(format!(
            "{}: compare-cacc needs a lead vehicle (actors.lead)",
            args.scenario.display()
        )));
    }
    if !(args.time_gap > 0.0 && args.time_gap.is_finite()) {
        return Err(CliError::Validation(format!("--time-gap must be positive, got {}", args.time_gap)));
    }
    base.controllers.cacc.t_gap = args.time_gap;
    let mut acc = base.clone();
    acc.comm.v2v = false;
    let mut cacc = base.clone();
    cacc.comm.v2v = true;

    let (log_cacc, log_acc) = std::thread::scope(|s| {
        let h = s.spawn(|| run_checked(&cacc));
        let a = run_checked(&acc);
        (h.join().expect("simulation thread panicked"), a)
    });
    let (log_cacc, log_acc) = (log_cacc?, log_acc?);

    let c = &base.controllers.cacc;
    let rms_acc = gap_error_rms(&log_acc.rows, c.d_0, c.t_gap);
    let rms_cacc = gap_error_rms(&log_cacc.rows, c.d_0, c.t_gap);
    let better = matches!((rms_cacc, rms_acc), (Some(a), Some(b)) if a < b);
    let mut doc = json!({
        "scenario": base.name,
        "time_gap": args.time_gap,
        "rms_gap_error_acc": rms_acc,
        "rms_gap_error_cacc": rms_cacc,
        "cacc_better": better,
    });
    stamp(&mut doc, args.reproducible);

    let mut artifacts = Vec::new();
    let dir = &args.out_dir;
    write(&dir.join("trajectory_cacc.csv"), &log_cacc.to_csv_string(), &mut artifacts)?;
    write(&dir.join("trajectory_acc.csv"), &log_acc.to_csv_string(), &mut artifacts)?;
    write(&dir.join("comparison.json"), &pretty(&doc), &mut artifacts)?;

    let spacing_error = |rows: &[LogRow]| {
        series(rows, |r| {
            r.gap
                .filter(|_| r.mode == DrivingMode::CarFollowing)
                .map(|g| g - c.desired_gap(r.v))
        })
    };
    let overlay = Chart::new(&format!("Spacing error, time gap {} s", args.time_gap), "t [s]", "gap - desired [m]")
        .with(Series::line("ACC", spacing_error(&log_acc.rows)))
        .with(Series::line("CACC", spacing_error(&log_cacc.rows)));
    let speeds = Chart::new("Speeds", "t [s]", "speed [m/s]")
        .with(Series::line("lead", series(&log_cacc.rows, |r| r.lead_v)))
        .with(Series::line("ACC", series(&log_acc.rows, |r| Some(r.v))))
        .with(Series::line("CACC", series(&log_cacc.rows, |r| Some(r.v))));
    write(&dir.join("gap_overlay.svg"), &overlay.render(), &mut artifacts)?;
    write(&dir.join("speed_overlay.svg"), &speeds.render(), &mut artifacts)?;
    Ok(artifacts)
}
