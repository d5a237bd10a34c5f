use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shuttle_core::path::RoutePath;

fn shuttle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shuttle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn repo(rel: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .display()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_points(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::from("x,y\n");
    for i in 0..n {
        let t = i as f64 * 0.1;
        text.push_str(&format!("{},{}\n", 10.0 * t.cos(), 10.0 * t.sin()));
    }
    let p = dir.join(format!("pts{n}.csv"));
    std::fs::write(&p, text).unwrap();
    p
}

/// Shipped scenario with `edit` applied, written next to absolute route paths.
fn edited_scenario(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let text = std::fs::read_to_string(repo(&format!("scenarios/{name}"))).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let wp = v["route"]["waypoints"].as_str().unwrap().to_string();
    v["route"]["waypoints"] = repo(&format!("scenarios/{wp}")).into();
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p
}

#[test]
fn fit_path_writes_route_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let pts = write_points(dir.path(), 40);
    let out = dir.path().join("route.json");
    let plot = dir.path().join("route.svg");
    let o = shuttle(&["fit-path", "--waypoints", s(&pts), "--segment-size", "10", "--out", s(&out), "--plot", s(&plot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let route = RoutePath::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // Groups of ten share boundary points: 0..9, 9..18, 18..27, 27..36, 36..39.
    assert_eq!(route.len(), 5);
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.contains(r#"data-name="waypoints""#) && svg.contains(r#"data-name="fitted""#));
    assert_eq!(svg.matches("<circle").count(), 40);
}

#[test]
fn fit_path_rejects_short_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("route.json");
    let short = write_points(dir.path(), 3);
    let o = shuttle(&["fit-path", "--waypoints", s(&short), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("InsufficientData"), "{}", stderr(&o));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n0,0\n1,oops\n2,0\n3,0\n").unwrap();
    let o = shuttle(&["fit-path", "--waypoints", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!out.exists());
}

fn chosen_kp(vehicle: &str, dir: &Path) -> f64 {
    let out = dir.join(format!("{vehicle}.json"));
    let o = shuttle(&["design-gains", "--vehicle", vehicle, "--grid", "100", "--box", "vx=2:5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["grid"]["feasible_cells"].as_u64().unwrap() > 0);
    v["chosen"]["kp"].as_f64().unwrap()
}

#[test]
fn design_gains_exit_codes_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.json");
    let heat = dir.path().join("g.svg");
    let o = shuttle(&["design-gains", "--vehicle", "fusion", "--out", s(&out), "--heatmap", s(&heat)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&heat).unwrap().contains(r#"class="chosen""#));

    let o = shuttle(&["design-gains", "--vehicle", "fusion", "--dregion", "sigma=50", "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("NoFeasibleGains"));

    let o = shuttle(&["design-gains", "--vehicle", "fusion", "--box", "m=oops", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = shuttle(&["design-gains", "--vehicle", "tractor", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let (dash, fusion) = (chosen_kp("dash", dir.path()), chosen_kp("fusion", dir.path()));
    assert!(dash > fusion, "dash {dash} vs fusion {fusion}");
}

fn simulate(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--scenario", scenario, "--out-dir", s(out)];
    args.extend_from_slice(extra);
    shuttle(&args)
}

#[test]
fn demo_scenario_writes_four_plots() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(&repo("scenarios/campus_demo.json"), dir.path(), &["--plots"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svgs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svgs, 4);
    for f in ["trajectory.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let listed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listed.lines().count(), 6);
    assert!(listed.lines().all(|l| Path::new(l).exists()));
}

#[test]
fn reproducible_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo("scenarios/supervisor_avenue.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(simulate(&scenario, d, &["--reproducible", "--plots"]).status.success());
    }
    for f in ["trajectory.csv", "summary.json", "band.csv", "xy.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert!(simulate(&scenario, &c, &[]).status.success());
    assert!(std::fs::read_to_string(c.join("summary.json")).unwrap().contains("generated_unix_s"));
    assert!(!std::fs::read_to_string(a.join("summary.json")).unwrap().contains("generated_unix_s"));
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn seed_only_moves_noise_driven_channels() {
    let dir = tempfile::tempdir().unwrap();
    let demo = repo("scenarios/campus_demo.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(simulate(&demo, &a, &["--seed", "1", "--reproducible"]).status.success());
    assert!(simulate(&demo, &b, &["--seed", "2", "--reproducible"]).status.success());
    let (la, lb) = (
        std::fs::read_to_string(a.join("trajectory.csv")).unwrap(),
        std::fs::read_to_string(b.join("trajectory.csv")).unwrap(),
    );
    assert_eq!(column(&la, "t"), column(&lb, "t"));
    assert_ne!(column(&la, "x_meas"), column(&lb, "x_meas"));

    // Without localization noise or message loss, the seed has nothing to act on.
    let quiet = edited_scenario(dir.path(), "campus_demo.json", |v| {
        v["localization"]["mode"] = "ideal".into();
        v["comm"]["drop_rate"] = 0.0.into();
    });
    let (c, d) = (dir.path().join("c"), dir.path().join("d"));
    assert!(simulate(s(&quiet), &c, &["--seed", "1"]).status.success());
    assert!(simulate(s(&quiet), &d, &["--seed", "2"]).status.success());
    assert_eq!(std::fs::read(c.join("trajectory.csv")).unwrap(), std::fs::read(d.join("trajectory.csv")).unwrap());
}

#[test]
fn simulate_validation_and_divergence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = edited_scenario(dir.path(), "oval_dash.json", |v| {
        v["route"]["waypoints"] = "no_such_route.csv".into();
    });
    let o = simulate(s(&missing), &dir.path().join("m"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_route.csv"), "{}", stderr(&o));

    let typo = edited_scenario(dir.path(), "cacc_straight.json", |v| {
        v["actors"]["lead"]["initial_gapp"] = 3.0.into();
    });
    let o = simulate(s(&typo), &dir.path().join("t"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("actors.lead"), "{}", stderr(&o));

    let diverging = dir.path().join("diverging.json");
    std::fs::write(
        &diverging,
        r#"{"schema_version": 1, "route": {"points": [[0, 0], [50, 0], [100, 0], [150, 0]]},
            "vehicle": {"steering_offset": 0.8}, "cruise_speed": 10.0, "duration": 30.0,
            "initial": {"speed": 10.0, "lateral_offset": 20.0}}"#,
    )
    .unwrap();
    let out = dir.path().join("d");
    let o = simulate(s(&diverging), &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let partial = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(partial.lines().count() > 2);
    assert!(!out.join("summary.json").exists());
}

fn compare(scenario: &str, gap: &str, out: &Path) -> (Output, serde_json::Value) {
    let o = shuttle(&["compare-cacc", "--scenario", scenario, "--time-gap", gap, "--out-dir", s(out), "--reproducible"]);
    let v = std::fs::read_to_string(out.join("comparison.json"))
        .ok()
        .map_or(serde_json::Value::Null, |t| serde_json::from_str(&t).unwrap());
    (o, v)
}

#[test]
fn compare_cacc_reports_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let (o, v) = compare(&repo("scenarios/cacc_straight.json"), "0.6", dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(v["cacc_better"], true);
    assert!(v["rms_gap_error_cacc"].as_f64().unwrap() < v["rms_gap_error_acc"].as_f64().unwrap());
    for f in ["trajectory_acc.csv", "trajectory_cacc.csv", "gap_overlay.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn compare_cacc_with_starved_channel_matches_acc() {
    let dir = tempfile::tempdir().unwrap();
    let starved = edited_scenario(dir.path(), "cacc_straight.json", |v| {
        v["comm"]["drop_rate"] = 1.0.into();
    });
    let (o, v) = compare(s(&starved), "0.6", &dir.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    let (acc, cacc) = (v["rms_gap_error_acc"].as_f64().unwrap(), v["rms_gap_error_cacc"].as_f64().unwrap());
    assert!((acc - cacc).abs() <= 1e-9, "{acc} vs {cacc}");
    assert_eq!(v["cacc_better"], false);
}

#[test]
fn compare_cacc_needs_a_lead() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = compare(&repo("scenarios/oval_dash.json"), "0.6", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lead"));
    let (o, _) = compare(&repo("scenarios/cacc_straight.json"), "0", dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_are_validation_errors() {
    assert_eq!(shuttle(&["simulate"]).status.code(), Some(1));
    assert_eq!(shuttle(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(shuttle(&["--help"]).status.code(), Some(0));
}

#[test]
fn log_level_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let pts = write_points(dir.path(), 40);
    let run = |level: &str| {
        Command::new(env!("CARGO_BIN_EXE_shuttle"))
            .env("SHUTTLE_LOG", level)
            .args(["fit-path", "--waypoints", s(&pts), "--out", s(&dir.path().join("r.json"))])
            .output()
            .unwrap()
    };
    assert!(stderr(&run("info")).contains("fitted 5 segments"));
    assert!(stderr(&run("error")).is_empty());
}
