use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
seed = 11
strategy = "none"
min_mean = 450.0
settings = ["setting1"]
epoch = "2017-01-01"

[bsts.sampler]
chains = 2
iterations_per_chain = 120
warmup = 60
max_tree_depth = 5
max_retries = 0
require_convergence = false

[hbm.sampler]
chains = 2
iterations_per_chain = 200
warmup = 100
max_retries = 0
require_convergence = false

[simulate]
control_per_category = 1
reference_per_category = 1
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_impactor"))
            .arg(cmd)
            .arg("--config")
            .arg(self.dir.path().join("config.toml"))
            .arg("--output")
            .arg(self.out())
            .args(extra)
            .output()
            .unwrap()
    }

    fn ok(&self, cmd: &str) {
        let o = self.run(cmd, &[]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            headers
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a cumulative.csv with `Phi_mean = value(entity index, day)` for
/// every treated entity over the impact window.
fn fake_cumulative(ws: &Workspace, value: impl Fn(usize, usize) -> f64) -> Vec<BTreeMap<String, String>> {
    let meta = read_csv(&ws.out().join("data/treated_meta.csv"));
    let mut text = String::from("entity_id,day,Phi_mean,Phi_q05,Phi_q50,Phi_q95\n");
    for (i, m) in meta.iter().enumerate() {
        for day in 263..400 {
            let v = value(i, day);
            text.push_str(&format!("{},{day},{v},{},{v},{}\n", m["entity_id"], v - 1.0, v + 1.0));
        }
    }
    fs::create_dir_all(ws.out().join("impact")).unwrap();
    fs::write(ws.out().join("impact/cumulative.csv"), text).unwrap();
    meta
}

#[test]
fn missing_config_is_an_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_impactor"))
        .args(["simulate", "--config", "/nonexistent/impactor.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("impactor: error"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let ws = Workspace::new("seed = 1\nsede = 2\n");
    let o = ws.run("simulate", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));
}

#[test]
fn commands_before_their_inputs_exist_fail_cleanly() {
    let ws = Workspace::new(SMALL);
    for cmd in ["evaluate", "impact", "hbm", "report"] {
        let o = ws.run(cmd, &[]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr(&o).contains("does not exist"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn simulate_is_reproducible() {
    let a = Workspace::new(SMALL);
    let b = Workspace::new(SMALL);
    a.ok("simulate");
    b.ok("simulate");
    let names: Vec<_> = fs::read_dir(a.out().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 7);
    for name in names {
        let left = fs::read(a.out().join("data").join(&name)).unwrap();
        let right = fs::read(b.out().join("data").join(&name)).unwrap();
        assert!(left == right, "{name:?} differs");
    }
    let c = Workspace::new(SMALL);
    let o = c.run("simulate", &["--seed", "12"]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(a.out().join("data/treated_visits.csv")).unwrap(),
        fs::read(c.out().join("data/treated_visits.csv")).unwrap()
    );
}

#[test]
fn table_means_match_validation_records() {
    let ws = Workspace::new(SMALL);
    ws.ok("simulate");
    ws.ok("evaluate");
    let validation = read_csv(&ws.out().join("evaluate/validation.csv"));
    let table = read_csv(&ws.out().join("evaluate/table2.csv"));
    assert_eq!(table.len(), 12);
    for row in &table {
        let column = if row["metric"] == "mape" { "mape" } else { "pearson_r" };
        let values: Vec<f64> = validation
            .iter()
            .filter(|v| {
                v["setting"] == row["setting"] && v["strategy"] == row["strategy"] && v["split"] == row["split"]
            })
            .map(|v| v[column].parse::<f64>().unwrap())
            .filter(|v| !v.is_nan())
            .collect();
        assert_eq!(row["count"].parse::<usize>().unwrap(), values.len());
        let want = values.iter().sum::<f64>() / values.len() as f64;
        let got: f64 = row["mean"].parse().unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{row:?}: {want}");
    }
    let summary = read_csv(&ws.out().join("evaluate/selection_summary.csv"));
    let total: f64 = summary.iter().map(|r| r["percent"].parse::<f64>().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
fn report_medians_match_cumulative_input() {
    let ws = Workspace::new(SMALL);
    ws.ok("simulate");
    let value = |i: usize, day: usize| (i as f64 * 0.37).sin() * 10.0 - (day - 262) as f64 * 0.01;
    let meta = fake_cumulative(&ws, value);
    ws.ok("report");
    let report = read_csv(&ws.out().join("report/report.csv"));
    assert_eq!(report.len(), 81);
    for row in &report {
        let day: usize = row["day"].parse().unwrap();
        assert_eq!(day, 262 + row["horizon"].parse::<usize>().unwrap());
        let mut values: Vec<f64> = meta
            .iter()
            .enumerate()
            .filter(|(_, m)| m["category"] == row["category"] && m["region"] == row["region"])
            .map(|(i, _)| value(i, day))
            .collect();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        assert_eq!(row["entities"].parse::<usize>().unwrap(), n);
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        let got: f64 = row["median"].parse().unwrap();
        assert!((got - median).abs() < 1e-12, "{row:?}: {median}");
        assert_eq!(row["min"].parse::<f64>().unwrap(), values[0]);
        assert_eq!(row["max"].parse::<f64>().unwrap(), values[n - 1]);
    }
    let dates: Vec<&str> = report.iter().map(|r| r["date"].as_str()).collect();
    assert!(dates.contains(&"2017-10-20"));
}

#[test]
fn missing_damage_rate_names_the_entity() {
    let ws = Workspace::new(SMALL);
    ws.ok("simulate");
    let meta_path = ws.out().join("data/treated_meta.csv");
    let text = fs::read_to_string(&meta_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let victim = lines[3].split(',').next().unwrap().to_string();
    let cut = lines[3].rfind(',').unwrap();
    lines[3].truncate(cut + 1);
    fs::write(&meta_path, lines.join("\n") + "\n").unwrap();
    fake_cumulative(&ws, |i, _| i as f64);

    let o = ws.run("hbm", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&victim) && err.contains("damage_rate"), "{err}");
}

#[test]
fn non_converged_fits_are_partial_failures() {
    let config = SMALL
        .replace(
            "iterations_per_chain = 120\nwarmup = 60",
            "iterations_per_chain = 20\nwarmup = 10",
        )
        .replacen("require_convergence = false", "require_convergence = true", 1);
    let ws = Workspace::new(&config);
    ws.ok("simulate");
    let o = ws.run("impact", &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("see failures.csv"));
    let failures = read_csv(&ws.out().join("impact/failures.csv"));
    assert!(!failures.is_empty());
    assert!(failures
        .iter()
        .all(|f| !f["entity_id"].is_empty() && !f["message"].is_empty()));
}
