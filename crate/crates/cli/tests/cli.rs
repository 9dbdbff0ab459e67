//! End-to-end runs of the installed binary: fit a model and publish its
//! summary, fuse it into an internal study, attach bootstrap intervals, and
//! drive a small simulation. Everything goes through real files in a temp
//! directory and the assertions read the emitted CSV text.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estfuse"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn run_with_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_estfuse"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .expect("binary should launch")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform on (-1, 1); plenty for exercising the fitting paths.
fn unif(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Internal-study CSV: outcome over x1, x2 and one z column.
fn write_internal_csv(path: &Path, n: usize, seed: u64) {
    let mut s = seed;
    let mut text = String::from("y,x1,x2,z1\n");
    for _ in 0..n {
        let x1 = unif(&mut s);
        let x2 = unif(&mut s);
        let z1 = unif(&mut s);
        let y = 0.5 + 0.5 * x1 - 0.4 * x2 + 0.3 * z1 + 0.6 * unif(&mut s);
        text.push_str(&format!("{y},{x1},{x2},{z1}\n"));
    }
    std::fs::write(path, text).unwrap();
}

/// External-study CSV: same x marginal law, no z columns recorded.
fn write_external_csv(path: &Path, n: usize, seed: u64) {
    let mut s = seed;
    let mut text = String::from("y,x1,x2\n");
    for _ in 0..n {
        let x1 = unif(&mut s);
        let x2 = unif(&mut s);
        let y = 0.5 + 0.5 * x1 - 0.4 * x2 + 0.6 * unif(&mut s);
        text.push_str(&format!("{y},{x1},{x2}\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn external_config(dir: &Path) -> String {
    format!(
        "[data]\ncsv = \"{}\"\n\n[columns]\noutcome = \"y\"\nx = [\"x1\", \"x2\"]\n\n\
         [model]\nfamily = \"linear\"\n",
        dir.join("external.csv").display()
    )
}

fn internal_config(dir: &Path, extra: &str) -> String {
    format!(
        "[data]\ncsv = \"{}\"\nexternal_summary = \"{}\"\n\n\
         [columns]\noutcome = \"y\"\nx = [\"x1\", \"x2\"]\nz = [\"z1\"]\n\n\
         [model]\nfamily = \"linear\"\n{extra}",
        dir.join("internal.csv").display(),
        dir.join("summary.txt").display()
    )
}

/// Fixture directory with both datasets, both configs, and a fitted summary.
fn fused_fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    write_external_csv(&dir.path().join("external.csv"), 4000, 11);
    write_internal_csv(&dir.path().join("internal.csv"), 300, 23);
    std::fs::write(dir.path().join("ext.toml"), external_config(dir.path())).unwrap();
    std::fs::write(dir.path().join("int.toml"), internal_config(dir.path(), "")).unwrap();
    let fit = run(&[
        "fit",
        "--config",
        dir.path().join("ext.toml").to_str().unwrap(),
        "--out",
        dir.path().join("summary.txt").to_str().unwrap(),
    ]);
    assert!(fit.status.success(), "fit failed: {}", stderr_text(&fit));
    dir
}

fn parse_fuse_rows(csv: &str) -> Vec<Vec<f64>> {
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "coordinate,internal,conditional,js,weight,tau_star,d_ratio"
    );
    lines
        .map(|line| line.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect()
}

#[test]
fn fit_summary_survives_a_parse_and_rewrite() {
    let dir = fused_fixture();
    let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(text.starts_with("family linear\n"));
    let parsed = estfuse::io::external_summary_from_str(&text).unwrap();
    assert_eq!(parsed.n, 4000);
    assert_eq!(parsed.theta.len(), 3);
    assert_eq!(estfuse::io::external_summary_to_string(&parsed), text);
}

#[test]
fn fit_then_fuse_produces_consistent_estimates() {
    let dir = fused_fixture();
    let out = run(&["fuse", "--config", dir.path().join("int.toml").to_str().unwrap()]);
    assert!(out.status.success(), "fuse failed: {}", stderr_text(&out));

    let rows = parse_fuse_rows(&String::from_utf8_lossy(&out.stdout));
    assert_eq!(rows.len(), 4);
    let weight = rows[0][4];
    assert!((0.0..=1.0).contains(&weight), "weight {weight} out of range");
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], i as f64);
        assert!(row.iter().all(|v| v.is_finite()));
        assert_eq!(row[4], weight, "weight must be shared across coordinates");
        let segment = weight * row[2] + (1.0 - weight) * row[1];
        assert!(
            (row[3] - segment).abs() <= 1e-12,
            "js coordinate off the internal-conditional segment: {} vs {segment}",
            row[3]
        );
    }
}

#[test]
fn missing_declared_column_names_the_column_on_stderr() {
    let dir = TempDir::new().unwrap();
    write_external_csv(&dir.path().join("external.csv"), 50, 3);
    let bad = external_config(dir.path()).replace("outcome = \"y\"", "outcome = \"yy\"");
    std::fs::write(dir.path().join("ext.toml"), bad).unwrap();

    let out = run(&["fit", "--config", dir.path().join("ext.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_text(&out);
    assert!(err.contains("\"yy\""), "stderr should name the column: {err}");
    assert!(err.contains("not found"), "stderr should say what went wrong: {err}");
}

#[test]
fn declared_transform_must_match_the_summary() {
    let dir = fused_fixture();
    let cfg = internal_config(dir.path(), "\n[transform]\nkind = \"subset\"\nindices = [1, 2]\n");
    std::fs::write(dir.path().join("int.toml"), cfg).unwrap();

    let out = run(&["fuse", "--config", dir.path().join("int.toml").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr_text(&out);
    assert!(err.contains("transform"), "stderr should explain the mismatch: {err}");
}

#[test]
fn bootstrap_ci_is_seed_deterministic_and_flag_driven() {
    let dir = fused_fixture();
    let cfg_path = dir.path().join("int.toml");
    let cfg = cfg_path.to_str().unwrap();
    let args = ["bootstrap-ci", "--config", cfg, "--replicates", "40", "--seed", "9"];

    let first = run(&args);
    assert!(first.status.success(), "bootstrap-ci failed: {}", stderr_text(&first));
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "same seed must reproduce bytes");

    let other = run(&["bootstrap-ci", "--config", cfg, "--replicates", "40", "--seed", "10"]);
    assert!(other.status.success());
    assert_ne!(first.stdout, other.stdout, "seed flag should steer the multipliers");

    let text = String::from_utf8_lossy(&first.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "estimator,coordinate,point,lower,upper,n_failed");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 4, "three estimators over four coordinates");
    for label in ["internal", "conditional", "js"] {
        assert_eq!(rows.iter().filter(|r| r[0] == label).count(), 4);
    }
    for row in &rows {
        let point: f64 = row[2].parse().unwrap();
        let lower: f64 = row[3].parse().unwrap();
        let upper: f64 = row[4].parse().unwrap();
        assert!(lower <= upper, "interval endpoints out of order in {row:?}");
        assert!(point.is_finite() && lower.is_finite() && upper.is_finite());
    }
}

#[test]
fn simulate_covers_the_default_offset_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = "[scenario]\nkind = \"linear\"\nreplicates = 2\nn_internal = 120\n\
               n_external = 800\neval_rows = 200\nseed = 3\n";
    std::fs::write(dir.path().join("sim.toml"), cfg).unwrap();
    let out_dir = dir.path().join("out");

    let out = run(&[
        "simulate",
        "--config",
        dir.path().join("sim.toml").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "simulate failed: {}", stderr_text(&out));

    // The default offset grid is 0 to 0.3 in steps of 0.025: 13 values,
    // three estimator rows each.
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 13 * 3);
    let raw = std::fs::read_to_string(out_dir.join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 13 * 3 * 2);

    let header = report.lines().next().unwrap();
    assert!(header.starts_with("scenario,offset,estimator,rel_pmse_mean"));
    for line in report.lines().skip(1) {
        assert!(line.starts_with("linear,"));
    }
}

#[test]
fn simulate_output_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = "[scenario]\nkind = \"linear\"\nreplicates = 3\noffsets = [0.0, 0.1]\n\
               n_internal = 120\nn_external = 600\neval_rows = 150\nseed = 7\n";
    std::fs::write(dir.path().join("sim.toml"), cfg).unwrap();
    let cfg_path = dir.path().join("sim.toml");

    let mut outputs = Vec::new();
    for (threads, sub) in [("1", "a"), ("4", "b")] {
        let out_dir = dir.path().join(sub);
        let out = run_with_threads(
            &[
                "simulate",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            threads,
        );
        assert!(out.status.success(), "simulate failed: {}", stderr_text(&out));
        outputs.push((
            std::fs::read(out_dir.join("report.csv")).unwrap(),
            std::fs::read(out_dir.join("raw.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "report.csv must not depend on the pool size");
    assert_eq!(outputs[0].1, outputs[1].1, "raw.csv must not depend on the pool size");
}
