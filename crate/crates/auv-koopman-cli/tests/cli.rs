//! End-to-end tests of the binary: pipeline wiring, determinism, file
//! formats, and the exit-code contract (0 ok, 1 usage/config, 2 runtime).

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_auv-koopman"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small-but-real pipeline settings shared by the tests below.
const SMALL: &[&str] = &[
    "--set",
    "collect.n_traj=20",
    "--set",
    "collect.steps_per_traj=30",
];

#[test]
fn pipeline_collect_fit_predict_track() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run_in(d, &[&["collect", "--out", "exp"], SMALL].concat());
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("collected 600 snapshots"), "{stdout}");
    let dataset = d.join("exp/dataset.csv");
    assert!(dataset.exists());
    let text = std::fs::read_to_string(&dataset).unwrap();
    assert!(text.starts_with("x,u,y\n"));
    assert_eq!(text.lines().count(), 601);

    let out = run_in(d, &["fit", "exp/dataset.csv", "--out", "exp"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("A is 5x5"), "{stdout}");
    assert!(stdout.contains("B is 5x1"), "{stdout}");
    assert!(d.join("exp/model.json").exists());

    let out = run_in(
        d,
        &[
            "predict",
            "exp/model.json",
            "--out",
            "exp",
            "--duration",
            "0.5",
        ],
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("v0 = 0:"), "{stdout}");
    assert!(stdout.contains("v0 = -0.1:"), "{stdout}");
    for name in ["prediction_v0_0.csv", "prediction_v0_-0.1.csv"] {
        let text = std::fs::read_to_string(d.join("exp").join(name)).unwrap();
        assert!(text.starts_with("t,v_true,v_pred\n"));
        assert_eq!(text.lines().count(), 52); // header + 51 samples
    }

    let out = run_in(
        d,
        &[
            "track",
            "exp/model.json",
            "--out",
            "exp",
            "--set",
            "track.duration=1.0",
        ],
    );
    assert_code(&out, 0);
    assert!(d.join("exp/trace.csv").exists());
    let metrics = std::fs::read_to_string(d.join("exp/metrics.txt")).unwrap();
    assert!(metrics.contains("max_abs_u"), "{metrics}");
    assert!(metrics.contains("[[segments]]"), "{metrics}");
}

#[test]
fn predict_duration_zero_and_rmse_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(
        &run_in(d, &[&["collect", "--out", "exp"], SMALL].concat()),
        0,
    );
    assert_code(&run_in(d, &["fit", "exp/dataset.csv", "--out", "exp"]), 0);

    // duration 0: single-sample traces, rmse 0
    let out = run_in(
        d,
        &[
            "predict",
            "exp/model.json",
            "--out",
            "z",
            "--duration",
            "0",
            "--v0",
            "0.3",
        ],
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("rmse = 0.000000 over 1 samples"),
        "{stdout}"
    );
    let text = std::fs::read_to_string(d.join("z/prediction_v0_0.3.csv")).unwrap();
    assert_eq!(text, "t,v_true,v_pred\n0,0.3,0.3\n");

    // the printed rmse matches a recomputation from the emitted file
    let out = run_in(
        d,
        &[
            "predict",
            "exp/model.json",
            "--out",
            "p",
            "--duration",
            "1",
            "--v0",
            "0",
        ],
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = stdout
        .lines()
        .find_map(|l| l.split("rmse = ").nth(1))
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let text = std::fs::read_to_string(d.join("p/prediction_v0_0.csv")).unwrap();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for line in text.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        sum_sq += (fields[1] - fields[2]).powi(2);
        count += 1;
    }
    let recomputed = (sum_sq / count as f64).sqrt();
    assert!(
        (printed - recomputed).abs() < 5e-7,
        "printed {printed} vs recomputed {recomputed}"
    );
}

#[test]
fn collect_is_byte_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out_dir in ["a", "b"] {
        let out = run_in(d, &[&["collect", "--out", out_dir], SMALL].concat());
        assert_code(&out, 0);
    }
    let a = std::fs::read(d.join("a/dataset.csv")).unwrap();
    let b = std::fs::read(d.join("b/dataset.csv")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical datasets");

    let out = run_in(
        d,
        &[&["collect", "--out", "c", "--seed", "99"], SMALL].concat(),
    );
    assert_code(&out, 0);
    let c = std::fs::read(d.join("c/dataset.csv")).unwrap();
    assert_ne!(a, c, "different seed must change the dataset");
}

#[test]
fn fit_is_idempotent_on_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(
        &run_in(d, &[&["collect", "--out", "exp"], SMALL].concat()),
        0,
    );
    assert_code(&run_in(d, &["fit", "exp/dataset.csv", "--out", "m1"]), 0);
    assert_code(&run_in(d, &["fit", "exp/dataset.csv", "--out", "m2"]), 0);
    let m1 = std::fs::read(d.join("m1/model.json")).unwrap();
    let m2 = std::fs::read(d.join("m2/model.json")).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn collect_single_snapshot_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run_in(
        d,
        &[
            "collect",
            "--out",
            "one",
            "--set",
            "collect.n_traj=1",
            "--set",
            "collect.steps_per_traj=1",
        ],
    );
    assert_code(&out, 0);
    let text = std::fs::read_to_string(d.join("one/dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 2, "header plus one row: {text}");
}

#[test]
fn config_file_and_set_interact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "version = 1\n[collect]\nn_traj = 3\nsteps_per_traj = 4\n",
    )
    .unwrap();
    let out = run_in(
        d,
        &[
            "collect",
            "--config",
            "run.toml",
            "--out",
            "exp",
            "--set",
            "collect.steps_per_traj=6",
        ],
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("collected 18 snapshots"), "{stdout}");
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // unknown config key
    assert_code(&run_in(d, &["collect", "--set", "collect.bogus=1"]), 1);
    // malformed --set
    assert_code(&run_in(d, &["collect", "--set", "collect.n_traj"]), 1);
    // invalid numeric range
    assert_code(&run_in(d, &["collect", "--set", "collect.dt=-0.5"]), 1);
    // invalid plant parameters
    assert_code(&run_in(d, &["collect", "--set", "plant.omega=2.0"]), 1);
    // unknown subcommand / flag are clap usage errors
    assert_code(&run_in(d, &["frobnicate"]), 1);
    // missing config file
    assert_code(&run_in(d, &["collect", "--config", "nope.toml"]), 1);
    // bad mpc preset only matters for track
    std::fs::write(d.join("m.json"), "{}").unwrap();
    assert_code(
        &run_in(d, &["track", "m.json", "--set", "mpc.preset=bogus"]),
        1,
    );
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // missing model file
    assert_code(&run_in(d, &["predict", "missing.json"]), 2);
    assert_code(&run_in(d, &["track", "missing.json"]), 2);
    // malformed dataset: error message carries the line number
    std::fs::write(d.join("bad.csv"), "x,u,y\n1.0,2.0\n").unwrap();
    let out = run_in(d, &["fit", "bad.csv"]);
    assert_code(&out, 2);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains(":2:"), "want line number in: {stderr}");
    // empty dataset
    std::fs::write(d.join("empty.csv"), "x,u,y\n").unwrap();
    assert_code(&run_in(d, &["fit", "empty.csv"]), 2);
}

#[test]
fn help_and_version_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_code(&run_in(dir.path(), &["--help"]), 0);
    assert_code(&run_in(dir.path(), &["--version"]), 0);
    assert_code(&run_in(dir.path(), &["predict", "--help"]), 0);
}

#[test]
fn gazebo_preset_bounds_show_in_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(
        &run_in(d, &[&["collect", "--out", "exp"], SMALL].concat()),
        0,
    );
    assert_code(&run_in(d, &["fit", "exp/dataset.csv", "--out", "exp"]), 0);
    let out = run_in(
        d,
        &[
            "track",
            "exp/model.json",
            "--out",
            "exp",
            "--set",
            "mpc.preset=gazebo",
            "--set",
            "track.duration=1.0",
        ],
    );
    assert_code(&out, 0);
    let metrics = std::fs::read_to_string(d.join("exp/metrics.txt")).unwrap();
    // constrained run reports both maxima within the wider gazebo boxes
    let max_u: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_u = "))
        .unwrap()
        .parse()
        .unwrap();
    let max_du: f64 = metrics
        .lines()
        .find_map(|l| l.strip_prefix("max_abs_du = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(max_u <= 150.0 + 1e-6);
    assert!(max_du <= 50.0 + 1e-6);
    assert!(
        max_du > 20.0,
        "gazebo increments should exceed the matlab box"
    );
}
