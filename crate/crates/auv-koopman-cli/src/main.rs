//! Pipeline driver: `collect` simulated snapshot data, `fit` a lifted linear
//! model, and run `predict` / `track` experiments, all file-mediated so
//! externally logged datasets can replace the built-in simulator.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use auv_koopman::edmd::{collect_dataset, fit, Dataset, LiftedModel};
use auv_koopman::harness::{
    run_prediction_experiment, run_tracking_experiment, square_wave_inputs, trace_metrics,
    ReferenceSignal,
};
use auv_koopman::lifting::Dictionary;
use auv_koopman::mpc::ControllerState;

use config::{load_config, RunConfig};

/// Exit code 1: bad usage or configuration. Exit code 2: runtime or
/// numerical failure.
#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.message.fmt(f)
    }
}

impl From<auv_koopman::Error> for CliError {
    fn from(e: auv_koopman::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "auv-koopman",
    about = "Data-driven Koopman/EDMD identification and constrained MPC for AUV surge speed",
    version
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; omitted sections use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the command's RNG seed (collect: data seed, fit: dictionary
    /// seed). Ignored by predict/track.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config key, e.g. --set collect.n_traj=10. Repeatable;
    /// values use TOML syntax.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate random trajectories and write the snapshot dataset CSV.
    Collect,
    /// Fit a lifted linear model from a dataset CSV and write the model file.
    Fit {
        /// Dataset CSV with header x,u,y.
        dataset: PathBuf,
    },
    /// Roll the fitted model forward under a square-wave input and compare
    /// against the simulated truth.
    Predict {
        /// Model file written by `fit`.
        model: PathBuf,
        /// Initial speeds, one experiment per value.
        #[arg(long = "v0", default_values_t = vec![0.0, -0.1])]
        v0: Vec<f64>,
        /// Experiment length in seconds (multiple of the sampling period).
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Square-wave amplitude.
        #[arg(long, default_value_t = 40.0)]
        amplitude: f64,
        /// Square-wave period in seconds.
        #[arg(long, default_value_t = 0.1)]
        period: f64,
    },
    /// Closed-loop constrained tracking of the configured reference.
    Track {
        /// Model file written by `fit`.
        model: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; real parse errors are usage
            // errors (exit 1)
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code);
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.common.config.as_deref(), &cli.common.sets)?;
    std::fs::create_dir_all(&cli.common.out).map_err(|e| {
        CliError::runtime(format!("cannot create {}: {e}", cli.common.out.display()))
    })?;
    match cli.command {
        Command::Collect => cmd_collect(&config, &cli.common),
        Command::Fit { dataset } => cmd_fit(&config, &cli.common, &dataset),
        Command::Predict {
            model,
            v0,
            duration,
            amplitude,
            period,
        } => cmd_predict(
            &config,
            &cli.common,
            &model,
            &v0,
            duration,
            amplitude,
            period,
        ),
        Command::Track { model } => cmd_track(&config, &cli.common, &model),
    }
}

fn validated_plant(config: &RunConfig) -> Result<auv_koopman::PlantParams, CliError> {
    config
        .plant
        .validate()
        .map_err(|e| CliError::config(format!("invalid [plant] section: {e}")))?;
    Ok(config.plant)
}

fn build_dictionary(
    config: &RunConfig,
    seed_override: Option<u64>,
) -> Result<Dictionary, CliError> {
    let d = &config.dictionary;
    Dictionary::new(
        1,
        d.n_rbf,
        d.center_low,
        d.center_high,
        seed_override.unwrap_or(d.seed),
    )
    .and_then(|dict| dict.with_width(d.width))
    .map_err(|e| CliError::config(format!("invalid [dictionary] section: {e}")))
}

fn cmd_collect(config: &RunConfig, common: &CommonArgs) -> Result<(), CliError> {
    let plant = validated_plant(config)?;
    let mut opts = config.collect;
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    opts.validate()
        .map_err(|e| CliError::config(format!("invalid [collect] section: {e}")))?;
    let dataset = collect_dataset(&plant, &opts)?;
    let path = common.out.join("dataset.csv");
    dataset.write_csv(&path)?;

    let stats = |v: &[f64]| {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &e in v {
            lo = lo.min(e);
            hi = hi.max(e);
            sum += e;
        }
        (lo, hi, sum / v.len() as f64)
    };
    let (x_lo, x_hi, x_mean) = stats(&dataset.x);
    let (u_lo, u_hi, _) = stats(&dataset.u);
    println!(
        "collected {} snapshots ({} trajectories x {} steps, dt = {})",
        dataset.len(),
        opts.n_traj,
        opts.steps_per_traj,
        opts.dt
    );
    println!("  x in [{x_lo:.4}, {x_hi:.4}], mean {x_mean:.4}");
    println!("  u in [{u_lo:.4}, {u_hi:.4}]");
    println!("  wrote {}", path.display());
    Ok(())
}

fn cmd_fit(config: &RunConfig, common: &CommonArgs, dataset_path: &Path) -> Result<(), CliError> {
    let dict = build_dictionary(config, common.seed)?;
    let dataset = Dataset::read_csv(dataset_path, config.collect.dt)?;
    let model = fit(&dataset, &dict, config.fit.alpha)?;
    let path = common.out.join("model.json");
    model.save(&path)?;
    println!(
        "fitted lifted model: A is {}x{}, B is {}x{}, N = {}",
        model.a.nrows(),
        model.a.ncols(),
        model.b.nrows(),
        model.b.ncols(),
        model.lifted_dim()
    );
    println!(
        "  alpha = {}, fit residual = {:e}",
        model.alpha, model.fit_residual
    );
    println!("  wrote {}", path.display());
    Ok(())
}

fn cmd_predict(
    config: &RunConfig,
    common: &CommonArgs,
    model_path: &Path,
    v0s: &[f64],
    duration: f64,
    amplitude: f64,
    period: f64,
) -> Result<(), CliError> {
    let plant = validated_plant(config)?;
    let model = LiftedModel::load(model_path)?;
    let dt = config.collect.dt;
    let steps = auv_koopman::harness::prediction_steps(duration, dt)
        .map_err(|e| CliError::config(e.to_string()))?;
    let inputs = square_wave_inputs(amplitude, period, dt, steps);
    for &v0 in v0s {
        let result = run_prediction_experiment(&plant, &model, v0, &inputs, dt)?;
        let path = common.out.join(format!("prediction_v0_{v0}.csv"));
        write_prediction_csv(&path, dt, &result.truth, &result.predicted)?;
        println!(
            "v0 = {v0}: rmse = {:.6} over {} samples, wrote {}",
            result.rmse,
            result.truth.len(),
            path.display()
        );
    }
    Ok(())
}

fn write_prediction_csv(
    path: &Path,
    dt: f64,
    truth: &[f64],
    predicted: &[f64],
) -> Result<(), CliError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))?,
    );
    writeln!(w, "t,v_true,v_pred").map_err(|e| CliError::runtime(e.to_string()))?;
    for (k, (t_val, p_val)) in truth.iter().zip(predicted).enumerate() {
        writeln!(w, "{},{},{}", k as f64 * dt, t_val, p_val)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    Ok(())
}

fn cmd_track(config: &RunConfig, common: &CommonArgs, model_path: &Path) -> Result<(), CliError> {
    let plant = validated_plant(config)?;
    let mpc = config.mpc.build()?;
    let reference: ReferenceSignal = config.reference.build()?;
    let model = LiftedModel::load(model_path)?;
    let mut controller = ControllerState::new(model, mpc, 0.0)
        .map_err(|e| CliError::config(format!("controller setup: {e}")))?;
    let trace = run_tracking_experiment(
        &plant,
        &mut controller,
        &reference,
        config.track.duration,
        config.collect.dt,
        config.track.v0,
    )?;
    let trace_path = common.out.join("trace.csv");
    trace.write_csv(&trace_path)?;

    let metrics = trace_metrics(&trace);
    let metrics_path = common.out.join("metrics.txt");
    let rendered = toml::to_string(&metrics)
        .map_err(|e| CliError::runtime(format!("metrics serialization: {e}")))?;
    std::fs::write(&metrics_path, rendered)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", metrics_path.display())))?;

    println!(
        "tracked for {} s: max|u| = {:.3}, max|du| = {:.3}, total cost = {:.3}",
        config.track.duration, metrics.max_abs_u, metrics.max_abs_du, metrics.total_cost
    );
    for s in &metrics.segments {
        println!(
            "  segment t = {:.2}..{:.2} ref {}: steady-state error {:.5}{}",
            s.start_time,
            s.start_time + s.duration,
            s.reference,
            s.steady_state_error,
            match s.settling_time {
                Some(ts) => format!(", settled after {ts:.2} s"),
                None => String::new(),
            }
        );
    }
    println!(
        "  wrote {} and {}",
        trace_path.display(),
        metrics_path.display()
    );
    if metrics.violations > 0 {
        return Err(CliError::runtime(format!(
            "{} trace rows violate the configured constraint boxes by more than 1e-6",
            metrics.violations
        )));
    }
    Ok(())
}
