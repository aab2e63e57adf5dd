//! End-to-end experiments: open-loop prediction comparison against the
//! ground-truth plant and closed-loop constrained reference tracking, with
//! CSV trace output and summary metrics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::edmd::{prediction_rmse, LiftedModel};
use crate::error::{Error, Result};
use crate::mpc::ControllerState;
use crate::plant::{IntegrationMethod, PlantParams};

/// Piecewise-constant reference: left-closed segments defined by
/// `(time, value)` breakpoints. The last value extends to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    breakpoints: Vec<(f64, f64)>,
}

impl ReferenceSignal {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidParameter("reference: no breakpoints".into()));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(Error::InvalidParameter(
                "reference: first breakpoint must be at t = 0".into(),
            ));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidParameter(
                    "reference: breakpoint times must be strictly increasing".into(),
                ));
            }
        }
        if breakpoints
            .iter()
            .any(|(t, v)| !t.is_finite() || !v.is_finite())
        {
            return Err(Error::NonFinite("reference breakpoints".into()));
        }
        Ok(ReferenceSignal { breakpoints })
    }

    /// Default tracking profile: 0.2 → 0.5 → −0.2 → 0 m/s in 3 s segments.
    pub fn default_profile() -> Self {
        ReferenceSignal::new(vec![(0.0, 0.2), (3.0, 0.5), (6.0, -0.2), (9.0, 0.0)])
            .expect("static profile is valid")
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Value at time `t` (left-closed; times before 0 clamp to the first
    /// value). A small fuzz absorbs accumulated grid rounding.
    pub fn sample(&self, t: f64) -> f64 {
        let mut value = self.breakpoints[0].1;
        for &(time, v) in &self.breakpoints {
            if t >= time - 1e-9 {
                value = v;
            } else {
                break;
            }
        }
        value
    }
}

/// Square-wave input by step index: `amplitude` for the first half period,
/// `−amplitude` for the second, starting positive at t = 0. The period is
/// rounded to an even number of steps so the toggle lands on the grid.
pub fn square_wave_inputs(amplitude: f64, period: f64, dt: f64, steps: usize) -> Vec<f64> {
    let period_steps = ((period / dt).round() as usize).max(2);
    let half = period_steps / 2;
    (0..steps)
        .map(|k| {
            if (k % period_steps) < half {
                amplitude
            } else {
                -amplitude
            }
        })
        .collect()
}

/// Result of an open-loop prediction comparison.
#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// RK4 ground truth, `steps + 1` samples.
    pub truth: Vec<f64>,
    /// Lifted-model rollout under the identical input.
    pub predicted: Vec<f64>,
    pub rmse: f64,
}

/// Simulates the plant and the lifted model under the same input signal from
/// the same initial state. `duration` must be an integer multiple of `dt`.
pub fn run_prediction_experiment(
    params: &PlantParams,
    model: &LiftedModel,
    v0: f64,
    inputs: &[f64],
    dt: f64,
) -> Result<PredictionResult> {
    if inputs.is_empty() {
        return Ok(PredictionResult {
            truth: vec![v0],
            predicted: vec![v0],
            rmse: 0.0,
        });
    }
    let truth = params.simulate(v0, inputs, dt, IntegrationMethod::Rk4)?;
    let predicted: Vec<f64> = model
        .predict_trajectory(&DVector::from_element(1, v0), inputs)?
        .iter()
        .map(|p| p[0])
        .collect();
    let rmse = prediction_rmse(model, params, v0, inputs, dt)?;
    Ok(PredictionResult {
        truth,
        predicted,
        rmse,
    })
}

/// Builds the input sequence for a prediction run of `duration` seconds.
pub fn prediction_steps(duration: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) || duration < 0.0 {
        return Err(Error::InvalidParameter(
            "prediction: bad duration or dt".into(),
        ));
    }
    let steps = (duration / dt).round();
    if (steps * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::InvalidParameter(
            "prediction: duration must be a multiple of dt".into(),
        ));
    }
    Ok(steps as usize)
}

/// One recorded control step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Measured state before applying the input.
    pub v: f64,
    /// Applied input.
    pub u: f64,
    /// Applied increment `u − u_prev`.
    pub du: f64,
    /// Reference at `t`.
    pub y_r: f64,
    /// Realized stage cost `q_u (v − y_r)² + r Δu²`.
    pub cost: f64,
    /// Bit 0: state-box feasibility fallback was taken.
    pub flags: u32,
}

pub const FLAG_FALLBACK: u32 = 1;

/// Closed-loop record with the constraint configuration it ran under.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub dt: f64,
    /// MPC horizon; the controller previews this many future reference
    /// samples, which matters when interpreting per-segment metrics.
    pub preview_steps: usize,
    pub u_bounds: (f64, f64),
    pub du_bounds: (f64, f64),
    pub x_bounds: (f64, f64),
    pub rows: Vec<TraceRow>,
}

impl ClosedLoopTrace {
    /// Writes the `t,v,u,du,y_r,cost,flags` CSV.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,v,u,du,y_r,cost,flags")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.t, r.v, r.u, r.du, r.y_r, r.cost, r.flags
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the receding-horizon loop for `duration` seconds at period `dt`:
/// measure, solve, apply the first increment, advance the plant one RK4 step.
/// The reference window passed to the controller previews the true future
/// reference over the horizon.
pub fn run_tracking_experiment(
    params: &PlantParams,
    controller: &mut ControllerState,
    reference: &ReferenceSignal,
    duration: f64,
    dt: f64,
    v0: f64,
) -> Result<ClosedLoopTrace> {
    if !(dt.is_finite() && dt > 0.0) || !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidParameter(
            "tracking: bad duration or dt".into(),
        ));
    }
    if !v0.is_finite() {
        return Err(Error::NonFinite("tracking: v0".into()));
    }
    let steps = (duration / dt).round() as usize;
    let nh = controller.config().horizon;
    let q_u = controller.config().q_u[(0, 0)];
    let r_w = controller.config().r;
    let config = controller.config().clone();

    let mut rows = Vec::with_capacity(steps);
    let mut v = v0;
    let mut window = Vec::with_capacity(nh + 1);
    for k in 0..steps {
        let t = k as f64 * dt;
        if !v.is_finite() {
            return Err(Error::LoopAborted {
                step: k,
                message: "plant state became non-finite".into(),
            });
        }
        window.clear();
        for j in 0..=nh {
            window.push(DVector::from_element(
                1,
                reference.sample(t + j as f64 * dt),
            ));
        }
        let u_before = controller.u_prev();
        let (u, info) = controller
            .step(&DVector::from_element(1, v), &window)
            .map_err(|e| Error::LoopAborted {
                step: k,
                message: e.to_string(),
            })?;
        let y_r = window[0][0];
        let du = u - u_before;
        rows.push(TraceRow {
            t,
            v,
            u,
            du,
            y_r,
            cost: q_u * (v - y_r).powi(2) + r_w * du * du,
            flags: if info.fallback { FLAG_FALLBACK } else { 0 },
        });
        v = params.rk4_step(v, u, dt);
    }
    Ok(ClosedLoopTrace {
        dt,
        preview_steps: nh,
        u_bounds: (config.u_min, config.u_max),
        du_bounds: (config.du_min, config.du_max),
        x_bounds: (config.x_min[0], config.x_max[0]),
        rows,
    })
}

/// Per-segment tracking summary. A segment is a maximal run of constant
/// reference. Metrics are evaluated on the segment minus its trailing
/// `preview_steps` samples, because inside that tail the controller already
/// anticipates the next reference level and deliberately leaves the current
/// one; steady-state quantities are undefined there.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SegmentMetrics {
    pub start_time: f64,
    pub duration: f64,
    pub reference: f64,
    /// |reference − previous level| (previous measured state for the first
    /// segment).
    pub step_magnitude: f64,
    /// First time `|v − y_r|` drops below 2 % of the step magnitude and stays
    /// below for the rest of the evaluation window, relative to segment
    /// start. `None` if that never happens (or the step magnitude is zero).
    pub settling_time: Option<f64>,
    /// |mean(v − y_r)| over the trailing second of the evaluation window.
    pub steady_state_error: f64,
}

/// Whole-trace summary produced by [`trace_metrics`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceMetrics {
    pub max_abs_u: f64,
    pub max_abs_du: f64,
    /// Steps whose input, increment, or state violate the configured boxes
    /// by more than 1e-6.
    pub violations: usize,
    pub total_cost: f64,
    pub fallback_steps: usize,
    pub segments: Vec<SegmentMetrics>,
}

const VIOLATION_TOL: f64 = 1e-6;

/// Scans a closed-loop trace for constraint violations and per-segment
/// settling/steady-state behaviour.
pub fn trace_metrics(trace: &ClosedLoopTrace) -> TraceMetrics {
    let rows = &trace.rows;
    let mut max_abs_u = 0.0_f64;
    let mut max_abs_du = 0.0_f64;
    let mut violations = 0usize;
    let mut total_cost = 0.0;
    let mut fallback_steps = 0usize;
    for r in rows {
        max_abs_u = max_abs_u.max(r.u.abs());
        max_abs_du = max_abs_du.max(r.du.abs());
        total_cost += r.cost;
        if r.flags & FLAG_FALLBACK != 0 {
            fallback_steps += 1;
        }
        let (u_lo, u_hi) = trace.u_bounds;
        let (du_lo, du_hi) = trace.du_bounds;
        let (x_lo, x_hi) = trace.x_bounds;
        if r.u > u_hi + VIOLATION_TOL
            || r.u < u_lo - VIOLATION_TOL
            || r.du > du_hi + VIOLATION_TOL
            || r.du < du_lo - VIOLATION_TOL
            || r.v > x_hi + VIOLATION_TOL
            || r.v < x_lo - VIOLATION_TOL
        {
            violations += 1;
        }
    }

    // segment boundaries from the recorded reference series
    let mut segments = Vec::new();
    let mut start = 0usize;
    while start < rows.len() {
        let level = rows[start].y_r;
        let mut end = start + 1;
        while end < rows.len() && rows[end].y_r == level {
            end += 1;
        }
        let previous_level = if start == 0 {
            rows[0].v
        } else {
            rows[start - 1].y_r
        };
        let step_magnitude = (level - previous_level).abs();

        // exclude the preview tail unless this is the final segment
        let eval_end = if end == rows.len() {
            end
        } else {
            end.saturating_sub(trace.preview_steps).max(start + 1)
        };
        let window = &rows[start..eval_end];

        let settling_time = if step_magnitude > 0.0 {
            let band = 0.02 * step_magnitude;
            window
                .iter()
                .position(|r| (r.v - level).abs() < band)
                .filter(|&idx| window[idx..].iter().all(|r| (r.v - level).abs() < band))
                .map(|idx| window[idx].t - rows[start].t)
        } else {
            None
        };

        let tail_len = ((1.0 / trace.dt).round() as usize).clamp(1, window.len());
        let tail = &window[window.len() - tail_len..];
        let steady_state_error =
            (tail.iter().map(|r| r.v - level).sum::<f64>() / tail.len() as f64).abs();

        segments.push(SegmentMetrics {
            start_time: rows[start].t,
            duration: (end - start) as f64 * trace.dt,
            reference: level,
            step_magnitude,
            settling_time,
            steady_state_error,
        });
        start = end;
    }

    TraceMetrics {
        max_abs_u,
        max_abs_du,
        violations,
        total_cost,
        fallback_steps,
        segments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edmd::{collect_dataset, fit, CollectOptions};
    use crate::lifting::Dictionary;
    use crate::mpc::MpcConfig;
    use approx::assert_relative_eq;

    fn default_plant() -> PlantParams {
        PlantParams::default()
    }

    fn quick_model() -> LiftedModel {
        let opts = CollectOptions {
            n_traj: 60,
            steps_per_traj: 100,
            seed: 5,
            ..CollectOptions::default()
        };
        let data = collect_dataset(&default_plant(), &opts).unwrap();
        let dict = Dictionary::new(1, 4, -1.0, 1.0, 7).unwrap();
        fit(&data, &dict, 1e-6).unwrap()
    }

    #[test]
    fn reference_sampling_left_closed() {
        let r = ReferenceSignal::default_profile();
        assert_eq!(r.sample(0.0), 0.2);
        assert_eq!(r.sample(2.999), 0.2);
        assert_eq!(r.sample(3.0), 0.5);
        assert_eq!(r.sample(8.999), -0.2);
        assert_eq!(r.sample(9.0), 0.0);
        assert_eq!(r.sample(100.0), 0.0);
        // rounding fuzz right at a breakpoint
        assert_eq!(r.sample(3.0 - 1e-12), 0.5);
    }

    #[test]
    fn reference_validation() {
        assert!(ReferenceSignal::new(vec![]).is_err());
        assert!(ReferenceSignal::new(vec![(1.0, 0.2)]).is_err());
        assert!(ReferenceSignal::new(vec![(0.0, 0.2), (0.0, 0.3)]).is_err());
        assert!(ReferenceSignal::new(vec![(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn square_wave_phase_and_period() {
        let w = square_wave_inputs(40.0, 0.1, 0.01, 25);
        assert_eq!(&w[0..5], &[40.0; 5]);
        assert_eq!(&w[5..10], &[-40.0; 5]);
        assert_eq!(&w[10..15], &[40.0; 5]);
        assert_eq!(&w[15..20], &[-40.0; 5]);
        assert_eq!(w[24], 40.0);
    }

    #[test]
    fn prediction_experiment_default_shape() {
        let model = quick_model();
        let inputs = square_wave_inputs(40.0, 0.1, 0.01, 100);
        let res = run_prediction_experiment(&default_plant(), &model, 0.0, &inputs, 0.01).unwrap();
        assert_eq!(res.truth.len(), 101);
        assert_eq!(res.predicted.len(), 101);
        assert_eq!(res.predicted[0], 0.0);
        assert!(res.rmse.is_finite() && res.rmse > 0.0);
        // the truth series is exactly the plant's own rollout
        let direct = default_plant()
            .simulate(0.0, &inputs, 0.01, IntegrationMethod::Rk4)
            .unwrap();
        assert_eq!(res.truth, direct);
    }

    #[test]
    fn prediction_experiment_zero_input_zero_rmse() {
        // fitted models only pin the origin to regression accuracy
        let model = quick_model();
        let res =
            run_prediction_experiment(&default_plant(), &model, 0.0, &[0.0; 40], 0.01).unwrap();
        assert!(res.rmse < 5e-3, "fixed-point drift too large: {}", res.rmse);
        let empty = run_prediction_experiment(&default_plant(), &model, 0.3, &[], 0.01).unwrap();
        assert_eq!(empty.truth, vec![0.3]);
        assert_eq!(empty.rmse, 0.0);
    }

    #[test]
    fn prediction_steps_multiple_check() {
        assert_eq!(prediction_steps(1.0, 0.01).unwrap(), 100);
        assert_eq!(prediction_steps(0.0, 0.01).unwrap(), 0);
        assert!(prediction_steps(1.0, 0.013).is_err());
    }

    #[test]
    fn tracking_zero_reference_stays_flat() {
        // the fitted model pins the origin only to regression accuracy, so
        // the loop jitters at the solver/fit noise floor rather than exactly 0
        let model = quick_model();
        let reference = ReferenceSignal::new(vec![(0.0, 0.0)]).unwrap();
        let mut controller = ControllerState::new(model, MpcConfig::matlab(), 0.0).unwrap();
        let trace = run_tracking_experiment(
            &default_plant(),
            &mut controller,
            &reference,
            1.0,
            0.01,
            0.0,
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 100);
        for r in &trace.rows {
            assert!(r.v.abs() < 1e-6, "v drifted to {}", r.v);
            assert!(r.u.abs() < 0.1, "u drifted to {}", r.u);
        }
        let metrics = trace_metrics(&trace);
        assert_eq!(metrics.violations, 0);
        assert!(metrics.total_cost < 1e-3);
    }

    #[test]
    fn tracking_respects_constraint_boxes() {
        let model = quick_model();
        let reference = ReferenceSignal::default_profile();
        let mut controller = ControllerState::new(model, MpcConfig::matlab(), 0.0).unwrap();
        let trace = run_tracking_experiment(
            &default_plant(),
            &mut controller,
            &reference,
            12.0,
            0.01,
            0.0,
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 1200);
        let metrics = trace_metrics(&trace);
        assert!(
            metrics.max_abs_u <= 50.0 + 1e-6,
            "max|u| = {}",
            metrics.max_abs_u
        );
        assert!(
            metrics.max_abs_du <= 20.0 + 1e-6,
            "max|du| = {}",
            metrics.max_abs_du
        );
        assert_eq!(metrics.violations, 0);
        assert_eq!(metrics.segments.len(), 4);
    }

    #[test]
    fn trace_time_and_length_invariants() {
        let model = quick_model();
        let reference = ReferenceSignal::default_profile();
        let mut controller = ControllerState::new(model, MpcConfig::matlab(), 0.0).unwrap();
        let trace = run_tracking_experiment(
            &default_plant(),
            &mut controller,
            &reference,
            2.0,
            0.01,
            0.1,
        )
        .unwrap();
        for (k, r) in trace.rows.iter().enumerate() {
            assert_relative_eq!(r.t, k as f64 * 0.01, epsilon = 1e-12);
        }
        assert_eq!(trace.rows[0].v, 0.1);
    }

    fn synthetic_trace(u: &[f64], du_bound: f64) -> ClosedLoopTrace {
        let mut rows = Vec::new();
        let mut prev = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            rows.push(TraceRow {
                t: k as f64,
                v: 0.0,
                u: uk,
                du: uk - prev,
                y_r: 0.0,
                cost: 0.0,
                flags: 0,
            });
            prev = uk;
        }
        ClosedLoopTrace {
            dt: 1.0,
            preview_steps: 0,
            u_bounds: (-100.0, 100.0),
            du_bounds: (-du_bound, du_bound),
            x_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            rows,
        }
    }

    #[test]
    fn metrics_on_hand_built_trace() {
        let trace = synthetic_trace(&[0.0, 15.0, 40.0], 20.0);
        let m = trace_metrics(&trace);
        assert_eq!(m.max_abs_du, 25.0);
        assert_eq!(m.max_abs_u, 40.0);
        assert_eq!(m.violations, 1);
    }

    #[test]
    fn metrics_all_zero_trace() {
        let trace = synthetic_trace(&[0.0, 0.0, 0.0], 20.0);
        let m = trace_metrics(&trace);
        assert_eq!(m.max_abs_u, 0.0);
        assert_eq!(m.max_abs_du, 0.0);
        assert_eq!(m.violations, 0);
        assert_eq!(m.total_cost, 0.0);
        assert_eq!(m.segments.len(), 1);
        assert_eq!(m.segments[0].step_magnitude, 0.0);
        assert_eq!(m.segments[0].steady_state_error, 0.0);
    }

    #[test]
    fn segment_metrics_exclude_preview_tail() {
        // reference switches at t = 10; controller "anticipates" from t = 8
        let mut rows = Vec::new();
        for k in 0..20 {
            let y_r = if k < 10 { 1.0 } else { 2.0 };
            // v tracks 1.0 perfectly, then ramps early toward 2.0 in the
            // preview window (k = 8, 9), then tracks 2.0
            let v = match k {
                0..=7 => 1.0,
                8 => 1.5,
                9 => 1.9,
                _ => 2.0,
            };
            rows.push(TraceRow {
                t: k as f64,
                v,
                u: 0.0,
                du: 0.0,
                y_r,
                cost: 0.0,
                flags: 0,
            });
        }
        let trace = ClosedLoopTrace {
            dt: 1.0,
            preview_steps: 2,
            u_bounds: (-1.0, 1.0),
            du_bounds: (-1.0, 1.0),
            x_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            rows,
        };
        let m = trace_metrics(&trace);
        assert_eq!(m.segments.len(), 2);
        // evaluation window of the first segment stops at k = 8, so the ramp
        // toward the next level does not count as steady-state error
        assert!(m.segments[0].steady_state_error < 1e-12);
        assert_eq!(m.segments[1].steady_state_error, 0.0);
    }

    #[test]
    fn trace_csv_roundtrip_bytes() {
        let model = quick_model();
        let reference = ReferenceSignal::default_profile();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        for p in [&p1, &p2] {
            let mut controller =
                ControllerState::new(model.clone(), MpcConfig::matlab(), 0.0).unwrap();
            let trace = run_tracking_experiment(
                &default_plant(),
                &mut controller,
                &reference,
                1.0,
                0.01,
                0.0,
            )
            .unwrap();
            trace.write_csv(p).unwrap();
        }
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.starts_with("t,v,u,du,y_r,cost,flags\n"));
    }
}
