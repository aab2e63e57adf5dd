//! Snapshot collection and the EDMD regression for the lifted predictor.
//!
//! The dataset is a set of scalar snapshot triplets `(x_k, u_k, y_k)` with
//! `y_k` the one-step successor of `x_k` under input `u_k`. Triplets need not
//! be time-contiguous or come from a single trajectory. Fitting lifts both
//! sides through the dictionary and solves
//!
//! ```text
//! min_{A,B} ‖Ȳ − A X̄ − B U‖_F² + α ‖[A, B]‖_F²
//! ```
//!
//! in closed form through the Gram matrices `Ȳ Gᵀ` and `G Gᵀ` with
//! `G = [X̄; U]`, so the solve cost is independent of the number of snapshots.
//!
//! Both collection and the Gram assembly process fixed-size chunks whose
//! partial sums are combined in chunk order, so parallel and sequential
//! builds produce bit-identical results.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::Dictionary;
use crate::plant::PlantParams;

/// Columns of snapshot data: `x[k]` evolves to `y[k]` under input `u[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Sampling period the pairs were generated at (metadata).
    pub dt: f64,
}

impl Dataset {
    pub fn new(x: Vec<f64>, u: Vec<f64>, y: Vec<f64>, dt: f64) -> Result<Self> {
        if x.len() != u.len() || x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset columns",
                expected: x.len(),
                got: u.len().max(y.len()),
            });
        }
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let finite = |v: &[f64]| v.iter().all(|e| e.is_finite());
        if !(finite(&x) && finite(&u) && finite(&y)) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Dataset { x, u, y, dt })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Writes `x,u,y` rows in plain decimal notation (shortest round-trip
    /// form, no exponents), one snapshot per row.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,u,y")?;
        for k in 0..self.len() {
            writeln!(w, "{},{},{}", self.x[k], self.u[k], self.y[k])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `x,u,y` CSV written by [`Dataset::write_csv`] (or any external
    /// logger using the same layout). `dt` is supplied by the caller since the
    /// file does not carry it.
    pub fn read_csv<P: AsRef<Path>>(path: P, dt: f64) -> Result<Self> {
        let display = path.as_ref().display().to_string();
        let reader = BufReader::new(File::open(&path)?);
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "x,u,y" {
            return Err(Error::CsvParse {
                path: display,
                line: 1,
                message: format!("expected header 'x,u,y', got '{}'", header.trim()),
            });
        }
        let (mut x, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::CsvParse {
                    path: display,
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let mut parsed = [0.0_f64; 3];
            for (slot, field) in parsed.iter_mut().zip(&fields) {
                *slot = field.trim().parse().map_err(|e| Error::CsvParse {
                    path: display.clone(),
                    line: line_no,
                    message: format!("bad float '{}': {e}", field.trim()),
                })?;
            }
            x.push(parsed[0]);
            u.push(parsed[1]);
            y.push(parsed[2]);
        }
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Dataset::new(x, u, y, dt)
    }
}

/// Settings for simulated data collection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectOptions {
    pub n_traj: usize,
    pub steps_per_traj: usize,
    pub dt: f64,
    pub input_low: f64,
    pub input_high: f64,
    pub v0_low: f64,
    pub v0_high: f64,
    pub seed: u64,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            n_traj: 1000,
            steps_per_traj: 100,
            dt: 0.01,
            input_low: -50.0,
            input_high: 50.0,
            v0_low: -0.5,
            v0_high: 0.5,
            seed: 6,
        }
    }
}

impl CollectOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.steps_per_traj == 0 {
            return Err(Error::InvalidParameter(
                "collect: n_traj and steps_per_traj must be >= 1".into(),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(
                "collect: dt must be positive".into(),
            ));
        }
        if self.input_low > self.input_high || self.v0_low > self.v0_high {
            return Err(Error::InvalidParameter(
                "collect: empty sampling range".into(),
            ));
        }
        Ok(())
    }
}

/// One trajectory's snapshot triplets. The RNG stream is derived from
/// `(seed, trajectory index)` so the result does not depend on scheduling.
fn simulate_trajectory(
    params: &PlantParams,
    opts: &CollectOptions,
    traj: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(traj as u64);
    let mut v = rng.random_range(opts.v0_low..=opts.v0_high);
    let mut triplets = Vec::with_capacity(opts.steps_per_traj);
    for step in 0..opts.steps_per_traj {
        let u = rng.random_range(opts.input_low..=opts.input_high);
        let next = params.rk4_step(v, u, opts.dt);
        if !next.is_finite() {
            return Err(Error::TrajectoryDiverged {
                trajectory: traj,
                step,
            });
        }
        triplets.push((v, u, next));
        v = next;
    }
    Ok(triplets)
}

/// Maps `f` over `items`, in parallel when requested and compiled in.
/// Output order always matches input order.
fn map_ordered<In, Out, F>(items: Vec<In>, parallel: bool, f: F) -> Vec<Out>
where
    In: Send,
    Out: Send,
    F: Fn(In) -> Out + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}

fn collect_impl(params: &PlantParams, opts: &CollectOptions, parallel: bool) -> Result<Dataset> {
    params.validate()?;
    opts.validate()?;
    let per_traj = map_ordered((0..opts.n_traj).collect(), parallel, |traj| {
        simulate_trajectory(params, opts, traj)
    });
    let total = opts.n_traj * opts.steps_per_traj;
    let (mut x, mut u, mut y) = (
        Vec::with_capacity(total),
        Vec::with_capacity(total),
        Vec::with_capacity(total),
    );
    for result in per_traj {
        for (xk, uk, yk) in result? {
            x.push(xk);
            u.push(uk);
            y.push(yk);
        }
    }
    Dataset::new(x, u, y, opts.dt)
}

/// Simulates `n_traj` trajectories of `steps_per_traj` RK4 steps each, with a
/// fresh uniform input draw at every step, and records all snapshot triplets.
/// Deterministic for a fixed seed regardless of thread count.
pub fn collect_dataset(params: &PlantParams, opts: &CollectOptions) -> Result<Dataset> {
    collect_impl(params, opts, cfg!(feature = "parallel"))
}

/// Sequential variant of [`collect_dataset`]; same output bit for bit.
pub fn collect_dataset_serial(params: &PlantParams, opts: &CollectOptions) -> Result<Dataset> {
    collect_impl(params, opts, false)
}

/// The identified lifted linear predictor `z⁺ = A z + B u`, `x̂ = C z`,
/// bundled with the dictionary that defines the lifting.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub dictionary: Dictionary,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Tikhonov weight the model was fitted with.
    pub alpha: f64,
    /// `(1/L)·‖Ȳ − AX̄ − BU‖_F` on the training data.
    pub fit_residual: f64,
}

const GRAM_CHUNK: usize = 4096;

/// Lifts one column range of the dataset into `(Ȳ_chunk, G_chunk)`.
fn lift_chunk(
    data: &Dataset,
    dict: &Dictionary,
    range: std::ops::Range<usize>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n_lift = dict.lifted_dim();
    let len = range.len();
    let mut ybar = DMatrix::zeros(n_lift, len);
    let mut g = DMatrix::zeros(n_lift + 1, len);
    let mut point = DVector::zeros(1);
    for (col, k) in range.enumerate() {
        point[0] = data.x[k];
        let zx = dict.lift(&point)?;
        point[0] = data.y[k];
        let zy = dict.lift(&point)?;
        ybar.column_mut(col).copy_from(&zy);
        g.view_mut((0, col), (n_lift, 1)).copy_from(&zx);
        g[(n_lift, col)] = data.u[k];
    }
    Ok((ybar, g))
}

fn chunk_ranges(total: usize) -> Vec<std::ops::Range<usize>> {
    (0..total.div_ceil(GRAM_CHUNK))
        .map(|i| i * GRAM_CHUNK..((i + 1) * GRAM_CHUNK).min(total))
        .collect()
}

/// Upper-triangular factor of one chunk's stacked rows `[Gᵀ | Ȳᵀ]`.
fn chunk_r_factor(
    data: &Dataset,
    dict: &Dictionary,
    range: std::ops::Range<usize>,
) -> Result<DMatrix<f64>> {
    let (ybar, g) = lift_chunk(data, dict, range)?;
    let rows = g.ncols();
    let width = g.nrows() + ybar.nrows();
    let mut stacked = DMatrix::zeros(rows, width);
    stacked
        .view_mut((0, 0), (rows, g.nrows()))
        .copy_from(&g.transpose());
    stacked
        .view_mut((0, g.nrows()), (rows, ybar.nrows()))
        .copy_from(&ybar.transpose());
    Ok(stacked.qr().r())
}

fn fit_impl(data: &Dataset, dict: &Dictionary, alpha: f64, parallel: bool) -> Result<LiftedModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dict.state_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "fit dictionary state dimension (datasets are scalar)",
            expected: 1,
            got: dict.state_dim(),
        });
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidParameter("fit: alpha must be >= 0".into()));
    }

    let n_lift = dict.lifted_dim();
    let n_cols = n_lift + 1; // G = [X̄; U], p = 1
    let width = n_cols + n_lift;

    // Square-root accumulation: QR-reduce chunks of [Gᵀ | Ȳᵀ] rows and merge
    // the triangular factors in chunk order. This carries the same
    // information as the Gram matrices ȲGᵀ and GGᵀ but at cond(G) instead of
    // cond(G)², and is deterministic regardless of thread count. The ridge
    // term enters as √α·I rows appended to Gᵀ.
    let chunk_rs = map_ordered(
        chunk_ranges(data.len()),
        parallel,
        |range| -> Result<DMatrix<f64>> { chunk_r_factor(data, dict, range) },
    );
    let mut r_total: Option<DMatrix<f64>> = None;
    for chunk in chunk_rs {
        let chunk = chunk?;
        r_total = Some(match r_total {
            None => chunk,
            Some(prev) => {
                let mut stacked = DMatrix::zeros(prev.nrows() + chunk.nrows(), width);
                stacked
                    .view_mut((0, 0), (prev.nrows(), width))
                    .copy_from(&prev);
                stacked
                    .view_mut((prev.nrows(), 0), (chunk.nrows(), width))
                    .copy_from(&chunk);
                stacked.qr().r()
            }
        });
    }
    let mut r_total = r_total.expect("nonempty dataset yields at least one chunk");
    if alpha > 0.0 {
        let sqrt_alpha = alpha.sqrt();
        let mut stacked = DMatrix::zeros(r_total.nrows() + n_cols, width);
        stacked
            .view_mut((0, 0), (r_total.nrows(), width))
            .copy_from(&r_total);
        for i in 0..n_cols {
            stacked[(r_total.nrows() + i, i)] = sqrt_alpha;
        }
        r_total = stacked.qr().r();
    }

    // min ‖[Ȳᵀ; 0] − [Gᵀ; √αI]·[A,B]ᵀ‖ decouples into R₁₁·[A,B]ᵀ = R₁₂ with
    // R_total = [R₁₁ R₁₂; 0 R₂₂]; mathematically [A,B] = ȲGᵀ(GGᵀ + αI)⁻¹.
    // Singular directions below the cutoff are dropped (pseudoinverse).
    let take = r_total.nrows().min(n_cols);
    let mut r11 = DMatrix::zeros(n_cols, n_cols);
    r11.view_mut((0, 0), (take, n_cols))
        .copy_from(&r_total.view((0, 0), (take, n_cols)));
    let mut r12 = DMatrix::zeros(n_cols, n_lift);
    r12.view_mut((0, 0), (take, n_lift))
        .copy_from(&r_total.view((0, n_cols), (take, n_lift)));

    let svd = r11.svd(true, true);
    let sigma_max = svd.singular_values.amax();
    let cutoff = n_cols as f64 * f64::EPSILON * sigma_max;
    let mut truncated = 0usize;
    let inv_sigma = DVector::from_iterator(
        svd.singular_values.len(),
        svd.singular_values.iter().map(|&s| {
            if s > cutoff {
                1.0 / s
            } else {
                truncated += 1;
                0.0
            }
        }),
    );
    if truncated > 0 {
        log::warn!(
            "fit: design matrix rank-deficient ({truncated} of {n_cols} directions truncated); \
             returning the minimum-norm pseudoinverse solution"
        );
    }
    let u_t = svd.u.as_ref().expect("svd with u").transpose();
    let v = svd.v_t.as_ref().expect("svd with v_t").transpose();
    // [A,B]ᵀ = V Σ⁺ Uᵀ R₁₂
    let ab_t = &v * DMatrix::from_diagonal(&inv_sigma) * u_t * r12;
    let ab = ab_t.transpose();
    let a = ab.columns(0, n_lift).into_owned();
    let b = ab.columns(n_lift, 1).into_owned();

    // Residual (1/L)·‖Ȳ − AX̄ − BU‖_F, second pass over the data.
    let sq_sums = map_ordered(chunk_ranges(data.len()), parallel, |range| -> Result<f64> {
        let (ybar, g) = lift_chunk(data, dict, range)?;
        Ok((&ybar - &ab * g).norm_squared())
    });
    let mut residual_sq = 0.0;
    for s in sq_sums {
        let s: f64 = s?;
        residual_sq += s;
    }

    Ok(LiftedModel {
        dictionary: dict.clone(),
        a,
        b,
        c: dict.output_matrix(),
        alpha,
        fit_residual: residual_sq.sqrt() / data.len() as f64,
    })
}

/// Solves the Tikhonov-regularized EDMD regression for `(A, B)` and assembles
/// the lifted predictor. Deterministic given `(data, dict, alpha)`.
pub fn fit(data: &Dataset, dict: &Dictionary, alpha: f64) -> Result<LiftedModel> {
    fit_impl(data, dict, alpha, cfg!(feature = "parallel"))
}

/// Sequential variant of [`fit`]; same output bit for bit.
pub fn fit_serial(data: &Dataset, dict: &Dictionary, alpha: f64) -> Result<LiftedModel> {
    fit_impl(data, dict, alpha, false)
}

impl LiftedModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Lifts `x0` once and rolls the linear dynamics forward under `inputs`,
    /// projecting every lifted state. Returns `inputs.len() + 1` points; the
    /// first equals `x0` exactly.
    pub fn predict_trajectory(
        &self,
        x0: &DVector<f64>,
        inputs: &[f64],
    ) -> Result<Vec<DVector<f64>>> {
        let mut z = self.dictionary.lift(x0)?;
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(&self.c * &z);
        for &u in inputs {
            z = &self.a * z + &self.b * u;
            out.push(&self.c * &z);
        }
        Ok(out)
    }
}

/// Root-mean-square error between the model rollout and the RK4 ground truth
/// from the same initial state under the same inputs.
pub fn prediction_rmse(
    model: &LiftedModel,
    params: &PlantParams,
    v0: f64,
    inputs: &[f64],
    dt: f64,
) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let truth = params.simulate(v0, inputs, dt, crate::plant::IntegrationMethod::Rk4)?;
    let pred = model.predict_trajectory(&DVector::from_element(1, v0), inputs)?;
    let sum_sq: f64 = truth
        .iter()
        .zip(&pred)
        .map(|(t, p)| (p[0] - t).powi(2))
        .sum();
    Ok((sum_sq / truth.len() as f64).sqrt())
}

// ---- model file ------------------------------------------------------

/// On-disk layout of a fitted model. Matrices are stored row-major;
/// round-trips preserve every f64 bit (shortest round-trip JSON numbers).
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    n_lifted: usize,
    p: usize,
    seed: u64,
    rbf_width: f64,
    centers: Vec<Vec<f64>>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    alpha: f64,
    fit_residual: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_row_major(data: &[f64], rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::ModelFormat(format!(
            "{what}: expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl LiftedModel {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = ModelFile {
            n: self.state_dim(),
            n_lifted: self.lifted_dim(),
            p: self.b.ncols(),
            seed: self.dictionary.seed(),
            rbf_width: self.dictionary.width(),
            centers: self
                .dictionary
                .centers()
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            a: row_major(&self.a),
            b: row_major(&self.b),
            c: row_major(&self.c),
            alpha: self.alpha,
            fit_residual: self.fit_residual,
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &file)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.n_lifted < file.n || file.p != 1 {
            return Err(Error::ModelFormat(format!(
                "inconsistent dimensions n={} n_lifted={} p={}",
                file.n, file.n_lifted, file.p
            )));
        }
        if file.centers.len() != file.n_lifted - file.n {
            return Err(Error::ModelFormat(format!(
                "expected {} centers, got {}",
                file.n_lifted - file.n,
                file.centers.len()
            )));
        }
        let centers = file
            .centers
            .iter()
            .map(|c| DVector::from_row_slice(c))
            .collect();
        let dictionary = Dictionary::from_parts(file.n, centers, file.rbf_width, file.seed)?;
        let a = from_row_major(&file.a, file.n_lifted, file.n_lifted, "A")?;
        let b = from_row_major(&file.b, file.n_lifted, file.p, "B")?;
        let c = from_row_major(&file.c, file.n, file.n_lifted, "C")?;
        if c != dictionary.output_matrix() {
            return Err(Error::ModelFormat(
                "C is not the identity block [I, 0]".into(),
            ));
        }
        if !(file.alpha.is_finite() && file.alpha >= 0.0) {
            return Err(Error::ModelFormat("alpha must be finite and >= 0".into()));
        }
        Ok(LiftedModel {
            dictionary,
            a,
            b,
            c,
            alpha: file.alpha,
            fit_residual: file.fit_residual,
        })
    }
}
