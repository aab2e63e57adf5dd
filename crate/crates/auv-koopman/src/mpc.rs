//! Δu-augmented model-predictive control on the lifted linear predictor.
//!
//! The lifted state is extended with the previously applied input,
//! `z̄ = [z; u⁻]`, so the decision variables become input increments and both
//! the input and its rate of change can be box-constrained:
//!
//! ```text
//! z̄⁺ = Ā z̄ + B̄ Δu,   Ā = [A B; 0 I],   B̄ = [B; I],   x̂ = [C 0] z̄
//! ```
//!
//! The finite-horizon tracking problem is condensed onto the increment
//! sequence `(Δu₀, …, Δu_{Nh−1})`, giving a strictly convex QP whose size is
//! independent of the lifted dimension. Only the first increment of each
//! optimal plan is applied.

use nalgebra::{DMatrix, DVector};

use crate::edmd::LiftedModel;
use crate::error::{Error, Result};
use crate::qp::{solve_qp, CondensedQp, QpDiagnostics};

/// Lifted model augmented with the previous input (single input, p = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    /// `[A B; 0 1]`, size (N+1)×(N+1).
    pub a_bar: DMatrix<f64>,
    /// `[B; 1]`, size (N+1)×1.
    pub b_bar: DMatrix<f64>,
    /// `[C, 0]`, size n×(N+1).
    pub c_bar: DMatrix<f64>,
}

/// Builds the Δu augmentation of a lifted model.
pub fn augment(model: &LiftedModel) -> AugmentedModel {
    let n_lift = model.lifted_dim();
    let n = model.state_dim();
    let mut a_bar = DMatrix::zeros(n_lift + 1, n_lift + 1);
    a_bar.view_mut((0, 0), (n_lift, n_lift)).copy_from(&model.a);
    a_bar.view_mut((0, n_lift), (n_lift, 1)).copy_from(&model.b);
    a_bar[(n_lift, n_lift)] = 1.0;

    let mut b_bar = DMatrix::zeros(n_lift + 1, 1);
    b_bar.view_mut((0, 0), (n_lift, 1)).copy_from(&model.b);
    b_bar[(n_lift, 0)] = 1.0;

    let mut c_bar = DMatrix::zeros(n, n_lift + 1);
    c_bar.view_mut((0, 0), (n, n_lift)).copy_from(&model.c);

    AugmentedModel {
        a_bar,
        b_bar,
        c_bar,
    }
}

/// Weights, horizon, and box constraints of the tracking MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Stage output weight, n×n, positive semidefinite.
    pub q_u: DMatrix<f64>,
    /// Terminal output weight, n×n, positive semidefinite.
    pub q_n: DMatrix<f64>,
    /// Increment weight, positive (p = 1).
    pub r: f64,
    /// Prediction horizon Nh ≥ 1.
    pub horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub du_min: f64,
    pub du_max: f64,
    /// Output box; entries may be ±∞ to disable a side.
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
}

impl MpcConfig {
    /// Scalar-output configuration (n = 1).
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        q_u: f64,
        q_n: f64,
        r: f64,
        horizon: usize,
        u_min: f64,
        u_max: f64,
        du_min: f64,
        du_max: f64,
        x_min: f64,
        x_max: f64,
    ) -> Self {
        MpcConfig {
            q_u: DMatrix::from_element(1, 1, q_u),
            q_n: DMatrix::from_element(1, 1, q_n),
            r,
            horizon,
            u_min,
            u_max,
            du_min,
            du_max,
            x_min: DVector::from_element(1, x_min),
            x_max: DVector::from_element(1, x_max),
        }
    }

    /// Desk-simulation preset: Q_u = Q_N = 2000, R = 0.01, Nh = 10,
    /// u ∈ [−50, 50], Δu ∈ [−20, 20], output unconstrained.
    pub fn matlab() -> Self {
        MpcConfig::scalar(
            2000.0,
            2000.0,
            0.01,
            10,
            -50.0,
            50.0,
            -20.0,
            20.0,
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
    }

    /// External-platform preset: same weights and horizon with
    /// u ∈ [−150, 150] and Δu ∈ [−50, 50] at a 10 Hz loop rate.
    pub fn gazebo() -> Self {
        MpcConfig::scalar(
            2000.0,
            2000.0,
            0.01,
            10,
            -150.0,
            150.0,
            -50.0,
            50.0,
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let check_weight = |m: &DMatrix<f64>, name: &str| -> Result<()> {
            if m.nrows() != state_dim || m.ncols() != state_dim {
                return Err(Error::DimensionMismatch {
                    context: "mpc weight",
                    expected: state_dim,
                    got: m.nrows(),
                });
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
            }
            let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * m.amax().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive semidefinite"
                )));
            }
            Ok(())
        };
        check_weight(&self.q_u, "q_u")?;
        check_weight(&self.q_n, "q_n")?;
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::InvalidParameter("r must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        let ordered = |lo: f64, hi: f64| lo < hi; // false for NaN pairs too
        if !ordered(self.u_min, self.u_max) || !ordered(self.du_min, self.du_max) {
            return Err(Error::InvalidParameter(
                "require u_min < u_max and du_min < du_max".into(),
            ));
        }
        if self.x_min.len() != state_dim || self.x_max.len() != state_dim {
            return Err(Error::DimensionMismatch {
                context: "mpc state bounds",
                expected: state_dim,
                got: self.x_min.len(),
            });
        }
        for i in 0..state_dim {
            if !ordered(self.x_min[i], self.x_max[i]) {
                return Err(Error::InvalidParameter(
                    "require x_min < x_max componentwise".into(),
                ));
            }
        }
        Ok(())
    }

    fn has_state_bounds(&self) -> bool {
        self.x_min.iter().any(|v| v.is_finite()) || self.x_max.iter().any(|v| v.is_finite())
    }
}

/// Per-step solver report.
#[derive(Debug, Clone)]
pub struct StepInfo {
    /// Increment actually applied, `u − u_prev`.
    pub delta_u: f64,
    /// Optimal objective of the solved QP.
    pub objective: f64,
    /// True when the output boxes had to be dropped to restore feasibility.
    pub fallback: bool,
    pub diagnostics: QpDiagnostics,
}

/// Receding-horizon controller state: the fitted model, its augmentation,
/// the configuration, and the last applied input.
#[derive(Debug, Clone)]
pub struct ControllerState {
    model: LiftedModel,
    aug: AugmentedModel,
    config: MpcConfig,
    u_prev: f64,
}

impl ControllerState {
    pub fn new(model: LiftedModel, config: MpcConfig, u_prev: f64) -> Result<Self> {
        config.validate(model.state_dim())?;
        if model.b.ncols() != 1 {
            return Err(Error::DimensionMismatch {
                context: "controller input dimension",
                expected: 1,
                got: model.b.ncols(),
            });
        }
        if !(config.u_min..=config.u_max).contains(&u_prev) {
            return Err(Error::InvalidParameter(format!(
                "initial u_prev {u_prev} outside [{}, {}]",
                config.u_min, config.u_max
            )));
        }
        let aug = augment(&model);
        Ok(ControllerState {
            model,
            aug,
            config,
            u_prev,
        })
    }

    pub fn u_prev(&self) -> f64 {
        self.u_prev
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn model(&self) -> &LiftedModel {
        &self.model
    }

    pub fn augmented(&self) -> &AugmentedModel {
        &self.aug
    }

    /// Condenses the horizon onto the increment sequence. `ref_window` must
    /// hold exactly Nh+1 stage references (k = 0…Nh).
    pub fn build_qp(
        &self,
        x_measured: &DVector<f64>,
        ref_window: &[DVector<f64>],
    ) -> Result<CondensedQp> {
        self.build_qp_inner(x_measured, ref_window, true)
    }

    #[allow(clippy::needless_range_loop)] // matrix-block assembly reads clearer indexed
    fn build_qp_inner(
        &self,
        x_measured: &DVector<f64>,
        ref_window: &[DVector<f64>],
        include_state_boxes: bool,
    ) -> Result<CondensedQp> {
        let nh = self.config.horizon;
        let n = self.model.state_dim();
        if ref_window.len() != nh + 1 {
            return Err(Error::DimensionMismatch {
                context: "reference window",
                expected: nh + 1,
                got: ref_window.len(),
            });
        }
        for r in ref_window {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "reference point",
                    expected: n,
                    got: r.len(),
                });
            }
        }

        // z̄₀ = [φ(x); u_prev]
        let z = self.model.dictionary.lift(x_measured)?;
        let na = z.len() + 1;
        let mut zbar = DVector::zeros(na);
        zbar.rows_mut(0, z.len()).copy_from(&z);
        zbar[na - 1] = self.u_prev;

        // free response f_k = C̄ Āᵏ z̄₀ and impulse blocks P_i = C̄ Āⁱ B̄
        let mut free = Vec::with_capacity(nh + 1); // k = 0..Nh
        let mut w = zbar.clone();
        free.push(&self.aug.c_bar * &w);
        let mut impulse = Vec::with_capacity(nh); // i = 0..Nh-1
        let mut m_i = self.aug.b_bar.clone();
        for _ in 0..nh {
            impulse.push(&self.aug.c_bar * &m_i);
            m_i = &self.aug.a_bar * m_i;
            w = &self.aug.a_bar * &w;
            free.push(&self.aug.c_bar * &w);
        }

        // stacked forced response S ((Nh·n) × Nh): x̂_k = f_k + S_k Δu
        let mut s = DMatrix::zeros(nh * n, nh);
        for k in 1..=nh {
            for j in 0..k {
                s.view_mut(((k - 1) * n, j), (n, 1))
                    .copy_from(&impulse[k - 1 - j]);
            }
        }

        // block weights: stages 1..Nh-1 carry Q_u, stage Nh carries Q_N
        let mut weighted_s = DMatrix::zeros(nh * n, nh); // Q̃ S
        let mut weighted_err = DVector::zeros(nh * n); // Q̃ (f − ref)
        let mut constant = {
            let e0 = &free[0] - &ref_window[0];
            (&self.config.q_u * &e0).dot(&e0)
        };
        for k in 1..=nh {
            let q = if k == nh {
                &self.config.q_n
            } else {
                &self.config.q_u
            };
            let block = s.rows((k - 1) * n, n);
            weighted_s.rows_mut((k - 1) * n, n).copy_from(&(q * block));
            let err = &free[k] - &ref_window[k];
            weighted_err.rows_mut((k - 1) * n, n).copy_from(&(q * &err));
            constant += (q * &err).dot(&err);
        }

        // H = 2(Sᵀ Q̃ S + R I), symmetrized exactly; g = 2 Sᵀ Q̃ (f − ref)
        let mut hessian = s.transpose() * &weighted_s;
        for i in 0..nh {
            hessian[(i, i)] += self.config.r;
        }
        hessian *= 2.0;
        for i in 0..nh {
            for j in 0..i {
                let v = hessian[(j, i)];
                hessian[(i, j)] = v;
            }
        }
        let gradient = 2.0 * s.transpose() * &weighted_err;

        // constraint rows: Δu boxes, running-input boxes, output boxes
        let state_rows = if include_state_boxes && self.config.has_state_bounds() {
            nh * n
        } else {
            0
        };
        let m_rows = 2 * nh + state_rows;
        let mut rows = DMatrix::zeros(m_rows, nh);
        let mut lower = DVector::from_element(m_rows, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(m_rows, f64::INFINITY);
        let mut labels = Vec::with_capacity(m_rows);
        for k in 0..nh {
            rows[(k, k)] = 1.0;
            lower[k] = self.config.du_min;
            upper[k] = self.config.du_max;
            labels.push(format!("du[{k}]"));
        }
        for k in 0..nh {
            let r = nh + k;
            for j in 0..=k {
                rows[(r, j)] = 1.0;
            }
            lower[r] = self.config.u_min - self.u_prev;
            upper[r] = self.config.u_max - self.u_prev;
            labels.push(format!("u[{k}]"));
        }
        if state_rows > 0 {
            for k in 1..=nh {
                for i in 0..n {
                    let r = 2 * nh + (k - 1) * n + i;
                    rows.row_mut(r).copy_from(&s.row((k - 1) * n + i));
                    lower[r] = self.config.x_min[i] - free[k][i];
                    upper[r] = self.config.x_max[i] - free[k][i];
                    labels.push(format!("x[{k}][{i}]"));
                }
            }
        }

        Ok(CondensedQp {
            hessian,
            gradient,
            constant,
            rows,
            lower,
            upper,
            labels,
        })
    }

    /// One receding-horizon step: build the QP for the measured state, solve
    /// it, apply the first increment (clamped to the input box), and advance
    /// `u_prev`. If the output boxes make the QP infeasible they are dropped
    /// for this step and the step is flagged.
    ///
    /// `ref_window` may be shorter than Nh+1; the last reference is reused
    /// for the missing tail.
    pub fn step(
        &mut self,
        x_measured: &DVector<f64>,
        ref_window: &[DVector<f64>],
    ) -> Result<(f64, StepInfo)> {
        if ref_window.is_empty() {
            return Err(Error::InvalidParameter("empty reference window".into()));
        }
        let nh = self.config.horizon;
        let mut window: Vec<DVector<f64>> = ref_window.iter().take(nh + 1).cloned().collect();
        while window.len() < nh + 1 {
            window.push(window.last().expect("nonempty").clone());
        }

        const TOL: f64 = 1e-9;
        let qp = self.build_qp_inner(x_measured, &window, true)?;
        let (solution, fallback) = match solve_qp(&qp, TOL) {
            Ok(sol) => (sol, false),
            Err(Error::QpInfeasible { .. }) => {
                let relaxed = self.build_qp_inner(x_measured, &window, false)?;
                (solve_qp(&relaxed, TOL)?, true)
            }
            Err(e) => return Err(e),
        };

        let u = (self.u_prev + solution.solution[0]).clamp(self.config.u_min, self.config.u_max);
        let applied = u - self.u_prev;
        self.u_prev = u;
        Ok((
            u,
            StepInfo {
                delta_u: applied,
                objective: solution.objective,
                fallback,
                diagnostics: solution.diagnostics,
            },
        ))
    }
}
