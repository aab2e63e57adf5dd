//! Dense dual active-set solver for strictly convex quadratic programs with
//! two-sided linear inequality constraints.
//!
//! Problems have the shape
//!
//! ```text
//! min  ½ dᵀH d + gᵀd + c     s.t.   lb ≤ M d ≤ ub
//! ```
//!
//! with `H` symmetric positive definite. The solver starts from the
//! unconstrained minimizer and adds violated constraints one at a time while
//! keeping the multipliers dual-feasible, so no feasible starting point is
//! needed and an empty feasible set is detected exactly. Problem sizes here
//! are tiny (the decision vector is the Δu sequence over the MPC horizon), so
//! every subproblem is solved by dense factorization from scratch.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A condensed QP over the increment sequence, plus labeled constraint rows.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    /// Symmetric positive definite Hessian.
    pub hessian: DMatrix<f64>,
    /// Linear term.
    pub gradient: DVector<f64>,
    /// Constant term; carried so objective values are the full cost.
    pub constant: f64,
    /// Constraint rows `M` (one per two-sided constraint).
    pub rows: DMatrix<f64>,
    /// Per-row lower bounds; `-inf` disables a side.
    pub lower: DVector<f64>,
    /// Per-row upper bounds; `+inf` disables a side.
    pub upper: DVector<f64>,
    /// Human-readable row labels used in infeasibility reports.
    pub labels: Vec<String>,
}

/// One-sided form `normal·d ≤ bound` of a row side.
#[derive(Debug, Clone)]
pub struct OneSided {
    pub normal: DVector<f64>,
    pub bound: f64,
    pub label: String,
}

#[derive(Debug, Clone, Default)]
pub struct QpDiagnostics {
    /// Active-set changes performed.
    pub iterations: usize,
    /// Constraints active at the solution.
    pub active_constraints: usize,
    /// ‖H d + g + Σ λᵢ nᵢ‖∞ at the solution.
    pub stationarity: f64,
    /// Largest constraint violation at the solution.
    pub primal_violation: f64,
    /// Largest λᵢ·|nᵢ·d − bᵢ| at the solution.
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub solution: DVector<f64>,
    pub objective: f64,
    pub diagnostics: QpDiagnostics,
}

impl CondensedQp {
    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    /// Full objective `½dᵀHd + gᵀd + constant`.
    pub fn objective(&self, d: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * d).dot(d) + self.gradient.dot(d) + self.constant
    }

    /// Expands the two-sided rows into one-sided constraints, skipping
    /// infinite sides. Zero rows are kept so that contradictory bounds on
    /// them surface as infeasibility.
    pub fn one_sided_constraints(&self) -> Vec<OneSided> {
        let mut out = Vec::new();
        for i in 0..self.num_rows() {
            let row = self.rows.row(i).transpose();
            if self.upper[i].is_finite() {
                out.push(OneSided {
                    normal: row.clone(),
                    bound: self.upper[i],
                    label: format!("{} upper", self.labels[i]),
                });
            }
            if self.lower[i].is_finite() {
                out.push(OneSided {
                    normal: -&row,
                    bound: -self.lower[i],
                    label: format!("{} lower", self.labels[i]),
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let nv = self.num_vars();
        if self.hessian.nrows() != nv || self.hessian.ncols() != nv {
            return Err(Error::DimensionMismatch {
                context: "qp hessian",
                expected: nv,
                got: self.hessian.nrows(),
            });
        }
        if self.rows.ncols() != nv && self.num_rows() > 0 {
            return Err(Error::DimensionMismatch {
                context: "qp constraint rows",
                expected: nv,
                got: self.rows.ncols(),
            });
        }
        if self.lower.len() != self.num_rows() || self.upper.len() != self.num_rows() {
            return Err(Error::DimensionMismatch {
                context: "qp bounds",
                expected: self.num_rows(),
                got: self.lower.len().min(self.upper.len()),
            });
        }
        for i in 0..self.num_rows() {
            if self.lower[i] > self.upper[i] {
                return Err(Error::QpInfeasible {
                    violated: vec![format!("{}: lower > upper", self.labels[i])],
                });
            }
        }
        Ok(())
    }
}

/// Solves the QP to the given tolerance. On success every constraint holds to
/// within `tol` and the KKT stationarity/complementarity residuals are
/// reported in the diagnostics. An empty feasible set yields
/// [`Error::QpInfeasible`] naming the conflicting constraints.
pub fn solve_qp(qp: &CondensedQp, tol: f64) -> Result<QpSolution> {
    qp.validate()?;
    let nv = qp.num_vars();
    let constraints = qp.one_sided_constraints();
    let chol = qp
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("qp hessian is not positive definite".into()))?;

    // unconstrained minimizer
    let mut d = chol.solve(&(-&qp.gradient));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let max_iterations = 20 * (nv + constraints.len()) + 100;

    'outer: loop {
        // most violated inactive constraint
        let mut worst: Option<(usize, f64)> = None;
        for (i, c) in constraints.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let violation = c.normal.dot(&d) - c.bound;
            if violation > tol && worst.is_none_or(|(_, w)| violation > w) {
                worst = Some((i, violation));
            }
        }
        let Some((p, _)) = worst else {
            break 'outer;
        };
        let n_p = &constraints[p].normal;
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::Numerical(format!(
                    "qp solver exceeded {max_iterations} active-set iterations"
                )));
            }

            // primal direction z and dual direction r for increasing λ_p
            let h_inv_np = chol.solve(n_p);
            let (z, r) = if active.is_empty() {
                (h_inv_np.clone(), DVector::zeros(0))
            } else {
                let n_mat = DMatrix::from_columns(
                    &active
                        .iter()
                        .map(|&j| constraints[j].normal.clone())
                        .collect::<Vec<_>>(),
                );
                let h_inv_n = chol.solve(&n_mat);
                let schur = n_mat.transpose() * &h_inv_n;
                let rhs = n_mat.transpose() * &h_inv_np;
                let r = schur
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .or_else(|| schur.lu().solve(&rhs))
                    .ok_or_else(|| Error::Numerical("qp working-set system is singular".into()))?;
                (&h_inv_np - &h_inv_n * &r, r)
            };

            let violation = n_p.dot(&d) - constraints[p].bound;
            if violation <= tol {
                // satisfied by earlier partial steps; keep any multiplier
                // already accumulated for p so stationarity stays exact
                if lambda_p > 0.0 {
                    active.push(p);
                    lambda.push(lambda_p);
                }
                break;
            }
            let npz = n_p.dot(&z);
            let dependent = npz <= 1e-12 * n_p.dot(&h_inv_np).max(f64::MIN_POSITIVE);

            // t2: full step making constraint p active
            let t2 = if dependent {
                f64::INFINITY
            } else {
                violation / npz
            };
            // t1: first active multiplier driven to zero
            let mut t1 = f64::INFINITY;
            let mut blocking = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let step = lambda[idx] / rj;
                    if step < t1 {
                        t1 = step;
                        blocking = Some(idx);
                    }
                }
            }

            let t = t1.min(t2);
            if !t.is_finite() {
                let mut violated: Vec<String> = active
                    .iter()
                    .map(|&j| constraints[j].label.clone())
                    .collect();
                violated.push(constraints[p].label.clone());
                return Err(Error::QpInfeasible { violated });
            }

            if !dependent {
                d -= &z * t;
            }
            for (idx, &rj) in r.iter().enumerate() {
                lambda[idx] -= t * rj;
            }
            lambda_p += t;

            if t2 <= t1 {
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            // partial step: drop the blocking constraint, keep resolving p
            let idx = blocking.expect("finite t1 implies a blocking index");
            active.remove(idx);
            lambda.remove(idx);
        }
    }

    // KKT residuals at the solution
    let mut stationarity_vec = &qp.hessian * &d + &qp.gradient;
    for (&j, &lam) in active.iter().zip(&lambda) {
        stationarity_vec += &constraints[j].normal * lam;
    }
    let mut primal_violation = 0.0_f64;
    for c in &constraints {
        primal_violation = primal_violation.max(c.normal.dot(&d) - c.bound);
    }
    let mut complementarity = 0.0_f64;
    for (&j, &lam) in active.iter().zip(&lambda) {
        let slack = constraints[j].normal.dot(&d) - constraints[j].bound;
        complementarity = complementarity.max((lam * slack).abs());
    }

    Ok(QpSolution {
        objective: qp.objective(&d),
        solution: d,
        diagnostics: QpDiagnostics {
            iterations,
            active_constraints: active.len(),
            stationarity: stationarity_vec.amax(),
            primal_violation: primal_violation.max(0.0),
            complementarity,
        },
    })
}
