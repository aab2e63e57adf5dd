//! Continuous-time AUV surge dynamics with fixed-step discretization.
//!
//! The single-screw propeller thrust law
//!
//! ```text
//! T(s, Va) = T_|s|s · |s|·s + T_|s|Va · |s|·Va,      Va = (1 − ω)·v
//! ```
//!
//! drives the surge speed equation
//!
//! ```text
//! (m − X_v̇)·v̇ = X_|v|v · |v|·v + (1 − t)·T(s, v) + x_e
//! ```
//!
//! where `s` is the propeller rotational speed (the control input), `v` the
//! vehicle surge speed, and `x_e` an optional external disturbance that
//! defaults to zero. All operations here are pure; the module serves as the
//! ground-truth simulator and data source for the identification pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the surge model.
///
/// `Default` returns the values used throughout the experiments:
/// m = 146.471 kg, X_v̇ = −4.876161, X_|v|v = −6.2282, t = 0.1,
/// ρ = 1000 kg/m³, D = 0.2 m, α₁ = 0.2, α₂ = 0.1, ω = 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Vehicle mass, kg.
    pub m: f64,
    /// Added inertia X_v̇, kg.
    pub x_vdot: f64,
    /// Hydrodynamic drag coefficient X_|v|v, kg/m.
    pub x_vv: f64,
    /// Thrust deduction number t, dimensionless.
    pub t_ded: f64,
    /// Water density ρ, kg/m³.
    pub rho: f64,
    /// Propeller diameter D, m.
    pub d: f64,
    /// Thrust-coefficient intercept α₁.
    pub alpha1: f64,
    /// Thrust-coefficient slope α₂.
    pub alpha2: f64,
    /// Wake fraction ω, typically 0.1–0.4.
    pub omega: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            m: 146.471,
            x_vdot: -4.876161,
            x_vv: -6.2282,
            t_ded: 0.1,
            rho: 1000.0,
            d: 0.2,
            alpha1: 0.2,
            alpha2: 0.1,
            omega: 0.1,
        }
    }
}

/// Thrust-law coefficients derived from the propeller geometry:
/// `t_ss = ρD⁴α₁` (coefficient of |s|s) and `t_sva = ρD³α₂`
/// (coefficient of |s|Va).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustCoefficients {
    pub t_ss: f64,
    pub t_sva: f64,
}

/// Fixed-step integration scheme for the surge ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrationMethod {
    /// Classical fourth-order Runge–Kutta.
    Rk4,
    /// First-order forward Euler.
    Euler,
}

impl PlantParams {
    /// Validates the sign and positivity invariants. Call after building
    /// params from external input; the `Default` values always pass.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m,
            self.x_vdot,
            self.x_vv,
            self.t_ded,
            self.rho,
            self.d,
            self.alpha1,
            self.alpha2,
            self.omega,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant parameters".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::InvalidParameter("m must be positive".into()));
        }
        if self.rho <= 0.0 {
            return Err(Error::InvalidParameter("rho must be positive".into()));
        }
        if self.d <= 0.0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        if self.m - self.x_vdot == 0.0 {
            return Err(Error::InvalidParameter(
                "effective inertia m - x_vdot must be nonzero".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.omega) {
            return Err(Error::InvalidParameter(
                "wake fraction omega must satisfy 0 <= omega < 1".into(),
            ));
        }
        Ok(())
    }

    /// Derives the |s|s and |s|Va thrust coefficients from the geometry.
    pub fn thrust_coefficients(&self) -> ThrustCoefficients {
        ThrustCoefficients {
            t_ss: self.rho * self.d.powi(4) * self.alpha1,
            t_sva: self.rho * self.d.powi(3) * self.alpha2,
        }
    }

    /// Propeller thrust in N at rotational speed `s` and vehicle speed `v`.
    /// The advance velocity seen by the propeller is `Va = (1 − ω)·v`.
    pub fn thrust(&self, s: f64, v: f64) -> f64 {
        let ThrustCoefficients { t_ss, t_sva } = self.thrust_coefficients();
        let va = (1.0 - self.omega) * v;
        t_ss * s.abs() * s + t_sva * s.abs() * va
    }

    /// Surge acceleration in m/s² under input `s` and disturbance `x_e`.
    pub fn surge_derivative(&self, v: f64, s: f64, x_e: f64) -> f64 {
        (self.x_vv * v.abs() * v + (1.0 - self.t_ded) * self.thrust(s, v) + x_e)
            / (self.m - self.x_vdot)
    }

    /// One classical RK4 step of size `dt` with the input held constant over
    /// the step (zero-order hold).
    pub fn rk4_step(&self, v: f64, s: f64, dt: f64) -> f64 {
        let k1 = self.surge_derivative(v, s, 0.0);
        let k2 = self.surge_derivative(v + 0.5 * dt * k1, s, 0.0);
        let k3 = self.surge_derivative(v + 0.5 * dt * k2, s, 0.0);
        let k4 = self.surge_derivative(v + dt * k3, s, 0.0);
        v + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    }

    /// One forward-Euler step of size `dt`, zero-order hold on `s`.
    pub fn euler_step(&self, v: f64, s: f64, dt: f64) -> f64 {
        v + dt * self.surge_derivative(v, s, 0.0)
    }

    /// Integrates from `v0` applying `inputs[k]` over step `k`. Returns the
    /// full state sequence `[v0, v1, …]` of length `inputs.len() + 1`.
    pub fn simulate(
        &self,
        v0: f64,
        inputs: &[f64],
        dt: f64,
        method: IntegrationMethod,
    ) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter(
                "simulate: empty input sequence".into(),
            ));
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::InvalidParameter(
                "simulate: dt must be positive".into(),
            ));
        }
        if !v0.is_finite() {
            return Err(Error::NonFinite("simulate: v0".into()));
        }
        if inputs.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("simulate: inputs".into()));
        }
        let mut trajectory = Vec::with_capacity(inputs.len() + 1);
        trajectory.push(v0);
        let mut v = v0;
        for &s in inputs {
            v = match method {
                IntegrationMethod::Rk4 => self.rk4_step(v, s, dt),
                IntegrationMethod::Euler => self.euler_step(v, s, dt),
            };
            trajectory.push(v);
        }
        Ok(trajectory)
    }
}
