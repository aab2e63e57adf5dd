//! Dictionary of lifting functions mapping the state space ℝⁿ into the
//! lifted space ℝᴺ.
//!
//! The first `n` observables are the identity map, so the output matrix of
//! the lifted model is exactly `C = [I, 0]` and projecting a lifted vector
//! back to state space is exact. The remaining `N − n` observables are
//! Gaussian radial basis functions with centers drawn once, uniformly at
//! random, from a configured interval.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gaussian radial basis function `exp(−‖x − center‖²/2)` with unit width.
pub fn gaussian_rbf(x: &DVector<f64>, center: &DVector<f64>) -> f64 {
    (-0.5 * (x - center).norm_squared()).exp()
}

/// Immutable dictionary of observables: `n` identity entries followed by
/// `N − n` Gaussian RBFs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    state_dim: usize,
    centers: Vec<DVector<f64>>,
    width: f64,
    seed: u64,
}

impl Dictionary {
    /// Draws `n_rbf` centers i.i.d. uniform on `[center_low, center_high]ⁿ`.
    /// Deterministic for a fixed seed. The RBF width defaults to 1.
    pub fn new(
        state_dim: usize,
        n_rbf: usize,
        center_low: f64,
        center_high: f64,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParameter(
                "dictionary: state_dim must be >= 1".into(),
            ));
        }
        if !(center_low.is_finite() && center_high.is_finite()) || center_low >= center_high {
            return Err(Error::InvalidParameter(
                "dictionary: require center_low < center_high".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..n_rbf)
            .map(|_| {
                DVector::from_iterator(
                    state_dim,
                    (0..state_dim).map(|_| rng.random_range(center_low..=center_high)),
                )
            })
            .collect();
        Ok(Dictionary {
            state_dim,
            centers,
            width: 1.0,
            seed,
        })
    }

    /// Overrides the RBF width (length scale); must be positive.
    pub fn with_width(mut self, width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidParameter(
                "dictionary: width must be positive".into(),
            ));
        }
        self.width = width;
        Ok(self)
    }

    /// Rebuilds a dictionary from serialized parts (e.g. a model file).
    pub fn from_parts(
        state_dim: usize,
        centers: Vec<DVector<f64>>,
        width: f64,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidParameter(
                "dictionary: state_dim must be >= 1".into(),
            ));
        }
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidParameter(
                "dictionary: width must be positive".into(),
            ));
        }
        for (i, c) in centers.iter().enumerate() {
            if c.len() != state_dim {
                return Err(Error::DimensionMismatch {
                    context: "dictionary center",
                    expected: state_dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("dictionary center {i}")));
            }
        }
        Ok(Dictionary {
            state_dim,
            centers,
            width,
            seed,
        })
    }

    /// Original state dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Total lifted dimension `N = n + n_rbf`.
    pub fn lifted_dim(&self) -> usize {
        self.state_dim + self.centers.len()
    }

    /// RBF centers, one point in ℝⁿ per non-identity observable.
    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    /// RBF length scale.
    pub fn width(&self) -> f64 {
        self.width
    }

    /// Seed the centers were drawn with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Lifts a state: `z = [x; g₁(x); …]`. The first `n` entries equal `x`
    /// exactly.
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "lift input",
                expected: self.state_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lift input".into()));
        }
        let mut z = DVector::zeros(self.lifted_dim());
        z.rows_mut(0, self.state_dim).copy_from(x);
        let inv_two_w2 = 0.5 / (self.width * self.width);
        for (i, c) in self.centers.iter().enumerate() {
            z[self.state_dim + i] = (-(x - c).norm_squared() * inv_two_w2).exp();
        }
        Ok(z)
    }

    /// Applies `C = [I, 0]`: returns the first `n` components of `z`.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.lifted_dim() {
            return Err(Error::DimensionMismatch {
                context: "project input",
                expected: self.lifted_dim(),
                got: z.len(),
            });
        }
        Ok(z.rows(0, self.state_dim).into_owned())
    }

    /// The output matrix `C = [I, 0]` of shape n×N.
    pub fn output_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.state_dim, self.lifted_dim());
        c.view_mut((0, 0), (self.state_dim, self.state_dim))
            .fill_with_identity();
        c
    }
}
