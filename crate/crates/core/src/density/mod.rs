//! Kernel density estimation on binned data.

pub mod bandwidth;
pub mod io;
pub mod kde;
pub mod kernel;

use serde::{Deserialize, Serialize};

pub use bandwidth::{terrell_bandwidth, terrell_bandwidth_for_roughness};
pub use io::{load_kde, save_kde};
pub use kde::{fit_binned_kde, fit_binned_kde_with_bounds, BinnedKde};
pub use kernel::{KernelShape, KernelSpec};

use crate::error::{Error, Result};

pub const DEFAULT_Q: usize = 51;

/// Estimator settings shared by every density fitted in a calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeConfig {
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_kernel")]
    pub kernel: KernelShape,
    /// Fixed bandwidth in whitened units; the rule-of-thumb value otherwise.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_true")]
    pub boundary_correction: bool,
}

fn default_q() -> usize {
    DEFAULT_Q
}

fn default_kernel() -> KernelShape {
    KernelShape::Box
}

fn default_true() -> bool {
    true
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            kernel: KernelShape::Box,
            bandwidth: None,
            boundary_correction: true,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 3 || self.q % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kde.q must be odd and >= 3, got {}",
                self.q
            )));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "kde.bandwidth must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Fits a flattened `n x d` table (already whitened).
    pub fn fit(&self, points: &[f64], d: usize, bounds: Option<Vec<[f64; 2]>>) -> Result<BinnedKde> {
        self.validate()?;
        let kernel = KernelSpec::new(self.kernel, d)?;
        let n = if d == 0 { 0 } else { points.len() / d };
        let h = match self.bandwidth {
            Some(h) => h,
            None => terrell_bandwidth(n, d, &kernel)?,
        };
        let mut kde = fit_binned_kde_with_bounds(points, d, h, self.q, kernel, bounds)?;
        kde.set_boundary_correction(self.boundary_correction);
        Ok(kde)
    }
}
