use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::allocation::TransitionSurface;
use crate::calibration::state_pixels;
use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::raster::RasterGrid;

/// Gaussian transition probability restricted to a box of feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    pub mu: Vec<f64>,
    /// Row-major `d x d`.
    pub sigma: Vec<f64>,
    pub domain: Vec<[f64; 2]>,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

impl GroundTruthSpec {
    /// Benchmark mean and domain (elevation m, slope degrees, distance m)
    /// with the positive definite covariance used by default.
    pub fn benchmark() -> Self {
        Self {
            mu: vec![150.0, 0.0, 0.0],
            sigma: vec![625.0, 150.0, 130.0, 150.0, 100.0, -16.3, 130.0, -16.3, 100.0],
            domain: vec![[0.0, 616.0], [0.0, 15.0], [0.0, 60.0]],
            amplitude: 1.0,
        }
    }

    /// The covariance as printed in the source tables. It is not positive
    /// definite, so [`SyntheticGroundTruth::new`] rejects it.
    pub fn printed() -> Self {
        Self {
            sigma: vec![625.0, 843.0, 325.0, 843.0, 100.0, -16.3, 325.0, -16.3, 100.0],
            ..Self::benchmark()
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }
}

#[derive(Debug, Serialize)]
pub struct SyntheticGroundTruth {
    #[serde(flatten)]
    spec: GroundTruthSpec,
    #[serde(skip)]
    precision: Vec<f64>,
    #[serde(skip)]
    norm: f64,
    #[serde(skip)]
    clamp_warned: AtomicBool,
}

impl Clone for SyntheticGroundTruth {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            precision: self.precision.clone(),
            norm: self.norm,
            clamp_warned: AtomicBool::new(self.clamp_warned.load(Ordering::Relaxed)),
        }
    }
}

impl SyntheticGroundTruth {
    pub fn new(spec: GroundTruthSpec) -> Result<Self> {
        let d = spec.mu.len();
        if d == 0 || spec.sigma.len() != d * d || spec.domain.len() != d {
            return Err(Error::Dimension(format!(
                "mu has {d} entries, sigma {}, domain {}",
                spec.sigma.len(),
                spec.domain.len()
            )));
        }
        if !(spec.amplitude >= 0.0) || !spec.amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude must be >= 0, got {}", spec.amplitude)));
        }
        if spec.domain.iter().any(|b| !(b[0] <= b[1])) {
            return Err(Error::InvalidArgument("domain bounds must satisfy lo <= hi".into()));
        }
        let s = DMatrix::from_row_slice(d, d, &spec.sigma);
        if (0..d).any(|i| (0..i).any(|j| s[(i, j)] != s[(j, i)])) {
            return Err(Error::InvalidArgument("sigma must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(s.clone());
        let (k, &lambda) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("d >= 1");
        if lambda <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: lambda,
                direction: eig.eigenvectors.column(k).iter().copied().collect(),
            });
        }
        let chol = s.cholesky().ok_or(Error::NotPositiveDefinite {
            eigenvalue: lambda,
            direction: eig.eigenvectors.column(k).iter().copied().collect(),
        })?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let inv = chol.inverse();
        let precision = (0..d * d).map(|i| inv[(i / d, i % d)]).collect();
        let norm = (-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det)).exp();
        Ok(Self {
            spec,
            precision,
            norm,
            clamp_warned: AtomicBool::new(false),
        })
    }

    pub fn benchmark(amplitude: f64) -> Result<Self> {
        Self::new(GroundTruthSpec::benchmark().with_amplitude(amplitude))
    }

    pub fn spec(&self) -> &GroundTruthSpec {
        &self.spec
    }

    pub fn dims(&self) -> usize {
        self.spec.mu.len()
    }

    /// Value of `P*` at the Gaussian mode, before clamping.
    pub fn peak(&self) -> f64 {
        self.spec.amplitude * self.norm
    }

    /// Largest value of `P*` over the domain (the mode when it lies inside).
    pub fn domain_peak(&self) -> f64 {
        let inside = self.spec.mu.iter().zip(&self.spec.domain).all(|(m, b)| b[0] <= *m && *m <= b[1]);
        if inside {
            return self.peak().min(1.0);
        }
        // Numerical fallback: coarse grid search over the box.
        let d = self.dims();
        let steps = 40usize;
        let mut best = 0.0f64;
        let mut idx = vec![0usize; d];
        let mut y = vec![0.0; d];
        loop {
            for k in 0..d {
                let b = self.spec.domain[k];
                y[k] = b[0] + (b[1] - b[0]) * idx[k] as f64 / steps as f64;
            }
            best = best.max(self.probability(&y));
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        best
    }

    pub fn in_domain(&self, y: &[f64]) -> bool {
        y.iter().zip(&self.spec.domain).all(|(v, b)| b[0] <= *v && *v <= b[1])
    }

    /// `P*(v|u,y)`: zero outside the domain, clamped to 1 inside.
    pub fn probability(&self, y: &[f64]) -> f64 {
        let d = self.dims();
        debug_assert_eq!(y.len(), d);
        if !self.in_domain(y) {
            return 0.0;
        }
        let mut q = 0.0;
        for i in 0..d {
            let di = y[i] - self.spec.mu[i];
            for j in 0..d {
                q += di * self.precision[i * d + j] * (y[j] - self.spec.mu[j]);
            }
        }
        let p = self.spec.amplitude * self.norm * (-0.5 * q).exp();
        if p > 1.0 {
            if !self.clamp_warned.swap(true, Ordering::Relaxed) {
                warn!("ground truth exceeds 1 ({p}); clamping");
            }
            return 1.0;
        }
        p
    }

    pub fn checked_probability(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dims() {
            return Err(Error::Dimension(format!("expected {} values, got {}", self.dims(), y.len())));
        }
        Ok(self.probability(y))
    }

    pub fn probabilities_at(&self, features: &FeatureSpace, pixels: &[usize]) -> Vec<f64> {
        pixels.iter().map(|&p| self.probability(features.point(p))).collect()
    }
}

/// Allocation surface serving the exact `P*` for a single transition. The
/// global rate is the mean of `P*` over the state-`u` pixels of a map.
pub struct GroundTruthSurface<'a> {
    truth: &'a SyntheticGroundTruth,
    u: i32,
    v: i32,
    global: f64,
}

impl<'a> GroundTruthSurface<'a> {
    pub fn new(truth: &'a SyntheticGroundTruth, u: i32, v: i32, map: &RasterGrid, features: &FeatureSpace) -> Result<Self> {
        if features.dims() != truth.dims() {
            return Err(Error::Dimension(format!(
                "ground truth has {} variables, features {}",
                truth.dims(),
                features.dims()
            )));
        }
        let pixels = state_pixels(map, features, u)?;
        let global = if pixels.is_empty() {
            0.0
        } else {
            truth.probabilities_at(features, &pixels).iter().sum::<f64>() / pixels.len() as f64
        };
        Ok(Self { truth, u, v, global })
    }

    pub fn global(&self) -> f64 {
        self.global
    }
}

impl TransitionSurface for GroundTruthSurface<'_> {
    fn transitions(&self) -> Vec<(i32, i32)> {
        vec![(self.u, self.v)]
    }

    fn global_probability(&self, u: i32, v: i32) -> Result<f64> {
        if (u, v) != (self.u, self.v) {
            return Err(Error::InvalidArgument(format!("no transition {u} -> {v}")));
        }
        Ok(self.global)
    }

    fn probabilities(&self, u: i32, pixels: &[usize], features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        if u != self.u {
            return Ok(Vec::new());
        }
        Ok(vec![self.truth.probabilities_at(features, pixels)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_covariance_is_rejected() {
        match SyntheticGroundTruth::new(GroundTruthSpec::printed()) {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => assert!(eigenvalue < -500.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SyntheticGroundTruth::benchmark(1.0).is_ok());
    }

    #[test]
    fn mode_and_domain() {
        let gt = SyntheticGroundTruth::benchmark(2.0).unwrap();
        let det: f64 = 625.0 * (100.0 * 100.0 - 16.3 * 16.3) - 150.0 * (150.0 * 100.0 + 16.3 * 130.0)
            + 130.0 * (-150.0 * 16.3 - 100.0 * 130.0);
        let mode = 2.0 / ((2.0 * std::f64::consts::PI).powf(1.5) * det.sqrt());
        assert!((gt.probability(&[150.0, 0.0, 0.0]) - mode).abs() < 1e-15);
        assert_eq!(gt.probability(&[150.0, -0.1, 0.0]), 0.0);
        assert_eq!(gt.probability(&[617.0, 1.0, 1.0]), 0.0);
        assert_eq!(gt.domain_peak(), gt.peak());
    }

    #[test]
    fn clamps_at_one() {
        let gt = SyntheticGroundTruth::benchmark(1e6).unwrap();
        assert_eq!(gt.probability(&[150.0, 0.0, 0.0]), 1.0);
        assert!(gt.probability(&[150.0, 14.0, 59.0]) < 1.0);
    }
}
