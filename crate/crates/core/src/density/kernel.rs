use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation radius of the gaussian kernel, in bandwidth units.
pub const GAUSSIAN_TRUNCATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    /// Uniform on `[-1, 1]` per axis.
    Box,
    /// `1 - |t|` on `[-1, 1]` per axis.
    Triangle,
    /// Standard normal truncated at 4 and renormalised.
    Gaussian,
}

impl std::str::FromStr for KernelShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "box" | "square" => Ok(KernelShape::Box),
            "triangle" => Ok(KernelShape::Triangle),
            "gaussian" => Ok(KernelShape::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown kernel {other:?}"))),
        }
    }
}

/// A `d`-variate product kernel built from a one-dimensional profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub dims: usize,
    /// `∫ K²` of the d-variate kernel.
    pub roughness: f64,
    /// Support half-width in bandwidth units.
    pub support_radius: f64,
}

fn gaussian_mass() -> f64 {
    libm::erf(GAUSSIAN_TRUNCATION / std::f64::consts::SQRT_2)
}

impl KernelSpec {
    pub fn new(shape: KernelShape, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument("kernel dimension must be >= 1".into()));
        }
        let (roughness_1d, support_radius) = match shape {
            KernelShape::Box => (0.5, 1.0),
            KernelShape::Triangle => (2.0 / 3.0, 1.0),
            KernelShape::Gaussian => {
                let z = gaussian_mass();
                (
                    libm::erf(GAUSSIAN_TRUNCATION) / (2.0 * std::f64::consts::PI.sqrt()) / (z * z),
                    GAUSSIAN_TRUNCATION,
                )
            }
        };
        let spec = Self {
            shape,
            dims,
            roughness: roughness_1d.powi(dims as i32),
            support_radius,
        };
        let mass = spec.integrate_profile().powi(dims as i32);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "{shape:?} kernel integrates to {mass} in {dims} dimensions"
            )));
        }
        Ok(spec)
    }

    pub fn boxed(dims: usize) -> Self {
        Self::new(KernelShape::Box, dims).expect("box kernel is valid")
    }

    /// Composite Simpson integral of the 1-D profile over its support.
    fn integrate_profile(&self) -> f64 {
        let n = 20_000usize;
        let (a, b) = (-self.support_radius, self.support_radius);
        let step = (b - a) / n as f64;
        let mut acc = self.profile(a) + self.profile(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.profile(a + i as f64 * step);
        }
        acc * step / 3.0
    }

    /// One-dimensional profile `k(t)`.
    #[inline]
    pub fn profile(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.shape {
            KernelShape::Box => {
                if a <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            KernelShape::Triangle => (1.0 - a).max(0.0),
            KernelShape::Gaussian => {
                if a <= GAUSSIAN_TRUNCATION {
                    (-0.5 * t * t).exp() / ((2.0 * std::f64::consts::PI).sqrt() * gaussian_mass())
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫_{-∞}^{t} k`.
    pub fn cdf(&self, t: f64) -> f64 {
        let r = self.support_radius;
        if t <= -r {
            return 0.0;
        }
        if t >= r {
            return 1.0;
        }
        match self.shape {
            KernelShape::Box => 0.5 * (t + 1.0),
            KernelShape::Triangle => {
                if t < 0.0 {
                    0.5 * (1.0 + t) * (1.0 + t)
                } else {
                    1.0 - 0.5 * (1.0 - t) * (1.0 - t)
                }
            }
            KernelShape::Gaussian => {
                let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
                (phi(t) - phi(-r)) / gaussian_mass()
            }
        }
    }

    /// Product kernel value at a point given in bandwidth units.
    pub fn weight(&self, u: &[f64]) -> f64 {
        u.iter().map(|&t| self.profile(t)).product()
    }
}
