use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(i64, i64); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchParams {
    /// Mean patch area in pixels.
    pub mean_area: f64,
    /// Variance of the patch area in pixels squared.
    #[serde(default)]
    pub area_variance: f64,
    /// Ratio of preferred to transverse growth, 1 for isotropic patches.
    #[serde(default = "unit")]
    pub elongation: f64,
    #[serde(default = "four")]
    pub connectivity: Connectivity,
}

fn unit() -> f64 {
    1.0
}

fn four() -> Connectivity {
    Connectivity::Four
}

impl Default for PatchParams {
    fn default() -> Self {
        Self::single_pixel()
    }
}

impl PatchParams {
    pub fn single_pixel() -> Self {
        Self {
            mean_area: 1.0,
            area_variance: 0.0,
            elongation: 1.0,
            connectivity: Connectivity::Four,
        }
    }

    pub fn new(mean_area: f64, area_variance: f64, elongation: f64, connectivity: Connectivity) -> Result<Self> {
        let p = Self {
            mean_area,
            area_variance,
            elongation,
            connectivity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_area >= 1.0) || !self.mean_area.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "patch.mean_area must be >= 1, got {}",
                self.mean_area
            )));
        }
        if !(self.area_variance >= 0.0) || !self.area_variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "patch.area_variance must be >= 0, got {}",
                self.area_variance
            )));
        }
        if !(self.elongation >= 1.0) || !self.elongation.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "patch.elongation must be >= 1, got {}",
                self.elongation
            )));
        }
        Ok(())
    }

    /// Draws a patch area from the lognormal with this mean and variance.
    pub fn draw_area<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.area_variance == 0.0 {
            return self.mean_area.round().max(1.0) as usize;
        }
        let m = self.mean_area;
        let s2 = (1.0 + self.area_variance / (m * m)).ln();
        let dist = LogNormal::new(m.ln() - 0.5 * s2, s2.sqrt()).expect("valid lognormal");
        let a: f64 = dist.sample(rng);
        a.round().clamp(1.0, u32::MAX as f64) as usize
    }
}

/// Grows a connected patch of at most `area` pixels around `core` on a
/// `width x height` grid. Only pixels for which `eligible` holds are absorbed;
/// the core itself is always included.
///
/// Each step absorbs one frontier pixel, chosen with weight
/// `exp(ln(elongation) cos^2 phi)`, `phi` being the angle between the
/// core-to-pixel vector and an axis drawn uniformly per patch.
pub fn grow_patch<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    core: usize,
    area: usize,
    params: &PatchParams,
    eligible: impl Fn(usize) -> bool,
    rng: &mut R,
) -> Vec<usize> {
    let mut patch = vec![core];
    if area <= 1 {
        return patch;
    }
    let kappa = params.elongation.ln();
    let axis = rng.random::<f64>() * std::f64::consts::PI;
    let (ax, ay) = (axis.cos(), axis.sin());
    let (r0, c0) = ((core / width) as i64, (core % width) as i64);
    let weight = |p: usize| -> f64 {
        if kappa == 0.0 {
            return 1.0;
        }
        let dy = (p / width) as i64 - r0;
        let dx = (p % width) as i64 - c0;
        let len2 = (dx * dx + dy * dy) as f64;
        let proj = dx as f64 * ax + dy as f64 * ay;
        (kappa * proj * proj / len2).exp()
    };

    let mut seen: HashSet<usize> = HashSet::new();
    seen.insert(core);
    let mut frontier: Vec<(usize, f64)> = Vec::new();
    let expand = |p: usize, seen: &mut HashSet<usize>, frontier: &mut Vec<(usize, f64)>| {
        let (r, c) = ((p / width) as i64, (p % width) as i64);
        for &(dr, dc) in params.connectivity.offsets() {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                continue;
            }
            let q = nr as usize * width + nc as usize;
            if seen.insert(q) && eligible(q) {
                frontier.push((q, weight(q)));
            }
        }
    };
    expand(core, &mut seen, &mut frontier);
    while patch.len() < area && !frontier.is_empty() {
        let total: f64 = frontier.iter().map(|f| f.1).sum();
        let mut x = rng.random::<f64>() * total;
        let mut pick = frontier.len() - 1;
        for (k, f) in frontier.iter().enumerate() {
            if x < f.1 {
                pick = k;
                break;
            }
            x -= f.1;
        }
        let (p, _) = frontier.swap_remove(pick);
        patch.push(p);
        expand(p, &mut seen, &mut frontier);
    }
    patch
}
