use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{distance_to_state, slope_from_elevation, FeatureSpace};
use crate::raster::{RasterGrid, StateLegend};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateShare {
    pub state: i32,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub width: usize,
    pub height: usize,
    /// Metres per pixel.
    pub cell_size: f64,
    /// Area fractions of every state except `background`, which fills the rest.
    pub shares: Vec<StateShare>,
    pub background: i32,
    /// State whose distance map is the third explanatory variable.
    pub urban: i32,
    /// Smoothing radius of the land-use blobs, in pixels.
    pub blob_radius: usize,
    /// Elevation range in metres.
    pub elevation: [f64; 2],
    /// Smoothing radius of the elevation field, in pixels.
    pub relief_radius: usize,
}

impl LandscapeConfig {
    /// Seven-class landscape with agriculture (4) as background and urban (5) blobs.
    pub fn seven_classes(width: usize, height: usize, cell_size: f64) -> Self {
        let shares = [(1, 0.03), (2, 0.03), (3, 0.15), (5, 0.15), (6, 0.04), (7, 0.05)];
        Self {
            width,
            height,
            cell_size,
            shares: shares.iter().map(|&(state, share)| StateShare { state, share }).collect(),
            background: 4,
            urban: 5,
            blob_radius: 2,
            elevation: [100.0, 200.0],
            relief_radius: 60,
        }
    }

    /// Equal shares over the legend; the first state is the background and the
    /// second plays the urban role.
    pub fn for_legend(legend: &StateLegend, width: usize, height: usize, cell_size: f64) -> Result<Self> {
        let codes = legend.codes();
        if codes.len() < 2 {
            return Err(Error::Legend("a synthetic landscape needs at least two states".into()));
        }
        if codes == StateLegend::seven_classes().codes() {
            return Ok(Self::seven_classes(width, height, cell_size));
        }
        let share = 1.0 / codes.len() as f64;
        Ok(Self {
            shares: codes[1..].iter().map(|&state| StateShare { state, share }).collect(),
            background: codes[0],
            urban: codes[1],
            ..Self::seven_classes(width, height, cell_size)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidArgument(format!(
                "landscape must be at least 64x64, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidArgument("cell_size must be positive".into()));
        }
        let total: f64 = self.shares.iter().map(|s| s.share).sum();
        if self.shares.iter().any(|s| !(s.share > 0.0)) || total >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "state shares must be positive and leave room for the background, sum {total}"
            )));
        }
        if !self.shares.iter().any(|s| s.state == self.urban) {
            return Err(Error::InvalidArgument(format!("urban state {} has no share", self.urban)));
        }
        if self.shares.iter().any(|s| s.state == self.background) {
            return Err(Error::InvalidArgument("the background state cannot have a share".into()));
        }
        if !(self.elevation[0] < self.elevation[1]) {
            return Err(Error::InvalidArgument("elevation range must be increasing".into()));
        }
        Ok(())
    }
}

/// Mean filter of radius `r` applied `passes` times, edges renormalised.
pub fn box_smooth(field: &[f64], width: usize, height: usize, r: usize, passes: usize) -> Vec<f64> {
    let mut cur = field.to_vec();
    let mut tmp = vec![0.0; cur.len()];
    let mut prefix = vec![0.0; width.max(height) + 1];
    for _ in 0..passes {
        for row in 0..height {
            let line = &cur[row * width..(row + 1) * width];
            for (i, v) in line.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            for c in 0..width {
                let lo = c.saturating_sub(r);
                let hi = (c + r + 1).min(width);
                tmp[row * width + c] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            }
        }
        for c in 0..width {
            for row in 0..height {
                prefix[row + 1] = prefix[row] + tmp[row * width + c];
            }
            for row in 0..height {
                let lo = row.saturating_sub(r);
                let hi = (row + r + 1).min(height);
                cur[row * width + c] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            }
        }
    }
    cur
}

fn smooth_noise<R: Rng>(rng: &mut R, width: usize, height: usize, radius: usize) -> Vec<f64> {
    let noise: Vec<f64> = (0..width * height).map(|_| rng.random::<f64>()).collect();
    box_smooth(&noise, width, height, radius, 3)
}

/// Map of blob-shaped regions plus elevation, slope and distance-to-urban
/// rasters (variables named `elevation`, `slope`, `distance`).
pub fn generate_landscape(config: &LandscapeConfig, seed: u64) -> Result<(RasterGrid, FeatureSpace)> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let n = w * h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Each state claims the pixels where its own smooth field is highest
    // among those still unclaimed.
    let mut codes = vec![config.background; n];
    let mut free: Vec<usize> = (0..n).collect();
    for s in &config.shares {
        let field = smooth_noise(&mut rng, w, h, config.blob_radius);
        let take = ((s.share * n as f64).round() as usize).clamp(1, free.len().saturating_sub(1));
        free.select_nth_unstable_by(take, |a, b| field[*b].total_cmp(&field[*a]).then(a.cmp(b)));
        for &p in &free[..take] {
            codes[p] = s.state;
        }
        free.drain(..take);
        free.sort_unstable();
    }
    let map = RasterGrid::categorical(w, h, config.cell_size, codes)?;

    let relief = smooth_noise(&mut rng, w, h, config.relief_radius);
    let (lo, hi) = relief
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
    let [e0, e1] = config.elevation;
    let elevation: Vec<f64> = relief
        .iter()
        .map(|v| e0 + (e1 - e0) * (v - lo) / (hi - lo).max(f64::MIN_POSITIVE))
        .collect();
    let elevation = RasterGrid::continuous(w, h, config.cell_size, elevation)?;
    let slope = slope_from_elevation(&elevation)?;
    let distance = distance_to_state(&map, config.urban)?;
    let features = FeatureSpace::from_rasters(
        vec!["elevation".into(), "slope".into(), "distance".into()],
        &[elevation, slope, distance],
    )?;
    Ok((map, features))
}

/// Landscape over `legend` with the default layout for its size.
pub fn generate_synthetic_landscape(
    seed: u64,
    width: usize,
    height: usize,
    cell_size: f64,
    legend: &StateLegend,
) -> Result<(RasterGrid, FeatureSpace)> {
    generate_landscape(&LandscapeConfig::for_legend(legend, width, height, cell_size)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_preserves_constants() {
        let f = vec![3.5; 20 * 10];
        for v in box_smooth(&f, 20, 10, 4, 3) {
            assert!((v - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn shares_are_met() {
        let cfg = LandscapeConfig::seven_classes(100, 80, 5.0);
        let (map, features) = generate_landscape(&cfg, 3).unwrap();
        let census = map.census();
        for s in &cfg.shares {
            assert_eq!(census[&s.state], (s.share * 8000.0).round() as usize);
        }
        assert!(census[&4] > 3000);
        assert_eq!(features.dims(), 3);
    }

    #[test]
    fn small_maps_are_rejected() {
        let cfg = LandscapeConfig::seven_classes(63, 80, 5.0);
        assert!(generate_landscape(&cfg, 1).is_err());
    }
}
