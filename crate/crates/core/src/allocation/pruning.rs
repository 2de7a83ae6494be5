use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningStrategy {
    /// Every pixel stays a candidate.
    None,
    /// Keep the `F x target` pixels of highest transition probability.
    DinamicaRank,
    /// Transit the `target` pixels of highest `p(y|u,v)` directly.
    LcmRank,
    /// Draw `target` cores without replacement so that their features follow
    /// `p(y|u,v)`: per-pixel weights are `P(v|u,y)`, which is proportional
    /// to `p(y|u,v) / p(y|u)`.
    UnbiasedSample,
}

impl std::str::FromStr for PruningStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "dinamica_rank" => Ok(Self::DinamicaRank),
            "lcm_rank" => Ok(Self::LcmRank),
            "unbiased_sample" => Ok(Self::UnbiasedSample),
            other => Err(Error::InvalidArgument(format!("unknown pruning strategy {other:?}"))),
        }
    }
}

pub const DEFAULT_PRUNING_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningConfig {
    pub strategy: PruningStrategy,
    #[serde(default = "default_factor", rename = "F", alias = "factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    DEFAULT_PRUNING_FACTOR
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            strategy: PruningStrategy::None,
            factor: DEFAULT_PRUNING_FACTOR,
        }
    }
}

impl PruningConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dinamica(factor: f64) -> Self {
        Self {
            strategy: PruningStrategy::DinamicaRank,
            factor,
        }
    }

    pub fn lcm() -> Self {
        Self {
            strategy: PruningStrategy::LcmRank,
            ..Self::default()
        }
    }

    pub fn unbiased() -> Self {
        Self {
            strategy: PruningStrategy::UnbiasedSample,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor >= 1.0) || !self.factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pruning.F must be >= 1, got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// Indices of the `k` largest scores, ties broken by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Weighted sampling without replacement (exponential keys): returns up to
/// `k` indices with positive weight, in draw order.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            // ln(U) / w, largest first; 1 - U keeps the argument in (0, 1].
            let u: f64 = 1.0 - rng.random::<f64>();
            (u.ln() / w, i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Candidate subset for one transition. `probabilities` are `P(v|u,y)` and
/// `densities` are `p(y|u,v)` over the same pixels; returned indices refer
/// to those slices. `None` keeps every pixel.
pub fn prune_candidates<R: Rng + ?Sized>(
    probabilities: &[f64],
    densities: &[f64],
    target: usize,
    config: &PruningConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    config.validate()?;
    if probabilities.len() != densities.len() {
        return Err(Error::Dimension("probability and density series differ in length".into()));
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    Ok(match config.strategy {
        PruningStrategy::None => (0..probabilities.len()).collect(),
        PruningStrategy::DinamicaRank => {
            let k = (config.factor * target as f64).ceil() as usize;
            top_k(probabilities, k.min(probabilities.len()))
        }
        PruningStrategy::LcmRank => top_k(densities, target.min(densities.len())),
        PruningStrategy::UnbiasedSample => weighted_sample_without_replacement(probabilities, target, rng),
    })
}

/// One rejection-sampling sweep: every pixel draws `r ~ U(0,1)` and becomes a
/// candidate for the transition whose interval of the cumulative
/// probabilities `columns[k][i]` contains `r`. Returns `(pixel, transition)`.
pub fn draw_kernel_pixels<R: Rng + ?Sized>(
    columns: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let m = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != m) {
        return Err(Error::Dimension("probability columns differ in length".into()));
    }
    let mut out = Vec::new();
    for i in 0..m {
        let total: f64 = columns.iter().map(|c| c[i]).sum();
        if total > 1.0 + 1e-12 || columns.iter().any(|c| c[i] < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i}: selection probabilities sum to {total}"
            )));
        }
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (k, c) in columns.iter().enumerate() {
            acc += c[i];
            if r < acc {
                out.push((i, k));
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_breaks_ties_by_index() {
        let s = [0.5, 0.9, 0.5, 0.1, 0.9];
        assert_eq!(top_k(&s, 3), vec![1, 4, 0]);
        assert_eq!(top_k(&s, 10), vec![1, 4, 0, 2, 3]);
        assert!(top_k(&s, 0).is_empty());
    }

    #[test]
    fn zero_target_prunes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [PruningConfig::none(), PruningConfig::dinamica(10.0), PruningConfig::lcm(), PruningConfig::unbiased()] {
            assert!(prune_candidates(&[0.1; 5], &[1.0; 5], 0, &cfg, &mut rng).unwrap().is_empty());
        }
    }

    #[test]
    fn factor_below_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PruningConfig::dinamica(0.5);
        assert!(prune_candidates(&[0.1; 5], &[1.0; 5], 1, &cfg, &mut rng).is_err());
    }

    #[test]
    fn certain_pixel_is_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cols = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]];
        for _ in 0..100 {
            assert_eq!(draw_kernel_pixels(&cols, &mut rng).unwrap(), vec![(1, 0)]);
        }
        let zero = vec![vec![0.0; 4]];
        assert!(draw_kernel_pixels(&zero, &mut rng).unwrap().is_empty());
        let bad = vec![vec![0.7], vec![0.6]];
        assert!(draw_kernel_pixels(&bad, &mut rng).is_err());
    }
}
