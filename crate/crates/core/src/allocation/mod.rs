//! Patch-based stochastic allocation of transitions onto a map.
//!
//! The default loop draws kernel (core) pixels by rejection sampling over all
//! transitions at once, grows a patch around one of them, then updates the
//! remaining rates and, periodically, the density of the untouched pixels, so
//! that the realised transitions follow `P(v|u,y)` without bias. Rank-based
//! and sampling-based pruning strategies are available as baselines.

pub mod patch;
pub mod pruning;

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use patch::{grow_patch, Connectivity, PatchParams};
pub use pruning::{
    draw_kernel_pixels, prune_candidates, top_k, weighted_sample_without_replacement,
    PruningConfig, PruningStrategy, DEFAULT_PRUNING_FACTOR,
};

use crate::calibration::{state_pixels, TransitionModel, DENSITY_FLOOR};
use crate::density::{BinnedKde, KdeConfig};
use crate::error::{Error, Result};
use crate::features::{distance_to_state, fit_whitening, FeatureSpace, Whitening};
use crate::raster::RasterGrid;

pub const DEFAULT_REFRESH_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_FAILED_PASSES: usize = 64;

/// Source of transition probabilities for the allocation loop.
pub trait TransitionSurface {
    /// `(u, v)` pairs, sorted.
    fn transitions(&self) -> Vec<(i32, i32)>;

    /// `P(v|u)`.
    fn global_probability(&self, u: i32, v: i32) -> Result<f64>;

    /// `P(v|u,y)` at each pixel, one column per target of `u` in ascending
    /// order of `v`; each row sums to at most one.
    fn probabilities(&self, u: i32, pixels: &[usize], features: &FeatureSpace) -> Result<Vec<Vec<f64>>>;

    /// `p(y|u,v)` at each pixel, up to a constant factor, when known.
    fn transition_densities(
        &self,
        _u: i32,
        _v: i32,
        _pixels: &[usize],
        _features: &FeatureSpace,
    ) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

pub fn targets_of(transitions: &[(i32, i32)], u: i32) -> Vec<i32> {
    transitions.iter().filter(|t| t.0 == u).map(|t| t.1).collect()
}

impl TransitionSurface for TransitionModel {
    fn transitions(&self) -> Vec<(i32, i32)> {
        TransitionModel::transitions(self).to_vec()
    }

    fn global_probability(&self, u: i32, v: i32) -> Result<f64> {
        self.global().get(u, v)
    }

    fn probabilities(&self, u: i32, pixels: &[usize], features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        TransitionModel::probabilities(self, u, &features.gather(pixels))
    }

    fn transition_densities(
        &self,
        u: i32,
        v: i32,
        pixels: &[usize],
        features: &FeatureSpace,
    ) -> Result<Option<Vec<f64>>> {
        self.transition_density_at(u, v, &features.gather(pixels)).map(Some)
    }
}

/// The same probability at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantSurface {
    entries: Vec<((i32, i32), f64)>,
}

impl ConstantSurface {
    pub fn new(mut entries: Vec<((i32, i32), f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        let mut by_u: BTreeMap<i32, f64> = BTreeMap::new();
        for &((u, v), p) in &entries {
            if u == v || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("invalid entry P({v}|{u}) = {p}")));
            }
            *by_u.entry(u).or_default() += p;
        }
        if let Some((u, s)) = by_u.iter().find(|(_, s)| **s > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("rates out of {u} sum to {s}")));
        }
        Ok(Self { entries })
    }
}

impl TransitionSurface for ConstantSurface {
    fn transitions(&self) -> Vec<(i32, i32)> {
        self.entries.iter().map(|e| e.0).collect()
    }

    fn global_probability(&self, u: i32, v: i32) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| e.0 == (u, v))
            .map(|e| e.1)
            .ok_or_else(|| Error::InvalidArgument(format!("no transition {u} -> {v}")))
    }

    fn probabilities(&self, u: i32, pixels: &[usize], _features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .entries
            .iter()
            .filter(|e| e.0 .0 == u)
            .map(|e| vec![e.1; pixels.len()])
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionPatch {
    pub u: i32,
    pub v: i32,
    pub patch: PatchParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionTarget {
    pub u: i32,
    pub v: i32,
    pub pixels: usize,
}

/// Recompute a distance-to-state variable whenever `p(y|u)` is refreshed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicDistance {
    /// Index of the variable in the feature space.
    pub feature: usize,
    pub state: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    /// Patch shape for transitions not listed in `patches`.
    #[serde(default)]
    pub patch: PatchParams,
    #[serde(default)]
    pub patches: Vec<TransitionPatch>,
    #[serde(default)]
    pub pruning: PruningConfig,
    /// Fraction of the state's pixels allocated between two re-estimations of `p(y|u)`.
    #[serde(default = "default_threshold")]
    pub refresh_threshold: f64,
    #[serde(default)]
    pub kde: KdeConfig,
    /// Pixel counts replacing `round(P(v|u) x count(u))`.
    #[serde(default)]
    pub targets: Vec<TransitionTarget>,
    #[serde(default)]
    pub dynamic_distance: Option<DynamicDistance>,
    /// Consecutive empty sweeps tolerated before giving up on the remaining target.
    #[serde(default = "default_failed_passes")]
    pub max_failed_passes: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_REFRESH_THRESHOLD
}

fn default_failed_passes() -> usize {
    DEFAULT_MAX_FAILED_PASSES
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            patch: PatchParams::default(),
            patches: Vec::new(),
            pruning: PruningConfig::default(),
            refresh_threshold: DEFAULT_REFRESH_THRESHOLD,
            kde: KdeConfig::default(),
            targets: Vec::new(),
            dynamic_distance: None,
            max_failed_passes: DEFAULT_MAX_FAILED_PASSES,
        }
    }
}

impl AllocationConfig {
    pub fn with_patch(mut self, patch: PatchParams) -> Self {
        self.patch = patch;
        self
    }

    pub fn with_pruning(mut self, pruning: PruningConfig) -> Self {
        self.pruning = pruning;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        for p in &self.patches {
            p.patch.validate()?;
        }
        self.pruning.validate()?;
        self.kde.validate()?;
        if !(self.refresh_threshold > 0.0 && self.refresh_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "refresh_threshold must be in (0, 1], got {}",
                self.refresh_threshold
            )));
        }
        Ok(())
    }

    pub fn patch_for(&self, u: i32, v: i32) -> &PatchParams {
        self.patches
            .iter()
            .find(|p| p.u == u && p.v == v)
            .map_or(&self.patch, |p| &p.patch)
    }

    fn target_override(&self, u: i32, v: i32) -> Option<usize> {
        self.targets.iter().find(|t| t.u == u && t.v == v).map(|t| t.pixels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub u: i32,
    pub v: i32,
    pub target: usize,
    pub allocated: usize,
    pub patches: usize,
    /// Largest patch area drawn before truncation to the remaining target.
    pub max_drawn_area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub u: i32,
    pub v: i32,
    pub core: usize,
    pub pixels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AllocationOutcome {
    pub map: RasterGrid,
    pub transitions: Vec<TransitionReport>,
    pub patches: Vec<Patch>,
    /// Re-estimations of `p(y|u)` performed.
    pub refreshes: usize,
}

/// Mixes a base seed with a run index (splitmix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `E[min(A, cap)]` for the patch-area law, ignoring rounding.
pub fn expected_truncated_area(params: &PatchParams, cap: usize) -> f64 {
    let r = cap.max(1) as f64;
    let m = params.mean_area.round().max(1.0);
    if params.area_variance == 0.0 {
        return m.min(r);
    }
    let m = params.mean_area;
    let s2 = (1.0 + params.area_variance / (m * m)).ln();
    let s = s2.sqrt();
    let mu = m.ln() - 0.5 * s2;
    let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let lr = r.ln();
    let e = (mu + 0.5 * s2).exp() * phi((lr - mu - s2) / s) + r * (1.0 - phi((lr - mu) / s));
    e.clamp(1.0, r)
}

/// Runs one allocation step on `map_in`. Pixels outside the modelled initial
/// states, and masked pixels, are left untouched.
pub fn allocate(
    surface: &dyn TransitionSurface,
    map_in: &RasterGrid,
    features: &FeatureSpace,
    config: &AllocationConfig,
    seed: u64,
) -> Result<AllocationOutcome> {
    config.validate()?;
    features.ensure_aligned(map_in)?;
    map_in.require_codes()?;
    let transitions = surface.transitions();
    let mut states: Vec<i32> = transitions.iter().map(|t| t.0).collect();
    states.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = map_in.clone();
    let mut allocated = vec![false; map.len()];
    let mut local = vec![u32::MAX; map.len()];
    let mut features = Cow::Borrowed(features);
    let mut reports = Vec::new();
    let mut patches = Vec::new();
    let mut refreshes = 0;

    for u in states {
        let pixels = state_pixels(map_in, &features, u)?;
        let targets_v = targets_of(&transitions, u);
        let count = pixels.len();
        let mut targets: Vec<usize> = Vec::with_capacity(targets_v.len());
        for &v in &targets_v {
            let t = match config.target_override(u, v) {
                Some(t) => t,
                None => (surface.global_probability(u, v)? * count as f64).round() as usize,
            };
            targets.push(t);
        }
        let mut budget = count;
        for t in targets.iter_mut() {
            *t = (*t).min(budget);
            budget -= *t;
        }
        if count == 0 || targets.iter().all(|&t| t == 0) {
            for (&v, &t) in targets_v.iter().zip(&targets) {
                reports.push(TransitionReport { u, v, target: t, allocated: 0, patches: 0, max_drawn_area: 0 });
            }
            continue;
        }
        for (l, &p) in pixels.iter().enumerate() {
            local[p] = l as u32;
        }
        let mut run = StateRun {
            u,
            targets_v: &targets_v,
            targets: &targets,
            pixels: &pixels,
            local: &local,
            surface,
            config,
            map: &mut map,
            codes_in: map_in.codes().expect("categorical"),
            allocated: &mut allocated,
            reports: Vec::new(),
            patches: &mut patches,
            refreshes: 0,
        };
        match config.pruning.strategy {
            PruningStrategy::LcmRank => run.rank_directly(&features)?,
            PruningStrategy::UnbiasedSample => run.sample_cores(&features, &mut rng)?,
            PruningStrategy::None | PruningStrategy::DinamicaRank => {
                run.rejection_loop(&mut features, &mut rng)?
            }
        }
        refreshes += run.refreshes;
        reports.extend(run.reports);
        for &p in &pixels {
            local[p] = u32::MAX;
        }
    }
    Ok(AllocationOutcome {
        map,
        transitions: reports,
        patches,
        refreshes,
    })
}

/// Deterministic allocation of a single transition: the `target` state-`u`
/// pixels of highest `p(y|u,v)` become `v`.
pub fn lcm_style_allocate(
    surface: &dyn TransitionSurface,
    map_in: &RasterGrid,
    features: &FeatureSpace,
    u: i32,
    v: i32,
    target: usize,
) -> Result<RasterGrid> {
    let config = AllocationConfig {
        pruning: PruningConfig::lcm(),
        targets: vec![TransitionTarget { u, v, pixels: target }],
        ..AllocationConfig::default()
    };
    let single = SingleTransition { inner: surface, u, v };
    Ok(allocate(&single, map_in, features, &config, 0)?.map)
}

struct SingleTransition<'a> {
    inner: &'a dyn TransitionSurface,
    u: i32,
    v: i32,
}

impl TransitionSurface for SingleTransition<'_> {
    fn transitions(&self) -> Vec<(i32, i32)> {
        vec![(self.u, self.v)]
    }

    fn global_probability(&self, u: i32, v: i32) -> Result<f64> {
        self.inner.global_probability(u, v)
    }

    fn probabilities(&self, u: i32, pixels: &[usize], features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        let all = self.inner.probabilities(u, pixels, features)?;
        let k = targets_of(&self.inner.transitions(), u)
            .iter()
            .position(|&t| t == self.v)
            .ok_or_else(|| Error::InvalidArgument(format!("no transition {u} -> {}", self.v)))?;
        Ok(vec![all.into_iter().nth(k).expect("column exists")])
    }

    fn transition_densities(
        &self,
        u: i32,
        v: i32,
        pixels: &[usize],
        features: &FeatureSpace,
    ) -> Result<Option<Vec<f64>>> {
        self.inner.transition_densities(u, v, pixels, features)
    }
}

/// `p(y|u)` of the untouched state-`u` pixels, in fixed whitened coordinates.
struct StateDensityTracker {
    whitening: Whitening,
    bounds: Vec<[f64; 2]>,
    /// Density of the initial population at each local pixel.
    initial: Vec<f64>,
}

impl StateDensityTracker {
    fn fit(points: &[f64], d: usize, config: &KdeConfig) -> Result<Self> {
        let whitening = fit_whitening(points, d)?;
        let white = whitening.apply_batch(points)?;
        let kde = config.fit(&white, d, None)?;
        let initial = kde.estimate_batch(&white)?;
        Ok(Self {
            whitening,
            bounds: kde.bounds().to_vec(),
            initial,
        })
    }

    fn refit(&self, points: &[f64], d: usize, config: &KdeConfig) -> Result<BinnedKde> {
        let white = self.whitening.apply_batch(points)?;
        config.fit(&white, d, Some(self.bounds.clone()))
    }
}

struct StateRun<'a> {
    u: i32,
    targets_v: &'a [i32],
    targets: &'a [usize],
    pixels: &'a [usize],
    local: &'a [u32],
    surface: &'a dyn TransitionSurface,
    config: &'a AllocationConfig,
    map: &'a mut RasterGrid,
    codes_in: &'a [i32],
    allocated: &'a mut [bool],
    reports: Vec<TransitionReport>,
    patches: &'a mut Vec<Patch>,
    refreshes: usize,
}

/// Unallocated local pixels with O(1) removal.
struct ActiveSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl ActiveSet {
    fn new(n: usize, member: impl Fn(usize) -> bool) -> Self {
        let mut items = Vec::new();
        let mut pos = vec![u32::MAX; n];
        for l in 0..n {
            if member(l) {
                pos[l] = items.len() as u32;
                items.push(l as u32);
            }
        }
        Self { items, pos }
    }

    fn remove(&mut self, l: usize) {
        let p = self.pos[l];
        if p == u32::MAX {
            return;
        }
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(p as usize);
        if last as usize != l {
            self.pos[last as usize] = p;
        }
        self.pos[l] = u32::MAX;
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

impl StateRun<'_> {
    fn width(&self) -> usize {
        self.map.width()
    }

    fn eligible(&self, p: usize) -> bool {
        self.codes_in[p] == self.u && self.local[p] != u32::MAX && !self.allocated[p]
    }

    fn initial_columns(&self, features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        let cols = self.surface.probabilities(self.u, self.pixels, features)?;
        if cols.len() != self.targets_v.len() || cols.iter().any(|c| c.len() != self.pixels.len()) {
            return Err(Error::Dimension("surface returned a misshaped probability table".into()));
        }
        Ok(cols)
    }

    fn push_reports(&mut self, allocated: &[usize], patches: &[usize], max_area: &[usize]) {
        for k in 0..self.targets_v.len() {
            self.reports.push(TransitionReport {
                u: self.u,
                v: self.targets_v[k],
                target: self.targets[k],
                allocated: allocated[k],
                patches: patches[k],
                max_drawn_area: max_area[k],
            });
        }
    }

    /// Grows and commits a patch; returns the local indices absorbed.
    fn commit_patch<R: Rng + ?Sized>(&mut self, core: usize, k: usize, cap: usize, rng: &mut R) -> (Vec<usize>, usize) {
        let params = self.config.patch_for(self.u, self.targets_v[k]).clone();
        let drawn = params.draw_area(rng);
        let area = drawn.min(cap);
        let (w, h) = (self.width(), self.map.height());
        let pixels = {
            let this = &*self;
            grow_patch(w, h, core, area, &params, |p| this.eligible(p), rng)
        };
        let v = self.targets_v[k];
        let codes = self.map.codes_mut().expect("categorical");
        let mut locals = Vec::with_capacity(pixels.len());
        for &p in &pixels {
            codes[p] = v;
            self.allocated[p] = true;
            locals.push(self.local[p] as usize);
        }
        self.patches.push(Patch { u: self.u, v, core, pixels });
        (locals, drawn)
    }

    fn rejection_loop<R: Rng + ?Sized>(&mut self, features: &mut Cow<'_, FeatureSpace>, rng: &mut R) -> Result<()> {
        let n = self.pixels.len();
        let nk = self.targets_v.len();
        let d = features.dims();
        let pruned = self.config.pruning.strategy == PruningStrategy::DinamicaRank;
        let mut p0 = self.initial_columns(features)?;
        let globals: Vec<f64> = self
            .targets_v
            .iter()
            .map(|&v| self.surface.global_probability(self.u, v))
            .collect::<Result<_>>()?;

        // Candidate masks and their probability mass (rank pruning only).
        let mut member: Vec<Vec<bool>> = Vec::new();
        let mut mass = vec![0.0; nk];
        if pruned {
            for k in 0..nk {
                let keep = prune_candidates(
                    &p0[k],
                    &p0[k],
                    self.targets[k],
                    &self.config.pruning,
                    rng,
                )?;
                let mut m = vec![false; n];
                for &l in &keep {
                    m[l] = true;
                    mass[k] += p0[k][l];
                }
                member.push(m);
            }
        }
        let mut active = ActiveSet::new(n, |l| !pruned || member.iter().any(|m| m[l]));

        let mut correction = vec![1.0; n];
        let mut tracker: Option<StateDensityTracker> = None;
        let refresh_enabled = !pruned && self.config.refresh_threshold < 1.0;
        let mut since_refresh = 0usize;

        let mut remaining: Vec<usize> = self.targets.to_vec();
        let mut remaining_count = n;
        let mut allocated = vec![0usize; nk];
        let mut patch_count = vec![0usize; nk];
        let mut max_area = vec![0usize; nk];
        let mut failed = 0usize;
        let mut swaps: HashMap<usize, usize> = HashMap::new();
        let mut probs = vec![0.0; nk];

        while remaining.iter().any(|&r| r > 0) && active.len() > 0 {
            // Per-transition factor turning P0 into the current probability,
            // and the expected truncated patch area.
            let factor: Vec<f64> = (0..nk)
                .map(|k| {
                    if remaining[k] == 0 {
                        0.0
                    } else if pruned {
                        if mass[k] > 0.0 { remaining[k] as f64 / mass[k] } else { 0.0 }
                    } else if globals[k] > 0.0 {
                        remaining[k] as f64 / remaining_count as f64 / globals[k]
                    } else {
                        0.0
                    }
                })
                .collect();
            let areas: Vec<f64> = (0..nk)
                .map(|k| {
                    expected_truncated_area(
                        self.config.patch_for(self.u, self.targets_v[k]),
                        remaining[k],
                    )
                })
                .collect();
            let selection = |l: usize, probs: &mut [f64]| -> f64 {
                let mut s = 0.0;
                for k in 0..nk {
                    let p = if factor[k] == 0.0 || (pruned && !member[k][l]) {
                        0.0
                    } else {
                        (p0[k][l] * factor[k] * correction[l]).min(1.0)
                    };
                    probs[k] = p;
                    s += p;
                }
                let scale = if s > 1.0 { 1.0 / s } else { 1.0 };
                let mut total = 0.0;
                for k in 0..nk {
                    probs[k] *= scale / areas[k];
                    total += probs[k];
                }
                total
            };

            // Steps 1-2: the first candidate in a uniformly random order of
            // the active pixels is a uniform draw among all candidates.
            swaps.clear();
            let m = active.len();
            let mut chosen = None;
            for t in 0..m {
                let j = rng.random_range(t..m);
                let at_j = *swaps.get(&j).unwrap_or(&j);
                let at_t = *swaps.get(&t).unwrap_or(&t);
                swaps.insert(j, at_t);
                let l = active.items[at_j] as usize;
                selection(l, &mut probs);
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for k in 0..nk {
                    acc += probs[k];
                    if r < acc {
                        chosen = Some((l, k));
                        break;
                    }
                }
                if chosen.is_some() {
                    break;
                }
            }

            let Some((l, k)) = chosen else {
                failed += 1;
                let total: f64 = active.items.iter().map(|&l| selection(l as usize, &mut probs)).sum();
                if total == 0.0 || failed >= self.config.max_failed_passes {
                    if total > 0.0 {
                        warn!(
                            "state {}: giving up after {failed} empty sweeps with {:?} pixels left",
                            self.u, remaining
                        );
                    }
                    break;
                }
                continue;
            };
            failed = 0;

            // Step 3.
            let (locals, drawn) = self.commit_patch(self.pixels[l], k, remaining[k], rng);
            max_area[k] = max_area[k].max(drawn);
            patch_count[k] += 1;
            allocated[k] += locals.len();
            for &q in &locals {
                active.remove(q);
                if pruned {
                    for kk in 0..nk {
                        if member[kk][q] {
                            mass[kk] = (mass[kk] - p0[kk][q]).max(0.0);
                        }
                    }
                }
            }
            // Step 4.
            remaining[k] -= locals.len();
            remaining_count -= locals.len();
            since_refresh += locals.len();

            // Steps 5-6.
            if refresh_enabled
                && active.len() > d
                && since_refresh as f64 > self.config.refresh_threshold * n as f64
                && remaining.iter().any(|&r| r > 0)
            {
                since_refresh = 0;
                if let Some(dd) = &self.config.dynamic_distance {
                    let dist = distance_to_state(self.map, dd.state)?;
                    features.to_mut().set_feature(dd.feature, &dist)?;
                    p0 = self.initial_columns(features)?;
                    tracker = None;
                }
                if tracker.is_none() {
                    match StateDensityTracker::fit(&features.gather(self.pixels), d, &self.config.kde) {
                        Ok(t) => tracker = Some(t),
                        Err(e) => {
                            warn!("state {}: density refresh disabled ({e})", self.u);
                            continue;
                        }
                    }
                }
                let tr = tracker.as_ref().expect("fitted");
                let rest: Vec<usize> = active.items.iter().map(|&l| self.pixels[l as usize]).collect();
                let points = features.gather(&rest);
                let current = tr.refit(&points, d, &self.config.kde)?;
                let values = current.estimate_batch(&tr.whitening.apply_batch(&points)?)?;
                for (&l, &pc) in active.items.iter().zip(&values) {
                    let l = l as usize;
                    correction[l] = if pc > DENSITY_FLOOR { tr.initial[l] / pc } else { 0.0 };
                }
                self.refreshes += 1;
                debug!("state {}: refreshed p(y|u) on {} pixels", self.u, rest.len());
            }
        }
        self.push_reports(&allocated, &patch_count, &max_area);
        Ok(())
    }

    /// Weights proportional to `p(y|u,v)` for each transition.
    fn densities(&self, features: &FeatureSpace, columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.targets_v.len());
        let mut fallback: Option<Vec<f64>> = None;
        for (k, &v) in self.targets_v.iter().enumerate() {
            match self.surface.transition_densities(self.u, v, self.pixels, features)? {
                Some(dens) => out.push(dens),
                None => {
                    if fallback.is_none() {
                        let d = features.dims();
                        fallback = Some(
                            StateDensityTracker::fit(&features.gather(self.pixels), d, &self.config.kde)?
                                .initial,
                        );
                    }
                    let p_u = fallback.as_ref().expect("fitted");
                    out.push(columns[k].iter().zip(p_u).map(|(p, q)| p * q).collect());
                }
            }
        }
        Ok(out)
    }

    fn rank_directly(&mut self, features: &FeatureSpace) -> Result<()> {
        let nk = self.targets_v.len();
        let columns = self.initial_columns(features)?;
        let dens = self.densities(features, &columns)?;
        let mut allocated = vec![0usize; nk];
        let codes = self.map.codes_mut().expect("categorical");
        for k in 0..nk {
            let order = top_k(&dens[k], dens[k].len());
            for l in order {
                if allocated[k] == self.targets[k] {
                    break;
                }
                let p = self.pixels[l];
                if self.allocated[p] {
                    continue;
                }
                codes[p] = self.targets_v[k];
                self.allocated[p] = true;
                allocated[k] += 1;
            }
        }
        self.push_reports(&allocated, &allocated.clone(), &vec![1; nk]);
        Ok(())
    }

    fn sample_cores<R: Rng + ?Sized>(&mut self, features: &FeatureSpace, rng: &mut R) -> Result<()> {
        let nk = self.targets_v.len();
        let columns = self.initial_columns(features)?;
        let mut allocated = vec![0usize; nk];
        let mut patch_count = vec![0usize; nk];
        let mut max_area = vec![0usize; nk];
        for k in 0..nk {
            let cores = prune_candidates(
                &columns[k],
                &columns[k],
                self.targets[k],
                &self.config.pruning,
                rng,
            )?;
            for l in cores {
                let remaining = self.targets[k] - allocated[k];
                if remaining == 0 {
                    break;
                }
                let p = self.pixels[l];
                if self.allocated[p] {
                    continue;
                }
                let (locals, drawn) = self.commit_patch(p, k, remaining, rng);
                allocated[k] += locals.len();
                patch_count[k] += 1;
                max_area[k] = max_area[k].max(drawn);
            }
        }
        self.push_reports(&allocated, &patch_count, &max_area);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 100);
        assert_eq!(derive_seed(42, 3), s[3]);
    }

    #[test]
    fn truncated_area_expectation() {
        let fixed = PatchParams::new(20.0, 0.0, 1.0, Connectivity::Four).unwrap();
        assert_eq!(expected_truncated_area(&fixed, 100), 20.0);
        assert_eq!(expected_truncated_area(&fixed, 7), 7.0);
        let p = PatchParams::new(20.0, 300.0, 1.0, Connectivity::Four).unwrap();
        assert!((expected_truncated_area(&p, 1_000_000) - 20.0).abs() < 1e-9);
        // Monte Carlo oracle for a binding cap
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 400_000;
        let mc: f64 = (0..n).map(|_| p.draw_area(&mut rng).min(15) as f64).sum::<f64>() / n as f64;
        assert!((expected_truncated_area(&p, 15) - mc).abs() < 0.3, "{mc}");
    }
}
