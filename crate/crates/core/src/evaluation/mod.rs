//! Synthetic ground truth and the two comparison protocols: calibration
//! against the exact probabilities, and calibration after an allocation
//! round trip.

pub mod ground_truth;
pub mod landscape;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ground_truth::{GroundTruthSpec, GroundTruthSurface, SyntheticGroundTruth};
pub use landscape::{box_smooth, generate_landscape, generate_synthetic_landscape, LandscapeConfig, StateShare};

use crate::allocation::{
    allocate, derive_seed, AllocationConfig, PatchParams, PruningConfig, PruningStrategy, TransitionSurface,
};
use crate::calibration::{calibrate, state_pixels, TransitionModel};
use crate::density::KdeConfig;
use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::raster::{observed_transition_matrix, RasterGrid, StateLegend};

/// `(1/m) sum |exact_i - estimated_i|`.
pub fn mean_absolute_error(exact: &[f64], estimated: &[f64]) -> Result<f64> {
    if exact.len() != estimated.len() {
        return Err(Error::Dimension(format!(
            "{} exact values, {} estimates",
            exact.len(),
            estimated.len()
        )));
    }
    if exact.is_empty() {
        return Err(Error::InvalidArgument("no pixel to compare".into()));
    }
    let s: f64 = exact.iter().zip(estimated).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / exact.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargestDifference {
    pub max_abs: f64,
    /// Pixels whose difference is within `tolerance` of the maximum.
    pub count: usize,
    pub tolerance: f64,
}

pub fn largest_difference(exact: &[f64], estimated: &[f64], tolerance: f64) -> Result<LargestDifference> {
    mean_absolute_error(exact, estimated)?;
    let diffs: Vec<f64> = exact.iter().zip(estimated).map(|(a, b)| (a - b).abs()).collect();
    let max_abs = diffs.iter().copied().fold(0.0, f64::max);
    let count = diffs.iter().filter(|&&d| d >= max_abs - tolerance).count();
    Ok(LargestDifference { max_abs, count, tolerance })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Bootstrap standard error of the mean.
pub fn bootstrap_standard_error(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let m = mean(&means);
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Bootstrap standard error of `mean(a) - mean(b)` for independent samples.
pub fn bootstrap_difference_se(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    let sa = bootstrap_standard_error(a, resamples, seed);
    let sb = bootstrap_standard_error(b, resamples, derive_seed(seed, 1));
    (sa * sa + sb * sb).sqrt()
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Evaluates `prob_fn` along `axis` with the other variables pinned to
/// `fixed` (which has one entry fewer than the dimension).
pub fn one_dimensional_cut(
    mut prob_fn: impl FnMut(&[f64]) -> Result<f64>,
    fixed: &[f64],
    axis: usize,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if axis > fixed.len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for {} variables",
            fixed.len() + 1
        )));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument("cut grid must be non-empty and sorted".into()));
    }
    let mut y: Vec<f64> = fixed.to_vec();
    y.insert(axis, 0.0);
    grid.iter()
        .map(|&x| {
            y[axis] = x;
            prob_fn(&y).map(|p| (x, p))
        })
        .collect()
}

/// A fitted estimate of `P(v|u,y)` for one transition.
pub trait ProbabilityEstimate {
    /// Probabilities at a flattened table of raw feature tuples.
    fn probability(&self, points: &[f64]) -> Result<Vec<f64>>;
}

/// Produces a [`ProbabilityEstimate`] from two maps.
pub trait Calibrator {
    type Estimate: ProbabilityEstimate;
    fn fit(&self, map_t0: &RasterGrid, map_t1: &RasterGrid, features: &FeatureSpace) -> Result<Self::Estimate>;
}

pub struct FittedTransition {
    pub model: TransitionModel,
    pub u: i32,
    pub v: i32,
}

impl ProbabilityEstimate for FittedTransition {
    fn probability(&self, points: &[f64]) -> Result<Vec<f64>> {
        let k = self
            .model
            .targets_from(self.u)
            .iter()
            .position(|&t| t == self.v)
            .ok_or_else(|| Error::InvalidArgument(format!("no transition {} -> {}", self.u, self.v)))?;
        Ok(self.model.probabilities(self.u, points)?.swap_remove(k))
    }
}

/// Binned-KDE calibration of a single transition.
#[derive(Clone, Debug)]
pub struct KdeCalibrator {
    pub legend: StateLegend,
    pub u: i32,
    pub v: i32,
    pub kde: KdeConfig,
}

impl Calibrator for KdeCalibrator {
    type Estimate = FittedTransition;
    fn fit(&self, map_t0: &RasterGrid, map_t1: &RasterGrid, features: &FeatureSpace) -> Result<FittedTransition> {
        let model = calibrate(map_t0, map_t1, features, &self.legend, &[(self.u, self.v)], &self.kde, None)?;
        Ok(FittedTransition { model, u: self.u, v: self.v })
    }
}

impl ProbabilityEstimate for SyntheticGroundTruth {
    fn probability(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        if points.len() % d != 0 {
            return Err(Error::Dimension(format!("table length {} is not a multiple of {d}", points.len())));
        }
        Ok(points.chunks(d).map(|y| SyntheticGroundTruth::probability(self, y)).collect())
    }
}

/// Returns the exact probabilities, whatever the maps.
pub struct OracleCalibrator<'a>(pub &'a SyntheticGroundTruth);

impl<'a> Calibrator for OracleCalibrator<'a> {
    type Estimate = SyntheticGroundTruth;
    fn fit(&self, _: &RasterGrid, _: &RasterGrid, _: &FeatureSpace) -> Result<SyntheticGroundTruth> {
        Ok(self.0.clone())
    }
}

pub struct ConstantEstimate {
    pub value: f64,
    pub dims: usize,
}

impl ProbabilityEstimate for ConstantEstimate {
    fn probability(&self, points: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.value; points.len() / self.dims])
    }
}

/// The observed global rate `P(v|u)` everywhere.
pub struct ConstantCalibrator {
    pub legend: StateLegend,
    pub u: i32,
    pub v: i32,
}

impl Calibrator for ConstantCalibrator {
    type Estimate = ConstantEstimate;
    fn fit(&self, map_t0: &RasterGrid, map_t1: &RasterGrid, features: &FeatureSpace) -> Result<ConstantEstimate> {
        let m = observed_transition_matrix(map_t0, map_t1, &self.legend)?;
        Ok(ConstantEstimate {
            value: m.get(self.u, self.v)?,
            dims: features.dims(),
        })
    }
}

/// Allocates `u -> v` from `map_t0` with the exact probabilities.
pub fn forge_reference_map(
    map_t0: &RasterGrid,
    features: &FeatureSpace,
    truth: &SyntheticGroundTruth,
    u: i32,
    v: i32,
    patch: &PatchParams,
    seed: u64,
) -> Result<RasterGrid> {
    let surface = GroundTruthSurface::new(truth, u, v, map_t0, features)?;
    let config = AllocationConfig::default().with_patch(patch.clone());
    Ok(allocate(&surface, map_t0, features, &config, seed)?.map)
}

pub struct CalibrationComparison<E> {
    pub epsilon: f64,
    pub estimate: E,
    pub pixels: Vec<usize>,
    pub exact: Vec<f64>,
    pub estimated: Vec<f64>,
}

/// Calibrates with `calibrator` and scores it over the state-`u` pixels of `map_t0`.
pub fn run_calibration_comparison<C: Calibrator>(
    map_t0: &RasterGrid,
    map_t1: &RasterGrid,
    features: &FeatureSpace,
    truth: &SyntheticGroundTruth,
    u: i32,
    calibrator: &C,
) -> Result<CalibrationComparison<C::Estimate>> {
    let pixels = state_pixels(map_t0, features, u)?;
    let exact = truth.probabilities_at(features, &pixels);
    let estimate = calibrator.fit(map_t0, map_t1, features)?;
    let estimated = estimate.probability(&features.gather(&pixels))?;
    Ok(CalibrationComparison {
        epsilon: mean_absolute_error(&exact, &estimated)?,
        estimate,
        pixels,
        exact,
        estimated,
    })
}

pub struct FullComparison<E> {
    /// Error of the first repetition.
    pub epsilon_tot: f64,
    /// Error of the estimate averaged over all repetitions.
    pub epsilon_tot_r: f64,
    pub per_run: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub first_estimate: E,
    /// Whether every repetition produced the same allocated map.
    pub identical_maps: bool,
}

/// Allocates `map_t1 -> t2` from `surface` `repetitions` times, re-calibrates
/// each `(t1, t2)` pair and scores the estimates at `pixels` against `exact`.
#[allow(clippy::too_many_arguments)]
pub fn run_full_comparison<C: Calibrator>(
    map_t1: &RasterGrid,
    surface: &dyn TransitionSurface,
    features: &FeatureSpace,
    pixels: &[usize],
    exact: &[f64],
    allocation: &AllocationConfig,
    calibrator: &C,
    repetitions: usize,
    base_seed: u64,
) -> Result<FullComparison<C::Estimate>> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let points = features.gather(pixels);
    let mut mean_estimate = vec![0.0; pixels.len()];
    let mut per_run = Vec::with_capacity(repetitions);
    let mut first: Option<(RasterGrid, C::Estimate)> = None;
    let mut identical = true;
    for r in 0..repetitions {
        let t2 = allocate(surface, map_t1, features, allocation, derive_seed(base_seed, r as u64))?.map;
        let estimate = calibrator.fit(map_t1, &t2, features)?;
        let values = estimate.probability(&points)?;
        per_run.push(mean_absolute_error(exact, &values)?);
        // Running mean: identical repetitions leave it bit-exact.
        let k = (r + 1) as f64;
        for (m, v) in mean_estimate.iter_mut().zip(&values) {
            *m += (v - *m) / k;
        }
        match &first {
            None => first = Some((t2, estimate)),
            Some((map, _)) => identical &= *map == t2,
        }
    }
    let (_, first_estimate) = first.expect("at least one repetition");
    Ok(FullComparison {
        epsilon_tot: per_run[0],
        epsilon_tot_r: mean_absolute_error(exact, &mean_estimate)?,
        per_run,
        mean_estimate,
        first_estimate,
        identical_maps: identical,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutSeries {
    pub name: String,
    pub axis: usize,
    /// Values of the other variables, in order.
    pub fixed: Vec<f64>,
    pub abscissa: Vec<f64>,
    pub exact: Vec<f64>,
    pub estimated: Vec<f64>,
    pub post_allocation: Vec<f64>,
}

impl CutSeries {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["abscissa", "exact", "estimated", "post_allocation"])?;
        for i in 0..self.abscissa.len() {
            let post = self.post_allocation.get(i).map_or(String::new(), |v| v.to_string());
            w.write_record([
                self.abscissa[i].to_string(),
                self.exact[i].to_string(),
                self.estimated[i].to_string(),
                post,
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Largest `|exact - estimated|` over abscissae within `[lo, hi]`.
    pub fn max_error_within(&self, lo: f64, hi: f64) -> f64 {
        self.abscissa
            .iter()
            .zip(self.exact.iter().zip(&self.estimated))
            .filter(|(x, _)| lo <= **x && **x <= hi)
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub epsilon_calib: f64,
    pub epsilon_tot: f64,
    pub epsilon_tot_r: f64,
    pub repetitions: usize,
    /// Pixels in the error sums.
    pub m: usize,
    pub transited: usize,
    pub largest_difference: LargestDifference,
    /// Wall-clock seconds per stage.
    pub runtimes: BTreeMap<String, f64>,
    pub cuts: Vec<CutSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutSpec {
    pub name: String,
    pub axis: usize,
    pub fixed: Vec<f64>,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl CutSpec {
    /// Distance axis at elevation 300 m and slope 2 degrees.
    pub fn figure() -> Self {
        Self {
            name: "distance_e300_s2".into(),
            axis: 2,
            fixed: vec![300.0, 2.0],
            from: 0.0,
            to: 60.0,
            points: 61,
        }
    }

    /// Distance axis at the mean elevation of the ground truth and slope 2 degrees.
    pub fn through_mode() -> Self {
        Self {
            name: "distance_e150_s2".into(),
            fixed: vec![150.0, 2.0],
            ..Self::figure()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub landscape: LandscapeConfig,
    pub truth: GroundTruthSpec,
    pub u: i32,
    pub v: i32,
    /// Patches used to forge the reference map.
    #[serde(default)]
    pub patch: PatchParams,
    #[serde(default)]
    pub kde: KdeConfig,
    pub seed: u64,
    /// When set, the amplitude of the ground truth is rescaled so that the
    /// mean of `P*` over the state-`u` pixels equals this rate.
    #[serde(default)]
    pub target_rate: Option<f64>,
    #[serde(default = "default_cuts")]
    pub cuts: Vec<CutSpec>,
}

fn default_cuts() -> Vec<CutSpec> {
    vec![CutSpec::figure(), CutSpec::through_mode()]
}

/// Global rate `P(v|u)` of the benchmark transition.
pub const BENCHMARK_RATE: f64 = 0.005;

impl BenchmarkConfig {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            landscape: LandscapeConfig::seven_classes(width, height, 5.0),
            truth: GroundTruthSpec::benchmark(),
            u: 4,
            v: 5,
            patch: PatchParams::single_pixel(),
            kde: KdeConfig::default(),
            seed,
            target_rate: Some(BENCHMARK_RATE),
            cuts: default_cuts(),
        }
    }
}

/// One line of a strategy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub pruning: PruningConfig,
    pub epsilon_calib: f64,
    /// First repetition.
    pub epsilon_tot: f64,
    /// Mean and bootstrap standard error of the single-run errors.
    pub epsilon_tot_mean: f64,
    pub epsilon_tot_se: f64,
    pub epsilon_tot_r: f64,
    pub identical_maps: bool,
    pub per_run: Vec<f64>,
    pub seconds: f64,
}

pub fn strategy_label(pruning: &PruningConfig) -> String {
    match pruning.strategy {
        PruningStrategy::None => "none".into(),
        PruningStrategy::DinamicaRank => format!("dinamica_rank F={}", pruning.factor),
        PruningStrategy::LcmRank => "lcm_rank".into(),
        PruningStrategy::UnbiasedSample => "unbiased_sample".into(),
    }
}

/// No pruning, rank pruning at F = 10 and 100, and the deterministic ranking.
pub fn default_strategies() -> Vec<PruningConfig> {
    vec![
        PruningConfig::none(),
        PruningConfig::dinamica(10.0),
        PruningConfig::dinamica(100.0),
        PruningConfig::lcm(),
    ]
}

/// The seven-class legend when it covers both maps, otherwise their codes.
fn legend_for(map_t0: &RasterGrid, map_t1: &RasterGrid) -> Result<StateLegend> {
    let mut present: Vec<i32> = map_t0.census().into_keys().collect();
    present.extend(map_t1.census().into_keys());
    present.sort_unstable();
    present.dedup();
    let seven = StateLegend::seven_classes();
    if present.iter().all(|c| seven.index_of(*c).is_some()) {
        Ok(seven)
    } else {
        StateLegend::from_codes(&present)
    }
}

/// A forged calibration pair with its exact transition probabilities.
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub legend: StateLegend,
    pub truth: SyntheticGroundTruth,
    pub map_t0: RasterGrid,
    pub map_t1: RasterGrid,
    pub features: FeatureSpace,
    /// State-`u` pixels of `map_t0`, the error pixel set.
    pub pixels: Vec<usize>,
    pub exact: Vec<f64>,
}

impl Benchmark {
    pub fn build(config: &BenchmarkConfig) -> Result<Self> {
        let (map_t0, features) = generate_landscape(&config.landscape, derive_seed(config.seed, 0))?;
        let pixels = state_pixels(&map_t0, &features, config.u)?;
        let mut truth = SyntheticGroundTruth::new(config.truth.clone())?;
        if let Some(rate) = config.target_rate {
            let mean = mean(&truth.probabilities_at(&features, &pixels));
            if !(rate > 0.0 && rate < 1.0) || mean <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "cannot reach rate {rate}: mean of the unit-amplitude truth is {mean}"
                )));
            }
            let amplitude = config.truth.amplitude * rate / mean;
            truth = SyntheticGroundTruth::new(config.truth.clone().with_amplitude(amplitude))?;
            if truth.peak() > 1.0 {
                return Err(Error::InvalidArgument(format!("rate {rate} needs a peak probability above 1")));
            }
        }
        let map_t1 = forge_reference_map(
            &map_t0,
            &features,
            &truth,
            config.u,
            config.v,
            &config.patch,
            derive_seed(config.seed, 1),
        )?;
        let legend = legend_for(&map_t0, &map_t1)?;
        let exact = truth.probabilities_at(&features, &pixels);
        let mut config = config.clone();
        config.truth = truth.spec().clone();
        config.target_rate = None;
        Ok(Self {
            config,
            legend,
            truth,
            map_t0,
            map_t1,
            features,
            pixels,
            exact,
        })
    }

    /// Reassembles a benchmark from stored maps and an already resolved config
    /// (amplitude fixed, no target rate).
    pub fn from_parts(
        config: BenchmarkConfig,
        map_t0: RasterGrid,
        map_t1: RasterGrid,
        features: FeatureSpace,
    ) -> Result<Self> {
        if config.target_rate.is_some() {
            return Err(Error::InvalidArgument("a stored benchmark must have a fixed amplitude".into()));
        }
        if !map_t0.same_shape(&map_t1) {
            return Err(Error::Dimension("t0 and t1 maps differ in shape".into()));
        }
        features.ensure_aligned(&map_t0)?;
        let truth = SyntheticGroundTruth::new(config.truth.clone())?;
        let pixels = state_pixels(&map_t0, &features, config.u)?;
        let exact = truth.probabilities_at(&features, &pixels);
        let legend = legend_for(&map_t0, &map_t1)?;
        Ok(Self {
            config,
            legend,
            truth,
            map_t0,
            map_t1,
            features,
            pixels,
            exact,
        })
    }

    pub fn transited(&self) -> usize {
        let a = self.map_t0.codes().expect("categorical");
        let b = self.map_t1.codes().expect("categorical");
        self.pixels.iter().filter(|&&p| a[p] != b[p]).count()
    }

    pub fn calibrator(&self) -> KdeCalibrator {
        KdeCalibrator {
            legend: self.legend.clone(),
            u: self.config.u,
            v: self.config.v,
            kde: self.config.kde.clone(),
        }
    }

    pub fn calibrate(&self) -> Result<CalibrationComparison<FittedTransition>> {
        run_calibration_comparison(
            &self.map_t0,
            &self.map_t1,
            &self.features,
            &self.truth,
            self.config.u,
            &self.calibrator(),
        )
    }

    /// Full protocol: calibration, `repetitions` allocation round trips, cuts.
    pub fn evaluate(&self, allocation: &AllocationConfig, repetitions: usize, seed: u64) -> Result<EvaluationReport> {
        self.evaluate_with(None, allocation, repetitions, seed)
    }

    /// As [`Self::evaluate`], allocating from `model` when given instead of a
    /// fresh calibration. `epsilon_calib` always scores `model`'s estimate.
    pub fn evaluate_with(
        &self,
        model: Option<TransitionModel>,
        allocation: &AllocationConfig,
        repetitions: usize,
        seed: u64,
    ) -> Result<EvaluationReport> {
        let mut runtimes = BTreeMap::new();
        let start = Instant::now();
        let calib = match model {
            None => self.calibrate()?,
            Some(model) => {
                let estimate = FittedTransition { model, u: self.config.u, v: self.config.v };
                let estimated = estimate.probability(&self.features.gather(&self.pixels))?;
                CalibrationComparison {
                    epsilon: mean_absolute_error(&self.exact, &estimated)?,
                    estimate,
                    pixels: self.pixels.clone(),
                    exact: self.exact.clone(),
                    estimated,
                }
            }
        };
        runtimes.insert("calibration".to_string(), start.elapsed().as_secs_f64());
        let start = Instant::now();
        let full = run_full_comparison(
            &self.map_t1,
            &calib.estimate.model,
            &self.features,
            &self.pixels,
            &self.exact,
            allocation,
            &self.calibrator(),
            repetitions,
            seed,
        )?;
        runtimes.insert("allocation_round_trips".to_string(), start.elapsed().as_secs_f64());
        let cuts = self
            .config
            .cuts
            .iter()
            .map(|c| self.cut(c, &calib.estimate, Some(&full.first_estimate)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EvaluationReport {
            epsilon_calib: calib.epsilon,
            epsilon_tot: full.epsilon_tot,
            epsilon_tot_r: full.epsilon_tot_r,
            repetitions,
            m: self.pixels.len(),
            transited: self.transited(),
            largest_difference: largest_difference(&calib.exact, &calib.estimated, 1e-3)?,
            runtimes,
            cuts,
        })
    }

    /// Runs the round-trip protocol once per pruning strategy from a single
    /// calibration, with the same seeds for every strategy.
    pub fn compare(
        &self,
        strategies: &[PruningConfig],
        base: &AllocationConfig,
        repetitions: usize,
        seed: u64,
    ) -> Result<Vec<StrategyRow>> {
        let calib = self.calibrate()?;
        let mut rows = Vec::with_capacity(strategies.len());
        for pruning in strategies {
            let start = Instant::now();
            let allocation = base.clone().with_pruning(pruning.clone());
            let full = run_full_comparison(
                &self.map_t1,
                &calib.estimate.model,
                &self.features,
                &self.pixels,
                &self.exact,
                &allocation,
                &self.calibrator(),
                repetitions,
                seed,
            )?;
            rows.push(StrategyRow {
                strategy: strategy_label(pruning),
                pruning: pruning.clone(),
                epsilon_calib: calib.epsilon,
                epsilon_tot: full.epsilon_tot,
                epsilon_tot_mean: mean(&full.per_run),
                epsilon_tot_se: bootstrap_standard_error(&full.per_run, 1000, derive_seed(seed, 7)),
                epsilon_tot_r: full.epsilon_tot_r,
                identical_maps: full.identical_maps,
                per_run: full.per_run,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(rows)
    }

    pub fn cut(
        &self,
        spec: &CutSpec,
        estimate: &dyn ProbabilityEstimate,
        post_allocation: Option<&dyn ProbabilityEstimate>,
    ) -> Result<CutSeries> {
        let grid = linspace(spec.from, spec.to, spec.points);
        let exact = one_dimensional_cut(|y| self.truth.checked_probability(y), &spec.fixed, spec.axis, &grid)?;
        let points: Vec<f64> = one_dimensional_cut(|_| Ok(0.0), &spec.fixed, spec.axis, &grid)?
            .iter()
            .flat_map(|&(x, _)| {
                let mut y = spec.fixed.clone();
                y.insert(spec.axis, x);
                y
            })
            .collect();
        let estimated = estimate.probability(&points)?;
        let post = match post_allocation {
            Some(e) => e.probability(&points)?,
            None => Vec::new(),
        };
        Ok(CutSeries {
            name: spec.name.clone(),
            axis: spec.axis,
            fixed: spec.fixed.clone(),
            abscissa: grid,
            exact: exact.into_iter().map(|(_, p)| p).collect(),
            estimated,
            post_allocation: post,
        })
    }
}
