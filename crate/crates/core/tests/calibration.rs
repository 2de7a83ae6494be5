use lucc::calibration::{calibrate, extract_calibration_set, TransitionModel};
use lucc::density::KdeConfig;
use lucc::features::FeatureSpace;
use lucc::raster::{observed_transition_matrix, RasterGrid, StateLegend};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Scene {
    t0: RasterGrid,
    t1: RasterGrid,
    features: FeatureSpace,
    legend: StateLegend,
}

/// Square scene with `d` normal features; state-1 pixels turn into 2 with
/// probability `rate(y)`.
fn scene(side: usize, d: usize, seed: u64, rate: impl Fn(&[f64]) -> f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = side * side;
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut t0 = vec![0; n];
    let mut t1 = vec![0; n];
    for i in 0..n {
        t0[i] = if rng.random::<f64>() < 0.8 { 1 } else { 3 };
        let y: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        t1[i] = if t0[i] == 1 && rng.random::<f64>() < rate(&y) { 2 } else { t0[i] };
    }
    let rasters: Vec<RasterGrid> = cols
        .into_iter()
        .map(|c| RasterGrid::continuous(side, side, 1.0, c).unwrap())
        .collect();
    let names = (0..d).map(|k| format!("y{k}")).collect();
    Scene {
        t0: RasterGrid::categorical(side, side, 1.0, t0).unwrap(),
        t1: RasterGrid::categorical(side, side, 1.0, t1).unwrap(),
        features: FeatureSpace::from_rasters(names, &rasters).unwrap(),
        legend: StateLegend::from_codes(&[1, 2, 3]).unwrap(),
    }
}

fn model_for(s: &Scene, config: &KdeConfig) -> TransitionModel {
    calibrate(&s.t0, &s.t1, &s.features, &s.legend, &[(1, 2)], config, None).unwrap()
}

fn probability_column(model: &TransitionModel, s: &Scene) -> (Vec<usize>, Vec<f64>) {
    let pixels = model.evaluation_pixels(1).unwrap().to_vec();
    let map = model.prob_map(1, 2).unwrap().data().unwrap();
    let values = pixels.iter().map(|&i| map[i]).collect();
    let _ = s;
    (pixels, values)
}

#[test]
fn extraction_matches_exhaustive_scan() {
    let s = scene(32, 2, 1, |_| 0.3);
    let set = extract_calibration_set(&s.t0, &s.t1, &s.features, 1, 2).unwrap();
    let a = s.t0.codes().unwrap();
    let b = s.t1.codes().unwrap();
    let mut state = vec![];
    let mut moved = vec![];
    for i in 0..32 * 32 {
        if a[i] == 1 {
            state.push(i);
            if b[i] == 2 {
                moved.push(i);
            }
        }
    }
    assert_eq!(set.state_pixels, state);
    assert_eq!(set.transited_pixels, moved);
    assert_eq!(set.z_transited, s.features.gather(&moved));
    assert!(set.n() <= set.big_n());
}

#[test]
fn no_change_and_total_change() {
    let s = scene(20, 2, 2, |_| 0.0);
    let set = extract_calibration_set(&s.t0, &s.t1, &s.features, 1, 2).unwrap();
    assert_eq!(set.n(), 0);
    assert_eq!(set.big_n(), s.t0.census()[&1]);

    let s = scene(20, 2, 3, |_| 1.0);
    let set = extract_calibration_set(&s.t0, &s.t1, &s.features, 1, 2).unwrap();
    assert_eq!(set.n(), set.big_n());

    assert!(extract_calibration_set(&s.t0, &s.t1, &s.features, 2, 1).is_err());
}

#[test]
fn no_observed_transition_gives_zero_map() {
    let s = scene(30, 2, 4, |_| 0.0);
    let model = model_for(&s, &KdeConfig::default());
    let (_, p) = probability_column(&model, &s);
    assert!(p.iter().all(|&x| x == 0.0));
}

#[test]
fn uninformative_features_give_constant_probability() {
    let c = 0.1;
    let s = scene(300, 2, 5, |_| c);
    let config = KdeConfig::default();
    let model = model_for(&s, &config);
    let global = model.global().get(1, 2).unwrap();
    let (pixels, p) = probability_column(&model, &s);

    // Noise of the ratio is dominated by the number of transited pixels under
    // the kernel window of p(y|u,v).
    let kde = model.transition_density(1, 2).unwrap();
    let sd = model.state_density(1).unwrap();
    let h = kde.bandwidth();
    let set = extract_calibration_set(&s.t0, &s.t1, &s.features, 1, 2).unwrap();
    let moved = sd.whitening.apply_batch(&set.z_transited).unwrap();
    let queries = sd.whitening.apply_batch(&s.features.gather(&pixels)).unwrap();
    let mut outside = 0;
    for (k, y) in queries.chunks_exact(2).enumerate() {
        let window = moved
            .chunks_exact(2)
            .filter(|z| (z[0] - y[0]).abs() <= h && (z[1] - y[1]).abs() <= h)
            .count()
            .max(1);
        let sigma = global / (window as f64).sqrt();
        if (p[k] - global).abs() > 3.0 * sigma {
            outside += 1;
        }
    }
    assert!(
        (outside as f64) < 0.01 * p.len() as f64,
        "{outside} of {} pixels beyond 3 sigma",
        p.len()
    );
    assert!((global - c).abs() < 0.01);
}

#[test]
fn mean_probability_recovers_global_rate() {
    let s = scene(400, 3, 6, |y| 0.3 / (1.0 + (-(y[0] + y[2])).exp()));
    let model = model_for(&s, &KdeConfig::default());
    let global = model.global().get(1, 2).unwrap();
    let (_, p) = probability_column(&model, &s);
    assert!(p.len() >= 100_000);
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    assert!(((mean - global) / global).abs() < 0.05, "mean {mean} vs {global}");
    assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn scaling_a_feature_changes_nothing() {
    let s = scene(120, 3, 7, |y| 0.2 * (-0.5 * y[1] * y[1]).exp());
    let config = KdeConfig::default();
    let base = model_for(&s, &config);
    let scaled_rasters: Vec<RasterGrid> = (0..3)
        .map(|k| {
            let col: Vec<f64> = (0..s.features.len())
                .map(|i| s.features.point(i)[k] * if k == 1 { 37.5 } else { 1.0 })
                .collect();
            RasterGrid::continuous(120, 120, 1.0, col).unwrap()
        })
        .collect();
    let scaled = Scene {
        features: FeatureSpace::from_rasters(s.features.names().to_vec(), &scaled_rasters)
            .unwrap(),
        t0: s.t0.clone(),
        t1: s.t1.clone(),
        legend: s.legend.clone(),
    };
    let other = model_for(&scaled, &config);
    let (_, a) = probability_column(&base, &s);
    let (_, b) = probability_column(&other, &scaled);
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "largest change {worst}");
}

#[test]
fn repeated_calibration_is_bit_identical() {
    let s = scene(100, 3, 8, |y| 0.1 + 0.05 * y[0].tanh());
    let config = KdeConfig::default();
    let a = model_for(&s, &config);
    let b = model_for(&s, &config);
    assert_eq!(a.prob_map(1, 2), b.prob_map(1, 2));
}

#[test]
fn transitions_from_one_state_never_exceed_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let side = 80;
    let n = side * side;
    let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t0 = vec![1; n];
    let t1: Vec<i32> = (0..n)
        .map(|i| {
            let r: f64 = rng.random();
            if y[i] > 1.0 && r < 0.45 {
                2
            } else if y[i] > 1.0 && r < 0.9 {
                3
            } else {
                1
            }
        })
        .collect();
    let features = FeatureSpace::from_rasters(
        vec!["y".into(), "z".into()],
        &[
            RasterGrid::continuous(side, side, 1.0, y).unwrap(),
            RasterGrid::continuous(side, side, 1.0, z).unwrap(),
        ],
    )
    .unwrap();
    let t0 = RasterGrid::categorical(side, side, 1.0, t0).unwrap();
    let t1 = RasterGrid::categorical(side, side, 1.0, t1).unwrap();
    let legend = StateLegend::from_codes(&[1, 2, 3]).unwrap();
    let model = calibrate(&t0, &t1, &features, &legend, &[(1, 2), (1, 3)], &KdeConfig::default(), None)
        .unwrap();
    let a = model.prob_map(1, 2).unwrap().data().unwrap();
    let b = model.prob_map(1, 3).unwrap().data().unwrap();
    assert!(a.iter().zip(b).all(|(x, y)| x + y <= 1.0 + 1e-12));
    assert_eq!(
        model.global().get(1, 2).unwrap(),
        observed_transition_matrix(&t0, &t1, &legend).unwrap().get(1, 2).unwrap()
    );
}

#[test]
fn scenario_matrix_overrides_observed_rate() {
    let s = scene(60, 2, 10, |_| 0.2);
    let mut scenario = observed_transition_matrix(&s.t0, &s.t1, &s.legend).unwrap();
    scenario.set_transition(1, 2, 0.05).unwrap();
    let model = calibrate(
        &s.t0,
        &s.t1,
        &s.features,
        &s.legend,
        &[(1, 2)],
        &KdeConfig::default(),
        Some(&scenario),
    )
    .unwrap();
    assert_eq!(model.global().get(1, 2).unwrap(), 0.05);
}

#[test]
fn saved_model_reloads_with_same_probabilities() {
    let s = scene(70, 3, 11, |y| 0.15 * (1.0 + y[0].tanh()));
    let model = model_for(&s, &KdeConfig::default());
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = TransitionModel::load(dir.path(), None).unwrap();
    assert_eq!(back.transitions(), model.transitions());
    let pixels = model.evaluation_pixels(1).unwrap();
    let pts = s.features.gather(pixels);
    assert_eq!(back.probabilities(1, &pts).unwrap(), model.probabilities(1, &pts).unwrap());
    let a = model.prob_map(1, 2).unwrap().data().unwrap();
    let b = back.prob_map(1, 2).unwrap().data().unwrap();
    assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-15 * x.abs().max(1e-300)));
}
