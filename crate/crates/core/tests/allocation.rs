use std::collections::{BTreeSet, VecDeque};

use lucc::allocation::{
    allocate, draw_kernel_pixels, grow_patch, lcm_style_allocate, prune_candidates, AllocationConfig,
    Connectivity, ConstantSurface, DynamicDistance, PatchParams, PruningConfig, TransitionSurface,
    TransitionTarget,
};
use lucc::calibration::calibrate;
use lucc::density::KdeConfig;
use lucc::features::FeatureSpace;
use lucc::raster::{RasterGrid, StateLegend};
use lucc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `P(v|u,y) = f(y)` for a single transition, with `p(y|u,v)` left to the caller.
struct FnSurface<F: Fn(&[f64]) -> f64> {
    u: i32,
    v: i32,
    global: f64,
    f: F,
    density: Option<fn(&[f64]) -> f64>,
}

impl<F: Fn(&[f64]) -> f64> TransitionSurface for FnSurface<F> {
    fn transitions(&self) -> Vec<(i32, i32)> {
        vec![(self.u, self.v)]
    }

    fn global_probability(&self, _u: i32, _v: i32) -> Result<f64> {
        Ok(self.global)
    }

    fn probabilities(&self, _u: i32, pixels: &[usize], features: &FeatureSpace) -> Result<Vec<Vec<f64>>> {
        Ok(vec![pixels.iter().map(|&p| (self.f)(features.point(p))).collect()])
    }

    fn transition_densities(
        &self,
        _u: i32,
        _v: i32,
        pixels: &[usize],
        features: &FeatureSpace,
    ) -> Result<Option<Vec<f64>>> {
        Ok(self.density.map(|g| pixels.iter().map(|&p| g(features.point(p))).collect()))
    }
}

fn column_feature(w: usize, h: usize, noise: f64, seed: u64) -> FeatureSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..w * h)
        .map(|i| (i % w) as f64 + noise * (rng.random::<f64>() - 0.5))
        .collect();
    let y: Vec<f64> = (0..w * h).map(|i| (i / w) as f64).collect();
    FeatureSpace::from_rasters(
        vec!["x".into(), "y".into()],
        &[
            RasterGrid::continuous(w, h, 1.0, x).unwrap(),
            RasterGrid::continuous(w, h, 1.0, y).unwrap(),
        ],
    )
    .unwrap()
}

fn uniform_map(w: usize, h: usize, code: i32) -> RasterGrid {
    RasterGrid::categorical(w, h, 1.0, vec![code; w * h]).unwrap()
}

/// Flood fill restricted to `set`; true when `set` is one connected component.
fn is_connected(set: &[usize], w: usize, h: usize, conn: Connectivity) -> bool {
    let members: BTreeSet<usize> = set.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([set[0]]);
    seen.insert(set[0]);
    while let Some(p) = queue.pop_front() {
        let (r, c) = ((p / w) as i64, (p % w) as i64);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if (dr == 0 && dc == 0) || (conn == Connectivity::Four && dr != 0 && dc != 0) {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let q = (nr * w as i64 + nc) as usize;
                if members.contains(&q) && seen.insert(q) {
                    queue.push_back(q);
                }
            }
        }
    }
    seen.len() == members.len()
}

#[test]
fn kernel_draw_frequencies_are_binomial() {
    let m = 100_000;
    let reps = 1000;
    let p = 0.01;
    let cols = vec![vec![p; m]];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = vec![0u32; m];
    for _ in 0..reps {
        for (i, k) in draw_kernel_pixels(&cols, &mut rng).unwrap() {
            assert_eq!(k, 0);
            counts[i] += 1;
        }
    }
    let trials = (m * reps) as f64;
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let sigma = (trials * p * (1.0 - p)).sqrt();
    assert!((total - trials * p).abs() < 4.0 * sigma, "total {total}");

    let e = reps as f64 * p;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // upper 1% point of chi-square(m - 1), Wilson-Hilferty
    let df = (m - 1) as f64;
    let z = 2.326_347_874;
    let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
    // binomial counts have variance np(1-p), not np
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    assert!(chi2 > df * (1.0 - p) * 0.97);
}

#[test]
fn first_core_is_uniform_among_candidates() {
    // Five pixels with distinct selection probabilities; target 1, unit patch.
    let q = [0.05, 0.3, 0.5, 0.8, 0.15];
    let n = q.len();
    let global = 0.2;
    // With one pixel to allocate out of five, rate = (1/5) / global = 1.
    let features = FeatureSpace::from_rasters(
        vec!["i".into()],
        &[RasterGrid::continuous(n, 1, 1.0, (0..n).map(|i| i as f64).collect()).unwrap()],
    )
    .unwrap();
    let surface = FnSurface {
        u: 1,
        v: 2,
        global,
        f: move |y: &[f64]| q[y[0] as usize],
        density: None,
    };
    let map = uniform_map(n, 1, 1);
    let config = AllocationConfig {
        targets: vec![TransitionTarget { u: 1, v: 2, pixels: 1 }],
        max_failed_passes: usize::MAX,
        ..AllocationConfig::default()
    };

    // Exact law: uniform pick among the candidate subset, conditioned on it
    // being non-empty.
    let mut oracle = [0.0; 5];
    let mut nonempty = 0.0;
    for mask in 1u32..(1 << n) {
        let mut pr = 1.0;
        for i in 0..n {
            pr *= if mask & (1 << i) != 0 { q[i] } else { 1.0 - q[i] };
        }
        nonempty += pr;
        let k = mask.count_ones() as f64;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                oracle[i] += pr / k;
            }
        }
    }
    for o in oracle.iter_mut() {
        *o /= nonempty;
    }

    let runs = 40_000;
    let mut hits = [0usize; 5];
    for r in 0..runs {
        let out = allocate(&surface, &map, &features, &config, r).unwrap();
        let codes = out.map.codes().unwrap();
        let changed: Vec<usize> = (0..n).filter(|&i| codes[i] == 2).collect();
        assert_eq!(changed.len(), 1);
        hits[changed[0]] += 1;
    }
    for i in 0..n {
        let f = hits[i] as f64 / runs as f64;
        let sigma = (oracle[i] * (1.0 - oracle[i]) / runs as f64).sqrt();
        assert!((f - oracle[i]).abs() < 4.0 * sigma, "pixel {i}: {f} vs {}", oracle[i]);
    }
}

#[test]
fn fixed_area_patches_are_connected() {
    let (w, h) = (100, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for conn in [Connectivity::Four, Connectivity::Eight] {
        let params = PatchParams::new(25.0, 0.0, 2.5, conn).unwrap();
        for _ in 0..500 {
            let core = rng.random_range(0..w * h);
            let area = params.draw_area(&mut rng);
            assert_eq!(area, 25);
            let patch = grow_patch(w, h, core, area, &params, |_| true, &mut rng);
            assert_eq!(patch.len(), 25);
            assert_eq!(patch[0], core);
            assert_eq!(patch.iter().collect::<BTreeSet<_>>().len(), 25);
            assert!(is_connected(&patch, w, h, conn));
        }
    }
}

#[test]
fn patches_respect_eligibility() {
    let (w, h) = (30, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = PatchParams::new(40.0, 0.0, 1.0, Connectivity::Eight).unwrap();
    // checkerboard of 3x3 blocks
    let ok = |p: usize| ((p / w) / 3 + (p % w) / 3) % 2 == 0;
    for _ in 0..200 {
        let core = loop {
            let c = rng.random_range(0..w * h);
            if ok(c) {
                break c;
            }
        };
        let patch = grow_patch(w, h, core, 40, &params, ok, &mut rng);
        assert!(patch.iter().all(|&p| ok(p)));
        assert!(is_connected(&patch, w, h, Connectivity::Eight));
    }
}

#[test]
fn targets_are_met_within_patch_granularity() {
    let (w, h) = (200, 200);
    let features = column_feature(w, h, 0.0, 1);
    let map = uniform_map(w, h, 1);
    let surface = FnSurface {
        u: 1,
        v: 2,
        global: 0.025,
        f: |y: &[f64]| 0.05 * y[0] / 200.0,
        density: None,
    };
    for (seed, variance) in [(1u64, 0.0), (2, 100.0), (3, 400.0)] {
        let config = AllocationConfig::default()
            .with_patch(PatchParams::new(20.0, variance, 2.0, Connectivity::Four).unwrap());
        let out = allocate(&surface, &map, &features, &config, seed).unwrap();
        let report = &out.transitions[0];
        assert_eq!(report.target, 1000);
        let changed = out.map.codes().unwrap().iter().filter(|&&c| c == 2).count();
        assert_eq!(changed, report.allocated);
        assert!(
            report.allocated.abs_diff(1000) <= report.max_drawn_area,
            "{} allocated, max area {}",
            report.allocated,
            report.max_drawn_area
        );
        for patch in &out.patches {
            assert!(is_connected(&patch.pixels, w, h, Connectivity::Four));
        }
        let in_patches: usize = out.patches.iter().map(|p| p.pixels.len()).sum();
        assert_eq!(in_patches, report.allocated);
    }
}

#[test]
fn saturation_transits_every_pixel() {
    let (w, h) = (40, 40);
    let mut codes = vec![1; w * h];
    for i in (0..w * h).step_by(7) {
        codes[i] = 3;
    }
    let map = RasterGrid::categorical(w, h, 1.0, codes.clone()).unwrap();
    let features = column_feature(w, h, 0.5, 2);
    let surface = ConstantSurface::new(vec![((1, 2), 1.0)]).unwrap();
    for patch in [PatchParams::single_pixel(), PatchParams::new(12.0, 30.0, 3.0, Connectivity::Eight).unwrap()] {
        let out = allocate(&surface, &map, &features, &AllocationConfig::default().with_patch(patch), 3).unwrap();
        let got = out.map.codes().unwrap();
        for i in 0..w * h {
            assert_eq!(got[i], if codes[i] == 1 { 2 } else { 3 });
        }
    }
}

#[test]
fn zero_probabilities_leave_the_map_unchanged() {
    let (w, h) = (50, 50);
    let map = RasterGrid::categorical(w, h, 1.0, (0..w * h).map(|i| 1 + (i % 3) as i32).collect()).unwrap();
    let features = column_feature(w, h, 0.5, 3);
    let surface = ConstantSurface::new(vec![((1, 2), 0.0), ((2, 3), 0.0)]).unwrap();
    let out = allocate(&surface, &map, &features, &AllocationConfig::default(), 4).unwrap();
    assert_eq!(out.map, map);

    // non-zero global rate but a zero probability surface
    let zero = FnSurface { u: 1, v: 2, global: 0.1, f: |_: &[f64]| 0.0, density: None };
    let out = allocate(&zero, &map, &features, &AllocationConfig::default(), 4).unwrap();
    assert_eq!(out.map, map);
    assert_eq!(out.transitions[0].allocated, 0);
}

#[test]
fn other_states_and_masked_pixels_are_untouched() {
    let (w, h) = (60, 60);
    let codes: Vec<i32> = (0..w * h).map(|i| if (i / w) < 30 { 1 } else { 4 }).collect();
    let map = RasterGrid::categorical(w, h, 1.0, codes.clone()).unwrap().with_nodata(-1);
    let mut x: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
    for i in (0..w * h).step_by(5) {
        x[i] = -9999.0;
    }
    let xr = RasterGrid::continuous(w, h, 1.0, x).unwrap().with_nodata(-9999);
    let features = FeatureSpace::from_rasters(vec!["x".into()], &[xr]).unwrap();
    let surface = ConstantSurface::new(vec![((1, 2), 0.5)]).unwrap();
    let config = AllocationConfig::default().with_patch(PatchParams::new(8.0, 10.0, 1.0, Connectivity::Four).unwrap());
    let out = allocate(&surface, &map, &features, &config, 9).unwrap();
    let got = out.map.codes().unwrap();
    for i in 0..w * h {
        if codes[i] != 1 || features.is_masked(i) {
            assert_eq!(got[i], codes[i], "pixel {i}");
        }
    }
    let unmasked = (0..w * h).filter(|&i| codes[i] == 1 && !features.is_masked(i)).count();
    assert_eq!(out.transitions[0].target, (0.5 * unmasked as f64).round() as usize);
}

#[test]
fn seeds_are_reproducible() {
    let (w, h) = (80, 80);
    let map = uniform_map(w, h, 1);
    let features = column_feature(w, h, 1.0, 4);
    let surface = FnSurface { u: 1, v: 2, global: 0.05, f: |y: &[f64]| 0.1 * y[0] / 80.0, density: None };
    let config = AllocationConfig::default().with_patch(PatchParams::new(6.0, 9.0, 2.0, Connectivity::Four).unwrap());
    let a = allocate(&surface, &map, &features, &config, 77).unwrap();
    let b = allocate(&surface, &map, &features, &config, 77).unwrap();
    let c = allocate(&surface, &map, &features, &config, 78).unwrap();
    assert_eq!(a.map, b.map);
    assert_eq!(a.transitions, b.transitions);
    assert_ne!(a.map, c.map);
}

#[test]
fn dinamica_rank_keeps_the_top_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p: Vec<f64> = (0..5000).map(|_| (rng.random::<f64>() * 100.0).floor() / 100.0).collect();
    let kept = prune_candidates(&p, &p, 100, &PruningConfig::dinamica(10.0), &mut rng).unwrap();
    assert_eq!(kept.len(), 1000);
    let set: BTreeSet<usize> = kept.iter().copied().collect();
    let min_kept = kept.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
    for i in 0..p.len() {
        if !set.contains(&i) {
            assert!(p[i] <= min_kept);
            // ties at the threshold are resolved towards lower indices
            if p[i] == min_kept {
                assert!(kept.iter().filter(|&&k| p[k] == min_kept).all(|&k| k < i));
            }
        }
    }
    let all = prune_candidates(&p[..50], &p[..50], 100, &PruningConfig::dinamica(10.0), &mut rng).unwrap();
    assert_eq!(all.len(), 50);
}

#[test]
fn weighted_sampling_follows_the_weights() {
    let n = 100;
    let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 10) as f64).collect();
    let total: f64 = w.iter().sum();
    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut first = vec![0usize; n];
    for _ in 0..reps {
        let s = prune_candidates(&w, &w, 5, &PruningConfig::unbiased(), &mut rng).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 5);
        first[s[0]] += 1;
    }
    for i in 0..n {
        let p = w[i] / total;
        let f = first[i] as f64 / reps as f64;
        let sigma = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((f - p).abs() < 4.0 * sigma, "pixel {i}: {f} vs {p}");
    }
    // zero weights are never drawn
    let z = [0.0, 1.0, 0.0, 2.0];
    let s = prune_candidates(&z, &z, 4, &PruningConfig::unbiased(), &mut rng).unwrap();
    assert_eq!(s.iter().collect::<BTreeSet<_>>(), BTreeSet::from([&1, &3]));
}

fn density_x(y: &[f64]) -> f64 {
    (-(y[0] - 20.0).powi(2) / 50.0).exp() + 0.01 * y[1]
}

#[test]
fn lcm_matches_sort_and_take() {
    let (w, h) = (32, 32);
    let codes: Vec<i32> = (0..w * h).map(|i| if i % 9 == 0 { 3 } else { 1 }).collect();
    let map = RasterGrid::categorical(w, h, 1.0, codes.clone()).unwrap();
    let features = column_feature(w, h, 0.7, 5);
    let surface = FnSurface { u: 1, v: 2, global: 0.1, f: |_: &[f64]| 0.1, density: Some(density_x) };
    let target = 75;
    let out = lcm_style_allocate(&surface, &map, &features, 1, 2, target).unwrap();

    let mut pixels: Vec<usize> = (0..w * h).filter(|&i| codes[i] == 1).collect();
    pixels.sort_by(|&a, &b| {
        density_x(features.point(b))
            .partial_cmp(&density_x(features.point(a)))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut expected = codes.clone();
    for &p in &pixels[..target] {
        expected[p] = 2;
    }
    assert_eq!(out.codes().unwrap(), &expected[..]);
    assert_eq!(lcm_style_allocate(&surface, &map, &features, 1, 2, target).unwrap(), out);
    assert_eq!(lcm_style_allocate(&surface, &map, &features, 1, 2, 0).unwrap(), map);
}

#[test]
fn dinamica_allocation_stays_in_the_pruned_set() {
    let (w, h) = (100, 100);
    let map = uniform_map(w, h, 1);
    let features = column_feature(w, h, 0.0, 6);
    let surface = FnSurface { u: 1, v: 2, global: 0.01, f: |y: &[f64]| 0.02 * y[0] / 100.0, density: None };
    let config = AllocationConfig::default().with_pruning(PruningConfig::dinamica(2.0));
    let out = allocate(&surface, &map, &features, &config, 10).unwrap();
    assert_eq!(out.transitions[0].allocated, 100);
    // the top 200 pixels by P are the two rightmost columns
    let codes = out.map.codes().unwrap();
    for i in 0..w * h {
        if codes[i] == 2 {
            assert!(i % w >= 98, "pixel {i}");
        }
    }
}

#[test]
fn unbiased_sampling_meets_the_target_with_patches() {
    let (w, h) = (100, 100);
    let map = uniform_map(w, h, 1);
    let features = column_feature(w, h, 0.0, 7);
    let surface = FnSurface { u: 1, v: 2, global: 0.03, f: |y: &[f64]| 0.06 * y[0] / 100.0, density: None };
    let config = AllocationConfig::default()
        .with_pruning(PruningConfig::unbiased())
        .with_patch(PatchParams::new(5.0, 4.0, 1.0, Connectivity::Four).unwrap());
    let out = allocate(&surface, &map, &features, &config, 13).unwrap();
    let r = &out.transitions[0];
    assert_eq!(r.target, 300);
    assert!(r.allocated.abs_diff(300) <= r.max_drawn_area);
}

#[test]
fn transition_frequencies_follow_the_probabilities() {
    // Single-pixel patches: the per-band frequency over repeated runs is an
    // unbiased estimate of the band mean of P(v|u,y), refresh included.
    let (w, h) = (100, 100);
    let map = uniform_map(w, h, 1);
    let features = column_feature(w, h, 0.0, 8);
    let p = |y: &[f64]| 0.3 * (y[0] / 100.0).powi(2);
    let surface = FnSurface { u: 1, v: 2, global: 0.1, f: p, density: None };
    let config = AllocationConfig { refresh_threshold: 0.02, ..AllocationConfig::default() };
    let runs = 40;
    let bands = 5;
    let mut hits = vec![0usize; bands];
    let mut refreshes = 0;
    for r in 0..runs {
        let out = allocate(&surface, &map, &features, &config, 100 + r).unwrap();
        refreshes += out.refreshes;
        for (i, &c) in out.map.codes().unwrap().iter().enumerate() {
            if c == 2 {
                hits[(i % w) * bands / w] += 1;
            }
        }
    }
    assert!(refreshes > 0);
    let total_p: f64 = (0..w * h).map(|i| p(features.point(i))).sum();
    for b in 0..bands {
        let px: Vec<usize> = (0..w * h).filter(|&i| (i % w) * bands / w == b).collect();
        // P rescaled so that the total matches the target exactly
        let expect: f64 = px.iter().map(|&i| p(features.point(i))).sum::<f64>() * 1000.0 / total_p;
        let f = hits[b] as f64 / runs as f64;
        let sigma = (expect / runs as f64).sqrt();
        assert!((f - expect).abs() < 4.0 * sigma + 0.5, "band {b}: {f} vs {expect}");
    }
}

#[test]
fn calibrated_model_drives_allocation_with_dynamic_distance() {
    let (w, h) = (64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let t0: Vec<i32> = (0..w * h)
        .map(|i| if (i % w) < 6 { 3 } else if rng.random::<f64>() < 0.9 { 1 } else { 4 })
        .collect();
    let t0 = RasterGrid::categorical(w, h, 1.0, t0).unwrap();
    let dist = lucc::features::distance_to_state(&t0, 3).unwrap();
    let elev = dist.continuous_like((0..w * h).map(|i| (i / w) as f64 + rng.random::<f64>()).collect()).unwrap();
    let features = FeatureSpace::from_rasters(vec!["elev".into(), "dist".into()], &[elev, dist.clone()]).unwrap();
    let d = dist.data().unwrap();
    let t1: Vec<i32> = t0
        .codes()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, &c)| if c == 1 && rng.random::<f64>() < 0.3 * (-d[i] / 10.0).exp() { 3 } else { c })
        .collect();
    let t1 = RasterGrid::categorical(w, h, 1.0, t1).unwrap();
    let legend = StateLegend::from_codes(&[1, 3, 4]).unwrap();
    let model = calibrate(&t0, &t1, &features, &legend, &[(1, 3)], &KdeConfig::default(), None).unwrap();

    let config = AllocationConfig {
        dynamic_distance: Some(DynamicDistance { feature: 1, state: 3 }),
        refresh_threshold: 0.01,
        patch: PatchParams::new(4.0, 2.0, 1.0, Connectivity::Four).unwrap(),
        ..AllocationConfig::default()
    };
    let out = allocate(&model, &t1, &features, &config, 5).unwrap();
    let r = &out.transitions[0];
    assert!(r.target > 0);
    assert!(r.allocated.abs_diff(r.target) <= r.max_drawn_area);
    assert!(out.refreshes > 0);
    let again = allocate(&model, &t1, &features, &config, 5).unwrap();
    assert_eq!(out.map, again.map);
}

#[test]
fn invalid_configuration_is_rejected() {
    let map = uniform_map(10, 10, 1);
    let features = column_feature(10, 10, 0.0, 9);
    let surface = ConstantSurface::new(vec![((1, 2), 0.1)]).unwrap();
    let mut config = AllocationConfig::default();
    config.refresh_threshold = 0.0;
    assert!(allocate(&surface, &map, &features, &config, 1).is_err());
    let config = AllocationConfig::default().with_pruning(PruningConfig::dinamica(0.5));
    assert!(allocate(&surface, &map, &features, &config, 1).is_err());
    let other = uniform_map(11, 10, 1);
    assert!(allocate(&surface, &other, &features, &AllocationConfig::default(), 1).is_err());
    assert!(ConstantSurface::new(vec![((1, 2), 0.7), ((1, 3), 0.6)]).is_err());
}
