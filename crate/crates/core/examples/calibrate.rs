//! Calibrate `P(v|u,y)` from a pair of maps and three explanatory variables,
//! then store the model.
//!
//! `cargo run --release --example calibrate -- [side] [model_dir]`

use std::path::PathBuf;

use lucc::calibration::{calibrate, TransitionModel};
use lucc::density::KdeConfig;
use lucc::evaluation::{Benchmark, BenchmarkConfig};

fn main() -> lucc::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(256, |s| s.parse().expect("side"));
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "model".into()));

    // a synthetic pair; any two aligned maps and feature rasters will do
    let b = Benchmark::build(&BenchmarkConfig::new(side, side, 5))?;
    let (u, v) = (b.config.u, b.config.v);

    let model = calibrate(&b.map_t0, &b.map_t1, &b.features, &b.legend, &[(u, v)], &KdeConfig::default(), None)?;
    println!("P({v}|{u}) = {:.5}", model.global().get(u, v)?);
    let su = model.state_density(u).expect("state density");
    println!("p(y|{u}): {} samples, h = {:.4}", su.kde.n(), su.kde.bandwidth());
    if let Some(k) = model.transition_density(u, v) {
        println!("p(y|{u},{v}): {} samples, h = {:.4}", k.n(), k.bandwidth());
    }

    let probs = model.prob_map(u, v).expect("probability map").data().unwrap();
    let on_u: Vec<f64> = b.pixels.iter().map(|&i| probs[i]).collect();
    let mean = on_u.iter().sum::<f64>() / on_u.len() as f64;
    let max = on_u.iter().cloned().fold(0.0, f64::max);
    println!("P({v}|{u},y) over {} state-{u} pixels: mean {mean:.5}, max {max:.5}", on_u.len());

    let (k, _) = b.exact.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let y = b.features.point(b.pixels[k]);
    println!(
        "at y = {:.2?}: {:.5} (exact {:.5})",
        y,
        model.probabilities(u, y)?[0][0],
        b.truth.probability(y)
    );

    model.save(&dir)?;
    let back = TransitionModel::load(&dir, Some(&b.legend))?;
    println!("saved to {}, reloaded transitions {:?}", dir.display(), back.transitions());
    Ok(())
}
