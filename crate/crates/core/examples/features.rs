//! Explanatory variables: distance to a state, slope from a DEM, whitening.
//!
//! `cargo run --release --example features -- [side]`

use lucc::evaluation::{generate_landscape, LandscapeConfig};
use lucc::features::{distance_to_state, fit_whitening, sample_moments, slope_from_elevation};

fn main() -> lucc::Result<()> {
    let side: usize = std::env::args().nth(1).map_or(128, |s| s.parse().expect("side"));
    let cfg = LandscapeConfig::seven_classes(side, side, 5.0);
    let (map, features) = generate_landscape(&cfg, 7)?;
    println!("{side}x{side} landscape, census {:?}", map.census());

    let dist = distance_to_state(&map, cfg.urban)?;
    let d = dist.data().unwrap();
    let far = d.iter().cloned().fold(0.0, f64::max);
    println!("distance to state {}: max {far:.1} m", cfg.urban);

    println!("pixel 0: {:?} = {:?}", features.names(), features.point(0));

    let pixels: Vec<usize> = (0..features.len()).collect();
    let table = features.gather(&pixels);
    let (mean, cov) = sample_moments(&table, features.dims());
    println!("mean {mean:.3?}");
    println!("cov  {cov:.3?}");

    let white = fit_whitening(&table, features.dims())?;
    let z = white.apply_batch(&table)?;
    let (m2, c2) = sample_moments(&z, features.dims());
    println!("whitened mean {:?}", m2.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>());
    println!("whitened cov  {c2:.3?}");

    let plane: Vec<f64> = (0..side * side).map(|i| 2.0 * (i % side) as f64).collect();
    let dem = map.continuous_like(plane)?;
    let slope = slope_from_elevation(&dem)?;
    println!(
        "slope of a 2 m per 5 m ramp: {:.4} deg (atan(0.4) = {:.4})",
        slope.data().unwrap()[side * side / 2],
        0.4f64.atan().to_degrees()
    );
    Ok(())
}
