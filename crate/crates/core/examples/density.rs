//! Binned kernel density estimation on a bivariate Gaussian sample, against
//! the exact density, for each kernel shape. The fitted estimator is saved
//! and reloaded.
//!
//! `cargo run --release --example density -- [n]`

use lucc::density::{load_kde, save_kde, terrell_bandwidth, KdeConfig, KernelShape, KernelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_pdf(y: &[f64]) -> f64 {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    (-0.5 * r2).exp() / (2.0 * std::f64::consts::PI).powf(y.len() as f64 / 2.0)
}

fn main() -> lucc::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(50_000, |s| s.parse().expect("n"));
    let d = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();

    let probes: Vec<[f64; 2]> = vec![[0.0, 0.0], [1.0, 0.0], [1.0, -1.0], [2.0, 0.5]];
    println!("{:<9} {:>8} {}", "kernel", "h", "estimate / exact at probes");
    for shape in [KernelShape::Box, KernelShape::Triangle, KernelShape::Gaussian] {
        let cfg = KdeConfig { kernel: shape, ..KdeConfig::default() };
        let kde = cfg.fit(&points, d, None)?;
        let ratios: Vec<String> = probes
            .iter()
            .map(|y| Ok(format!("{:.3}", kde.estimate(y)? / normal_pdf(y))))
            .collect::<lucc::Result<_>>()?;
        println!("{:<9} {:>8.4} {}", format!("{shape:?}"), kde.bandwidth(), ratios.join(" "));
    }

    for m in [1_000, 10_000, 100_000, 1_000_000] {
        println!("rule-of-thumb h for n={m:>7}: {:.4}", terrell_bandwidth(m, d, &KernelSpec::boxed(d))?);
    }

    let kde = KdeConfig { q: 21, ..KdeConfig::default() }.fit(&points, d, None)?;
    let dir = std::env::temp_dir().join("lucc_density_example");
    std::fs::create_dir_all(&dir).map_err(|e| lucc::Error::InvalidArgument(e.to_string()))?;
    let path = dir.join("gauss.kde");
    save_kde(&path, &kde, None)?;
    let (back, _) = load_kde(&path)?;
    println!(
        "q=21: {} occupied bins, bin width {:.4}; reloaded estimate at origin {:.6} (was {:.6})",
        kde.bin_count(),
        kde.bin_width(),
        back.estimate(&[0.0, 0.0])?,
        kde.estimate(&[0.0, 0.0])?
    );
    Ok(())
}
