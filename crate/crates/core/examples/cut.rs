//! One-dimensional cuts of the exact and calibrated transition probability
//! along the distance axis, written as CSV.
//!
//! `cargo run --release --example cut -- [side] [out_dir]`

use lucc::evaluation::{Benchmark, BenchmarkConfig, CutSpec};

fn main() -> lucc::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(256, |s| s.parse().expect("side"));
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "cuts".into()));
    std::fs::create_dir_all(&out).map_err(|e| lucc::Error::InvalidArgument(e.to_string()))?;

    let b = Benchmark::build(&BenchmarkConfig::new(side, side, 2024))?;
    let calib = b.calibrate()?;
    let peak = b.truth.domain_peak();
    println!("{} state-u pixels, {} transited, eps_calib {:.3e}", b.pixels.len(), b.transited(), calib.epsilon);

    for spec in [CutSpec::figure(), CutSpec::through_mode()] {
        let cut = b.cut(&spec, &calib.estimate, None)?;
        let path = out.join(format!("{}.csv", cut.name));
        cut.write_csv(&path)?;
        println!("\n{} (elevation {}, slope {}) -> {}", cut.name, spec.fixed[0], spec.fixed[1], path.display());
        println!("{:>8} {:>12} {:>12} {:>9}", "distance", "exact", "estimated", "err/peak");
        for i in (0..cut.abscissa.len()).step_by(5) {
            println!(
                "{:>8.1} {:>12.4e} {:>12.4e} {:>8.1}%",
                cut.abscissa[i],
                cut.exact[i],
                cut.estimated[i],
                100.0 * (cut.exact[i] - cut.estimated[i]).abs() / peak
            );
        }
    }
    Ok(())
}
