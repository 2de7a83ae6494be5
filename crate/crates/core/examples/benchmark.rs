//! The full evaluation protocol: forge a reference map from a known
//! probability surface, calibrate, allocate and re-calibrate, and report
//! the errors against the exact surface.
//!
//! `cargo run --release --example benchmark -- [side] [repetitions]`

use lucc::allocation::AllocationConfig;
use lucc::evaluation::{Benchmark, BenchmarkConfig, ConstantCalibrator, OracleCalibrator, run_calibration_comparison};

fn main() -> lucc::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(256, |s| s.parse().expect("side"));
    let reps: usize = args.next().map_or(10, |s| s.parse().expect("repetitions"));

    let b = Benchmark::build(&BenchmarkConfig::new(side, side, 2024))?;
    println!(
        "{side}x{side}: {} pixels in state {}, {} went to {}, truth peak {:.4}",
        b.pixels.len(),
        b.config.u,
        b.transited(),
        b.config.v,
        b.truth.domain_peak()
    );

    let (u, v) = (b.config.u, b.config.v);
    let oracle = run_calibration_comparison(&b.map_t0, &b.map_t1, &b.features, &b.truth, u, &OracleCalibrator(&b.truth))?;
    let flat = ConstantCalibrator { legend: b.legend.clone(), u, v };
    let flat = run_calibration_comparison(&b.map_t0, &b.map_t1, &b.features, &b.truth, u, &flat)?;
    println!("oracle eps {:.3e}, constant-rate eps {:.3e}", oracle.epsilon, flat.epsilon);

    let report = b.evaluate(&AllocationConfig::default(), reps, 11)?;
    println!("eps_calib   {:.4e}", report.epsilon_calib);
    println!("eps_tot     {:.4e}", report.epsilon_tot);
    println!("eps_tot_R   {:.4e} (R = {reps})", report.epsilon_tot_r);
    println!("eps_tot / eps_calib = {:.3}", report.epsilon_tot / report.epsilon_calib);
    println!("largest difference {:?}", report.largest_difference);
    for (stage, s) in &report.runtimes {
        println!("{stage:<24} {s:>7.2} s");
    }
    for cut in &report.cuts {
        let peak = b.truth.domain_peak();
        println!("cut {}: max |error| {:.2}% of peak", cut.name, 100.0 * cut.max_error_within(f64::NEG_INFINITY, f64::INFINITY) / peak);
    }
    Ok(())
}
