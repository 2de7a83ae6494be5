//! Round-trip error of the allocation strategies on one synthetic benchmark:
//! no pruning, rank pruning at F = 10 and 100, and deterministic ranking.
//!
//! `cargo run --release --example compare -- [side] [repetitions]`

use lucc::allocation::AllocationConfig;
use lucc::evaluation::{default_strategies, Benchmark, BenchmarkConfig};

fn main() -> lucc::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(256, |s| s.parse().expect("side"));
    let reps: usize = args.next().map_or(5, |s| s.parse().expect("repetitions"));

    let b = Benchmark::build(&BenchmarkConfig::new(side, side, 2024))?;
    println!("{} state-u pixels, {} transited", b.pixels.len(), b.transited());
    let rows = b.compare(&default_strategies(), &AllocationConfig::default(), reps, 7)?;
    println!(
        "{:<20} {:>11} {:>11} {:>11} {:>9} {:>11} {:>9}",
        "strategy", "eps_calib", "eps_tot", "mean", "se", "eps_tot_R", "seconds"
    );
    for r in &rows {
        println!(
            "{:<20} {:>11.4e} {:>11.4e} {:>11.4e} {:>9.1e} {:>11.4e} {:>9.2}",
            r.strategy, r.epsilon_calib, r.epsilon_tot, r.epsilon_tot_mean, r.epsilon_tot_se, r.epsilon_tot_r, r.seconds
        );
    }
    if let Some(lcm) = rows.iter().find(|r| r.strategy == "lcm_rank") {
        println!("lcm_rank maps identical across runs: {}", lcm.identical_maps);
    }
    Ok(())
}
