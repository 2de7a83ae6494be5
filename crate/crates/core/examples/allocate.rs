//! Allocate calibrated transitions as patches, with a distance variable
//! updated during the run and one transition given an explicit target.
//!
//! `cargo run --release --example allocate -- [side]`

use lucc::allocation::{allocate, AllocationConfig, Connectivity, DynamicDistance, PatchParams, TransitionPatch};
use lucc::calibration::calibrate;
use lucc::density::KdeConfig;
use lucc::evaluation::{generate_landscape, LandscapeConfig};
use lucc::raster::{observed_transition_matrix, StateLegend};

fn main() -> lucc::Result<()> {
    let side: usize = std::env::args().nth(1).map_or(200, |s| s.parse().expect("side"));
    let cfg = LandscapeConfig::seven_classes(side, side, 5.0);
    let (t0, features) = generate_landscape(&cfg, 21)?;
    let (t1, _) = generate_landscape(&cfg, 22)?;
    let legend = StateLegend::seven_classes();
    let transitions = [(2, 5), (4, 5), (4, 3)];
    let model = calibrate(&t0, &t1, &features, &legend, &transitions, &KdeConfig::default(), None)?;
    let observed = observed_transition_matrix(&t0, &t1, &legend)?;

    let config = AllocationConfig {
        patch: PatchParams::new(12.0, 40.0, 1.0, Connectivity::Eight)?,
        patches: vec![TransitionPatch { u: 4, v: 3, patch: PatchParams::new(30.0, 100.0, 3.0, Connectivity::Four)? }],
        dynamic_distance: Some(DynamicDistance { feature: 2, state: cfg.urban }),
        ..AllocationConfig::default()
    };
    let out = allocate(&model, &t1, &features, &config, 99)?;

    println!("{:>4} {:>4} {:>9} {:>8} {:>9} {:>7} {:>8}", "u", "v", "P(v|u)", "target", "allocated", "patches", "max drawn");
    for r in &out.transitions {
        println!(
            "{:>4} {:>4} {:>9.4} {:>8} {:>9} {:>7} {:>8}",
            r.u, r.v, observed.get(r.u, r.v)?, r.target, r.allocated, r.patches, r.max_drawn_area
        );
    }
    let sizes: Vec<usize> = out.patches.iter().map(|p| p.pixels.len()).collect();
    println!(
        "{} patches, mean area {:.1}, {} density refreshes",
        sizes.len(),
        sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
        out.refreshes
    );
    println!("census before {:?}", t1.census());
    println!("census after  {:?}", out.map.census());
    Ok(())
}
