//! Read and write categorical and continuous grids, tally a transition matrix.
//!
//! `cargo run --example raster_io -- [out_dir]`

use std::path::PathBuf;

use lucc::raster::{
    observed_transition_matrix, read_grid, write_ascii_grid, write_binary_grid, RasterGrid, StateLegend,
    TransitionMatrix,
};

fn main() -> lucc::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "raster_io".into()));
    std::fs::create_dir_all(&out).map_err(|e| lucc::Error::InvalidArgument(e.to_string()))?;

    let (w, h) = (8, 6);
    let t0: Vec<i32> = (0..w * h).map(|i| if i % w < 4 { 1 } else { 2 }).collect();
    let mut t1 = t0.clone();
    for i in (0..w * h).step_by(5) {
        t1[i] = 3;
    }
    let map_t0 = RasterGrid::categorical(w, h, 30.0, t0)?.with_origin(500_000.0, 4_100_000.0);
    let map_t1 = map_t0.categorical_like(t1)?;
    let dem = RasterGrid::continuous(w, h, 30.0, (0..w * h).map(|i| 100.0 + 0.5 * i as f64).collect())?;

    write_ascii_grid(&map_t0, out.join("t0.asc"))?;
    write_binary_grid(&map_t1, out.join("t1.bin"))?;
    write_ascii_grid(&dem, out.join("dem.asc"))?;

    let a = read_grid(out.join("t0.asc"))?;
    let b = read_grid(out.join("t1.bin"))?;
    let z = read_grid(out.join("dem.asc"))?;
    println!("t0 {}x{} origin {:?} census {:?}", a.width(), a.height(), a.origin(), a.census());
    println!("t1 census {:?}", b.census());
    println!("dem kind {:?}, first values {:?}", z.kind(), &z.data().unwrap()[..4]);

    let legend = StateLegend::from_codes(&[1, 2, 3])?;
    let m = observed_transition_matrix(&a, &b, &legend)?;
    for u in legend.codes() {
        println!("P(.|{u}) = {:?}", m.row(u)?);
    }
    m.write_csv(out.join("matrix.csv"))?;
    let back = TransitionMatrix::read_csv(out.join("matrix.csv"), Some(&legend))?;
    println!("csv round trip equal: {}", back == m);
    Ok(())
}
