//! Command-line pipeline: `synth`, `calibrate`, `allocate`, `evaluate`,
//! `compare` and `timing`, driven by a JSON [`RunConfig`].

pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

pub use config::{Command, FeatureInput, RunConfig, SynthSettings};
pub use manifest::{timing_report, Manifest, StageTime, TimingRow, TimingTable};

use crate::allocation::{allocate, derive_seed, TransitionReport};
use crate::calibration::{calibrate, TransitionModel};
use crate::error::{Error, Result};
use crate::evaluation::{default_strategies, Benchmark, BenchmarkConfig, StrategyRow};
use crate::features::FeatureSpace;
use crate::raster::{
    observed_transition_matrix, read_ascii_grid_as, read_grid, write_grid, GridKind, RasterGrid, StateLegend,
    TransitionMatrix,
};

#[derive(Debug, Parser)]
#[command(name = "lucc", version, about = "Land-use change calibration, allocation and evaluation")]
pub struct Cli {
    /// Worker cap. Every stage is deterministic and single-threaded, so this
    /// never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Generate a synthetic landscape and forge its t1 map from the ground truth.
    Synth(RunArgs),
    /// Fit the densities and write a model directory.
    Calibrate(RunArgs),
    /// Simulate new maps from a model directory.
    Allocate(RunArgs),
    /// Score calibration and allocation round trips against the ground truth.
    Evaluate(RunArgs),
    /// Score several pruning strategies on the same benchmark.
    Compare(RunArgs),
    /// Tabulate calibration and total times from manifests.
    Timing {
        /// `manifest.json` files or directories holding one.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; defaults apply to absent fields.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, detected before any computation.
    Validation(Vec<String>),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(list) => {
                writeln!(f, "invalid configuration:")?;
                for e in list {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(t) = cli.threads {
        info!("--threads {t}: running single-threaded");
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprint!("{e}");
            if matches!(e, CliError::Runtime(_)) {
                eprintln!();
            }
            e.exit_code()
        }
    }
}

pub fn run(command: Sub) -> std::result::Result<(), CliError> {
    let (cmd, args) = match command {
        Sub::Timing { manifests } => return timing(&manifests),
        Sub::Synth(a) => (Command::Synth, a),
        Sub::Calibrate(a) => (Command::Calibrate, a),
        Sub::Allocate(a) => (Command::Allocate, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
        Sub::Compare(a) => (Command::Compare, a),
    };
    let config = load_config(&args)?;
    let errors = config.validate(cmd);
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
    let mut manifest = Manifest::new(cmd.name(), &config);
    match cmd {
        Command::Synth => synth(&config, &mut manifest)?,
        Command::Calibrate => calibrate_cmd(&config, &mut manifest)?,
        Command::Allocate => allocate_cmd(&config, &mut manifest)?,
        Command::Evaluate => evaluate_cmd(&config, &mut manifest)?,
        Command::Compare => compare_cmd(&config, &mut manifest)?,
    }
    let path = manifest.write(&config.output)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_config(args: &RunArgs) -> std::result::Result<RunConfig, CliError> {
    let mut config = match &args.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(vec![format!("config {}: {e}", path.display())]))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(vec![format!("config {}: {e}", path.display())]))?
        }
    };
    if let Some(s) = args.seed {
        config.seed = Some(s);
    }
    if let Some(o) = &args.output {
        config.output = o.clone();
    }
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    Ok(config)
}

fn read_map(path: &Path) -> Result<RasterGrid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("asc") | Some("txt") => read_ascii_grid_as(path, GridKind::Categorical),
        _ => read_grid(path),
    }
}

fn read_features(inputs: &[FeatureInput], manifest: &mut Manifest) -> Result<FeatureSpace> {
    let mut rasters = Vec::with_capacity(inputs.len());
    for f in inputs {
        let grid = match f.path.extension().and_then(|e| e.to_str()) {
            Some("asc") | Some("txt") => read_ascii_grid_as(&f.path, GridKind::Continuous)?,
            _ => read_grid(&f.path)?,
        };
        manifest.inputs.push(f.path.clone());
        rasters.push(grid);
    }
    FeatureSpace::from_rasters(inputs.iter().map(|f| f.name.clone()).collect(), &rasters)
}

fn feature_raster(features: &FeatureSpace, like: &RasterGrid, k: usize) -> Result<RasterGrid> {
    let values = (0..features.len()).map(|p| features.point(p)[k]).collect();
    like.continuous_like(values)
}

fn legend_of(config: &RunConfig, maps: &[&RasterGrid]) -> Result<StateLegend> {
    match &config.legend {
        Some(codes) => StateLegend::from_codes(codes),
        None => {
            let mut codes: Vec<i32> = maps.iter().flat_map(|m| m.census().into_keys()).collect();
            codes.sort_unstable();
            codes.dedup();
            StateLegend::from_codes(&codes)
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path, manifest: &mut Manifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))?;
    manifest.outputs.push(path.to_path_buf());
    Ok(())
}

/// Index of a `synth` output directory; paths are relative to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthIndex {
    pub benchmark: BenchmarkConfig,
    pub map_t0: PathBuf,
    pub map_t1: PathBuf,
    pub features: Vec<FeatureInput>,
    pub transited: usize,
    pub state_pixels: usize,
}

fn synth(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let out = &config.output;
    let seed = config.seed.expect("validated");
    let bench_config = config.synth.benchmark(seed, &config.kde);
    let b = manifest.time("synth", || Benchmark::build(&bench_config))?;
    let mut features = Vec::new();
    for (k, name) in b.features.names().iter().enumerate() {
        let file = PathBuf::from(format!("{name}.asc"));
        write_grid(&feature_raster(&b.features, &b.map_t0, k)?, out.join(&file))?;
        manifest.outputs.push(out.join(&file));
        features.push(FeatureInput { name: name.clone(), path: file });
    }
    for (grid, file) in [(&b.map_t0, "map_t0.asc"), (&b.map_t1, "map_t1.asc")] {
        write_grid(grid, out.join(file))?;
        manifest.outputs.push(out.join(file));
    }
    let index = SynthIndex {
        benchmark: b.config.clone(),
        map_t0: "map_t0.asc".into(),
        map_t1: "map_t1.asc".into(),
        features: features.clone(),
        transited: b.transited(),
        state_pixels: b.pixels.len(),
    };
    write_json(&index, &out.join("synth.json"), manifest)?;

    // Ready-made configurations for the next two stages.
    let model_dir = out.join("model");
    let calib = RunConfig {
        output: model_dir.clone(),
        map_t0: Some(out.join("map_t0.asc")),
        map_t1: Some(out.join("map_t1.asc")),
        features: features
            .iter()
            .map(|f| FeatureInput { name: f.name.clone(), path: out.join(&f.path) })
            .collect(),
        transitions: vec![(b.config.u, b.config.v)],
        kde: config.kde.clone(),
        seed: None,
        ..RunConfig::default()
    };
    write_json(&calib, &out.join("calibrate.json"), manifest)?;
    let eval = RunConfig {
        output: out.join("evaluation"),
        input: Some(out.clone()),
        model: Some(model_dir),
        kde: config.kde.clone(),
        seed: Some(derive_seed(seed, 2)),
        repetitions: config.repetitions,
        ..RunConfig::default()
    };
    write_json(&eval, &out.join("evaluate.json"), manifest)?;
    println!(
        "synth: {}x{} map, {} state-{} pixels, {} transited to {}",
        b.map_t0.width(),
        b.map_t0.height(),
        b.pixels.len(),
        b.config.u,
        b.transited(),
        b.config.v
    );
    Ok(())
}

fn calibrate_cmd(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let p0 = config.map_t0.as_ref().expect("validated");
    let p1 = config.map_t1.as_ref().expect("validated");
    let map_t0 = read_map(p0)?;
    let map_t1 = read_map(p1)?;
    manifest.inputs.extend([p0.clone(), p1.clone()]);
    let features = read_features(&config.features, manifest)?;
    let legend = legend_of(config, &[&map_t0, &map_t1])?;
    let scenario = match &config.scenario {
        Some(path) => {
            manifest.inputs.push(path.clone());
            Some(TransitionMatrix::read_csv(path, Some(&legend))?)
        }
        None => None,
    };
    let transitions = if config.transitions.is_empty() {
        observed_transitions(&map_t0, &map_t1, &legend)?
    } else {
        config.transitions.clone()
    };
    let model = manifest.time("calibration", || {
        calibrate(&map_t0, &map_t1, &features, &legend, &transitions, &config.kde, scenario.as_ref())
    })?;
    model.save(&config.output)?;
    for entry in fs::read_dir(&config.output).map_err(|e| Error::io(&config.output, e))? {
        let path = entry.map_err(|e| Error::io(&config.output, e))?.path();
        if path.file_name().is_some_and(|n| n != "manifest.json") {
            manifest.outputs.push(path);
        }
    }
    manifest.outputs.sort();
    for &(u, v) in model.transitions() {
        println!("calibrate: {u} -> {v}, P(v|u) = {:.6}", model.global().get(u, v)?);
    }
    Ok(())
}

fn observed_transitions(map_t0: &RasterGrid, map_t1: &RasterGrid, legend: &StateLegend) -> Result<Vec<(i32, i32)>> {
    let m = observed_transition_matrix(map_t0, map_t1, legend)?;
    let mut out = Vec::new();
    for u in legend.codes() {
        for v in legend.codes() {
            if u != v && m.get(u, v)? > 0.0 {
                out.push((u, v));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("the two maps show no transition".into()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct AllocationRun {
    run: usize,
    seed: u64,
    map: PathBuf,
    refreshes: usize,
    transitions: Vec<TransitionReport>,
}

fn allocate_cmd(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let seed = config.seed.expect("validated");
    let p0 = config.map_t0.as_ref().expect("validated");
    let map = read_map(p0)?;
    manifest.inputs.push(p0.clone());
    let features = read_features(&config.features, manifest)?;
    let model_dir = config.model.as_ref().expect("validated");
    let legend = match &config.legend {
        Some(codes) => Some(StateLegend::from_codes(codes)?),
        None => None,
    };
    let mut model = TransitionModel::load(model_dir, legend.as_ref())?;
    manifest.inputs.push(model_dir.clone());
    if let Some(path) = &config.scenario {
        let scenario = TransitionMatrix::read_csv(path, Some(model.legend()))?;
        model = model.with_global(scenario)?;
        manifest.inputs.push(path.clone());
    }
    let allocation = config.allocation();
    let mut runs = Vec::with_capacity(config.repetitions);
    let out = &config.output;
    let outcomes = manifest.time("allocation", || {
        (0..config.repetitions)
            .map(|r| {
                let s = derive_seed(seed, r as u64);
                allocate(&model, &map, &features, &allocation, s).map(|o| (s, o))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (r, (s, outcome)) in outcomes.into_iter().enumerate() {
        let path = out.join(format!("map_{r}.asc"));
        write_grid(&outcome.map, &path)?;
        manifest.outputs.push(path.clone());
        for t in &outcome.transitions {
            println!("allocate run {r}: {} -> {}: {} of {} pixels", t.u, t.v, t.allocated, t.target);
        }
        runs.push(AllocationRun {
            run: r,
            seed: s,
            map: path,
            refreshes: outcome.refreshes,
            transitions: outcome.transitions,
        });
    }
    write_json(&runs, &out.join("allocation.json"), manifest)
}

fn load_benchmark(config: &RunConfig, manifest: &mut Manifest) -> Result<Benchmark> {
    let dir = config.input.as_ref().expect("validated");
    let index_path = dir.join("synth.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: SynthIndex = serde_json::from_str(&text)?;
    manifest.inputs.push(index_path);
    let map_t0 = read_map(&dir.join(&index.map_t0))?;
    let map_t1 = read_map(&dir.join(&index.map_t1))?;
    manifest.inputs.extend([dir.join(&index.map_t0), dir.join(&index.map_t1)]);
    let inputs: Vec<FeatureInput> = index
        .features
        .iter()
        .map(|f| FeatureInput { name: f.name.clone(), path: dir.join(&f.path) })
        .collect();
    let features = read_features(&inputs, manifest)?;
    let mut bench_config = index.benchmark;
    bench_config.kde = config.kde.clone();
    Benchmark::from_parts(bench_config, map_t0, map_t1, features)
}

fn evaluate_cmd(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let seed = config.seed.expect("validated");
    let b = load_benchmark(config, manifest)?;
    let model = match &config.model {
        Some(dir) => {
            manifest.inputs.push(dir.clone());
            Some(TransitionModel::load(dir, Some(&b.legend))?)
        }
        None => None,
    };
    let report = b.evaluate_with(model, &config.allocation(), config.repetitions, seed)?;
    for (stage, seconds) in &report.runtimes {
        manifest.stages.push(StageTime { stage: stage.clone(), seconds: *seconds });
    }
    let out = &config.output;
    write_json(&report, &out.join("report.json"), manifest)?;
    for cut in &report.cuts {
        let path = out.join(format!("cut_{}.csv", cut.name));
        cut.write_csv(&path)?;
        manifest.outputs.push(path);
    }
    println!(
        "evaluate: m = {}, eps_calib = {:.4e}, eps_tot = {:.4e}, eps_tot_R = {:.4e} (R = {})",
        report.m, report.epsilon_calib, report.epsilon_tot, report.epsilon_tot_r, report.repetitions
    );
    Ok(())
}

fn compare_cmd(config: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let seed = config.seed.expect("validated");
    let b = load_benchmark(config, manifest)?;
    let strategies = config.strategies.clone().unwrap_or_else(default_strategies);
    let rows = manifest.time("comparison", || b.compare(&strategies, &config.allocation(), config.repetitions, seed))?;
    let out = &config.output;
    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "strategy",
        "epsilon_calib",
        "epsilon_tot",
        "epsilon_tot_mean",
        "epsilon_tot_se",
        "epsilon_tot_R",
        "identical_maps",
    ])?;
    for r in &rows {
        w.write_record([
            r.strategy.clone(),
            r.epsilon_calib.to_string(),
            r.epsilon_tot.to_string(),
            r.epsilon_tot_mean.to_string(),
            r.epsilon_tot_se.to_string(),
            r.epsilon_tot_r.to_string(),
            r.identical_maps.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    manifest.outputs.push(path);
    write_json(&rows, &out.join("compare.json"), manifest)?;
    print!("{}", format_comparison(&rows, config.repetitions));
    Ok(())
}

/// Table of strategy rows with the expected orderings checked.
pub fn format_comparison(rows: &[StrategyRow], repetitions: usize) -> String {
    let mut s = format!(
        "{:<22} {:>12} {:>12} {:>12} {:>10} {:>12}\n",
        "strategy", "eps_calib", "eps_tot", "mean eps_tot", "se", format!("eps_tot_{repetitions}")
    );
    for r in rows {
        s += &format!(
            "{:<22} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.1e} {:>12.4e}\n",
            r.strategy, r.epsilon_calib, r.epsilon_tot, r.epsilon_tot_mean, r.epsilon_tot_se, r.epsilon_tot_r
        );
    }
    let find = |name: &str| rows.iter().find(|r| r.strategy == name);
    if let (Some(f10), Some(f100), Some(none)) = (find("dinamica_rank F=10"), find("dinamica_rank F=100"), find("none")) {
        let holds = f10.epsilon_tot_mean > f100.epsilon_tot_mean && f100.epsilon_tot_mean > none.epsilon_tot_mean;
        s += &format!("ordering F=10 > F=100 > none: {}\n", if holds { "holds" } else { "violated" });
    }
    if let Some(lcm) = find("lcm_rank") {
        let same = lcm.epsilon_tot_r == lcm.epsilon_tot;
        s += &format!("lcm_rank eps_tot_R == eps_tot: {same}\n");
    }
    s
}

fn timing(paths: &[PathBuf]) -> std::result::Result<(), CliError> {
    let manifests = paths
        .iter()
        .map(|p| Manifest::read(p).map(|m| (p.display().to_string(), m)))
        .collect::<Result<Vec<_>>>()?;
    print!("{}", timing_report(&manifests));
    Ok(())
}
