use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::{
    AllocationConfig, DynamicDistance, PatchParams, PruningConfig, TransitionPatch, TransitionTarget,
    DEFAULT_MAX_FAILED_PASSES, DEFAULT_REFRESH_THRESHOLD,
};
use crate::density::KdeConfig;
use crate::evaluation::{BenchmarkConfig, CutSpec, GroundTruthSpec, LandscapeConfig, BENCHMARK_RATE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Calibrate,
    Allocate,
    Evaluate,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Calibrate => "calibrate",
            Command::Allocate => "allocate",
            Command::Evaluate => "evaluate",
            Command::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureInput {
    pub name: String,
    pub path: PathBuf,
}

/// Synthetic benchmark settings for `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_cell")]
    pub cell_size: f64,
    /// Mean of `P*` over the state-`u` pixels; `null` keeps the amplitude of `truth`.
    #[serde(default = "default_rate")]
    pub target_rate: Option<f64>,
    #[serde(default)]
    pub landscape: Option<LandscapeConfig>,
    #[serde(default)]
    pub truth: Option<GroundTruthSpec>,
    #[serde(default)]
    pub cuts: Option<Vec<CutSpec>>,
    #[serde(default = "default_u")]
    pub u: i32,
    #[serde(default = "default_v")]
    pub v: i32,
    /// Patches of the forged reference map.
    #[serde(default = "PatchParams::single_pixel")]
    pub patch: PatchParams,
}

fn default_side() -> usize {
    256
}

fn default_cell() -> f64 {
    5.0
}

fn default_rate() -> Option<f64> {
    Some(BENCHMARK_RATE)
}

fn default_u() -> i32 {
    4
}

fn default_v() -> i32 {
    5
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            width: default_side(),
            height: default_side(),
            cell_size: default_cell(),
            target_rate: default_rate(),
            landscape: None,
            truth: None,
            cuts: None,
            u: default_u(),
            v: default_v(),
            patch: PatchParams::single_pixel(),
        }
    }
}

impl SynthSettings {
    pub fn benchmark(&self, seed: u64, kde: &KdeConfig) -> BenchmarkConfig {
        let mut config = BenchmarkConfig::new(self.width, self.height, seed);
        config.landscape = match &self.landscape {
            Some(l) => l.clone(),
            None => LandscapeConfig::seven_classes(self.width, self.height, self.cell_size),
        };
        if let Some(t) = &self.truth {
            config.truth = t.clone();
        }
        if let Some(c) = &self.cuts {
            config.cuts = c.clone();
        }
        config.target_rate = self.target_rate;
        config.u = self.u;
        config.v = self.v;
        config.patch = self.patch.clone();
        config.kde = kde.clone();
        config
    }
}

/// Declarative run description; every command reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Directory written by `synth` (for `evaluate` and `compare`).
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Initial map; the input map of `allocate`.
    #[serde(default)]
    pub map_t0: Option<PathBuf>,
    #[serde(default)]
    pub map_t1: Option<PathBuf>,
    #[serde(default)]
    pub features: Vec<FeatureInput>,
    /// State codes; taken from the maps when absent.
    #[serde(default)]
    pub legend: Option<Vec<i32>>,
    #[serde(default)]
    pub transitions: Vec<(i32, i32)>,
    #[serde(default)]
    pub kde: KdeConfig,
    /// Transition matrix CSV replacing the observed `P(v|u)`.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// Model directory written by `calibrate`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub patch: PatchParams,
    #[serde(default)]
    pub patches: Vec<TransitionPatch>,
    #[serde(default)]
    pub pruning: PruningConfig,
    #[serde(default = "default_threshold")]
    pub refresh_threshold: f64,
    #[serde(default)]
    pub targets: Vec<TransitionTarget>,
    #[serde(default)]
    pub dynamic_distance: Option<DynamicDistance>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub synth: SynthSettings,
    /// Strategies of `compare`; none, F=10, F=100 and lcm_rank by default.
    #[serde(default)]
    pub strategies: Option<Vec<PruningConfig>>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_threshold() -> f64 {
    DEFAULT_REFRESH_THRESHOLD
}

fn default_repetitions() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl RunConfig {
    pub fn allocation(&self) -> AllocationConfig {
        AllocationConfig {
            patch: self.patch.clone(),
            patches: self.patches.clone(),
            pruning: self.pruning.clone(),
            refresh_threshold: self.refresh_threshold,
            kde: self.kde.clone(),
            targets: self.targets.clone(),
            dynamic_distance: self.dynamic_distance.clone(),
            max_failed_passes: DEFAULT_MAX_FAILED_PASSES,
        }
    }

    /// Field-level problems that make `command` impossible to run; empty when valid.
    pub fn validate(&self, command: Command) -> Vec<String> {
        let mut errors = Vec::new();
        let mut check = |field: &str, r: crate::Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{field}: {}", strip_kind(&e.to_string())));
            }
        };
        check("kde", self.kde.validate());
        check("patch", self.patch.validate());
        for p in &self.patches {
            check(&format!("patches[{}->{}]", p.u, p.v), p.patch.validate());
        }
        check("pruning", self.pruning.validate());
        if let Some(list) = &self.strategies {
            for (i, s) in list.iter().enumerate() {
                check(&format!("strategies[{i}]"), s.validate());
            }
        }
        if !(self.refresh_threshold > 0.0 && self.refresh_threshold <= 1.0) {
            errors.push(format!("refresh_threshold must be in (0, 1], got {}", self.refresh_threshold));
        }
        if self.repetitions < 1 {
            errors.push("repetitions must be >= 1".into());
        }
        let needs_seed = !matches!(command, Command::Calibrate);
        if needs_seed && self.seed.is_none() {
            errors.push(format!("seed is required for {}", command.name()));
        }
        let cmd = command.name();
        let require = |errors: &mut Vec<String>, field: &str, path: Option<&Path>| match path {
            None => errors.push(format!("{field} is required for {cmd}")),
            Some(p) if !p.exists() => errors.push(format!("{field}: {} does not exist", p.display())),
            Some(_) => {}
        };
        match command {
            Command::Synth => {
                if self.synth.width < 64 || self.synth.height < 64 {
                    errors.push(format!(
                        "synth: landscape must be at least 64x64, got {}x{}",
                        self.synth.width, self.synth.height
                    ));
                }
                if let Some(r) = self.synth.target_rate {
                    if !(r > 0.0 && r < 1.0) {
                        errors.push(format!("synth.target_rate must be in (0, 1), got {r}"));
                    }
                }
            }
            Command::Calibrate => {
                require(&mut errors, "map_t0", self.map_t0.as_deref());
                require(&mut errors, "map_t1", self.map_t1.as_deref());
                if let Some(s) = &self.scenario {
                    require(&mut errors, "scenario", Some(s));
                }
            }
            Command::Allocate => {
                require(&mut errors, "map_t0", self.map_t0.as_deref());
                require(&mut errors, "model", self.model.as_deref());
                if let Some(s) = &self.scenario {
                    require(&mut errors, "scenario", Some(s));
                }
            }
            Command::Evaluate | Command::Compare => {
                require(&mut errors, "input", self.input.as_deref());
                if let Some(m) = &self.model {
                    require(&mut errors, "model", Some(m));
                }
            }
        }
        if matches!(command, Command::Calibrate | Command::Allocate) {
            if self.features.is_empty() {
                errors.push(format!("features are required for {}", command.name()));
            }
            for (i, f) in self.features.iter().enumerate() {
                require(&mut errors, &format!("features[{i}] ({})", f.name), Some(&f.path));
            }
        }
        errors
    }
}

fn strip_kind(message: &str) -> &str {
    message.strip_prefix("invalid argument: ").unwrap_or(message)
}
