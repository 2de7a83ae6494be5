//! Transition probabilities `P(v|u,y)` from two dated maps via Bayes' rule
//! over kernel density estimates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::density::{load_kde, save_kde, BinnedKde, KdeConfig};
use crate::error::{Error, Result};
use crate::features::{fit_whitening, FeatureSpace, Whitening};
use crate::raster::{
    observed_transition_matrix, read_ascii_grid_as, write_ascii_grid, GridKind, RasterGrid,
    StateLegend, TransitionMatrix,
};

/// Below this `p(y|u)` (per unit whitened volume) a pixel is unsupported.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Nodata value written into probability rasters.
pub const PROBABILITY_NODATA: i64 = -9999;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSet {
    pub u: i32,
    pub v: i32,
    pub dims: usize,
    /// Pixels in state `u` at `t0` and `v` at `t1`.
    pub transited_pixels: Vec<usize>,
    /// Every usable pixel in state `u` at `t0`.
    pub state_pixels: Vec<usize>,
    /// Flattened `n x d` feature table of `transited_pixels`.
    pub z_transited: Vec<f64>,
    /// Flattened `N x d` feature table of `state_pixels`.
    pub z_state_u: Vec<f64>,
}

impl CalibrationSet {
    pub fn n(&self) -> usize {
        self.transited_pixels.len()
    }

    pub fn big_n(&self) -> usize {
        self.state_pixels.len()
    }
}

fn usable(i: usize, maps: &[&RasterGrid], features: &FeatureSpace) -> bool {
    !features.is_masked(i) && maps.iter().all(|m| !m.is_masked(i))
}

/// Unmasked pixels of `map` in state `u` whose features are defined.
pub fn state_pixels(map: &RasterGrid, features: &FeatureSpace, u: i32) -> Result<Vec<usize>> {
    features.ensure_aligned(map)?;
    let codes = map.require_codes()?;
    Ok((0..codes.len())
        .filter(|&i| codes[i] == u && usable(i, &[map], features))
        .collect())
}

pub fn extract_calibration_set(
    map_t0: &RasterGrid,
    map_t1: &RasterGrid,
    features: &FeatureSpace,
    u: i32,
    v: i32,
) -> Result<CalibrationSet> {
    map_t0.ensure_same_shape(map_t1, "calibration maps")?;
    features.ensure_aligned(map_t0)?;
    let a = map_t0.require_codes()?;
    let b = map_t1.require_codes()?;
    let mut state = Vec::new();
    let mut transited = Vec::new();
    for i in 0..a.len() {
        if a[i] != u || !usable(i, &[map_t0, map_t1], features) {
            continue;
        }
        state.push(i);
        if b[i] == v {
            transited.push(i);
        }
    }
    if state.is_empty() {
        return Err(Error::EmptyState(u));
    }
    Ok(CalibrationSet {
        u,
        v,
        dims: features.dims(),
        z_transited: features.gather(&transited),
        z_state_u: features.gather(&state),
        transited_pixels: transited,
        state_pixels: state,
    })
}

/// `P(v|u) p(y|u,v) / p(y|u)`, clamped to `[0, 1]`; zero where `p(y|u)` is
/// at or below [`DENSITY_FLOOR`].
pub fn bayes_transition_probability(p_vu: f64, p_y_uv: f64, p_y_u: f64) -> Result<f64> {
    if !(p_vu >= 0.0) || !(p_y_uv >= 0.0) || !(p_y_u >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative or undefined input: P(v|u)={p_vu}, p(y|u,v)={p_y_uv}, p(y|u)={p_y_u}"
        )));
    }
    Ok(bayes_unchecked(p_vu, p_y_uv, p_y_u))
}

#[inline]
fn bayes_unchecked(p_vu: f64, p_y_uv: f64, p_y_u: f64) -> f64 {
    if p_y_u <= DENSITY_FLOOR || p_vu == 0.0 {
        0.0
    } else {
        (p_vu * p_y_uv / p_y_u).clamp(0.0, 1.0)
    }
}

/// Scales each row of a `m x k` table whose sum exceeds one back onto one.
pub(crate) fn renormalize_rows(columns: &mut [Vec<f64>]) {
    let Some(m) = columns.first().map(Vec::len) else {
        return;
    };
    for i in 0..m {
        let s: f64 = columns.iter().map(|c| c[i]).sum();
        if s > 1.0 {
            for c in columns.iter_mut() {
                c[i] /= s;
            }
        }
    }
}

/// `p(y|u)` together with the whitening shared by every density of `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDensity {
    pub whitening: Whitening,
    pub kde: BinnedKde,
}

impl StateDensity {
    pub fn estimate_raw(&self, points: &[f64]) -> Result<Vec<f64>> {
        self.kde.estimate_batch(&self.whitening.apply_batch(points)?)
    }
}

#[derive(Clone, Debug)]
pub struct TransitionModel {
    legend: StateLegend,
    global: TransitionMatrix,
    transitions: Vec<(i32, i32)>,
    density_u: BTreeMap<i32, StateDensity>,
    /// `None` when no transition was observed.
    density_uv: BTreeMap<(i32, i32), Option<BinnedKde>>,
    prob_maps: BTreeMap<(i32, i32), RasterGrid>,
    evaluation_pixels: BTreeMap<i32, Vec<usize>>,
}

/// Fits every density and evaluates `P(v|u,y)` on all state-`u` pixels of
/// `map_t0`. `scenario` replaces the observed `P(v|u)` when given.
pub fn calibrate(
    map_t0: &RasterGrid,
    map_t1: &RasterGrid,
    features: &FeatureSpace,
    legend: &StateLegend,
    transitions: &[(i32, i32)],
    config: &KdeConfig,
    scenario: Option<&TransitionMatrix>,
) -> Result<TransitionModel> {
    config.validate()?;
    map_t0.validate_codes(legend)?;
    map_t1.validate_codes(legend)?;
    let transitions = normalize_transitions(legend, transitions)?;
    let global = match scenario {
        Some(m) => {
            if m.legend().codes() != legend.codes() {
                return Err(Error::Legend("scenario matrix legend differs from the maps".into()));
            }
            m.clone()
        }
        None => observed_transition_matrix(map_t0, map_t1, legend)?,
    };
    let d = features.dims();

    let mut density_u = BTreeMap::new();
    let mut density_uv = BTreeMap::new();
    let mut pixels_by_state = BTreeMap::new();
    for &(u, v) in &transitions {
        let set = extract_calibration_set(map_t0, map_t1, features, u, v)?;
        if !density_u.contains_key(&u) {
            let whitening = fit_whitening(&set.z_state_u, d)?.with_names(features.names());
            let white = whitening.apply_batch(&set.z_state_u)?;
            let kde = config.fit(&white, d, None)?;
            density_u.insert(u, StateDensity { whitening, kde });
            pixels_by_state.insert(u, set.state_pixels.clone());
        }
        let sd = &density_u[&u];
        let kde_uv = match set.n() {
            0 => {
                warn!("no pixel went from {u} to {v}; its probability map is all zero");
                None
            }
            n => {
                let white = sd.whitening.apply_batch(&set.z_transited)?;
                let mut cfg = config.clone();
                if n < 2 && cfg.bandwidth.is_none() {
                    warn!("single observed transition {u} -> {v}; using the two-sample bandwidth");
                    cfg.bandwidth = Some(crate::density::terrell_bandwidth(
                        2,
                        d,
                        sd.kde.kernel(),
                    )?);
                }
                Some(cfg.fit(&white, d, Some(sd.kde.bounds().to_vec()))?)
            }
        };
        density_uv.insert((u, v), kde_uv);
    }

    let mut model = TransitionModel {
        legend: legend.clone(),
        global,
        transitions,
        density_u,
        density_uv,
        prob_maps: BTreeMap::new(),
        evaluation_pixels: pixels_by_state,
    };
    model.evaluate_maps(map_t0, features)?;
    Ok(model)
}

fn normalize_transitions(legend: &StateLegend, transitions: &[(i32, i32)]) -> Result<Vec<(i32, i32)>> {
    if transitions.is_empty() {
        return Err(Error::InvalidArgument("no transition requested".into()));
    }
    let mut out: Vec<(i32, i32)> = Vec::new();
    for &(u, v) in transitions {
        legend.require_index(u)?;
        legend.require_index(v)?;
        if u == v {
            return Err(Error::InvalidArgument(format!("transition {u} -> {v} is persistence")));
        }
        if !out.contains(&(u, v)) {
            out.push((u, v));
        }
    }
    out.sort_unstable();
    Ok(out)
}

impl TransitionModel {
    /// Reassembles a model from stored densities (see [`TransitionModel::load`]).
    pub fn from_parts(
        global: TransitionMatrix,
        density_u: BTreeMap<i32, StateDensity>,
        density_uv: BTreeMap<(i32, i32), Option<BinnedKde>>,
    ) -> Result<Self> {
        let legend = global.legend().clone();
        let transitions: Vec<(i32, i32)> = density_uv.keys().copied().collect();
        let transitions = normalize_transitions(&legend, &transitions)?;
        for &(u, _) in &transitions {
            if !density_u.contains_key(&u) {
                return Err(Error::InvalidArgument(format!("missing p(y|u) for state {u}")));
            }
        }
        Ok(Self {
            legend,
            global,
            transitions,
            density_u,
            density_uv,
            prob_maps: BTreeMap::new(),
            evaluation_pixels: BTreeMap::new(),
        })
    }

    /// Computes the probability rasters on the state-`u` pixels of `map`.
    pub fn evaluate_maps(&mut self, map: &RasterGrid, features: &FeatureSpace) -> Result<()> {
        features.ensure_aligned(map)?;
        let mut maps = BTreeMap::new();
        let mut pixels_by_state = BTreeMap::new();
        for u in self.initial_states() {
            let pixels = state_pixels(map, features, u)?;
            let targets = self.targets_from(u);
            let probs = self.probabilities(u, &features.gather(&pixels))?;
            for (v, column) in targets.iter().zip(probs) {
                let mut values = vec![0.0; map.len()];
                for i in 0..map.len() {
                    if map.is_masked(i) || features.is_masked(i) {
                        values[i] = PROBABILITY_NODATA as f64;
                    }
                }
                for (&i, p) in pixels.iter().zip(column) {
                    values[i] = p;
                }
                let grid = map.continuous_like(values)?.with_nodata(PROBABILITY_NODATA);
                maps.insert((u, *v), grid);
            }
            pixels_by_state.insert(u, pixels);
        }
        self.prob_maps = maps;
        self.evaluation_pixels = pixels_by_state;
        Ok(())
    }

    /// Replaces the global rates `P(v|u)`, e.g. with a scenario matrix.
    pub fn with_global(mut self, global: TransitionMatrix) -> Result<Self> {
        if global.legend().codes() != self.legend.codes() {
            return Err(Error::Legend("scenario matrix legend differs from the model".into()));
        }
        self.global = global;
        Ok(self)
    }

    pub fn legend(&self) -> &StateLegend {
        &self.legend
    }

    pub fn global(&self) -> &TransitionMatrix {
        &self.global
    }

    pub fn transitions(&self) -> &[(i32, i32)] {
        &self.transitions
    }

    pub fn initial_states(&self) -> Vec<i32> {
        let mut u: Vec<i32> = self.transitions.iter().map(|t| t.0).collect();
        u.dedup();
        u
    }

    /// Final states reachable from `u`, in ascending order.
    pub fn targets_from(&self, u: i32) -> Vec<i32> {
        self.transitions
            .iter()
            .filter(|t| t.0 == u)
            .map(|t| t.1)
            .collect()
    }

    pub fn state_density(&self, u: i32) -> Option<&StateDensity> {
        self.density_u.get(&u)
    }

    pub fn transition_density(&self, u: i32, v: i32) -> Option<&BinnedKde> {
        self.density_uv.get(&(u, v)).and_then(Option::as_ref)
    }

    pub fn prob_map(&self, u: i32, v: i32) -> Option<&RasterGrid> {
        self.prob_maps.get(&(u, v))
    }

    /// Pixels at which the probability rasters were evaluated.
    pub fn evaluation_pixels(&self, u: i32) -> Option<&[usize]> {
        self.evaluation_pixels.get(&u).map(Vec::as_slice)
    }

    /// `P(v|u,y)` for every target `v` of `u` (see [`Self::targets_from`]) at
    /// each row of a raw `m x d` feature table, renormalised per row.
    pub fn probabilities(&self, u: i32, points: &[f64]) -> Result<Vec<Vec<f64>>> {
        let sd = self
            .density_u
            .get(&u)
            .ok_or_else(|| Error::InvalidArgument(format!("state {u} is not modelled")))?;
        let white = sd.whitening.apply_batch(points)?;
        let p_u = sd.kde.estimate_batch(&white)?;
        let mut columns = Vec::new();
        for v in self.targets_from(u) {
            let p_vu = self.global.get(u, v)?;
            let column = match self.transition_density(u, v) {
                None => vec![0.0; p_u.len()],
                Some(kde) => kde
                    .estimate_batch(&white)?
                    .into_iter()
                    .zip(&p_u)
                    .map(|(puv, &pu)| bayes_unchecked(p_vu, puv, pu))
                    .collect(),
            };
            columns.push(column);
        }
        renormalize_rows(&mut columns);
        Ok(columns)
    }

    /// `p(y|u,v)` in the whitened space of `u`; zeros when no transition was observed.
    pub fn transition_density_at(&self, u: i32, v: i32, points: &[f64]) -> Result<Vec<f64>> {
        let sd = self
            .density_u
            .get(&u)
            .ok_or_else(|| Error::InvalidArgument(format!("state {u} is not modelled")))?;
        match self.transition_density(u, v) {
            None => Ok(vec![0.0; points.len() / sd.whitening.dims().max(1)]),
            Some(kde) => kde.estimate_batch(&sd.whitening.apply_batch(points)?),
        }
    }

    /// Writes `matrix.csv`, `density_u_<u>.kde`, `density_uv_<u>_<v>.kde` and
    /// `prob_<u>_<v>.asc` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.global.write_csv(dir.join("matrix.csv"))?;
        for (u, sd) in &self.density_u {
            save_kde(&dir.join(format!("density_u_{u}.kde")), &sd.kde, Some(&sd.whitening))?;
        }
        for ((u, v), kde) in &self.density_uv {
            let path = dir.join(format!("density_uv_{u}_{v}.kde"));
            match kde {
                Some(kde) => save_kde(&path, kde, None)?,
                None => {
                    for p in [path.clone(), path.with_extension("kde.bin")] {
                        if p.exists() {
                            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                        }
                    }
                }
            }
        }
        for ((u, v), grid) in &self.prob_maps {
            write_ascii_grid(grid, dir.join(format!("prob_{u}_{v}.asc")))?;
        }
        Ok(())
    }

    /// Loads a model written by [`Self::save`]. Transitions are those with a
    /// probability raster; a missing `density_uv` file means none was observed.
    pub fn load(dir: &Path, legend: Option<&StateLegend>) -> Result<Self> {
        let global = TransitionMatrix::read_csv(dir.join("matrix.csv"), legend)?;
        let mut transitions = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(rest) = name.strip_prefix("prob_").and_then(|r| r.strip_suffix(".asc")) {
                let parsed = rest
                    .split_once('_')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                match parsed {
                    Some(t) => transitions.push(t),
                    None => return Err(Error::Format(format!("unexpected model file {name}"))),
                }
            }
        }
        if transitions.is_empty() {
            return Err(Error::Format(format!("{} holds no probability raster", dir.display())));
        }
        transitions.sort_unstable();
        let mut density_u = BTreeMap::new();
        let mut density_uv = BTreeMap::new();
        let mut prob_maps = BTreeMap::new();
        for &(u, v) in &transitions {
            if !density_u.contains_key(&u) {
                let (kde, whitening) = load_kde(&dir.join(format!("density_u_{u}.kde")))?;
                let whitening = whitening.ok_or_else(|| {
                    Error::Format(format!("density_u_{u}.kde carries no whitening"))
                })?;
                density_u.insert(u, StateDensity { whitening, kde });
            }
            let path = dir.join(format!("density_uv_{u}_{v}.kde"));
            let kde = if path.exists() { Some(load_kde(&path)?.0) } else { None };
            density_uv.insert((u, v), kde);
            let grid = read_ascii_grid_as(dir.join(format!("prob_{u}_{v}.asc")), GridKind::Continuous)?;
            prob_maps.insert((u, v), grid);
        }
        let mut model = Self::from_parts(global, density_u, density_uv)?;
        model.prob_maps = prob_maps;
        Ok(model)
    }
}
