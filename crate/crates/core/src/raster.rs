//! Raster data model and interchange formats.
//!
//! Grids are stored row-major with row 0 at the top. Two file formats are
//! supported:
//!
//! * ESRI-style ASCII grids (`ncols`, `nrows`, `xllcorner`, `yllcorner`,
//!   `cellsize`, `NODATA_value`, then one text row per raster row).
//! * A little-endian binary twin: magic `LUCC`, `u32` width, `u32` height,
//!   `f64` cell size, `i64` nodata, `u8` kind (0 categorical, 1 continuous),
//!   then `i32` codes or `f64` values.
//!
//! Transition matrices are exchanged as CSV whose first row and first column
//! hold state codes, with row = initial state `u` and column = final state `v`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODATA: i64 = -9999;
const BINARY_MAGIC: &[u8; 4] = b"LUCC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridValues {
    Categorical(Vec<i32>),
    Continuous(Vec<f64>),
}

impl GridValues {
    fn len(&self) -> usize {
        match self {
            GridValues::Categorical(v) => v.len(),
            GridValues::Continuous(v) => v.len(),
        }
    }
}

/// A rectangular pixel grid holding either state codes or continuous values.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    xll: f64,
    yll: f64,
    nodata: i64,
    values: GridValues,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, values: GridValues) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{}x{} grid needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            xll: 0.0,
            yll: 0.0,
            nodata: DEFAULT_NODATA,
            values,
        })
    }

    pub fn categorical(width: usize, height: usize, cell_size: f64, codes: Vec<i32>) -> Result<Self> {
        Self::new(width, height, cell_size, GridValues::Categorical(codes))
    }

    pub fn continuous(width: usize, height: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(width, height, cell_size, GridValues::Continuous(values))
    }

    /// A continuous grid with the same geometry and nodata sentinel as `self`.
    pub fn continuous_like(&self, values: Vec<f64>) -> Result<Self> {
        let mut grid = Self::continuous(self.width, self.height, self.cell_size, values)?;
        grid.xll = self.xll;
        grid.yll = self.yll;
        grid.nodata = self.nodata;
        Ok(grid)
    }

    /// A categorical grid with the same geometry and nodata sentinel as `self`.
    pub fn categorical_like(&self, codes: Vec<i32>) -> Result<Self> {
        let mut grid = Self::categorical(self.width, self.height, self.cell_size, codes)?;
        grid.xll = self.xll;
        grid.yll = self.yll;
        grid.nodata = self.nodata;
        Ok(grid)
    }

    pub fn with_origin(mut self, xll: f64, yll: f64) -> Self {
        self.xll = xll;
        self.yll = yll;
        self
    }

    pub fn with_nodata(mut self, nodata: i64) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.xll, self.yll)
    }

    pub fn nodata(&self) -> i64 {
        self.nodata
    }

    pub fn kind(&self) -> GridKind {
        match self.values {
            GridValues::Categorical(_) => GridKind::Categorical,
            GridValues::Continuous(_) => GridKind::Continuous,
        }
    }

    pub fn values(&self) -> &GridValues {
        &self.values
    }

    pub fn codes(&self) -> Option<&[i32]> {
        match &self.values {
            GridValues::Categorical(v) => Some(v),
            GridValues::Continuous(_) => None,
        }
    }

    pub fn codes_mut(&mut self) -> Option<&mut [i32]> {
        match &mut self.values {
            GridValues::Categorical(v) => Some(v),
            GridValues::Continuous(_) => None,
        }
    }

    pub fn data(&self) -> Option<&[f64]> {
        match &self.values {
            GridValues::Continuous(v) => Some(v),
            GridValues::Categorical(_) => None,
        }
    }

    pub(crate) fn require_codes(&self) -> Result<&[i32]> {
        self.codes()
            .ok_or_else(|| Error::InvalidArgument("expected a categorical grid".into()))
    }

    pub(crate) fn require_data(&self) -> Result<&[f64]> {
        self.data()
            .ok_or_else(|| Error::InvalidArgument("expected a continuous grid".into()))
    }

    pub fn is_masked(&self, index: usize) -> bool {
        match &self.values {
            GridValues::Categorical(v) => i64::from(v[index]) == self.nodata,
            GridValues::Continuous(v) => v[index] == self.nodata as f64 || v[index].is_nan(),
        }
    }

    /// Row and column of a linear pixel index.
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn same_shape(&self, other: &RasterGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn ensure_same_shape(&self, other: &RasterGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Pixel count per state code, masked pixels excluded.
    pub fn census(&self) -> BTreeMap<i32, usize> {
        let mut counts = BTreeMap::new();
        if let Some(codes) = self.codes() {
            for (i, &c) in codes.iter().enumerate() {
                if !self.is_masked(i) {
                    *counts.entry(c).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Checks that every unmasked code is declared in `legend`.
    pub fn validate_codes(&self, legend: &StateLegend) -> Result<()> {
        let codes = self.require_codes()?;
        for (i, &c) in codes.iter().enumerate() {
            if !self.is_masked(i) && legend.index_of(c).is_none() {
                return Err(Error::UnknownState {
                    code: c,
                    message: format!("pixel {i} holds a code absent from the legend"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub code: i32,
    pub label: String,
}

/// Ordered list of land-use states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<State>", into = "Vec<State>")]
pub struct StateLegend {
    states: Vec<State>,
}

impl StateLegend {
    pub fn new(states: Vec<State>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::Legend("at least two states are required".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if s.code < 0 {
                return Err(Error::Legend(format!("negative code {}", s.code)));
            }
            if states[..i].iter().any(|o| o.code == s.code) {
                return Err(Error::Legend(format!("duplicate code {}", s.code)));
            }
        }
        Ok(Self { states })
    }

    pub fn from_codes(codes: &[i32]) -> Result<Self> {
        Self::new(
            codes
                .iter()
                .map(|&code| State {
                    code,
                    label: code.to_string(),
                })
                .collect(),
        )
    }

    /// Seven coarse land-use classes used by the synthetic benchmark.
    pub fn seven_classes() -> Self {
        let labels = [
            "water",
            "mineral",
            "forest",
            "agricultural",
            "urban",
            "economic activity",
            "other",
        ];
        Self {
            states: labels
                .iter()
                .enumerate()
                .map(|(i, l)| State {
                    code: i as i32 + 1,
                    label: (*l).to_string(),
                })
                .collect(),
        }
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn codes(&self) -> Vec<i32> {
        self.states.iter().map(|s| s.code).collect()
    }

    pub fn index_of(&self, code: i32) -> Option<usize> {
        self.states.iter().position(|s| s.code == code)
    }

    pub(crate) fn require_index(&self, code: i32) -> Result<usize> {
        self.index_of(code).ok_or_else(|| Error::UnknownState {
            code,
            message: "not declared in the legend".into(),
        })
    }
}

impl TryFrom<Vec<State>> for StateLegend {
    type Error = Error;
    fn try_from(states: Vec<State>) -> Result<Self> {
        Self::new(states)
    }
}

impl From<StateLegend> for Vec<State> {
    fn from(legend: StateLegend) -> Self {
        legend.states
    }
}

/// Per-step transition probabilities `P(v|u)`, row = `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    legend: StateLegend,
    probabilities: Vec<f64>,
}

impl TransitionMatrix {
    pub fn identity(legend: StateLegend) -> Self {
        let n = legend.len();
        let mut probabilities = vec![0.0; n * n];
        for i in 0..n {
            probabilities[i * n + i] = 1.0;
        }
        Self {
            legend,
            probabilities,
        }
    }

    /// Builds a matrix from a full square table, validating every row.
    pub fn new(legend: StateLegend, probabilities: Vec<f64>) -> Result<Self> {
        let n = legend.len();
        if probabilities.len() != n * n {
            return Err(Error::Dimension(format!(
                "transition matrix needs {} entries, got {}",
                n * n,
                probabilities.len()
            )));
        }
        let m = Self {
            legend,
            probabilities,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.legend.len();
        for (k, &p) in self.probabilities.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "P({}|{}) = {p} is outside [0, 1]",
                    self.legend.states[k % n].code,
                    self.legend.states[k / n].code
                )));
            }
        }
        for i in 0..n {
            let off: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| self.probabilities[i * n + j])
                .sum();
            if off > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "row {} leaves the state with total probability {off}",
                    self.legend.states[i].code
                )));
            }
        }
        Ok(())
    }

    pub fn legend(&self) -> &StateLegend {
        &self.legend
    }

    pub fn get(&self, u: i32, v: i32) -> Result<f64> {
        let n = self.legend.len();
        let i = self.legend.require_index(u)?;
        let j = self.legend.require_index(v)?;
        Ok(self.probabilities[i * n + j])
    }

    /// Sets an off-diagonal entry and recomputes the persistence remainder.
    pub fn set_transition(&mut self, u: i32, v: i32, p: f64) -> Result<()> {
        if u == v {
            return Err(Error::InvalidArgument(
                "the diagonal is the persistence remainder and cannot be set".into(),
            ));
        }
        let n = self.legend.len();
        let i = self.legend.require_index(u)?;
        let j = self.legend.require_index(v)?;
        let old = self.probabilities[i * n + j];
        self.probabilities[i * n + j] = p;
        let off: f64 = (0..n)
            .filter(|&k| k != i)
            .map(|k| self.probabilities[i * n + k])
            .sum();
        if !(0.0..=1.0).contains(&p) || off > 1.0 + 1e-12 {
            self.probabilities[i * n + j] = old;
            return Err(Error::InvalidArgument(format!(
                "P({v}|{u}) = {p} would make row {u} invalid"
            )));
        }
        self.probabilities[i * n + i] = (1.0 - off).max(0.0);
        Ok(())
    }

    pub fn row(&self, u: i32) -> Result<&[f64]> {
        let n = self.legend.len();
        let i = self.legend.require_index(u)?;
        Ok(&self.probabilities[i * n..(i + 1) * n])
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let codes = self.legend.codes();
        let mut header = vec![String::new()];
        header.extend(codes.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        let n = codes.len();
        for (i, code) in codes.iter().enumerate() {
            let mut row = vec![code.to_string()];
            row.extend(
                self.probabilities[i * n..(i + 1) * n]
                    .iter()
                    .map(|p| format!("{p:?}")),
            );
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV matrix. Labels are taken from `legend` when its codes
    /// match the file, otherwise the codes double as labels.
    pub fn read_csv(path: impl AsRef<Path>, legend: Option<&StateLegend>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(file);
        let mut records = r.records();
        let header = records
            .next()
            .ok_or(Error::Parse {
                line: 1,
                message: "empty matrix file".into(),
            })??;
        let codes: Vec<i32> = header
            .iter()
            .skip(1)
            .map(|s| {
                s.trim().parse::<i32>().map_err(|_| Error::Parse {
                    line: 1,
                    message: format!("bad state code {s:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let n = codes.len();
        let mut probabilities = vec![0.0; n * n];
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            let line = i + 2;
            if i >= n {
                return Err(Error::Dimension(format!("matrix has more than {n} rows")));
            }
            if rec.len() != n + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, got {}", n + 1, rec.len()),
                });
            }
            let code: i32 = rec[0].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad state code {:?}", &rec[0]),
            })?;
            if code != codes[i] {
                return Err(Error::Parse {
                    line,
                    message: format!("row code {code} does not match column code {}", codes[i]),
                });
            }
            for j in 0..n {
                probabilities[i * n + j] = rec[j + 1].trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad probability {:?}", &rec[j + 1]),
                })?;
            }
        }
        let legend = match legend {
            Some(l) if l.codes() == codes => l.clone(),
            _ => StateLegend::from_codes(&codes)?,
        };
        Self::new(legend, probabilities)
    }
}

/// Tallies `P(v|u)` from two aligned categorical maps. Masked pixels in
/// either map are ignored; states absent at `t0` get an identity row.
pub fn observed_transition_matrix(
    map_t0: &RasterGrid,
    map_t1: &RasterGrid,
    legend: &StateLegend,
) -> Result<TransitionMatrix> {
    map_t0.ensure_same_shape(map_t1, "calibration maps")?;
    let a = map_t0.require_codes()?;
    let b = map_t1.require_codes()?;
    let n = legend.len();
    let mut counts = vec![0u64; n * n];
    for i in 0..a.len() {
        if map_t0.is_masked(i) || map_t1.is_masked(i) {
            continue;
        }
        let iu = legend.require_index(a[i])?;
        let iv = legend.require_index(b[i])?;
        counts[iu * n + iv] += 1;
    }
    let mut probabilities = vec![0.0; n * n];
    for i in 0..n {
        let total: u64 = counts[i * n..(i + 1) * n].iter().sum();
        if total == 0 {
            probabilities[i * n + i] = 1.0;
            continue;
        }
        for j in 0..n {
            probabilities[i * n + j] = counts[i * n + j] as f64 / total as f64;
        }
    }
    Ok(TransitionMatrix {
        legend: legend.clone(),
        probabilities,
    })
}

fn parse_header_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value {raw:?} for {key}"),
    })
}

fn looks_continuous(token: &str) -> bool {
    token
        .bytes()
        .any(|b| matches!(b, b'.' | b'e' | b'E' | b'n' | b'N' | b'i' | b'I'))
}

/// Reads an ASCII grid; the kind is inferred from the value tokens
/// (any decimal point or exponent makes the grid continuous).
pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    read_ascii_grid_impl(path.as_ref(), None)
}

/// Reads an ASCII grid forcing the value kind.
pub fn read_ascii_grid_as(path: impl AsRef<Path>, kind: GridKind) -> Result<RasterGrid> {
    read_ascii_grid_impl(path.as_ref(), Some(kind))
}

fn read_ascii_grid_impl(path: &Path, kind: Option<GridKind>) -> Result<RasterGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut cell_size: Option<f64> = None;
    let mut xll = 0.0;
    let mut yll = 0.0;
    let mut centered = false;
    let mut nodata = DEFAULT_NODATA;
    let mut tokens: Vec<String> = Vec::new();
    let mut rows_read = 0usize;
    let mut in_header = true;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let first = parts.next().unwrap_or_default();
        if in_header && first.starts_with(|c: char| c.is_ascii_alphabetic()) {
            let key = first.to_ascii_lowercase();
            let value = parts.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("header key {first} has no value"),
            })?;
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("trailing tokens after {first}"),
                });
            }
            match key.as_str() {
                "ncols" => ncols = Some(parse_header_value(lineno, first, value)?),
                "nrows" => nrows = Some(parse_header_value(lineno, first, value)?),
                "xllcorner" => xll = parse_header_value(lineno, first, value)?,
                "yllcorner" => yll = parse_header_value(lineno, first, value)?,
                "xllcenter" => {
                    xll = parse_header_value(lineno, first, value)?;
                    centered = true;
                }
                "yllcenter" => {
                    yll = parse_header_value(lineno, first, value)?;
                    centered = true;
                }
                "cellsize" => cell_size = Some(parse_header_value(lineno, first, value)?),
                "nodata_value" => {
                    let v: f64 = parse_header_value(lineno, first, value)?;
                    if v.fract() != 0.0 || v.abs() > 9.0e15 {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!("NODATA_value must be an integer, got {value}"),
                        });
                    }
                    nodata = v as i64;
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unknown header key {first}"),
                    })
                }
            }
            continue;
        }
        in_header = false;
        let ncols = ncols.ok_or(Error::Parse {
            line: lineno,
            message: "data row before ncols header".into(),
        })?;
        let row: Vec<&str> = trimmed.split_whitespace().collect();
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "line {lineno}: expected {ncols} values (ncols), found {}",
                row.len()
            )));
        }
        rows_read += 1;
        tokens.extend(row.into_iter().map(str::to_owned));
    }

    let ncols = ncols.ok_or(Error::Parse {
        line: 0,
        message: "missing ncols".into(),
    })?;
    let nrows = nrows.ok_or(Error::Parse {
        line: 0,
        message: "missing nrows".into(),
    })?;
    let cell_size = cell_size.ok_or(Error::Parse {
        line: 0,
        message: "missing cellsize".into(),
    })?;
    if rows_read != nrows {
        return Err(Error::Dimension(format!(
            "header declares {nrows} rows, found {rows_read}"
        )));
    }
    if centered {
        xll -= 0.5 * cell_size;
        yll -= 0.5 * cell_size;
    }

    let kind = kind.unwrap_or_else(|| {
        if tokens.iter().any(|t| looks_continuous(t)) {
            GridKind::Continuous
        } else {
            GridKind::Categorical
        }
    });
    let values = match kind {
        GridKind::Categorical => GridValues::Categorical(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.parse::<i32>().map_err(|_| Error::Parse {
                        line: i / ncols + 1,
                        message: format!("data row {}: invalid state code {t:?}", i / ncols + 1),
                    })
                })
                .collect::<Result<_>>()?,
        ),
        GridKind::Continuous => GridValues::Continuous(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: i / ncols + 1,
                        message: format!("data row {}: invalid value {t:?}", i / ncols + 1),
                    })
                })
                .collect::<Result<_>>()?,
        ),
    };
    Ok(RasterGrid::new(ncols, nrows, cell_size, values)?
        .with_origin(xll, yll)
        .with_nodata(nodata))
}

pub fn write_ascii_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "ncols {}", grid.width).map_err(io)?;
    writeln!(w, "nrows {}", grid.height).map_err(io)?;
    writeln!(w, "xllcorner {:?}", grid.xll).map_err(io)?;
    writeln!(w, "yllcorner {:?}", grid.yll).map_err(io)?;
    writeln!(w, "cellsize {:?}", grid.cell_size).map_err(io)?;
    writeln!(w, "NODATA_value {}", grid.nodata).map_err(io)?;
    let mut line = String::new();
    for r in 0..grid.height {
        line.clear();
        for c in 0..grid.width {
            let i = r * grid.width + c;
            if c > 0 {
                line.push(' ');
            }
            match &grid.values {
                GridValues::Categorical(v) => line.push_str(&v[i].to_string()),
                GridValues::Continuous(v) => {
                    if grid.is_masked(i) {
                        line.push_str(&grid.nodata.to_string());
                    } else {
                        line.push_str(&format!("{:?}", v[i]));
                    }
                }
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn write_binary_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let width = u32::try_from(grid.width)
        .map_err(|_| Error::Format("width exceeds u32 range".into()))?;
    let height = u32::try_from(grid.height)
        .map_err(|_| Error::Format("height exceeds u32 range".into()))?;
    let mut header = Vec::with_capacity(29);
    header.extend_from_slice(BINARY_MAGIC);
    header.extend_from_slice(&width.to_le_bytes());
    header.extend_from_slice(&height.to_le_bytes());
    header.extend_from_slice(&grid.cell_size.to_le_bytes());
    header.extend_from_slice(&grid.nodata.to_le_bytes());
    header.push(match grid.kind() {
        GridKind::Categorical => 0,
        GridKind::Continuous => 1,
    });
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    match &grid.values {
        GridValues::Categorical(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
        GridValues::Continuous(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_binary_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 29 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::Format("missing LUCC header".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cell_size = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let nodata = i64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let payload = &bytes[29..];
    let n = width * height;
    let values = match bytes[28] {
        0 => {
            if payload.len() != n * 4 {
                return Err(Error::Dimension(format!(
                    "expected {} payload bytes, found {}",
                    n * 4,
                    payload.len()
                )));
            }
            GridValues::Categorical(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        1 => {
            if payload.len() != n * 8 {
                return Err(Error::Dimension(format!(
                    "expected {} payload bytes, found {}",
                    n * 8,
                    payload.len()
                )));
            }
            GridValues::Continuous(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        k => return Err(Error::Format(format!("unknown grid kind byte {k}"))),
    };
    Ok(RasterGrid::new(width, height, cell_size, values)?.with_nodata(nodata))
}

fn is_binary_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("lucc") | Some("bin")
    )
}

/// Reads a grid, choosing the format from the extension (`.lucc`/`.bin`
/// binary, anything else ASCII).
pub fn read_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    if is_binary_path(path) {
        read_binary_grid(path)
    } else {
        read_ascii_grid(path)
    }
}

pub fn write_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_binary_path(path) {
        write_binary_grid(grid, path)
    } else {
        write_ascii_grid(grid, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_two_by_two() {
        let f = write_tmp("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 15\nNODATA_value -9999\n1 2\n3 4\n");
        let g = read_ascii_grid(f.path()).unwrap();
        assert_eq!(g.width(), 2);
        assert_eq!(g.height(), 2);
        assert_eq!(g.codes().unwrap(), &[1, 2, 3, 4]);
        assert_eq!(g.kind(), GridKind::Categorical);
    }

    #[test]
    fn short_row_is_dimension_error() {
        let f = write_tmp("ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n");
        assert!(matches!(read_ascii_grid(f.path()), Err(Error::Dimension(_))));
    }

    #[test]
    fn nodata_cell_is_masked() {
        let f = write_tmp("ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n-9999 3\n");
        let g = read_ascii_grid(f.path()).unwrap();
        assert!(g.is_masked(0));
        assert!(!g.is_masked(1));
        assert_eq!(g.census().get(&3), Some(&1));
        assert_eq!(g.census().get(&-9999), None);
    }

    #[test]
    fn malformed_header_names_line() {
        let f = write_tmp("ncols 2\nnrows x\ncellsize 1\n1 2\n");
        match read_ascii_grid(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn continuous_pi_round_trips() {
        let g = RasterGrid::continuous(1, 1, 1.0, vec![std::f64::consts::PI]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_ascii_grid(&g, f.path()).unwrap();
        let back = read_ascii_grid(f.path()).unwrap();
        let v = back.data().unwrap()[0];
        assert!((v - std::f64::consts::PI).abs() <= 1e-15 * std::f64::consts::PI);
    }

    #[test]
    fn whole_number_continuous_stays_continuous() {
        let g = RasterGrid::continuous(2, 1, 1.0, vec![2.0, 3.0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_ascii_grid(&g, f.path()).unwrap();
        assert_eq!(read_ascii_grid(f.path()).unwrap(), g);
    }

    #[test]
    fn categorical_file_contains_only_codes_and_nodata() {
        let codes: Vec<i32> = (0..20).map(|i| if i == 5 { -9999 } else { 1 + i % 7 }).collect();
        let g = RasterGrid::categorical(5, 4, 15.0, codes).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_ascii_grid(&g, f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        for tok in text.lines().skip(6).flat_map(str::split_whitespace) {
            let v: i32 = tok.parse().unwrap();
            assert!((1..=7).contains(&v) || v == -9999);
        }
    }

    #[test]
    fn binary_round_trip() {
        let g = RasterGrid::continuous(3, 2, 2.5, vec![0.1, -2.0, 1e300, 4.0, -9999.0, 6.5])
            .unwrap()
            .with_nodata(-9999);
        let f = tempfile::Builder::new().suffix(".lucc").tempfile().unwrap();
        write_grid(&g, f.path()).unwrap();
        let back = read_grid(f.path()).unwrap();
        assert_eq!(back, g);
        assert!(back.is_masked(4));
    }

    #[test]
    fn identity_when_nothing_changes() {
        let legend = StateLegend::from_codes(&[1, 2, 3]).unwrap();
        let g = RasterGrid::categorical(3, 1, 1.0, vec![1, 2, 3]).unwrap();
        let m = observed_transition_matrix(&g, &g, &legend).unwrap();
        assert_eq!(m, TransitionMatrix::identity(legend));
    }

    #[test]
    fn quarter_of_four_pixels_changes() {
        let legend = StateLegend::from_codes(&[1, 2]).unwrap();
        let a = RasterGrid::categorical(4, 1, 1.0, vec![1, 1, 1, 1]).unwrap();
        let b = RasterGrid::categorical(4, 1, 1.0, vec![1, 2, 1, 1]).unwrap();
        let m = observed_transition_matrix(&a, &b, &legend).unwrap();
        assert_eq!(m.get(1, 2).unwrap(), 0.25);
        assert_eq!(m.get(1, 1).unwrap(), 0.75);
        // state 2 absent at t0
        assert_eq!(m.get(2, 2).unwrap(), 1.0);
    }

    #[test]
    fn unknown_code_is_rejected() {
        let legend = StateLegend::from_codes(&[1, 2]).unwrap();
        let a = RasterGrid::categorical(2, 1, 1.0, vec![1, 9]).unwrap();
        assert!(matches!(
            observed_transition_matrix(&a, &a, &legend),
            Err(Error::UnknownState { code: 9, .. })
        ));
    }

    #[test]
    fn legend_rejects_duplicates_and_negatives() {
        assert!(StateLegend::from_codes(&[1]).is_err());
        assert!(StateLegend::from_codes(&[1, 1]).is_err());
        assert!(StateLegend::from_codes(&[-1, 2]).is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let legend = StateLegend::seven_classes();
        let mut m = TransitionMatrix::identity(legend.clone());
        m.set_transition(4, 5, 0.0123).unwrap();
        m.set_transition(3, 4, 0.1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.write_csv(f.path()).unwrap();
        let back = TransitionMatrix::read_csv(f.path(), Some(&legend)).unwrap();
        assert_eq!(back, m);
        assert!((back.get(4, 4).unwrap() - 0.9877).abs() < 1e-15);
    }
}
