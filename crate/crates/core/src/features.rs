//! Explanatory-variable rasters and the whitening transform.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterGrid;

/// Exact Euclidean distance (in map units) from every pixel to the nearest
/// pixel holding `target_state`. Masked pixels receive the nodata value.
///
/// Separable lower-envelope transform: an exact 1-D pass down each column
/// followed by the parabola envelope along each row, both on integer squared
/// pixel distances.
pub fn distance_to_state(map: &RasterGrid, target_state: i32) -> Result<RasterGrid> {
    let codes = map.require_codes()?;
    let (w, h) = (map.width(), map.height());
    let is_target = |i: usize| codes[i] == target_state && !map.is_masked(i);
    if !(0..codes.len()).any(is_target) {
        return Err(Error::EmptyState(target_state));
    }

    // Column pass: squared vertical distance to the nearest target in the column.
    const NONE: i64 = i64::MAX / 4;
    let mut vertical = vec![NONE; w * h];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if is_target(r * w + c) {
                last = Some(r);
            }
            if let Some(t) = last {
                let d = (r - t) as i64;
                vertical[r * w + c] = d * d;
            }
        }
        last = None;
        for r in (0..h).rev() {
            if is_target(r * w + c) {
                last = Some(r);
            }
            if let Some(t) = last {
                let d = (t - r) as i64;
                vertical[r * w + c] = vertical[r * w + c].min(d * d);
            }
        }
    }

    // Row pass: lower envelope of parabolas (c - c')^2 + f(c').
    let mut out = vec![0.0; w * h];
    let mut sites: Vec<usize> = Vec::with_capacity(w);
    let mut bounds: Vec<f64> = Vec::with_capacity(w + 1);
    for r in 0..h {
        let f = &vertical[r * w..(r + 1) * w];
        sites.clear();
        bounds.clear();
        for q in 0..w {
            if f[q] >= NONE {
                continue;
            }
            let fq = (f[q] + (q * q) as i64) as f64;
            loop {
                match sites.last() {
                    None => {
                        sites.push(q);
                        bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&p) => {
                        let fp = (f[p] + (p * p) as i64) as f64;
                        let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                        if s <= *bounds.last().unwrap() {
                            sites.pop();
                            bounds.pop();
                        } else {
                            sites.push(q);
                            bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        let mut k = 0;
        for c in 0..w {
            while k + 1 < sites.len() && bounds[k + 1] < c as f64 {
                k += 1;
            }
            let p = sites[k];
            let dc = c as i64 - p as i64;
            let sq = dc * dc + f[p];
            out[r * w + c] = (sq as f64).sqrt() * map.cell_size();
        }
    }
    let nodata = map.nodata() as f64;
    for (i, v) in out.iter_mut().enumerate() {
        if map.is_masked(i) {
            *v = nodata;
        }
    }
    map.continuous_like(out)
}

/// Slope in degrees using Horn's weighted 3x3 gradient on interior pixels and
/// one-sided or central differences along the border. Masked neighbours are
/// replaced by the centre value.
pub fn slope_from_elevation(dem: &RasterGrid) -> Result<RasterGrid> {
    let z = dem.require_data()?;
    let (w, h) = (dem.width(), dem.height());
    if w < 3 || h < 3 {
        return Err(Error::Dimension(format!(
            "slope needs at least a 3x3 grid, got {w}x{h}"
        )));
    }
    let cs = dem.cell_size();
    let nodata = dem.nodata() as f64;
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if dem.is_masked(i) {
                out[i] = nodata;
                continue;
            }
            let at = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if dem.is_masked(j) {
                    z[i]
                } else {
                    z[j]
                }
            };
            let (dx, dy) = if r > 0 && r + 1 < h && c > 0 && c + 1 < w {
                let (a, b, cc) = (at(r - 1, c - 1), at(r - 1, c), at(r - 1, c + 1));
                let (d, f) = (at(r, c - 1), at(r, c + 1));
                let (g, hh, ii) = (at(r + 1, c - 1), at(r + 1, c), at(r + 1, c + 1));
                (
                    ((cc + 2.0 * f + ii) - (a + 2.0 * d + g)) / (8.0 * cs),
                    ((g + 2.0 * hh + ii) - (a + 2.0 * b + cc)) / (8.0 * cs),
                )
            } else {
                let dx = if c == 0 {
                    (at(r, 1) - at(r, 0)) / cs
                } else if c + 1 == w {
                    (at(r, c) - at(r, c - 1)) / cs
                } else {
                    (at(r, c + 1) - at(r, c - 1)) / (2.0 * cs)
                };
                let dy = if r == 0 {
                    (at(1, c) - at(0, c)) / cs
                } else if r + 1 == h {
                    (at(r, c) - at(r - 1, c)) / cs
                } else {
                    (at(r + 1, c) - at(r - 1, c)) / (2.0 * cs)
                };
                (dx, dy)
            };
            out[i] = (dx * dx + dy * dy).sqrt().atan().to_degrees();
        }
    }
    dem.continuous_like(out)
}

/// Per-pixel tuples of explanatory variables, row-aligned with the map pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpace {
    names: Vec<String>,
    width: usize,
    height: usize,
    values: Vec<f64>,
    masked: Vec<bool>,
}

impl FeatureSpace {
    pub fn from_rasters(names: Vec<String>, rasters: &[RasterGrid]) -> Result<Self> {
        if rasters.is_empty() {
            return Err(Error::InvalidArgument("at least one feature raster is required".into()));
        }
        if names.len() != rasters.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} rasters",
                names.len(),
                rasters.len()
            )));
        }
        let (w, h) = (rasters[0].width(), rasters[0].height());
        let d = rasters.len();
        let mut values = vec![0.0; w * h * d];
        let mut masked = vec![false; w * h];
        for (k, r) in rasters.iter().enumerate() {
            rasters[0].ensure_same_shape(r, "feature rasters")?;
            let data = r.require_data()?;
            for i in 0..w * h {
                values[i * d + k] = data[i];
                masked[i] |= r.is_masked(i);
            }
        }
        Ok(Self {
            names,
            width: w,
            height: h,
            values,
            masked,
        })
    }

    pub fn dims(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn point(&self, pixel: usize) -> &[f64] {
        let d = self.dims();
        &self.values[pixel * d..(pixel + 1) * d]
    }

    pub fn is_masked(&self, pixel: usize) -> bool {
        self.masked[pixel]
    }

    /// Flattened `len(pixels) x d` table for the given pixels.
    pub fn gather(&self, pixels: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pixels.len() * self.dims());
        for &p in pixels {
            out.extend_from_slice(self.point(p));
        }
        out
    }

    /// Replaces one variable, e.g. a distance map recomputed mid-simulation.
    pub fn set_feature(&mut self, k: usize, raster: &RasterGrid) -> Result<()> {
        if k >= self.dims() {
            return Err(Error::InvalidArgument(format!("feature index {k} out of range")));
        }
        if raster.width() != self.width || raster.height() != self.height {
            return Err(Error::Dimension("replacement feature has a different shape".into()));
        }
        let data = raster.require_data()?;
        let d = self.dims();
        for i in 0..self.len() {
            self.values[i * d + k] = data[i];
            // The mask of other variables is kept; a newly masked value masks the pixel.
            self.masked[i] |= raster.is_masked(i);
        }
        Ok(())
    }

    pub fn ensure_aligned(&self, map: &RasterGrid) -> Result<()> {
        if map.width() != self.width || map.height() != self.height {
            return Err(Error::Dimension(format!(
                "features are {}x{}, map is {}x{}",
                self.width,
                self.height,
                map.width(),
                map.height()
            )));
        }
        Ok(())
    }
}

/// Affine map `x -> W (x - mean)` with `W Cov Wt = I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    #[serde(default)]
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub matrix: Vec<f64>,
}

impl Whitening {
    pub fn identity(d: usize) -> Self {
        let mut matrix = vec![0.0; d * d];
        for i in 0..d {
            matrix[i * d + i] = 1.0;
        }
        Self {
            names: Vec::new(),
            mean: vec![0.0; d],
            matrix,
        }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        self.names = names.to_vec();
        self
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        if x.len() != d {
            return Err(Error::Dimension(format!(
                "whitening expects {d} components, got {}",
                x.len()
            )));
        }
        let mut out = vec![0.0; d];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    #[inline]
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dims();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * d..(i + 1) * d];
            *o = row
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(w, (xv, m))| w * (xv - m))
                .sum();
        }
    }

    /// Applies the transform to a flattened `m x d` table.
    pub fn apply_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        if d == 0 || points.len() % d != 0 {
            return Err(Error::Dimension(format!(
                "table of {} values is not a multiple of d = {d}",
                points.len()
            )));
        }
        let mut out = vec![0.0; points.len()];
        for (x, o) in points.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.apply_into(x, o);
        }
        Ok(out)
    }
}

/// Sample mean and unbiased covariance of a flattened `m x d` table.
pub fn sample_moments(points: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let m = points.len() / d;
    let mut mean = vec![0.0; d];
    for x in points.chunks_exact(d) {
        for k in 0..d {
            mean[k] += x[k];
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut cov = vec![0.0; d * d];
    for x in points.chunks_exact(d) {
        for a in 0..d {
            let da = x[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += da * (x[b] - mean[b]);
            }
        }
    }
    let denom = (m as f64 - 1.0).max(1.0);
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    (mean, cov)
}

/// Fits the whitening transform `W = C^(-1/2) S^(-1)` of a flattened `m x d`
/// table, where `S` holds the standard deviations and `C` is the correlation
/// matrix. Rescaling a variable leaves the whitened table unchanged.
pub fn fit_whitening(points: &[f64], d: usize) -> Result<Whitening> {
    if d == 0 || points.len() % d != 0 {
        return Err(Error::Dimension(format!(
            "table of {} values is not a multiple of d = {d}",
            points.len()
        )));
    }
    let m = points.len() / d;
    if m < d + 1 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs at least {} samples, got {m}",
            d + 1
        )));
    }
    let (mean, cov) = sample_moments(points, d);
    let sd: Vec<f64> = (0..d).map(|k| cov[k * d + k].sqrt()).collect();
    let largest_var = (0..d).map(|k| cov[k * d + k]).fold(0.0, f64::max);
    for k in 0..d {
        if !(cov[k * d + k] > 1e-12 * largest_var) {
            let mut direction = vec![0.0; d];
            direction[k] = 1.0;
            return Err(Error::SingularCovariance {
                eigenvalue: cov[k * d + k],
                direction,
            });
        }
    }
    let corr: Vec<f64> = (0..d * d)
        .map(|ab| cov[ab] / (sd[ab / d] * sd[ab % d]))
        .collect();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &corr));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    let smallest_idx = order[d - 1];
    let smallest = eig.eigenvalues[smallest_idx];
    if !(largest > 0.0) || smallest <= 1e-12 * largest {
        let raw: Vec<f64> = (0..d)
            .map(|a| eig.eigenvectors[(a, smallest_idx)] / sd[a])
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        return Err(Error::SingularCovariance {
            eigenvalue: smallest,
            direction: raw.iter().map(|x| x / norm).collect(),
        });
    }
    let mut root = vec![0.0; d * d];
    for &k in &order {
        let scale = eig.eigenvalues[k].sqrt().recip();
        let v = eig.eigenvectors.column(k);
        for a in 0..d {
            for b in 0..d {
                root[a * d + b] += v[a] * scale * v[b];
            }
        }
    }
    for a in 0..d {
        for b in a + 1..d {
            let s = 0.5 * (root[a * d + b] + root[b * d + a]);
            root[a * d + b] = s;
            root[b * d + a] = s;
        }
    }
    let matrix = (0..d * d).map(|ab| root[ab] / sd[ab % d]).collect();
    Ok(Whitening {
        names: Vec::new(),
        mean,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn target_pixel_is_zero_and_neighbour_is_cell_size() {
        let mut codes = vec![0; 25];
        codes[12] = 5;
        let map = RasterGrid::categorical(5, 5, 15.0, codes).unwrap();
        let d = distance_to_state(&map, 5).unwrap();
        let v = d.data().unwrap();
        assert_eq!(v[12], 0.0);
        assert_eq!(v[7], 15.0);
        assert_eq!(v[11], 15.0);
        assert_eq!(v[6], (2.0f64).sqrt() * 15.0);
    }

    #[test]
    fn missing_target_is_an_error() {
        let map = RasterGrid::categorical(3, 3, 1.0, vec![1; 9]).unwrap();
        assert!(matches!(distance_to_state(&map, 5), Err(Error::EmptyState(5))));
    }

    #[test]
    fn distance_matches_brute_force_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let (w, h) = (17 + trial % 5, 13 + trial % 7);
            let codes: Vec<i32> = (0..w * h)
                .map(|_| if rng.random::<f64>() < 0.05 { 2 } else { 1 })
                .collect();
            if !codes.contains(&2) {
                continue;
            }
            let map = RasterGrid::categorical(w, h, 3.0, codes.clone()).unwrap();
            let got = distance_to_state(&map, 2).unwrap();
            for i in 0..w * h {
                let (r, c) = (i / w, i % w);
                let best = (0..w * h)
                    .filter(|&j| codes[j] == 2)
                    .map(|j| {
                        let dr = (j / w) as i64 - r as i64;
                        let dc = (j % w) as i64 - c as i64;
                        dr * dr + dc * dc
                    })
                    .min()
                    .unwrap();
                assert_eq!(got.data().unwrap()[i], (best as f64).sqrt() * 3.0);
            }
        }
    }

    #[test]
    fn masked_pixels_get_nodata() {
        let map = RasterGrid::categorical(3, 1, 1.0, vec![2, -9999, 1]).unwrap();
        let d = distance_to_state(&map, 2).unwrap();
        assert!(d.is_masked(1));
        assert_eq!(d.data().unwrap()[2], 2.0);
    }

    #[test]
    fn flat_dem_has_zero_slope() {
        let dem = RasterGrid::continuous(4, 4, 10.0, vec![7.0; 16]).unwrap();
        let s = slope_from_elevation(&dem).unwrap();
        assert!(s.data().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_gradient_plane_is_45_degrees() {
        let (w, h, cs) = (6, 5, 15.0);
        let z: Vec<f64> = (0..w * h).map(|i| (i % w) as f64 * cs).collect();
        let dem = RasterGrid::continuous(w, h, cs, z).unwrap();
        let s = slope_from_elevation(&dem).unwrap();
        for &v in s.data().unwrap() {
            assert!((v - 45.0).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_rejects_tiny_grids() {
        let dem = RasterGrid::continuous(2, 5, 1.0, vec![0.0; 10]).unwrap();
        assert!(matches!(slope_from_elevation(&dem), Err(Error::Dimension(_))));
    }

    #[test]
    fn identity_covariance_gives_identity_whitener() {
        // +-1 on each axis separately: zero mean, covariance 2/(m-1) * I scaled below.
        let mut pts = Vec::new();
        let s = (3.0f64 / 2.0).sqrt(); // 4 points per axis -> var = 2 s^2 / 3 = 1
        for k in 0..2 {
            for sign in [-1.0, 1.0] {
                let mut p = vec![0.0, 0.0];
                p[k] = sign * s;
                pts.extend(p);
            }
        }
        let wt = fit_whitening(&pts, 2).unwrap();
        assert!((wt.matrix[0] - 1.0).abs() < 1e-10);
        assert!((wt.matrix[3] - 1.0).abs() < 1e-10);
        assert!(wt.matrix[1].abs() < 1e-10);
    }

    #[test]
    fn variance_four_gives_half() {
        // +-a alternating with unbiased variance m a^2 / (m - 1) = 4
        let m = 1000;
        let a = 2.0 * ((m as f64 - 1.0) / m as f64).sqrt();
        let pts: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        let wt = fit_whitening(&pts, 1).unwrap();
        assert!((wt.matrix[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let pts: Vec<f64> = (0..50).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        match fit_whitening(&pts, 2) {
            Err(Error::SingularCovariance { direction, .. }) => {
                // null space is (2, -1)/sqrt(5) up to sign
                assert!((direction[0] * 1.0 + direction[1] * 2.0).abs() < 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn correlated_gaussian_is_whitened() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = [[2.0, 0.0, 0.0], [1.5, 0.7, 0.0], [-0.4, 0.3, 0.2]];
        let m = 10_000;
        let mut pts = Vec::with_capacity(3 * m);
        for _ in 0..m {
            let e: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            for row in &l {
                pts.push(10.0 + row[0] * e[0] + row[1] * e[1] + row[2] * e[2]);
            }
        }
        let wt = fit_whitening(&pts, 3).unwrap();
        let white = wt.apply_batch(&pts).unwrap();
        let (mean, cov) = sample_moments(&white, 3);
        for a in 0..3 {
            assert!(mean[a].abs() < 1e-10);
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((cov[a * 3 + b] - want).abs() < 1e-10);
            }
        }
        // W S is the symmetric positive definite root of the correlation matrix
        let sd = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(3, |k, _| cov_raw(&pts, k)));
        let root = DMatrix::from_row_slice(3, 3, &wt.matrix) * sd;
        assert!((&root - root.transpose()).abs().max() < 1e-12);
        assert!(SymmetricEigen::new(root).eigenvalues.iter().all(|&e| e > 0.0));
    }

    fn cov_raw(pts: &[f64], k: usize) -> f64 {
        let (_, cov) = sample_moments(pts, 3);
        cov[k * 3 + k].sqrt()
    }

    #[test]
    fn rescaled_variable_whitens_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<f64> = (0..3000)
            .flat_map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let c: f64 = StandardNormal.sample(&mut rng);
                [a, 0.6 * a + b, 5.0 - b + 0.3 * c]
            })
            .collect();
        let scaled: Vec<f64> = pts
            .chunks_exact(3)
            .flat_map(|p| [p[0] * 250.0, p[1], p[2] * 0.01])
            .collect();
        let a = fit_whitening(&pts, 3).unwrap().apply_batch(&pts).unwrap();
        let b = fit_whitening(&scaled, 3).unwrap().apply_batch(&scaled).unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn apply_centres_and_inverts() {
        let wt = Whitening {
            names: vec![],
            mean: vec![1.0, -2.0],
            matrix: vec![2.0, 0.5, 0.5, 1.0],
        };
        assert_eq!(wt.apply(&[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
        let ident = Whitening {
            mean: vec![1.0, -2.0],
            ..Whitening::identity(2)
        };
        assert_eq!(ident.apply(&[3.0, 3.0]).unwrap(), vec![2.0, 5.0]);
        let x = [0.3, 7.1];
        let y = wt.apply(&x).unwrap();
        let inv = DMatrix::from_row_slice(2, 2, &wt.matrix).try_inverse().unwrap();
        let back = inv * nalgebra::DVector::from_column_slice(&y);
        assert!((back[0] + 1.0 - x[0]).abs() < 1e-12);
        assert!((back[1] - 2.0 - x[1]).abs() < 1e-12);
        assert!(wt.apply(&[1.0]).is_err());
    }
}
