//! Hybrid binned kernel density estimator.
//!
//! Points are counted on a grid of width `h / q` (half-open bins anchored at
//! the origin) and the kernel is then centred on each occupied bin instead of
//! on each point. Near the edges of the data domain the estimate is divided by
//! the fraction of kernel mass that falls inside the domain.

use crate::density::kernel::{KernelShape, KernelSpec};
use crate::error::{Error, Result};

/// Largest 2-D counting table the box-kernel sweep may allocate.
const MAX_SWEEP_CELLS: usize = 1 << 25;

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedKde {
    d: usize,
    h: f64,
    q: usize,
    bin_width: f64,
    kernel: KernelSpec,
    n: u64,
    /// Occupied bin indices, `d` per bin, sorted lexicographically.
    keys: Vec<i32>,
    counts: Vec<u32>,
    bounds: Vec<[f64; 2]>,
    boundary_correction: bool,
    /// `(first-axis index, offset into bins)` for each distinct first-axis index.
    groups: Vec<(i32, usize)>,
}

fn validate_params(h: f64, q: usize) -> Result<()> {
    if q < 3 || q % 2 == 0 {
        return Err(Error::InvalidArgument(format!("q must be odd and >= 3, got {q}")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// Fits an estimator on a flattened `n x d` table; the domain is the
/// bounding box of the points.
pub fn fit_binned_kde(
    points: &[f64],
    d: usize,
    h: f64,
    q: usize,
    kernel: KernelSpec,
) -> Result<BinnedKde> {
    fit_binned_kde_with_bounds(points, d, h, q, kernel, None)
}

/// As [`fit_binned_kde`], with an explicit per-axis domain `[lo, hi]` used by
/// the boundary correction.
pub fn fit_binned_kde_with_bounds(
    points: &[f64],
    d: usize,
    h: f64,
    q: usize,
    kernel: KernelSpec,
    bounds: Option<Vec<[f64; 2]>>,
) -> Result<BinnedKde> {
    validate_params(h, q)?;
    if d == 0 || points.len() % d != 0 {
        return Err(Error::Dimension(format!(
            "table of {} values is not a multiple of d = {d}",
            points.len()
        )));
    }
    if kernel.dims != d {
        return Err(Error::Dimension(format!(
            "kernel is {}-variate, data is {d}-variate",
            kernel.dims
        )));
    }
    let n = points.len() / d;
    if n == 0 {
        return Err(Error::InvalidArgument("cannot fit a density on zero points".into()));
    }
    let bin_width = h / q as f64;

    let mut raw_keys = Vec::with_capacity(points.len());
    for &x in points {
        let b = (x / bin_width).floor();
        if !b.is_finite() || b.abs() > i32::MAX as f64 / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "coordinate {x} cannot be binned at width {bin_width}"
            )));
        }
        raw_keys.push(b as i32);
    }
    let key = |i: usize| &raw_keys[i * d..(i + 1) * d];
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| key(a as usize).cmp(key(b as usize)));

    let mut keys = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    for &i in &order {
        let k = key(i as usize);
        if counts.is_empty() || &keys[keys.len() - d..] != k {
            keys.extend_from_slice(k);
            counts.push(1);
        } else {
            *counts.last_mut().unwrap() += 1;
        }
    }

    let bounds = match bounds {
        Some(b) => {
            if b.len() != d || b.iter().any(|[lo, hi]| !(lo <= hi)) {
                return Err(Error::InvalidArgument("invalid domain bounds".into()));
            }
            b
        }
        None => {
            let mut b = vec![[f64::INFINITY, f64::NEG_INFINITY]; d];
            for x in points.chunks_exact(d) {
                for k in 0..d {
                    b[k][0] = b[k][0].min(x[k]);
                    b[k][1] = b[k][1].max(x[k]);
                }
            }
            b
        }
    };

    let mut kde = BinnedKde {
        d,
        h,
        q,
        bin_width,
        kernel,
        n: n as u64,
        keys,
        counts,
        bounds,
        boundary_correction: true,
        groups: Vec::new(),
    };
    kde.rebuild_groups();
    Ok(kde)
}

impl BinnedKde {
    /// Reassembles an estimator from its stored parts.
    pub fn from_parts(
        h: f64,
        q: usize,
        kernel: KernelSpec,
        bounds: Vec<[f64; 2]>,
        mut bins: Vec<(Vec<i32>, u32)>,
        boundary_correction: bool,
    ) -> Result<Self> {
        validate_params(h, q)?;
        let d = kernel.dims;
        if bounds.len() != d {
            return Err(Error::Dimension("bounds do not match kernel dimension".into()));
        }
        if bins.iter().any(|(k, c)| k.len() != d || *c == 0) {
            return Err(Error::Format("malformed bin table".into()));
        }
        bins.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        if bins.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Format("duplicate bin in table".into()));
        }
        let n = bins.iter().map(|(_, c)| *c as u64).sum();
        if n == 0 {
            return Err(Error::Format("empty bin table".into()));
        }
        let mut kde = Self {
            d,
            h,
            q,
            bin_width: h / q as f64,
            kernel,
            n,
            keys: bins.iter().flat_map(|(k, _)| k.iter().copied()).collect(),
            counts: bins.iter().map(|(_, c)| *c).collect(),
            bounds,
            boundary_correction,
            groups: Vec::new(),
        };
        kde.rebuild_groups();
        Ok(kde)
    }

    fn rebuild_groups(&mut self) {
        self.groups.clear();
        for b in 0..self.counts.len() {
            let k0 = self.keys[b * self.d];
            if self.groups.last().map_or(true, |&(g, _)| g != k0) {
                self.groups.push((k0, b));
            }
        }
    }

    pub fn dims(&self) -> usize {
        self.d
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn boundary_correction(&self) -> bool {
        self.boundary_correction
    }

    pub fn set_boundary_correction(&mut self, on: bool) {
        self.boundary_correction = on;
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    /// Occupied bins as `(index tuple, count)`.
    pub fn bins(&self) -> impl Iterator<Item = (&[i32], u32)> + '_ {
        self.keys
            .chunks_exact(self.d)
            .zip(self.counts.iter().copied())
    }

    pub fn bin_center(&self, index: i32) -> f64 {
        (index as f64 + 0.5) * self.bin_width
    }

    /// Inclusive range of bin indices whose centre lies within the kernel
    /// support around `y`.
    #[inline]
    fn axis_range(&self, y: f64) -> [i64; 2] {
        let r = self.kernel.support_radius * self.h;
        let lo = ((y - r) / self.bin_width - 0.5).ceil();
        let hi = ((y + r) / self.bin_width - 0.5).floor();
        let clamp = |v: f64| v.clamp(i32::MIN as f64, i32::MAX as f64) as i64;
        [clamp(lo), clamp(hi)]
    }

    fn inside_domain(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(&self.bounds)
            .all(|(&v, [lo, hi])| v >= *lo && v <= *hi)
    }

    /// Fraction of the kernel mass centred at `y` that lies in the domain.
    pub fn domain_mass_fraction(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.bounds)
            .map(|(&v, [lo, hi])| {
                self.kernel.cdf((hi - v) / self.h) - self.kernel.cdf((lo - v) / self.h)
            })
            .product()
    }

    fn normalization(&self) -> f64 {
        1.0 / (self.n as f64 * self.h.powi(self.d as i32))
    }

    fn correct(&self, y: &[f64], raw: f64) -> f64 {
        if !self.boundary_correction {
            return raw;
        }
        if !self.inside_domain(y) {
            return 0.0;
        }
        let frac = self.domain_mass_fraction(y);
        if frac > 0.0 {
            raw / frac
        } else {
            0.0
        }
    }

    /// Kernel-weighted bin sum at `y` (unnormalised), scanning occupied bins.
    fn weighted_sum(&self, y: &[f64]) -> f64 {
        let d = self.d;
        let ranges: Vec<[i64; 2]> = y.iter().map(|&v| self.axis_range(v)).collect();
        let is_box = self.kernel.shape == KernelShape::Box;
        let start = self
            .groups
            .partition_point(|&(g, _)| (g as i64) < ranges[0][0]);
        let mut total = 0.0;
        let mut u = vec![0.0; d];
        for gi in start..self.groups.len() {
            let (g0, begin) = self.groups[gi];
            if g0 as i64 > ranges[0][1] {
                break;
            }
            let end = self
                .groups
                .get(gi + 1)
                .map_or(self.counts.len(), |&(_, s)| s);
            let (mut lo, mut hi) = (begin, end);
            if d >= 2 {
                let axis1 = |b: usize| self.keys[b * d + 1] as i64;
                lo = first_where(begin, end, |b| axis1(b) >= ranges[1][0]);
                hi = first_where(lo, end, |b| axis1(b) > ranges[1][1]);
            }
            'bins: for b in lo..hi {
                let key = &self.keys[b * d..(b + 1) * d];
                for k in 2..d {
                    let kk = key[k] as i64;
                    if kk < ranges[k][0] || kk > ranges[k][1] {
                        continue 'bins;
                    }
                }
                let c = self.counts[b] as f64;
                if is_box {
                    total += c;
                } else {
                    for k in 0..d {
                        u[k] = (y[k] - self.bin_center(key[k])) / self.h;
                    }
                    total += c * self.kernel.weight(&u);
                }
            }
        }
        if is_box {
            total * 0.5f64.powi(d as i32)
        } else {
            total
        }
    }

    /// Density per unit volume (in the space the estimator was fitted in).
    pub fn estimate(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.d {
            return Err(Error::Dimension(format!(
                "estimator is {}-variate, query has {} components",
                self.d,
                y.len()
            )));
        }
        if self.boundary_correction && !self.inside_domain(y) {
            return Ok(0.0);
        }
        let raw = self.weighted_sum(y) * self.normalization();
        Ok(self.correct(y, raw))
    }

    /// Estimates at every row of a flattened `m x d` table.
    pub fn estimate_batch(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        if ys.len() % d != 0 {
            return Err(Error::Dimension(format!(
                "query table of {} values is not a multiple of d = {d}",
                ys.len()
            )));
        }
        let m = ys.len() / d;
        if self.kernel.shape == KernelShape::Box && d <= 3 && m > 64 {
            if let Some(counts) = self.box_counts_sweep(ys) {
                let scale = 0.5f64.powi(d as i32) * self.normalization();
                return Ok(ys
                    .chunks_exact(d)
                    .zip(counts)
                    .map(|(y, c)| {
                        if self.boundary_correction && !self.inside_domain(y) {
                            0.0
                        } else {
                            self.correct(y, c as f64 * scale)
                        }
                    })
                    .collect());
            }
        }
        ys.chunks_exact(d).map(|y| self.estimate(y)).collect()
    }

    /// Box-kernel bin counts for many queries at once: an offline sweep along
    /// the first axis with a Fenwick table over the remaining (at most two)
    /// axes. Returns `None` when the table would be too large.
    fn box_counts_sweep(&self, ys: &[f64]) -> Option<Vec<u64>> {
        let d = self.d;
        let nb = self.counts.len();
        let axis_coords = |k: usize| -> Vec<i32> {
            if k >= d {
                return vec![0];
            }
            let mut c: Vec<i32> = (0..nb).map(|b| self.keys[b * d + k]).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        let c1 = axis_coords(1);
        let c2 = axis_coords(2);
        let (a1, a2) = (c1.len(), c2.len());
        if (a1 + 1).checked_mul(a2 + 1)? > MAX_SWEEP_CELLS {
            return None;
        }
        let compress = |coords: &[i32], k: usize, b: usize| -> usize {
            if k >= d {
                0
            } else {
                coords.binary_search(&self.keys[b * d + k]).unwrap()
            }
        };
        let bin_pos: Vec<(usize, usize)> = (0..nb)
            .map(|b| (compress(&c1, 1, b), compress(&c2, 2, b)))
            .collect();

        let m = ys.len() / d;
        // Per query: compressed half-open ranges on axes 1, 2.
        let mut rects: Vec<[usize; 4]> = Vec::with_capacity(m);
        let mut events: Vec<(i64, u32, bool)> = Vec::with_capacity(2 * m);
        let to_compressed = |coords: &[i32], k: usize, r: [i64; 2]| -> (usize, usize) {
            if k >= d {
                (0, 1)
            } else {
                (
                    coords.partition_point(|&c| (c as i64) < r[0]),
                    coords.partition_point(|&c| (c as i64) <= r[1]),
                )
            }
        };
        for (qi, y) in ys.chunks_exact(d).enumerate() {
            let r0 = self.axis_range(y[0]);
            let (l1, h1) = to_compressed(&c1, 1, if d > 1 { self.axis_range(y[1]) } else { [0, 0] });
            let (l2, h2) = to_compressed(&c2, 2, if d > 2 { self.axis_range(y[2]) } else { [0, 0] });
            rects.push([l1, h1, l2, h2]);
            if r0[0] > r0[1] || l1 >= h1 || l2 >= h2 {
                continue;
            }
            events.push((r0[1], qi as u32, true));
            events.push((r0[0] - 1, qi as u32, false));
        }
        events.sort_unstable_by_key(|e| e.0);

        let mut fen = Fenwick2::new(a1, a2);
        let mut result = vec![0i64; m];
        let mut next = 0usize;
        for (t, qi, positive) in events {
            while next < nb && (self.keys[next * d] as i64) <= t {
                let (p1, p2) = bin_pos[next];
                fen.add(p1, p2, self.counts[next]);
                next += 1;
            }
            let [l1, h1, l2, h2] = rects[qi as usize];
            let s = fen.rect(l1, h1, l2, h2);
            if positive {
                result[qi as usize] += s;
            } else {
                result[qi as usize] -= s;
            }
        }
        Some(result.into_iter().map(|v| v as u64).collect())
    }
}

/// First index in `[lo, hi)` where the monotone predicate holds, else `hi`.
fn first_where(mut lo: usize, mut hi: usize, pred: impl Fn(usize) -> bool) -> usize {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// 2-D binary indexed tree over `a1 x a2` cells.
struct Fenwick2 {
    a1: usize,
    a2: usize,
    tree: Vec<u32>,
}

impl Fenwick2 {
    fn new(a1: usize, a2: usize) -> Self {
        Self {
            a1,
            a2,
            tree: vec![0; (a1 + 1) * (a2 + 1)],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: u32) {
        let stride = self.a2 + 1;
        let mut x = i + 1;
        while x <= self.a1 {
            let mut y = j + 1;
            while y <= self.a2 {
                self.tree[x * stride + y] += v;
                y += y & y.wrapping_neg();
            }
            x += x & x.wrapping_neg();
        }
    }

    /// Sum over `[0, i) x [0, j)`.
    fn prefix(&self, i: usize, j: usize) -> i64 {
        let stride = self.a2 + 1;
        let mut s = 0i64;
        let mut x = i;
        while x > 0 {
            let mut y = j;
            while y > 0 {
                s += self.tree[x * stride + y] as i64;
                y -= y & y.wrapping_neg();
            }
            x -= x & x.wrapping_neg();
        }
        s
    }

    fn rect(&self, l1: usize, h1: usize, l2: usize, h2: usize) -> i64 {
        self.prefix(h1, h2) - self.prefix(l1, h2) - self.prefix(h1, l2) + self.prefix(l1, l2)
    }
}
