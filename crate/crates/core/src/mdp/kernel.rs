//! Discretized transition kernel of the mismatch chain.
//!
//! Without transmission the next mismatch is `A·e + ξ`; with transmission it is
//! `ξ`. The kernel row of a cell is the Gaussian density at destination centers
//! times the cell volume. It is evaluated on the unbounded lattice of centers
//! out to `support_sigmas` standard deviations and every lattice point outside
//! the box is sent to its nearest boundary cell, the same rounding the
//! simulation uses. Rows are then renormalized.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};
use crate::linalg::{inverse_or_pinv, max_abs, min_sym_eigenvalue, row_major, Mat};

/// What happens to lattice mass that falls outside the truncation box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfBox {
    /// Moved to the nearest boundary cell.
    #[default]
    Clamp,
    /// Dropped; the in-box weights are rescaled to sum to one.
    Renormalize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelOptions {
    pub out_of_box: OutOfBox,
    /// Half-width of the evaluated lattice neighbourhood, in marginal std devs.
    pub support_sigmas: f64,
    /// Use sparse rows even when A and Ξ are both diagonal.
    pub force_dense: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            out_of_box: OutOfBox::Clamp,
            support_sigmas: 9.0,
            force_dense: false,
        }
    }
}

/// Ξ + 1e-12·I when Ξ is singular, Ξ otherwise.
pub fn regularized_xi(xi: &Mat) -> Mat {
    let n = xi.nrows();
    if min_sym_eigenvalue(xi) > 0.0 {
        xi.clone()
    } else {
        xi + Mat::identity(n, n) * 1e-12
    }
}

/// Gaussian density of `y` under the kernel: `p_ξ(y)` when transmitting,
/// `p_ξ(y − A·e)` otherwise.
pub fn transition_density(y: &[f64], e: &[f64], delta: bool, a: &Mat, xi: &Mat) -> Result<f64> {
    let n = a.nrows();
    if y.len() != n || e.len() != n || xi.nrows() != n {
        return Err(Error::dim("transition_density inputs", n, y.len()));
    }
    let chol = crate::linalg::symmetrize(xi)
        .cholesky()
        .ok_or(Error::SingularCovariance {
            min_eigenvalue: min_sym_eigenvalue(xi),
        })?;
    let mut d = nalgebra::DVector::from_row_slice(y);
    if !delta {
        d -= a * nalgebra::DVector::from_row_slice(e);
    }
    let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
    if det <= 0.0 {
        return Err(Error::SingularCovariance {
            min_eigenvalue: min_sym_eigenvalue(xi),
        });
    }
    let z = chol.solve(&d);
    let m = d.dot(&z);
    Ok((-0.5 * m).exp() / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt())
}

/// Sparse kernel row: (destination cell, weight).
pub type SparseRow = Vec<(u32, f64)>;

#[derive(Clone, Debug)]
enum Repr {
    /// Per-axis `N×N` row-major transition matrices; the full row is their product.
    Separable { axes: Vec<Vec<f64>> },
    Dense { rows: Vec<SparseRow> },
}

#[derive(Clone, Debug)]
struct Gaussian {
    a: Vec<f64>,
    precision: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Kernel {
    grid: Grid,
    opts: KernelOptions,
    repr: Repr,
    /// The transmit row, identical for every source cell.
    transmit: Vec<f64>,
    gaussian: Option<Gaussian>,
}

fn is_diagonal(m: &Mat) -> bool {
    let n = m.nrows();
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)].abs() <= 1e-14 * scale))
}

/// 1-D weights over the `count` cells of one axis for a Gaussian with the
/// given mean and std dev.
fn axis_row(grid: &Grid, axis: usize, mean: f64, sigma: f64, opts: &KernelOptions) -> Vec<f64> {
    let count = grid.counts()[axis];
    let cell = grid.cell()[axis];
    let mid = grid.mid(axis) as f64;
    let reach = opts.support_sigmas * sigma;
    let nearest = (mean / cell).round() as i64 + mid as i64;
    let lo = (((mean - reach) / cell).floor() as i64 + mid as i64).min(nearest);
    let hi = (((mean + reach) / cell).ceil() as i64 + mid as i64).max(nearest);
    let mut expo = Vec::with_capacity((hi - lo + 1) as usize);
    let mut best = f64::NEG_INFINITY;
    for k in lo..=hi {
        let z = (grid.virtual_coord(axis, k) - mean) / sigma;
        let v = -0.5 * z * z;
        best = best.max(v);
        expo.push(v);
    }
    let mut row = vec![0.0; count];
    for (k, v) in (lo..=hi).zip(expo) {
        let inside = k >= 0 && k < count as i64;
        if !inside && opts.out_of_box == OutOfBox::Renormalize {
            continue;
        }
        let dst = k.clamp(0, count as i64 - 1) as usize;
        row[dst] += (v - best).exp();
    }
    normalize_or_nearest(&mut row, nearest.clamp(0, count as i64 - 1) as usize);
    row
}

fn normalize_or_nearest(row: &mut [f64], nearest: usize) {
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        for v in row.iter_mut() {
            *v /= total;
        }
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[nearest] = 1.0;
    }
}

impl Kernel {
    pub fn build(grid: &Grid, a: &Mat, xi: &Mat, opts: KernelOptions) -> Result<Kernel> {
        let n = grid.dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::dim("A for kernel", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if xi.nrows() != n || xi.ncols() != n {
            return Err(Error::dim("Xi for kernel", format!("{n}x{n}"), format!("{}x{}", xi.nrows(), xi.ncols())));
        }
        let xi = regularized_xi(xi);
        let sigma: Vec<f64> = (0..n).map(|i| xi[(i, i)].max(0.0).sqrt()).collect();
        let gaussian = Gaussian {
            a: row_major(a),
            precision: row_major(&inverse_or_pinv(&xi)),
            sigma: sigma.clone(),
        };
        let separable = !opts.force_dense && is_diagonal(a) && is_diagonal(&xi);
        let mut kernel = Kernel {
            grid: grid.clone(),
            opts,
            repr: Repr::Dense { rows: Vec::new() },
            transmit: Vec::new(),
            gaussian: Some(gaussian),
        };
        if separable {
            let axes: Vec<Vec<f64>> = (0..n)
                .map(|axis| {
                    let count = grid.counts()[axis];
                    let mut m = Vec::with_capacity(count * count);
                    for i in 0..count {
                        let mean = a[(axis, axis)] * grid.coord(axis, i);
                        m.extend(axis_row(grid, axis, mean, sigma[axis], &opts));
                    }
                    m
                })
                .collect();
            kernel.repr = Repr::Separable { axes };
        } else {
            let centers = grid.centers();
            let rows: Vec<SparseRow> = (0..grid.len())
                .into_par_iter()
                .map(|c| {
                    let mut mean = vec![0.0; n];
                    crate::linalg::mat_vec(&kernel.gaussian.as_ref().unwrap().a, &centers[c * n..(c + 1) * n], &mut mean);
                    kernel.dense_row_at(&mean)
                })
                .collect();
            kernel.repr = Repr::Dense { rows };
        }
        kernel.transmit = kernel.row_dense_at(&vec![0.0; n])?;
        Ok(kernel)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn options(&self) -> &KernelOptions {
        &self.opts
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.repr, Repr::Separable { .. })
    }

    /// Weight row (dense over cells) of a Gaussian centered at `mean`, built
    /// with the same lattice quadrature and boundary rule as the cached rows.
    pub fn row_dense_at(&self, mean: &[f64]) -> Result<Vec<f64>> {
        let g = self
            .gaussian
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("kernel has no Gaussian parameters".into()))?;
        if mean.len() != self.grid.dim() {
            return Err(Error::dim("kernel mean", self.grid.dim(), mean.len()));
        }
        if self.is_separable() {
            let rows: Vec<Vec<f64>> = (0..self.grid.dim())
                .map(|axis| axis_row(&self.grid, axis, mean[axis], g.sigma[axis], &self.opts))
                .collect();
            let mut out = vec![0.0; self.grid.len()];
            let mut idx = vec![0usize; self.grid.dim()];
            for (c, o) in out.iter_mut().enumerate() {
                self.grid.multi_index_into(c, &mut idx);
                *o = idx.iter().enumerate().map(|(axis, &i)| rows[axis][i]).product();
            }
            Ok(out)
        } else {
            let mut out = vec![0.0; self.grid.len()];
            for (d, w) in self.dense_row_at(mean) {
                out[d as usize] = w;
            }
            Ok(out)
        }
    }

    fn dense_row_at(&self, mean: &[f64]) -> SparseRow {
        let g = self.gaussian.as_ref().expect("Gaussian parameters");
        let grid = &self.grid;
        let n = grid.dim();
        let mut lo = vec![0i64; n];
        let mut hi = vec![0i64; n];
        let mut nearest = vec![0usize; n];
        for axis in 0..n {
            let cell = grid.cell()[axis];
            let mid = grid.mid(axis) as i64;
            let reach = self.opts.support_sigmas * g.sigma[axis];
            let near = (mean[axis] / cell).round() as i64 + mid;
            lo[axis] = (((mean[axis] - reach) / cell).floor() as i64 + mid).min(near);
            hi[axis] = (((mean[axis] + reach) / cell).ceil() as i64 + mid).max(near);
            nearest[axis] = near.clamp(0, grid.counts()[axis] as i64 - 1) as usize;
        }
        let mut points: Vec<(usize, f64)> = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut k = lo.clone();
        let mut d = vec![0.0; n];
        'outer: loop {
            let mut inside = true;
            let mut flat = 0;
            for axis in 0..n {
                d[axis] = grid.virtual_coord(axis, k[axis]) - mean[axis];
                let count = grid.counts()[axis] as i64;
                inside &= k[axis] >= 0 && k[axis] < count;
                flat += k[axis].clamp(0, count - 1) as usize * grid.strides()[axis];
            }
            if inside || self.opts.out_of_box == OutOfBox::Clamp {
                let v = -0.5 * crate::linalg::quad_form(&g.precision, &d);
                best = best.max(v);
                points.push((flat, v));
            }
            for axis in (0..n).rev() {
                if k[axis] < hi[axis] {
                    k[axis] += 1;
                    continue 'outer;
                }
                k[axis] = lo[axis];
            }
            break;
        }
        let mut acc = std::collections::BTreeMap::<usize, f64>::new();
        for (flat, v) in points {
            *acc.entry(flat).or_insert(0.0) += (v - best).exp();
        }
        let total: f64 = acc.values().sum();
        if !(total > 0.0 && total.is_finite()) {
            return vec![(grid.flat_index(&nearest) as u32, 1.0)];
        }
        acc.into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|(f, w)| (f as u32, w / total))
            .collect()
    }

    /// The (source, action) row as sparse (destination, weight) pairs.
    pub fn row(&self, src: usize, transmit: bool) -> SparseRow {
        if transmit {
            return dense_to_sparse(&self.transmit);
        }
        match &self.repr {
            Repr::Dense { rows } => rows[src].clone(),
            Repr::Separable { axes } => {
                let grid = &self.grid;
                let idx = grid.multi_index(src);
                let mut out = Vec::new();
                let mut didx = vec![0usize; grid.dim()];
                for dst in 0..grid.len() {
                    grid.multi_index_into(dst, &mut didx);
                    let mut w = 1.0;
                    for axis in 0..grid.dim() {
                        let count = grid.counts()[axis];
                        w *= axes[axis][idx[axis] * count + didx[axis]];
                        if w == 0.0 {
                            break;
                        }
                    }
                    if w != 0.0 {
                        out.push((dst as u32, w));
                    }
                }
                out
            }
        }
    }

    pub fn transmit_row(&self) -> &[f64] {
        &self.transmit
    }

    /// `Σ_y P(y | transmit) h(y)`, i.e. `E[h(ξ)]`.
    pub fn expect_transmit(&self, h: &[f64]) -> f64 {
        self.transmit.iter().zip(h).map(|(w, v)| w * v).sum()
    }

    /// `out[c] = Σ_y P(y | c, no transmit) h(y)`, i.e. `E[h(A·c + ξ)]`.
    pub fn expect_hold(&self, h: &[f64], out: &mut [f64]) {
        match &self.repr {
            Repr::Dense { rows } => {
                out.par_iter_mut().zip(rows.par_iter()).for_each(|(o, row)| {
                    *o = row.iter().map(|&(d, w)| w * h[d as usize]).sum();
                });
            }
            Repr::Separable { axes } => {
                let mut cur = h.to_vec();
                let mut next = vec![0.0; h.len()];
                for (axis, m) in axes.iter().enumerate() {
                    mode_product(&self.grid, axis, m, &cur, &mut next);
                    std::mem::swap(&mut cur, &mut next);
                }
                out.copy_from_slice(&cur);
            }
        }
    }

    /// Expectation of `h` under a Gaussian centered at an arbitrary `mean`.
    pub fn expect_at(&self, mean: &[f64], h: &[f64]) -> Result<f64> {
        let row = self.row_dense_at(mean)?;
        Ok(row.iter().zip(h).map(|(w, v)| w * v).sum())
    }

    /// Row listing `(action, src, dst, weight)` with header. The hold rows
    /// come first (action 0), then the single transmit row (action 1, src 0).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["action", "src", "dst", "weight"])?;
        for src in 0..self.grid.len() {
            for (dst, weight) in self.row(src, false) {
                w.write_record(&["0".to_string(), src.to_string(), dst.to_string(), weight.to_string()])?;
            }
        }
        for (dst, weight) in dense_to_sparse(&self.transmit) {
            w.write_record(&["1".to_string(), "0".to_string(), dst.to_string(), weight.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a row listing back. The result supports backups but not
    /// [`Kernel::expect_at`], which needs the Gaussian parameters.
    pub fn read_csv(path: impl AsRef<Path>, grid: &Grid) -> Result<Kernel> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let mut rows: Vec<SparseRow> = vec![Vec::new(); grid.len()];
        let mut transmit = vec![0.0; grid.len()];
        for rec in r.records() {
            let rec = rec?;
            let bad = |s: &str| Error::InvalidArgument(format!("bad kernel field {s:?}"));
            let action: u8 = rec[0].parse().map_err(|_| bad(&rec[0]))?;
            let src: usize = rec[1].parse().map_err(|_| bad(&rec[1]))?;
            let dst: usize = rec[2].parse().map_err(|_| bad(&rec[2]))?;
            let weight: f64 = rec[3].parse().map_err(|_| bad(&rec[3]))?;
            if src >= grid.len() || dst >= grid.len() {
                return Err(Error::Grid(format!("kernel cell index {src}->{dst} out of range")));
            }
            match action {
                0 => rows[src].push((dst as u32, weight)),
                1 => transmit[dst] += weight,
                _ => return Err(bad(&rec[0])),
            }
        }
        Ok(Kernel {
            grid: grid.clone(),
            opts: KernelOptions::default(),
            repr: Repr::Dense { rows },
            transmit,
            gaussian: None,
        })
    }
}

fn dense_to_sparse(row: &[f64]) -> SparseRow {
    row.iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(d, &w)| (d as u32, w))
        .collect()
}

/// `out[.., i, ..] = Σ_j m[i, j] · input[.., j, ..]` along `axis`.
fn mode_product(grid: &Grid, axis: usize, m: &[f64], input: &[f64], out: &mut [f64]) {
    let count = grid.counts()[axis];
    let inner = grid.strides()[axis];
    let block = count * inner;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (ob, ib) in out.chunks_mut(block).zip(input.chunks(block)) {
        for i in 0..count {
            let dst = &mut ob[i * inner..(i + 1) * inner];
            for j in 0..count {
                let w = m[i * count + j];
                if w == 0.0 {
                    continue;
                }
                let src = &ib[j * inner..(j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}
