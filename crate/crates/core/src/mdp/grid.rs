use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform lattice of cell centers on a box symmetric about the origin.
///
/// Every axis has an odd number of cells so that `e = 0` is a cell center.
/// Cells are flattened row-major with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    cell: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    cell: Vec<f64>,
    counts: Vec<usize>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Grid> {
        Grid::with_cell(&s.cell, &s.counts)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> GridSpec {
        GridSpec {
            cell: g.cell,
            counts: g.counts,
        }
    }
}

impl Grid {
    /// Box `[−half_i, half_i]` split into `counts_i` cells per axis.
    pub fn new(half_widths: &[f64], counts: &[usize]) -> Result<Grid> {
        if half_widths.len() != counts.len() {
            return Err(Error::dim("grid counts", half_widths.len(), counts.len()));
        }
        for &h in half_widths {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Grid(format!("half-width {h} must be positive")));
            }
        }
        let cell: Vec<f64> = half_widths
            .iter()
            .zip(counts)
            .map(|(&h, &c)| 2.0 * h / c.max(1) as f64)
            .collect();
        Grid::with_cell(&cell, counts)
    }

    pub fn from_bounds(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Grid> {
        if lower.len() != upper.len() {
            return Err(Error::dim("grid lower bound", upper.len(), lower.len()));
        }
        for (l, u) in lower.iter().zip(upper) {
            if (l + u).abs() > 1e-12 * u.abs().max(1.0) {
                return Err(Error::Grid(format!("box [{l}, {u}] is not symmetric about 0")));
            }
        }
        Grid::new(upper, counts)
    }

    /// Lattice with the given cell widths; the box is `±cell·count/2`.
    pub fn with_cell(cell: &[f64], counts: &[usize]) -> Result<Grid> {
        if cell.len() != counts.len() {
            return Err(Error::dim("grid counts", cell.len(), counts.len()));
        }
        if counts.is_empty() {
            return Err(Error::Grid("grid needs at least one axis".into()));
        }
        for (&w, &c) in cell.iter().zip(counts) {
            if c < 3 || c % 2 == 0 {
                return Err(Error::Grid(format!("cell count {c} must be odd and at least 3")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Grid(format!("cell width {w} must be positive")));
            }
        }
        let mut strides = vec![1; counts.len()];
        for i in (0..counts.len() - 1).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let len = counts.iter().product();
        Ok(Grid {
            cell: cell.to_vec(),
            counts: counts.to_vec(),
            strides,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cell(&self) -> &[f64] {
        &self.cell
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn upper(&self) -> Vec<f64> {
        self.cell
            .iter()
            .zip(&self.counts)
            .map(|(w, &c)| w * c as f64 / 2.0)
            .collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.upper().into_iter().map(|u| -u).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.iter().product()
    }

    /// Index of the middle cell on `axis`.
    pub fn mid(&self, axis: usize) -> usize {
        (self.counts[axis] - 1) / 2
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 - self.mid(axis) as f64) * self.cell[axis]
    }

    /// Coordinate of a (possibly out-of-box) lattice index.
    pub fn virtual_coord(&self, axis: usize, k: i64) -> f64 {
        (k - self.mid(axis) as i64) as f64 * self.cell[axis]
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index_into(&self, flat: usize, out: &mut [usize]) {
        let mut rest = flat;
        for (o, s) in out.iter_mut().zip(&self.strides) {
            *o = rest / s;
            rest %= s;
        }
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        self.multi_index_into(flat, &mut out);
        out
    }

    pub fn center_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for (axis, o) in out.iter_mut().enumerate() {
            let i = rest / self.strides[axis];
            rest %= self.strides[axis];
            *o = self.coord(axis, i);
        }
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.center_into(flat, &mut out);
        out
    }

    /// All centers, `len × dim`, row-major.
    pub fn centers(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; self.len * n];
        for (c, chunk) in out.chunks_mut(n).enumerate() {
            self.center_into(c, chunk);
        }
        out
    }

    pub fn origin(&self) -> usize {
        (0..self.dim()).map(|a| self.mid(a) * self.strides[a]).sum()
    }

    /// Cell holding `−center(flat)`.
    pub fn mirror(&self, flat: usize) -> usize {
        // Reflection reverses every axis, which reverses the flat order.
        self.len - 1 - flat
    }

    /// Nearest lattice index on one axis, clamped into the box.
    #[inline]
    pub fn axis_index(&self, axis: usize, x: f64) -> usize {
        let k = (x / self.cell[axis]).round() + self.mid(axis) as f64;
        if k.is_nan() || k <= 0.0 {
            0
        } else {
            (k as usize).min(self.counts[axis] - 1)
        }
    }

    /// Round-to-nearest cell, clamped to the boundary for points outside the box.
    #[inline]
    pub fn nearest_cell(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for axis in 0..self.dim() {
            flat += self.axis_index(axis, x[axis]) * self.strides[axis];
        }
        flat
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.upper())
            .all(|(v, u)| v.abs() <= u)
    }

    /// Offsets placing `inner` inside `self`, when both share the cell size.
    pub fn nested_offset(&self, inner: &Grid) -> Result<Vec<usize>> {
        if inner.dim() != self.dim() {
            return Err(Error::dim("inner grid", self.dim(), inner.dim()));
        }
        let mut out = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let (a, b) = (self.cell[axis], inner.cell[axis]);
            if (a - b).abs() > 1e-9 * a {
                return Err(Error::Grid(format!(
                    "cell widths differ on axis {axis}: {a} vs {b}"
                )));
            }
            if inner.counts[axis] > self.counts[axis] {
                return Err(Error::Grid(format!(
                    "inner box exceeds outer box on axis {axis}"
                )));
            }
            out.push((self.counts[axis] - inner.counts[axis]) / 2);
        }
        Ok(out)
    }
}

/// A scalar field over a grid (value function, continuation, VoI, …).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ValueFunction> {
        if values.len() != grid.len() {
            return Err(Error::dim("value function", grid.len(), values.len()));
        }
        Ok(ValueFunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> ValueFunction {
        let values = vec![0.0; grid.len()];
        ValueFunction { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> ValueFunction {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|c| {
                grid.center_into(c, &mut x);
                f(&x)
            })
            .collect();
        ValueFunction { grid, values }
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin()]
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        self.values[self.grid.nearest_cell(x)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multilinear interpolation between cell centers, flat outside the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for axis in 0..n {
            let last = g.counts()[axis] - 1;
            let t = x[axis] / g.cell()[axis] + g.mid(axis) as f64;
            let t = t.clamp(0.0, last as f64);
            let i = (t.floor() as usize).min(last.saturating_sub(1));
            base[axis] = i;
            frac[axis] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for axis in 0..n {
                let up = (corner >> axis) & 1 == 1;
                let f = frac[axis];
                w *= if up { f } else { 1.0 - f };
                let i = base[axis] + usize::from(up);
                flat += i.min(g.counts()[axis] - 1) * g.strides()[axis];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    /// Restriction to a nested grid with the same cell size, re-anchored so the
    /// origin cell is zero.
    pub fn restrict(&self, inner: &Grid) -> Result<ValueFunction> {
        let offset = self.grid.nested_offset(inner)?;
        let mut idx = vec![0usize; inner.dim()];
        let mut values = Vec::with_capacity(inner.len());
        for c in 0..inner.len() {
            inner.multi_index_into(c, &mut idx);
            for (i, o) in idx.iter_mut().zip(&offset) {
                *i += o;
            }
            values.push(self.values[self.grid.flat_index(&idx)]);
        }
        let anchor = values[inner.origin()];
        for v in &mut values {
            *v -= anchor;
        }
        ValueFunction::new(inner.clone(), values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, value_name: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let n = self.grid.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("e{i}")).collect();
        header.push(value_name.to_string());
        w.write_record(&header)?;
        let mut x = vec![0.0; n];
        for (c, v) in self.values.iter().enumerate() {
            self.grid.center_into(c, &mut x);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV written by [`ValueFunction::write_csv`] onto `grid`.
    pub fn read_csv(path: impl AsRef<Path>, grid: &Grid) -> Result<ValueFunction> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let n = grid.dim();
        if r.headers()?.len() != n + 1 {
            return Err(Error::dim("value CSV columns", n + 1, r.headers()?.len()));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let mut x = vec![0.0; n];
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
            };
            for (axis, xv) in x.iter_mut().enumerate() {
                *xv = parse(&rec[axis])?;
            }
            let c = grid.nearest_cell(&x);
            let center = grid.center(c);
            for axis in 0..n {
                if (center[axis] - x[axis]).abs() > 1e-6 * grid.cell()[axis] {
                    return Err(Error::Grid(format!(
                        "CSV point {x:?} is not a center of the expected grid"
                    )));
                }
            }
            values[c] = parse(&rec[n])?;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Grid("value CSV does not cover every cell".into()));
        }
        ValueFunction::new(grid.clone(), values)
    }
}

pub fn span(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}
