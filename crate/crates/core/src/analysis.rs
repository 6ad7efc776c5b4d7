//! Structural checks on computed fields: symmetry, monotonicity along axes and
//! rays, value bounds, threshold bounds and truncation consistency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{max_abs_diff, ValueFunction};
use crate::model::DiagonalizedModel;

/// Tolerance of the monotonicity, ray and bound checks.
pub const CHECK_TOL: f64 = 1e-6;
/// Tolerance of the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// `max |f(e) − f(−e)|` over the lattice. Grids are symmetric by construction.
pub fn check_symmetry(f: &ValueFunction) -> f64 {
    let g = &f.grid;
    (0..g.len())
        .map(|c| (f.values[c] - f.values[g.mirror(c)]).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisViolations {
    pub count: usize,
    pub worst: f64,
}

impl AxisViolations {
    fn record(&mut self, drop: f64, tol: f64) {
        if drop > tol {
            self.count += 1;
            self.worst = self.worst.max(drop);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub per_axis: Vec<AxisViolations>,
}

impl MonotonicityReport {
    pub fn total(&self) -> usize {
        self.per_axis.iter().map(|a| a.count).sum()
    }
}

/// Along every lattice line parallel to an axis, `f` must be nonincreasing
/// up to the middle index and nondecreasing after it. `f` is taken to be
/// sampled on the s-lattice.
pub fn check_axis_monotonicity(f: &ValueFunction, tol: f64) -> MonotonicityReport {
    let g = &f.grid;
    let mut per_axis = vec![AxisViolations::default(); g.dim()];
    let mut idx = vec![0usize; g.dim()];
    for (axis, rep) in per_axis.iter_mut().enumerate() {
        let stride = g.strides()[axis];
        let mid = g.mid(axis);
        let count = g.counts()[axis];
        for c in 0..g.len() {
            g.multi_index_into(c, &mut idx);
            if idx[axis] != mid {
                continue;
            }
            for i in mid..count - 1 {
                let a = f.values[c + (i - mid) * stride];
                let b = f.values[c + (i + 1 - mid) * stride];
                rep.record(a - b, tol);
            }
            for i in 1..=mid {
                let a = f.values[c - (i - 1) * stride];
                let b = f.values[c - i * stride];
                rep.record(a - b, tol);
            }
        }
    }
    MonotonicityReport { per_axis }
}

/// Axis monotonicity in the eigen-coordinates `s = U⁻¹e`. Only available when
/// the e-lattice is the s-lattice, i.e. `U` is a signed permutation.
pub fn check_axis_monotonicity_in(
    f: &ValueFunction,
    diag: &DiagonalizedModel,
    tol: f64,
) -> Result<MonotonicityReport> {
    if !diag.is_axis_aligned() {
        return Err(Error::InvalidArgument(
            "eigenvectors are not axis-aligned; sample the field on the s-lattice first".into(),
        ));
    }
    if diag.u.nrows() != f.grid.dim() {
        return Err(Error::dim("diagonalization", f.grid.dim(), diag.u.nrows()));
    }
    Ok(check_axis_monotonicity(f, tol))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RayReport {
    pub rays: usize,
    pub violations: usize,
    pub worst: f64,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Along every primitive lattice direction from the origin, `f` must be
/// nondecreasing while the ray stays in the box.
pub fn check_quasiconvexity_rays(f: &ValueFunction, tol: f64) -> RayReport {
    let g = &f.grid;
    let n = g.dim();
    let mids: Vec<i64> = (0..n).map(|a| g.mid(a) as i64).collect();
    let mut rep = RayReport::default();
    let mut dir = vec![0i64; n];
    let mut idx = vec![0usize; n];
    for c in 0..g.len() {
        g.multi_index_into(c, &mut idx);
        for a in 0..n {
            dir[a] = idx[a] as i64 - mids[a];
        }
        if dir.iter().fold(0, |acc, &d| gcd(acc, d)) != 1 {
            continue;
        }
        rep.rays += 1;
        let mut prev = f.values[g.origin()];
        let mut t = 1i64;
        loop {
            let mut flat = 0usize;
            let mut inside = true;
            for a in 0..n {
                let k = mids[a] + t * dir[a];
                if k < 0 || k >= g.counts()[a] as i64 {
                    inside = false;
                    break;
                }
                flat += k as usize * g.strides()[a];
            }
            if !inside {
                break;
            }
            let cur = f.values[flat];
            if prev - cur > tol {
                rep.violations += 1;
                rep.worst = rep.worst.max(prev - cur);
            }
            prev = cur;
            t += 1;
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub cell: usize,
    pub e: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub min: f64,
    pub max: f64,
    pub violations: usize,
    /// The first offending cell, if any.
    pub first: Option<BoundViolation>,
    pub origin_value: f64,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.origin_value == 0.0
    }
}

/// `−tol ≤ h ≤ θ + tol` everywhere and `h(0) = 0`.
pub fn check_bounds(h: &ValueFunction, theta: f64, tol: f64) -> BoundsReport {
    let mut violations = 0;
    let mut first = None;
    for (c, &v) in h.values.iter().enumerate() {
        if !(v >= -tol && v <= theta + tol) {
            violations += 1;
            if first.is_none() {
                first = Some(BoundViolation {
                    cell: c,
                    e: h.grid.center(c),
                    value: v,
                });
            }
        }
    }
    BoundsReport {
        min: h.min(),
        max: h.max(),
        violations,
        first,
        origin_value: h.at_origin(),
    }
}

/// `0 < η ≤ θ` (with η = 0 accepted at θ = 0).
pub fn check_eta(eta: f64, theta: f64) -> bool {
    if theta == 0.0 {
        eta == 0.0
    } else {
        eta > 0.0 && eta <= theta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub max_h_deviation: f64,
    pub jstar_deviation: f64,
}

/// Compares the outer solution restricted to the inner grid with the inner solution.
pub fn check_truncation(
    outer_h: &ValueFunction,
    outer_jstar: f64,
    inner_h: &ValueFunction,
    inner_jstar: f64,
) -> Result<TruncationReport> {
    let restricted = outer_h.restrict(&inner_h.grid)?;
    let anchor = inner_h.at_origin();
    let inner: Vec<f64> = inner_h.values.iter().map(|v| v - anchor).collect();
    Ok(TruncationReport {
        max_h_deviation: max_abs_diff(&restricted.values, &inner),
        jstar_deviation: (outer_jstar - inner_jstar).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStructure {
    pub name: String,
    pub symmetry_defect: f64,
    /// `None` when A has no axis-aligned real eigenbasis.
    pub monotonicity: Option<MonotonicityReport>,
    pub quasi_convexity: RayReport,
}

impl FieldStructure {
    pub fn evaluate(name: &str, f: &ValueFunction, diag: Option<&DiagonalizedModel>) -> FieldStructure {
        FieldStructure {
            name: name.to_string(),
            symmetry_defect: check_symmetry(f),
            monotonicity: diag.and_then(|d| check_axis_monotonicity_in(f, d, CHECK_TOL).ok()),
            quasi_convexity: check_quasiconvexity_rays(f, CHECK_TOL),
        }
    }

    pub fn passed(&self) -> bool {
        self.symmetry_defect < SYMMETRY_TOL
            && self.monotonicity.as_ref().is_none_or(|m| m.total() == 0)
            && self.quasi_convexity.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaCheck {
    pub eta: f64,
    pub theta: f64,
    pub consistency: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationCheck {
    pub report: TruncationReport,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub fields: Vec<FieldStructure>,
    pub bounds: BoundsReport,
    pub eta: Option<EtaCheck>,
    pub truncation: Option<TruncationCheck>,
    pub passed: bool,
}

impl StructureReport {
    pub fn new(
        fields: Vec<FieldStructure>,
        bounds: BoundsReport,
        eta: Option<EtaCheck>,
        truncation: Option<TruncationCheck>,
    ) -> StructureReport {
        let passed = fields.iter().all(FieldStructure::passed)
            && bounds.passed()
            && eta.as_ref().is_none_or(|e| e.passed)
            && truncation.as_ref().is_none_or(|t| t.passed);
        StructureReport {
            fields,
            bounds,
            eta,
            truncation,
            passed,
        }
    }
}
