use serde::{Deserialize, Serialize};

use super::grid::{span, Grid, ValueFunction};
use super::kernel::Kernel;
use crate::error::{Error, Result};
use crate::linalg::{quad_form, row_major, symmetrize, Mat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostVariant {
    /// The actuator sees the estimate one step late, so holding costs `eᵀAᵀΣAe`.
    #[default]
    OneStepDelay,
    /// Holding costs `eᵀΣe`.
    DelayFree,
}

/// Quadratic weight `M` of the holding cost `eᵀMe`.
pub fn hold_weight(a: &Mat, sigma: &Mat, variant: CostVariant) -> Mat {
    match variant {
        CostVariant::OneStepDelay => symmetrize(&(a.transpose() * sigma * a)),
        CostVariant::DelayFree => symmetrize(sigma),
    }
}

pub fn stage_cost(e: &[f64], transmit: bool, theta: f64, a: &Mat, sigma: &Mat, variant: CostVariant) -> f64 {
    if transmit {
        theta
    } else {
        quad_form(&row_major(&hold_weight(a, sigma, variant)), e)
    }
}

/// Stage costs on a grid: θ for transmitting and `q(c)` for holding at cell `c`.
#[derive(Clone, Debug)]
pub struct StageCosts {
    pub theta: f64,
    pub hold: Vec<f64>,
}

impl StageCosts {
    pub fn new(grid: &Grid, theta: f64, weight: &Mat) -> Result<StageCosts> {
        if weight.nrows() != grid.dim() || weight.ncols() != grid.dim() {
            return Err(Error::dim("cost weight", grid.dim(), weight.nrows()));
        }
        let w = row_major(weight);
        let mut x = vec![0.0; grid.dim()];
        let hold = (0..grid.len())
            .map(|c| {
                grid.center_into(c, &mut x);
                quad_form(&w, &x)
            })
            .collect();
        Ok(StageCosts { theta, hold })
    }
}

/// Scratch-free form of the backup: writes `out` and `transmit`, returns `E[h(ξ)]`.
/// `continuation` receives `E[h(A·c + ξ)]` per cell.
pub fn backup_into(
    j: &[f64],
    kernel: &Kernel,
    costs: &StageCosts,
    continuation: &mut [f64],
    out: &mut [f64],
    transmit: &mut [bool],
) -> f64 {
    kernel.expect_hold(j, continuation);
    let eh = kernel.expect_transmit(j);
    let send = costs.theta + eh;
    for c in 0..out.len() {
        let hold = costs.hold[c] + continuation[c];
        if send < hold {
            out[c] = send;
            transmit[c] = true;
        } else {
            out[c] = hold;
            transmit[c] = false;
        }
    }
    eh
}

/// One Bellman backup `(TJ)(c) = min{θ + E[J(ξ)], q(c) + E[J(A·c + ξ)]}` with
/// the argmin map. Ties keep the estimate (no transmission).
pub fn bellman_backup(j: &ValueFunction, kernel: &Kernel, costs: &StageCosts) -> Result<(ValueFunction, Vec<bool>)> {
    if j.grid != *kernel.grid() || costs.hold.len() != j.values.len() {
        return Err(Error::Grid("value function, kernel and costs must share one grid".into()));
    }
    let n = j.values.len();
    let mut cont = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut dec = vec![false; n];
    backup_into(&j.values, kernel, costs, &mut cont, &mut out, &mut dec);
    Ok((ValueFunction::new(j.grid.clone(), out)?, dec))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViOptions {
    /// Stop once `span(J_t − J_{t−1})` drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub span_residuals: Vec<f64>,
    /// Final `λ_t`, the average-cost estimate.
    pub lambda: f64,
    pub converged: bool,
    /// Geometric mean of successive residual ratios over the tail of the run.
    pub beta_estimate: Option<f64>,
}

impl IterationReport {
    pub fn final_residual(&self) -> f64 {
        self.span_residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct ValueSolution {
    /// Differential cost, anchored so `h(0) = 0`.
    pub h: ValueFunction,
    pub jstar: f64,
    /// Optimal decision map from the final backup (ties hold).
    pub transmit: Vec<bool>,
    /// `E[h(A·c + ξ)]` per cell, evaluated at the returned `h`.
    pub continuation: Vec<f64>,
    /// `E[h(ξ)]` at the returned `h`.
    pub eh: f64,
    pub report: IterationReport,
}

impl ValueSolution {
    pub fn into_result(self) -> Result<ValueSolution> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                solver: "relative value iteration",
                iterations: self.report.iterations,
                residual: self.report.final_residual(),
            })
        }
    }
}

impl ValueSolution {
    /// Rebuilds continuation, decisions and `E[h(ξ)]` from a stored `h` and
    /// the report of the run that produced it.
    pub fn from_h(h: ValueFunction, kernel: &Kernel, costs: &StageCosts, report: IterationReport) -> Result<ValueSolution> {
        if h.grid != *kernel.grid() || costs.hold.len() != h.values.len() {
            return Err(Error::Grid("value function, kernel and costs must share one grid".into()));
        }
        let n = h.values.len();
        let mut cont = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut dec = vec![false; n];
        let eh = backup_into(&h.values, kernel, costs, &mut cont, &mut tmp, &mut dec);
        Ok(ValueSolution {
            h,
            jstar: report.lambda,
            transmit: dec,
            continuation: cont,
            eh,
            report,
        })
    }
}

/// Relative value iteration from `h ≡ 0`.
pub fn value_iterate(kernel: &Kernel, costs: &StageCosts, opts: ViOptions) -> Result<ValueSolution> {
    let h0 = ValueFunction::zeros(kernel.grid().clone());
    value_iterate_from(h0, kernel, costs, opts)
}

/// Relative value iteration anchored at the origin cell:
/// `λ_t = (T h_{t−1})(0)`, `h_t = T h_{t−1} − λ_t`.
pub fn value_iterate_from(
    h0: ValueFunction,
    kernel: &Kernel,
    costs: &StageCosts,
    opts: ViOptions,
) -> Result<ValueSolution> {
    if h0.grid != *kernel.grid() || costs.hold.len() != h0.values.len() {
        return Err(Error::Grid("value function, kernel and costs must share one grid".into()));
    }
    let grid = h0.grid.clone();
    let origin = grid.origin();
    let n = grid.len();
    let mut h = h0.values;
    let anchor = h[origin];
    h.iter_mut().for_each(|v| *v -= anchor);

    let mut next = vec![0.0; n];
    let mut cont = vec![0.0; n];
    let mut dec = vec![false; n];
    let mut diff = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut lambda = 0.0;
    let mut converged = false;
    while residuals.len() < opts.max_iter {
        backup_into(&h, kernel, costs, &mut cont, &mut next, &mut dec);
        lambda = next[origin];
        for c in 0..n {
            diff[c] = next[c] - h[c];
        }
        let r = span(&diff);
        residuals.push(r);
        for c in 0..n {
            h[c] = next[c] - lambda;
        }
        if !r.is_finite() {
            break;
        }
        if r < opts.tol {
            converged = true;
            break;
        }
    }
    // The returned continuation and decisions must match the returned h.
    let mut tmp = vec![0.0; n];
    let eh = backup_into(&h, kernel, costs, &mut cont, &mut tmp, &mut dec);
    let report = IterationReport {
        iterations: residuals.len(),
        beta_estimate: tail_ratio(&residuals),
        span_residuals: residuals,
        lambda,
        converged,
    };
    Ok(ValueSolution {
        h: ValueFunction::new(grid, h)?,
        jstar: lambda,
        transmit: dec,
        continuation: cont,
        eh,
        report,
    })
}

fn tail_ratio(res: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = res
        .windows(2)
        .filter(|w| w[0] > 1e-13 && w[1] > 1e-13)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let tail = &ratios[ratios.len().saturating_sub(20)..];
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64;
    Some(log_mean.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::kernel::{transition_density, KernelOptions};
    use crate::model::{solve_steady_state, RiccatiOptions, SystemModel};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_row_slice(v))
    }

    fn reference_setup(counts: usize) -> (Grid, Kernel, StageCosts, Mat) {
        let m = SystemModel::reference();
        let ss = solve_steady_state(&m, RiccatiOptions::default()).unwrap();
        let grid = Grid::new(&[0.2, 0.2], &[counts, counts]).unwrap();
        let kernel = Kernel::build(&grid, &m.a, &ss.xi, KernelOptions::default()).unwrap();
        let w = hold_weight(&m.a, &ss.sigma, CostVariant::OneStepDelay);
        let costs = StageCosts::new(&grid, m.theta, &w).unwrap();
        (grid, kernel, costs, w)
    }

    #[test]
    fn stage_cost_cases() {
        let m = SystemModel::reference();
        let ss = solve_steady_state(&m, RiccatiOptions::default()).unwrap();
        let f = |e: &[f64], d| stage_cost(e, d, 0.2, &m.a, &ss.sigma, CostVariant::OneStepDelay);
        assert_eq!(f(&[0.0, 0.0], false), 0.0);
        assert_eq!(f(&[0.3, -0.1], true), 0.2);
        let w = m.a.transpose() * &ss.sigma * &m.a;
        assert!((f(&[0.1, 0.0], false) - 0.01 * w[(0, 0)]).abs() < 1e-14);
        let d = stage_cost(&[0.1, 0.0], false, 0.2, &m.a, &ss.sigma, CostVariant::DelayFree);
        assert!((d - 0.01 * ss.sigma[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn first_backup_from_zero_is_min_of_price_and_hold_cost() {
        let (grid, kernel, costs, _) = reference_setup(21);
        let (j1, _) = bellman_backup(&ValueFunction::zeros(grid.clone()), &kernel, &costs).unwrap();
        for c in 0..grid.len() {
            assert_eq!(j1.values[c], costs.hold[c].min(0.2));
        }
        assert_eq!(j1.at_origin(), 0.0);
    }

    /// Independent oracle: kernel rows rebuilt from the point density at every
    /// virtual lattice point, boundary clamped, renormalized; then a double loop.
    fn brute_force_backup(grid: &Grid, a: &Mat, xi: &Mat, theta: f64, w: &Mat, j: &[f64]) -> Vec<f64> {
        let reach = 60i64;
        let n = grid.len();
        let (n0, n1) = (grid.counts()[0] as i64, grid.counts()[1] as i64);
        let row = |e: &[f64], transmit: bool| {
            let mut acc = vec![0.0; n];
            for k0 in -reach..n0 + reach {
                for k1 in -reach..n1 + reach {
                    let y = [grid.virtual_coord(0, k0), grid.virtual_coord(1, k1)];
                    let p = transition_density(&y, e, transmit, a, xi).unwrap();
                    let dst = grid.flat_index(&[k0.clamp(0, n0 - 1) as usize, k1.clamp(0, n1 - 1) as usize]);
                    acc[dst] += p;
                }
            }
            let s: f64 = acc.iter().sum();
            acc.iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let r1 = row(&[0.0, 0.0], true);
        let e1: f64 = r1.iter().zip(j).map(|(p, v)| p * v).sum();
        (0..n)
            .map(|c| {
                let e = grid.center(c);
                let r0 = row(&e, false);
                let e0: f64 = r0.iter().zip(j).map(|(p, v)| p * v).sum();
                let q = e[0] * e[0] * w[(0, 0)] + 2.0 * e[0] * e[1] * w[(0, 1)] + e[1] * e[1] * w[(1, 1)];
                (theta + e1).min(q + e0)
            })
            .collect()
    }

    #[test]
    fn backup_matches_brute_force_oracle() {
        let grid = Grid::new(&[0.05, 0.05], &[5, 5]).unwrap();
        for (a, xi) in [
            (diag(&[1.3, -1.1]), diag(&[0.0004, 0.0003])),
            (
                Mat::from_row_slice(2, 2, &[1.1, 0.2, -0.3, 0.9]),
                Mat::from_row_slice(2, 2, &[0.0004, 0.0001, 0.0001, 0.0003]),
            ),
        ] {
            let w = Mat::from_row_slice(2, 2, &[60.0, 5.0, 5.0, 20.0]);
            let costs = StageCosts::new(&grid, 0.05, &w).unwrap();
            let kernel = Kernel::build(&grid, &a, &xi, KernelOptions { support_sigmas: 40.0, ..Default::default() }).unwrap();
            let j = ValueFunction::from_fn(grid.clone(), |x| (x[0] * 40.0).sin().abs() * 0.03 + x[1] * x[1]);
            let (out, _) = bellman_backup(&j, &kernel, &costs).unwrap();
            let oracle = brute_force_backup(&grid, &a, &xi, 0.05, &w, &j.values);
            let err = crate::mdp::grid::max_abs_diff(&out.values, &oracle);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn zero_price_gives_zero_solution() {
        let (grid, kernel, _, w) = reference_setup(11);
        let costs = StageCosts::new(&grid, 0.0, &w).unwrap();
        let sol = value_iterate(&kernel, &costs, ViOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert!(sol.h.values.iter().all(|&v| v == 0.0));
        assert_eq!(sol.jstar, 0.0);
    }

    #[test]
    fn reference_solution_bounds_and_average_cost_identity() {
        let (_, kernel, costs, _) = reference_setup(61);
        let sol = value_iterate(&kernel, &costs, ViOptions::default()).unwrap().into_result().unwrap();
        assert_eq!(sol.h.at_origin(), 0.0);
        assert!(sol.h.min() >= -1e-6 && sol.h.max() <= 0.2 + 1e-6);
        let eh = kernel.expect_transmit(&sol.h.values);
        assert!((sol.jstar - eh).abs() / sol.jstar.max(1e-12) < 1e-6);
        assert!(sol.report.beta_estimate.unwrap() < 1.0);
    }

    #[test]
    fn warm_start_from_solution_converges_immediately() {
        let (_, kernel, costs, _) = reference_setup(21);
        let sol = value_iterate(&kernel, &costs, ViOptions::default()).unwrap();
        let again = value_iterate_from(sol.h.clone(), &kernel, &costs, ViOptions::default()).unwrap();
        assert!(again.report.iterations <= 2);
        assert!((again.jstar - sol.jstar).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let (_, kernel, costs, _) = reference_setup(21);
        let sol = value_iterate(&kernel, &costs, ViOptions { tol: 0.0, max_iter: 3 }).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 3);
        assert!(matches!(sol.into_result(), Err(Error::NonConvergence { .. })));
    }

    fn small_setup() -> (Grid, Kernel, StageCosts) {
        let grid = Grid::new(&[0.2, 0.2], &[9, 9]).unwrap();
        let kernel = Kernel::build(&grid, &diag(&[1.3, -1.1]), &diag(&[0.0015, 0.0012]), KernelOptions::default()).unwrap();
        let costs = StageCosts::new(&grid, 0.2, &diag(&[85.0, 7.8])).unwrap();
        (grid, kernel, costs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn backup_is_monotone(base in prop::collection::vec(-1.0f64..1.0, 81), bump in prop::collection::vec(0.0f64..0.5, 81)) {
            let (grid, kernel, costs) = small_setup();
            let j = ValueFunction::new(grid.clone(), base.clone()).unwrap();
            let hi: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let j2 = ValueFunction::new(grid, hi).unwrap();
            let (a, _) = bellman_backup(&j, &kernel, &costs).unwrap();
            let (b, _) = bellman_backup(&j2, &kernel, &costs).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!(x <= &(y + 1e-12));
            }
        }

        #[test]
        fn backup_commutes_with_constant_shift(base in prop::collection::vec(-1.0f64..1.0, 81), c in -5.0f64..5.0) {
            let (grid, kernel, costs) = small_setup();
            let j = ValueFunction::new(grid.clone(), base.clone()).unwrap();
            let shifted = ValueFunction::new(grid, base.iter().map(|v| v + c).collect()).unwrap();
            let (a, _) = bellman_backup(&j, &kernel, &costs).unwrap();
            let (b, _) = bellman_backup(&shifted, &kernel, &costs).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x + c - y).abs() < 1e-12);
            }
        }

        #[test]
        fn backup_contracts_span(u in prop::collection::vec(-1.0f64..1.0, 81), v in prop::collection::vec(-1.0f64..1.0, 81)) {
            let (grid, kernel, costs) = small_setup();
            let (a, _) = bellman_backup(&ValueFunction::new(grid.clone(), u.clone()).unwrap(), &kernel, &costs).unwrap();
            let (b, _) = bellman_backup(&ValueFunction::new(grid, v.clone()).unwrap(), &kernel, &costs).unwrap();
            let before: Vec<f64> = u.iter().zip(&v).map(|(x, y)| x - y).collect();
            let after: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
            prop_assert!(span(&after) <= span(&before) * (1.0 - 1e-6));
        }

        #[test]
        fn backup_preserves_symmetry(half in prop::collection::vec(-1.0f64..1.0, 41)) {
            let (grid, kernel, costs) = small_setup();
            let mut vals = vec![0.0; 81];
            for c in 0..81 {
                let m = grid.mirror(c);
                vals[c] = half[c.min(m)];
            }
            let (a, _) = bellman_backup(&ValueFunction::new(grid.clone(), vals).unwrap(), &kernel, &costs).unwrap();
            for c in 0..81 {
                prop_assert!((a.values[c] - a.values[grid.mirror(c)]).abs() < 1e-12);
            }
        }
    }
}
