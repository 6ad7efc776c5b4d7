//! Transmission scheduling laws and the threshold search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_vec, min_sym_eigenvalue, norm_sq, quad_form, row_major, Mat};
use crate::mdp::{Grid, Kernel, StageCosts, ValueFunction, ValueSolution};
use crate::model::diagonalize;

/// How the VoI law looks up the continuation `E[h(A·e + ξ)]` between cell centers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lookup {
    /// Value at the nearest cell center (clamped to the box).
    #[default]
    Nearest,
    /// Multilinear interpolation between centers.
    Multilinear,
}

/// Data needed to evaluate the optimal law off the lattice.
#[derive(Clone, Debug)]
pub struct VoiRule {
    pub theta: f64,
    /// Row-major holding-cost weight (`AᵀΣA` or `Σ`).
    pub weight: Vec<f64>,
    /// `E[h(A·c + ξ)]` per cell.
    pub continuation: ValueFunction,
    /// `E[h(ξ)]`.
    pub eh: f64,
    pub lookup: Lookup,
}

impl VoiRule {
    pub fn from_solution(sol: &ValueSolution, theta: f64, weight: &Mat, lookup: Lookup) -> Result<VoiRule> {
        let continuation = ValueFunction::new(sol.h.grid.clone(), sol.continuation.clone())?;
        if weight.nrows() != continuation.grid.dim() {
            return Err(Error::dim("VoI weight", continuation.grid.dim(), weight.nrows()));
        }
        Ok(VoiRule {
            theta,
            weight: row_major(weight),
            continuation,
            eh: sol.eh,
            lookup,
        })
    }

    /// `VoI(e) = eᵀMe + E[h(A·e + ξ)] − θ − E[h(ξ)]`.
    #[inline]
    pub fn voi(&self, e: &[f64]) -> f64 {
        let cont = match self.lookup {
            Lookup::Nearest => self.continuation.at(e),
            Lookup::Multilinear => self.continuation.interpolate(e),
        };
        quad_form(&self.weight, e) + cont - self.theta - self.eh
    }
}

#[derive(Clone, Debug)]
pub enum Policy {
    /// Transmit iff `VoI(e) ≥ 0`.
    Voi(Box<VoiRule>),
    /// Transmit iff `eᵀMe ≥ η`.
    QuadThreshold { eta: f64, weight: Vec<f64> },
    /// Transmit iff `eᵀMe ≥ θ`: the one-stage comparison of the two costs.
    Greedy { theta: f64, weight: Vec<f64> },
    /// Transmit iff `‖A·e‖ ≥ η`.
    NormAe { eta: f64, a: Vec<f64> },
    /// Transmit iff `‖e‖ ≥ η`.
    NormE { eta: f64 },
    /// Transmit iff `(k − phase) mod period = 0`.
    Periodic { period: u64, phase: u64 },
    Always,
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Voi,
    QuadThreshold,
    Greedy,
    NormAe,
    NormE,
    Periodic,
    Always,
    Never,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Voi => "voi",
            PolicyKind::QuadThreshold => "quad_threshold",
            PolicyKind::Greedy => "greedy",
            PolicyKind::NormAe => "norm_ae",
            PolicyKind::NormE => "norm_e",
            PolicyKind::Periodic => "periodic",
            PolicyKind::Always => "always",
            PolicyKind::Never => "never",
        }
    }
}

impl Policy {
    pub fn quad_threshold(eta: f64, weight: &Mat) -> Policy {
        Policy::QuadThreshold {
            eta,
            weight: row_major(weight),
        }
    }

    pub fn greedy(theta: f64, weight: &Mat) -> Policy {
        Policy::Greedy {
            theta,
            weight: row_major(weight),
        }
    }

    pub fn norm_ae(eta: f64, a: &Mat) -> Policy {
        Policy::NormAe { eta, a: row_major(a) }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Voi(_) => PolicyKind::Voi,
            Policy::QuadThreshold { .. } => PolicyKind::QuadThreshold,
            Policy::Greedy { .. } => PolicyKind::Greedy,
            Policy::NormAe { .. } => PolicyKind::NormAe,
            Policy::NormE { .. } => PolicyKind::NormE,
            Policy::Periodic { .. } => PolicyKind::Periodic,
            Policy::Always => PolicyKind::Always,
            Policy::Never => PolicyKind::Never,
        }
    }

    /// The scalar parameter that indexes sweeps (threshold, price or period).
    pub fn param(&self) -> f64 {
        match self {
            Policy::Voi(r) => r.theta,
            Policy::QuadThreshold { eta, .. } | Policy::NormAe { eta, .. } | Policy::NormE { eta } => *eta,
            Policy::Greedy { theta, .. } => *theta,
            Policy::Periodic { period, .. } => *period as f64,
            Policy::Always | Policy::Never => f64::NAN,
        }
    }

    /// Scheduling decision at time `k` for mismatch `e`.
    #[inline]
    pub fn decide(&self, e: &[f64], k: u64) -> bool {
        match self {
            Policy::Voi(rule) => rule.voi(e) >= 0.0,
            Policy::QuadThreshold { eta, weight } => quad_form(weight, e) >= *eta,
            Policy::Greedy { theta, weight } => quad_form(weight, e) >= *theta,
            Policy::NormAe { eta, a } => {
                let mut ae = [0.0; 8];
                let n = e.len();
                if n <= ae.len() {
                    mat_vec(a, e, &mut ae[..n]);
                    norm_sq(&ae[..n]).sqrt() >= *eta
                } else {
                    let mut v = vec![0.0; n];
                    mat_vec(a, e, &mut v);
                    norm_sq(&v).sqrt() >= *eta
                }
            }
            Policy::NormE { eta } => norm_sq(e).sqrt() >= *eta,
            Policy::Periodic { period, phase } => {
                (i128::from(k) - i128::from(*phase)).rem_euclid(i128::from((*period).max(1))) == 0
            }
            Policy::Always => true,
            Policy::Never => false,
        }
    }
}

/// `E[h(mean + ξ)]` with the kernel's quadrature and boundary rule.
pub fn expected_h(h: &ValueFunction, mean: &[f64], kernel: &Kernel) -> Result<f64> {
    if h.grid != *kernel.grid() {
        return Err(Error::Grid("h and kernel must share one grid".into()));
    }
    kernel.expect_at(mean, &h.values)
}

/// VoI at an arbitrary point, with the continuation evaluated exactly
/// (fresh kernel row at `A·e`) rather than looked up on the lattice.
pub fn voi(e: &[f64], h: &ValueFunction, kernel: &Kernel, a: &Mat, weight: &Mat, theta: f64) -> Result<f64> {
    let mut ae = vec![0.0; e.len()];
    mat_vec(&row_major(a), e, &mut ae);
    let cont = expected_h(h, &ae, kernel)?;
    let eh = kernel.expect_transmit(&h.values);
    Ok(quad_form(&row_major(weight), e) + cont - theta - eh)
}

/// VoI evaluated at every cell center together with the transmit map.
#[derive(Clone, Debug, Serialize)]
pub struct VoiField {
    #[serde(skip)]
    pub grid: Grid,
    #[serde(skip)]
    pub voi: Vec<f64>,
    #[serde(skip)]
    pub transmit: Vec<bool>,
    pub eh: f64,
    pub theta: f64,
}

impl VoiField {
    pub fn from_solution(sol: &ValueSolution, costs: &StageCosts) -> VoiField {
        let voi: Vec<f64> = costs
            .hold
            .iter()
            .zip(&sol.continuation)
            .map(|(q, c)| q + c - costs.theta - sol.eh)
            .collect();
        let transmit = voi.iter().map(|&v| v >= 0.0).collect();
        VoiField {
            grid: sol.h.grid.clone(),
            voi,
            transmit,
            eh: sol.eh,
            theta: costs.theta,
        }
    }

    pub fn as_value_function(&self) -> ValueFunction {
        ValueFunction {
            grid: self.grid.clone(),
            values: self.voi.clone(),
        }
    }

    pub fn transmit_fraction(&self) -> f64 {
        self.transmit.iter().filter(|&&t| t).count() as f64 / self.transmit.len() as f64
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let n = self.grid.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("e{i}")).collect();
        header.push("voi".into());
        header.push("decision".into());
        w.write_record(&header)?;
        let mut x = vec![0.0; n];
        for c in 0..self.grid.len() {
            self.grid.center_into(c, &mut x);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(self.voi[c].to_string());
            rec.push(u8::from(self.transmit[c]).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Quadratic threshold equivalent to the VoI map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub eta: f64,
    /// Number of axis-adjacent sign changes of the VoI field used.
    pub crossings: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Share of non-tie cells where `VoI ≥ 0` agrees with `eᵀMe ≥ η`.
    pub consistency: f64,
    pub tie_cells: usize,
}

/// Cells with `|VoI|` below this are treated as exact ties.
pub const TIE_TOL: f64 = 1e-12;

/// Threshold `η` such that `{VoI ≥ 0} ≈ {eᵀMe ≥ η}`.
///
/// At every axis-adjacent pair of cells where the VoI sign flips, the crossing
/// is located by linear interpolation and `η = θ + E[h(ξ)] − E[h(A·e + ξ)]` is
/// read off there, which equals the quadratic form at the crossing. The
/// estimate is the median over crossings.
pub fn estimate_eta(field: &VoiField, costs: &StageCosts, a: &Mat) -> Result<EtaEstimate> {
    diagonalize(a)?;
    let grid = &field.grid;
    let theta = field.theta;
    let mut etas = Vec::new();
    if theta > 0.0 {
        let mut idx = vec![0usize; grid.dim()];
        for c in 0..grid.len() {
            grid.multi_index_into(c, &mut idx);
            for axis in 0..grid.dim() {
                if idx[axis] + 1 >= grid.counts()[axis] {
                    continue;
                }
                let d = c + grid.strides()[axis];
                let (va, vb) = (field.voi[c], field.voi[d]);
                if (va >= 0.0) == (vb >= 0.0) {
                    continue;
                }
                let t = va / (va - vb);
                let qa = costs.hold[c];
                let qb = costs.hold[d];
                etas.push(qa + t * (qb - qa) - (va + t * (vb - va)));
            }
        }
        if etas.is_empty() {
            return Err(Error::ThresholdOutsideRegion(format!(
                "VoI does not change sign inside the box at θ = {theta}"
            )));
        }
    } else {
        etas.push(0.0);
    }
    etas.sort_by(f64::total_cmp);
    let eta = if etas.len() % 2 == 1 {
        etas[etas.len() / 2]
    } else {
        0.5 * (etas[etas.len() / 2 - 1] + etas[etas.len() / 2])
    };
    let crossings = if theta > 0.0 { etas.len() } else { 0 };
    let (mut agree, mut counted, mut ties) = (0usize, 0usize, 0usize);
    for c in 0..grid.len() {
        if field.voi[c].abs() <= TIE_TOL {
            ties += 1;
            continue;
        }
        counted += 1;
        if (field.voi[c] >= 0.0) == (costs.hold[c] >= eta) {
            agree += 1;
        }
    }
    Ok(EtaEstimate {
        eta,
        crossings,
        eta_min: etas[0],
        eta_max: etas[etas.len() - 1],
        consistency: if counted == 0 { 1.0 } else { agree as f64 / counted as f64 },
        tie_cells: ties,
    })
}

/// The VoI field over the grid plus its threshold estimate when A is
/// real-diagonalizable.
pub fn voi_decision_map(
    sol: &ValueSolution,
    costs: &StageCosts,
    a: &Mat,
) -> (VoiField, Option<Result<EtaEstimate>>) {
    let field = VoiField::from_solution(sol, costs);
    let eta = match diagonalize(a) {
        Ok(_) => Some(estimate_eta(&field, costs, a)),
        Err(_) => None,
    };
    (field, eta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdFamily {
    QuadThreshold,
    NormAe,
    NormE,
}

impl ThresholdFamily {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdFamily::QuadThreshold => "quad_threshold",
            ThresholdFamily::NormAe => "norm_ae",
            ThresholdFamily::NormE => "norm_e",
        }
    }

    pub fn policy(self, eta: f64, a: &Mat, weight: &Mat) -> Policy {
        match self {
            ThresholdFamily::QuadThreshold => Policy::quad_threshold(eta, weight),
            ThresholdFamily::NormAe => Policy::norm_ae(eta, a),
            ThresholdFamily::NormE => Policy::NormE { eta },
        }
    }

    /// Default search interval `(0, hi]`.
    ///
    /// For the quadratic law the optimum lies in `(0, θ]`. For the norm laws
    /// the upper end is where the norm ball is guaranteed to contain the
    /// quadratic region `{eᵀMe < θ}`; beyond it the norm law holds strictly
    /// more than greedy would.
    pub fn default_upper(self, theta: f64, sigma: &Mat, weight: &Mat) -> f64 {
        match self {
            ThresholdFamily::QuadThreshold => theta,
            ThresholdFamily::NormAe => (theta / min_sym_eigenvalue(sigma).max(1e-300)).sqrt(),
            ThresholdFamily::NormE => (theta / min_sym_eigenvalue(weight).max(1e-300)).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub eta: f64,
    pub cost: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub eta: f64,
    pub cost: f64,
    pub stderr: f64,
    pub candidates: Vec<Candidate>,
}

/// Brute-force argmin of `eval(η)` over `steps` uniform points of `(lo, hi]`.
///
/// `eval` returns (mean cost, standard error). Callers get common random
/// numbers by seeding every evaluation identically.
pub fn search_threshold<F>(lo: f64, hi: f64, steps: usize, eval: F) -> Result<ThresholdSearch>
where
    F: Fn(f64) -> Result<(f64, f64)> + Sync,
{
    if steps == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "empty threshold range ({lo}, {hi}] with {steps} steps"
        )));
    }
    let etas: Vec<f64> = (1..=steps)
        .map(|i| {
            if i == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / steps as f64
            }
        })
        .collect();
    let results: Vec<Result<Candidate>> = etas
        .par_iter()
        .map(|&eta| eval(eta).map(|(cost, stderr)| Candidate { eta, cost, stderr }))
        .collect();
    let candidates = results.into_iter().collect::<Result<Vec<_>>>()?;
    let best = candidates
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.cost < candidates[b].cost { i } else { b });
    Ok(ThresholdSearch {
        eta: candidates[best].eta,
        cost: candidates[best].cost,
        stderr: candidates[best].stderr,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{hold_weight, value_iterate, CostVariant, KernelOptions, ViOptions};
    use crate::model::{solve_steady_state, RiccatiOptions, SystemModel};

    struct Setup {
        model: SystemModel,
        weight: Mat,
        sigma: Mat,
        kernel: Kernel,
        costs: StageCosts,
        sol: ValueSolution,
    }

    fn setup(theta: f64, counts: usize) -> Setup {
        let model = SystemModel::reference().with_theta(theta);
        let ss = solve_steady_state(&model, RiccatiOptions::default()).unwrap();
        let grid = Grid::new(&[0.2, 0.2], &[counts, counts]).unwrap();
        let kernel = Kernel::build(&grid, &model.a, &ss.xi, KernelOptions::default()).unwrap();
        let weight = hold_weight(&model.a, &ss.sigma, CostVariant::OneStepDelay);
        let costs = StageCosts::new(&grid, theta, &weight).unwrap();
        let sol = value_iterate(&kernel, &costs, ViOptions::default()).unwrap();
        Setup {
            model,
            weight,
            sigma: ss.sigma,
            kernel,
            costs,
            sol,
        }
    }

    #[test]
    fn expected_h_cases() {
        let s = setup(0.2, 31);
        let c = ValueFunction::from_fn(s.sol.h.grid.clone(), |_| 0.7);
        for mean in [[0.0, 0.0], [0.13, -0.05], [0.5, 0.5]] {
            assert!((expected_h(&c, &mean, &s.kernel).unwrap() - 0.7).abs() < 1e-14);
        }
        let p = expected_h(&s.sol.h, &[0.05, 0.03], &s.kernel).unwrap();
        let m = expected_h(&s.sol.h, &[-0.05, -0.03], &s.kernel).unwrap();
        assert!((p - m).abs() < 1e-12);
    }

    #[test]
    fn expected_h_small_noise_limit() {
        let grid = Grid::new(&[1.0, 1.0], &[21, 21]).unwrap();
        let a = Mat::identity(2, 2);
        let kernel = Kernel::build(&grid, &a, &(Mat::identity(2, 2) * 1e-10), KernelOptions::default()).unwrap();
        let h = ValueFunction::from_fn(grid.clone(), |x| x[0] * x[0] + 0.3 * x[1]);
        for mean in [[0.33, -0.52], [0.01, 0.9]] {
            let exact = h.at(&mean);
            assert!((expected_h(&h, &mean, &kernel).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn voi_cases() {
        let s = setup(0.2, 61);
        let origin = voi(&[0.0, 0.0], &s.sol.h, &s.kernel, &s.model.a, &s.weight, 0.2).unwrap();
        assert!((origin + 0.2).abs() < 1e-12);
        let field = VoiField::from_solution(&s.sol, &s.costs);
        let grid = &field.grid;
        for c in 0..grid.len() {
            assert!((field.voi[c] - field.voi[grid.mirror(c)]).abs() < 1e-12);
            assert!(field.voi[c] >= s.costs.hold[c] - 0.2 - 0.2 - 1e-9);
        }
        // The lattice field and the exact evaluation agree at cell centers.
        let c = grid.flat_index(&[40, 12]);
        let exact = voi(&grid.center(c), &s.sol.h, &s.kernel, &s.model.a, &s.weight, 0.2).unwrap();
        assert!((exact - field.voi[c]).abs() < 1e-12);
        // One sign change along each positive semi-axis.
        for axis in 0..2 {
            let mut idx = vec![30usize, 30];
            let mut flips = 0;
            let mut prev = field.voi[grid.origin()] >= 0.0;
            for i in 31..61 {
                idx[axis] = i;
                let now = field.voi[grid.flat_index(&idx)] >= 0.0;
                flips += usize::from(now != prev);
                prev = now;
            }
            assert_eq!(flips, 1, "axis {axis}");
        }
    }

    #[test]
    fn decide_cases() {
        let s = setup(0.2, 31);
        let rule = VoiRule::from_solution(&s.sol, 0.2, &s.weight, Lookup::Nearest).unwrap();
        let zero = [0.0, 0.0];
        let policies = vec![
            Policy::Voi(Box::new(rule)),
            Policy::quad_threshold(0.1, &s.weight),
            Policy::greedy(0.2, &s.weight),
            Policy::norm_ae(0.01, &s.model.a),
            Policy::NormE { eta: 0.01 },
            Policy::Never,
        ];
        for p in &policies {
            assert!(!p.decide(&zero, 7), "{:?}", p.kind());
        }
        assert!(Policy::greedy(0.0, &s.weight).decide(&zero, 0));
        assert!(Policy::Always.decide(&zero, 0));
        let g = Policy::greedy(0.2, &s.weight);
        let q = Policy::quad_threshold(0.2, &s.weight);
        let grid = Grid::new(&[0.3, 0.3], &[41, 41]).unwrap();
        for c in 0..grid.len() {
            let e = grid.center(c);
            assert_eq!(g.decide(&e, 0), q.decide(&e, 0));
        }
        let p = Policy::Periodic { period: 3, phase: 1 };
        let hits: Vec<u64> = (0..10).filter(|&k| p.decide(&zero, k)).collect();
        assert_eq!(hits, vec![1, 4, 7]);
    }

    #[test]
    fn voi_decisions_ignore_constant_shift_of_h() {
        let s = setup(0.2, 31);
        let shifted = ValueFunction::new(
            s.sol.h.grid.clone(),
            s.sol.h.values.iter().map(|v| v + 3.7).collect(),
        )
        .unwrap();
        let grid = &s.sol.h.grid;
        for c in (0..grid.len()).step_by(7) {
            let e = grid.center(c);
            let a = voi(&e, &s.sol.h, &s.kernel, &s.model.a, &s.weight, 0.2).unwrap();
            let b = voi(&e, &shifted, &s.kernel, &s.model.a, &s.weight, 0.2).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_estimate_reference_setup() {
        let s = setup(0.2, 61);
        let (field, eta) = voi_decision_map(&s.sol, &s.costs, &s.model.a);
        let eta = eta.unwrap().unwrap();
        assert!(eta.eta > 0.0 && eta.eta <= 0.2, "{eta:?}");
        assert!(eta.consistency >= 0.99, "{eta:?}");
        assert!(field.transmit_fraction() > 0.5);
    }

    #[test]
    fn eta_estimate_zero_price() {
        let s = setup(0.0, 21);
        let (field, eta) = voi_decision_map(&s.sol, &s.costs, &s.model.a);
        assert!(field.transmit.iter().all(|&t| t));
        assert_eq!(eta.unwrap().unwrap().eta, 0.0);
    }

    #[test]
    fn eta_estimate_reports_threshold_outside_box() {
        let s = setup(50.0, 21);
        let (_, eta) = voi_decision_map(&s.sol, &s.costs, &s.model.a);
        assert!(matches!(eta.unwrap(), Err(Error::ThresholdOutsideRegion(_))));
    }

    #[test]
    fn search_cases() {
        let one = search_threshold(0.0, 0.2, 1, |eta| Ok((eta, 0.0))).unwrap();
        assert_eq!(one.eta, 0.2);
        assert_eq!(one.candidates.len(), 1);
        let s = search_threshold(0.0, 1.0, 64, |eta| Ok(((eta - 0.3).powi(2), 0.01))).unwrap();
        assert!((s.eta - 0.3).abs() <= 1.0 / 64.0);
        assert!(search_threshold(0.2, 0.2, 10, |_| Ok((0.0, 0.0))).is_err());
        assert!(search_threshold(0.0, 1.0, 0, |_| Ok((0.0, 0.0))).is_err());
    }

    #[test]
    fn default_ranges() {
        let s = setup(0.2, 11);
        let f = ThresholdFamily::QuadThreshold;
        assert_eq!(f.default_upper(0.2, &s.sigma, &s.weight), 0.2);
        let ae = ThresholdFamily::NormAe.default_upper(0.2, &s.sigma, &s.weight);
        assert!((ae - (0.2 / s.sigma[(1, 1)]).sqrt()).abs() < 1e-9);
    }
}
